#pragma once

// Equivariant layers on batched feature fields over S2' x R3 (or SO(3)' x R3
// for the group-convolution baseline).

#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "e2pn/autograd.hpp"
#include "e2pn/cloud.hpp"
#include "e2pn/kernel.hpp"
#include "e2pn/rotgroup.hpp"

namespace e2pn {

/// A batch of fields. Cloud b owns rows [offset(b), offset(b) + N_b) of
/// `values`, which has shape (sum N_b, slots, C).
struct FieldBatch {
  std::vector<std::vector<Vec3>> positions;
  ag::Tensor values;

  std::size_t batch_size() const { return positions.size(); }
  std::size_t total_points() const;
  std::size_t slots() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
  std::vector<std::size_t> offsets() const;
};

/// Broadcasts each point's (C) features to every slot. Not recorded.
FieldBatch lift(const std::vector<PointCloud>& clouds, std::size_t num_slots);

enum class GatherMode { FastSymmetric, NaiveGather };
std::string to_string(GatherMode mode);
/// "fast" or "naive". Throws ConfigError.
GatherMode parse_gather_mode(std::string_view name);

/// Slot bookkeeping shared by quotient and group convolution. Output slot i
/// reads the input through the section element s_i: the quotient uses the 12
/// anchors with the lowest-index coset representatives, the group
/// convolution uses all 60 elements with s_i = i and left multiplication.
struct ConvGeometry {
  std::shared_ptr<const Discretization> disc;
  std::size_t num_slots = 0;
  std::vector<std::size_t> section;
  AnchorPermutationRep slot_perm;
  KernelPoints kernel_points;
  KernelPermutationRep kernel_perm;
  OrbitPartition orbits;

  std::size_t num_kernel_points() const { return kernel_points.size(); }

  /// Throws NotClosed when the extra kernel points break the symmetry.
  static std::shared_ptr<const ConvGeometry> quotient(std::shared_ptr<const Discretization> disc,
                                                      double kernel_radius,
                                                      const std::vector<Vec3>& extra_points = {});
  /// Unconstrained kernel: every (element, kernel point) pair is free.
  static std::shared_ptr<const ConvGeometry> group(std::shared_ptr<const Discretization> disc, double kernel_radius);
};

struct ConvLayer {
  std::shared_ptr<const ConvGeometry> geometry;
  OrbitKernel kernel;
  double radius = 0.0;
  double sigma = 0.0;
  GatherMode mode = GatherMode::FastSymmetric;
};

ConvLayer make_conv_layer(std::shared_ptr<const ConvGeometry> geometry, std::size_t c_in, std::size_t c_out,
                          double radius, double sigma, GatherMode mode, std::mt19937_64& rng);

struct ConvStats {
  std::size_t centers = 0;
  std::size_t gather_locations = 0;
  std::size_t gather_nonzeros = 0;
  double locations_per_center() const {
    return centers ? static_cast<double>(gather_locations) / static_cast<double>(centers) : 0.0;
  }
};

/// out[m][i] = sum_{j,k} kappa[j][k] G[m][kperm[s_i][k]][perm[s_i][j]].
/// FastSymmetric gathers at the K kernel locations per center and permutes
/// the kernel; NaiveGather gathers at the slots*K rotated locations.
FieldBatch conv_forward(ag::Tape& tape, const ConvLayer& layer, const FieldBatch& in,
                        const std::vector<std::vector<Vec3>>& centers, ConvStats* stats = nullptr);
/// Centers are the input positions.
FieldBatch conv_forward(ag::Tape& tape, const ConvLayer& layer, const FieldBatch& in, ConvStats* stats = nullptr);

/// Per-channel statistics over points and slots of the whole batch.
struct BatchNorm {
  ag::Tensor gamma;         // (C)
  ag::Tensor beta;          // (C)
  ag::Tensor running_mean;  // (C), no grad
  ag::Tensor running_var;   // (C), no grad
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm create(std::size_t channels, double eps = 1e-5, double momentum = 0.1);
};

/// x of shape (..., C). Training mode normalizes with batch statistics and
/// updates the running ones; eval mode applies the running statistics.
ag::Tensor batch_norm(ag::Tape& tape, BatchNorm& bn, const ag::Tensor& x, bool training);

/// out[s] = reduce over rows in segments[s] of x, x of shape (R, ...).
/// Max routes the gradient to the first maximal row.
ag::Tensor segment_reduce(ag::Tape& tape, const ag::Tensor& x, const std::vector<std::vector<std::size_t>>& segments,
                          ag::Reduce kind);

/// Grid cells of size `cell` placed by frames[b] (identity when empty);
/// per-cell centroid positions and per-(slot, channel) max.
FieldBatch spatial_pool(ag::Tape& tape, const FieldBatch& in, double cell, const std::vector<RigidMotion>& frames = {});

/// Per-cloud reduction over points: (B, slots, C).
ag::Tensor global_pool(ag::Tape& tape, const FieldBatch& in, ag::Reduce kind = ag::Reduce::Mean);

/// Softmax attention over anchors with a linear scoring head.
/// x: (B, A, C), weights: (C) -> (B, C).
ag::Tensor ga_pool(ag::Tape& tape, const ag::Tensor& x, const ag::Tensor& weights);

/// x: (B, A, C) -> (B, |G|, A*C) with row g = concat_i x[perm[g][i]].
ag::Tensor permutation_expand(ag::Tape& tape, const ag::Tensor& x, const Discretization& disc);

}  // namespace e2pn
