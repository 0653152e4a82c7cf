#pragma once

// Symmetric kernel points and steerable kernels parameterized by the orbits
// of the vertex stabilizer acting on (anchor, kernel point) pairs.

#include <cstddef>
#include <random>
#include <vector>

#include "e2pn/autograd.hpp"
#include "e2pn/geometry.hpp"
#include "e2pn/rotgroup.hpp"

namespace e2pn {

struct KernelPoints {
  std::vector<Vec3> points;
  double radius = 1.0;

  std::size_t size() const { return points.size(); }
};

/// The anchors scaled by r, followed by the origin, followed by any extra
/// points (given in units of r; e.g. edge or face midpoints).
KernelPoints build_kernel_points(const QuotientS2& quotient, double r, const std::vector<Vec3>& extra_points = {});

/// max over g, k of the distance from R_g p_k to the nearest kernel point.
double kernel_closure_error(const KernelPoints& kp, const FiniteRotationGroup& group);

/// kperm[g][k] = index of R_g p_k. Same convention as AnchorPermutationRep.
using KernelPermutationRep = AnchorPermutationRep;

/// Nearest-point matching with tolerance 1e-6 r. Throws NotClosed.
KernelPermutationRep build_kernel_perm(const KernelPoints& kp, const FiniteRotationGroup& group);

/// Partition of the (slot, kernel point) index set, flattened as
/// slot * num_kernel_points + k. Orbit ids follow their lowest member.
struct OrbitPartition {
  std::size_t num_slots = 0;
  std::size_t num_kernel_points = 0;
  std::vector<std::size_t> orbit_of;
  std::vector<std::vector<std::size_t>> members;

  std::size_t num_orbits() const { return members.size(); }
  std::size_t num_pairs() const { return orbit_of.size(); }

  /// Every pair in its own orbit (unconstrained group-conv kernels).
  static OrbitPartition trivial(std::size_t num_slots, std::size_t num_kernel_points);
};

/// Union-find over the action of `stabilizer` on (anchor, kernel point).
OrbitPartition compute_orbits(const std::vector<std::size_t>& stabilizer, const AnchorPermutationRep& anchor_perm,
                              const KernelPermutationRep& kernel_perm);

/// Steerable kernel: one free (C_in, C_out) block per orbit.
struct OrbitKernel {
  OrbitPartition orbits;
  ag::Tensor free_weights;  // (num_orbits, C_in, C_out), requires_grad
  std::size_t channels_in = 0;
  std::size_t channels_out = 0;

  /// Uniform init with variance 1 / (C_in * num_slots * num_kernel_points).
  static OrbitKernel random(OrbitPartition orbits, std::size_t c_in, std::size_t c_out, std::mt19937_64& rng);
  static OrbitKernel constant(OrbitPartition orbits, std::size_t c_in, std::size_t c_out, double value);

  std::size_t num_free_parameters() const { return free_weights.numel(); }
};

/// Dense (slots, K, C_in, C_out) kernel, recorded on the tape so gradients
/// flow back to the shared free weights.
ag::Tensor expand_kernel(ag::Tape& tape, const OrbitKernel& kernel);

}  // namespace e2pn
