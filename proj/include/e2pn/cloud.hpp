#pragma once

// Point clouds, exact radius search, KPConv-style feature gathering, grid
// subsampling and synthetic shapes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "e2pn/geometry.hpp"
#include "e2pn/kernel.hpp"

namespace e2pn {

/// Positions plus a dense feature buffer, either (N, C) before lifting
/// (num_anchors == 0) or (N, A, C) after.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<double> features;
  std::size_t num_anchors = 0;
  std::size_t channels = 0;

  std::size_t size() const { return positions.size(); }
  bool lifted() const { return num_anchors > 0; }
  /// Values per point: A * C when lifted, C otherwise.
  std::size_t width() const { return (lifted() ? num_anchors : 1) * channels; }

  /// Unit scalar feature per point, (N, 1).
  static PointCloud with_unit_features(std::vector<Vec3> positions);
};

struct Neighbor {
  std::size_t index;
  double distance;
};

struct NeighborIndex {
  double radius = 0.0;
  /// One list per query, sorted by input index.
  std::vector<std::vector<Neighbor>> lists;
};

/// Exact neighbours within `radius` (inclusive) using a uniform hash grid
/// with cell size `radius`.
NeighborIndex radius_neighbors(std::span<const Vec3> inputs, std::span<const Vec3> queries, double radius);

/// Linear correlation w(d) = max(0, 1 - d / sigma).
inline double kernel_correlation(double d, double sigma) { return d < sigma ? 1.0 - d / sigma : 0.0; }

/// Sparse (rows x inputs) gathering operator in CSR form. Row r holds the
/// weights w(|y - location_r|) of the inputs y within the search radius.
struct GatherPlan {
  std::size_t num_rows = 0;
  std::size_t num_inputs = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col;
  std::vector<double> weight;

  /// out(rows, width) = W f with f of shape (num_inputs, width).
  std::vector<double> apply(std::span<const double> f, std::size_t width) const;
  /// out(num_inputs, width) += W^T g with g of shape (rows, width).
  void apply_transpose_add(std::span<const double> g, std::size_t width, std::span<double> out) const;
  /// out(rows, width) = W f restricted to rows [first, first + count).
  void apply_rows(std::span<const double> f, std::size_t width, std::size_t first, std::size_t count,
                  double* out) const;
  void apply_rows_transpose_add(const double* g, std::size_t width, std::size_t first, std::size_t count,
                                std::span<double> out) const;

  std::size_t nonzeros() const { return col.size(); }
};

GatherPlan build_gather_plan(std::span<const Vec3> inputs, std::span<const Vec3> locations, double radius,
                             double sigma);

/// Block-diagonal stacking: plan i reads the inputs at offset sum(inputs of plans < i).
GatherPlan stack_plans(const std::vector<GatherPlan>& plans);

/// G[m][k][a][c] = sum over y near (center_m + t_k) of w(.) f[y][a][c].
/// Requires a lifted cloud; result has shape (M, K, A, C).
std::vector<double> gather_features(const PointCloud& cloud, std::span<const Vec3> centers,
                                    const KernelPoints& kernel_points, double radius, double sigma);

struct GridCells {
  std::vector<Vec3> centroids;
  std::vector<std::vector<std::size_t>> members;
};

/// Occupied cells keyed by floor(frame^-1(x) / cell), ordered by key.
/// `frame` places the grid; identity when omitted.
GridCells grid_cells(std::span<const Vec3> positions, double cell, const RigidMotion& frame = {});

/// Per-cell centroid positions and per-cell mean features.
PointCloud grid_subsample(const PointCloud& cloud, double cell, const RigidMotion& frame = {});

enum class ShapeKind { Cube, Tetra, Cylinder, Torus };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(std::string_view name);

/// n >= 16 points uniformly on the surface of a shape with unit bounding
/// scale centered at the origin, plus isotropic Gaussian noise.
/// Cylinder: open lateral surface of radius 0.5 and height 1. Torus: radii
/// 0.35 and 0.15 about the z axis.
PointCloud synth_shape(ShapeKind kind, std::size_t n, double noise, std::uint64_t seed);

/// One "x y z" line per point, full round-trip precision.
void write_xyz(const std::filesystem::path& path, std::span<const Vec3> points);
std::vector<Vec3> read_xyz(const std::filesystem::path& path);

}  // namespace e2pn
