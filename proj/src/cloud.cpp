#include "e2pn/cloud.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "e2pn/error.hpp"

namespace e2pn {

PointCloud PointCloud::with_unit_features(std::vector<Vec3> positions) {
  PointCloud c;
  c.features.assign(positions.size(), 1.0);
  c.positions = std::move(positions);
  c.channels = 1;
  return c;
}

namespace {

using CellKey = std::tuple<long long, long long, long long>;

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    const auto [x, y, z] = k;
    std::uint64_t h = static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Vec3& p, double cell) {
  return {static_cast<long long>(std::floor(p[0] / cell)), static_cast<long long>(std::floor(p[1] / cell)),
          static_cast<long long>(std::floor(p[2] / cell))};
}

class SpatialHash {
 public:
  SpatialHash(std::span<const Vec3> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) cells_[cell_of(points[i], cell)].push_back(i);
  }

  template <typename Fn>
  void for_each_within(const Vec3& q, double radius, Fn&& fn) const {
    const auto [cx, cy, cz] = cell_of(q, cell_);
    const auto reach = static_cast<long long>(std::ceil(radius / cell_));
    for (long long dx = -reach; dx <= reach; ++dx)
      for (long long dy = -reach; dy <= reach; ++dy)
        for (long long dz = -reach; dz <= reach; ++dz) {
          const auto it = cells_.find({cx + dx, cy + dy, cz + dz});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) {
            const double d = distance(points_[i], q);
            if (d <= radius) fn(i, d);
          }
        }
  }

 private:
  std::span<const Vec3> points_;
  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cells_;
};

}  // namespace

NeighborIndex radius_neighbors(std::span<const Vec3> inputs, std::span<const Vec3> queries, double radius) {
  if (!(radius > 0.0)) throw ConfigError("search radius must be positive");
  NeighborIndex index;
  index.radius = radius;
  index.lists.resize(queries.size());
  const SpatialHash hash(inputs, radius);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto& list = index.lists[q];
    hash.for_each_within(queries[q], radius, [&](std::size_t i, double d) { list.push_back({i, d}); });
    std::sort(list.begin(), list.end(), [](const Neighbor& a, const Neighbor& b) { return a.index < b.index; });
  }
  return index;
}

std::vector<double> GatherPlan::apply(std::span<const double> f, std::size_t width) const {
  std::vector<double> out(num_rows * width, 0.0);
  apply_rows(f, width, 0, num_rows, out.data());
  return out;
}

void GatherPlan::apply_rows(std::span<const double> f, std::size_t width, std::size_t first, std::size_t count,
                            double* out) const {
  std::fill(out, out + count * width, 0.0);
  for (std::size_t r = 0; r < count; ++r) {
    double* dst = out + r * width;
    for (std::size_t e = row_ptr[first + r]; e < row_ptr[first + r + 1]; ++e) {
      const double w = weight[e];
      const double* src = f.data() + col[e] * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += w * src[j];
    }
  }
}

void GatherPlan::apply_transpose_add(std::span<const double> g, std::size_t width, std::span<double> out) const {
  apply_rows_transpose_add(g.data(), width, 0, num_rows, out);
}

void GatherPlan::apply_rows_transpose_add(const double* g, std::size_t width, std::size_t first, std::size_t count,
                                          std::span<double> out) const {
  for (std::size_t r = 0; r < count; ++r) {
    const double* src = g + r * width;
    for (std::size_t e = row_ptr[first + r]; e < row_ptr[first + r + 1]; ++e) {
      const double w = weight[e];
      double* dst = out.data() + col[e] * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += w * src[j];
    }
  }
}

GatherPlan build_gather_plan(std::span<const Vec3> inputs, std::span<const Vec3> locations, double radius,
                             double sigma) {
  if (!(radius > 0.0) || !(sigma > 0.0)) throw ConfigError("gather radius and sigma must be positive");
  GatherPlan plan;
  plan.num_rows = locations.size();
  plan.num_inputs = inputs.size();
  plan.row_ptr.reserve(locations.size() + 1);
  const SpatialHash hash(inputs, radius);
  std::vector<std::pair<std::size_t, double>> row;
  for (const auto& loc : locations) {
    row.clear();
    hash.for_each_within(loc, radius, [&](std::size_t i, double d) {
      const double w = kernel_correlation(d, sigma);
      if (w > 0.0) row.emplace_back(i, w);
    });
    std::sort(row.begin(), row.end());
    for (const auto& [i, w] : row) {
      plan.col.push_back(i);
      plan.weight.push_back(w);
    }
    plan.row_ptr.push_back(plan.col.size());
  }
  return plan;
}

GatherPlan stack_plans(const std::vector<GatherPlan>& plans) {
  GatherPlan out;
  for (const auto& p : plans) {
    for (std::size_t r = 0; r < p.num_rows; ++r) {
      for (std::size_t e = p.row_ptr[r]; e < p.row_ptr[r + 1]; ++e) {
        out.col.push_back(p.col[e] + out.num_inputs);
        out.weight.push_back(p.weight[e]);
      }
      out.row_ptr.push_back(out.col.size());
    }
    out.num_rows += p.num_rows;
    out.num_inputs += p.num_inputs;
  }
  return out;
}

std::vector<double> gather_features(const PointCloud& cloud, std::span<const Vec3> centers,
                                    const KernelPoints& kernel_points, double radius, double sigma) {
  if (!cloud.lifted()) throw ShapeMismatch("gather_features needs a lifted (N, A, C) cloud");
  std::vector<Vec3> locations;
  locations.reserve(centers.size() * kernel_points.size());
  for (const auto& c : centers)
    for (const auto& t : kernel_points.points) locations.push_back(c + t);
  return build_gather_plan(cloud.positions, locations, radius, sigma).apply(cloud.features, cloud.width());
}

GridCells grid_cells(std::span<const Vec3> positions, double cell, const RigidMotion& frame) {
  if (!(cell > 0.0)) throw ConfigError("grid cell must be positive");
  const Rotation3 inv = frame.rotation.transpose();
  std::map<CellKey, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < positions.size(); ++i)
    cells[cell_of(inv.apply(positions[i] - frame.translation), cell)].push_back(i);

  GridCells out;
  for (auto& [key, members] : cells) {
    Vec3 c{0.0, 0.0, 0.0};
    for (std::size_t i : members) c = c + positions[i];
    out.centroids.push_back((1.0 / static_cast<double>(members.size())) * c);
    out.members.push_back(std::move(members));
  }
  return out;
}

PointCloud grid_subsample(const PointCloud& cloud, double cell, const RigidMotion& frame) {
  const auto cells = grid_cells(cloud.positions, cell, frame);
  PointCloud out;
  out.num_anchors = cloud.num_anchors;
  out.channels = cloud.channels;
  out.positions = cells.centroids;
  const std::size_t width = cloud.width();
  out.features.assign(cells.members.size() * width, 0.0);
  for (std::size_t c = 0; c < cells.members.size(); ++c) {
    const double inv = 1.0 / static_cast<double>(cells.members[c].size());
    for (std::size_t i : cells.members[c])
      for (std::size_t j = 0; j < width; ++j) out.features[c * width + j] += inv * cloud.features[i * width + j];
  }
  return out;
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Cube: return "cube";
    case ShapeKind::Tetra: return "tetra";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::Torus: return "torus";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "cube") return ShapeKind::Cube;
  if (lower == "tetra") return ShapeKind::Tetra;
  if (lower == "cylinder") return ShapeKind::Cylinder;
  if (lower == "torus") return ShapeKind::Torus;
  throw ConfigError("unknown shape '" + std::string(name) + "'");
}

PointCloud synth_shape(ShapeKind kind, std::size_t n, double noise, std::uint64_t seed) {
  if (n < 16) throw ConfigError("synth_shape needs at least 16 points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(n);

  while (pts.size() < n) {
    switch (kind) {
      case ShapeKind::Cube: {
        const int face = static_cast<int>(u01(rng) * 6.0) % 6;
        const int axis = face / 2;
        Vec3 p{u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5};
        p[static_cast<std::size_t>(axis)] = face % 2 ? 0.5 : -0.5;
        pts.push_back(p);
        break;
      }
      case ShapeKind::Tetra: {
        static const Vec3 v[4] = {{0.5, 0.5, 0.5}, {0.5, -0.5, -0.5}, {-0.5, 0.5, -0.5}, {-0.5, -0.5, 0.5}};
        static const int faces[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
        const int f = static_cast<int>(u01(rng) * 4.0) % 4;
        const double s = std::sqrt(u01(rng)), t = u01(rng);
        const Vec3& a = v[faces[f][0]];
        const Vec3& b = v[faces[f][1]];
        const Vec3& c = v[faces[f][2]];
        pts.push_back((1.0 - s) * a + (s * (1.0 - t)) * b + (s * t) * c);
        break;
      }
      case ShapeKind::Cylinder: {
        const double phi = 2.0 * std::numbers::pi * u01(rng);
        pts.push_back({0.5 * std::cos(phi), 0.5 * std::sin(phi), u01(rng) - 0.5});
        break;
      }
      case ShapeKind::Torus: {
        constexpr double major = 0.35, minor = 0.15;
        const double phi = 2.0 * std::numbers::pi * u01(rng);
        const double theta = 2.0 * std::numbers::pi * u01(rng);
        // Area element is proportional to (major + minor cos theta).
        if (u01(rng) * (major + minor) > major + minor * std::cos(theta)) break;
        const double ring = major + minor * std::cos(theta);
        pts.push_back({ring * std::cos(phi), ring * std::sin(phi), minor * std::sin(theta)});
        break;
      }
    }
  }
  if (noise > 0.0)
    for (auto& p : pts)
      for (double& x : p) x += noise * gauss(rng);
  return PointCloud::with_unit_features(std::move(pts));
}

void write_xyz(const std::filesystem::path& path, std::span<const Vec3> points) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& p : points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
}

std::vector<Vec3> read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<Vec3> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Vec3 p{};
    if (!(ls >> p[0] >> p[1] >> p[2])) throw Error("malformed point line in " + path.string() + ": " + line);
    pts.push_back(p);
  }
  return pts;
}

}  // namespace e2pn
