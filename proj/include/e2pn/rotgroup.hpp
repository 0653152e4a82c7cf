#pragma once

// Finite rotation groups of the Platonic solids, their quotient by the
// stabilizer of one vertex, and the permutation action on the vertices.

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "e2pn/geometry.hpp"

namespace e2pn {

enum class Solid { Tetra, Octa, Icosa };

std::string to_string(Solid solid);
/// Accepts "tetra", "octa", "icosa" (case-insensitive). Throws ConfigError.
Solid parse_solid(std::string_view name);

/// The 12 icosahedron vertices, rotated so vertex 0 is exactly +z.
std::vector<Vec3> icosa_vertices();
/// Vertices of the given solid with vertex 0 exactly at +z.
std::vector<Vec3> platonic_vertices(Solid solid);

class FiniteRotationGroup {
 public:
  /// Builds the multiplication and inverse tables. Throws ClosureOverflow
  /// when the element list is not closed under multiplication.
  FiniteRotationGroup(std::vector<Rotation3> elements, double tol);

  std::size_t order() const { return elements_.size(); }
  const std::vector<Rotation3>& elements() const { return elements_; }
  const Rotation3& element(std::size_t i) const { return elements_[i]; }

  /// Index of elements[i] * elements[j].
  std::size_t compose(std::size_t i, std::size_t j) const { return cayley_[i * order() + j]; }
  std::size_t inverse(std::size_t i) const { return inverse_[i]; }
  std::size_t identity_index() const { return identity_; }

  /// Index of the element within `tol` (max-abs) of r, or order() if none.
  std::size_t find(const Rotation3& r, double tol = 1e-6) const;

  /// Smallest n >= 1 with g^n = e.
  std::size_t element_order(std::size_t i) const;
  std::map<std::size_t, std::size_t> element_order_histogram() const;

 private:
  std::vector<Rotation3> elements_;
  std::vector<std::size_t> cayley_;
  std::vector<std::size_t> inverse_;
  std::size_t identity_ = 0;
};

/// All products of the generators, in discovery order. Throws
/// ClosureOverflow past `max_elements`.
std::vector<Rotation3> closure(const std::vector<Rotation3>& generators, double tol, std::size_t max_elements = 120);

/// Closure of the two standard generators of the solid's rotation group:
/// the n-fold turn about +z (vertex 0) and the half turn about the midpoint
/// of an edge at vertex 0. Elements are deduplicated with max-abs distance
/// `tol` and sorted into a platform-independent canonical order.
FiniteRotationGroup generate_platonic_group(Solid solid, double tol = 1e-9);

/// perm[g][a] = index of elements[g] * anchors[a].
class AnchorPermutationRep {
 public:
  AnchorPermutationRep() = default;
  AnchorPermutationRep(std::size_t group_order, std::size_t num_points, std::vector<std::size_t> table)
      : group_order_(group_order), num_points_(num_points), table_(std::move(table)) {}

  std::size_t operator()(std::size_t g, std::size_t a) const { return table_[g * num_points_ + a]; }
  std::span<const std::size_t> row(std::size_t g) const {
    return {table_.data() + g * num_points_, num_points_};
  }
  std::size_t group_order() const { return group_order_; }
  std::size_t num_points() const { return num_points_; }
  const std::vector<std::size_t>& table() const { return table_; }

 private:
  std::size_t group_order_ = 0;
  std::size_t num_points_ = 0;
  std::vector<std::size_t> table_;
};

struct QuotientS2 {
  std::vector<Vec3> anchors;
  /// coset_of[g] = anchor reached by elements[g] applied to anchor 0.
  std::vector<std::size_t> coset_of;
  /// section[a] = lowest-index element of the coset of anchor a.
  std::vector<std::size_t> section;
  /// Elements fixing anchor 0 (rotations about +z), ascending.
  std::vector<std::size_t> stabilizer;

  std::size_t num_anchors() const { return anchors.size(); }
};

struct Quotient {
  QuotientS2 s2;
  AnchorPermutationRep perm;
};

/// Angular tolerance (radians) for matching rotated directions to anchors.
inline constexpr double kAnchorMatchTolerance = 1e-6;

/// Index of the unique direction in `points` within `tol_rad` of `v`
/// (both compared as directions). Throws AmbiguousMatch otherwise.
std::size_t match_direction(const std::vector<Vec3>& points, const Vec3& v, double tol_rad);

/// Requires vertices[0] == +z. Throws AmbiguousMatch when a rotated vertex
/// does not match exactly one vertex.
Quotient build_quotient(const FiniteRotationGroup& group, const std::vector<Vec3>& solid_vertices);

/// Group, quotient and anchor permutations for one solid. Immutable and
/// shared by every layer that works on the same discretization.
struct Discretization {
  Solid solid;
  FiniteRotationGroup group;
  QuotientS2 quotient;
  AnchorPermutationRep anchor_perm;

  std::size_t num_anchors() const { return quotient.num_anchors(); }
  std::size_t group_order() const { return group.order(); }
};

std::shared_ptr<const Discretization> make_discretization(Solid solid);

/// A point of S2' x R3: an anchor index and a position.
struct QuotientPoint {
  std::size_t anchor = 0;
  Vec3 position{0.0, 0.0, 0.0};
};

/// (R_g, t) . (anchor a, p) = (perm[g][a], t + R_g p).
QuotientPoint group_act_se3(const Discretization& d, std::size_t g, const Vec3& t, const QuotientPoint& x);

}  // namespace e2pn
