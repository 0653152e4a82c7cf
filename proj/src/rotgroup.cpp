#include "e2pn/rotgroup.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <numeric>

#include "e2pn/error.hpp"

namespace e2pn {

std::string to_string(Solid solid) {
  switch (solid) {
    case Solid::Tetra: return "tetra";
    case Solid::Octa: return "octa";
    case Solid::Icosa: return "icosa";
  }
  return "unknown";
}

Solid parse_solid(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "tetra" || lower == "tetrahedron") return Solid::Tetra;
  if (lower == "octa" || lower == "octahedron") return Solid::Octa;
  if (lower == "icosa" || lower == "icosahedron") return Solid::Icosa;
  throw ConfigError("unknown solid '" + std::string(name) + "'");
}

namespace {

// Rotation taking unit vector u onto unit vector v (u != -v).
Rotation3 rotation_between(const Vec3& u, const Vec3& v) {
  const Vec3 axis = cross(u, v);
  const double s = norm(axis);
  if (s < 1e-15) return Rotation3::identity();
  return Rotation3::axis_angle(axis, std::atan2(s, dot(u, v)));
}

// Normalizes, rotates vertex 0 onto +z and snaps +-z exactly.
std::vector<Vec3> align_to_north(std::vector<Vec3> raw) {
  for (auto& v : raw) v = normalized(v);
  const Rotation3 r = rotation_between(raw[0], {0.0, 0.0, 1.0});
  for (auto& v : raw) {
    v = r.apply(v);
    if (std::abs(v[2] - 1.0) < 1e-12) v = {0.0, 0.0, 1.0};
    if (std::abs(v[2] + 1.0) < 1e-12) v = {0.0, 0.0, -1.0};
  }
  return raw;
}

double angle_between(const Vec3& a, const Vec3& b) { return std::atan2(norm(cross(a, b)), dot(a, b)); }

// Lexicographic key on matrix entries rounded to 1e-6.
std::array<long long, 9> canonical_key(const Rotation3& r) {
  std::array<long long, 9> key{};
  for (std::size_t i = 0; i < 9; ++i) key[i] = std::llround(r.data()[i] * 1e6);
  return key;
}

}  // namespace

std::vector<Vec3> icosa_vertices() {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> raw;
  for (double s1 : {1.0, -1.0})
    for (double s2 : {phi, -phi}) raw.push_back({0.0, s1, s2});
  for (double s1 : {1.0, -1.0})
    for (double s2 : {phi, -phi}) raw.push_back({s1, s2, 0.0});
  for (double s1 : {phi, -phi})
    for (double s2 : {1.0, -1.0}) raw.push_back({s1, 0.0, s2});
  return align_to_north(std::move(raw));
}

std::vector<Vec3> platonic_vertices(Solid solid) {
  switch (solid) {
    case Solid::Tetra:
      return align_to_north({{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}});
    case Solid::Octa:
      return align_to_north({{0, 0, 1}, {1, 0, 0}, {0, 1, 0}, {-1, 0, 0}, {0, -1, 0}, {0, 0, -1}});
    case Solid::Icosa:
      return icosa_vertices();
  }
  return {};
}

FiniteRotationGroup::FiniteRotationGroup(std::vector<Rotation3> elements, double tol)
    : elements_(std::move(elements)) {
  const std::size_t n = elements_.size();
  identity_ = find(Rotation3::identity(), tol);
  if (identity_ == n) throw ClosureOverflow("identity is not an element");
  cayley_.resize(n * n);
  inverse_.assign(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = find(elements_[i] * elements_[j], tol);
      if (k == n) throw ClosureOverflow("element list is not closed under multiplication");
      cayley_[i * n + j] = k;
      if (k == identity_) inverse_[i] = j;
    }
    if (inverse_[i] == n) throw ClosureOverflow("element without inverse");
  }
}

std::size_t FiniteRotationGroup::find(const Rotation3& r, double tol) const {
  for (std::size_t i = 0; i < elements_.size(); ++i)
    if (elements_[i].max_abs_diff(r) < tol) return i;
  return elements_.size();
}

std::size_t FiniteRotationGroup::element_order(std::size_t i) const {
  std::size_t power = i, n = 1;
  while (power != identity_) {
    power = compose(power, i);
    ++n;
  }
  return n;
}

std::map<std::size_t, std::size_t> FiniteRotationGroup::element_order_histogram() const {
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t i = 0; i < order(); ++i) ++hist[element_order(i)];
  return hist;
}

std::vector<Rotation3> closure(const std::vector<Rotation3>& generators, double tol, std::size_t max_elements) {
  std::vector<Rotation3> found{Rotation3::identity()};
  auto known = [&](const Rotation3& r) {
    return std::any_of(found.begin(), found.end(), [&](const Rotation3& e) { return e.max_abs_diff(r) < tol; });
  };
  for (std::size_t frontier = 0; frontier < found.size(); ++frontier) {
    for (const auto& gen : generators) {
      const Rotation3 next = gen * found[frontier];
      if (known(next)) continue;
      found.push_back(next);
      if (found.size() > max_elements)
        throw ClosureOverflow("closure exceeded " + std::to_string(max_elements) + " elements");
    }
  }
  return found;
}

FiniteRotationGroup generate_platonic_group(Solid solid, double tol) {
  const auto vertices = platonic_vertices(solid);
  const Vec3& north = vertices[0];

  // Nearest neighbours of vertex 0 define the edge angle and vertex degree.
  double best = -2.0;
  for (std::size_t i = 1; i < vertices.size(); ++i) best = std::max(best, dot(north, vertices[i]));
  std::size_t degree = 0, neighbour = 0;
  for (std::size_t i = vertices.size(); i-- > 1;) {
    if (std::abs(dot(north, vertices[i]) - best) < 1e-9) {
      ++degree;
      neighbour = i;
    }
  }

  const std::vector<Rotation3> generators{
      Rotation3::axis_angle({0.0, 0.0, 1.0}, 2.0 * std::numbers::pi / static_cast<double>(degree)),
      Rotation3::axis_angle(north + vertices[neighbour], std::numbers::pi)};

  auto found = closure(generators, tol);
  std::stable_sort(found.begin(), found.end(), [](const Rotation3& a, const Rotation3& b) {
    return canonical_key(a) < canonical_key(b);
  });
  return FiniteRotationGroup(std::move(found), std::max(tol, 1e-9));
}

std::size_t match_direction(const std::vector<Vec3>& points, const Vec3& v, double tol_rad) {
  std::size_t hit = points.size(), hits = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (angle_between(points[i], v) < tol_rad) {
      hit = i;
      ++hits;
    }
  }
  if (hits != 1)
    throw AmbiguousMatch("rotated direction matched " + std::to_string(hits) + " anchors");
  return hit;
}

Quotient build_quotient(const FiniteRotationGroup& group, const std::vector<Vec3>& solid_vertices) {
  if (solid_vertices.empty() || angle_between(solid_vertices[0], {0.0, 0.0, 1.0}) > kAnchorMatchTolerance)
    throw AmbiguousMatch("vertex 0 must lie on +z");

  const std::size_t n = group.order(), a_count = solid_vertices.size();
  std::vector<std::size_t> table(n * a_count);
  for (std::size_t g = 0; g < n; ++g)
    for (std::size_t a = 0; a < a_count; ++a)
      table[g * a_count + a] =
          match_direction(solid_vertices, group.element(g).apply(solid_vertices[a]), kAnchorMatchTolerance);

  Quotient q;
  q.perm = AnchorPermutationRep(n, a_count, std::move(table));
  q.s2.anchors = solid_vertices;
  q.s2.coset_of.resize(n);
  q.s2.section.assign(a_count, n);
  for (std::size_t g = 0; g < n; ++g) {
    const std::size_t a = q.perm(g, 0);
    q.s2.coset_of[g] = a;
    if (q.s2.section[a] == n) q.s2.section[a] = g;
    if (a == 0) q.s2.stabilizer.push_back(g);
  }
  if (std::find(q.s2.section.begin(), q.s2.section.end(), n) != q.s2.section.end())
    throw AmbiguousMatch("group does not act transitively on the vertices");
  return q;
}

std::shared_ptr<const Discretization> make_discretization(Solid solid) {
  auto group = generate_platonic_group(solid);
  auto quotient = build_quotient(group, platonic_vertices(solid));
  return std::make_shared<const Discretization>(
      Discretization{solid, std::move(group), std::move(quotient.s2), std::move(quotient.perm)});
}

QuotientPoint group_act_se3(const Discretization& d, std::size_t g, const Vec3& t, const QuotientPoint& x) {
  return {d.anchor_perm(g, x.anchor), t + d.group.element(g).apply(x.position)};
}

}  // namespace e2pn
