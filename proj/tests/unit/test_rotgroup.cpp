#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "e2pn/error.hpp"
#include "e2pn/rotgroup.hpp"

using namespace e2pn;

namespace {

// Order by repeated matrix multiplication, independent of the Cayley table.
std::size_t matrix_order(const Rotation3& r) {
  Rotation3 p = r;
  std::size_t n = 1;
  while (p.max_abs_diff(Rotation3::identity()) > 1e-9 && n < 1000) {
    p = p * r;
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("platonic groups have the expected orders") {
  CHECK(generate_platonic_group(Solid::Tetra).order() == 12);
  CHECK(generate_platonic_group(Solid::Octa).order() == 24);
  CHECK(generate_platonic_group(Solid::Icosa).order() == 60);
}

TEST_CASE("identity is a member and fixed by the Cayley table") {
  for (Solid s : {Solid::Tetra, Solid::Octa, Solid::Icosa}) {
    const auto g = generate_platonic_group(s);
    const auto e = g.identity_index();
    CHECK(g.element(e).max_abs_diff(Rotation3::identity()) < 1e-12);
    CHECK(g.compose(e, e) == e);
  }
}

TEST_CASE("icosahedral element orders partition as 1/15/20/24") {
  const auto g = generate_platonic_group(Solid::Icosa);
  std::map<std::size_t, std::size_t> oracle;
  for (const auto& r : g.elements()) ++oracle[matrix_order(r)];
  const std::map<std::size_t, std::size_t> expected{{1, 1}, {2, 15}, {3, 20}, {5, 24}};
  CHECK(oracle == expected);
  CHECK(g.element_order_histogram() == expected);
}

TEST_CASE("group elements are proper rotations and tables satisfy the axioms") {
  for (Solid s : {Solid::Tetra, Solid::Octa, Solid::Icosa}) {
    const auto g = generate_platonic_group(s);
    const std::size_t n = g.order();
    for (const auto& r : g.elements()) {
      CHECK(r.orthogonality_error() < 1e-12);
      CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::set<std::size_t> row, col;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(g.element(g.compose(i, j)).max_abs_diff(g.element(i) * g.element(j)) < 1e-9);
        row.insert(g.compose(i, j));
        col.insert(g.compose(j, i));
      }
      CHECK(row.size() == n);
      CHECK(col.size() == n);
      CHECK(g.compose(i, g.inverse(i)) == g.identity_index());
      CHECK(g.compose(g.inverse(i), i) == g.identity_index());
    }
    if (n <= 24) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < n; ++k)
            REQUIRE(g.compose(g.compose(i, j), k) == g.compose(i, g.compose(j, k)));
    } else {
      std::mt19937_64 rng(7);
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (int t = 0; t < 100000; ++t) {
        const auto i = pick(rng), j = pick(rng), k = pick(rng);
        REQUIRE(g.compose(g.compose(i, j), k) == g.compose(i, g.compose(j, k)));
      }
    }
  }
}

TEST_CASE("every element preserves the vertex set") {
  for (Solid s : {Solid::Tetra, Solid::Octa, Solid::Icosa}) {
    const auto g = generate_platonic_group(s);
    const auto v = platonic_vertices(s);
    for (const auto& r : g.elements())
      for (const auto& p : v) {
        double best = 10.0;
        for (const auto& q : v) best = std::min(best, distance(r.apply(p), q));
        CHECK(best < 1e-9);
      }
  }
}

TEST_CASE("group generation is deterministic") {
  const auto a = generate_platonic_group(Solid::Icosa);
  const auto b = generate_platonic_group(Solid::Icosa);
  for (std::size_t i = 0; i < a.order(); ++i) CHECK(a.element(i).data() == b.element(i).data());
}

TEST_CASE("closure of a non-finite generator overflows") {
  CHECK_THROWS_AS(closure({Rotation3::axis_angle({0, 0, 1}, 1.0)}, 1e-9), ClosureOverflow);
  CHECK_THROWS_AS(FiniteRotationGroup({Rotation3::identity(), Rotation3::axis_angle({0, 0, 1}, 1.0)}, 1e-9),
                  ClosureOverflow);
}

TEST_CASE("icosahedron vertices") {
  const auto v = icosa_vertices();
  REQUIRE(v.size() == 12);
  CHECK(v[0] == Vec3{0.0, 0.0, 1.0});
  std::size_t south = 12;
  for (std::size_t i = 0; i < 12; ++i)
    if (v[i] == Vec3{0.0, 0.0, -1.0}) south = i;
  CHECK(south < 12);

  const double inv_sqrt5 = 1.0 / std::sqrt(5.0);
  for (const auto& a : v) {
    CHECK(std::abs(norm(a) - 1.0) < 1e-12);
    bool has_antipode = false;
    for (const auto& b : v) {
      const double d = dot(a, b);
      const bool allowed = std::abs(d - 1.0) < 1e-9 || std::abs(d + 1.0) < 1e-9 ||
                           std::abs(std::abs(d) - inv_sqrt5) < 1e-9;
      CHECK(allowed);
      has_antipode = has_antipode || std::abs(d + 1.0) < 1e-9;
    }
    CHECK(has_antipode);
  }
}

TEST_CASE("icosahedral quotient: 12 cosets of 5") {
  const auto g = generate_platonic_group(Solid::Icosa);
  const auto q = build_quotient(g, icosa_vertices());
  REQUIRE(q.s2.num_anchors() == 12);
  CHECK(q.s2.stabilizer.size() == 5);
  CHECK(q.s2.num_anchors() * q.s2.stabilizer.size() == g.order());

  std::map<std::size_t, std::size_t> coset_size;
  for (std::size_t x = 0; x < g.order(); ++x) ++coset_size[q.s2.coset_of[x]];
  CHECK(coset_size.size() == 12);
  for (const auto& [a, size] : coset_size) CHECK(size == 5);

  for (std::size_t a = 0; a < 12; ++a) {
    CHECK(q.s2.coset_of[q.s2.section[a]] == a);
    CHECK(distance(g.element(q.s2.section[a]).apply(q.s2.anchors[0]), q.s2.anchors[a]) < 1e-9);
    // Lowest index in the coset.
    for (std::size_t x = 0; x < q.s2.section[a]; ++x) CHECK(q.s2.coset_of[x] != a);
  }
  for (std::size_t x = 0; x < g.order(); ++x)
    CHECK(distance(g.element(x).apply(q.s2.anchors[0]), q.s2.anchors[q.s2.coset_of[x]]) < 1e-9);
}

TEST_CASE("identity maps to anchor 0 with the identity permutation") {
  const auto d = make_discretization(Solid::Icosa);
  const auto e = d->group.identity_index();
  CHECK(d->quotient.coset_of[e] == 0);
  for (std::size_t a = 0; a < 12; ++a) CHECK(d->anchor_perm(e, a) == a);
}

TEST_CASE("stabilizer: five z rotations fixing both poles") {
  const auto d = make_discretization(Solid::Icosa);
  std::size_t south = 0;
  for (std::size_t a = 0; a < 12; ++a)
    if (d->quotient.anchors[a][2] < -0.999) south = a;

  // Brute-force scan of all 60 permutations.
  std::vector<std::size_t> scan;
  for (std::size_t g = 0; g < d->group_order(); ++g)
    if (d->anchor_perm(g, 0) == 0) scan.push_back(g);
  CHECK(scan == d->quotient.stabilizer);
  REQUIRE(scan.size() == 5);

  std::set<std::size_t> orders;
  for (std::size_t h : scan) {
    CHECK(d->anchor_perm(h, south) == south);
    const auto& r = d->group.element(h);
    CHECK(std::abs(r(2, 2) - 1.0) < 1e-12);
    orders.insert(d->group.element_order(h));
  }
  CHECK(orders == std::set<std::size_t>{1, 5});
}

TEST_CASE("anchor permutations are faithful and homomorphic") {
  const auto d = make_discretization(Solid::Icosa);
  const std::size_t n = d->group_order();
  std::set<std::vector<std::size_t>> distinct;
  for (std::size_t g = 0; g < n; ++g) {
    const auto row = d->anchor_perm.row(g);
    std::vector<std::size_t> r(row.begin(), row.end());
    CHECK(std::set<std::size_t>(r.begin(), r.end()).size() == 12);
    distinct.insert(r);
  }
  CHECK(distinct.size() == n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t a = 0; a < 12; ++a)
        REQUIRE(d->anchor_perm(d->group.compose(i, j), a) == d->anchor_perm(i, d->anchor_perm(j, a)));
}

TEST_CASE("tetrahedral and octahedral quotients") {
  const auto t = make_discretization(Solid::Tetra);
  CHECK(t->num_anchors() == 4);
  CHECK(t->quotient.stabilizer.size() == 3);
  const auto o = make_discretization(Solid::Octa);
  CHECK(o->num_anchors() == 6);
  CHECK(o->quotient.stabilizer.size() == 4);
}

TEST_CASE("misaligned vertices are rejected") {
  const auto g = generate_platonic_group(Solid::Icosa);
  auto v = icosa_vertices();
  const auto tilt = Rotation3::axis_angle({1, 0, 0}, 0.01);
  for (auto& p : v) p = tilt.apply(p);
  CHECK_THROWS_AS(build_quotient(g, v), AmbiguousMatch);

  auto partial = icosa_vertices();
  partial.pop_back();
  CHECK_THROWS_AS(build_quotient(g, partial), AmbiguousMatch);
}

TEST_CASE("SE(3) action on the quotient") {
  const auto d = make_discretization(Solid::Icosa);
  const QuotientPoint x{3, {0.1, -0.2, 0.3}};
  const auto e = d->group.identity_index();

  auto same = group_act_se3(*d, e, {0, 0, 0}, x);
  CHECK(same.anchor == 3);
  CHECK(same.position == x.position);

  auto moved = group_act_se3(*d, e, {1.0, 2.0, 3.0}, x);
  CHECK(moved.anchor == 3);
  CHECK(distance(moved.position, Vec3{1.1, 1.8, 3.3}) < 1e-15);

  for (std::size_t h : d->quotient.stabilizer) {
    auto fixed = group_act_se3(*d, h, {0, 0, 0}, QuotientPoint{0, {0, 0, 0}});
    CHECK(fixed.anchor == 0);
    CHECK(norm(fixed.position) == 0.0);
  }

  // Composition matches the SE(3) product (R1, t1)(R2, t2) = (R1 R2, t1 + R1 t2).
  const std::size_t g1 = 7, g2 = 23;
  const Vec3 t1{0.5, 0.0, -1.0}, t2{0.0, 2.0, 0.25};
  const auto lhs = group_act_se3(*d, g1, t1, group_act_se3(*d, g2, t2, x));
  const auto rhs = group_act_se3(*d, d->group.compose(g1, g2), t1 + d->group.element(g1).apply(t2), x);
  CHECK(lhs.anchor == rhs.anchor);
  CHECK(distance(lhs.position, rhs.position) < 1e-12);
}
