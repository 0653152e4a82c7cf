#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "e2pn/error.hpp"
#include "e2pn/heads.hpp"
#include "e2pn/layers.hpp"

using namespace e2pn;

namespace {

std::vector<Vec3> random_points(std::size_t n, double extent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> p(n);
  for (auto& x : p) x = {u(rng), u(rng), u(rng)};
  return p;
}

ag::Tensor randn(ag::Shape shape, std::mt19937_64& rng, bool grad = false) {
  std::normal_distribution<double> n01;
  std::vector<double> v(ag::numel(shape));
  for (double& x : v) x = n01(rng);
  return ag::Tensor(std::move(shape), std::move(v), grad);
}

FieldBatch random_field(std::size_t n, std::size_t slots, std::size_t c, std::mt19937_64& rng, bool grad = false) {
  FieldBatch f;
  f.positions.push_back(random_points(n, 0.5, rng));
  f.values = randn({n, slots, c}, rng, grad);
  return f;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Rotated copy of a field: positions R p + t, slot s of the new field holds
// slot perm[g^-1][s] of the old one.
FieldBatch transform_field(const FieldBatch& f, const AnchorPermutationRep& perm, const FiniteRotationGroup& group,
                           std::size_t g, const Vec3& t) {
  FieldBatch out;
  for (const auto& cloud : f.positions) {
    std::vector<Vec3> moved;
    for (const auto& p : cloud) moved.push_back(group.element(g).apply(p) + t);
    out.positions.push_back(std::move(moved));
  }
  const std::size_t rows = f.values.dim(0), slots = f.values.dim(1), c = f.values.dim(2);
  std::vector<double> v(f.values.numel());
  const auto src = f.values.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t a = 0; a < slots; ++a)
      std::copy_n(src.data() + (r * slots + a) * c, c, v.data() + (r * slots + perm(g, a)) * c);
  out.values = ag::Tensor(f.values.shape(), std::move(v));
  return out;
}

// Per-definition quotient/group convolution from the expanded kernel.
std::vector<double> conv_oracle(const ConvLayer& layer, const FieldBatch& in) {
  const auto& g = *layer.geometry;
  const std::size_t a_count = g.num_slots, k_count = g.num_kernel_points();
  const std::size_t c1 = layer.kernel.channels_in, c2 = layer.kernel.channels_out;
  PointCloud cloud;
  cloud.positions = in.positions[0];
  cloud.features.assign(in.values.values().begin(), in.values.values().end());
  cloud.num_anchors = a_count;
  cloud.channels = c1;
  const auto gathered = gather_features(cloud, cloud.positions, g.kernel_points, layer.radius, layer.sigma);
  ag::Tape tape;
  const auto expanded = expand_kernel(tape, layer.kernel);
  const auto kappa = expanded.values();
  const std::size_t m_count = cloud.size();
  std::vector<double> out(m_count * a_count * c2, 0.0);
  for (std::size_t m = 0; m < m_count; ++m)
    for (std::size_t i = 0; i < a_count; ++i) {
      const std::size_t s = g.section[i];
      for (std::size_t j = 0; j < a_count; ++j)
        for (std::size_t k = 0; k < k_count; ++k) {
          const double* gv = gathered.data() + ((m * k_count + g.kernel_perm(s, k)) * a_count + g.slot_perm(s, j)) * c1;
          const double* kv = kappa.data() + (j * k_count + k) * c1 * c2;
          for (std::size_t x = 0; x < c1; ++x)
            for (std::size_t y = 0; y < c2; ++y) out[(m * a_count + i) * c2 + y] += kv[x * c2 + y] * gv[x];
        }
    }
  return out;
}

}  // namespace

TEST_CASE("lift broadcasts features over anchors") {
  auto cloud = PointCloud::with_unit_features({{0, 0, 0}, {1, 0, 0}});
  const auto f = lift({cloud}, 12);
  CHECK(f.values.shape() == ag::Shape{2, 12, 1});
  for (double v : f.values.values()) CHECK(v == 1.0);
  CHECK_THROWS_AS(lift({}, 12), ShapeMismatch);
}

TEST_CASE("quotient convolution matches the per-definition oracle in both modes") {
  std::mt19937_64 rng(1);
  const auto disc = make_discretization(Solid::Icosa);
  const auto geom = ConvGeometry::quotient(disc, 0.25);
  auto layer = make_conv_layer(geom, 3, 4, 0.4, 0.25, GatherMode::FastSymmetric, rng);
  const auto in = random_field(48, 12, 3, rng);
  const auto oracle = conv_oracle(layer, in);

  ag::Tape tape;
  ConvStats fast_stats, naive_stats;
  const auto fast = conv_forward(tape, layer, in, &fast_stats);
  layer.mode = GatherMode::NaiveGather;
  const auto naive = conv_forward(tape, layer, in, &naive_stats);
  CHECK(max_abs_diff(fast.values.values(), oracle) < 1e-12);
  CHECK(max_abs_diff(naive.values.values(), oracle) < 1e-12);
  CHECK(fast_stats.locations_per_center() == 13.0);
  CHECK(naive_stats.locations_per_center() == 156.0);
  CHECK(fast.values.shape() == ag::Shape{48, 12, 4});
}

TEST_CASE("zero kernel gives zero output; one-hot kernel reads off a feature") {
  std::mt19937_64 rng(2);
  const auto disc = make_discretization(Solid::Icosa);
  const auto geom = ConvGeometry::quotient(disc, 1.0);
  auto layer = make_conv_layer(geom, 1, 1, 1.5, 1.0, GatherMode::FastSymmetric, rng);

  FieldBatch in;
  // A single input at kernel point 3 of the center at the origin.
  in.positions = {{geom->kernel_points.points[3]}};
  std::vector<double> feat(12);
  std::iota(feat.begin(), feat.end(), 1.0);
  in.values = ag::Tensor({1, 12, 1}, feat);
  const std::vector<std::vector<Vec3>> center{{{0.0, 0.0, 0.0}}};

  std::fill(layer.kernel.free_weights.mutable_values().begin(), layer.kernel.free_weights.mutable_values().end(), 0.0);
  ag::Tape tape;
  const auto zero = conv_forward(tape, layer, in, center);
  for (double v : zero.values.values()) CHECK(v == 0.0);

  // Weight 1 on the orbit of (anchor j=0, kernel point 0) only.
  const std::size_t orbit = geom->orbits.orbit_of[0 * 13 + 0];
  layer.kernel.free_weights.mutable_values()[orbit] = 1.0;
  const auto result = conv_forward(tape, layer, in, center);
  const auto out = result.values.values();
  // Hand evaluation: slot i sees (j, k) in the orbit with kperm[s_i][k] = 3.
  for (std::size_t i = 0; i < 12; ++i) {
    const std::size_t s = geom->section[i];
    double expected = 0.0;
    for (std::size_t pair : geom->orbits.members[orbit]) {
      const std::size_t j = pair / 13, k = pair % 13;
      if (geom->kernel_perm(s, k) == 3) expected += feat[geom->slot_perm(s, j)];
    }
    CHECK(out[i] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("quotient convolution is SE(3)-equivariant") {
  std::mt19937_64 rng(3);
  const auto disc = make_discretization(Solid::Icosa);
  auto layer = make_conv_layer(ConvGeometry::quotient(disc, 0.25), 2, 3, 0.4, 0.25, GatherMode::FastSymmetric, rng);
  const auto in = random_field(64, 12, 2, rng);
  ag::Tape tape;
  const auto base = conv_forward(tape, layer, in);
  for (std::size_t g : {5u, 17u, 42u}) {
    const Vec3 t{0.3, -1.2, 2.0};
    const auto moved = transform_field(in, disc->anchor_perm, disc->group, g, t);
    const auto expected = transform_field(base, disc->anchor_perm, disc->group, g, t);
    for (auto mode : {GatherMode::FastSymmetric, GatherMode::NaiveGather}) {
      layer.mode = mode;
      const auto out = conv_forward(tape, layer, moved);
      CHECK(max_abs_diff(out.values.values(), expected.values.values()) < 1e-10);
    }
    layer.mode = GatherMode::FastSymmetric;
  }
}

TEST_CASE("group convolution: oracle, equivariance and the coset identity") {
  std::mt19937_64 rng(4);
  const auto disc = make_discretization(Solid::Icosa);
  const auto ggeom = ConvGeometry::group(disc, 0.25);
  CHECK(ggeom->orbits.num_orbits() == 60 * 13);
  auto glayer = make_conv_layer(ggeom, 2, 2, 0.4, 0.25, GatherMode::FastSymmetric, rng);
  const auto in = random_field(24, 60, 2, rng);
  ag::Tape tape;
  const auto out = conv_forward(tape, glayer, in);
  CHECK(max_abs_diff(out.values.values(), conv_oracle(glayer, in)) < 1e-12);
  glayer.mode = GatherMode::NaiveGather;
  CHECK(max_abs_diff(conv_forward(tape, glayer, in).values.values(), out.values.values()) < 1e-10);
  glayer.mode = GatherMode::FastSymmetric;

  AnchorPermutationRep cayley = ggeom->slot_perm;
  const auto moved = transform_field(in, cayley, disc->group, 9, {1.0, 0.0, -0.5});
  const auto expected = transform_field(out, cayley, disc->group, 9, {1.0, 0.0, -0.5});
  CHECK(max_abs_diff(conv_forward(tape, glayer, moved).values.values(), expected.values.values()) < 1e-10);

  // Coset-constant data: group conv = |stabilizer| x quotient conv.
  const auto qgeom = ConvGeometry::quotient(disc, 0.25);
  auto qlayer = make_conv_layer(qgeom, 2, 3, 0.4, 0.25, GatherMode::FastSymmetric, rng);
  auto g2 = make_conv_layer(ggeom, 2, 3, 0.4, 0.25, GatherMode::FastSymmetric, rng);
  const auto& coset = disc->quotient.coset_of;
  {
    ag::Tape t;
    const auto expanded = expand_kernel(t, qlayer.kernel);
    const auto kq = expanded.values();
    auto wg = g2.kernel.free_weights.mutable_values();
    for (std::size_t x = 0; x < 60; ++x)
      for (std::size_t k = 0; k < 13; ++k)
        std::copy_n(kq.data() + (coset[x] * 13 + k) * 6, 6, wg.data() + (x * 13 + k) * 6);
  }
  const auto qin = random_field(40, 12, 2, rng);
  FieldBatch gin;
  gin.positions = qin.positions;
  std::vector<double> gv(40 * 60 * 2);
  for (std::size_t n = 0; n < 40; ++n)
    for (std::size_t x = 0; x < 60; ++x)
      std::copy_n(qin.values.values().data() + (n * 12 + coset[x]) * 2, 2, gv.data() + (n * 60 + x) * 2);
  gin.values = ag::Tensor({40, 60, 2}, gv);
  const auto qout = conv_forward(tape, qlayer, qin), gout = conv_forward(tape, g2, gin);
  const auto qo = qout.values.values();
  const auto go = gout.values.values();
  double worst = 0.0, scale = 0.0;
  for (std::size_t n = 0; n < 40; ++n)
    for (std::size_t x = 0; x < 60; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double q = qo[(n * 12 + coset[x]) * 3 + c];
        worst = std::max(worst, std::abs(go[(n * 60 + x) * 3 + c] - 5.0 * q));
        scale = std::max(scale, std::abs(5.0 * q));
      }
  CHECK(worst / scale < 1e-9);
}

TEST_CASE("convolution gradients") {
  std::mt19937_64 rng(5);
  const auto disc = make_discretization(Solid::Icosa);
  for (auto mode : {GatherMode::FastSymmetric, GatherMode::NaiveGather}) {
    auto layer = make_conv_layer(ConvGeometry::quotient(disc, 0.25), 2, 3, 0.4, 0.25, mode, rng);
    const auto in = random_field(20, 12, 2, rng, true);
    const auto probe = randn({20, 12, 3}, rng);
    const auto report = ag::grad_check(
        [&](ag::Tape& t) {
          return ag::contract(t, conv_forward(t, layer, in).values, probe, "nac,nac->");
        },
        {in.values, layer.kernel.free_weights}, {.tolerance = 1e-6, .max_coords = 300});
    CHECK(report.passed());
  }
}

TEST_CASE("batch norm") {
  std::mt19937_64 rng(6);
  auto bn = BatchNorm::create(3);
  const auto x = randn({10, 12, 3}, rng, true);
  ag::Tape tape;
  const auto normalized = batch_norm(tape, bn, x, true);
  const auto y = normalized.values();
  // Direct oracle.
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 120; ++r) mean += x.values()[r * 3 + c];
    mean /= 120.0;
    for (std::size_t r = 0; r < 120; ++r) var += std::pow(x.values()[r * 3 + c] - mean, 2);
    var /= 120.0;
    for (std::size_t r = 0; r < 120; ++r)
      CHECK(std::abs(y[r * 3 + c] - (x.values()[r * 3 + c] - mean) / std::sqrt(var + 1e-5)) < 1e-12);
    CHECK(bn.running_mean.values()[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
  }

  auto bn2 = BatchNorm::create(2);
  bn2.beta.mutable_values()[0] = 0.7;
  bn2.beta.mutable_values()[1] = -0.3;
  const auto constant = batch_norm(tape, bn2, ag::Tensor::full({5, 12, 2}, 4.0), true);
  for (std::size_t i = 0; i < constant.numel(); ++i) CHECK(constant.values()[i] == (i % 2 == 0 ? 0.7 : -0.3));

  for (bool training : {true, false}) {
    auto b = BatchNorm::create(3);
    b.gamma = randn({3}, rng, true);
    b.beta = randn({3}, rng, true);
    const auto probe = randn({10, 12, 3}, rng);
    const auto r = ag::grad_check([&](ag::Tape& t) { return ag::contract(t, batch_norm(t, b, x, training), probe, "nac,nac->"); },
                                  {x, b.gamma, b.beta});
    CHECK(r.passed());
  }
}

TEST_CASE("batch norm commutes with anchor permutation") {
  std::mt19937_64 rng(7);
  const auto disc = make_discretization(Solid::Icosa);
  auto f = random_field(15, 12, 4, rng);
  auto bn1 = BatchNorm::create(4), bn2 = BatchNorm::create(4);
  ag::Tape tape;
  FieldBatch y;
  y.positions = f.positions;
  y.values = batch_norm(tape, bn1, f.values, true);
  const auto moved = transform_field(f, disc->anchor_perm, disc->group, 11, {0, 0, 0});
  const auto ym = batch_norm(tape, bn2, moved.values, true);
  const auto expected = transform_field(y, disc->anchor_perm, disc->group, 11, {0, 0, 0});
  CHECK(max_abs_diff(ym.values(), expected.values.values()) < 1e-12);
}

TEST_CASE("segment reductions and pooling") {
  std::mt19937_64 rng(8);
  const auto x = randn({6, 2, 2}, rng, true);
  const std::vector<std::vector<std::size_t>> segs{{0, 3, 5}, {1}, {2, 4}};
  ag::Tape tape;
  const auto mx_t = segment_reduce(tape, x, segs, ag::Reduce::Max);
  const auto mn_t = segment_reduce(tape, x, segs, ag::Reduce::Mean);
  const auto mx = mx_t.values();
  const auto mn = mn_t.values();
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t j = 0; j < 4; ++j) {
      double best = -1e300, sum = 0.0;
      for (std::size_t r : segs[s]) {
        best = std::max(best, x.values()[r * 4 + j]);
        sum += x.values()[r * 4 + j];
      }
      CHECK(mx[s * 4 + j] == best);
      CHECK(mn[s * 4 + j] == doctest::Approx(sum / static_cast<double>(segs[s].size())));
    }
  for (auto kind : {ag::Reduce::Max, ag::Reduce::Mean, ag::Reduce::Sum}) {
    const auto r = ag::grad_check([&](ag::Tape& t) {
      return ag::reduce(t, ag::pointwise(t, segment_reduce(t, x, segs, kind), ag::Pointwise::sigmoid()), {0, 1, 2},
                        ag::Reduce::Sum);
    }, {x});
    CHECK(r.passed());
  }

  // Pool oracle: group by floor(p / cell) and max.
  FieldBatch f = random_field(60, 12, 2, rng);
  const auto pooled = spatial_pool(tape, f, 0.3);
  std::map<std::array<long long, 3>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < 60; ++i) {
    const auto& p = f.positions[0][i];
    cells[{(long long)std::floor(p[0] / 0.3), (long long)std::floor(p[1] / 0.3), (long long)std::floor(p[2] / 0.3)}]
        .push_back(i);
  }
  REQUIRE(pooled.positions[0].size() == cells.size());
  std::size_t c = 0;
  for (const auto& [key, members] : cells) {
    for (std::size_t j = 0; j < 24; ++j) {
      double best = -1e300;
      for (std::size_t m : members) best = std::max(best, f.values.values()[m * 24 + j]);
      CHECK(pooled.values.values()[c * 24 + j] == best);
    }
    ++c;
  }
  for (auto& p : f.positions[0]) p = p + Vec3{1.0, 1.0, 1.0};
  const auto single = spatial_pool(tape, f, 100.0);
  CHECK(single.positions[0].size() == 1);
}

TEST_CASE("ga_pool is invariant and differentiable") {
  std::mt19937_64 rng(9);
  const auto disc = make_discretization(Solid::Icosa);
  const auto x = randn({3, 12, 4}, rng, true);
  const auto w = randn({4}, rng, true);
  ag::Tape tape;
  const auto base_t = ga_pool(tape, x, w);
  const auto base = base_t.values();
  for (std::size_t g = 0; g < 60; ++g) {
    std::vector<std::size_t> table(12);
    for (std::size_t a = 0; a < 12; ++a) table[a] = disc->anchor_perm(disc->group.inverse(g), a);
    const auto moved = ag::index_permute_gather(tape, x, 1, table);
    CHECK(max_abs_diff(ga_pool(tape, moved, w).values(), base) < 1e-12);
  }
  // Identical anchors give back the feature.
  const auto same = ag::expand(tape, randn({2, 4}, rng), 1, 12);
  const auto pooled_t = ga_pool(tape, same, w);
  const auto pooled = pooled_t.values();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c) CHECK(pooled[b * 4 + c] == doctest::Approx(same.values()[(b * 12) * 4 + c]));
  const auto probe = randn({3, 4}, rng);
  CHECK(ag::grad_check([&](ag::Tape& t) { return ag::contract(t, ga_pool(t, x, w), probe, "bc,bc->"); }, {x, w}).passed());
}

TEST_CASE("permutation expansion") {
  std::mt19937_64 rng(10);
  const auto disc = make_discretization(Solid::Icosa);
  const auto x = randn({1, 12, 2}, rng);
  ag::Tape tape;
  const auto e = permutation_expand(tape, x, *disc);
  REQUIRE(e.shape() == ag::Shape{1, 60, 24});
  const auto ev = e.values();
  const std::size_t id = disc->group.identity_index();
  for (std::size_t j = 0; j < 24; ++j) CHECK(ev[id * 24 + j] == x.values()[j]);
  std::set<std::vector<double>> rows;
  for (std::size_t g = 0; g < 60; ++g) rows.insert(std::vector<double>(ev.begin() + g * 24, ev.begin() + (g + 1) * 24));
  CHECK(rows.size() == 60);

  // Rotating the input reindexes rows by the Cayley table.
  const std::size_t g = 33, ginv = disc->group.inverse(g);
  std::vector<std::size_t> table(12);
  for (std::size_t a = 0; a < 12; ++a) table[a] = disc->anchor_perm(ginv, a);
  const auto rotated = permutation_expand(tape, ag::index_permute_gather(tape, x, 1, table), *disc);
  const auto er = rotated.values();
  for (std::size_t h = 0; h < 60; ++h)
    for (std::size_t j = 0; j < 24; ++j) CHECK(er[h * 24 + j] == ev[disc->group.compose(ginv, h) * 24 + j]);

  const auto flat = permutation_expand(tape, ag::Tensor::full({1, 12, 2}, 3.0), *disc);
  for (double v : flat.values()) CHECK(v == 3.0);
}

TEST_CASE("class head") {
  std::mt19937_64 rng(11);
  const auto disc = make_discretization(Solid::Icosa);
  auto head = ClassHead::create(3, 12, 4, rng);
  const auto f = randn({1, 12, 4}, rng, true);
  // Reference 0 = f, others orthogonal to every permutation of f (zero).
  auto ref = head.reference.mutable_values();
  std::fill(ref.begin(), ref.end(), 0.0);
  std::copy(f.values().begin(), f.values().end(), ref.begin());
  std::normal_distribution<double> n01;
  ag::Tape tape;
  auto s = class_head(tape, head, f, *disc);
  CHECK(argmax_rows(s.logits)[0] == 0);
  CHECK(s.best_rotation[0] == disc->group.identity_index());

  // Invariance under every element.
  for (std::size_t x = 0; x < head.reference.numel(); ++x) ref[x] = n01(rng);
  s = class_head(tape, head, f, *disc);
  for (std::size_t g = 0; g < 60; ++g) {
    std::vector<std::size_t> table(12);
    for (std::size_t a = 0; a < 12; ++a) table[a] = disc->anchor_perm(disc->group.inverse(g), a);
    const auto r = class_head(tape, head, ag::index_permute_gather(tape, f, 1, table), *disc);
    CHECK(max_abs_diff(r.logits.values(), s.logits.values()) < 1e-12);
    for (std::size_t n = 0; n < 3; ++n) CHECK(r.best_rotation[n] == disc->group.compose(g, s.best_rotation[n]));
  }

  auto one = ClassHead::create(1, 12, 4, rng);
  CHECK(class_head(tape, one, f, *disc).logits.shape() == ag::Shape{1, 1});
  const auto probe = randn({1, 3}, rng);
  CHECK(ag::grad_check([&](ag::Tape& t) { return ag::contract(t, class_head(t, head, f, *disc).logits, probe, "bn,bn->"); },
                       {f, head.reference})
            .passed());
}

TEST_CASE("rotation head") {
  std::mt19937_64 rng(12);
  const auto disc = make_discretization(Solid::Icosa);
  auto head = RotationHead::create(4, 8, rng);
  head.b1 = randn({8}, rng, true);
  const auto f1 = randn({2, 12, 4}, rng, true), f2 = randn({2, 12, 4}, rng, true);
  ag::Tape tape;
  const auto s = rotation_head(tape, head, f1, f2, *disc);
  CHECK(s.pair_scores.shape() == ag::Shape{2, 60, 12});
  CHECK(s.logits.shape() == ag::Shape{2, 60});

  // Per-definition oracle for one (b, g, a).
  const std::size_t b = 1, g = 21, a = 7, pa = disc->anchor_perm(g, a);
  double score = head.b2.values()[0];
  for (std::size_t h = 0; h < 8; ++h) {
    double z = head.b1.values()[h];
    for (std::size_t c = 0; c < 4; ++c)
      z += f1.values()[(b * 12 + a) * 4 + c] * head.w1a.values()[c * 8 + h] +
           f2.values()[(b * 12 + pa) * 4 + c] * head.w1b.values()[c * 8 + h];
    score += std::max(z, 0.0) * head.w2.values()[h];
  }
  CHECK(s.pair_scores.values()[(b * 60 + g) * 12 + a] == doctest::Approx(score).epsilon(1e-12));

  const auto probe = randn({2, 60}, rng);
  auto params = head.parameters();
  params.push_back(f1);
  params.push_back(f2);
  CHECK(ag::grad_check([&](ag::Tape& t) { return ag::contract(t, rotation_head(t, head, f1, f2, *disc).logits, probe, "bg,bg->"); },
                       params, {.max_coords = 300})
            .passed());
  CHECK_THROWS_AS(rotation_head(tape, head, f1, randn({2, 12, 3}, rng), *disc), ShapeMismatch);
}
