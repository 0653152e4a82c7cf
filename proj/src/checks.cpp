#include "e2pn/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "e2pn/error.hpp"
#include "e2pn/heads.hpp"
#include "e2pn/layers.hpp"

namespace e2pn {

namespace {

using Clock = std::chrono::steady_clock;

// Runs `body`, timing it and turning library errors into failures.
CheckResult timed(std::string name, double tolerance, const std::function<void(CheckResult&)>& body) {
  CheckResult r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  const auto start = Clock::now();
  try {
    body(r);
    r.passed = r.passed && std::isfinite(r.max_error) && r.max_error <= tolerance;
  } catch (const Error& e) {
    r.passed = false;
    r.max_error = std::numeric_limits<double>::infinity();
    r.detail = e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

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

// Positions R_g p + t; new slot perm[g][s] holds old slot s.
FieldBatch transform_field(const FieldBatch& f, const AnchorPermutationRep& perm, const Rotation3& r, std::size_t g,
                           const Vec3& t) {
  FieldBatch out;
  for (const auto& cloud : f.positions) {
    std::vector<Vec3> moved;
    moved.reserve(cloud.size());
    for (const auto& p : cloud) moved.push_back(r.apply(p) + t);
    out.positions.push_back(std::move(moved));
  }
  const std::size_t rows = f.values.dim(0), slots = f.values.dim(1), c = f.values.dim(2);
  std::vector<double> v(f.values.numel());
  const auto src = f.values.values();
  for (std::size_t row = 0; row < rows; ++row)
    for (std::size_t s = 0; s < slots; ++s)
      std::copy_n(src.data() + (row * slots + s) * c, c, v.data() + (row * slots + perm(g, s)) * c);
  out.values = ag::Tensor(f.values.shape(), std::move(v));
  return out;
}

// Anchor table that moves pooled features (B, A, C) by g.
std::vector<std::size_t> pull_back(const Discretization& d, std::size_t g) {
  std::vector<std::size_t> table(d.num_anchors());
  for (std::size_t a = 0; a < table.size(); ++a) table[a] = d.anchor_perm(d.group.inverse(g), a);
  return table;
}

std::string describe(std::initializer_list<std::pair<const char*, double>> items) {
  std::ostringstream o;
  bool first = true;
  for (const auto& [k, v] : items) {
    o << (first ? "" : ", ") << k << "=" << v;
    first = false;
  }
  return o.str();
}

}  // namespace

CheckResult check_group_axioms(Solid solid) {
  return timed("group_axioms", 1e-9, [&](CheckResult& r) {
    const auto d = make_discretization(solid);
    const auto& G = d->group;
    const std::size_t n = G.order();
    const std::size_t expected = solid == Solid::Icosa ? 60 : solid == Solid::Octa ? 24 : 12;
    double err = 0.0;
    std::size_t violations = n == expected ? 0 : 1;
    for (std::size_t i = 0; i < n; ++i) {
      err = std::max(err, G.element(i).orthogonality_error());
      err = std::max(err, std::abs(G.element(i).determinant() - 1.0));
      std::vector<bool> row(n, false), col(n, false);
      for (std::size_t j = 0; j < n; ++j) {
        err = std::max(err, G.element(G.compose(i, j)).max_abs_diff(G.element(i) * G.element(j)));
        row[G.compose(i, j)] = true;
        col[G.compose(j, i)] = true;
      }
      violations += static_cast<std::size_t>(std::count(row.begin(), row.end(), false) +
                                             std::count(col.begin(), col.end(), false));
      violations += G.compose(i, G.inverse(i)) != G.identity_index();
      violations += G.compose(G.identity_index(), i) != i || G.compose(i, G.identity_index()) != i;
    }
    err = std::max(err, G.element(G.identity_index()).max_abs_diff(Rotation3::identity()));
    auto assoc = [&](std::size_t a, std::size_t b, std::size_t c) {
      violations += G.compose(G.compose(a, b), c) != G.compose(a, G.compose(b, c));
    };
    std::size_t triples = 0;
    if (n <= 24) {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t c = 0; c < n; ++c) assoc(a, b, c);
      triples = n * n * n;
    } else {
      std::mt19937_64 rng(0);
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (triples = 0; triples < 100000; ++triples) assoc(pick(rng), pick(rng), pick(rng));
    }
    r.max_error = err;
    r.passed = violations == 0;
    r.detail = describe({{"order", double(n)}, {"triples", double(triples)}, {"violations", double(violations)}});
  });
}

CheckResult check_quotient_counts(Solid solid) {
  return timed("quotient_counts", 0.0, [&](CheckResult& r) {
    const auto d = make_discretization(solid);
    const auto& q = d->quotient;
    const std::size_t a = q.num_anchors(), h = q.stabilizer.size();
    std::vector<std::size_t> sizes(a, 0);
    for (std::size_t c : q.coset_of) ++sizes[c];
    std::size_t violations = a * h != d->group_order();
    for (std::size_t s : sizes) violations += s != h;
    for (std::size_t i = 0; i < a; ++i) violations += q.coset_of[q.section[i]] != i;
    r.max_error = static_cast<double>(violations);
    r.passed = true;
    r.detail = describe({{"order", double(d->group_order())}, {"cosets", double(a)}, {"coset_size", double(h)}});
  });
}

CheckResult check_faithfulness(Solid solid) {
  return timed("faithfulness", 0.0, [&](CheckResult& r) {
    const auto d = make_discretization(solid);
    const auto& P = d->anchor_perm;
    const std::size_t n = d->group_order(), a = d->num_anchors();
    std::set<std::vector<std::size_t>> distinct;
    std::size_t violations = 0;
    for (std::size_t g = 0; g < n; ++g) {
      const auto row = P.row(g);
      distinct.emplace(row.begin(), row.end());
      std::vector<bool> hit(a, false);
      for (auto x : row) hit[x] = true;
      violations += static_cast<std::size_t>(std::count(hit.begin(), hit.end(), false));
      for (std::size_t h = 0; h < n; ++h)
        for (std::size_t i = 0; i < a; ++i) violations += P(d->group.compose(g, h), i) != P(g, P(h, i));
    }
    violations += n - distinct.size();
    r.max_error = static_cast<double>(violations);
    r.passed = true;
    r.detail = describe({{"distinct_permutations", double(distinct.size())}, {"order", double(n)}});
  });
}

CheckResult check_kernel_closure(Solid solid, double kernel_radius, const std::vector<Vec3>& extra_points) {
  return timed("kernel_closure", 1e-9, [&](CheckResult& r) {
    const auto d = make_discretization(solid);
    const auto kp = build_kernel_points(d->quotient, kernel_radius, extra_points);
    r.max_error = kernel_closure_error(kp, d->group);
    r.passed = true;
    r.detail = describe({{"kernel_points", double(kp.size())}, {"radius", kernel_radius}});
  });
}

CheckResult check_steerability(Solid solid, double kernel_radius, const std::vector<Vec3>& extra_points) {
  return timed("steerability", 0.0, [&](CheckResult& r) {
    const auto d = make_discretization(solid);
    const auto geom = ConvGeometry::quotient(d, kernel_radius, extra_points);
    const auto& orbits = geom->orbits;
    const std::size_t a = geom->num_slots, k = geom->num_kernel_points();

    // Brute force: the orbit of each pair as an explicit set.
    std::set<std::set<std::size_t>> brute, computed;
    for (std::size_t x = 0; x < a * k; ++x) {
      std::set<std::size_t> orbit;
      for (std::size_t h : d->quotient.stabilizer)
        orbit.insert(d->anchor_perm(h, x / k) * k + geom->kernel_perm(h, x % k));
      brute.insert(orbit);
    }
    for (const auto& m : orbits.members) computed.emplace(m.begin(), m.end());
    std::size_t violations = brute != computed;

    std::mt19937_64 rng(0);
    const auto kernel = OrbitKernel::random(orbits, 2, 3, rng);
    ag::Tape tape;
    const auto expanded = expand_kernel(tape, kernel);
    const auto full = expanded.values();
    const std::size_t block = 6;
    for (std::size_t h : d->quotient.stabilizer)
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t src = i * k + j, dst = d->anchor_perm(h, i) * k + geom->kernel_perm(h, j);
          violations += std::memcmp(full.data() + src * block, full.data() + dst * block, block * sizeof(double)) != 0;
        }
    std::size_t singletons = 0;
    for (const auto& m : orbits.members) singletons += m.size() == 1;
    r.max_error = static_cast<double>(violations);
    r.passed = true;
    r.detail = describe({{"orbits", double(orbits.num_orbits())},
                         {"singletons", double(singletons)},
                         {"brute_force_orbits", double(brute.size())}});
  });
}

CheckResult check_fast_vs_naive(Solid solid, const GatherCheckOptions& o) {
  return timed("fast_vs_naive_gather", 1e-10, [&](CheckResult& r) {
    std::mt19937_64 rng(o.seed);
    const auto d = make_discretization(solid);
    const double kr = o.radius_ratio * o.radius;
    auto layer = make_conv_layer(ConvGeometry::quotient(d, kr, o.extra_points), o.channels_in, o.channels_out,
                                 o.radius, kr, GatherMode::FastSymmetric, rng);
    const std::size_t k = layer.geometry->num_kernel_points(), a = layer.geometry->num_slots;
    double err = 0.0;
    std::size_t count_violations = 0;
    ConvStats fast_stats, naive_stats;
    for (std::size_t t = 0; t < o.trials; ++t) {
      const auto in = random_field(o.points, a, o.channels_in, rng);
      ag::Tape tape;
      layer.mode = GatherMode::FastSymmetric;
      const auto fast = conv_forward(tape, layer, in, &fast_stats);
      layer.mode = GatherMode::NaiveGather;
      const auto naive = conv_forward(tape, layer, in, &naive_stats);
      err = std::max(err, max_abs_diff(fast.values.values(), naive.values.values()));
      count_violations += fast_stats.gather_locations != fast_stats.centers * k;
      count_violations += naive_stats.gather_locations != naive_stats.centers * a * k;
    }
    r.max_error = err;
    r.passed = count_violations == 0;
    r.detail = describe({{"trials", double(o.trials)},
                         {"fast_locations_per_center", fast_stats.locations_per_center()},
                         {"naive_locations_per_center", naive_stats.locations_per_center()}});
  });
}

CheckResult check_group_vs_quotient(Solid solid, std::size_t trials, std::uint64_t seed) {
  return timed("group_vs_quotient_conv", 1e-9, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    const auto d = make_discretization(solid);
    const std::size_t a = d->num_anchors(), n = d->group_order(), h = d->quotient.stabilizer.size();
    const double radius = 0.4, kr = 0.25;
    const std::size_t c1 = 2, c2 = 3, points = 40;
    const auto qgeom = ConvGeometry::quotient(d, kr), ggeom = ConvGeometry::group(d, kr);
    const std::size_t k = qgeom->num_kernel_points();
    const auto& coset = d->quotient.coset_of;
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      auto q = make_conv_layer(qgeom, c1, c2, radius, kr, GatherMode::FastSymmetric, rng);
      auto g = make_conv_layer(ggeom, c1, c2, radius, kr, GatherMode::FastSymmetric, rng);
      {
        ag::Tape tape;
        const auto expanded = expand_kernel(tape, q.kernel);
        const auto kq = expanded.values();
        auto wg = g.kernel.free_weights.mutable_values();
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t j = 0; j < k; ++j)
            std::copy_n(kq.data() + (coset[x] * k + j) * c1 * c2, c1 * c2, wg.data() + (x * k + j) * c1 * c2);
      }
      const auto qin = random_field(points, a, c1, rng);
      FieldBatch gin;
      gin.positions = qin.positions;
      std::vector<double> gv(points * n * c1);
      for (std::size_t p = 0; p < points; ++p)
        for (std::size_t x = 0; x < n; ++x)
          std::copy_n(qin.values.values().data() + (p * a + coset[x]) * c1, c1, gv.data() + (p * n + x) * c1);
      gin.values = ag::Tensor({points, n, c1}, gv);
      ag::Tape tape;
      const auto qout = conv_forward(tape, q, qin), gout = conv_forward(tape, g, gin);
      const auto qo = qout.values.values(), go = gout.values.values();
      double diff = 0.0, scale = 0.0;
      for (std::size_t p = 0; p < points; ++p)
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t c = 0; c < c2; ++c) {
            const double expect = static_cast<double>(h) * qo[(p * a + coset[x]) * c2 + c];
            diff = std::max(diff, std::abs(go[(p * n + x) * c2 + c] - expect));
            scale = std::max(scale, std::abs(expect));
          }
      worst = std::max(worst, scale > 0.0 ? diff / scale : diff);
    }
    r.max_error = worst;
    r.passed = true;
    r.detail = describe({{"trials", double(trials)}, {"factor", double(h)}});
  });
}

CheckResult check_equivariance(const BackboneSpec& spec, std::size_t trials, std::uint64_t seed) {
  return timed("end_to_end_equivariance", 1e-9, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    Backbone backbone(spec, 1, rng);
    const auto& d = *backbone.discretization();
    std::uniform_int_distribution<std::size_t> pick(0, d.group_order() - 1);
    std::uniform_real_distribution<double> shift(-2.0, 2.0);
    double err = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto in = random_field(64, d.num_anchors(), 1, rng);
      const std::size_t g = pick(rng);
      const RigidMotion motion{d.group.element(g), {shift(rng), shift(rng), shift(rng)}};
      ag::Tape tape;
      const auto base = backbone.forward(tape, in, true);
      const auto moved_in = transform_field(in, d.anchor_perm, motion.rotation, g, motion.translation);
      const auto moved_out = backbone.forward(tape, moved_in, true, {motion});
      const auto expected = transform_field(base, d.anchor_perm, motion.rotation, g, motion.translation);
      err = std::max(err, max_abs_diff(moved_out.values.values(), expected.values.values()));
      if (moved_out.positions[0].size() != expected.positions[0].size()) throw ShapeMismatch("point counts differ");
      for (std::size_t i = 0; i < expected.positions[0].size(); ++i)
        err = std::max(err, distance(moved_out.positions[0][i], expected.positions[0][i]));
    }
    r.max_error = err;
    r.passed = true;
    r.detail = describe({{"trials", double(trials)}, {"blocks", double(spec.blocks.size())}});
  });
}

CheckResult check_invariance(Solid solid, std::size_t trials, std::uint64_t seed) {
  return timed("head_invariance", 1e-9, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    const auto d = make_discretization(solid);
    const std::size_t a = d->num_anchors(), c = 8, classes = 4;
    double err = 0.0;
    std::size_t argmax_changes = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto x = randn({3, a, c}, rng);
      const auto w = randn({c}, rng);
      auto head = ClassHead::create(classes, a, c, rng);
      ag::Tape tape;
      const auto pooled = ga_pool(tape, x, w);
      const auto scores = class_head(tape, head, x, *d);
      const auto labels = argmax_rows(scores.logits);
      for (std::size_t g = 0; g < d->group_order(); ++g) {
        const auto moved = ag::index_permute_gather(tape, x, 1, pull_back(*d, g));
        err = std::max(err, max_abs_diff(ga_pool(tape, moved, w).values(), pooled.values()));
        const auto s = class_head(tape, head, moved, *d);
        err = std::max(err, max_abs_diff(s.logits.values(), scores.logits.values()));
        argmax_changes += argmax_rows(s.logits) != labels;
      }
    }
    r.max_error = err;
    r.passed = argmax_changes == 0;
    r.detail = describe({{"trials", double(trials)}, {"argmax_changes", double(argmax_changes)}});
  });
}

CheckResult check_layer_gradients(std::uint64_t seed) {
  return timed("layer_gradients", 1e-5, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    const auto d = make_discretization(Solid::Icosa);
    const ag::GradCheckOptions opts{.step = 1e-5, .tolerance = 1e-5, .max_coords = 60, .seed = seed};
    double worst = 0.0;
    std::size_t coords = 0;
    std::string worst_name;
    auto run = [&](const char* name, const std::function<ag::Tensor(ag::Tape&)>& fn, std::vector<ag::Tensor> params) {
      const auto rep = ag::grad_check(fn, std::move(params), opts);
      coords += rep.coords_checked;
      if (rep.max_rel_error >= worst) {
        worst = rep.max_rel_error;
        worst_name = name;
      }
    };
    // Weighted sum against a fixed random probe.
    auto probe_sum = [&](ag::Tape& t, const ag::Tensor& y, const ag::Tensor& probe) {
      return ag::contract(t, ag::reshape(t, y, {y.numel()}), ag::reshape(t, probe, {probe.numel()}), "i,i->");
    };

    for (auto mode : {GatherMode::FastSymmetric, GatherMode::NaiveGather}) {
      auto layer = make_conv_layer(ConvGeometry::quotient(d, 0.25), 2, 3, 0.4, 0.25, mode, rng);
      const auto in = random_field(20, 12, 2, rng, true);
      const auto probe = randn({20, 12, 3}, rng);
      run(mode == GatherMode::FastSymmetric ? "conv_fast" : "conv_naive",
          [&](ag::Tape& t) { return probe_sum(t, conv_forward(t, layer, in).values, probe); },
          {in.values, layer.kernel.free_weights});
    }
    {
      auto layer = make_conv_layer(ConvGeometry::group(d, 0.25), 1, 2, 0.4, 0.25, GatherMode::FastSymmetric, rng);
      const auto in = random_field(10, 60, 1, rng, true);
      const auto probe = randn({10, 60, 2}, rng);
      run("group_conv", [&](ag::Tape& t) { return probe_sum(t, conv_forward(t, layer, in).values, probe); },
          {in.values, layer.kernel.free_weights});
    }
    for (bool training : {true, false}) {
      auto bn = BatchNorm::create(3);
      bn.gamma = randn({3}, rng, true);
      bn.beta = randn({3}, rng, true);
      std::uniform_real_distribution<double> u(0.5, 2.0);
      for (double& v : bn.running_var.mutable_values()) v = u(rng);
      for (double& v : bn.running_mean.mutable_values()) v = u(rng) - 1.0;
      const auto x = randn({6, 12, 3}, rng, true);
      const auto probe = randn({6, 12, 3}, rng);
      run(training ? "batch_norm_train" : "batch_norm_eval",
          [&, training](ag::Tape& t) { return probe_sum(t, batch_norm(t, bn, x, training), probe); },
          {x, bn.gamma, bn.beta});
    }
    for (auto op : {ag::Pointwise::relu(), ag::Pointwise::leaky_relu(0.1)}) {
      const auto x = randn({5, 12, 2}, rng, true);
      const auto probe = randn({5, 12, 2}, rng);
      run(op.kind == ag::Pointwise::Kind::ReLU ? "relu" : "leaky_relu",
          [&, op](ag::Tape& t) { return probe_sum(t, ag::pointwise(t, x, op), probe); }, {x});
    }
    {
      auto f = random_field(30, 12, 2, rng, true);
      ag::Tape t0;
      const auto shape = spatial_pool(t0, f, 0.4).values.shape();
      const auto probe = randn(shape, rng);
      run("spatial_pool", [&](ag::Tape& t) { return probe_sum(t, spatial_pool(t, f, 0.4).values, probe); }, {f.values});
      const auto gprobe = randn({1, 12, 2}, rng);
      for (auto kind : {ag::Reduce::Mean, ag::Reduce::Max})
        run(kind == ag::Reduce::Mean ? "global_mean_pool" : "global_max_pool",
            [&, kind](ag::Tape& t) { return probe_sum(t, global_pool(t, f, kind), gprobe); }, {f.values});
    }
    {
      const auto x = randn({3, 12, 4}, rng, true);
      const auto w = randn({4}, rng, true);
      const auto probe = randn({3, 4}, rng);
      run("ga_pool", [&](ag::Tape& t) { return probe_sum(t, ga_pool(t, x, w), probe); }, {x, w});
      const auto eprobe = randn({3, 60, 48}, rng);
      run("permutation_expand", [&](ag::Tape& t) { return probe_sum(t, permutation_expand(t, x, *d), eprobe); }, {x});
    }
    {
      const auto f1 = randn({2, 12, 4}, rng, true), f2 = randn({2, 12, 4}, rng, true);
      auto head = RotationHead::create(4, 6, rng);
      head.b1 = randn({6}, rng, true);
      const auto probe = randn({2, 60}, rng);
      auto params = head.parameters();
      params.push_back(f1);
      params.push_back(f2);
      run("rotation_head", [&](ag::Tape& t) { return probe_sum(t, rotation_head(t, head, f1, f2, *d).logits, probe); },
          params);
      auto cls = ClassHead::create(3, 12, 4, rng);
      const auto cprobe = randn({2, 3}, rng);
      run("class_head", [&](ag::Tape& t) { return probe_sum(t, class_head(t, cls, f1, *d).logits, cprobe); },
          {f1, cls.reference});
    }
    r.max_error = worst;
    r.passed = coords >= 200;
    r.detail = "coords=" + std::to_string(coords) + ", worst=" + worst_name;
  });
}

CheckResult check_loss_gradients(std::uint64_t seed) {
  return timed("loss_gradients", 1e-5, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    const ag::GradCheckOptions opts{.step = 1e-5, .tolerance = 1e-5, .max_coords = 200, .seed = seed};
    const auto logits = randn({6, 5}, rng, true);
    const std::vector<std::size_t> labels{0, 4, 2, 2, 1, 3};
    const auto ce = ag::grad_check([&](ag::Tape& t) { return cross_entropy(t, logits, labels); }, {logits}, opts);
    const auto x = randn({4, 60}, rng, true);
    std::vector<double> targets(x.numel(), 0.0);
    for (std::size_t b = 0; b < 4; ++b) targets[b * 60 + (b * 17) % 60] = 1.0;
    double bce_worst = 0.0;
    std::size_t coords = ce.coords_checked;
    for (double w : {1.0, 59.0}) {
      const auto rep =
          ag::grad_check([&](ag::Tape& t) { return binary_cross_entropy(t, x, targets, w); }, {x}, opts);
      bce_worst = std::max(bce_worst, rep.max_rel_error);
      coords += rep.coords_checked;
    }
    r.max_error = std::max(ce.max_rel_error, bce_worst);
    r.passed = true;
    r.detail = describe({{"cross_entropy", ce.max_rel_error}, {"bce", bce_worst}, {"coords", double(coords)}});
  });
}

CheckResult check_norm_relu_commutation(Solid solid, std::size_t trials, std::uint64_t seed) {
  return timed("norm_relu_commutation", 1e-12, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    const auto d = make_discretization(solid);
    std::uniform_int_distribution<std::size_t> pick(0, d->group_order() - 1);
    double err = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto f = random_field(15, d->num_anchors(), 4, rng);
      const std::size_t g = pick(rng);
      const Rotation3& rot = d->group.element(g);
      const auto moved = transform_field(f, d->anchor_perm, rot, g, {0, 0, 0});
      auto bn1 = BatchNorm::create(4), bn2 = BatchNorm::create(4);
      ag::Tape tape;
      for (int stage = 0; stage < 3; ++stage) {
        auto apply = [&](const ag::Tensor& x, BatchNorm& bn) {
          if (stage == 0) return batch_norm(tape, bn, x, true);
          return ag::pointwise(tape, x, stage == 1 ? ag::Pointwise::relu() : ag::Pointwise::leaky_relu(0.2));
        };
        FieldBatch y{f.positions, apply(f.values, bn1)};
        const auto expected = transform_field(y, d->anchor_perm, rot, g, {0, 0, 0});
        err = std::max(err, max_abs_diff(apply(moved.values, bn2).values(), expected.values.values()));
      }
    }
    r.max_error = err;
    r.passed = true;
    r.detail = describe({{"trials", double(trials)}});
  });
}

std::vector<CheckResult> run_checks(const ExperimentConfig& config) {
  const auto& m = config.model;
  double first_radius = 0.4;
  for (const auto& b : m.blocks)
    if (b.kind == BlockSpec::Kind::Conv) {
      first_radius = b.radius;
      break;
    }
  const double kr = m.radius_ratio * first_radius;
  const std::size_t trials = config.check.trials;
  GatherCheckOptions gather;
  gather.trials = 2 * trials;
  gather.radius = first_radius;
  gather.radius_ratio = m.radius_ratio;
  gather.extra_points = m.extra_kernel_points;
  gather.seed = config.seed;
  return {
      check_group_axioms(m.solid),
      check_quotient_counts(m.solid),
      check_faithfulness(m.solid),
      check_kernel_closure(m.solid, kr, m.extra_kernel_points),
      check_steerability(m.solid, kr, m.extra_kernel_points),
      check_fast_vs_naive(m.solid, gather),
      check_group_vs_quotient(m.solid, trials, config.seed),
      check_equivariance(m, trials, config.seed),
      check_invariance(m.solid, trials, config.seed),
      check_layer_gradients(config.seed),
      check_loss_gradients(config.seed),
      check_norm_relu_commutation(m.solid, trials, config.seed),
  };
}

}  // namespace e2pn
