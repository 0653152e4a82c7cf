// Acceptance suite: one PASS/FAIL line per criterion. The combinatorial
// criteria recompute their facts from raw rotation matrices rather than the
// library's tables; the numerical ones drive the property checks and the
// training runs at their stated sizes and time limits.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <random>
#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "e2pn/bench.hpp"
#include "e2pn/checks.hpp"
#include "e2pn/config.hpp"
#include "e2pn/error.hpp"
#include "e2pn/layers.hpp"
#include "e2pn/train.hpp"

using namespace e2pn;

namespace {

struct Outcome {
  bool passed = false;
  std::string summary;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string describe(const CheckResult& r) {
  return fmt("%s %s max_error=%.3g (%s)", r.name.c_str(), r.passed ? "ok" : "FAILED", r.max_error, r.detail.c_str());
}

// Index of the point nearest to v by brute force, with its distance.
std::pair<std::size_t, double> nearest(const std::vector<Vec3>& pts, const Vec3& v) {
  std::size_t best = 0;
  double d = 1e300;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (distance(pts[i], v) < d) {
      d = distance(pts[i], v);
      best = i;
    }
  return {best, d};
}

BackboneSpec two_block_backbone() {
  // conv, bn, relu, conv, then grid pooling on the moved frame.
  auto spec = ExperimentConfig::defaults().model;
  spec.blocks.resize(5);
  spec.blocks[4] = BlockSpec{};
  spec.blocks[4].kind = BlockSpec::Kind::Pool;
  spec.blocks[4].cell = 0.3;
  return spec;
}

Outcome group_structure() {
  Outcome o{true, ""};
  for (Solid s : {Solid::Tetra, Solid::Octa, Solid::Icosa}) {
    const auto r = check_group_axioms(s);
    o.passed = o.passed && r.passed;
    o.summary += to_string(s) + ":" + std::to_string(make_discretization(s)->group_order()) + " ";
  }
  const std::map<Solid, std::size_t> expected{{Solid::Tetra, 12}, {Solid::Octa, 24}, {Solid::Icosa, 60}};
  for (const auto& [s, n] : expected) o.passed = o.passed && make_discretization(s)->group_order() == n;
  const auto d = make_discretization(Solid::Icosa);
  std::map<std::size_t, std::size_t> coset_sizes;
  for (std::size_t c : d->quotient.coset_of) ++coset_sizes[c];
  bool twelve_of_five = coset_sizes.size() == 12;
  for (const auto& [c, n] : coset_sizes) twelve_of_five = twelve_of_five && n == 5;
  o.passed = o.passed && twelve_of_five && check_quotient_counts(Solid::Icosa).passed;
  o.summary += fmt("| icosa quotient: %zu cosets, sizes all 5: %s", coset_sizes.size(), twelve_of_five ? "yes" : "no");
  return o;
}

Outcome faithfulness() {
  const auto d = make_discretization(Solid::Icosa);
  const auto& anchors = d->quotient.anchors;
  const std::size_t n = d->group_order(), a = anchors.size();
  // Permutations recomputed from the matrices.
  std::vector<std::vector<std::size_t>> perm(n, std::vector<std::size_t>(a));
  std::size_t table_mismatches = 0;
  for (std::size_t g = 0; g < n; ++g)
    for (std::size_t i = 0; i < a; ++i) {
      const auto [j, dist] = nearest(anchors, d->group.element(g).apply(anchors[i]));
      perm[g][i] = dist < 1e-9 ? j : a;
      table_mismatches += perm[g][i] != d->anchor_perm(g, i);
    }
  const std::set<std::vector<std::size_t>> distinct(perm.begin(), perm.end());
  std::size_t hom_failures = 0;
  for (std::size_t g = 0; g < n; ++g)
    for (std::size_t h = 0; h < n; ++h) {
      const Rotation3 prod = d->group.element(g) * d->group.element(h);
      std::size_t k = n;
      for (std::size_t x = 0; x < n; ++x)
        if (d->group.element(x).max_abs_diff(prod) < 1e-9) k = x;
      for (std::size_t i = 0; i < a; ++i) hom_failures += k == n || perm[k][i] != perm[g][perm[h][i]];
    }
  const bool ok = distinct.size() == n && hom_failures == 0 && table_mismatches == 0 && check_faithfulness(Solid::Icosa).passed;
  return {ok, fmt("%zu distinct permutations of %zu anchors, homomorphism failures %zu, table mismatches %zu",
                  distinct.size(), a, hom_failures, table_mismatches)};
}

Outcome kernel_closure() {
  const auto d = make_discretization(Solid::Icosa);
  const auto kp = build_kernel_points(d->quotient, 0.4);
  double worst = 0.0;
  for (std::size_t g = 0; g < d->group_order(); ++g)
    for (const auto& p : kp.points) worst = std::max(worst, nearest(kp.points, d->group.element(g).apply(p)).second);
  return {kp.size() == 13 && worst <= 1e-9, fmt("13-point kernel, 60 elements, worst mismatch %.3g", worst)};
}

Outcome steerability() {
  const auto d = make_discretization(Solid::Icosa);
  const double r = 0.4;
  const auto geom = ConvGeometry::quotient(d, r);
  const auto& kp = geom->kernel_points.points;
  const auto& anchors = d->quotient.anchors;
  const std::size_t a = anchors.size(), k = kp.size();
  // Stabilizer of +z from the matrices, orbits by explicit enumeration.
  std::vector<std::size_t> stab;
  for (std::size_t g = 0; g < d->group_order(); ++g)
    if (distance(d->group.element(g).apply({0, 0, 1}), {0, 0, 1}) < 1e-9) stab.push_back(g);
  std::set<std::set<std::pair<std::size_t, std::size_t>>> brute;
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      std::set<std::pair<std::size_t, std::size_t>> orbit;
      for (std::size_t h : stab)
        orbit.emplace(nearest(anchors, d->group.element(h).apply(anchors[i])).first,
                      nearest(kp, d->group.element(h).apply(kp[j])).first);
      brute.insert(orbit);
    }
  std::size_t singles = 0, fives = 0;
  for (const auto& o : brute) {
    singles += o.size() == 1;
    fives += o.size() == 5;
  }
  std::set<std::set<std::pair<std::size_t, std::size_t>>> library;
  for (const auto& m : geom->orbits.members) {
    std::set<std::pair<std::size_t, std::size_t>> o;
    for (std::size_t x : m) o.emplace(x / k, x % k);
    library.insert(o);
  }
  // Bit-identical expansion along every orbit.
  std::mt19937_64 rng(1);
  const auto kernel = OrbitKernel::random(geom->orbits, 3, 2, rng);
  ag::Tape tape;
  const auto full_t = expand_kernel(tape, kernel);
  const auto full = full_t.values();
  std::size_t differing = 0;
  for (const auto& o : brute) {
    const auto first = *o.begin();
    for (const auto& [i, j] : o)
      differing += std::memcmp(full.data() + (i * k + j) * 6, full.data() + (first.first * k + first.second) * 6,
                               6 * sizeof(double)) != 0;
  }
  const bool ok = stab.size() == 5 && brute.size() == 36 && singles == 6 && fives == 30 && library == brute &&
                  differing == 0 && geom->orbits.num_orbits() == 36;
  return {ok, fmt("%zu orbits (%zu singletons, %zu of size 5), library partition %s brute force, %zu non-identical entries",
                  brute.size(), singles, fives, library == brute ? "equals" : "DIFFERS FROM", differing)};
}

Outcome gather_oracle() {
  GatherCheckOptions o;
  o.trials = 20;
  o.points = 64;
  o.channels_in = 4;
  o.channels_out = 8;
  o.seed = 11;
  const auto r = check_fast_vs_naive(Solid::Icosa, o);
  return {r.passed, describe(r)};
}

Outcome group_conv() {
  const auto r = check_group_vs_quotient(Solid::Icosa, 10, 12);
  return {r.passed, describe(r)};
}

Outcome equivariance() {
  const auto r = check_equivariance(two_block_backbone(), 10, 13);
  return {r.passed, describe(r)};
}

Outcome invariance() {
  const auto r = check_invariance(Solid::Icosa, 10, 14);
  return {r.passed, describe(r)};
}

Outcome gradients() {
  const auto layers = check_layer_gradients(15), losses = check_loss_gradients(15);
  return {layers.passed && losses.passed, describe(layers) + "; " + describe(losses)};
}

Outcome rotation_task(const std::filesystem::path& configs) {
  const auto c = load_config(configs / "rotpair.ini");
  if (c.task.kind != TaskKind::RotPair || c.optim.epochs > 50) return {false, "rotpair.ini is not a <=50-epoch rotpair run"};
  std::mt19937_64 rng(mix_seed(c.seed, 0x30de1));
  RotPairModel model(c.model, c.optim.head_hidden, rng);
  const auto report = run_rotpair_training(model, c.task, c.optim);
  const double acc = report.final_val_acc(), secs = report.epochs.empty() ? 0.0 : report.epochs.back().wall_seconds;
  const bool ok = acc >= 0.95 && secs <= 900.0 && report.initial_val_acc < 0.1;
  return {ok, fmt("val_acc %.4f after %zu epochs in %.0f s; untrained %.4f (chance %.4f)", acc, report.epochs.size(),
                  secs, report.initial_val_acc, 1.0 / 60.0)};
}

Outcome classification_task(const std::filesystem::path& configs) {
  const auto c = load_config(configs / "shapecls.ini");
  if (c.task.kind != TaskKind::ShapeCls || c.optim.epochs > 50 || c.task.shapes.size() != 4)
    return {false, "shapecls.ini is not a <=50-epoch 4-class run"};
  std::mt19937_64 rng(mix_seed(c.seed, 0x30de1));
  ShapeClsModel model(c.model, c.task.shapes.size(), rng);
  const auto report = run_shapecls_training(model, c.task, c.optim);
  const double acc = report.final_val_acc(), secs = report.epochs.empty() ? 0.0 : report.epochs.back().wall_seconds;
  const double plain = evaluate_shapecls(model, c.task);
  std::size_t differing = 0;
  for (std::size_t g = 0; g < model.backbone.discretization()->group_order(); ++g)
    differing += evaluate_shapecls(model, c.task, g) != plain;
  const bool ok = acc >= 0.95 && secs <= 900.0 && differing == 0 && plain == acc;
  return {ok, fmt("val_acc %.4f after %zu epochs in %.0f s; untrained %.4f; accuracy differs under %zu of 60 extra rotations",
                  acc, report.epochs.size(), secs, report.initial_val_acc, differing)};
}

Outcome benchmark() {
  BenchSpec spec;
  spec.points = 1024;
  spec.channels = 32;
  spec.trials = 10;
  const auto r = run_gather_bench(Solid::Icosa, 0.66, spec, 16);
  const bool exact_ratio = r.quotient_field_elements * 60 == r.group_field_elements * 12;
  const bool ok = r.fast_median < r.naive_median && exact_ratio && r.fast_locations_per_center == 13.0 &&
                  r.naive_locations_per_center == 156.0;
  return {ok, fmt("fast %.4f s vs naive %.4f s median (speedup %.2fx); field elements %zu / %zu = %.3f; locations %g vs %g",
                  r.fast_median, r.naive_median, r.speedup, r.quotient_field_elements, r.group_field_elements,
                  r.field_ratio, r.fast_locations_per_center, r.naive_locations_per_center)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string configs = "configs";
  std::vector<int> only;
  app.add_option("--configs", configs, "Directory holding rotpair.ini and shapecls.ini");
  app.add_option("--only", only, "Criteria to run (default: all)");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* title;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "group structure", 1.0, group_structure},
      {2, "faithfulness", 1.0, faithfulness},
      {3, "kernel closure", 1.0, kernel_closure},
      {4, "steerability", 1.0, steerability},
      {5, "gather oracle", 30.0, gather_oracle},
      {6, "group-conv consistency", 60.0, group_conv},
      {7, "end-to-end equivariance", 60.0, equivariance},
      {8, "invariance", 30.0, invariance},
      {9, "gradient checks", 120.0, gradients},
      {10, "toy rotation task", 900.0, [&] { return rotation_task(configs); }},
      {11, "toy classification task", 900.0, [&] { return classification_task(configs); }},
      {12, "benchmark direction", 300.0, benchmark},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool ok = o.passed && in_time;
    failures += !ok;
    std::printf("[%s] %2d %-24s %8.2fs / %4.0fs  %s%s\n", ok ? "PASS" : "FAIL", c.id, c.title, secs, c.limit_seconds,
                o.summary.c_str(), in_time ? "" : " (over time limit)");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
