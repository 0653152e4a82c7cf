#include "e2pn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "e2pn/error.hpp"
#include "e2pn/layers.hpp"
#include "e2pn/train.hpp"

namespace e2pn {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BenchReport run_gather_bench(Solid solid, double radius_ratio, const BenchSpec& spec, std::uint64_t seed) {
  if (spec.trials < 3) throw ConfigError("bench needs at least 3 trials");
  std::mt19937_64 rng(mix_seed(seed, 0xbe4c));
  const auto disc = make_discretization(solid);
  const double kr = radius_ratio * spec.radius;
  auto layer = make_conv_layer(ConvGeometry::quotient(disc, kr), spec.channels, spec.channels, spec.radius, kr,
                               GatherMode::FastSymmetric, rng);
  const std::size_t a = disc->num_anchors();

  const auto cloud = synth_shape(ShapeKind::Torus, spec.points, 0.01, rng());
  FieldBatch in;
  in.positions.push_back(cloud.positions);
  std::normal_distribution<double> n01;
  std::vector<double> v(spec.points * a * spec.channels);
  for (double& x : v) x = n01(rng);
  in.values = ag::Tensor({spec.points, a, spec.channels}, std::move(v));

  BenchReport r;
  r.points = spec.points;
  r.channels = spec.channels;
  r.trials = spec.trials;
  ConvStats fast_stats, naive_stats;
  ag::Tensor fast_out, naive_out;
  // Interleaved so drift in machine load hits both modes alike.
  for (std::size_t t = 0; t < spec.trials; ++t) {
    for (auto mode : {GatherMode::FastSymmetric, GatherMode::NaiveGather}) {
      layer.mode = mode;
      ag::Tape tape;
      const auto start = std::chrono::steady_clock::now();
      auto out = conv_forward(tape, layer, in, mode == GatherMode::FastSymmetric ? &fast_stats : &naive_stats);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      (mode == GatherMode::FastSymmetric ? r.fast_seconds : r.naive_seconds).push_back(s);
      (mode == GatherMode::FastSymmetric ? fast_out : naive_out) = out.values;
    }
  }
  r.fast_median = median(r.fast_seconds);
  r.naive_median = median(r.naive_seconds);
  r.speedup = r.fast_median > 0.0 ? r.naive_median / r.fast_median : 0.0;
  r.fast_locations_per_center = fast_stats.locations_per_center();
  r.naive_locations_per_center = naive_stats.locations_per_center();
  r.quotient_field_elements = spec.points * a * spec.channels;
  r.group_field_elements = spec.points * disc->group_order() * spec.channels;
  r.field_ratio = static_cast<double>(r.quotient_field_elements) / static_cast<double>(r.group_field_elements);
  const auto f = fast_out.values(), g = naive_out.values();
  for (std::size_t i = 0; i < f.size(); ++i) r.max_abs_diff = std::max(r.max_abs_diff, std::abs(f[i] - g[i]));
  return r;
}

}  // namespace e2pn
