#pragma once

// Forward-time comparison of the two gathering strategies on one input.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "e2pn/config.hpp"

namespace e2pn {

struct BenchReport {
  std::size_t points = 0;
  std::size_t channels = 0;
  std::size_t trials = 0;
  std::vector<double> fast_seconds;
  std::vector<double> naive_seconds;
  double fast_median = 0.0;
  double naive_median = 0.0;
  /// naive_median / fast_median.
  double speedup = 0.0;
  double fast_locations_per_center = 0.0;
  double naive_locations_per_center = 0.0;
  /// Elements of one (N, A, C) quotient field and one (N, |G|, C) group field.
  std::size_t quotient_field_elements = 0;
  std::size_t group_field_elements = 0;
  double field_ratio = 0.0;
  /// Largest disagreement between the two modes' outputs.
  double max_abs_diff = 0.0;
};

double median(std::vector<double> v);

/// Times conv_forward on a synthetic cloud in both modes, interleaved.
BenchReport run_gather_bench(Solid solid, double radius_ratio, const BenchSpec& spec, std::uint64_t seed);

}  // namespace e2pn
