#pragma once

// Executable property suite: group structure, kernel symmetry, gather
// equivalence, equivariance, invariance and gradient checks. Each check
// reports the worst error it saw against its tolerance; exceptions raised
// while building the objects under test count as failures.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "e2pn/config.hpp"

namespace e2pn {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

/// Closure, identity, inverses, Latin-square rows and associativity (all
/// triples for T and O, 1e5 sampled triples for I).
CheckResult check_group_axioms(Solid solid);
/// |G| = A |H|, cosets of equal size, section consistency.
CheckResult check_quotient_counts(Solid solid);
/// Anchor permutations pairwise distinct and multiplicative.
CheckResult check_faithfulness(Solid solid);
/// Rotated kernel point set matches itself within 1e-9.
CheckResult check_kernel_closure(Solid solid, double kernel_radius, const std::vector<Vec3>& extra_points);
/// Orbit partition equals a brute-force enumeration and the expanded
/// kernel is bit-identical along every orbit.
CheckResult check_steerability(Solid solid, double kernel_radius, const std::vector<Vec3>& extra_points);

struct GatherCheckOptions {
  std::size_t trials = 20;
  std::size_t points = 64;
  std::size_t channels_in = 4;
  std::size_t channels_out = 8;
  double radius = 0.4;
  double radius_ratio = 0.66;
  std::vector<Vec3> extra_points;
  std::uint64_t seed = 0;
};
/// FastSymmetric and NaiveGather agree within 1e-10 and gather at K and
/// A K locations per center.
CheckResult check_fast_vs_naive(Solid solid, const GatherCheckOptions& options);
/// Coset-constant features and kernel: group conv = |H| x quotient conv.
CheckResult check_group_vs_quotient(Solid solid, std::size_t trials, std::uint64_t seed);
/// Backbone on (R P + t) equals the permuted, moved output of P.
CheckResult check_equivariance(const BackboneSpec& spec, std::size_t trials, std::uint64_t seed);
/// ga_pool and class_head unchanged under every group element.
CheckResult check_invariance(Solid solid, std::size_t trials, std::uint64_t seed);
/// Finite differences (step 1e-5) for every layer and head.
CheckResult check_layer_gradients(std::uint64_t seed);
CheckResult check_loss_gradients(std::uint64_t seed);
/// Batch norm and pointwise nonlinearities commute with anchor permutation.
CheckResult check_norm_relu_commutation(Solid solid, std::size_t trials, std::uint64_t seed);

/// Every check above, parameterized by the configuration.
std::vector<CheckResult> run_checks(const ExperimentConfig& config);

}  // namespace e2pn
