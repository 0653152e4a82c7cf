#include "e2pn/kernel.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "e2pn/error.hpp"

namespace e2pn {

KernelPoints build_kernel_points(const QuotientS2& quotient, double r, const std::vector<Vec3>& extra_points) {
  if (!(r > 0.0)) throw ConfigError("kernel radius must be positive");
  KernelPoints kp;
  kp.radius = r;
  for (const auto& a : quotient.anchors) kp.points.push_back(r * a);
  kp.points.push_back({0.0, 0.0, 0.0});
  for (const auto& e : extra_points) kp.points.push_back(r * e);
  return kp;
}

double kernel_closure_error(const KernelPoints& kp, const FiniteRotationGroup& group) {
  double worst = 0.0;
  for (const auto& g : group.elements()) {
    for (const auto& p : kp.points) {
      const Vec3 q = g.apply(p);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& other : kp.points) best = std::min(best, distance(q, other));
      worst = std::max(worst, best);
    }
  }
  return worst;
}

KernelPermutationRep build_kernel_perm(const KernelPoints& kp, const FiniteRotationGroup& group) {
  const double tol = 1e-6 * kp.radius;
  const std::size_t n = group.order(), k_count = kp.size();
  std::vector<std::size_t> table(n * k_count);
  for (std::size_t g = 0; g < n; ++g) {
    for (std::size_t k = 0; k < k_count; ++k) {
      const Vec3 q = group.element(g).apply(kp.points[k]);
      std::size_t hit = k_count, hits = 0;
      for (std::size_t j = 0; j < k_count; ++j)
        if (distance(q, kp.points[j]) < tol) {
          hit = j;
          ++hits;
        }
      if (hits != 1)
        throw NotClosed("kernel point " + std::to_string(k) + " rotated by element " + std::to_string(g) +
                        " matched " + std::to_string(hits) + " kernel points");
      table[g * k_count + k] = hit;
    }
  }
  return KernelPermutationRep(n, k_count, std::move(table));
}

OrbitPartition OrbitPartition::trivial(std::size_t num_slots, std::size_t num_kernel_points) {
  OrbitPartition p;
  p.num_slots = num_slots;
  p.num_kernel_points = num_kernel_points;
  p.orbit_of.resize(num_slots * num_kernel_points);
  std::iota(p.orbit_of.begin(), p.orbit_of.end(), std::size_t{0});
  for (std::size_t i = 0; i < p.orbit_of.size(); ++i) p.members.push_back({i});
  return p;
}

namespace {

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

}  // namespace

OrbitPartition compute_orbits(const std::vector<std::size_t>& stabilizer, const AnchorPermutationRep& anchor_perm,
                              const KernelPermutationRep& kernel_perm) {
  const std::size_t a_count = anchor_perm.num_points(), k_count = kernel_perm.num_points();
  const std::size_t pairs = a_count * k_count;
  std::vector<std::size_t> parent(pairs);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  for (std::size_t h : stabilizer) {
    for (std::size_t a = 0; a < a_count; ++a)
      for (std::size_t k = 0; k < k_count; ++k) {
        const std::size_t x = find_root(parent, a * k_count + k);
        const std::size_t y = find_root(parent, anchor_perm(h, a) * k_count + kernel_perm(h, k));
        if (x != y) parent[std::max(x, y)] = std::min(x, y);
      }
  }

  OrbitPartition p;
  p.num_slots = a_count;
  p.num_kernel_points = k_count;
  p.orbit_of.assign(pairs, pairs);
  std::vector<std::size_t> id_of_root(pairs, pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t root = find_root(parent, i);
    if (id_of_root[root] == pairs) {
      id_of_root[root] = p.members.size();
      p.members.emplace_back();
    }
    p.orbit_of[i] = id_of_root[root];
    p.members[p.orbit_of[i]].push_back(i);
  }
  return p;
}

OrbitKernel OrbitKernel::random(OrbitPartition orbits, std::size_t c_in, std::size_t c_out, std::mt19937_64& rng) {
  const double support = static_cast<double>(orbits.num_pairs());
  const double bound = std::sqrt(3.0 / (static_cast<double>(c_in) * support));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(orbits.num_orbits() * c_in * c_out);
  for (double& x : w) x = dist(rng);
  const std::size_t n = orbits.num_orbits();
  return OrbitKernel{std::move(orbits), ag::Tensor({n, c_in, c_out}, std::move(w), true), c_in, c_out};
}

OrbitKernel OrbitKernel::constant(OrbitPartition orbits, std::size_t c_in, std::size_t c_out, double value) {
  const std::size_t n = orbits.num_orbits();
  return OrbitKernel{std::move(orbits), ag::Tensor::full({n, c_in, c_out}, value, true), c_in, c_out};
}

ag::Tensor expand_kernel(ag::Tape& tape, const OrbitKernel& kernel) {
  const auto& o = kernel.orbits;
  ag::Tensor flat = ag::index_permute_gather(tape, kernel.free_weights, 0, o.orbit_of);
  return ag::reshape(tape, flat, {o.num_slots, o.num_kernel_points, kernel.channels_in, kernel.channels_out});
}

}  // namespace e2pn
