#include <cmath>
#include <random>

#include "doctest.h"
#include "e2pn/autograd.hpp"
#include "e2pn/error.hpp"

using namespace e2pn;
using namespace e2pn::ag;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<double> v(numel(shape));
  for (double& x : v) x = n01(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Weighted sum with fixed coefficients, so every output entry matters.
Tensor probe(Tape& tape, const Tensor& t) {
  const Tensor w = randn(t.shape(), 999, false);
  Shape flat{t.numel()};
  return contract(tape, reshape(tape, t, flat), reshape(tape, w, flat), "i,i->");
}

}  // namespace

TEST_CASE("contract matches naive loops") {
  const auto a = randn({3, 4, 5}, 1), b = randn({4, 5, 6}, 2);
  Tape tape;
  const auto c = contract(tape, a, b, "ijk,jkl->il");
  REQUIRE(c.shape() == Shape{3, 6});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t l = 0; l < 6; ++l) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 5; ++k) s += a.values()[(i * 4 + j) * 5 + k] * b.values()[(j * 5 + k) * 6 + l];
      CHECK(c.values()[i * 6 + l] == doctest::Approx(s).epsilon(1e-12));
    }

  // Batch axis plus transposed output.
  const auto x = randn({2, 3, 4}, 3), y = randn({2, 4, 5}, 4);
  const auto z = contract(tape, x, y, "bij,bjk->kbi");
  REQUIRE(z.shape() == Shape{5, 2, 3});
  for (std::size_t bb = 0; bb < 2; ++bb)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 5; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += x.values()[(bb * 3 + i) * 4 + j] * y.values()[(bb * 4 + j) * 5 + k];
        CHECK(z.values()[(k * 2 + bb) * 3 + i] == doctest::Approx(s).epsilon(1e-12));
      }

  CHECK_THROWS_AS(contract(tape, a, b, "ijk,xkl->il"), ShapeMismatch);
  CHECK_THROWS_AS(contract(tape, a, b, "ij,jkl->il"), ShapeMismatch);
}

TEST_CASE("gradients of every op agree with finite differences") {
  const auto a = randn({3, 4}, 10), b = randn({4, 5}, 11), v = randn({3, 4}, 12);

  SUBCASE("contract") {
    auto r = grad_check([&](Tape& t) { return probe(t, contract(t, a, b, "ij,jk->ik")); }, {a, b});
    CHECK(r.passed());
    auto r2 = grad_check([&](Tape& t) { return probe(t, contract(t, a, v, "ij,ij->j")); }, {a, v});
    CHECK(r2.passed());
  }
  SUBCASE("index gather") {
    auto r = grad_check([&](Tape& t) { return probe(t, index_permute_gather(t, a, 1, {3, 3, 0, 1, 2})); }, {a});
    CHECK(r.passed());
  }
  SUBCASE("pointwise") {
    for (auto op : {Pointwise::relu(), Pointwise::leaky_relu(0.1), Pointwise::sigmoid()}) {
      auto r = grad_check([&](Tape& t) { return probe(t, pointwise(t, a, op)); }, {a});
      CHECK(r.passed());
    }
    const auto pos = Tensor({4}, {0.5, 1.0, 2.0, 3.0}, true);
    auto r = grad_check([&](Tape& t) { return probe(t, pointwise(t, pos, Pointwise::log())); }, {pos});
    CHECK(r.passed());
  }
  SUBCASE("reductions") {
    for (auto kind : {Reduce::Sum, Reduce::Mean, Reduce::Max}) {
      auto r = grad_check([&](Tape& t) { return probe(t, reduce(t, a, {1}, kind)); }, {a});
      CHECK(r.passed());
      auto r2 = grad_check([&](Tape& t) { return reduce(t, a, {0, 1}, kind); }, {a});
      CHECK(r2.passed());
    }
  }
  SUBCASE("softmax, add, scale, expand, reshape") {
    auto r = grad_check([&](Tape& t) { return probe(t, softmax(t, a, 1)); }, {a});
    CHECK(r.passed());
    r = grad_check([&](Tape& t) { return probe(t, add(t, a, v)); }, {a, v});
    CHECK(r.passed());
    r = grad_check([&](Tape& t) { return probe(t, scale(t, a, -2.5)); }, {a});
    CHECK(r.passed());
    r = grad_check([&](Tape& t) { return probe(t, expand(t, a, 1, 3)); }, {a});
    CHECK(r.passed());
    r = grad_check([&](Tape& t) { return probe(t, reshape(t, a, {2, 6})); }, {a});
    CHECK(r.passed());
  }
  SUBCASE("composite graph") {
    auto r = grad_check(
        [&](Tape& t) {
          auto h = pointwise(t, contract(t, a, b, "ij,jk->ik"), Pointwise::leaky_relu(0.2));
          auto s = softmax(t, h, 1);
          return reduce(t, pointwise(t, s, Pointwise::log()), {0, 1}, Reduce::Mean);
        },
        {a, b});
    CHECK(r.passed());
  }
}

TEST_CASE("forward values of elementwise ops") {
  Tape tape;
  const Tensor x({4}, {-2.0, -0.5, 0.0, 3.0});
  const auto relu = pointwise(tape, x, Pointwise::relu());
  CHECK(std::vector<double>(relu.values().begin(), relu.values().end()) == std::vector<double>{0, 0, 0, 3});
  const auto sm = softmax(tape, Tensor({2, 2}, {0.0, std::log(3.0), 1.0, 1.0}), 1);
  CHECK(sm.values()[0] == doctest::Approx(0.25));
  CHECK(sm.values()[1] == doctest::Approx(0.75));
  CHECK(sm.values()[2] == doctest::Approx(0.5));
  const auto mx = reduce(tape, x, {0}, Reduce::Max);
  CHECK(mx.item() == 3.0);
  CHECK_THROWS_AS(pointwise(tape, x, Pointwise::log()), DomainError);
  CHECK_THROWS_AS(index_permute_gather(tape, x, 0, {4}), IndexOutOfRange);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeMismatch);
}

TEST_CASE("tape records only when gradients are needed") {
  Tape tape;
  const auto a = randn({2, 2}, 20, false), b = randn({2, 2}, 21, false);
  auto c = add(tape, a, b);
  CHECK(tape.size() == 0);
  CHECK_FALSE(c.requires_grad());
  const auto w = randn({2, 2}, 22, true);
  auto d = add(tape, c, w);
  CHECK(tape.size() == 1);
  CHECK(d.requires_grad());
}

TEST_CASE("gradients accumulate across reuse") {
  const Tensor x({1}, {2.0}, true);
  Tape tape;
  auto y = contract(tape, x, x, "i,i->");  // x^2
  auto z = add(tape, y, contract(tape, x, Tensor({1}, {3.0}), "i,i->"));  // x^2 + 3x
  tape.backward(z);
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("grad_check detects a wrong backward rule") {
  const auto a = randn({5}, 30);
  auto broken = [&](Tape& t) {
    // Forward x^2 summed, backward claims 3x.
    std::vector<double> vals(a.values().begin(), a.values().end());
    double s = 0.0;
    for (double x : vals) s += x * x;
    Tensor out = Tensor::scalar(s);
    Tensor in = a;
    t.record({a}, out, [in, out]() mutable {
      auto g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * in.values()[i] * out.grad()[0];
    });
    return out;
  };
  const auto r = grad_check(broken, {a});
  CHECK_FALSE(r.passed());
  CHECK(r.max_rel_error > 0.1);
}
