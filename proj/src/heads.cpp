#include "e2pn/heads.hpp"

#include <cmath>

#include "e2pn/error.hpp"

namespace e2pn {

namespace {

ag::Tensor uniform(ag::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(ag::numel(shape));
  for (double& x : v) x = u(rng);
  return ag::Tensor(std::move(shape), std::move(v), true);
}

void require_field(const ag::Tensor& f, const Discretization& disc, const char* what) {
  if (f.rank() != 3 || f.dim(1) != disc.num_anchors())
    throw ShapeMismatch(std::string(what) + " expects (B, " + std::to_string(disc.num_anchors()) + ", C), got " +
                        ag::to_string(f.shape()));
}

}  // namespace

RotationHead RotationHead::create(std::size_t channels, std::size_t hidden, std::mt19937_64& rng) {
  RotationHead h;
  const double b1 = std::sqrt(3.0 / static_cast<double>(2 * channels));
  h.w1a = uniform({channels, hidden}, b1, rng);
  h.w1b = uniform({channels, hidden}, b1, rng);
  h.b1 = ag::Tensor::zeros({hidden}, true);
  h.w2 = uniform({hidden}, std::sqrt(3.0 / static_cast<double>(hidden)), rng);
  h.b2 = ag::Tensor::zeros({1}, true);
  return h;
}

RotationScores rotation_head(ag::Tape& tape, const RotationHead& head, const ag::Tensor& f1, const ag::Tensor& f2,
                             const Discretization& disc) {
  require_field(f1, disc, "rotation_head");
  require_field(f2, disc, "rotation_head");
  if (f1.shape() != f2.shape()) throw ShapeMismatch("rotation_head fields differ in shape");
  const std::size_t b = f1.dim(0), a = f1.dim(1), n = disc.group_order(), hidden = head.b1.numel();

  // First layer on [f1[a]; f2[perm[g][a]]] splits into two halves.
  auto u = ag::contract(tape, f1, head.w1a, "bac,ch->bah");
  u = ag::add(tape, u, ag::expand(tape, ag::expand(tape, head.b1, 0, a), 0, b));
  const auto v = ag::contract(tape, f2, head.w1b, "bac,ch->bah");
  auto vg = ag::reshape(tape, ag::index_permute_gather(tape, v, 1, disc.anchor_perm.table()), {b, n, a, hidden});
  auto hid = ag::pointwise(tape, ag::add(tape, ag::expand(tape, u, 1, n), vg), ag::Pointwise::relu());
  auto scores = ag::contract(tape, hid, head.w2, "bgah,h->bga");
  const auto bias = ag::expand(tape, ag::expand(tape, ag::expand(tape, ag::reshape(tape, head.b2, {}), 0, a), 0, n), 0, b);
  scores = ag::add(tape, scores, bias);
  return {scores, ag::reduce(tape, scores, {2}, ag::Reduce::Sum)};
}

ClassHead ClassHead::create(std::size_t classes, std::size_t anchors, std::size_t channels, std::mt19937_64& rng) {
  return {uniform({classes, anchors, channels}, std::sqrt(3.0 / static_cast<double>(anchors * channels)), rng)};
}

ClassScores class_head(ag::Tape& tape, const ClassHead& head, const ag::Tensor& f, const Discretization& disc) {
  require_field(f, disc, "class_head");
  const auto& ref = head.reference;
  if (ref.rank() != 3 || ref.dim(1) != f.dim(1) || ref.dim(2) != f.dim(2))
    throw ShapeMismatch("class_head reference " + ag::to_string(ref.shape()) + " vs field " + ag::to_string(f.shape()));
  const std::size_t b = f.dim(0), a = f.dim(1), c = f.dim(2), n = disc.group_order();

  const auto permuted = ag::reshape(tape, ag::index_permute_gather(tape, f, 1, disc.anchor_perm.table()), {b, n, a, c});
  ClassScores out;
  out.rotation_scores = ag::contract(tape, permuted, ref, "bgac,nac->bng");
  out.logits = ag::reduce(tape, out.rotation_scores, {2}, ag::Reduce::Max);
  out.best_rotation = argmax_rows(out.rotation_scores.detach());
  return out;
}

std::vector<std::size_t> argmax_rows(const ag::Tensor& t) {
  if (t.rank() == 0) throw ShapeMismatch("argmax of a scalar");
  const std::size_t cols = t.shape().back(), rows = t.numel() / cols;
  const auto v = t.values();
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 1; j < cols; ++j)
      if (v[r * cols + j] > v[r * cols + out[r]]) out[r] = j;
  return out;
}

}  // namespace e2pn
