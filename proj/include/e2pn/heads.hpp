#pragma once

// Prediction heads on pooled anchor features (B, A, C).

#include <cstddef>
#include <random>
#include <vector>

#include "e2pn/autograd.hpp"
#include "e2pn/rotgroup.hpp"

namespace e2pn {

/// Matches anchor a of the first cloud against anchor perm[g][a] of the
/// second with a two-layer MLP on the stacked pair; summing over anchors
/// scores each candidate rotation g.
struct RotationHead {
  ag::Tensor w1a;  // (C, H), first-cloud half of the first layer
  ag::Tensor w1b;  // (C, H), second-cloud half
  ag::Tensor b1;   // (H)
  ag::Tensor w2;   // (H)
  ag::Tensor b2;   // (1)

  static RotationHead create(std::size_t channels, std::size_t hidden, std::mt19937_64& rng);
  std::vector<ag::Tensor> parameters() const { return {w1a, w1b, b1, w2, b2}; }
};

struct RotationScores {
  ag::Tensor pair_scores;  // (B, |G|, A) match logits
  ag::Tensor logits;       // (B, |G|)
};

RotationScores rotation_head(ag::Tape& tape, const RotationHead& head, const ag::Tensor& f1, const ag::Tensor& f2,
                             const Discretization& disc);

/// Learnable per-class reference fields.
struct ClassHead {
  ag::Tensor reference;  // (N_cls, A, C)

  static ClassHead create(std::size_t classes, std::size_t anchors, std::size_t channels, std::mt19937_64& rng);
  std::vector<ag::Tensor> parameters() const { return {reference}; }
};

struct ClassScores {
  ag::Tensor rotation_scores;  // (B, N_cls, |G|)
  ag::Tensor logits;           // (B, N_cls), max over rotations
  /// best_rotation[b * N_cls + n] = first argmax over g.
  std::vector<std::size_t> best_rotation;
};

/// score(n, g) = sum_a <f[perm[g][a]], reference[n][a]>.
ClassScores class_head(ag::Tape& tape, const ClassHead& head, const ag::Tensor& f, const Discretization& disc);

/// Lowest index among the maxima of each row of a (rows, cols) buffer.
std::vector<std::size_t> argmax_rows(const ag::Tensor& t);

}  // namespace e2pn
