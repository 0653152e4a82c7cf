#pragma once

// Experiment configuration: one flat key = value file with [section]
// headers, parsed strictly. Unknown sections and keys are errors.
//
//   seed = 7
//   out = runs/rotpair
//   [model]    solid, radius_ratio, extra_kernel_points, bn_eps, bn_momentum, head_hidden
//   [block.N]  type, channels, radius, sigma, cell, mode, alpha   (N = 0, 1, ...)
//   [task]     kind, shapes, train_samples, val_samples, points, noise, batch
//   [optim]    epochs, lr, momentum, decay_every, decay_factor, bce_weight, pos_weight, target_accuracy
//   [bench]    points, channels, trials, radius
//   [check]    trials
//
// Lists are comma separated; extra kernel points are "x y z" triples
// separated by commas, in units of the kernel radius.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "e2pn/network.hpp"
#include "e2pn/train.hpp"

namespace e2pn {

struct BenchSpec {
  std::size_t points = 1024;
  std::size_t channels = 32;
  std::size_t trials = 10;
  double radius = 0.4;
};

struct CheckSpec {
  std::size_t trials = 10;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "e2pn-out";
  BackboneSpec model;
  TaskSpec task;
  OptimSpec optim;
  BenchSpec bench;
  CheckSpec check;

  /// Defaults plus the two conv-bn-relu blocks (16 and 32 channels).
  static ExperimentConfig defaults();
};

/// Throws ConfigError with the line number on any malformed or unknown entry.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets "section.key" (or a top-level "key") as if it appeared in the file.
void apply_override(ExperimentConfig& config, std::string_view dotted_key, std::string_view value);

/// Full resolved configuration; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);

}  // namespace e2pn
