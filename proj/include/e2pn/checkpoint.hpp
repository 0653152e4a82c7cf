#pragma once

// Checkpoints: the named tensors of a model stored back to back as
// little-endian float64 in <stem>.bin, described by a JSON manifest in
// <stem>.json (name, shape, offset in values).

#include <filesystem>

#include "e2pn/network.hpp"

namespace e2pn {

void save_checkpoint(const std::filesystem::path& stem, const NamedTensors& state);

/// Copies stored values into `state` in place. Throws CheckpointMissing
/// when either file is absent, ShapeMismatch when names or shapes differ.
void load_checkpoint(const std::filesystem::path& stem, const NamedTensors& state);

}  // namespace e2pn
