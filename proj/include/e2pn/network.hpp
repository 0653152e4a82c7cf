#pragma once

// Backbone built from a list of blocks, and the two task models.

#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "e2pn/heads.hpp"
#include "e2pn/layers.hpp"

namespace e2pn {

struct BlockSpec {
  enum class Kind { Conv, BatchNorm, ReLU, LeakyReLU, Pool };
  Kind kind = Kind::Conv;
  std::size_t channels = 0;
  double radius = 0.0;
  /// Influence distance; 0 selects the kernel radius.
  double sigma = 0.0;
  double cell = 0.0;
  GatherMode mode = GatherMode::FastSymmetric;
  double alpha = 0.1;
};

std::string to_string(BlockSpec::Kind kind);
/// "conv", "bn", "relu", "leaky_relu", "pool". Throws ConfigError.
BlockSpec::Kind parse_block_kind(std::string_view name);

struct BackboneSpec {
  Solid solid = Solid::Icosa;
  /// Kernel radius as a fraction of each conv block's neighbourhood radius.
  double radius_ratio = 0.66;
  /// Extra kernel points in units of the kernel radius.
  std::vector<Vec3> extra_kernel_points;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  std::vector<BlockSpec> blocks;
};

using NamedTensors = std::vector<std::pair<std::string, ag::Tensor>>;

class Backbone {
 public:
  Backbone(const BackboneSpec& spec, std::size_t channels_in, std::mt19937_64& rng);

  /// `frames` places the pooling grids per cloud (identity when empty).
  FieldBatch forward(ag::Tape& tape, const FieldBatch& lifted, bool training,
                     const std::vector<RigidMotion>& frames = {});
  FieldBatch forward(ag::Tape& tape, const std::vector<PointCloud>& clouds, bool training,
                     const std::vector<RigidMotion>& frames = {});

  std::size_t channels_out() const { return channels_out_; }
  const std::shared_ptr<const Discretization>& discretization() const { return disc_; }
  void set_gather_mode(GatherMode mode);

  /// Trainable tensors followed by batch-norm running statistics.
  NamedTensors named_state() const;
  std::vector<ag::Tensor> parameters() const;

 private:
  struct Conv {
    ConvLayer layer;
  };
  struct Norm {
    BatchNorm bn;
  };
  struct Act {
    ag::Pointwise op;
  };
  struct Pool {
    double cell;
  };
  using Block = std::variant<Conv, Norm, Act, Pool>;

  std::shared_ptr<const Discretization> disc_;
  std::vector<Block> blocks_;
  std::size_t channels_out_ = 0;
};

/// Backbone, global mean pooling and the rotation head on both clouds.
struct RotPairModel {
  Backbone backbone;
  RotationHead head;

  RotPairModel(const BackboneSpec& spec, std::size_t head_hidden, std::mt19937_64& rng);
  RotationScores forward(ag::Tape& tape, const std::vector<PointCloud>& first, const std::vector<PointCloud>& second,
                         bool training);
  NamedTensors named_state() const;
  std::vector<ag::Tensor> parameters() const;
};

/// Backbone, global mean pooling and the reference-matching class head.
struct ShapeClsModel {
  Backbone backbone;
  ClassHead head;

  ShapeClsModel(const BackboneSpec& spec, std::size_t classes, std::mt19937_64& rng);
  ClassScores forward(ag::Tape& tape, const std::vector<PointCloud>& clouds, bool training);
  NamedTensors named_state() const;
  std::vector<ag::Tensor> parameters() const;
};

}  // namespace e2pn
