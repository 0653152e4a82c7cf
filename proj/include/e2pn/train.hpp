#pragma once

// Losses, optimizer, synthetic task pipelines and training loops.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "e2pn/autograd.hpp"
#include "e2pn/cloud.hpp"
#include "e2pn/network.hpp"

namespace e2pn {

/// Mean over rows of -log softmax(logits)[label]. logits: (B, N).
ag::Tensor cross_entropy(ag::Tape& tape, const ag::Tensor& logits, const std::vector<std::size_t>& labels);

/// Mean of -[w t log sigma(x) + (1 - t) log(1 - sigma(x))] in the stable
/// softplus form; w = pos_weight (1 gives the plain loss).
ag::Tensor binary_cross_entropy(ag::Tape& tape, const ag::Tensor& logits, const std::vector<double>& targets,
                                double pos_weight = 1.0);

/// Classical momentum: v <- mu v - lr g; p <- p + v.
class Sgd {
 public:
  Sgd(std::vector<ag::Tensor> params, double lr, double momentum);
  /// Applies the update and clears the gradients.
  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  std::vector<ag::Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

enum class TaskKind { RotPair, ShapeCls };
std::string to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::RotPair;
  std::vector<ShapeKind> shapes{ShapeKind::Cube, ShapeKind::Tetra, ShapeKind::Cylinder, ShapeKind::Torus};
  std::size_t train_samples = 64;
  std::size_t val_samples = 64;
  std::size_t points = 256;
  double noise = 0.01;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct OptimSpec {
  std::size_t epochs = 50;
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t decay_every = 20;
  double decay_factor = 0.5;
  /// Weight of the anchor-matching BCE term in shape classification.
  double bce_weight = 0.1;
  /// Weight of positive anchor-matching targets (1 in 60 rotations is positive).
  double pos_weight = 1.0;
  std::size_t head_hidden = 32;
  /// Stop once validation accuracy reaches this value (1.0 never stops early).
  double target_accuracy = 1.0;
};

/// lr * decay_factor^floor((epoch - 1) / decay_every), epochs counted from 1.
double scheduled_learning_rate(const OptimSpec& optim, std::size_t epoch);

enum class Split { Train, Val };

/// A shape and its image under an icosahedral rotation. The base cloud is
/// given a generic orientation and anisotropic scale so no nontrivial
/// element of the group maps it onto itself.
struct RotPairSample {
  PointCloud first;
  PointCloud second;
  std::size_t rotation = 0;
};
RotPairSample make_rotpair_sample(const TaskSpec& spec, const Discretization& disc, Split split, std::uint64_t index);

/// A shape in its class pose, rotated by a random group element.
struct ShapeSample {
  PointCloud cloud;
  std::size_t label = 0;
  std::size_t rotation = 0;
};
ShapeSample make_shape_sample(const TaskSpec& spec, const Discretization& disc, Split split, std::uint64_t index);

/// Applies R_g to every position.
PointCloud rotate_cloud(const PointCloud& cloud, const Rotation3& r);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  double initial_val_acc = 0.0;
  std::vector<EpochMetrics> epochs;
  double final_val_acc() const { return epochs.empty() ? initial_val_acc : epochs.back().val_acc; }
};

/// Called after every epoch; used for JSON-lines logging.
using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Exact-match accuracy over the 60 rotations on the validation pairs.
double evaluate_rotpair(RotPairModel& model, const TaskSpec& spec);
/// Class accuracy on validation clouds; `extra_rotation` applies one more
/// group element on top of each sample's own rotation.
double evaluate_shapecls(ShapeClsModel& model, const TaskSpec& spec, std::optional<std::size_t> extra_rotation = {});

/// Throws Diverged when the loss becomes non-finite.
TrainReport run_rotpair_training(RotPairModel& model, const TaskSpec& spec, const OptimSpec& optim,
                                 const EpochCallback& on_epoch = {});
TrainReport run_shapecls_training(ShapeClsModel& model, const TaskSpec& spec, const OptimSpec& optim,
                                  const EpochCallback& on_epoch = {});

/// splitmix64 mix of a seed and a stream tag.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace e2pn
