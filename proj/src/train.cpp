#include "e2pn/train.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "e2pn/error.hpp"

namespace e2pn {

ag::Tensor cross_entropy(ag::Tape& tape, const ag::Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeMismatch("cross_entropy expects (B, N) logits and B labels, got " + ag::to_string(logits.shape()));
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  const auto x = logits.values();
  std::vector<double> prob(b * n);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= n) throw IndexOutOfRange("label " + std::to_string(labels[r]));
    const double* row = x.data() + r * n;
    const double m = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - m);
    for (std::size_t j = 0; j < n; ++j) prob[r * n + j] = std::exp(row[j] - m) / z;
    loss += m + std::log(z) - row[labels[r]];
  }
  ag::Tensor out = ag::Tensor::scalar(loss / static_cast<double>(b));
  ag::Tensor in = logits, res = out;
  tape.record({in}, out, [in, res, prob = std::move(prob), labels, b, n]() mutable {
    auto g = in.grad_buffer();
    const double s = res.grad()[0] / static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < n; ++j)
        g[r * n + j] += s * (prob[r * n + j] - (j == labels[r] ? 1.0 : 0.0));
  });
  return out;
}

ag::Tensor binary_cross_entropy(ag::Tape& tape, const ag::Tensor& logits, const std::vector<double>& targets,
                                double pos_weight) {
  if (logits.numel() != targets.size() || targets.empty())
    throw ShapeMismatch("binary_cross_entropy with " + std::to_string(targets.size()) + " targets for " +
                        ag::to_string(logits.shape()));
  const auto x = logits.values();
  double loss = 0.0;
  // Positive terms t log(sigma(x)) carry weight pos_weight.
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double softplus_neg = std::max(-x[i], 0.0) + std::log1p(std::exp(-std::abs(x[i])));  // -log sigma(x)
    loss += pos_weight * targets[i] * softplus_neg + (1.0 - targets[i]) * (softplus_neg + x[i]);
  }
  const double count = static_cast<double>(x.size());
  ag::Tensor out = ag::Tensor::scalar(loss / count);
  ag::Tensor in = logits, res = out;
  tape.record({in}, out, [in, res, targets, count, pos_weight]() mutable {
    auto g = in.grad_buffer();
    const auto xv = in.values();
    const double s = res.grad()[0] / count;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double sig = xv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[i])) : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
      g[i] += s * (pos_weight * targets[i] * (sig - 1.0) + (1.0 - targets[i]) * sig);
    }
  });
  return out;
}

Sgd::Sgd(std::vector<ag::Tensor> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto v = p.mutable_values();
    const auto g = p.grad();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < v.size(); ++j) {
      vel[j] = momentum_ * vel[j] - lr_ * g[j];
      v[j] += vel[j];
    }
  }
  zero_grad();
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::string to_string(TaskKind kind) { return kind == TaskKind::RotPair ? "rotpair" : "shapecls"; }

TaskKind parse_task_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "rotpair") return TaskKind::RotPair;
  if (lower == "shapecls") return TaskKind::ShapeCls;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::uint64_t sample_stream(Split split, std::uint64_t index) {
  return (split == Split::Train ? 0ULL : 1ULL << 62) + index;
}

// Uniform rotation from a normalized Gaussian quaternion.
Rotation3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  double q[4];
  double norm2 = 0.0;
  for (double& x : q) {
    x = n01(rng);
    norm2 += x * x;
  }
  const double s = 1.0 / std::sqrt(norm2);
  const double w = q[0] * s, x = q[1] * s, y = q[2] * s, z = q[3] * s;
  return Rotation3({1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
                    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)});
}

// Fixed generic pose per class so no group element is a symmetry of it.
Rotation3 class_pose(std::size_t label) {
  const double l = static_cast<double>(label);
  return Rotation3::axis_angle({1.0, 2.0, 3.0 + l}, 0.5 + 0.4 * l);
}

std::vector<double> rotation_targets(const std::vector<std::size_t>& rotations, std::size_t group_order,
                                     std::size_t per_rotation) {
  std::vector<double> t(rotations.size() * group_order * per_rotation, 0.0);
  for (std::size_t b = 0; b < rotations.size(); ++b)
    std::fill_n(t.begin() + static_cast<std::ptrdiff_t>((b * group_order + rotations[b]) * per_rotation),
                per_rotation, 1.0);
  return t;
}

void check_finite(double loss, std::size_t epoch) {
  if (!std::isfinite(loss)) throw Diverged("non-finite loss in epoch " + std::to_string(epoch));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

double scheduled_learning_rate(const OptimSpec& o, std::size_t epoch) {
  const std::size_t decays = o.decay_every ? (epoch - 1) / o.decay_every : 0;
  return o.lr * std::pow(o.decay_factor, static_cast<double>(decays));
}

PointCloud rotate_cloud(const PointCloud& cloud, const Rotation3& r) {
  PointCloud out = cloud;
  for (auto& p : out.positions) p = r.apply(p);
  return out;
}

RotPairSample make_rotpair_sample(const TaskSpec& spec, const Discretization& disc, Split split, std::uint64_t index) {
  std::mt19937_64 rng(mix_seed(spec.seed, sample_stream(split, index)));
  const auto kind = spec.shapes[rng() % spec.shapes.size()];
  auto base = synth_shape(kind, spec.points, spec.noise, rng());
  const Rotation3 pose = random_rotation(rng);
  for (auto& p : base.positions) p = pose.apply({p[0], 0.75 * p[1], 0.5 * p[2]});
  RotPairSample s;
  s.rotation = rng() % disc.group_order();
  s.second = rotate_cloud(base, disc.group.element(s.rotation));
  s.first = std::move(base);
  return s;
}

ShapeSample make_shape_sample(const TaskSpec& spec, const Discretization& disc, Split split, std::uint64_t index) {
  std::mt19937_64 rng(mix_seed(spec.seed, sample_stream(split, index)));
  ShapeSample s;
  s.label = rng() % spec.shapes.size();
  const auto base = synth_shape(spec.shapes[s.label], spec.points, spec.noise, rng());
  s.rotation = rng() % disc.group_order();
  s.cloud = rotate_cloud(base, disc.group.element(s.rotation) * class_pose(s.label));
  return s;
}

double evaluate_rotpair(RotPairModel& model, const TaskSpec& spec) {
  const auto& disc = *model.backbone.discretization();
  std::size_t correct = 0;
  for (std::size_t start = 0; start < spec.val_samples; start += spec.batch_size) {
    const std::size_t count = std::min(spec.batch_size, spec.val_samples - start);
    std::vector<PointCloud> first, second;
    std::vector<std::size_t> truth;
    for (std::size_t i = 0; i < count; ++i) {
      auto s = make_rotpair_sample(spec, disc, Split::Val, start + i);
      first.push_back(std::move(s.first));
      second.push_back(std::move(s.second));
      truth.push_back(s.rotation);
    }
    ag::Tape tape;
    const auto pred = argmax_rows(model.forward(tape, first, second, false).logits);
    for (std::size_t i = 0; i < count; ++i) correct += pred[i] == truth[i];
  }
  return static_cast<double>(correct) / static_cast<double>(spec.val_samples);
}

double evaluate_shapecls(ShapeClsModel& model, const TaskSpec& spec, std::optional<std::size_t> extra_rotation) {
  const auto& disc = *model.backbone.discretization();
  std::size_t correct = 0;
  for (std::size_t start = 0; start < spec.val_samples; start += spec.batch_size) {
    const std::size_t count = std::min(spec.batch_size, spec.val_samples - start);
    std::vector<PointCloud> clouds;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < count; ++i) {
      auto s = make_shape_sample(spec, disc, Split::Val, start + i);
      clouds.push_back(extra_rotation ? rotate_cloud(s.cloud, disc.group.element(*extra_rotation)) : std::move(s.cloud));
      labels.push_back(s.label);
    }
    ag::Tape tape;
    const auto pred = argmax_rows(model.forward(tape, clouds, false).logits);
    for (std::size_t i = 0; i < count; ++i) correct += pred[i] == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(spec.val_samples);
}

TrainReport run_rotpair_training(RotPairModel& model, const TaskSpec& spec, const OptimSpec& optim,
                                 const EpochCallback& on_epoch) {
  const auto& disc = *model.backbone.discretization();
  const std::size_t n = disc.group_order(), a = disc.num_anchors();
  Sgd sgd(model.parameters(), optim.lr, optim.momentum);
  TrainReport report;
  report.initial_val_acc = evaluate_rotpair(model, spec);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= optim.epochs; ++epoch) {
    sgd.set_learning_rate(scheduled_learning_rate(optim, epoch));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < spec.train_samples; b0 += spec.batch_size) {
      const std::size_t count = std::min(spec.batch_size, spec.train_samples - b0);
      std::vector<PointCloud> first, second;
      std::vector<std::size_t> rotations;
      for (std::size_t i = 0; i < count; ++i) {
        auto s = make_rotpair_sample(spec, disc, Split::Train, (epoch - 1) * spec.train_samples + b0 + i);
        first.push_back(std::move(s.first));
        second.push_back(std::move(s.second));
        rotations.push_back(s.rotation);
      }
      ag::Tape tape;
      const auto scores = model.forward(tape, first, second, true);
      auto loss = binary_cross_entropy(tape, scores.pair_scores, rotation_targets(rotations, n, a), optim.pos_weight);
      check_finite(loss.item(), epoch);
      tape.backward(loss);
      sgd.step();
      total += loss.item();
      ++batches;
    }
    EpochMetrics m{epoch, total / static_cast<double>(std::max<std::size_t>(batches, 1)), evaluate_rotpair(model, spec),
                   seconds_since(start)};
    report.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    if (m.val_acc >= optim.target_accuracy) break;
  }
  return report;
}

TrainReport run_shapecls_training(ShapeClsModel& model, const TaskSpec& spec, const OptimSpec& optim,
                                  const EpochCallback& on_epoch) {
  if (spec.shapes.size() < 2) throw ConfigError("shape classification needs at least two classes");
  const auto& disc = *model.backbone.discretization();
  const std::size_t n = disc.group_order(), classes = spec.shapes.size();
  Sgd sgd(model.parameters(), optim.lr, optim.momentum);
  TrainReport report;
  report.initial_val_acc = evaluate_shapecls(model, spec);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= optim.epochs; ++epoch) {
    sgd.set_learning_rate(scheduled_learning_rate(optim, epoch));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < spec.train_samples; b0 += spec.batch_size) {
      const std::size_t count = std::min(spec.batch_size, spec.train_samples - b0);
      std::vector<PointCloud> clouds;
      std::vector<std::size_t> labels, rotations, selected;
      for (std::size_t i = 0; i < count; ++i) {
        auto s = make_shape_sample(spec, disc, Split::Train, (epoch - 1) * spec.train_samples + b0 + i);
        clouds.push_back(std::move(s.cloud));
        labels.push_back(s.label);
        rotations.push_back(s.rotation);
        selected.push_back(i * classes + s.label);
      }
      ag::Tape tape;
      const auto out = model.forward(tape, clouds, true);
      auto loss = cross_entropy(tape, out.logits, labels);
      if (optim.bce_weight > 0.0) {
        // Anchor matching of the labelled class against the known rotation.
        const auto flat = ag::reshape(tape, out.rotation_scores, {count * classes, n});
        const auto rows = ag::index_permute_gather(tape, flat, 0, selected);
        const auto bce = binary_cross_entropy(tape, rows, rotation_targets(rotations, n, 1), optim.pos_weight);
        loss = ag::add(tape, loss, ag::scale(tape, bce, optim.bce_weight));
      }
      check_finite(loss.item(), epoch);
      tape.backward(loss);
      sgd.step();
      total += loss.item();
      ++batches;
    }
    EpochMetrics m{epoch, total / static_cast<double>(std::max<std::size_t>(batches, 1)),
                   evaluate_shapecls(model, spec), seconds_since(start)};
    report.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    if (m.val_acc >= optim.target_accuracy) break;
  }
  return report;
}

}  // namespace e2pn
