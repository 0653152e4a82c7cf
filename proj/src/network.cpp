#include "e2pn/network.hpp"

#include <algorithm>
#include <cctype>

#include "e2pn/error.hpp"

namespace e2pn {

std::string to_string(BlockSpec::Kind kind) {
  switch (kind) {
    case BlockSpec::Kind::Conv: return "conv";
    case BlockSpec::Kind::BatchNorm: return "bn";
    case BlockSpec::Kind::ReLU: return "relu";
    case BlockSpec::Kind::LeakyReLU: return "leaky_relu";
    case BlockSpec::Kind::Pool: return "pool";
  }
  return "unknown";
}

BlockSpec::Kind parse_block_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "conv") return BlockSpec::Kind::Conv;
  if (lower == "bn" || lower == "batch_norm") return BlockSpec::Kind::BatchNorm;
  if (lower == "relu") return BlockSpec::Kind::ReLU;
  if (lower == "leaky_relu") return BlockSpec::Kind::LeakyReLU;
  if (lower == "pool") return BlockSpec::Kind::Pool;
  throw ConfigError("unknown block type '" + std::string(name) + "'");
}

Backbone::Backbone(const BackboneSpec& spec, std::size_t channels_in, std::mt19937_64& rng)
    : disc_(make_discretization(spec.solid)), channels_out_(channels_in) {
  for (const auto& b : spec.blocks) {
    switch (b.kind) {
      case BlockSpec::Kind::Conv: {
        if (b.channels == 0) throw ConfigError("conv block needs channels > 0");
        const double kr = spec.radius_ratio * b.radius;
        auto geometry = ConvGeometry::quotient(disc_, kr, spec.extra_kernel_points);
        blocks_.push_back(Conv{make_conv_layer(std::move(geometry), channels_out_, b.channels, b.radius,
                                               b.sigma > 0.0 ? b.sigma : kr, b.mode, rng)});
        channels_out_ = b.channels;
        break;
      }
      case BlockSpec::Kind::BatchNorm:
        blocks_.push_back(Norm{BatchNorm::create(channels_out_, spec.bn_eps, spec.bn_momentum)});
        break;
      case BlockSpec::Kind::ReLU: blocks_.push_back(Act{ag::Pointwise::relu()}); break;
      case BlockSpec::Kind::LeakyReLU: blocks_.push_back(Act{ag::Pointwise::leaky_relu(b.alpha)}); break;
      case BlockSpec::Kind::Pool:
        if (!(b.cell > 0.0)) throw ConfigError("pool block needs cell > 0");
        blocks_.push_back(Pool{b.cell});
        break;
    }
  }
}

FieldBatch Backbone::forward(ag::Tape& tape, const FieldBatch& lifted, bool training,
                             const std::vector<RigidMotion>& frames) {
  FieldBatch x = lifted;
  for (auto& block : blocks_) {
    if (auto* c = std::get_if<Conv>(&block)) {
      x = conv_forward(tape, c->layer, x);
    } else if (auto* n = std::get_if<Norm>(&block)) {
      x.values = batch_norm(tape, n->bn, x.values, training);
    } else if (auto* a = std::get_if<Act>(&block)) {
      x.values = ag::pointwise(tape, x.values, a->op);
    } else if (auto* p = std::get_if<Pool>(&block)) {
      x = spatial_pool(tape, x, p->cell, frames);
    }
  }
  return x;
}

FieldBatch Backbone::forward(ag::Tape& tape, const std::vector<PointCloud>& clouds, bool training,
                             const std::vector<RigidMotion>& frames) {
  return forward(tape, lift(clouds, disc_->num_anchors()), training, frames);
}

void Backbone::set_gather_mode(GatherMode mode) {
  for (auto& block : blocks_)
    if (auto* c = std::get_if<Conv>(&block)) c->layer.mode = mode;
}

NamedTensors Backbone::named_state() const {
  NamedTensors params, stats;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    if (const auto* c = std::get_if<Conv>(&blocks_[i])) {
      params.emplace_back(prefix + "kernel", c->layer.kernel.free_weights);
    } else if (const auto* n = std::get_if<Norm>(&blocks_[i])) {
      params.emplace_back(prefix + "gamma", n->bn.gamma);
      params.emplace_back(prefix + "beta", n->bn.beta);
      stats.emplace_back(prefix + "running_mean", n->bn.running_mean);
      stats.emplace_back(prefix + "running_var", n->bn.running_var);
    }
  }
  params.insert(params.end(), stats.begin(), stats.end());
  return params;
}

std::vector<ag::Tensor> Backbone::parameters() const {
  std::vector<ag::Tensor> out;
  for (const auto& [name, t] : named_state())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

RotPairModel::RotPairModel(const BackboneSpec& spec, std::size_t head_hidden, std::mt19937_64& rng)
    : backbone(spec, 1, rng), head(RotationHead::create(backbone.channels_out(), head_hidden, rng)) {
  // Zero output layer: the untrained model ranks every rotation equally.
  std::fill(head.w2.mutable_values().begin(), head.w2.mutable_values().end(), 0.0);
}

RotationScores RotPairModel::forward(ag::Tape& tape, const std::vector<PointCloud>& first,
                                     const std::vector<PointCloud>& second, bool training) {
  // Both clouds share one batch so normalization sees the same statistics.
  std::vector<PointCloud> all = first;
  all.insert(all.end(), second.begin(), second.end());
  const auto pooled = global_pool(tape, backbone.forward(tape, all, training));
  const std::size_t b = first.size(), a = pooled.dim(1), c = pooled.dim(2);
  const auto both = ag::reshape(tape, pooled, {2, b * a * c});
  const auto f1 = ag::reshape(tape, ag::index_permute_gather(tape, both, 0, {0}), {b, a, c});
  const auto f2 = ag::reshape(tape, ag::index_permute_gather(tape, both, 0, {1}), {b, a, c});
  return rotation_head(tape, head, f1, f2, *backbone.discretization());
}

NamedTensors RotPairModel::named_state() const {
  auto s = backbone.named_state();
  const char* names[] = {"head.w1a", "head.w1b", "head.b1", "head.w2", "head.b2"};
  const auto p = head.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) s.emplace_back(names[i], p[i]);
  return s;
}

std::vector<ag::Tensor> RotPairModel::parameters() const {
  auto p = backbone.parameters();
  for (const auto& t : head.parameters()) p.push_back(t);
  return p;
}

ShapeClsModel::ShapeClsModel(const BackboneSpec& spec, std::size_t classes, std::mt19937_64& rng)
    : backbone(spec, 1, rng),
      head(ClassHead::create(classes, backbone.discretization()->num_anchors(), backbone.channels_out(), rng)) {}

ClassScores ShapeClsModel::forward(ag::Tape& tape, const std::vector<PointCloud>& clouds, bool training) {
  const auto pooled = global_pool(tape, backbone.forward(tape, clouds, training));
  return class_head(tape, head, pooled, *backbone.discretization());
}

NamedTensors ShapeClsModel::named_state() const {
  auto s = backbone.named_state();
  s.emplace_back("head.reference", head.reference);
  return s;
}

std::vector<ag::Tensor> ShapeClsModel::parameters() const {
  auto p = backbone.parameters();
  p.push_back(head.reference);
  return p;
}

}  // namespace e2pn
