#pragma once

// Minimal dense reverse-mode automatic differentiation in double precision.
//
// A Tensor is a shared handle to a row-major buffer. Operations take the
// Tape explicitly; an operation is recorded only when one of its inputs
// requires a gradient. Tape::backward replays the records in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace e2pn::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value) { return Tensor({}, {value}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  std::size_t dim(std::size_t i) const { return data_->shape.at(i); }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->values.size(); }

  std::span<const double> values() const { return data_->values; }
  std::span<double> mutable_values() { return data_->values; }
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool flag) { data_->requires_grad = flag; }

  bool has_grad() const { return !data_->grad.empty(); }
  /// Empty until some backward pass reaches this tensor.
  std::span<const double> grad() const { return data_->grad; }
  /// Zero-initialized on first access. Handles share state, so this is const.
  std::span<double> grad_buffer() const;
  void zero_grad() { data_->grad.clear(); }

  /// Same buffer, new shape. Not recorded; use ag::reshape inside a graph.
  Tensor detach() const;

  bool same_node(const Tensor& o) const { return data_ == o.data_; }

 private:
  struct Data {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> data_;
};

class Tape {
 public:
  /// Reads output.grad() and accumulates into the inputs' grad buffers.
  using BackwardFn = std::function<void()>;

  /// Records `output` as produced from `inputs`. No-op when no input
  /// requires a gradient; otherwise marks output as requiring one.
  void record(const std::vector<Tensor>& inputs, Tensor& output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in
  /// reverse recording order. `loss` must hold exactly one element.
  void backward(Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Operations

/// Generalized two-operand contraction described by an einsum-style string,
/// e.g. "ij,jk->ik" or "miqc,iqcd->mid". A label present in both operands
/// and the output is a batch axis; in both operands only, it is summed; in
/// one operand it must appear in the output. Throws ShapeMismatch.
Tensor contract(Tape& tape, const Tensor& a, const Tensor& b, std::string_view spec);

/// out[..., i, ...] = t[..., table[i], ...] along `axis`. The backward pass
/// scatter-adds, so non-bijective tables are allowed. Throws IndexOutOfRange.
Tensor index_permute_gather(Tape& tape, const Tensor& t, std::size_t axis, std::vector<std::size_t> table);

struct Pointwise {
  enum class Kind { ReLU, LeakyReLU, Sigmoid, Log };
  Kind kind = Kind::ReLU;
  double alpha = 0.01;  // LeakyReLU slope

  static Pointwise relu() { return {Kind::ReLU, 0.0}; }
  static Pointwise leaky_relu(double alpha) { return {Kind::LeakyReLU, alpha}; }
  static Pointwise sigmoid() { return {Kind::Sigmoid, 0.0}; }
  static Pointwise log() { return {Kind::Log, 0.0}; }
};

/// Throws DomainError for Log of a non-positive value.
Tensor pointwise(Tape& tape, const Tensor& t, Pointwise op);

enum class Reduce { Sum, Mean, Max };

/// Reduces over `axes` (removed from the shape). Max routes the gradient to
/// the first maximal element.
Tensor reduce(Tape& tape, const Tensor& t, std::vector<std::size_t> axes, Reduce kind);

Tensor softmax(Tape& tape, const Tensor& t, std::size_t axis);

/// Elementwise sum of equally shaped tensors.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& t, double factor);
/// Inserts a new axis of the given extent at position `axis`, repeating t.
Tensor expand(Tape& tape, const Tensor& t, std::size_t axis, std::size_t extent);
Tensor reshape(Tape& tape, const Tensor& t, Shape shape);

// ---------------------------------------------------------------------------
// Unrecorded kernels shared with custom operations.

/// Einsum over raw buffers; see contract().
std::vector<double> einsum(std::string_view spec, std::span<const double> a, const Shape& a_shape,
                           std::span<const double> b, const Shape& b_shape, Shape* out_shape);

/// Moves axis order: out axis i is input axis perm[i].
std::vector<double> permute_axes(std::span<const double> data, const Shape& shape,
                                 const std::vector<std::size_t>& perm, Shape* out_shape);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// Coordinates sampled across all parameters (all when fewer exist).
  std::size_t max_coords = 200;
  /// Denominator floor of the relative error.
  double rel_floor = 1e-6;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of a scalar-valued function against
/// central differences. `fn` must rebuild its graph on the given tape.
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& fn, std::vector<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace e2pn::ag
