#include "e2pn/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "e2pn/error.hpp"

namespace e2pn::ag {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<Data>()) {
  if (ag::numel(shape) != values.size())
    throw ShapeMismatch("buffer of " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ag::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + to_string(shape()));
  return data_->values[0];
}

std::span<double> Tensor::grad_buffer() const {
  if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  return data_->grad;
}

Tensor Tensor::detach() const { return Tensor(shape(), data_->values, false); }

void Tape::record(const std::vector<Tensor>& inputs, Tensor& output, BackwardFn backward) {
  const bool needed = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needed) return;
  output.set_requires_grad(true);
  entries_.push_back({inputs, output, std::move(backward)});
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) throw ShapeMismatch("backward() needs a scalar loss, got " + to_string(loss.shape()));
  loss.grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (it->output.has_grad()) it->backward();
}

// ---------------------------------------------------------------------------
// Raw kernels

std::vector<double> permute_axes(std::span<const double> data, const Shape& shape,
                                 const std::vector<std::size_t>& perm, Shape* out_shape) {
  const std::size_t rank = shape.size();
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) out[i] = shape[perm[i]];
  if (out_shape) *out_shape = out;

  bool identity = true;
  for (std::size_t i = 0; i < rank; ++i) identity = identity && perm[i] == i;
  if (identity) return {data.begin(), data.end()};

  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * shape[i];
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) stride[i] = in_stride[perm[i]];

  std::vector<double> result(data.size());
  if (result.empty()) return result;
  // Innermost output axis handled as a strided run.
  const std::size_t inner = out[rank - 1], inner_stride = stride[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < result.size(); o += inner) {
    const double* src = data.data() + offset;
    for (std::size_t j = 0; j < inner; ++j) result[o + j] = src[j * inner_stride];
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      if (++idx[ax] < out[ax]) {
        offset += stride[ax];
        break;
      }
      offset -= stride[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
  return result;
}

namespace {

struct EinsumPlan {
  std::string la, lb, lo;
  std::vector<std::size_t> perm_a, perm_b, perm_out;
  std::size_t batch = 1, m = 1, k = 1, n = 1;
  Shape out_shape;
};

EinsumPlan plan_einsum(std::string_view spec, const Shape& a_shape, const Shape& b_shape) {
  EinsumPlan p;
  const auto comma = spec.find(','), arrow = spec.find("->");
  if (comma == std::string_view::npos || arrow == std::string_view::npos || arrow < comma)
    throw ShapeMismatch("malformed contraction spec '" + std::string(spec) + "'");
  p.la = std::string(spec.substr(0, comma));
  p.lb = std::string(spec.substr(comma + 1, arrow - comma - 1));
  p.lo = std::string(spec.substr(arrow + 2));
  if (p.la.size() != a_shape.size() || p.lb.size() != b_shape.size())
    throw ShapeMismatch("spec '" + std::string(spec) + "' does not match ranks " + to_string(a_shape) + ", " +
                        to_string(b_shape));

  std::unordered_map<char, std::size_t> extent;
  auto bind = [&](const std::string& labels, const Shape& shape) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels.find(labels[i]) != i)
        throw ShapeMismatch(std::string("repeated label '") + labels[i] + "' in one operand");
      auto [it, inserted] = extent.emplace(labels[i], shape[i]);
      if (!inserted && it->second != shape[i])
        throw ShapeMismatch(std::string("extent mismatch on label '") + labels[i] + "': " +
                            std::to_string(it->second) + " vs " + std::to_string(shape[i]));
    }
  };
  bind(p.la, a_shape);
  bind(p.lb, b_shape);

  auto in = [](const std::string& s, char c) { return s.find(c) != std::string::npos; };
  std::string batch, free_a, free_b, summed;
  for (char c : p.lo) {
    if (!extent.count(c)) throw ShapeMismatch(std::string("output label '") + c + "' not in any operand");
    if (p.lo.find(c) != p.lo.rfind(c)) throw ShapeMismatch(std::string("repeated output label '") + c + "'");
    if (in(p.la, c) && in(p.lb, c)) batch += c;
    else if (in(p.la, c)) free_a += c;
    else free_b += c;
  }
  for (char c : p.la) {
    if (in(p.lo, c)) continue;
    if (!in(p.lb, c)) throw ShapeMismatch(std::string("label '") + c + "' is summed within one operand");
    summed += c;
  }
  for (char c : p.lb)
    if (!in(p.lo, c) && !in(p.la, c)) throw ShapeMismatch(std::string("label '") + c + "' is summed within one operand");

  auto product = [&](const std::string& labels) {
    std::size_t r = 1;
    for (char c : labels) r *= extent[c];
    return r;
  };
  p.batch = product(batch);
  p.m = product(free_a);
  p.k = product(summed);
  p.n = product(free_b);

  for (char c : batch + free_a + summed) p.perm_a.push_back(p.la.find(c));
  for (char c : batch + summed + free_b) p.perm_b.push_back(p.lb.find(c));
  const std::string lc = batch + free_a + free_b;
  for (char c : p.lo) {
    p.perm_out.push_back(lc.find(c));
    p.out_shape.push_back(extent[c]);
  }
  return p;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> run_einsum(const EinsumPlan& p, std::span<const double> a, const Shape& a_shape,
                               std::span<const double> b, const Shape& b_shape) {
  const auto ap = permute_axes(a, a_shape, p.perm_a, nullptr);
  const auto bp = permute_axes(b, b_shape, p.perm_b, nullptr);
  std::vector<double> c(p.batch * p.m * p.n, 0.0);
  for (std::size_t s = 0; s < p.batch; ++s) {
    Eigen::Map<const RowMat> am(ap.data() + s * p.m * p.k, p.m, p.k);
    Eigen::Map<const RowMat> bm(bp.data() + s * p.k * p.n, p.k, p.n);
    Eigen::Map<RowMat> cm(c.data() + s * p.m * p.n, p.m, p.n);
    cm.noalias() = am * bm;
  }
  // Intermediate shape in (batch, free_a, free_b) label order.
  Shape inter(p.out_shape.size());
  for (std::size_t i = 0; i < p.perm_out.size(); ++i) inter[p.perm_out[i]] = p.out_shape[i];
  return permute_axes(c, inter, p.perm_out, nullptr);
}

void accumulate(const Tensor& t, std::span<const double> delta) {
  auto g = t.grad_buffer();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace

std::vector<double> einsum(std::string_view spec, std::span<const double> a, const Shape& a_shape,
                           std::span<const double> b, const Shape& b_shape, Shape* out_shape) {
  const auto plan = plan_einsum(spec, a_shape, b_shape);
  if (out_shape) *out_shape = plan.out_shape;
  return run_einsum(plan, a, a_shape, b, b_shape);
}

// ---------------------------------------------------------------------------
// Recorded operations

Tensor contract(Tape& tape, const Tensor& a, const Tensor& b, std::string_view spec) {
  const auto plan = plan_einsum(spec, a.shape(), b.shape());
  Tensor out(plan.out_shape, run_einsum(plan, a.values(), a.shape(), b.values(), b.shape()));
  tape.record({a, b}, out, [a, b, out, plan]() mutable {
    if (a.requires_grad()) {
      const auto g = einsum(plan.lo + "," + plan.lb + "->" + plan.la, out.grad(), out.shape(), b.values(),
                            b.shape(), nullptr);
      accumulate(a, g);
    }
    if (b.requires_grad()) {
      const auto g = einsum(plan.la + "," + plan.lo + "->" + plan.lb, a.values(), a.shape(), out.grad(),
                            out.shape(), nullptr);
      accumulate(b, g);
    }
  });
  return out;
}

Tensor index_permute_gather(Tape& tape, const Tensor& t, std::size_t axis, std::vector<std::size_t> table) {
  if (axis >= t.rank()) throw IndexOutOfRange("axis " + std::to_string(axis) + " of " + to_string(t.shape()));
  const std::size_t extent = t.dim(axis);
  for (std::size_t v : table)
    if (v >= extent)
      throw IndexOutOfRange("index " + std::to_string(v) + " on axis of extent " + std::to_string(extent));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);

  Shape shape = t.shape();
  shape[axis] = table.size();
  std::vector<double> values(numel(shape));
  const auto src = t.values();
  const std::size_t rows = table.size();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(src.data() + (o * extent + table[i]) * inner, inner, values.data() + (o * rows + i) * inner);

  Tensor out(std::move(shape), std::move(values));
  tape.record({t}, out, [t, out, table = std::move(table), outer, inner, extent]() mutable {
    auto g = t.grad_buffer();
    const auto go = out.grad();
    const std::size_t rows = table.size();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < rows; ++i) {
        const double* src = go.data() + (o * rows + i) * inner;
        double* dst = g.data() + (o * extent + table[i]) * inner;
        for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
      }
  });
  return out;
}

Tensor pointwise(Tape& tape, const Tensor& t, Pointwise op) {
  const auto x = t.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (op.kind) {
      case Pointwise::Kind::ReLU: y[i] = x[i] > 0.0 ? x[i] : 0.0; break;
      case Pointwise::Kind::LeakyReLU: y[i] = x[i] > 0.0 ? x[i] : op.alpha * x[i]; break;
      case Pointwise::Kind::Sigmoid:
        y[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
        break;
      case Pointwise::Kind::Log:
        if (!(x[i] > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x[i]));
        y[i] = std::log(x[i]);
        break;
    }
  }
  Tensor out(t.shape(), std::move(y));
  tape.record({t}, out, [t, out, op]() mutable {
    auto g = t.grad_buffer();
    const auto go = out.grad();
    const auto x = t.values();
    const auto y = out.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (op.kind) {
        case Pointwise::Kind::ReLU: g[i] += x[i] > 0.0 ? go[i] : 0.0; break;
        case Pointwise::Kind::LeakyReLU: g[i] += x[i] > 0.0 ? go[i] : op.alpha * go[i]; break;
        case Pointwise::Kind::Sigmoid: g[i] += go[i] * y[i] * (1.0 - y[i]); break;
        case Pointwise::Kind::Log: g[i] += go[i] / x[i]; break;
      }
    }
  });
  return out;
}

Tensor reduce(Tape& tape, const Tensor& t, std::vector<std::size_t> axes, Reduce kind) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t ax : axes)
    if (ax >= t.rank()) throw IndexOutOfRange("reduce axis " + std::to_string(ax) + " of " + to_string(t.shape()));

  std::vector<std::size_t> perm;
  Shape out_shape;
  for (std::size_t i = 0; i < t.rank(); ++i)
    if (!std::binary_search(axes.begin(), axes.end(), i)) {
      perm.push_back(i);
      out_shape.push_back(t.dim(i));
    }
  std::size_t span = 1;
  for (std::size_t ax : axes) {
    perm.push_back(ax);
    span *= t.dim(ax);
  }
  if (span == 0) throw ShapeMismatch("reduction over an empty axis");

  const auto moved = permute_axes(t.values(), t.shape(), perm, nullptr);
  const std::size_t n_out = numel(out_shape);
  std::vector<double> values(n_out);
  std::vector<std::size_t> argmax(kind == Reduce::Max ? n_out : 0);
  for (std::size_t o = 0; o < n_out; ++o) {
    const double* row = moved.data() + o * span;
    if (kind == Reduce::Max) {
      const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + span) - row);
      argmax[o] = best;
      values[o] = row[best];
    } else {
      double s = 0.0;
      for (std::size_t j = 0; j < span; ++j) s += row[j];
      values[o] = kind == Reduce::Mean ? s / static_cast<double>(span) : s;
    }
  }

  Tensor out(out_shape, std::move(values));
  tape.record({t}, out, [t, out, perm, span, kind, argmax = std::move(argmax)]() mutable {
    const auto go = out.grad();
    std::vector<double> moved(go.size() * span, 0.0);
    for (std::size_t o = 0; o < go.size(); ++o) {
      double* row = moved.data() + o * span;
      if (kind == Reduce::Max) {
        row[argmax[o]] = go[o];
      } else {
        const double v = kind == Reduce::Mean ? go[o] / static_cast<double>(span) : go[o];
        std::fill(row, row + span, v);
      }
    }
    Shape moved_shape;
    for (std::size_t p : perm) moved_shape.push_back(t.dim(p));
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    accumulate(t, permute_axes(moved, moved_shape, inverse, nullptr));
  });
  return out;
}

Tensor softmax(Tape& tape, const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) throw IndexOutOfRange("softmax axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  const std::size_t n = t.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);

  const auto x = t.values();
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += (y[base + j * inner] = std::exp(x[base + j * inner] - mx));
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= s;
    }

  Tensor out(t.shape(), std::move(y));
  tape.record({t}, out, [t, out, outer, inner, n]() mutable {
    auto g = t.grad_buffer();
    const auto go = out.grad();
    const auto y = out.values();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * go[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) g[base + j * inner] += y[base + j * inner] * (go[base + j * inner] - dot);
      }
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("add " + to_string(a.shape()) + " + " + to_string(b.shape()));
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  Tensor out(a.shape(), std::move(v));
  tape.record({a, b}, out, [a, b, out]() mutable {
    if (a.requires_grad()) accumulate(a, out.grad());
    if (b.requires_grad()) accumulate(b, out.grad());
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& t, double factor) {
  std::vector<double> v(t.values().begin(), t.values().end());
  for (double& x : v) x *= factor;
  Tensor out(t.shape(), std::move(v));
  tape.record({t}, out, [t, out, factor]() mutable {
    auto g = t.grad_buffer();
    const auto go = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * go[i];
  });
  return out;
}

Tensor expand(Tape& tape, const Tensor& t, std::size_t axis, std::size_t extent) {
  if (axis > t.rank()) throw IndexOutOfRange("expand axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis; i < t.rank(); ++i) inner *= t.dim(i);
  Shape shape = t.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), extent);
  std::vector<double> v(numel(shape));
  const auto src = t.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      std::copy_n(src.data() + o * inner, inner, v.data() + (o * extent + e) * inner);
  Tensor out(std::move(shape), std::move(v));
  tape.record({t}, out, [t, out, outer, inner, extent]() mutable {
    auto g = t.grad_buffer();
    const auto go = out.grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t e = 0; e < extent; ++e)
        for (std::size_t j = 0; j < inner; ++j) g[o * inner + j] += go[(o * extent + e) * inner + j];
  });
  return out;
}

Tensor reshape(Tape& tape, const Tensor& t, Shape shape) {
  if (numel(shape) != t.numel())
    throw ShapeMismatch("reshape " + to_string(t.shape()) + " to " + to_string(shape));
  Tensor out(std::move(shape), std::vector<double>(t.values().begin(), t.values().end()));
  tape.record({t}, out, [t, out]() mutable { accumulate(t, out.grad()); });
  return out;
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& fn, std::vector<Tensor> params,
                           const GradCheckOptions& options) {
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = fn(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    analytic.emplace_back(params[i].numel(), 0.0);
    if (params[i].has_grad()) std::copy(params[i].grad().begin(), params[i].grad().end(), analytic.back().begin());
    for (std::size_t j = 0; j < params[i].numel(); ++j) coords.emplace_back(i, j);
  }
  if (coords.size() > options.max_coords) {
    std::vector<std::pair<std::size_t, std::size_t>> picked;
    std::mt19937_64 rng(options.seed);
    std::sample(coords.begin(), coords.end(), std::back_inserter(picked), options.max_coords, rng);
    coords = std::move(picked);
  }

  auto evaluate = [&]() {
    Tape tape;
    return fn(tape).item();
  };
  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (auto [pi, ci] : coords) {
    auto values = params[pi].mutable_values();
    const double saved = values[ci];
    values[ci] = saved + options.step;
    const double plus = evaluate();
    values[ci] = saved - options.step;
    const double minus = evaluate();
    values[ci] = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double a = analytic[pi][ci];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.rel_floor});
    if (std::isnan(rel) || rel > report.max_rel_error) {
      report.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      report.worst_param = pi;
      report.worst_coord = ci;
    }
    ++report.coords_checked;
  }
  for (auto& p : params) p.zero_grad();
  return report;
}

}  // namespace e2pn::ag
