#include "e2pn/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "e2pn/error.hpp"

namespace e2pn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

std::size_t FieldBatch::total_points() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

std::vector<std::size_t> FieldBatch::offsets() const {
  std::vector<std::size_t> off(positions.size() + 1, 0);
  for (std::size_t b = 0; b < positions.size(); ++b) off[b + 1] = off[b] + positions[b].size();
  return off;
}

FieldBatch lift(const std::vector<PointCloud>& clouds, std::size_t num_slots) {
  if (clouds.empty()) throw ShapeMismatch("lift of an empty batch");
  const std::size_t c = clouds.front().channels;
  FieldBatch out;
  std::size_t total = 0;
  for (const auto& cloud : clouds) {
    if (cloud.lifted() || cloud.channels != c) throw ShapeMismatch("lift expects unlifted clouds with equal channels");
    total += cloud.size();
  }
  std::vector<double> values(total * num_slots * c);
  double* dst = values.data();
  for (const auto& cloud : clouds) {
    out.positions.push_back(cloud.positions);
    for (std::size_t n = 0; n < cloud.size(); ++n)
      for (std::size_t a = 0; a < num_slots; ++a, dst += c) std::copy_n(cloud.features.data() + n * c, c, dst);
  }
  out.values = ag::Tensor({total, num_slots, c}, std::move(values));
  return out;
}

std::string to_string(GatherMode mode) { return mode == GatherMode::FastSymmetric ? "fast" : "naive"; }

GatherMode parse_gather_mode(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "fast" || lower == "fastsymmetric") return GatherMode::FastSymmetric;
  if (lower == "naive" || lower == "naivegather") return GatherMode::NaiveGather;
  throw ConfigError("unknown gather mode '" + std::string(name) + "'");
}

std::shared_ptr<const ConvGeometry> ConvGeometry::quotient(std::shared_ptr<const Discretization> disc,
                                                           double kernel_radius,
                                                           const std::vector<Vec3>& extra_points) {
  auto g = std::make_shared<ConvGeometry>();
  g->num_slots = disc->num_anchors();
  g->section = disc->quotient.section;
  g->slot_perm = disc->anchor_perm;
  g->kernel_points = build_kernel_points(disc->quotient, kernel_radius, extra_points);
  g->kernel_perm = build_kernel_perm(g->kernel_points, disc->group);
  g->orbits = compute_orbits(disc->quotient.stabilizer, g->slot_perm, g->kernel_perm);
  g->disc = std::move(disc);
  return g;
}

std::shared_ptr<const ConvGeometry> ConvGeometry::group(std::shared_ptr<const Discretization> disc,
                                                        double kernel_radius) {
  auto g = std::make_shared<ConvGeometry>();
  const std::size_t n = disc->group_order();
  g->num_slots = n;
  g->section.resize(n);
  std::iota(g->section.begin(), g->section.end(), std::size_t{0});
  std::vector<std::size_t> cayley(n * n);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y) cayley[x * n + y] = disc->group.compose(x, y);
  g->slot_perm = AnchorPermutationRep(n, n, std::move(cayley));
  g->kernel_points = build_kernel_points(disc->quotient, kernel_radius);
  g->kernel_perm = build_kernel_perm(g->kernel_points, disc->group);
  g->orbits = OrbitPartition::trivial(n, g->kernel_points.size());
  g->disc = std::move(disc);
  return g;
}

ConvLayer make_conv_layer(std::shared_ptr<const ConvGeometry> geometry, std::size_t c_in, std::size_t c_out,
                          double radius, double sigma, GatherMode mode, std::mt19937_64& rng) {
  if (!(radius > 0.0) || !(sigma > 0.0)) throw ConfigError("conv radius and sigma must be positive");
  ConvLayer layer;
  layer.kernel = OrbitKernel::random(geometry->orbits, c_in, c_out, rng);
  layer.geometry = std::move(geometry);
  layer.radius = radius;
  layer.sigma = sigma;
  layer.mode = mode;
  return layer;
}

namespace {

// idx[(k * A + a) * A + i] = orbit of the kernel entry multiplying input
// slot a and gathered location k for output slot i. In fast mode k is the
// permuted location kperm[s_i][k_orig]; in naive mode it is k_orig.
std::vector<std::size_t> kernel_index_table(const ConvGeometry& g, GatherMode mode) {
  const std::size_t a_count = g.num_slots, k_count = g.num_kernel_points();
  const auto& group = g.disc->group;
  std::vector<std::size_t> idx(k_count * a_count * a_count);
  for (std::size_t i = 0; i < a_count; ++i) {
    const std::size_t inv = group.inverse(g.section[i]);
    for (std::size_t k = 0; k < k_count; ++k) {
      const std::size_t kk = mode == GatherMode::FastSymmetric ? g.kernel_perm(inv, k) : k;
      for (std::size_t a = 0; a < a_count; ++a)
        idx[(k * a_count + a) * a_count + i] = g.orbits.orbit_of[g.slot_perm(inv, a) * k_count + kk];
    }
  }
  return idx;
}

GatherPlan build_conv_plan(const ConvLayer& layer, const FieldBatch& in,
                           const std::vector<std::vector<Vec3>>& centers) {
  const auto& g = *layer.geometry;
  const auto& kp = g.kernel_points.points;
  std::vector<Vec3> offsets;
  if (layer.mode == GatherMode::FastSymmetric) {
    offsets = kp;
  } else {
    for (std::size_t i = 0; i < g.num_slots; ++i) {
      const auto& r = g.disc->group.element(g.section[i]);
      for (const auto& t : kp) offsets.push_back(r.apply(t));
    }
  }
  const double search = std::min(layer.radius, layer.sigma);
  std::vector<GatherPlan> plans;
  for (std::size_t b = 0; b < in.batch_size(); ++b) {
    std::vector<Vec3> locations;
    locations.reserve(centers[b].size() * offsets.size());
    for (const auto& c : centers[b])
      for (const auto& t : offsets) locations.push_back(c + t);
    plans.push_back(build_gather_plan(in.positions[b], locations, search, layer.sigma));
  }
  return stack_plans(plans);
}

}  // namespace

FieldBatch conv_forward(ag::Tape& tape, const ConvLayer& layer, const FieldBatch& in,
                        const std::vector<std::vector<Vec3>>& centers, ConvStats* stats) {
  const auto& g = *layer.geometry;
  const std::size_t a_count = g.num_slots, k_count = g.num_kernel_points();
  const std::size_t c_in = layer.kernel.channels_in, c_out = layer.kernel.channels_out;
  if (in.values.rank() != 3 || in.slots() != a_count || in.channels() != c_in)
    throw ShapeMismatch("conv input " + ag::to_string(in.values.shape()) + " does not match slots " +
                        std::to_string(a_count) + ", channels " + std::to_string(c_in));
  if (centers.size() != in.batch_size()) throw ShapeMismatch("one center set per cloud required");
  if (in.values.dim(0) != in.total_points()) throw ShapeMismatch("field rows do not match positions");

  const bool fast = layer.mode == GatherMode::FastSymmetric;
  auto plan = std::make_shared<GatherPlan>(build_conv_plan(layer, in, centers));
  std::size_t m_count = 0;
  for (const auto& c : centers) m_count += c.size();
  if (stats) *stats = {m_count, plan->num_rows, plan->nonzeros()};

  const auto idx = std::make_shared<std::vector<std::size_t>>(kernel_index_table(g, layer.mode));
  const std::size_t width = a_count * c_in;    // gathered values per location
  const std::size_t depth = k_count * width;   // kernel rows
  const std::size_t out_width = a_count * c_out;
  const std::size_t rows_per_center = fast ? k_count : a_count * k_count;

  // Dense (depth, A * C_out) kernel matrix, expanded from the orbit weights.
  auto kmat = std::make_shared<RowMatrix>(depth, out_width);
  const auto w = layer.kernel.free_weights.values();
  for (std::size_t r = 0; r < k_count * a_count; ++r)
    for (std::size_t i = 0; i < a_count; ++i) {
      const double* src = w.data() + (*idx)[r * a_count + i] * c_in * c_out;
      for (std::size_t c1 = 0; c1 < c_in; ++c1)
        std::copy_n(src + c1 * c_out, c_out, kmat->data() + (r * c_in + c1) * out_width + i * c_out);
    }

  const std::size_t per_center = rows_per_center * width;
  const std::size_t chunk = std::max<std::size_t>(1, (std::size_t{1} << 21) / std::max<std::size_t>(per_center, 1));

  std::vector<double> out_values(m_count * out_width, 0.0);
  std::vector<double> gbuf;
  const auto x = in.values.values();
  for (std::size_t m0 = 0; m0 < m_count; m0 += chunk) {
    const std::size_t cm = std::min(chunk, m_count - m0);
    gbuf.assign(cm * per_center, 0.0);
    plan->apply_rows(x, width, m0 * rows_per_center, cm * rows_per_center, gbuf.data());
    if (fast) {
      MatrixMap(out_values.data() + m0 * out_width, cm, out_width).noalias() =
          ConstMatrixMap(gbuf.data(), cm, depth) * *kmat;
    } else {
      for (std::size_t i = 0; i < a_count; ++i)
        StridedMap(out_values.data() + m0 * out_width + i * c_out, cm, c_out, Eigen::OuterStride<>(out_width))
            .noalias() = ConstStridedMap(gbuf.data() + i * depth, cm, depth, Eigen::OuterStride<>(a_count * depth)) *
                         kmat->middleCols(i * c_out, c_out);
    }
  }

  FieldBatch out;
  out.positions = centers;
  out.values = ag::Tensor({m_count, a_count, c_out}, std::move(out_values));

  ag::Tensor xin = in.values, weights = layer.kernel.free_weights, result = out.values;
  tape.record({xin, weights}, out.values,
              [=]() mutable {
                const auto dout = result.grad();
                const auto xv = xin.values();
                RowMatrix dk = RowMatrix::Zero(depth, out_width);
                std::vector<double> gb, dg;
                for (std::size_t m0 = 0; m0 < m_count; m0 += chunk) {
                  const std::size_t cm = std::min(chunk, m_count - m0);
                  const double* dchunk = dout.data() + m0 * out_width;
                  gb.assign(cm * per_center, 0.0);
                  plan->apply_rows(xv, width, m0 * rows_per_center, cm * rows_per_center, gb.data());
                  if (xin.requires_grad()) dg.assign(cm * per_center, 0.0);
                  if (fast) {
                    const ConstMatrixMap dmat(dchunk, cm, out_width);
                    if (weights.requires_grad()) dk.noalias() += ConstMatrixMap(gb.data(), cm, depth).transpose() * dmat;
                    if (xin.requires_grad()) MatrixMap(dg.data(), cm, depth).noalias() = dmat * kmat->transpose();
                  } else {
                    for (std::size_t i = 0; i < a_count; ++i) {
                      const ConstStridedMap dmat(dchunk + i * c_out, cm, c_out, Eigen::OuterStride<>(out_width));
                      if (weights.requires_grad())
                        dk.middleCols(i * c_out, c_out).noalias() +=
                            ConstStridedMap(gb.data() + i * depth, cm, depth, Eigen::OuterStride<>(a_count * depth))
                                .transpose() *
                            dmat;
                      if (xin.requires_grad())
                        StridedMap(dg.data() + i * depth, cm, depth, Eigen::OuterStride<>(a_count * depth))
                            .noalias() = dmat * kmat->middleCols(i * c_out, c_out).transpose();
                    }
                  }
                  if (xin.requires_grad())
                    plan->apply_rows_transpose_add(dg.data(), width, m0 * rows_per_center, cm * rows_per_center,
                                                   xin.grad_buffer());
                }
                if (weights.requires_grad()) {
                  auto gw = weights.grad_buffer();
                  for (std::size_t r = 0; r < k_count * a_count; ++r)
                    for (std::size_t i = 0; i < a_count; ++i) {
                      double* dst = gw.data() + (*idx)[r * a_count + i] * c_in * c_out;
                      for (std::size_t c1 = 0; c1 < c_in; ++c1) {
                        const double* src = dk.data() + (r * c_in + c1) * out_width + i * c_out;
                        for (std::size_t c2 = 0; c2 < c_out; ++c2) dst[c1 * c_out + c2] += src[c2];
                      }
                    }
                }
              });
  return out;
}

FieldBatch conv_forward(ag::Tape& tape, const ConvLayer& layer, const FieldBatch& in, ConvStats* stats) {
  return conv_forward(tape, layer, in, in.positions, stats);
}

BatchNorm BatchNorm::create(std::size_t channels, double eps, double momentum) {
  BatchNorm bn;
  bn.gamma = ag::Tensor::full({channels}, 1.0, true);
  bn.beta = ag::Tensor::zeros({channels}, true);
  bn.running_mean = ag::Tensor::zeros({channels});
  bn.running_var = ag::Tensor::full({channels}, 1.0);
  bn.eps = eps;
  bn.momentum = momentum;
  return bn;
}

ag::Tensor batch_norm(ag::Tape& tape, BatchNorm& bn, const ag::Tensor& x, bool training) {
  const std::size_t c = bn.gamma.numel();
  if (x.rank() == 0 || x.shape().back() != c)
    throw ShapeMismatch("batch_norm over " + std::to_string(c) + " channels got " + ag::to_string(x.shape()));
  const std::size_t rows = x.numel() / c;
  if (rows == 0) throw ShapeMismatch("batch_norm of an empty tensor");
  const auto xv = x.values();

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (training) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv[r * c + j] - mean[j];
        var[j] += d * d;
      }
    for (double& v : var) v /= static_cast<double>(rows);
    auto rm = bn.running_mean.mutable_values();
    auto rv = bn.running_var.mutable_values();
    const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = (1.0 - bn.momentum) * rm[j] + bn.momentum * mean[j];
      rv[j] = (1.0 - bn.momentum) * rv[j] + bn.momentum * var[j] * unbias;
    }
  } else {
    std::copy(bn.running_mean.values().begin(), bn.running_mean.values().end(), mean.begin());
    std::copy(bn.running_var.values().begin(), bn.running_var.values().end(), var.begin());
  }

  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + bn.eps);
  std::vector<double> xhat(x.numel()), y(x.numel());
  const auto gamma = bn.gamma.values(), beta = bn.beta.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t e = r * c + j;
      xhat[e] = (xv[e] - mean[j]) * inv_std[j];
      y[e] = gamma[j] * xhat[e] + beta[j];
    }

  ag::Tensor out(x.shape(), std::move(y));
  ag::Tensor xin = x, g = bn.gamma, b = bn.beta, result = out;
  tape.record({xin, g, b}, out, [=, xhat = std::move(xhat)]() mutable {
    const auto dy = result.grad();
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        sum_dy[j] += dy[r * c + j];
        sum_dy_xhat[j] += dy[r * c + j] * xhat[r * c + j];
      }
    if (g.requires_grad()) {
      auto gg = g.grad_buffer();
      for (std::size_t j = 0; j < c; ++j) gg[j] += sum_dy_xhat[j];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t j = 0; j < c; ++j) gb[j] += sum_dy[j];
    }
    if (!xin.requires_grad()) return;
    auto gx = xin.grad_buffer();
    const auto gamma_v = g.values();
    const double n = static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t e = r * c + j;
        const double scale = gamma_v[j] * inv_std[j];
        gx[e] += training ? scale * (dy[e] - sum_dy[j] / n - xhat[e] * sum_dy_xhat[j] / n) : scale * dy[e];
      }
  });
  return out;
}

ag::Tensor segment_reduce(ag::Tape& tape, const ag::Tensor& x, const std::vector<std::vector<std::size_t>>& segments,
                          ag::Reduce kind) {
  if (x.rank() == 0) throw ShapeMismatch("segment_reduce of a scalar");
  const std::size_t rows = x.dim(0), inner = x.numel() / std::max<std::size_t>(rows, 1);
  ag::Shape shape = x.shape();
  shape[0] = segments.size();
  std::vector<double> out(segments.size() * inner, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == ag::Reduce::Max) argmax.assign(out.size(), rows);
  const auto xv = x.values();
  for (std::size_t s = 0; s < segments.size(); ++s) {
    double* dst = out.data() + s * inner;
    const auto& seg = segments[s];
    for (std::size_t r : seg)
      if (r >= rows) throw IndexOutOfRange("segment row " + std::to_string(r));
    if (seg.empty()) continue;
    if (kind == ag::Reduce::Max) {
      for (std::size_t j = 0; j < inner; ++j) {
        std::size_t best = seg.front();
        for (std::size_t r : seg)
          if (xv[r * inner + j] > xv[best * inner + j]) best = r;
        dst[j] = xv[best * inner + j];
        argmax[s * inner + j] = best;
      }
    } else {
      for (std::size_t r : seg)
        for (std::size_t j = 0; j < inner; ++j) dst[j] += xv[r * inner + j];
      if (kind == ag::Reduce::Mean)
        for (std::size_t j = 0; j < inner; ++j) dst[j] /= static_cast<double>(seg.size());
    }
  }
  ag::Tensor result(std::move(shape), std::move(out));
  ag::Tensor xin = x, res = result;
  tape.record({xin}, result, [xin, res, segments, argmax, inner, kind]() mutable {
    auto gx = xin.grad_buffer();
    const auto go = res.grad();
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto& seg = segments[s];
      if (seg.empty()) continue;
      if (kind == ag::Reduce::Max) {
        for (std::size_t j = 0; j < inner; ++j) gx[argmax[s * inner + j] * inner + j] += go[s * inner + j];
      } else {
        const double f = kind == ag::Reduce::Mean ? 1.0 / static_cast<double>(seg.size()) : 1.0;
        for (std::size_t r : seg)
          for (std::size_t j = 0; j < inner; ++j) gx[r * inner + j] += f * go[s * inner + j];
      }
    }
  });
  return result;
}

FieldBatch spatial_pool(ag::Tape& tape, const FieldBatch& in, double cell, const std::vector<RigidMotion>& frames) {
  if (!(cell > 0.0)) throw ConfigError("pool cell must be positive");
  if (!frames.empty() && frames.size() != in.batch_size()) throw ShapeMismatch("one grid frame per cloud required");
  const auto off = in.offsets();
  FieldBatch out;
  std::vector<std::vector<std::size_t>> segments;
  for (std::size_t b = 0; b < in.batch_size(); ++b) {
    auto cells = grid_cells(in.positions[b], cell, frames.empty() ? RigidMotion{} : frames[b]);
    for (auto& members : cells.members) {
      for (auto& m : members) m += off[b];
      segments.push_back(std::move(members));
    }
    out.positions.push_back(std::move(cells.centroids));
  }
  out.values = segment_reduce(tape, in.values, segments, ag::Reduce::Max);
  return out;
}

ag::Tensor global_pool(ag::Tape& tape, const FieldBatch& in, ag::Reduce kind) {
  const auto off = in.offsets();
  std::vector<std::vector<std::size_t>> segments(in.batch_size());
  for (std::size_t b = 0; b < in.batch_size(); ++b) {
    segments[b].resize(off[b + 1] - off[b]);
    std::iota(segments[b].begin(), segments[b].end(), off[b]);
  }
  return segment_reduce(tape, in.values, segments, kind);
}

ag::Tensor ga_pool(ag::Tape& tape, const ag::Tensor& x, const ag::Tensor& weights) {
  const auto scores = ag::contract(tape, x, weights, "bac,c->ba");
  const auto alpha = ag::softmax(tape, scores, 1);
  return ag::contract(tape, alpha, x, "ba,bac->bc");
}

ag::Tensor permutation_expand(ag::Tape& tape, const ag::Tensor& x, const Discretization& disc) {
  if (x.rank() != 3 || x.dim(1) != disc.num_anchors())
    throw ShapeMismatch("permutation_expand expects (B, " + std::to_string(disc.num_anchors()) + ", C), got " +
                        ag::to_string(x.shape()));
  const std::size_t b = x.dim(0), a = x.dim(1), c = x.dim(2), n = disc.group_order();
  const auto rows = ag::index_permute_gather(tape, x, 1, disc.anchor_perm.table());
  return ag::reshape(tape, rows, {b, n, a * c});
}

}  // namespace e2pn
