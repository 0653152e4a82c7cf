// Python bindings for the group machinery, the quotient convolution and the
// property suite. Arrays cross the boundary as float64/int64 numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "e2pn/bench.hpp"
#include "e2pn/checks.hpp"
#include "e2pn/config.hpp"
#include "e2pn/error.hpp"
#include "e2pn/layers.hpp"

namespace py = pybind11;
using namespace e2pn;

namespace {

using Doubles = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Indices = py::array_t<std::int64_t>;

Doubles to_array(std::span<const double> v, std::vector<py::ssize_t> shape) {
  Doubles out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Indices to_indices(const std::vector<std::size_t>& v, std::vector<py::ssize_t> shape) {
  Indices out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Doubles points_array(const std::vector<Vec3>& pts) {
  Doubles out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
  auto* d = out.mutable_data();
  for (std::size_t i = 0; i < pts.size(); ++i) std::copy(pts[i].begin(), pts[i].end(), d + 3 * i);
  return out;
}

std::vector<Vec3> to_points(const Doubles& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw ShapeMismatch("expected an (N, 3) array");
  std::vector<Vec3> pts(static_cast<std::size_t>(a.shape(0)));
  const double* d = a.data();
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {d[3 * i], d[3 * i + 1], d[3 * i + 2]};
  return pts;
}

ag::Tensor to_tensor(const Doubles& a) {
  ag::Shape shape(a.shape(), a.shape() + a.ndim());
  return ag::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Doubles tensor_array(const ag::Tensor& t) {
  return to_array(t.values(), std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
}

py::dict group_tables(const std::string& solid) {
  const auto d = make_discretization(parse_solid(solid));
  const auto n = static_cast<py::ssize_t>(d->group_order()), a = static_cast<py::ssize_t>(d->num_anchors());
  Doubles elements({n, py::ssize_t{3}, py::ssize_t{3}});
  for (std::size_t g = 0; g < d->group_order(); ++g) {
    const auto& m = d->group.element(g).data();
    std::copy(m.begin(), m.end(), elements.mutable_data() + 9 * g);
  }
  std::vector<std::size_t> cayley, inverse;
  for (std::size_t i = 0; i < d->group_order(); ++i) {
    inverse.push_back(d->group.inverse(i));
    for (std::size_t j = 0; j < d->group_order(); ++j) cayley.push_back(d->group.compose(i, j));
  }
  py::dict out;
  out["elements"] = elements;
  out["cayley"] = to_indices(cayley, {n, n});
  out["inverse"] = to_indices(inverse, {n});
  out["identity"] = d->group.identity_index();
  out["anchors"] = points_array(d->quotient.anchors);
  out["coset_of"] = to_indices(d->quotient.coset_of, {n});
  out["section"] = to_indices(d->quotient.section, {a});
  out["stabilizer"] = to_indices(d->quotient.stabilizer, {static_cast<py::ssize_t>(d->quotient.stabilizer.size())});
  out["perm"] = to_indices(d->anchor_perm.table(), {n, a});
  return out;
}

py::dict kernel_tables(const std::string& solid, double kernel_radius) {
  const auto geom = ConvGeometry::quotient(make_discretization(parse_solid(solid)), kernel_radius);
  const auto n = static_cast<py::ssize_t>(geom->disc->group_order());
  const auto k = static_cast<py::ssize_t>(geom->num_kernel_points());
  py::dict out;
  out["points"] = points_array(geom->kernel_points.points);
  out["kperm"] = to_indices(geom->kernel_perm.table(), {n, k});
  out["orbit_of"] = to_indices(geom->orbits.orbit_of, {static_cast<py::ssize_t>(geom->num_slots), k});
  out["num_orbits"] = geom->orbits.num_orbits();
  return out;
}

py::tuple conv(const Doubles& positions, const Doubles& features, const Doubles& weights, double radius, double sigma,
               double kernel_radius, const std::string& mode, const std::string& solid) {
  const auto geom = ConvGeometry::quotient(make_discretization(parse_solid(solid)), kernel_radius);
  if (features.ndim() != 3 || weights.ndim() != 3) throw ShapeMismatch("features (N, A, C_in), weights (orbits, C_in, C_out)");
  const auto c_in = static_cast<std::size_t>(features.shape(2)), c_out = static_cast<std::size_t>(weights.shape(2));
  std::mt19937_64 rng(0);
  auto layer = make_conv_layer(geom, c_in, c_out, radius, sigma, parse_gather_mode(mode), rng);
  const auto w = to_tensor(weights);
  if (w.shape() != layer.kernel.free_weights.shape())
    throw ShapeMismatch("weights must be " + ag::to_string(layer.kernel.free_weights.shape()));
  std::copy(w.values().begin(), w.values().end(), layer.kernel.free_weights.mutable_values().begin());
  FieldBatch in;
  in.positions.push_back(to_points(positions));
  in.values = to_tensor(features);
  ConvStats stats;
  ag::Tape tape;
  const auto out = conv_forward(tape, layer, in, &stats);
  py::dict s;
  s["centers"] = stats.centers;
  s["gather_locations"] = stats.gather_locations;
  s["gather_nonzeros"] = stats.gather_nonzeros;
  s["locations_per_center"] = stats.locations_per_center();
  return py::make_tuple(tensor_array(out.values), s);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Quotient-space SE(3)-equivariant point convolution";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "group_info",
      [](const std::string& solid) {
        const auto d = make_discretization(parse_solid(solid));
        py::dict hist;
        for (const auto& [order, count] : d->group.element_order_histogram()) hist[py::int_(order)] = count;
        py::dict out;
        out["order"] = d->group_order();
        out["num_anchors"] = d->num_anchors();
        out["stabilizer_order"] = d->quotient.stabilizer.size();
        out["element_order_histogram"] = hist;
        return out;
      },
      py::arg("solid") = "icosa");
  m.def("group_tables", &group_tables, py::arg("solid") = "icosa",
        "Elements (G, 3, 3), Cayley and inverse tables, anchors, cosets, section, stabilizer, perm (G, A).");
  m.def("kernel_tables", &kernel_tables, py::arg("solid") = "icosa", py::arg("kernel_radius") = 1.0,
        "Kernel points (K, 3), kperm (G, K), orbit_of (A, K).");
  m.def("conv", &conv, py::arg("positions"), py::arg("features"), py::arg("weights"), py::arg("radius"),
        py::arg("sigma"), py::arg("kernel_radius"), py::arg("mode") = "fast", py::arg("solid") = "icosa",
        "Quotient convolution of one cloud; returns (output (N, A, C_out), gather stats).");
  m.def(
      "permutation_expand",
      [](const Doubles& x, const std::string& solid) {
        const auto d = make_discretization(parse_solid(solid));
        ag::Tape tape;
        return tensor_array(permutation_expand(tape, to_tensor(x), *d));
      },
      py::arg("x"), py::arg("solid") = "icosa", "(B, A, C) -> (B, G, A*C).");
  m.def(
      "synth_shape",
      [](const std::string& kind, std::size_t n, double noise, std::uint64_t seed) {
        return points_array(synth_shape(parse_shape_kind(kind), n, noise, seed).positions);
      },
      py::arg("kind"), py::arg("n"), py::arg("noise") = 0.0, py::arg("seed") = 0);
  m.def(
      "run_checks",
      [](const std::string& config_text) {
        py::list out;
        for (const auto& r : run_checks(parse_config(config_text))) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["max_error"] = r.max_error;
          d["tolerance"] = r.tolerance;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("config_text") = "", "Runs the property suite on a config given as text.");
  m.def(
      "bench",
      [](std::size_t points, std::size_t channels, std::size_t trials, std::uint64_t seed) {
        BenchSpec spec;
        spec.points = points;
        spec.channels = channels;
        spec.trials = trials;
        const auto r = run_gather_bench(Solid::Icosa, 0.66, spec, seed);
        py::dict d;
        d["fast_median_seconds"] = r.fast_median;
        d["naive_median_seconds"] = r.naive_median;
        d["speedup"] = r.speedup;
        d["fast_locations_per_center"] = r.fast_locations_per_center;
        d["naive_locations_per_center"] = r.naive_locations_per_center;
        d["field_element_ratio"] = r.field_ratio;
        return d;
      },
      py::arg("points") = 1024, py::arg("channels") = 32, py::arg("trials") = 10, py::arg("seed") = 0);
}
