#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "oat/forward_model.hpp"
#include "oat/geometry.hpp"
#include "oat/lbp.hpp"
#include "oat/metrics.hpp"
#include "oat/network.hpp"
#include "oat/phantom.hpp"
#include "oat/selftest.hpp"
#include "oat/training.hpp"

namespace py = pybind11;
using namespace oat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image image_from_array(const Array& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("expected a 2D image array (ny, nx)");
  Image img(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(0)));
  std::copy(arr.data(), arr.data() + arr.size(), img.data.begin());
  return img;
}

py::array_t<double> image_to_array(const Image& img) {
  py::array_t<double> arr({img.ny, img.nx});
  std::copy(img.data.begin(), img.data.end(), arr.mutable_data());
  return arr;
}

Sinogram sinogram_from_array(const Array& arr, double dt) {
  if (arr.ndim() != 2) throw std::invalid_argument("expected a 2D sinogram array (n_d, n_t)");
  Sinogram s(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)), dt);
  std::copy(arr.data(), arr.data() + arr.size(), s.data.begin());
  return s;
}

py::array_t<double> sinogram_to_array(const Sinogram& s) {
  py::array_t<double> arr({s.n_d, s.n_t});
  std::copy(s.data.begin(), s.data.end(), arr.mutable_data());
  return arr;
}

std::vector<Tensor> batch_from_array(const Array& arr, int input_size) {
  if (arr.ndim() != 3) throw std::invalid_argument("expected a 3D batch array (n, h, w)");
  if (arr.shape(1) != input_size || arr.shape(2) != input_size)
    throw std::invalid_argument("batch spatial size does not match the network config");
  std::vector<Tensor> batch(static_cast<std::size_t>(arr.shape(0)),
                            Tensor(1, input_size, input_size));
  const double* src = arr.data();
  for (auto& t : batch) {
    std::copy(src, src + t.v.size(), t.v.begin());
    src += t.v.size();
  }
  return batch;
}

py::array_t<double> batch_to_array(const std::vector<Tensor>& batch) {
  const int n = static_cast<int>(batch.size());
  const int h = n > 0 ? batch.front().h : 0;
  const int w = n > 0 ? batch.front().w : 0;
  py::array_t<double> arr({n, h, w});
  double* dst = arr.mutable_data();
  for (const auto& t : batch) {
    std::copy(t.v.begin(), t.v.end(), dst);
    dst += t.v.size();
  }
  return arr;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "optoacoustic forward modelling, back-projection, phantoms, metrics and "
            "sign-agreement gradient masking";

  py::class_<ImagingGrid>(m, "ImagingGrid")
      .def_readonly("nx", &ImagingGrid::nx)
      .def_readonly("ny", &ImagingGrid::ny)
      .def_readonly("dx", &ImagingGrid::dx)
      .def_readonly("dy", &ImagingGrid::dy)
      .def_readonly("slab_thickness", &ImagingGrid::slab_thickness)
      .def("pixel_center",
           [](const ImagingGrid& g, int i, int j) {
             const Vec2 c = g.pixel_center(i, j);
             return py::make_tuple(c.x, c.y);
           })
      .def("__repr__", [](const ImagingGrid& g) {
        return "ImagingGrid(" + std::to_string(g.nx) + "x" + std::to_string(g.ny) + ")";
      });

  py::class_<SensorArray>(m, "SensorArray")
      .def_readonly("radius", &SensorArray::radius)
      .def_readonly("coverage_deg", &SensorArray::coverage_deg)
      .def_readonly("perturbed", &SensorArray::perturbed)
      .def_property_readonly("positions", [](const SensorArray& s) {
        py::array_t<double> arr({static_cast<int>(s.positions.size()), 2});
        double* dst = arr.mutable_data();
        for (const auto& p : s.positions) {
          *dst++ = p.x;
          *dst++ = p.y;
        }
        return arr;
      });

  py::class_<EnvironmentSpec>(m, "EnvironmentSpec")
      .def(py::init([](int n_detectors, double coverage_deg, double position_uncertainty_pct,
                       double vs_uncertainty_pct, std::pair<double, double> snr_db,
                       const std::string& label) {
             EnvironmentSpec spec;
             spec.n_detectors = n_detectors;
             spec.coverage_deg = coverage_deg;
             spec.position_uncertainty_pct = position_uncertainty_pct;
             spec.vs_uncertainty_pct = vs_uncertainty_pct;
             spec.snr_lo_db = snr_db.first;
             spec.snr_hi_db = snr_db.second;
             spec.label = label;
             validate(spec);
             return spec;
           }),
           py::arg("n_detectors") = 16, py::arg("coverage_deg") = 360.0,
           py::arg("position_uncertainty_pct") = 0.0, py::arg("vs_uncertainty_pct") = 0.0,
           py::arg("snr_db") = std::pair<double, double>(40.0, 60.0),
           py::arg("label") = "")
      .def_readonly("n_detectors", &EnvironmentSpec::n_detectors)
      .def_readonly("coverage_deg", &EnvironmentSpec::coverage_deg)
      .def_readonly("position_uncertainty_pct", &EnvironmentSpec::position_uncertainty_pct)
      .def_readonly("vs_uncertainty_pct", &EnvironmentSpec::vs_uncertainty_pct)
      .def_readonly("label", &EnvironmentSpec::label);

  py::class_<RealizedEnvironment>(m, "RealizedEnvironment")
      .def_readonly("sensors_true", &RealizedEnvironment::sensors_true)
      .def_readonly("vs_true", &RealizedEnvironment::vs_true)
      .def_readonly("snr_db", &RealizedEnvironment::snr_db);

  py::class_<ForwardOperator>(m, "ForwardOperator")
      .def_property_readonly("n_detectors", [](const ForwardOperator& op) { return op.n_d; })
      .def_property_readonly("n_t", [](const ForwardOperator& op) { return op.n_t; })
      .def_property_readonly("nnz", [](const ForwardOperator& op) { return op.shell.nonZeros(); })
      .def_readonly("dropped_events", &ForwardOperator::dropped_events)
      .def("__repr__", [](const ForwardOperator& op) {
        return "ForwardOperator(" + std::to_string(op.rows()) + "x" +
               std::to_string(op.cols()) + ", nnz=" + std::to_string(op.shell.nonZeros()) + ")";
      });

  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init([](int n_scales, int base_channels, int dense_growth_rate,
                       int dense_layers_per_block, int input_size) {
             NetworkConfig cfg;
             cfg.n_scales = n_scales;
             cfg.base_channels = base_channels;
             cfg.dense_growth_rate = dense_growth_rate;
             cfg.dense_layers_per_block = dense_layers_per_block;
             cfg.input_size = input_size;
             validate(cfg);
             return cfg;
           }),
           py::arg("n_scales") = 3, py::arg("base_channels") = 8,
           py::arg("dense_growth_rate") = 4, py::arg("dense_layers_per_block") = 2,
           py::arg("input_size") = 64)
      .def_readonly("n_scales", &NetworkConfig::n_scales)
      .def_readonly("base_channels", &NetworkConfig::base_channels)
      .def_readonly("input_size", &NetworkConfig::input_size);

  m.def("build_grid", &build_grid, py::arg("nx"), py::arg("ny"), py::arg("dx"),
        py::arg("dy"), py::arg("slab_thickness") = 0.0);
  m.def("place_sensors", &place_sensors, py::arg("n_detectors"), py::arg("radius"),
        py::arg("coverage_deg"), py::arg("offset_deg"));
  m.def("realize_environment", &realize_environment, py::arg("spec"), py::arg("vs_nominal"),
        py::arg("radius"), py::arg("seed"));
  m.def("build_system_matrix", &build_system_matrix, py::arg("grid"), py::arg("sensors"),
        py::arg("vs"), py::arg("n_t"), py::arg("dt"));

  m.def(
      "apply_forward",
      [](const ForwardOperator& op, const Array& image) {
        return sinogram_to_array(apply_forward(op, image_from_array(image)));
      },
      py::arg("op"), py::arg("image"));
  m.def(
      "apply_adjoint",
      [](const ForwardOperator& op, const Array& sinogram) {
        return image_to_array(apply_adjoint(op, sinogram_from_array(sinogram, op.dt)));
      },
      py::arg("op"), py::arg("sinogram"));
  m.def(
      "bandpass_filter",
      [](const Array& sinogram, double dt, double f_lo, double f_hi) {
        return sinogram_to_array(bandpass_filter(sinogram_from_array(sinogram, dt), f_lo, f_hi));
      },
      py::arg("sinogram"), py::arg("dt"), py::arg("f_lo") = 1e5, py::arg("f_hi") = 1.5e7);
  m.def(
      "add_noise",
      [](const Array& sinogram, double snr_db, std::uint64_t seed) {
        return sinogram_to_array(add_noise(sinogram_from_array(sinogram, 1.0), snr_db, seed));
      },
      py::arg("sinogram"), py::arg("snr_db"), py::arg("seed"));
  m.def(
      "synthesize_sinogram",
      [](const Array& image, const RealizedEnvironment& env, const ImagingGrid& grid,
         int n_t, double dt, double f_lo, double f_hi, std::uint64_t seed) {
        NominalParams nominal;
        nominal.n_t = n_t;
        nominal.dt = dt;
        nominal.f_lo_hz = f_lo;
        nominal.f_hi_hz = f_hi;
        return sinogram_to_array(
            synthesize_sinogram(image_from_array(image), env, grid, nominal, seed));
      },
      py::arg("image"), py::arg("env"), py::arg("grid"), py::arg("n_t") = 512,
      py::arg("dt") = 2e-8, py::arg("f_lo") = 1e5, py::arg("f_hi") = 1.5e7,
      py::arg("seed") = 0);
  m.def(
      "lbp_reconstruct",
      [](const ForwardOperator& op, const Array& sinogram) {
        const LbpImage out = lbp_reconstruct(op, sinogram_from_array(sinogram, op.dt));
        return py::make_tuple(image_to_array(out.image), out.scale);
      },
      py::arg("op"), py::arg("sinogram"));

  m.def(
      "generate_vessel_phantom",
      [](const ImagingGrid& grid, std::uint64_t seed) {
        return image_to_array(generate_vessel_phantom(grid, seed).image);
      },
      py::arg("grid"), py::arg("seed"));
  m.def(
      "augment",
      [](const Array& image, std::uint64_t seed) {
        Phantom p;
        p.image = image_from_array(image);
        return image_to_array(augment(p, seed).image);
      },
      py::arg("image"), py::arg("seed"));

  m.def("ssim",
        [](const Array& a, const Array& b) {
          return ssim(image_from_array(a), image_from_array(b));
        });
  m.def("pearson_correlation", [](const Array& a, const Array& b) {
    return pearson_correlation(image_from_array(a), image_from_array(b));
  });
  m.def("rmse", [](const Array& a, const Array& b) {
    return rmse(image_from_array(a), image_from_array(b));
  });
  m.def("psnr", [](const Array& a, const Array& b) {
    return psnr(image_from_array(a), image_from_array(b));
  });

  m.def(
      "andmask_aggregate",
      [](const Array& env_grads, double tau) {
        if (env_grads.ndim() != 2)
          throw std::invalid_argument("expected a 2D array (environments, parameters)");
        std::vector<GradientSet> grads(static_cast<std::size_t>(env_grads.shape(0)));
        const auto n = static_cast<std::size_t>(env_grads.shape(1));
        const double* src = env_grads.data();
        for (auto& g : grads) {
          g.values.assign(src, src + n);
          src += n;
        }
        double survival = 0.0;
        const GradientSet out = andmask_aggregate(grads, tau, &survival);
        py::array_t<double> arr(static_cast<py::ssize_t>(n));
        std::copy(out.values.begin(), out.values.end(), arr.mutable_data());
        return py::make_tuple(arr, survival);
      },
      py::arg("env_grads"), py::arg("tau"),
      "masked mean gradient and the surviving-component fraction");

  m.def("network_parameter_count",
        [](const NetworkConfig& cfg) { return parameter_count(cfg); });
  m.def(
      "init_network",
      [](const NetworkConfig& cfg, std::uint64_t seed) {
        const ParameterSet params = init_network(cfg, seed);
        py::array_t<double> arr(static_cast<py::ssize_t>(params.values.size()));
        std::copy(params.values.begin(), params.values.end(), arr.mutable_data());
        return arr;
      },
      py::arg("config"), py::arg("seed"));
  m.def(
      "network_forward",
      [](const Array& params, const NetworkConfig& cfg, const Array& batch) {
        ParameterSet p;
        p.values.assign(params.data(), params.data() + params.size());
        return batch_to_array(predict(p, cfg, batch_from_array(batch, cfg.input_size)));
      },
      py::arg("params"), py::arg("config"), py::arg("batch"));
  m.def(
      "mse_loss",
      [](const Array& pred, const Array& target) {
        if (pred.ndim() != 3 || target.ndim() != 3)
          throw std::invalid_argument("expected 3D batch arrays (n, h, w)");
        const int size = static_cast<int>(pred.shape(1));
        const LossResult r =
            mse_loss(batch_from_array(pred, size), batch_from_array(target, size));
        return py::make_tuple(r.value, batch_to_array(r.grad));
      },
      py::arg("pred"), py::arg("target"));

  m.def("run_selftest", []() {
    py::list out;
    for (const auto& r : run_selftest(1))
      out.append(py::make_tuple(r.name, r.pass, r.detail));
    return out;
  });
}
