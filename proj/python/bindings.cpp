#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "saii/baselines.hpp"
#include "saii/conditioner.hpp"
#include "saii/config.hpp"
#include "saii/datakit.hpp"
#include "saii/diffcore.hpp"
#include "saii/error.hpp"
#include "saii/evalkit.hpp"
#include "saii/experiments.hpp"
#include "saii/sampler.hpp"
#include "saii/seisforward.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace saii;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array2D to_array2d(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2D array");
  const auto m = static_cast<std::size_t>(a.shape(0)), n = static_cast<std::size_t>(a.shape(1));
  return Array2D(m, n, std::vector<double>(a.data(), a.data() + m * n));
}

Array to_numpy(const Array2D& a) {
  Array out({a.rows(), a.cols()});
  std::copy(a.data(), a.data() + a.size(), out.mutable_data());
  return out;
}

Array to_numpy(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// JSON crosses the boundary as text through Python's json module.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Seismic impedance inversion with conditional latent diffusion";

  // Most derived first.
  static py::handle error = py::exception<Error>(m, "Error", PyExc_RuntimeError).release();
  static py::handle validation = py::exception<ValidationError>(m, "ValidationError", PyExc_ValueError).release();
  static py::handle parameter = py::exception<ParameterError>(m, "ParameterError", PyExc_ValueError).release();
  static py::handle dimension = py::exception<DimensionError>(m, "DimensionError", PyExc_ValueError).release();
  static py::handle domain = py::exception<DomainError>(m, "DomainError", PyExc_ValueError).release();
  static py::handle mismatch = py::exception<CheckpointMismatch>(m, "CheckpointMismatch", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      PyErr_SetString(validation.ptr(), e.what());
    } catch (const ParameterError& e) {
      PyErr_SetString(parameter.ptr(), e.what());
    } catch (const DimensionError& e) {
      PyErr_SetString(dimension.ptr(), e.what());
    } catch (const DomainError& e) {
      PyErr_SetString(domain.ptr(), e.what());
    } catch (const CheckpointMismatch& e) {
      PyErr_SetString(mismatch.ptr(), e.what());
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), e.what());
    }
  });

  // Forward model
  m.def("reflectivity", [](const Array& z) { return to_numpy(seis::reflectivity(to_vector(z))); }, py::arg("z"));
  m.def(
      "ricker",
      [](double freq, double dt, int half_length, double phase) {
        return to_numpy(seis::ricker(freq, dt, half_length, phase).samples);
      },
      py::arg("freq_hz"), py::arg("dt") = 0.002, py::arg("half_length") = 0, py::arg("phase_deg") = 0.0);
  m.def(
      "synthesize",
      [](const Array& z, double freq, double dt, double phase) {
        return to_numpy(seis::synthesize(to_array2d(z), seis::ricker(freq, dt, 0, phase)));
      },
      py::arg("impedance"), py::arg("freq_hz") = 30.0, py::arg("dt") = 0.002, py::arg("phase_deg") = 0.0);
  m.def(
      "misfit",
      [](const Array& z, const Array& d, double freq, double dt, double phase) {
        const auto mg = seis::misfit_and_gradient(to_array2d(z), to_array2d(d), seis::ricker(freq, dt, 0, phase));
        return py::make_tuple(mg.value, to_numpy(mg.gradient));
      },
      py::arg("impedance"), py::arg("seismic"), py::arg("freq_hz") = 30.0, py::arg("dt") = 0.002,
      py::arg("phase_deg") = 0.0, "Returns (misfit, gradient).");
  m.def(
      "add_noise",
      [](const Array& d, double snr_db, std::uint64_t seed, double freq, double dt) {
        const auto [lo, hi] = seis::default_noise_band(freq, dt);
        return to_numpy(seis::add_bandpass_noise(to_array2d(d), {snr_db, lo, hi, seed}, dt));
      },
      py::arg("seismic"), py::arg("snr_db"), py::arg("seed") = 0, py::arg("freq_hz") = 30.0, py::arg("dt") = 0.002);

  // Data
  m.def(
      "random_layered_model",
      [](std::size_t depth, std::size_t traces, std::uint64_t seed) {
        return to_numpy(data::random_layered_model(depth, traces, {}, seed).values);
      },
      py::arg("depth") = 64, py::arg("traces") = 64, py::arg("seed") = 0);
  m.def(
      "lowpass",
      [](const Array& z, double cutoff, double dt) {
        return to_numpy(data::lowpass_impedance({to_array2d(z), dt, "py"}, cutoff, dt).values);
      },
      py::arg("impedance"), py::arg("cutoff_hz") = 6.0, py::arg("dt") = 0.002);
  m.def(
      "haar",
      [](const Array& x) {
        const auto c = cond::hwt2d(to_array2d(x));
        return py::make_tuple(to_numpy(c.ll), to_numpy(c.lh), to_numpy(c.hl), to_numpy(c.hh));
      },
      py::arg("x"), "One level of the orthonormal 2D Haar transform: (LL, LH, HL, HH).");

  // Diffusion arithmetic
  m.def(
      "alpha_bar", [](int T) { return to_numpy(diff::make_linear_schedule(T).alpha_bar); }, py::arg("T") = 1000);
  m.def(
      "resample_moments",
      [](int t, double gamma, int T) {
        const auto r = sampling::resample_moments(diff::make_linear_schedule(T), t, gamma);
        return py::make_tuple(r.weight_z0, r.weight_zt, r.variance);
      },
      py::arg("t"), py::arg("gamma"), py::arg("T") = 1000);
  m.def(
      "ddim_timesteps", [](int steps, int T) { return sampling::ddim_timesteps(steps, T); }, py::arg("num_steps"),
      py::arg("T") = 1000);

  // Metrics
  m.def("psnr", [](const Array& a, const Array& b) { return eval::psnr_capped(to_array2d(a), to_array2d(b)); },
        py::arg("estimate"), py::arg("truth"));
  m.def("ssim", [](const Array& a, const Array& b) { return eval::ssim(to_array2d(a), to_array2d(b)); },
        py::arg("estimate"), py::arg("truth"));
  m.def("pcc", [](const Array& a, const Array& b) { return eval::pcc(to_array2d(a), to_array2d(b)); },
        py::arg("estimate"), py::arg("truth"));
  m.def("rre", [](const Array& a, const Array& b) { return eval::rre(to_array2d(a), to_array2d(b)); },
        py::arg("estimate"), py::arg("truth"));
  m.def(
      "evaluate",
      [](const Array& a, const Array& b, std::vector<std::size_t> wells) {
        return to_py(eval::evaluate(to_array2d(a), to_array2d(b), wells).to_json());
      },
      py::arg("estimate"), py::arg("truth"), py::arg("well_traces") = std::vector<std::size_t>{});

  // Inversion
  m.def(
      "tv_invert",
      [](const Array& d, const Array& l, double freq, double dt, double phase, const py::object& cfg) {
        const auto tv = base::TvConfig::from_json(config::merge(base::TvConfig{}.to_json(), from_py(cfg)));
        const auto r = base::tv_invert(to_array2d(d), {to_array2d(l), dt, "py"}, seis::ricker(freq, dt, 0, phase), tv);
        py::list log;
        for (const auto& e : r.log)
          log.append(py::dict(py::arg("iteration") = e.iteration, py::arg("objective") = e.objective,
                              py::arg("gap") = e.gap));
        return py::make_tuple(to_numpy(r.impedance.values), log);
      },
      py::arg("seismic"), py::arg("lowfreq"), py::arg("freq_hz") = 30.0, py::arg("dt") = 0.002,
      py::arg("phase_deg") = 0.0, py::arg("config") = py::none(), "Returns (impedance, log).");
  m.def(
      "invert",
      [](const Array& d, const Array& l, const fs::path& diffusion_ckpt, const fs::path& codec_ckpt, double freq,
         double dt, double phase, const py::object& cfg) {
        const auto sc =
            sampling::SamplerConfig::from_json(config::merge(sampling::SamplerConfig{}.to_json(), from_py(cfg)));
        sampling::InversionResult r;
        {
          py::gil_scoped_release release;
          r = sampling::invert(to_array2d(d), {to_array2d(l), dt, "py"}, seis::ricker(freq, dt, 0, phase),
                               diffusion_ckpt, codec_ckpt, sc);
        }
        return py::make_tuple(to_numpy(r.impedance.values), to_py(r.sidecar()));
      },
      py::arg("seismic"), py::arg("lowfreq"), py::arg("diffusion_ckpt"), py::arg("codec_ckpt"),
      py::arg("freq_hz") = 30.0, py::arg("dt") = 0.002, py::arg("phase_deg") = 0.0, py::arg("config") = py::none(),
      "Conditional diffusion inversion. Returns (impedance, sidecar).");

  // Configuration and experiments
  m.def("default_config", [] { return to_py(config::defaults()); });
  m.def(
      "resolve_config",
      [](const py::object& overrides, std::optional<fs::path> file) {
        std::vector<std::string> ov;
        const nlohmann::json items = from_py(overrides);
        for (const auto& [k, v] : items.items()) ov.push_back(k + "=" + v.dump());
        return to_py(config::resolve(file, ov, std::nullopt).to_json());
      },
      py::arg("overrides") = py::none(), py::arg("file") = py::none(),
      "Resolves the configuration; overrides map dotted keys to values.");
  m.def(
      "run_experiment",
      [](const std::string& name, const py::object& cfg) {
        const auto c = config::ExperimentConfig::from_json(config::merge(config::defaults(), from_py(cfg)));
        c.validate();
        nlohmann::json out;
        {
          py::gil_scoped_release release;
          out = exp::run_experiment(name, c);
        }
        return to_py(out);
      },
      py::arg("name"), py::arg("config") = py::none());
  m.def("experiment_names", &exp::experiment_names);
  m.attr("__version__") = SAII_VERSION;
}
