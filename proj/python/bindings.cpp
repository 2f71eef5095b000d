#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "tfm/cli_harness.hpp"
#include "tfm/flow_transport.hpp"
#include "tfm/metrics.hpp"
#include "tfm/ode_integrator.hpp"
#include "tfm/paradox_demo.hpp"
#include "tfm/sequence_data.hpp"
#include "tfm/synth_data.hpp"

namespace py = pybind11;
using namespace tfm;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <class T, class A>
Tensor<T> to_tensor(const A& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(shape, AlignedVector<T>(a.data(), a.data() + a.size()));
}

template <class T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.begin(), t.end(), out.mutable_data());
  return out;
}

nlohmann::json to_json(const py::object& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict sequence_dict(const ImageSequence& s) {
  py::dict d;
  d["frames"] = to_numpy(s.frames);
  d["presence"] = s.presence;
  d["times"] = s.times;
  d["target"] = to_numpy(s.target);
  d["target_time"] = s.target_time;
  return d;
}

ImageSequence sequence_from(const F32& frames, const std::vector<bool>& presence, const F32& target) {
  ImageSequence s;
  s.frames = to_tensor<float>(frames);
  s.presence = presence;
  for (std::size_t i = 0; i < presence.size(); ++i) s.times.push_back(static_cast<double>(i));
  s.target = to_tensor<float>(target);
  s.target_time = static_cast<double>(presence.size());
  s.validate();
  return s;
}

SsimOptions ssim_mode(const std::string& mode) {
  SsimOptions o;
  if (mode == "volume3d") o.mode = SsimMode::volume3d;
  else if (mode != "slice2d") throw std::invalid_argument("mode must be slice2d or volume3d");
  return o;
}

cli::Context context(const py::object& config, const std::string& out) {
  cli::Context ctx;
  ctx.config = cli::ExperimentConfig::from_json(to_json(config));
  ctx.out = out.empty() ? std::filesystem::path(ctx.config.output_dir) : std::filesystem::path(out);
  return ctx;
}

}  // namespace

PYBIND11_MODULE(_tfm, m) {
  m.doc() = "Temporal flow matching core";

  m.def("mse", [](const F32& a, const F32& b) { return mse(to_tensor<float>(a), to_tensor<float>(b)); });
  m.def("nrmse", [](const F32& a, const F32& b) { return nrmse(to_tensor<float>(a), to_tensor<float>(b)); });
  m.def("psnr", [](const F32& a, const F32& b, double peak) { return psnr(to_tensor<float>(a), to_tensor<float>(b), peak); },
        py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def("ssim",
        [](const F32& a, const F32& b, const std::string& mode) {
          return ssim(to_tensor<float>(a), to_tensor<float>(b), ssim_mode(mode));
        },
        py::arg("a"), py::arg("b"), py::arg("mode") = "slice2d");

  m.def("sparsity_fill", [](const F32& frames, const std::vector<bool>& presence) {
    const auto f = fill_frames(to_tensor<float>(frames), presence);
    return py::make_tuple(to_numpy(f.frames), f.fill_source);
  });
  m.def("last_context_image", [](const F32& frames, const std::vector<bool>& presence, const F32& target) {
    return to_numpy(last_context_image(sequence_from(frames, presence, target)));
  });
  m.def("interpolate", [](const F32& x0, const F32& x1, double tau) {
    return to_numpy(interpolate(to_tensor<float>(x0), to_tensor<float>(x1), tau).x_tau);
  });
  m.def("true_velocity", [](const F32& x0, const F32& x1) {
    return to_numpy(true_velocity(to_tensor<float>(x0), to_tensor<float>(x1)));
  });
  m.def("fm_loss", [](const F32& p, const F32& t) { return fm_loss(to_tensor<float>(p), to_tensor<float>(t)); });

  m.def("integrate",
        [](const std::function<F64(F64, double)>& field, const F64& x0, const std::string& method, int steps) {
          SolverConfig cfg{parse_solver_method(method), steps, Reduction::mean};
          Field<double> f = [&](const Tensor<double>& x, double tau) { return to_tensor<double>(field(to_numpy(x), tau)); };
          return to_numpy(integrate<double>(f, to_tensor<double>(x0), cfg));
        },
        py::arg("field"), py::arg("x0"), py::arg("method") = "euler", py::arg("steps") = 10);

  m.def("default_dynamics_spec", [] { return from_json(DynamicsSpec{}.to_json()); });
  m.def("generate_cohort",
        [](const py::object& spec, std::size_t n, std::size_t first_index) {
          const auto c = generate_cohort(DynamicsSpec::from_json(to_json(spec)), n, first_index);
          py::list out;
          for (std::size_t i = 0; i < c.sequences.size(); ++i) {
            auto d = sequence_dict(c.sequences[i]);
            d["oracle"] = to_numpy(c.oracles[i]);
            out.append(d);
          }
          return out;
        },
        py::arg("spec"), py::arg("n"), py::arg("first_index") = 0);

  m.def("paradox_table", [] {
    const auto t = paradox::paradox_mse_table(paradox::build_scene());
    py::dict d;
    d["full_image_mse"] = t.full_image_mse.over(64);
    d["lci_mse"] = t.lci_mse.over(64);
    d["difference_mse"] = t.difference_mse.over(64);
    return d;
  });
  m.def("paradox_report", [] {
    std::ostringstream os;
    const bool ok = cli::cmd_paradox(os);
    return py::make_tuple(ok, os.str());
  });

  m.def("default_config", [] { return from_json(cli::ExperimentConfig{}.to_json()); });
  m.def("config_hash", [](const py::object& config) {
    return cli::config_hash(cli::ExperimentConfig::from_json(to_json(config)));
  });
  auto run = [](auto fn) {
    return [fn](const py::object& config, const std::string& out) {
      const auto ctx = context(config, out);
      py::gil_scoped_release release;
      fn(ctx);
    };
  };
  m.def("generate", run([](const cli::Context& c) { cli::cmd_generate(c); }), py::arg("config"), py::arg("out") = "");
  m.def("train", run([](const cli::Context& c) { cli::cmd_train(c); }), py::arg("config"), py::arg("out") = "");
  m.def("evaluate", run([](const cli::Context& c) { cli::cmd_eval(c, c.out / "checkpoint.tfm"); }), py::arg("config"),
        py::arg("out") = "");
}
