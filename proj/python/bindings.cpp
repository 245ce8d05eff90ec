#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <optional>
#include <sstream>

#include "mld/cli/app.hpp"
#include "mld/cli/workflow.hpp"
#include "mld/error.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mld;

namespace {

using Array = py::array_t<real, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() == 0 || a.size() == 0) throw ShapeError("expected a non-empty array");
  Shape dims(a.shape(), a.shape() + a.ndim());
  return Tensor(dims, std::vector<real>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.dims().begin(), t.dims().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c = config_from_json(nlohmann::json::parse(text));
  c.validate();
  return c;
}

std::vector<MotionItem> corpus(const fs::path& p, const RunConfig& cfg) {
  return load_corpus(fs::is_directory(p) ? p / "manifest.jsonl" : p, cfg.layout());
}

py::list epoch_logs(const std::vector<EpochLog>& logs) {
  py::list out;
  for (const auto& l : logs)
    out.append(py::dict(py::arg("epoch") = l.epoch, py::arg("loss") = l.loss, py::arg("l_data") = l.l_data,
                        py::arg("l_reg") = l.l_reg, py::arg("seconds") = l.seconds));
  return out;
}

/// Both checkpoints loaded once, sampling on demand.
class Generator {
 public:
  Generator(const fs::path& dm, const fs::path& vae)
      : dm_(unpack_diffusion(load_checkpoint(dm))), vae_(unpack_vae(load_checkpoint(vae))), sampler_(dm_, vae_) {
    sampler_.settings = dm_.config.sampler;
  }

  Array generate(std::optional<std::string> text, std::optional<size_t> action, size_t length, uint64_t seed) {
    if (text && action) throw ConfigError("give text or action, not both");
    Condition c = text ? Condition::from_text(*text) : action ? Condition::from_action(*action) : Condition::none();
    MotionSequence m;
    {
      py::gil_scoped_release release;
      m = sampler_.generate(c, length, seed);
    }
    return to_array(m.data);
  }

  std::string config() const { return canonical_json(to_json(dm_.config)); }
  RunConfig::Sampler& settings() { return sampler_.settings; }

 private:
  DiffusionBundle dm_;
  VaeBundle vae_;
  Sampler sampler_;
};

}  // namespace

PYBIND11_MODULE(_mld, m) {
  m.doc() = "Latent motion diffusion core";

  auto base = py::register_exception<Error>(m, "MldError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<IncompatibleError>(m, "IncompatibleError", base);
  py::register_exception<ShapeError>(m, "ShapeError", base);

  m.def("default_config", [] { return canonical_json(defaults_json()); });
  m.def(
      "resolve_config",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        nlohmann::json j = text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text);
        for (const auto& o : overrides) apply_override(j, o);
        RunConfig c = config_from_json(j);
        c.validate();
        return canonical_json(to_json(c));
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the mld command line; returns (exit code, stdout, stderr).");

  m.def(
      "synth_corpus",
      [](const std::string& config, const fs::path& out) {
        const RunConfig c = parse_config(config);
        return synth_corpus({.n_sequences = c.data.n_sequences,
                             .n_actions = c.data.n_actions,
                             .min_len = c.data.min_len,
                             .max_len = c.data.max_len,
                             .fps = c.data.fps,
                             .seed = c.seed},
                            out)
            .size();
      },
      py::arg("config"), py::arg("out"), "Writes a synthetic corpus; returns the number of motions.");

  m.def(
      "train_vae",
      [](const std::string& config, const fs::path& data, const fs::path& out) {
        const RunConfig c = parse_config(config);
        const auto items = corpus(data, c);
        std::vector<EpochLog> logs;
        {
          py::gil_scoped_release release;
          const VaeBundle b = run_train_vae(c, items, [&](const EpochLog& l) { logs.push_back(l); });
          save_checkpoint(out, pack_vae(b.config, *b.vae, b.stats));
        }
        return epoch_logs(logs);
      },
      py::arg("config"), py::arg("data"), py::arg("out"));

  m.def(
      "train_diffusion",
      [](const std::string& config, const fs::path& data, const fs::path& vae_ckpt, const fs::path& out) {
        const RunConfig c = parse_config(config);
        const auto items = corpus(data, c);
        std::vector<EpochLog> logs;
        {
          py::gil_scoped_release release;
          const VaeBundle vae = unpack_vae(load_checkpoint(vae_ckpt));
          const DiffusionBundle b = run_train_diffusion(c, vae, items, [&](const EpochLog& l) { logs.push_back(l); });
          save_checkpoint(out, pack_diffusion(b));
        }
        return epoch_logs(logs);
      },
      py::arg("config"), py::arg("data"), py::arg("vae"), py::arg("out"));

  py::class_<RunConfig::Sampler>(m, "SamplerSettings")
      .def_readwrite("method", &RunConfig::Sampler::method)
      .def_readwrite("steps", &RunConfig::Sampler::steps)
      .def_readwrite("eta", &RunConfig::Sampler::eta)
      .def_readwrite("guidance_scale", &RunConfig::Sampler::guidance_scale);

  py::class_<Generator>(m, "Generator")
      .def(py::init<const fs::path&, const fs::path&>(), py::arg("diffusion"), py::arg("vae"))
      .def("generate", &Generator::generate, py::arg("text") = std::nullopt, py::arg("action") = std::nullopt,
           py::arg("length"), py::arg("seed") = 0, "L x F features of one sampled motion.")
      .def_property_readonly("config", &Generator::config)
      .def_property_readonly("settings", &Generator::settings, py::return_value_policy::reference_internal);

  m.def(
      "load_checkpoint",
      [](const fs::path& p) {
        const Checkpoint ck = load_checkpoint(p);
        py::dict tensors;
        for (const auto& [name, t] : ck.tensors) tensors[py::str(name)] = to_array(t);
        return py::make_tuple(ck.config, tensors);
      },
      py::arg("path"), "Returns (config JSON, {name: array}).");
  m.def(
      "save_checkpoint",
      [](const fs::path& p, const std::string& config, const std::vector<std::pair<std::string, Array>>& tensors) {
        Checkpoint ck{config, {}};
        for (const auto& [name, a] : tensors) ck.tensors.emplace_back(name, to_tensor(a));
        save_checkpoint(p, ck);
      },
      py::arg("path"), py::arg("config"), py::arg("tensors"));

  m.def("load_tensor", [](const fs::path& p) { return to_array(load_tensor(p)); }, py::arg("path"));
  m.def("save_tensor", [](const fs::path& p, const Array& a) { save_tensor(p, to_tensor(a)); }, py::arg("path"), py::arg("array"));

  m.def("fid", [](const Array& a, const Array& b) { return fid(to_tensor(a), to_tensor(b)); }, py::arg("a"), py::arg("b"));
  m.def(
      "diversity",
      [](const Array& f, size_t x_d, uint64_t seed) {
        Rng rng(seed);
        return diversity(to_tensor(f), x_d, rng);
      },
      py::arg("features"), py::arg("subset"), py::arg("seed") = 0);
  m.def(
      "multimodality",
      [](const std::vector<Array>& groups, size_t j_m, size_t x_m, uint64_t seed) {
        std::vector<Tensor> g;
        for (const auto& a : groups) g.push_back(to_tensor(a));
        Rng rng(seed);
        return multimodality(g, j_m, x_m, rng);
      },
      py::arg("groups"), py::arg("conditions"), py::arg("pairs"), py::arg("seed") = 0);
  m.def(
      "retrieval_metrics",
      [](const Array& text, const Array& motion, size_t pool, uint64_t seed) {
        Rng rng(seed);
        const auto s = retrieval_metrics(to_tensor(text), to_tensor(motion), pool, rng);
        return py::dict(py::arg("r1") = s.r1, py::arg("r2") = s.r2, py::arg("r3") = s.r3, py::arg("mm_dist") = s.mm_dist);
      },
      py::arg("text"), py::arg("motion"), py::arg("pool") = 32, py::arg("seed") = 0);
  m.def(
      "joint_errors",
      [](const Array& gt, const Array& pred) {
        const auto e = joint_errors(to_tensor(gt), to_tensor(pred));
        return py::dict(py::arg("mpjpe") = e.mpjpe, py::arg("pampjpe") = e.pampjpe, py::arg("accl") = e.accl);
      },
      py::arg("gt"), py::arg("pred"), "gt and pred are L x 3P joint positions.");
  m.def("procrustes_align", [](const Array& gt, const Array& pred) { return to_array(procrustes_align(to_tensor(gt), to_tensor(pred))); },
        py::arg("gt"), py::arg("pred"));

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def(py::init([](size_t T, double b0, double b1, const std::string& kind) {
             if (kind != "scaled_linear" && kind != "linear") throw ConfigError("unknown schedule '" + kind + "'");
             return make_schedule(T, b0, b1, kind == "linear" ? ScheduleKind::linear : ScheduleKind::scaled_linear);
           }),
           py::arg("T") = 1000, py::arg("beta_start") = 8.5e-4, py::arg("beta_end") = 0.012, py::arg("kind") = "scaled_linear")
      .def_readonly("T", &NoiseSchedule::T)
      .def_readonly("beta", &NoiseSchedule::beta)
      .def_readonly("alpha_bar", &NoiseSchedule::alpha_bar)
      .def("q_sample", [](const NoiseSchedule& s, const Array& z0, size_t t, const Array& eps) {
        return to_array(q_sample(to_tensor(z0), t, to_tensor(eps), s));
      }, py::arg("z0"), py::arg("t"), py::arg("eps"))
      .def("ddim_step", [](const NoiseSchedule& s, const Array& z, const Array& eps, size_t t, std::optional<size_t> t_prev, double eta, uint64_t seed) {
        return to_array(ddim_step(to_tensor(z), to_tensor(eps), t, t_prev, s, eta, seed));
      }, py::arg("z_t"), py::arg("eps"), py::arg("t"), py::arg("t_prev") = std::nullopt, py::arg("eta") = 0.0, py::arg("seed") = 0);

  m.def("cfg_combine", [](const Array& c, const Array& u, double s) { return to_array(cfg_combine(to_tensor(c), to_tensor(u), s)); },
        py::arg("eps_cond"), py::arg("eps_uncond"), py::arg("scale"));
}
