#include "mld/cli/app.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>

#include "CLI11.hpp"
#include "mld/cli/workflow.hpp"
#include "mld/error.hpp"

namespace mld {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Options every subcommand accepts.
struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
  bool allow_any_n = false;
  size_t threads = 1;
  std::string run = "run";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run config");
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set vae.n_latent=2")->take_all();
  sub->add_option("--seed", c.seed, "Seed (default: config, then $MLD_SEED, then 0)");
  sub->add_flag("--allow-any-n", c.allow_any_n, "Accept latent token counts outside 1, 2, 5, 7, 10");
  sub->add_option("--threads", c.threads, "Upper bound on worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--run", c.run, "Run directory");
}

/// Layers base < config file < $MLD_SEED (if no seed yet) < --set < flags.
json user_json(const Common& c, json base = json::object()) {
  if (!c.config.empty()) {
    const json file = read_json_file(c.config);
    if (!file.is_object()) throw ConfigError(c.config + ": expected a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (v.is_object() && base.contains(k) && base[k].is_object()) base[k].update(v, true);
      else base[k] = v;
    }
  }
  if (!base.contains("seed")) {
    if (const char* env = std::getenv("MLD_SEED"); env && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (*end != '\0' || env[0] == '-') throw ConfigError("MLD_SEED must be a non-negative integer, got '" + std::string(env) + "'");
      base["seed"] = uint64_t(v);
    }
  }
  for (const auto& s : c.sets) apply_override(base, s);
  if (c.seed) base["seed"] = *c.seed;
  if (c.allow_any_n) base["allow_any_n"] = true;
  return base;
}

RunConfig resolve(const Common& c, json base = json::object()) {
  RunConfig cfg = config_from_json(user_json(c, std::move(base)));
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + p.string());
  f << s;
  if (!f) throw Error("short write to " + p.string());
}

class RunDir {
 public:
  RunDir(fs::path root, const RunConfig& cfg) : root_(std::move(root)) {
    for (const char* d : {"checkpoints", "samples", "metrics"}) fs::create_directories(root_ / d);
    write_text(root_ / "config.json", canonical_json(to_json(cfg)));
  }
  fs::path checkpoint(const std::string& name) const { return root_ / "checkpoints" / name; }
  fs::path metrics(const std::string& name) const { return root_ / "metrics" / name; }
  void log(const json& event) const {
    std::ofstream f(root_ / "log.jsonl", std::ios::app);
    f << event.dump() << "\n";
  }

 private:
  fs::path root_;
};

fs::path manifest_path(const fs::path& p) {
  if (fs::is_directory(p)) return p / "manifest.jsonl";
  return p;
}

EpochFn epoch_logger(const RunDir& run, const std::string& stage, size_t epochs, std::ostream& out) {
  const size_t every = std::max<size_t>(1, epochs / 20);
  return [&run, stage, every, epochs, &out](const EpochLog& e) {
    run.log({{"stage", stage}, {"epoch", e.epoch}, {"loss", e.loss}, {"l_data", e.l_data}, {"l_reg", e.l_reg}, {"seconds", e.seconds}});
    if (e.epoch % every == 0 || e.epoch == epochs)
      out << stage << " epoch " << e.epoch << "/" << epochs << " loss " << std::setprecision(6) << e.loss << "\n" << std::flush;
  };
}

/// Generated motions: either <dir>/manifest.jsonl or one rep_NN/manifest.jsonl per repetition.
std::vector<std::vector<MotionItem>> load_generated(const fs::path& dir, const PoseLayout& layout) {
  std::vector<std::vector<MotionItem>> reps;
  if (fs::exists(dir / "manifest.jsonl")) {
    reps.push_back(load_corpus(dir / "manifest.jsonl", layout));
    return reps;
  }
  if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory of generated motions");
  std::vector<fs::path> rep_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("rep_", 0) == 0 && fs::exists(e.path() / "manifest.jsonl"))
      rep_dirs.push_back(e.path());
  std::ranges::sort(rep_dirs);
  if (rep_dirs.empty()) throw Error(dir.string() + " holds neither manifest.jsonl nor rep_*/manifest.jsonl");
  for (const auto& d : rep_dirs) reps.push_back(load_corpus(d / "manifest.jsonl", layout));
  return reps;
}

std::string rep_name(size_t r) {
  std::ostringstream s;
  s << "rep_" << std::setw(2) << std::setfill('0') << r;
  return s.str();
}

std::string motion_name(size_t i) {
  std::ostringstream s;
  s << "motions/" << std::setw(6) << std::setfill('0') << i << ".mot";
  return s.str();
}

Condition parse_prompt(const RunConfig& cfg, const std::string& prompt) {
  switch (cfg.cond_kind()) {
    case Condition::Kind::action: {
      size_t pos = 0;
      size_t id = 0;
      try {
        id = std::stoul(prompt, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != prompt.size() || id >= cfg.data.n_actions)
        throw ConfigError("action-conditioned model: prompt '" + prompt + "' is not an action id in [0, " +
                          std::to_string(cfg.data.n_actions) + ")");
      return Condition::from_action(id);
    }
    case Condition::Kind::text: return Condition::from_text(prompt);
    default: return Condition::none();
  }
}

/// Sampler flags shared by sample and bench.
struct SamplerFlags {
  std::optional<size_t> steps;
  std::optional<double> scale, eta;
  std::optional<std::string> method;

  void add(CLI::App* sub) {
    sub->add_option("--steps", steps, "Inference steps");
    sub->add_option("--scale", scale, "Guidance scale");
    sub->add_option("--eta", eta, "DDIM eta");
    sub->add_option("--method", method, "ddim or ddpm");
  }
  void apply(json& j) const {
    if (steps) j["sampler"]["steps"] = *steps;
    if (scale) j["sampler"]["guidance_scale"] = *scale;
    if (eta) j["sampler"]["eta"] = *eta;
    if (method) j["sampler"]["method"] = *method;
  }
};

struct Loaded {
  DiffusionBundle dm;
  VaeBundle vae;
};

/// Loads both checkpoints and resolves the sampling config on top of the diffusion one.
Loaded load_models(const std::string& dm_path, const std::string& vae_path) {
  Loaded l{unpack_diffusion(load_checkpoint(dm_path)), unpack_vae(load_checkpoint(vae_path))};
  check_compatible(l.dm, l.vae);
  return l;
}

RunConfig sampling_config(const Common& common, const SamplerFlags& flags, const RunConfig& trained) {
  json j = user_json(common, to_json(trained));
  flags.apply(j);
  RunConfig cfg = config_from_json(j);
  cfg.validate();
  // Only sampling knobs and the seed may differ from the trained model.
  RunConfig out = trained;
  out.sampler = cfg.sampler;
  out.seed = cfg.seed;
  out.eval = cfg.eval;
  return out;
}

int cmd_synth(const Common& common, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = resolve(common);
  SynthSpec spec{.n_sequences = cfg.data.n_sequences,
                 .n_actions = cfg.data.n_actions,
                 .min_len = cfg.data.min_len,
                 .max_len = cfg.data.max_len,
                 .fps = cfg.data.fps,
                 .seed = cfg.seed};
  if (!(cfg.layout() == synth_layout()))
    throw ConfigError("synthetic motions use " + std::to_string(synth_layout().n_joints) +
                      " joints with the root included; set data.n_joints and data.include_root accordingly");
  const auto entries = synth_corpus(spec, out_dir);
  write_text(fs::path(out_dir) / "config.json", canonical_json(to_json(cfg)));
  out << "wrote " << entries.size() << " motions to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train_vae(const Common& common, const std::string& data, std::ostream& out) {
  const RunConfig cfg = resolve(common);
  const auto items = load_corpus(manifest_path(data), cfg.layout());
  const RunDir run(common.run, cfg);
  std::vector<EpochLog> logs;
  auto log = epoch_logger(run, "vae", cfg.vae.train.epochs, out);
  const VaeBundle b = run_train_vae(cfg, items, [&](const EpochLog& e) {
    logs.push_back(e);
    log(e);
  });
  const auto path = run.checkpoint("vae.mldc");
  save_checkpoint(path, pack_vae(b.config, *b.vae, b.stats));
  json m{{"epochs", logs.size()}};
  if (!logs.empty()) {
    m["first_l_data"] = logs.front().l_data;
    m["final_l_data"] = logs.back().l_data;
    m["final_loss"] = logs.back().loss;
  }
  write_text(run.metrics("vae.json"), m.dump(2) + "\n");
  out << "saved " << path.string() << "\n";
  return kExitOk;
}

int cmd_train_diffusion(const Common& common, const std::string& data, const std::string& vae_path, std::ostream& out) {
  const VaeBundle vae = unpack_vae(load_checkpoint(vae_path));
  RunConfig cfg = resolve(common);
  const auto items = load_corpus(manifest_path(data), vae.config.layout());
  std::vector<EpochLog> logs;
  std::unique_ptr<RunDir> run;
  {
    RunConfig echoed = cfg;
    echoed.vae = vae.config.vae;
    echoed.data.n_joints = vae.config.data.n_joints;
    echoed.data.include_root = vae.config.data.include_root;
    echoed.data.max_len = vae.config.data.max_len;
    echoed.validate();
    run = std::make_unique<RunDir>(common.run, echoed);
  }
  auto log = epoch_logger(*run, "diffusion", cfg.diffusion.train.epochs, out);
  const DiffusionBundle b = run_train_diffusion(cfg, vae, items, [&](const EpochLog& e) {
    logs.push_back(e);
    log(e);
  });
  const auto path = run->checkpoint("dm.mldc");
  save_checkpoint(path, pack_diffusion(b));
  json m{{"epochs", logs.size()}};
  if (!logs.empty()) {
    m["first_loss"] = logs.front().loss;
    m["final_loss"] = logs.back().loss;
  }
  write_text(run->metrics("diffusion.json"), m.dump(2) + "\n");
  out << "saved " << path.string() << "\n";
  return kExitOk;
}

struct SampleArgs {
  std::string ckpt, vae, out, manifest;
  std::optional<std::string> text;
  std::optional<size_t> action, length;
  size_t count = 1, reps = 1;
  SamplerFlags flags;
};

int cmd_sample(const Common& common, const SampleArgs& a, std::ostream& out) {
  Loaded models = load_models(a.ckpt, a.vae);
  const RunConfig cfg = sampling_config(common, a.flags, models.dm.config);
  Sampler sampler(models.dm, models.vae);
  sampler.settings = cfg.sampler;

  if (a.manifest.empty()) {
    if (!a.length) throw ConfigError("sample: --length is required unless --manifest is given");
    Condition c = Condition::none();
    if (a.text && a.action) throw ConfigError("sample: give --text or --action, not both");
    if (a.text) c = parse_prompt(cfg, *a.text);
    if (a.action) c = parse_prompt(cfg, std::to_string(*a.action));
    if (cfg.cond_kind() != Condition::Kind::none && c.kind == Condition::Kind::none)
      throw ConfigError("sample: this model is " + cfg.condition.kind + "-conditioned; pass --" +
                        (cfg.cond_kind() == Condition::Kind::text ? "text" : "action"));
    const MotionSequence m = sampler.generate(c, *a.length, cfg.seed);
    save_motion(a.out, m);
    write_text(fs::path(a.out).string() + ".config.json", canonical_json(to_json(cfg)));
    out << "wrote " << m.frames() << "x" << m.data.cols() << " motion to " << a.out << "\n";
    return kExitOk;
  }

  const auto entries = load_manifest(a.manifest);
  if (a.count == 0 || a.reps == 0) throw ConfigError("sample: --count and --reps must be positive");
  const fs::path root(a.out);
  fs::create_directories(root);
  write_text(root / "config.json", canonical_json(to_json(cfg)));
  size_t total = 0;
  for (size_t r = 0; r < a.reps; ++r) {
    const fs::path dir = root / rep_name(r);
    std::vector<CorpusEntry> written;
    size_t index = 0;
    for (const auto& e : entries) {
      Condition c = Condition::none();
      if (cfg.cond_kind() == Condition::Kind::text) {
        if (!e.text) throw ConfigError("sample: manifest entry " + e.path + " has no text");
        c = Condition::from_text(*e.text);
      } else if (cfg.cond_kind() == Condition::Kind::action) {
        if (!e.action_id) throw ConfigError("sample: manifest entry " + e.path + " has no action_id");
        c = Condition::from_action(*e.action_id);
      }
      const size_t length = a.length.value_or(e.length);
      for (size_t k = 0; k < a.count; ++k, ++index) {
        const MotionSequence m = sampler.generate(c, length, sample_seed(cfg.seed, r, index));
        CorpusEntry w{.path = motion_name(index), .text = e.text, .action_id = e.action_id, .length = m.frames(), .fps = m.fps};
        save_motion(dir / w.path, m);
        written.push_back(std::move(w));
      }
    }
    save_manifest(dir / "manifest.jsonl", written);
    total += written.size();
  }
  out << "wrote " << total << " motions under " << root.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string real, gen, metrics = "fid,div", extractor, fit_extractor, out;
};

int cmd_evaluate(const Common& common, const EvalArgs& a, std::ostream& out) {
  ExtractorBundle ext;
  RunConfig cfg;
  std::vector<MotionItem> real;
  if (!a.extractor.empty()) {
    ext = unpack_extractors(load_checkpoint(a.extractor));
    json j = user_json(common, to_json(ext.config));
    RunConfig user = config_from_json(j);
    user.validate();
    cfg = ext.config;
    cfg.eval = user.eval;
    cfg.seed = user.seed;
  } else {
    cfg = resolve(common);
  }
  if (!a.real.empty()) real = load_corpus(manifest_path(a.real), cfg.layout());
  const auto metrics = expand_metrics(a.metrics);

  fs::path report_path = a.out.empty() ? fs::path(common.run) / "metrics" / "eval.json" : fs::path(a.out);
  if (a.extractor.empty()) {
    if (real.empty()) throw ConfigError("evaluate: --real is required to fit an extractor");
    const RunDir run(common.run, cfg);
    ext = run_train_extractors(cfg, real, epoch_logger(run, "extractor", cfg.extractor.train.epochs, out));
    const fs::path dest = a.fit_extractor.empty() ? run.checkpoint("extractor.mldc") : fs::path(a.fit_extractor);
    save_checkpoint(dest, pack_extractors(ext));
    out << "saved extractor " << dest.string() << "\n";
  }

  const auto reps = load_generated(a.gen, cfg.layout());
  const EvalReport rep = evaluate_sets(cfg, ext, real, reps, {.metrics = metrics, .threads = common.threads});
  json report{{"metrics", json::object()}, {"params", rep.params}, {"config", to_json(cfg)}};
  std::string csv = "metric,value,ci95,reps\n";
  for (const auto& v : rep.values) {
    report["metrics"][v.metric] = {{"metric", v.metric}, {"value", v.value}, {"ci95", v.ci95}, {"reps", v.reps}};
    std::ostringstream line;
    line << std::setprecision(10) << v.metric << "," << v.value << "," << v.ci95 << "," << v.reps << "\n";
    csv += line.str();
  }
  write_text(report_path, report.dump(2) + "\n");
  fs::path csv_path = report_path;
  csv_path.replace_extension(".csv");
  write_text(csv_path, csv);
  out << report["metrics"].dump(2) << "\n";
  return kExitOk;
}

struct BenchArgs {
  std::string ckpt, vae, prompts_file, out;
  std::vector<std::string> prompts;
  size_t warmup = 1, reps = 3, length = 64;
  bool raw = false;
  SamplerFlags flags;
};

json stages_json(const StageTimes& s) {
  return {{"condition", s.condition}, {"denoise", s.denoise}, {"decode", s.decode}, {"total", s.total()}};
}

int cmd_bench(const Common& common, const BenchArgs& a, std::ostream& out) {
  std::vector<std::string> prompts = a.prompts;
  if (!a.prompts_file.empty()) {
    std::ifstream f(a.prompts_file);
    if (!f) throw Error("cannot open " + a.prompts_file);
    for (std::string line; std::getline(f, line);)
      if (!line.empty()) prompts.push_back(line);
  }
  Loaded models = load_models(a.ckpt, a.vae);
  const RunConfig cfg = sampling_config(common, a.flags, models.dm.config);
  Sampler sampler(models.dm, models.vae);
  sampler.settings = cfg.sampler;
  if (prompts.empty() && cfg.cond_kind() == Condition::Kind::none) prompts.push_back("");
  if (prompts.empty()) throw ConfigError("bench: pass --prompt or --prompts");
  std::vector<Condition> conds;
  for (const auto& p : prompts) conds.push_back(parse_prompt(cfg, p));
  auto index_of = [&prompts](const std::string& p) { return size_t(std::ranges::find(prompts, p) - prompts.begin()); };

  const AitsReport latent = aits_bench(
      [&](const std::string& p, uint64_t seed, StageTimes& t) { sampler.generate(conds[index_of(p)], a.length, seed, &t); },
      prompts, a.warmup, a.reps);
  json report{{"prompts", latent.prompts},
              {"warmup", latent.warmup},
              {"reps", latent.reps},
              {"length", a.length},
              {"steps", cfg.sampler.steps},
              {"latent", {{"aits", latent.seconds}, {"stages", stages_json(latent.stages)}}},
              {"config", to_json(cfg)}};
  if (a.raw) {
    // Same width, depth and condition path, but noising the frames themselves. Untrained:
    // only its cost matters.
    RunConfig rc = cfg;
    rc.data = models.vae.config.data;
    const DiffusionBundle raw = make_raw_diffusion(rc);
    const RawGenerator gen(*raw.dn, *raw.emb, raw.provider.get(), raw.schedule, models.vae.stats, rc.layout(), rc.data.fps);
    const GuidanceParams g = cfg.guidance();
    const SamplerSpec spec = cfg.sampler_spec();
    const AitsReport rr = aits_bench(
        [&](const std::string& p, uint64_t seed, StageTimes& t) {
          gen.generate({.condition = conds[index_of(p)], .length = a.length, .sampler = spec, .guidance = g, .seed = seed}, &t);
        },
        prompts, a.warmup, a.reps);
    report["raw"] = {{"aits", rr.seconds}, {"stages", stages_json(rr.stages)}};
    report["speedup"] = rr.seconds / latent.seconds;
  }
  const fs::path path = a.out.empty() ? fs::path(common.run) / "metrics" / "bench.json" : fs::path(a.out);
  write_text(path, report.dump(2) + "\n");
  json shown = report;
  shown.erase("config");
  out << shown.dump(2) << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& target, std::ostream& out) {
  const fs::path p(target);
  json j;
  if (fs::is_directory(p) || p.extension() == ".jsonl") {
    const auto entries = load_manifest(manifest_path(p));
    size_t texts = 0, actions = 0, lo = SIZE_MAX, hi = 0;
    for (const auto& e : entries) {
      texts += e.text.has_value();
      actions += e.action_id.has_value();
      lo = std::min(lo, e.length);
      hi = std::max(hi, e.length);
    }
    j = {{"type", "manifest"}, {"entries", entries.size()}, {"with_text", texts}, {"with_action", actions}};
    if (!entries.empty()) j["length_range"] = {lo, hi};
  } else if (p.extension() == ".mot") {
    const Tensor t = load_tensor(p);
    j = {{"type", "tensor"}, {"dims", t.dims()}, {"finite", t.all_finite()}};
    if (t.size()) {
      const auto [mn, mx] = std::ranges::minmax(t.data());
      j["min"] = mn;
      j["max"] = mx;
    }
  } else {
    const Checkpoint ck = load_checkpoint(p);
    json tensors = json::array();
    size_t scalars = 0;
    for (const auto& [name, t] : ck.tensors) {
      tensors.push_back({{"name", name}, {"dims", t.dims()}});
      scalars += t.size();
    }
    json blob = json::parse(ck.config, nullptr, false);
    j = {{"type", "checkpoint"}, {"scalars", scalars}, {"tensors", tensors}, {"config", blob.is_discarded() ? json(ck.config) : blob}};
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent motion diffusion: data, training, sampling, evaluation and benchmarking", "mld"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic motion corpus");
  add_common(synth, common);
  synth->add_option("--out", synth_out, "Corpus directory")->required();

  std::string data, vae_path;
  auto* tv = app.add_subcommand("train-vae", "Train the motion VAE");
  add_common(tv, common);
  tv->add_option("--data", data, "Corpus directory or manifest")->required();

  auto* td = app.add_subcommand("train-diffusion", "Train the latent denoiser on a frozen VAE");
  add_common(td, common);
  td->add_option("--data", data, "Corpus directory or manifest")->required();
  td->add_option("--vae", vae_path, "VAE checkpoint")->required();

  SampleArgs sa;
  auto* sm = app.add_subcommand("sample", "Generate motions");
  add_common(sm, common);
  sm->add_option("--ckpt", sa.ckpt, "Diffusion checkpoint")->required();
  sm->add_option("--vae", sa.vae, "VAE checkpoint")->required();
  sm->add_option("--text", sa.text, "Text prompt");
  sm->add_option("--action", sa.action, "Action id");
  sm->add_option("--length", sa.length, "Frames");
  sm->add_option("--out", sa.out, "Output .mot file, or a directory with --manifest")->required();
  sm->add_option("--manifest", sa.manifest, "Generate for every entry of a manifest");
  sm->add_option("--count", sa.count, "Samples per manifest entry");
  sm->add_option("--reps", sa.reps, "Independent repetitions of the whole set");
  sa.flags.add(sm);

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score generated motions");
  add_common(ev, common);
  ev->add_option("--real", ea.real, "Real corpus directory or manifest");
  ev->add_option("--gen", ea.gen, "Generated motions directory")->required();
  ev->add_option("--metrics", ea.metrics, "Comma-separated: fid, div, mm, rprecision, r1, r2, r3, mm_dist, acc, all");
  ev->add_option("--extractor", ea.extractor, "Extractor checkpoint; fitted on --real when absent");
  ev->add_option("--fit-extractor", ea.fit_extractor, "Where to save a freshly fitted extractor");
  ev->add_option("--out", ea.out, "Report path (JSON; a CSV is written next to it)");

  BenchArgs ba;
  auto* bn = app.add_subcommand("bench", "Average inference time per prompt, batch size one");
  add_common(bn, common);
  bn->add_option("--ckpt", ba.ckpt, "Diffusion checkpoint")->required();
  bn->add_option("--vae", ba.vae, "VAE checkpoint")->required();
  bn->add_option("--prompt", ba.prompts, "Prompt (repeatable)");
  bn->add_option("--prompts", ba.prompts_file, "File with one prompt per line");
  bn->add_option("--warmup", ba.warmup, "Discarded passes over the prompts");
  bn->add_option("--reps", ba.reps, "Timed passes over the prompts")->check(CLI::PositiveNumber);
  bn->add_option("--length", ba.length, "Frames per motion");
  bn->add_flag("--raw", ba.raw, "Also time an equal-capacity raw-sequence denoiser");
  bn->add_option("--out", ba.out, "Report path");
  ba.flags.add(bn);

  std::string target;
  auto* in = app.add_subcommand("inspect", "Describe a checkpoint, .mot file or manifest");
  in->add_option("path", target, "File or corpus directory")->required();

  const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
  const bool known = !args.empty() && std::ranges::any_of(subs, [&](const CLI::App* s) { return s->get_name() == args[0]; });
  if (!args.empty() && !args[0].empty() && args[0][0] != '-' && !known) {
    err << "usage error: unknown subcommand '" << args[0]
        << "'; expected one of synth-data, train-vae, train-diffusion, sample, evaluate, bench, inspect\n";
    return kExitUsage;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(common, synth_out, out);
    if (*tv) return cmd_train_vae(common, data, out);
    if (*td) return cmd_train_diffusion(common, data, vae_path, out);
    if (*sm) return cmd_sample(common, sa, out);
    if (*ev) return cmd_evaluate(common, ea, out);
    if (*bn) return cmd_bench(common, ba, out);
    if (*in) return cmd_inspect(target, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mld
