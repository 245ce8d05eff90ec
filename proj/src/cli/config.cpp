#include "mld/cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mld/error.hpp"

namespace mld {

using json = nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainSection, epochs, batch_size, lr, weight_decay)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig::Data, n_joints, include_root, fps, n_sequences, n_actions, min_len, max_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig::Vae, n_latent, dim, layers, heads, ff_dim, use_skip, regularize, lambda_reg,
                                   train)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig::Diffusion, dim, layers, heads, ff_dim, use_skip, injection, T, schedule,
                                   beta_start, beta_end, cond_dropout, train)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig::Cond, kind, provider, provider_dim, provider_seed, table, word_wise)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig::Sampler, method, steps, eta, guidance_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig::Extractor, dim, layers, heads, ff_dim, embed_dim, text_dim, temperature,
                                   holdout, train)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig::Eval, diversity_subset, mm_conditions, mm_pairs, retrieval_pool)

namespace {

std::string type_name(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_unsigned()) return "a non-negative integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_object()) return "an object";
  return std::string("a ") + v.type_name();
}

void merge(json& base, const json& over, const std::string& path) {
  if (!over.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (const auto& [k, v] : over.items()) {
    const std::string key = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown config key '" + key + "'");
    json& b = base[k];
    if (b.is_object()) {
      merge(b, v, key);
    } else if (b.is_boolean() && v.is_boolean()) {
      b = v;
    } else if (b.is_number_unsigned() && v.is_number_unsigned()) {
      b = v;
    } else if (b.is_number_float() && v.is_number()) {
      b = v.get<double>();
    } else if (b.is_string() && v.is_string()) {
      b = v;
    } else {
      throw ConfigError("config key '" + key + "' must be " + type_name(b) + ", got " + v.dump());
    }
  }
}

template <class... S>
void one_of(const std::string& key, const std::string& v, S... options) {
  if (((v == options) || ...)) return;
  std::string list;
  ((list += (list.empty() ? "" : ", ") + std::string(options)), ...);
  throw ConfigError(key + " is '" + v + "'; expected one of " + list);
}

void check_train(const TrainSection& t, const std::string& what) {
  if (t.batch_size == 0) throw ConfigError(what + ".train.batch_size must be positive");
  if (!(t.lr > 0)) throw ConfigError(what + ".train.lr must be positive");
  if (t.weight_decay < 0) throw ConfigError(what + ".train.weight_decay must be non-negative");
}

}  // namespace

json to_json(const RunConfig& c) {
  return json{{"seed", c.seed},       {"allow_any_n", c.allow_any_n}, {"data", c.data},
              {"vae", c.vae},         {"diffusion", c.diffusion},     {"condition", c.condition},
              {"sampler", c.sampler}, {"extractor", c.extractor},     {"eval", c.eval}};
}

json defaults_json() { return to_json(RunConfig{}); }

RunConfig config_from_json(const json& j) {
  json merged = defaults_json();
  merge(merged, j, "");
  RunConfig c;
  c.seed = merged.at("seed").get<uint64_t>();
  c.allow_any_n = merged.at("allow_any_n").get<bool>();
  c.data = merged.at("data").get<RunConfig::Data>();
  c.vae = merged.at("vae").get<RunConfig::Vae>();
  c.diffusion = merged.at("diffusion").get<RunConfig::Diffusion>();
  c.condition = merged.at("condition").get<RunConfig::Cond>();
  c.sampler = merged.at("sampler").get<RunConfig::Sampler>();
  c.extractor = merged.at("extractor").get<RunConfig::Extractor>();
  c.eval = merged.at("eval").get<RunConfig::Eval>();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = json::object();
    node = &(*node)[parts[i]];
  }
  *node = std::move(value);
}

std::string canonical_json(const json& j) { return j.dump(2) + "\n"; }

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

VaeConfig RunConfig::vae_config() const {
  VaeConfig v;
  v.feature_dim = layout().feature_dim();
  v.n_latent = vae.n_latent;
  v.dim = vae.dim;
  v.layers = vae.layers;
  v.heads = vae.heads;
  v.ff_dim = vae.ff_dim;
  v.use_skip = vae.use_skip;
  v.lambda_reg = vae.lambda_reg;
  v.regularize = vae.regularize;
  v.max_len = data.max_len;
  return v;
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig d;
  d.layers = diffusion.layers;
  d.heads = diffusion.heads;
  d.dim = diffusion.dim;
  d.ff_dim = diffusion.ff_dim;
  d.use_skip = diffusion.use_skip;
  d.injection = diffusion.injection == "cross_attention" ? Injection::cross_attention : Injection::concat;
  d.token_dim = vae.dim;
  d.max_tokens = vae.n_latent;
  return d;
}

CondConfig RunConfig::cond_config() const {
  return {.provider_dim = condition.provider_dim,
          .dim = diffusion.dim,
          .n_actions = data.n_actions,
          .word_wise = condition.word_wise};
}

NoiseSchedule RunConfig::schedule() const {
  return make_schedule(diffusion.T, diffusion.beta_start, diffusion.beta_end,
                       diffusion.schedule == "linear" ? ScheduleKind::linear : ScheduleKind::scaled_linear);
}

SamplerSpec RunConfig::sampler_spec() const {
  return {.method = sampler.method == "ddpm" ? SamplerMethod::ddpm : SamplerMethod::ddim,
          .inference_steps = sampler.steps,
          .eta = sampler.eta};
}

GuidanceParams RunConfig::guidance() const { return {.scale = sampler.guidance_scale, .dropout = diffusion.cond_dropout}; }

ExtractorConfig RunConfig::extractor_config() const {
  ExtractorConfig e;
  e.layout = layout();
  e.dim = extractor.dim;
  e.layers = extractor.layers;
  e.heads = extractor.heads;
  e.ff_dim = extractor.ff_dim;
  e.embed_dim = extractor.embed_dim;
  e.max_len = data.max_len;
  e.text_dim = extractor.text_dim;
  e.n_actions = data.n_actions;
  return e;
}

Condition::Kind RunConfig::cond_kind() const {
  if (condition.kind == "action") return Condition::Kind::action;
  if (condition.kind == "none") return Condition::Kind::none;
  return Condition::Kind::text;
}

void RunConfig::validate() const {
  if (data.n_joints < 2) throw ConfigError("data.n_joints must be at least 2");
  if (!(data.fps > 0)) throw ConfigError("data.fps must be positive");
  if (data.min_len == 0 || data.min_len > data.max_len) throw ConfigError("data.min_len must be in [1, data.max_len]");
  if (!allow_any_n && std::ranges::find(kLatentTokenOptions, vae.n_latent) == std::end(kLatentTokenOptions))
    throw ConfigError("vae.n_latent = " + std::to_string(vae.n_latent) +
                      " is not a supported latent shape; choose one of 1, 2, 5, 7, 10 (or pass --allow-any-n)");
  vae_config().validate();
  check_train(vae.train, "vae");

  one_of("diffusion.injection", diffusion.injection, "concat", "cross_attention");
  one_of("diffusion.schedule", diffusion.schedule, "scaled_linear", "linear");
  denoiser_config().validate();
  if (diffusion.T == 0) throw ConfigError("diffusion.T must be positive");
  if (!(diffusion.beta_start > 0 && diffusion.beta_start <= diffusion.beta_end && diffusion.beta_end < 1))
    throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  if (diffusion.cond_dropout < 0 || diffusion.cond_dropout > 1) throw ConfigError("diffusion.cond_dropout must be in [0, 1]");
  check_train(diffusion.train, "diffusion");

  one_of("condition.kind", condition.kind, "text", "action", "none");
  one_of("condition.provider", condition.provider, "hash", "table");
  if (condition.provider == "table" && condition.table.empty())
    throw ConfigError("condition.table must name an embedding table when condition.provider is 'table'");
  if (condition.provider_dim == 0) throw ConfigError("condition.provider_dim must be positive");
  if (condition.kind == "action" && data.n_actions == 0) throw ConfigError("action conditioning needs data.n_actions > 0");

  one_of("sampler.method", sampler.method, "ddim", "ddpm");
  if (sampler.steps == 0 || sampler.steps > diffusion.T)
    throw ConfigError("sampler.steps must be in [1, diffusion.T = " + std::to_string(diffusion.T) + "]");
  if (sampler.eta < 0) throw ConfigError("sampler.eta must be non-negative");
  if (!std::isfinite(sampler.guidance_scale)) throw ConfigError("sampler.guidance_scale must be finite");

  extractor_config().validate();
  if (!(extractor.temperature > 0)) throw ConfigError("extractor.temperature must be positive");
  if (extractor.holdout < 0 || extractor.holdout >= 1) throw ConfigError("extractor.holdout must be in [0, 1)");
  check_train(extractor.train, "extractor");

  if (eval.diversity_subset == 0 || eval.mm_conditions == 0 || eval.mm_pairs == 0)
    throw ConfigError("eval subset sizes must be positive");
  if (eval.retrieval_pool < 2) throw ConfigError("eval.retrieval_pool must be at least 2");
}

}  // namespace mld
