#include "mld/cli/bundle.hpp"

#include <cstdio>

#include "mld/error.hpp"

namespace mld {

using json = nlohmann::json;

namespace {

json parse_blob(const Checkpoint& ck) {
  json j = json::parse(ck.config, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("kind") || !j.contains("run"))
    throw FormatError("checkpoint config blob is not a run description");
  return j;
}

std::string blob(const std::string& kind, const RunConfig& cfg, const TextEmbedProvider* provider) {
  json j{{"kind", kind}, {"run", to_json(cfg)}};
  if (provider) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(provider->fingerprint()));
    j["provider_fingerprint"] = hex;
  }
  return canonical_json(j);
}

void expect_kind(const Checkpoint& ck, const std::string& kind) {
  const std::string k = checkpoint_kind(ck);
  if (k != kind) throw IncompatibleError("expected a " + kind + " checkpoint, got a " + k + " checkpoint");
}

void append(Checkpoint& ck, const ParamStore& store, const std::string& prefix) {
  for (auto& [n, t] : store.snapshot()) ck.tensors.emplace_back(prefix + n, std::move(t));
}

DiffusionBundle build(const RunConfig& cfg, const DenoiserConfig& dc) {
  DiffusionBundle b;
  b.config = cfg;
  b.store = std::make_unique<ParamStore>();
  Rng rng(cfg.seed, 0x646966);
  b.emb = std::make_unique<ConditionEmbedder>(*b.store, "cond", cfg.cond_config(), rng);
  b.dn = std::make_unique<Denoiser>(dc, *b.store, "dn", rng);
  b.provider = make_provider(cfg);
  b.schedule = cfg.schedule();
  return b;
}

std::string shape(size_t n, size_t d) { return std::to_string(n) + "x" + std::to_string(d); }

}  // namespace

std::string checkpoint_kind(const Checkpoint& ck) { return parse_blob(ck).at("kind").get<std::string>(); }

RunConfig checkpoint_config(const Checkpoint& ck) { return config_from_json(parse_blob(ck).at("run")); }

Checkpoint pack_vae(const RunConfig& cfg, const MotionVae& vae, const NormStats& stats) {
  Checkpoint ck;
  ck.config = blob("vae", cfg, nullptr);
  append(ck, vae.params(), "");
  ck.tensors.emplace_back("stats.mean", stats.mean);
  ck.tensors.emplace_back("stats.std", stats.std);
  return ck;
}

VaeBundle unpack_vae(const Checkpoint& ck) {
  expect_kind(ck, "vae");
  VaeBundle b;
  b.config = checkpoint_config(ck);
  b.vae = std::make_unique<MotionVae>(b.config.vae_config(), b.config.seed);
  b.vae->params().load(ck.tensors);
  b.stats = {ck.tensor("stats.mean"), ck.tensor("stats.std")};
  const size_t F = b.config.layout().feature_dim();
  if (b.stats.mean.dims() != Shape{1, F} || b.stats.std.dims() != Shape{1, F})
    throw IncompatibleError("vae checkpoint statistics do not match its feature width " + std::to_string(F));
  return b;
}

std::unique_ptr<TextEmbedProvider> make_provider(const RunConfig& cfg) {
  if (cfg.cond_kind() != Condition::Kind::text) return nullptr;
  if (cfg.condition.provider == "table")
    return std::make_unique<FileTableEmbedder>(FileTableEmbedder::load(cfg.condition.table));
  return std::make_unique<HashTextEmbedder>(cfg.condition.provider_dim, cfg.condition.provider_seed);
}

DiffusionBundle make_diffusion(const RunConfig& cfg) { return build(cfg, cfg.denoiser_config()); }

DiffusionBundle make_raw_diffusion(const RunConfig& cfg) {
  DenoiserConfig dc = cfg.denoiser_config();
  dc.token_dim = cfg.layout().feature_dim();
  dc.max_tokens = cfg.data.max_len;
  return build(cfg, dc);
}

Checkpoint pack_diffusion(const DiffusionBundle& b) {
  Checkpoint ck;
  ck.config = blob("diffusion", b.config, b.provider.get());
  append(ck, *b.store, "");
  return ck;
}

DiffusionBundle unpack_diffusion(const Checkpoint& ck) {
  expect_kind(ck, "diffusion");
  DiffusionBundle b = make_diffusion(checkpoint_config(ck));
  b.store->load(ck.tensors);
  const json j = parse_blob(ck);
  if (b.provider && j.contains("provider_fingerprint")) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(b.provider->fingerprint()));
    if (j["provider_fingerprint"].get<std::string>() != hex)
      throw IncompatibleError("text embeddings differ from the ones the model was trained with (fingerprint " +
                              j["provider_fingerprint"].get<std::string>() + ", now " + hex + ")");
  }
  return b;
}

void check_compatible(const DiffusionBundle& dm, const VaeBundle& vae) {
  const auto& want = dm.dn->config();
  const auto& have = vae.vae->config();
  if (want.max_tokens != have.n_latent || want.token_dim != have.dim)
    throw IncompatibleError("diffusion checkpoint expects latents of shape " + shape(want.max_tokens, want.token_dim) +
                            " but the VAE checkpoint produces " + shape(have.n_latent, have.dim));
  if (!(dm.config.layout() == vae.config.layout()))
    throw IncompatibleError("diffusion and VAE checkpoints were trained on different pose layouts");
}

Checkpoint pack_extractors(const ExtractorBundle& b) {
  Checkpoint ck;
  ck.config = blob("extractor", b.config, nullptr);
  if (!b.dual && !b.clf) throw Error("extractor bundle is empty");
  if (b.dual) append(ck, b.dual->params(), "dual/");
  if (b.clf) append(ck, b.clf->params(), "clf/");
  return ck;
}

ExtractorBundle unpack_extractors(const Checkpoint& ck) {
  expect_kind(ck, "extractor");
  ExtractorBundle b;
  b.config = checkpoint_config(ck);
  const ExtractorConfig ec = b.config.extractor_config();
  if (ck.has("dual/stats.mean")) {
    b.dual = std::make_unique<DualEncoder>(ec, b.config.seed);
    b.dual->params().load(ck.tensors, "dual/");
  }
  if (ck.has("clf/stats.mean")) {
    b.clf = std::make_unique<ActionClassifier>(ec, b.config.seed);
    b.clf->params().load(ck.tensors, "clf/");
  }
  return b;
}

const Extractor& ExtractorBundle::features() const {
  if (dual) return *dual;
  if (clf) return *clf;
  throw Error("extractor bundle is empty");
}

}  // namespace mld
