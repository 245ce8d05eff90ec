#include "mld/models/pipeline.hpp"

#include <chrono>

#include "mld/error.hpp"

namespace mld {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

StageTimes& StageTimes::operator+=(const StageTimes& o) {
  condition += o.condition;
  denoise += o.denoise;
  decode += o.decode;
  return *this;
}

LatentGenerator::LatentGenerator(const MotionVae& vae, const Denoiser& dn, const ConditionEmbedder& emb,
                                 const TextEmbedProvider* provider, NoiseSchedule schedule, std::optional<NormStats> stats,
                                 PoseLayout layout, double fps)
    : vae_(vae), dn_(dn), emb_(emb), provider_(provider), schedule_(std::move(schedule)), stats_(std::move(stats)),
      layout_(layout), fps_(fps) {
  const auto& vc = vae.config();
  const auto& dc = dn.config();
  if (dc.token_dim != vc.dim || dc.max_tokens < vc.n_latent)
    throw IncompatibleError("denoiser expects latents of " + std::to_string(dc.max_tokens) + "x" + std::to_string(dc.token_dim) +
                            " but the VAE produces " + std::to_string(vc.n_latent) + "x" + std::to_string(vc.dim));
  if (emb.config().dim != dc.dim)
    throw IncompatibleError("condition width " + std::to_string(emb.config().dim) + " != denoiser width " + std::to_string(dc.dim));
  if (layout.feature_dim() != vc.feature_dim)
    throw IncompatibleError("layout width " + std::to_string(layout.feature_dim()) + " != VAE feature width " +
                            std::to_string(vc.feature_dim));
}

Tensor LatentGenerator::latent(const GenerateRequest& req) const {
  NoGradGuard ng;
  const Var c = emb_.embed(req.condition, provider_);
  return sample_latent(dn_, c, emb_.null_tokens(), vae_.config().n_latent, schedule_, req.sampler, req.guidance, req.seed);
}

MotionSequence LatentGenerator::generate(const GenerateRequest& req, StageTimes* times) const {
  if (req.length < 1 || req.length > vae_.config().max_len)
    throw ConfigError("length " + std::to_string(req.length) + " outside [1, " + std::to_string(vae_.config().max_len) + "]");
  NoGradGuard ng;
  StageTimes st;
  auto t0 = Clock::now();
  const Var c = emb_.embed(req.condition, provider_);
  st.condition = since(t0);
  t0 = Clock::now();
  const Tensor z = sample_latent(dn_, c, emb_.null_tokens(), vae_.config().n_latent, schedule_, req.sampler, req.guidance, req.seed);
  st.denoise = since(t0);
  t0 = Clock::now();
  Tensor x = vae_.decode(z, req.length);
  if (stats_) x = denormalize(x, *stats_);
  st.decode = since(t0);
  if (times) *times = st;
  return {layout_, std::move(x), fps_};
}

RawGenerator::RawGenerator(const Denoiser& dn, const ConditionEmbedder& emb, const TextEmbedProvider* provider,
                           NoiseSchedule schedule, std::optional<NormStats> stats, PoseLayout layout, double fps)
    : dn_(dn), emb_(emb), provider_(provider), schedule_(std::move(schedule)), stats_(std::move(stats)), layout_(layout), fps_(fps) {
  if (dn.config().token_dim != layout.feature_dim())
    throw IncompatibleError("raw denoiser token width " + std::to_string(dn.config().token_dim) + " != feature width " +
                            std::to_string(layout.feature_dim()));
}

MotionSequence RawGenerator::generate(const GenerateRequest& req, StageTimes* times) const {
  if (req.length < 1 || req.length > dn_.config().max_tokens)
    throw ConfigError("length " + std::to_string(req.length) + " outside [1, " + std::to_string(dn_.config().max_tokens) + "]");
  NoGradGuard ng;
  StageTimes st;
  auto t0 = Clock::now();
  const Var c = emb_.embed(req.condition, provider_);
  st.condition = since(t0);
  t0 = Clock::now();
  Tensor x = sample_latent(dn_, c, emb_.null_tokens(), req.length, schedule_, req.sampler, req.guidance, req.seed);
  if (stats_) x = denormalize(x, *stats_);
  st.denoise = since(t0);
  if (times) *times = st;
  return {layout_, std::move(x), fps_};
}

}  // namespace mld
