#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mld/models/conditioning.hpp"
#include "mld/models/vae.hpp"
#include "mld/nn/layers.hpp"
#include "mld/numerics/optim.hpp"

namespace mld {

enum class ScheduleKind { scaled_linear, linear };

/// Index t is 0-based: beta[0] is the first noising step.
struct NoiseSchedule {
  size_t T = 0;
  ScheduleKind kind = ScheduleKind::scaled_linear;
  std::vector<double> beta, alpha, alpha_bar;
};

NoiseSchedule make_schedule(size_t T, double beta_start, double beta_end, ScheduleKind kind = ScheduleKind::scaled_linear);

/// sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) eps.
Tensor q_sample(const Tensor& z0, size_t t, const Tensor& eps, const NoiseSchedule& s);
/// s * eps_c + (1 - s) * eps_u.
Tensor cfg_combine(const Tensor& eps_c, const Tensor& eps_u, double s);

/// One DDIM update from index t to t_prev (nullopt: the clean end, alpha_bar = 1).
/// Noise is drawn from `seed` only when eta > 0.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, size_t t, std::optional<size_t> t_prev,
                 const NoiseSchedule& s, double eta, uint64_t seed);
/// Ancestral DDPM update z_t -> z_{t-1} with t counted from 1 (t = 1 is the last step and
/// adds no noise); the model is evaluated at index t - 1.
Tensor ddpm_step(const Tensor& z_t, const Tensor& eps_hat, size_t t, const NoiseSchedule& s, uint64_t seed);
/// Same update with caller-supplied standard-normal noise xi.
Tensor ddpm_step_with_noise(const Tensor& z_t, const Tensor& eps_hat, size_t t, const NoiseSchedule& s, const Tensor& xi);

/// k evenly spaced indices in [0, T), strictly increasing, last one T - 1.
std::vector<size_t> timestep_subsequence(size_t T, size_t k);

enum class Injection { concat, cross_attention };

struct DenoiserConfig {
  size_t layers = 9;
  size_t heads = 4;
  size_t dim = 256;
  size_t ff_dim = 1024;
  bool use_skip = true;
  Injection injection = Injection::concat;
  /// Width of the noisy tokens (latent width, or the feature width for a raw-sequence model).
  size_t token_dim = 256;
  /// Positional capacity for the noisy tokens.
  size_t max_tokens = 16;

  void validate() const;
};

/// Transformer noise predictor over packed samples.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, ParamStore& store, const std::string& name, Rng& rng);

  const DenoiserConfig& config() const { return cfg_; }

  /// z_t holds `lengths[b]` token rows per sample; cond[b] is an m_b x dim block (m_b may be
  /// zero, passed as an empty Var). Returns a prediction with the dims of z_t.
  Var forward(const Var& z_t, std::span<const size_t> lengths, std::span<const size_t> t,
              std::span<const Var> cond) const;

  /// Number of forward calls made so far.
  size_t calls() const { return calls_.load(); }

 private:
  DenoiserConfig cfg_;
  nn::Linear in_proj_, out_proj_, time_1_, time_2_;
  nn::SkipTransformer stack_;
  Tensor pe_;
  mutable std::atomic<size_t> calls_{0};
};

struct GuidanceParams {
  double scale = 7.5;
  double dropout = 0.1;
};

enum class SamplerMethod { ddim, ddpm };

struct SamplerSpec {
  SamplerMethod method = SamplerMethod::ddim;
  size_t inference_steps = 50;
  double eta = 0;
};

/// Predicts noise for a packed batch; used so the objective can be checked with oracles.
using EpsFn = std::function<Var(const Var& z_t, std::span<const size_t> lengths, std::span<const size_t> t,
                                std::span<const Var> cond)>;

struct DiffusionDraws {
  std::vector<size_t> t;
  std::vector<bool> dropped;
  Tensor eps;
};

/// Mean over the batch of |eps - eps_theta(q_sample(z0, t, eps), t, c)|^2. Each sample's
/// condition is replaced by `null_tok` with probability p. `z0` rows are grouped by `lengths`.
Var diffusion_loss(const EpsFn& model, const Tensor& z0, std::span<const size_t> lengths, std::span<const Var> cond,
                   const Var& null_tok, const NoiseSchedule& s, double p, Rng& rng, DiffusionDraws* draws = nullptr);

/// Reverse process from z_T ~ N(0, I) for one sample of `rows` x token_dim. With scale 1
/// only the conditional branch runs.
Tensor sample_latent(const Denoiser& dn, const Var& cond, const Var& null_tok, size_t rows, const NoiseSchedule& s,
                     const SamplerSpec& sampler, const GuidanceParams& guidance, uint64_t seed);

/// Runs the chosen sampler from z_T given any noise predictor eps(z, t) with 0-based t.
/// `noise_seed` only matters for stochastic steps.
Tensor run_sampler(const std::function<Tensor(const Tensor&, size_t)>& eps, Tensor z_T, const NoiseSchedule& s,
                   const SamplerSpec& sampler, uint64_t noise_seed);

struct DiffusionTrainOptions {
  size_t epochs = 1;
  size_t batch_size = 32;
  AdamWConfig optim;
  double cond_dropout = 0.1;
  uint64_t seed = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Frozen-encoder latents: posterior parameters computed once without gradient tracking.
std::vector<GaussianLatent> encode_corpus(const MotionVae& vae, std::span<const Tensor> data);

/// Trains denoiser and condition embedder (both in `store`) on latents drawn from the
/// frozen encoder's posteriors. `conds` pairs with `latents`.
std::vector<EpochLog> train_diffusion(const Denoiser& dn, const ConditionEmbedder& emb, ParamStore& store,
                                      std::span<const GaussianLatent> latents, std::span<const Condition> conds,
                                      const TextEmbedProvider* provider, const NoiseSchedule& s,
                                      const DiffusionTrainOptions& opts);

}  // namespace mld
