#include "mld/models/diffusion.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "mld/error.hpp"

namespace mld {

NoiseSchedule make_schedule(size_t T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  NoiseSchedule s{T, kind, std::vector<double>(T), std::vector<double>(T), std::vector<double>(T)};
  const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
  double prod = 1;
  for (size_t t = 0; t < T; ++t) {
    const double f = T == 1 ? 0.0 : double(t) / double(T - 1);
    s.beta[t] = kind == ScheduleKind::scaled_linear ? std::pow(a + f * (b - a), 2) : beta_start + f * (beta_end - beta_start);
    s.alpha[t] = 1 - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

Tensor q_sample(const Tensor& z0, size_t t, const Tensor& eps, const NoiseSchedule& s) {
  if (t >= s.T) throw Error("q_sample: t=" + std::to_string(t) + " outside [0, " + std::to_string(s.T) + ")");
  if (z0.dims() != eps.dims()) throw ShapeError("q_sample: z0 " + shape_str(z0.dims()) + " vs eps " + shape_str(eps.dims()));
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1 - s.alpha_bar[t]);
  Tensor out = z0;
  for (size_t i = 0; i < out.size(); ++i) out[i] = real(a * z0[i] + b * eps[i]);
  return out;
}

Tensor cfg_combine(const Tensor& eps_c, const Tensor& eps_u, double s) {
  if (eps_c.dims() != eps_u.dims()) throw ShapeError("cfg_combine: " + shape_str(eps_c.dims()) + " vs " + shape_str(eps_u.dims()));
  if (s == 1) return eps_c;
  if (s == 0) return eps_u;
  Tensor out = eps_c;
  for (size_t i = 0; i < out.size(); ++i) out[i] = real(s * eps_c[i] + (1 - s) * eps_u[i]);
  return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, size_t t, std::optional<size_t> t_prev,
                 const NoiseSchedule& s, double eta, uint64_t seed) {
  if (t >= s.T) throw Error("ddim_step: t out of range");
  if (t_prev && *t_prev >= t) throw Error("ddim_step: t_prev must precede t");
  if (z_t.dims() != eps_hat.dims()) throw ShapeError("ddim_step: z_t and eps dims differ");
  const double ab = s.alpha_bar[t];
  const double ab_prev = t_prev ? s.alpha_bar[*t_prev] : 1.0;
  const double sigma = eta * std::sqrt((1 - ab_prev) / (1 - ab)) * std::sqrt(1 - ab / ab_prev);
  const double rest = 1 - ab_prev - sigma * sigma;
  if (rest < -1e-12) throw Error("ddim_step: sigma^2 exceeds 1 - alpha_bar_prev (eta too large)");
  const double dir = std::sqrt(std::max(rest, 0.0));
  const double ra = std::sqrt(ab), rb = std::sqrt(1 - ab), rp = std::sqrt(ab_prev);
  Tensor out = z_t;
  Rng rng(seed, 0x6464696d);
  for (size_t i = 0; i < out.size(); ++i) {
    const double z0 = (double(z_t[i]) - rb * eps_hat[i]) / ra;
    double v = rp * z0 + dir * eps_hat[i];
    if (sigma > 0) v += sigma * rng.normal();
    out[i] = real(v);
  }
  return out;
}

Tensor ddpm_step_with_noise(const Tensor& z_t, const Tensor& eps_hat, size_t t, const NoiseSchedule& s, const Tensor& xi) {
  if (t == 0) throw Error("ddpm_step: t counts from 1; t=0 is the clean sample");
  if (t > s.T) throw Error("ddpm_step: t out of range");
  if (z_t.dims() != eps_hat.dims() || z_t.dims() != xi.dims()) throw ShapeError("ddpm_step: dims differ");
  const size_t i = t - 1;
  const double beta = s.beta[i], ab = s.alpha_bar[i];
  const double ab_prev = i > 0 ? s.alpha_bar[i - 1] : 1.0;
  const double coef = beta / std::sqrt(1 - ab), inv = 1 / std::sqrt(s.alpha[i]);
  const double sd = t > 1 ? std::sqrt(beta * (1 - ab_prev) / (1 - ab)) : 0.0;
  Tensor out = z_t;
  for (size_t k = 0; k < out.size(); ++k) out[k] = real((double(z_t[k]) - coef * eps_hat[k]) * inv + sd * xi[k]);
  return out;
}

Tensor ddpm_step(const Tensor& z_t, const Tensor& eps_hat, size_t t, const NoiseSchedule& s, uint64_t seed) {
  Rng rng(seed, 0x6464706d);
  return ddpm_step_with_noise(z_t, eps_hat, t, s, rng.normal_tensor(z_t.dims()));
}

std::vector<size_t> timestep_subsequence(size_t T, size_t k) {
  if (k < 1 || k > T) throw ConfigError("inference steps " + std::to_string(k) + " outside [1, " + std::to_string(T) + "]");
  if (k == 1) return {T - 1};
  std::vector<size_t> seq(k);
  for (size_t i = 0; i < k; ++i) seq[i] = i * (T - 1) / (k - 1);
  return seq;
}

void DenoiserConfig::validate() const {
  if (token_dim == 0 || max_tokens == 0) throw ConfigError("denoiser: token_dim and max_tokens must be positive");
  nn::validate({.layers = layers, .dim = dim, .heads = heads, .ff_dim = ff_dim, .use_skip = use_skip}, "denoiser");
}

Denoiser::Denoiser(const DenoiserConfig& cfg, ParamStore& store, const std::string& name, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  in_proj_ = nn::Linear(store, name + ".in", cfg.token_dim, cfg.dim, rng);
  time_1_ = nn::Linear(store, name + ".time1", cfg.dim, cfg.dim, rng);
  time_2_ = nn::Linear(store, name + ".time2", cfg.dim, cfg.dim, rng);
  stack_ = nn::SkipTransformer(store, name + ".tf",
                               {.layers = cfg.layers, .dim = cfg.dim, .heads = cfg.heads, .ff_dim = cfg.ff_dim,
                                .use_skip = cfg.use_skip, .cross = cfg.injection == Injection::cross_attention},
                               rng);
  out_proj_ = nn::Linear(store, name + ".out", cfg.dim, cfg.token_dim, rng);
  pe_ = nn::sinusoidal_table(cfg.max_tokens, cfg.dim);
}

Var Denoiser::forward(const Var& z_t, std::span<const size_t> lengths, std::span<const size_t> t,
                      std::span<const Var> cond) const {
  const size_t B = lengths.size();
  if (B == 0 || t.size() != B || cond.size() != B) throw ShapeError("denoiser: lengths, timesteps and conditions must align");
  if (z_t.cols() != cfg_.token_dim) throw ShapeError("denoiser: token width " + std::to_string(z_t.cols()) + " != " + std::to_string(cfg_.token_dim));
  ++calls_;
  std::vector<Tensor> pe_parts;
  size_t total = 0;
  for (size_t L : lengths) {
    if (L < 1 || L > cfg_.max_tokens) throw ShapeError("denoiser: sample of " + std::to_string(L) + " tokens exceeds capacity " + std::to_string(cfg_.max_tokens));
    pe_parts.push_back(slice_rows(pe_, 0, L));
    total += L;
  }
  if (z_t.rows() != total) throw ShapeError("denoiser: z_t rows do not match lengths");
  for (const auto& c : cond)
    if (c && c.cols() != cfg_.dim) throw ShapeError("denoiser: condition width " + std::to_string(c.cols()) + " != " + std::to_string(cfg_.dim));

  const Var h = add(in_proj_(z_t), constant(concat_rows(pe_parts)));
  std::vector<double> tpos(t.begin(), t.end());
  const Var temb = time_2_(silu(time_1_(constant(nn::sinusoidal_embedding(tpos, cfg_.dim)))));

  const bool cross = cfg_.injection == Injection::cross_attention;
  std::vector<Var> parts, memory_parts;
  std::vector<AttnSegment> self_segs, cross_segs;
  std::vector<size_t> readout;
  size_t start = 0, off = 0, mem = 0;
  for (size_t b = 0; b < B; ++b) {
    const size_t m = cond[b] ? cond[b].rows() : 0;
    parts.push_back(slice_rows(temb, b, 1));
    size_t len = 1;
    if (m > 0 && !cross) {
      parts.push_back(cond[b]);
      len += m;
    }
    parts.push_back(slice_rows(h, off, lengths[b]));
    for (size_t i = 0; i < lengths[b]; ++i) readout.push_back(start + len + i);
    len += lengths[b];
    self_segs.push_back({start, start + len, start, start + len});
    if (cross) {
      cross_segs.push_back({start, start + len, mem, mem + m});
      if (m > 0) memory_parts.push_back(cond[b]);
      mem += m;
    }
    start += len;
    off += lengths[b];
  }
  Var memory;
  if (!memory_parts.empty()) memory = concat_rows(memory_parts);
  const Var out = stack_.forward(concat_rows(parts), self_segs, memory ? &memory : nullptr, cross_segs);
  return out_proj_(gather_rows(out, readout));
}

Var diffusion_loss(const EpsFn& model, const Tensor& z0, std::span<const size_t> lengths, std::span<const Var> cond,
                   const Var& null_tok, const NoiseSchedule& s, double p, Rng& rng, DiffusionDraws* draws) {
  const size_t B = lengths.size();
  if (B == 0) throw Error("diffusion_loss: empty batch");
  if (cond.size() != B) throw ShapeError("diffusion_loss: one condition per sample required");
  if (p < 0 || p > 1) throw ConfigError("diffusion_loss: dropout outside [0, 1]");
  DiffusionDraws d{std::vector<size_t>(B), std::vector<bool>(B), rng.normal_tensor(z0.dims())};
  Tensor z_t = z0;
  std::vector<Var> used(B);
  size_t row = 0;
  const size_t C = z0.cols();
  for (size_t b = 0; b < B; ++b) {
    d.t[b] = rng.below(s.T);
    d.dropped[b] = rng.uniform() < p;
    used[b] = d.dropped[b] ? null_tok : cond[b];
    const double a = std::sqrt(s.alpha_bar[d.t[b]]), sb = std::sqrt(1 - s.alpha_bar[d.t[b]]);
    for (size_t i = row * C; i < (row + lengths[b]) * C; ++i) z_t[i] = real(a * z0[i] + sb * d.eps[i]);
    row += lengths[b];
  }
  if (row != z0.rows()) throw ShapeError("diffusion_loss: z0 rows do not match lengths");
  const Var pred = model(constant(z_t), lengths, d.t, used);
  const Var loss = scale(sum(square(sub(pred, constant(d.eps)))), 1.0 / double(B));
  if (draws) *draws = std::move(d);
  return loss;
}

Tensor sample_latent(const Denoiser& dn, const Var& cond, const Var& null_tok, size_t rows, const NoiseSchedule& s,
                     const SamplerSpec& sampler, const GuidanceParams& guidance, uint64_t seed) {
  NoGradGuard ng;
  const size_t lengths[] = {rows};
  auto eps = [&](const Tensor& z, size_t t) {
    const size_t ts[] = {t};
    const Var zc = constant(z);
    const Var c[] = {cond};
    const Tensor ec = dn.forward(zc, lengths, ts, c).value();
    if (guidance.scale == 1) return ec;
    const Var u[] = {null_tok};
    return cfg_combine(ec, dn.forward(zc, lengths, ts, u).value(), guidance.scale);
  };
  return run_sampler(eps, Rng(seed, 0x7a54).normal_tensor({rows, dn.config().token_dim}), s, sampler, seed);
}

Tensor run_sampler(const std::function<Tensor(const Tensor&, size_t)>& eps, Tensor z, const NoiseSchedule& s,
                   const SamplerSpec& sampler, uint64_t noise_seed) {
  const Rng noise(noise_seed, 0x6e6f697365);
  if (sampler.method == SamplerMethod::ddim) {
    const auto seq = timestep_subsequence(s.T, sampler.inference_steps);
    for (size_t i = seq.size(); i-- > 0;) {
      const std::optional<size_t> prev = i > 0 ? std::optional<size_t>(seq[i - 1]) : std::nullopt;
      z = ddim_step(z, eps(z, seq[i]), seq[i], prev, s, sampler.eta, noise.fork(i).next_u64());
    }
  } else {
    for (size_t t = s.T; t >= 1; --t) z = ddpm_step(z, eps(z, t - 1), t, s, noise.fork(t).next_u64());
  }
  return z;
}

std::vector<GaussianLatent> encode_corpus(const MotionVae& vae, std::span<const Tensor> data) {
  NoGradGuard ng;
  std::vector<GaussianLatent> out;
  const size_t n = vae.config().n_latent, chunk = 32;
  for (size_t b0 = 0; b0 < data.size(); b0 += chunk) {
    const auto batch = data.subspan(b0, std::min(chunk, data.size() - b0));
    auto [mu, ls] = vae.encode_batch(batch);
    for (size_t i = 0; i < batch.size(); ++i)
      out.push_back({slice_rows(mu.value(), i * n, n), slice_rows(ls.value(), i * n, n)});
  }
  return out;
}

std::vector<EpochLog> train_diffusion(const Denoiser& dn, const ConditionEmbedder& emb, ParamStore& store,
                                      std::span<const GaussianLatent> latents, std::span<const Condition> conds,
                                      const TextEmbedProvider* provider, const NoiseSchedule& s,
                                      const DiffusionTrainOptions& opts) {
  if (latents.empty()) throw Error("train_diffusion: empty corpus");
  if (latents.size() != conds.size()) throw ShapeError("train_diffusion: one condition per latent required");
  if (opts.batch_size == 0) throw ConfigError("train_diffusion: batch_size must be positive");
  const size_t n = latents[0].mu.rows();
  if (latents[0].mu.cols() != dn.config().token_dim)
    throw IncompatibleError("latent width " + std::to_string(latents[0].mu.cols()) + " does not match denoiser token width " +
                            std::to_string(dn.config().token_dim));
  std::vector<EpochLog> logs;
  if (opts.epochs == 0) return logs;
  AdamW optim(store, opts.optim);
  const EpsFn model = [&dn](const Var& z, std::span<const size_t> l, std::span<const size_t> t, std::span<const Var> c) {
    return dn.forward(z, l, t, c);
  };
  const Rng root(opts.seed, 0x6469666675);
  std::vector<size_t> order(latents.size());
  auto good = store.snapshot();
  for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng er = root.fork(epoch);
    std::iota(order.begin(), order.end(), size_t(0));
    er.shuffle(std::span<size_t>(order));
    EpochLog log{.epoch = epoch + 1};
    size_t seen = 0;
    for (size_t b0 = 0, step = 0; b0 < order.size(); b0 += opts.batch_size, ++step) {
      Rng br = er.fork(step + 1);
      std::vector<Tensor> z0;
      std::vector<Var> cond;
      std::vector<size_t> lengths;
      for (size_t i = b0; i < std::min(order.size(), b0 + opts.batch_size); ++i) {
        const auto& g = latents[order[i]];
        z0.push_back(reparameterize(g, br.next_u64()));
        cond.push_back(emb.embed(conds[order[i]], provider));
        lengths.push_back(n);
      }
      try {
        const Var loss = diffusion_loss(model, concat_rows(z0), lengths, cond, emb.null_tokens(), s, opts.cond_dropout, br);
        const double v = optim.step(loss);
        if (!std::isfinite(v)) throw NonFiniteError("diffusion loss is not finite");
        log.loss += v * double(lengths.size());
      } catch (const NonFiniteError& e) {
        store.load(good);
        throw DivergenceError(std::string("diffusion training diverged in epoch ") + std::to_string(epoch + 1) + ": " + e.what(), epoch);
      }
      seen += lengths.size();
    }
    log.loss /= double(seen);
    log.l_data = log.loss;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    good = store.snapshot();
    logs.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
  }
  return logs;
}

}  // namespace mld
