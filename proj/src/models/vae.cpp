#include "mld/models/vae.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "mld/error.hpp"

namespace mld {

namespace {

nn::StackConfig stack_config(const VaeConfig& c, bool cross) {
  return {.layers = c.layers, .dim = c.dim, .heads = c.heads, .ff_dim = c.ff_dim, .use_skip = c.use_skip, .cross = cross};
}

Tensor pe_rows(const Tensor& table, std::span<const size_t> lengths) {
  std::vector<Tensor> parts;
  for (size_t L : lengths) parts.push_back(slice_rows(table, 0, L));
  return concat_rows(parts);
}

}  // namespace

void VaeConfig::validate() const {
  if (feature_dim == 0) throw ConfigError("vae: feature_dim must be positive");
  if (n_latent == 0) throw ConfigError("vae: n_latent must be positive");
  if (max_len == 0) throw ConfigError("vae: max_len must be positive");
  if (lambda_reg < 0) throw ConfigError("vae: lambda_reg must be non-negative");
  nn::validate(stack_config(*this, false), "vae");
}

MotionVae::MotionVae(const VaeConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed, 0x766165);
  in_proj_ = nn::Linear(store_, "vae.in", cfg.feature_dim, cfg.dim, rng);
  Tensor tokens = rng.normal_tensor({2 * cfg.n_latent, cfg.dim});
  for (auto& v : tokens.data()) v *= real(0.02);
  dist_tokens_ = store_.add("vae.dist_tokens", std::move(tokens));
  encoder_ = nn::SkipTransformer(store_, "vae.enc", stack_config(cfg, false), rng);
  decoder_ = nn::SkipTransformer(store_, "vae.dec", stack_config(cfg, true), rng);
  out_proj_ = nn::Linear(store_, "vae.out", cfg.dim, cfg.feature_dim, rng);
  pe_ = nn::sinusoidal_table(std::max(cfg.max_len, cfg.n_latent), cfg.dim);
}

void MotionVae::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != cfg_.feature_dim)
    throw ShapeError("vae input " + shape_str(x.dims()) + " does not have feature width " +
                     std::to_string(cfg_.feature_dim));
  if (x.rows() < 1 || x.rows() > cfg_.max_len)
    throw ConfigError("sequence length " + std::to_string(x.rows()) + " outside [1, " + std::to_string(cfg_.max_len) + "]");
}

std::pair<Var, Var> MotionVae::encode_batch(std::span<const Tensor> xs) const {
  if (xs.empty()) throw Error("encode: empty batch");
  std::vector<size_t> lengths;
  for (const auto& x : xs) {
    check_input(x);
    lengths.push_back(x.rows());
  }
  const size_t n = cfg_.n_latent;
  const Var h = add(in_proj_(constant(concat_rows(xs))), constant(pe_rows(pe_, lengths)));

  std::vector<Var> parts;
  std::vector<AttnSegment> segs;
  std::vector<size_t> mu_idx, sigma_idx;
  size_t off = 0, start = 0;
  for (size_t L : lengths) {
    parts.push_back(dist_tokens_);
    parts.push_back(slice_rows(h, off, L));
    segs.push_back({start, start + 2 * n + L, start, start + 2 * n + L});
    for (size_t i = 0; i < n; ++i) {
      mu_idx.push_back(start + i);
      sigma_idx.push_back(start + n + i);
    }
    off += L;
    start += 2 * n + L;
  }
  const Var out = encoder_.forward(concat_rows(parts), segs);
  const Var mu = gather_rows(out, mu_idx);
  // Plain autoencoder: the latent is deterministic.
  if (!cfg_.regularize) return {mu, constant(Tensor::filled(mu.dims(), real(kLogSigmaMin)))};
  return {mu, clamp(gather_rows(out, sigma_idx), kLogSigmaMin, kLogSigmaMax)};
}

Var MotionVae::decode_batch(const Var& z, std::span<const size_t> lengths) const {
  const size_t n = cfg_.n_latent;
  if (z.cols() != cfg_.dim || z.rows() != n * lengths.size())
    throw ShapeError("decode: latent " + shape_str(z.dims()) + " does not hold " + std::to_string(lengths.size()) +
                     " blocks of " + std::to_string(n) + "x" + std::to_string(cfg_.dim));
  std::vector<AttnSegment> self_segs, cross_segs;
  size_t off = 0;
  for (size_t b = 0; b < lengths.size(); ++b) {
    const size_t L = lengths[b];
    if (L < 1 || L > cfg_.max_len)
      throw ConfigError("decode length " + std::to_string(L) + " exceeds positional capacity " + std::to_string(cfg_.max_len));
    self_segs.push_back({off, off + L, off, off + L});
    cross_segs.push_back({off, off + L, b * n, b * n + n});
    off += L;
  }
  const std::vector<size_t> mem_lengths(lengths.size(), n);
  const Var memory = add(z, constant(pe_rows(pe_, mem_lengths)));
  const Var queries = constant(pe_rows(pe_, lengths));
  return out_proj_(decoder_.forward(queries, self_segs, &memory, cross_segs));
}

VaeBatchOutput MotionVae::forward(std::span<const Tensor> xs, const Tensor& eps) const {
  VaeBatchOutput o;
  std::tie(o.mu, o.log_sigma) = encode_batch(xs);
  if (eps.dims() != o.mu.dims()) throw ShapeError("vae forward: noise " + shape_str(eps.dims()) + " vs mu " + shape_str(o.mu.dims()));
  o.z = cfg_.regularize ? add(o.mu, mul(exp(o.log_sigma), constant(eps))) : o.mu;
  std::vector<size_t> lengths;
  for (const auto& x : xs) lengths.push_back(x.rows());
  o.recon = decode_batch(o.z, lengths);
  o.l_data = mse(o.recon, constant(concat_rows(xs)));
  if (cfg_.regularize) {
    o.l_reg = scale(kl_standard_normal(o.mu, o.log_sigma), 1.0 / double(xs.size()));
    o.total = add(o.l_data, scale(o.l_reg, cfg_.lambda_reg));
  } else {
    o.l_reg = constant(Tensor::scalar(0));
    o.total = o.l_data;
  }
  return o;
}

GaussianLatent MotionVae::encode(const Tensor& x) const {
  NoGradGuard ng;
  const Tensor one[] = {x};
  auto [mu, ls] = encode_batch(one);
  return {mu.value(), ls.value()};
}

Tensor MotionVae::decode(const Tensor& z, size_t length) const {
  NoGradGuard ng;
  const size_t lengths[] = {length};
  return decode_batch(constant(z), lengths).value();
}

Tensor reparameterize(const GaussianLatent& g, uint64_t seed) {
  if (g.mu.dims() != g.log_sigma.dims()) throw ShapeError("reparameterize: mu and log_sigma dims differ");
  Rng rng(seed, 0x7265706172);
  Tensor z = g.mu;
  for (size_t i = 0; i < z.size(); ++i) z[i] = real(double(g.mu[i]) + std::exp(double(g.log_sigma[i])) * rng.normal());
  return z;
}

Tensor sample_prior(size_t n, size_t d, uint64_t seed) { return Rng(seed, 0x7072696f72).normal_tensor({n, d}); }

double kl_to_standard_normal(const GaussianLatent& g) {
  if (g.mu.dims() != g.log_sigma.dims()) throw ShapeError("kl: mu and log_sigma dims differ");
  double kl = 0;
  for (size_t i = 0; i < g.mu.size(); ++i) {
    const double m = g.mu[i], ls = g.log_sigma[i];
    kl += 0.5 * (std::exp(2 * ls) + m * m - 1 - 2 * ls);
  }
  return kl;
}

VaeLossReport vae_loss(const Tensor& x, const Tensor& x_hat, const GaussianLatent& g, const VaeConfig& cfg) {
  if (x.dims() != x_hat.dims()) throw ShapeError("vae_loss: " + shape_str(x.dims()) + " vs " + shape_str(x_hat.dims()));
  VaeLossReport r;
  double sq = 0;
  for (size_t i = 0; i < x.size(); ++i) sq += std::pow(double(x[i]) - double(x_hat[i]), 2);
  r.l_data = sq / double(x.size());
  r.l_reg = cfg.regularize ? kl_to_standard_normal(g) : 0.0;
  r.total = r.l_data + cfg.lambda_reg * r.l_reg;
  return r;
}

double smpl_data_loss(const SmplMotion& gt, const SmplMotion& pred) {
  gt.validate();
  pred.validate();
  if (gt.trans.rows() != pred.trans.rows())
    throw ShapeError("smpl_data_loss: " + std::to_string(gt.trans.rows()) + " vs " + std::to_string(pred.trans.rows()) + " frames");
  auto row_norm = [](const Tensor& a, const Tensor& b, size_t r) {
    double s = 0;
    for (size_t c = 0; c < a.cols(); ++c) s += std::pow(double(a.at(r, c)) - double(b.at(r, c)), 2);
    return std::sqrt(s);
  };
  double total = 0;
  for (size_t i = 0; i < gt.trans.rows(); ++i) total += row_norm(gt.trans, pred.trans, i) + row_norm(gt.pose, pred.pose, i);
  double s = 0;
  for (size_t k = 0; k < 10; ++k) s += std::pow(double(gt.shape[k]) - double(pred.shape[k]), 2);
  return total + std::sqrt(s);
}

std::vector<EpochLog> train_vae(MotionVae& vae, std::span<const Tensor> data, const TrainOptions& opts) {
  if (data.empty()) throw Error("train_vae: empty corpus");
  if (opts.batch_size == 0) throw ConfigError("train_vae: batch_size must be positive");
  std::vector<EpochLog> logs;
  if (opts.epochs == 0) return logs;
  AdamW optim(vae.params(), opts.optim);
  const Rng root(opts.seed, 0x747261696e);
  std::vector<size_t> order(data.size());
  auto good = vae.params().snapshot();
  for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng er = root.fork(epoch);
    std::iota(order.begin(), order.end(), size_t(0));
    er.shuffle(std::span<size_t>(order));
    EpochLog log{.epoch = epoch + 1};
    size_t seen = 0;
    for (size_t b0 = 0, step = 0; b0 < order.size(); b0 += opts.batch_size, ++step) {
      std::vector<Tensor> batch;
      for (size_t i = b0; i < std::min(order.size(), b0 + opts.batch_size); ++i) batch.push_back(data[order[i]]);
      const size_t n = vae.config().n_latent;
      Rng nr = er.fork(step + 1);
      try {
        const auto out = vae.forward(batch, nr.normal_tensor({batch.size() * n, vae.config().dim}));
        const double loss = optim.step(out.total);
        if (!std::isfinite(loss)) throw NonFiniteError("vae loss is not finite");
        log.loss += loss * double(batch.size());
        log.l_data += out.l_data.value().item() * double(batch.size());
        log.l_reg += out.l_reg.value().item() * double(batch.size());
      } catch (const NonFiniteError& e) {
        vae.params().load(good);
        throw DivergenceError(std::string("vae training diverged in epoch ") + std::to_string(epoch + 1) + ": " + e.what(), epoch);
      }
      seen += batch.size();
    }
    log.loss /= double(seen);
    log.l_data /= double(seen);
    log.l_reg /= double(seen);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    good = vae.params().snapshot();
    logs.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
  }
  return logs;
}

}  // namespace mld
