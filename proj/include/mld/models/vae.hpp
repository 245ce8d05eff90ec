#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mld/motion/data.hpp"
#include "mld/nn/layers.hpp"
#include "mld/numerics/optim.hpp"

namespace mld {

struct VaeConfig {
  size_t feature_dim = 263;
  size_t n_latent = 1;
  size_t dim = 256;
  size_t layers = 9;
  size_t heads = 4;
  size_t ff_dim = 1024;
  bool use_skip = true;
  double lambda_reg = 1e-4;
  /// false trains a plain autoencoder (no KL term).
  bool regularize = true;
  /// Positional-encoding capacity.
  size_t max_len = 196;

  void validate() const;
};

struct GaussianLatent {
  Tensor mu;         // n x d
  Tensor log_sigma;  // n x d, clamped to [-20, 2]
};

inline constexpr double kLogSigmaMin = -20;
inline constexpr double kLogSigmaMax = 2;

struct VaeLossReport {
  double l_data = 0;
  double l_reg = 0;
  double total = 0;
};

/// Graph outputs of one packed batch. Rows of mu/log_sigma/z are grouped n per sequence.
struct VaeBatchOutput {
  Var mu, log_sigma, z, recon;
  Var l_data, l_reg, total;
};

class MotionVae {
 public:
  MotionVae(const VaeConfig& cfg, uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Packed encoder pass: one (mu, log_sigma) block of n rows per input.
  std::pair<Var, Var> encode_batch(std::span<const Tensor> xs) const;
  /// Packed decoder pass: z holds n rows per sequence; output rows follow `lengths`.
  Var decode_batch(const Var& z, std::span<const size_t> lengths) const;
  /// Full training graph for a batch; eps has the dims of mu (n rows per sequence).
  VaeBatchOutput forward(std::span<const Tensor> xs, const Tensor& eps) const;

  GaussianLatent encode(const Tensor& x) const;
  Tensor decode(const Tensor& z, size_t length) const;

 private:
  void check_input(const Tensor& x) const;

  VaeConfig cfg_;
  ParamStore store_;
  nn::Linear in_proj_, out_proj_;
  Var dist_tokens_;
  nn::SkipTransformer encoder_, decoder_;
  Tensor pe_;
};

/// z = mu + sigma * eps with eps ~ N(0, I) drawn from `seed`.
Tensor reparameterize(const GaussianLatent& g, uint64_t seed);
Tensor sample_prior(size_t n, size_t d, uint64_t seed);
/// Sum over coordinates of 0.5 (sigma^2 + mu^2 - 1 - log sigma^2).
double kl_to_standard_normal(const GaussianLatent& g);
VaeLossReport vae_loss(const Tensor& x, const Tensor& x_hat, const GaussianLatent& g, const VaeConfig& cfg);
/// Per-frame L2 norms of translation and pose differences plus the shape difference norm.
double smpl_data_loss(const SmplMotion& gt, const SmplMotion& pred);

struct EpochLog {
  size_t epoch = 0;
  double loss = 0;
  double l_data = 0;
  double l_reg = 0;
  double seconds = 0;
};

struct TrainOptions {
  size_t epochs = 1;
  size_t batch_size = 32;
  AdamWConfig optim;
  uint64_t seed = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Trains in place on normalized sequences. A non-finite loss restores the parameters of
/// the last completed epoch and throws DivergenceError.
std::vector<EpochLog> train_vae(MotionVae& vae, std::span<const Tensor> data, const TrainOptions& opts);

}  // namespace mld
