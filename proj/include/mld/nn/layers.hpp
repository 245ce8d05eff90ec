#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mld/numerics/params.hpp"
#include "mld/numerics/rng.hpp"

namespace mld::nn {

/// Fixed sinusoidal table, rows = positions.
Tensor sinusoidal_table(size_t positions, size_t dim);
/// Sinusoidal features of arbitrary scalar positions (used for diffusion timesteps).
Tensor sinusoidal_embedding(std::span<const double> positions, size_t dim);

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, size_t in, size_t out, Rng& rng);
  Var operator()(const Var& x) const { return linear(x, w_, b_); }
  size_t in() const { return w_.rows(); }
  size_t out() const { return w_.cols(); }

 private:
  Var w_, b_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, size_t dim);
  Var operator()(const Var& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Var gamma_, beta_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, size_t dim, size_t heads, Rng& rng);
  Var operator()(const Var& queries, const Var& keys, std::span<const AttnSegment> segments) const;

 private:
  Linear q_, k_, v_, o_;
  size_t heads_ = 1;
};

struct StackConfig {
  size_t layers = 9;
  size_t dim = 256;
  size_t heads = 4;
  size_t ff_dim = 1024;
  bool use_skip = true;
  /// Adds a cross-attention sublayer to every block.
  bool cross = false;
};

/// Pre-norm transformer block: self-attention, optional cross-attention, feed-forward.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& name, const StackConfig& cfg, Rng& rng);

  Var forward(const Var& x, std::span<const AttnSegment> self_segments, const Var* memory,
              std::span<const AttnSegment> cross_segments) const;

 private:
  LayerNorm ln_self_, ln_cross_, ln_ff_;
  MultiHeadAttention self_attn_, cross_attn_;
  Linear ff_in_, ff_out_;
  bool has_cross_ = false;
};

/// Transformer stack with U-Net style long skips: with use_skip, the output of input block i
/// is concatenated with the input of output block (layers-1-i) and projected back to `dim`.
class SkipTransformer {
 public:
  SkipTransformer() = default;
  SkipTransformer(ParamStore& store, const std::string& name, const StackConfig& cfg, Rng& rng);

  /// `memory` may be null, in which case cross-attention sublayers are skipped.
  Var forward(const Var& x, std::span<const AttnSegment> self_segments, const Var* memory = nullptr,
              std::span<const AttnSegment> cross_segments = {}) const;

  const StackConfig& config() const { return cfg_; }
  /// Scalars held by the skip projections alone.
  static size_t skip_scalar_count(const StackConfig& cfg);

 private:
  StackConfig cfg_;
  std::vector<TransformerBlock> in_blocks_, out_blocks_;
  std::optional<TransformerBlock> mid_block_;
  std::vector<Linear> skip_proj_;
  LayerNorm final_ln_;
};

void validate(const StackConfig& cfg, const std::string& what);

}  // namespace mld::nn
