#include "mld/nn/layers.hpp"

#include <cmath>

#include "mld/error.hpp"

namespace mld::nn {

Tensor sinusoidal_table(size_t positions, size_t dim) {
  std::vector<double> pos(positions);
  for (size_t i = 0; i < positions; ++i) pos[i] = double(i);
  return sinusoidal_embedding(pos, dim);
}

Tensor sinusoidal_embedding(std::span<const double> positions, size_t dim) {
  Tensor t({positions.size(), dim});
  const size_t half = dim / 2;
  for (size_t r = 0; r < positions.size(); ++r) {
    for (size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      t.at(r, 2 * i) = real(std::sin(positions[r] * freq));
      t.at(r, 2 * i + 1) = real(std::cos(positions[r] * freq));
    }
  }
  return t;
}

Linear::Linear(ParamStore& store, const std::string& name, size_t in, size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / double(in + out));
  w_ = store.add(name + ".w", rng.uniform_tensor({in, out}, -a, a));
  b_ = store.add(name + ".b", Tensor({1, out}));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, size_t dim) {
  gamma_ = store.add(name + ".gamma", Tensor::filled({1, dim}, real(1)));
  beta_ = store.add(name + ".beta", Tensor({1, dim}));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, size_t dim, size_t heads,
                                       Rng& rng)
    : q_(store, name + ".q", dim, dim, rng),
      k_(store, name + ".k", dim, dim, rng),
      v_(store, name + ".v", dim, dim, rng),
      o_(store, name + ".o", dim, dim, rng),
      heads_(heads) {}

Var MultiHeadAttention::operator()(const Var& queries, const Var& keys, std::span<const AttnSegment> segments) const {
  return o_(attention(q_(queries), k_(keys), v_(keys), segments, heads_));
}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name, const StackConfig& cfg, Rng& rng)
    : ln_self_(store, name + ".ln_self", cfg.dim),
      self_attn_(store, name + ".self", cfg.dim, cfg.heads, rng),
      has_cross_(cfg.cross) {
  if (cfg.cross) {
    ln_cross_ = LayerNorm(store, name + ".ln_cross", cfg.dim);
    cross_attn_ = MultiHeadAttention(store, name + ".cross", cfg.dim, cfg.heads, rng);
  }
  ln_ff_ = LayerNorm(store, name + ".ln_ff", cfg.dim);
  ff_in_ = Linear(store, name + ".ff_in", cfg.dim, cfg.ff_dim, rng);
  ff_out_ = Linear(store, name + ".ff_out", cfg.ff_dim, cfg.dim, rng);
}

Var TransformerBlock::forward(const Var& x, std::span<const AttnSegment> self_segments, const Var* memory,
                              std::span<const AttnSegment> cross_segments) const {
  const Var h = ln_self_(x);
  Var y = add(x, self_attn_(h, h, self_segments));
  if (has_cross_ && memory != nullptr) y = add(y, cross_attn_(ln_cross_(y), *memory, cross_segments));
  return add(y, ff_out_(gelu(ff_in_(ln_ff_(y)))));
}

void validate(const StackConfig& cfg, const std::string& what) {
  if (cfg.layers == 0) throw ConfigError(what + ": layers must be positive");
  if (cfg.use_skip && cfg.layers % 2 == 0)
    throw ConfigError(what + ": layers must be odd when skip connections are enabled, got " +
                      std::to_string(cfg.layers));
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0)
    throw ConfigError(what + ": heads (" + std::to_string(cfg.heads) + ") must divide width (" +
                      std::to_string(cfg.dim) + ")");
  if (cfg.ff_dim == 0) throw ConfigError(what + ": ff_dim must be positive");
}

SkipTransformer::SkipTransformer(ParamStore& store, const std::string& name, const StackConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  validate(cfg, name);
  if (cfg.use_skip) {
    const size_t half = (cfg.layers - 1) / 2;
    for (size_t i = 0; i < half; ++i) in_blocks_.emplace_back(store, name + ".in" + std::to_string(i), cfg, rng);
    mid_block_.emplace(store, name + ".mid", cfg, rng);
    for (size_t i = 0; i < half; ++i) {
      skip_proj_.emplace_back(store, name + ".skip" + std::to_string(i), 2 * cfg.dim, cfg.dim, rng);
      out_blocks_.emplace_back(store, name + ".out" + std::to_string(i), cfg, rng);
    }
  } else {
    for (size_t i = 0; i < cfg.layers; ++i)
      in_blocks_.emplace_back(store, name + ".block" + std::to_string(i), cfg, rng);
  }
  final_ln_ = LayerNorm(store, name + ".ln_final", cfg.dim);
}

Var SkipTransformer::forward(const Var& x, std::span<const AttnSegment> self_segments, const Var* memory,
                             std::span<const AttnSegment> cross_segments) const {
  Var h = x;
  std::vector<Var> skips;
  for (const auto& b : in_blocks_) {
    h = b.forward(h, self_segments, memory, cross_segments);
    if (cfg_.use_skip) skips.push_back(h);
  }
  if (mid_block_) h = mid_block_->forward(h, self_segments, memory, cross_segments);
  for (size_t i = 0; i < out_blocks_.size(); ++i) {
    h = skip_proj_[i](concat_cols(h, skips.back()));
    skips.pop_back();
    h = out_blocks_[i].forward(h, self_segments, memory, cross_segments);
  }
  return final_ln_(h);
}

size_t SkipTransformer::skip_scalar_count(const StackConfig& cfg) {
  if (!cfg.use_skip) return 0;
  return (cfg.layers - 1) / 2 * (2 * cfg.dim * cfg.dim + cfg.dim);
}

}  // namespace mld::nn
