#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mld/numerics/params.hpp"

namespace mld {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimState {
  AdamWConfig hp;
  uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

OptimState init_optim(std::span<const Var> params, const AdamWConfig& hp);

/// One AdamW update. Decay is decoupled: p <- p (1 - lr wd) before the adaptive step.
void adamw_step(std::span<const Var> params, std::span<const Tensor> grads, OptimState& state);

/// AdamW bound to the trainable entries of a ParamStore.
class AdamW {
 public:
  AdamW(const ParamStore& store, const AdamWConfig& hp);

  /// Backpropagates `loss` and applies one update. Returns the loss value.
  double step(const Var& loss);

  const OptimState& state() const noexcept { return state_; }
  const std::vector<Var>& params() const noexcept { return params_; }

 private:
  std::vector<Var> params_;
  OptimState state_;
};

}  // namespace mld
