#pragma once

#include <functional>
#include <string>

#include "mld/numerics/params.hpp"

namespace mld {

struct GradCheckOptions {
  double tol = 1e-3;
  /// Central-difference step.
  double step = 1e-3;
  /// Added to the denominator so an identically-zero gradient does not divide by zero.
  double floor = 1e-6;
  uint64_t seed = 0;
  /// Coordinates probed per parameter tensor; 0 probes every coordinate.
  size_t max_coords_per_param = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  size_t coords_checked = 0;
  bool passed = false;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences for every
/// trainable parameter in `params`. Frozen parameters are skipped and never reported.
/// rel_err = |a - n|_2 / (|a|_2 + |n|_2 + floor) over all probed coordinates, where a and n
/// are the analytic and numeric gradient vectors. worst_param names the tensor with the
/// largest absolute discrepancy.
GradCheckReport grad_check(const std::function<Var()>& loss_fn, const ParamStore& params,
                           const GradCheckOptions& opts = {});

}  // namespace mld
