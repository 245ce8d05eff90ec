#include "mld/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mld/error.hpp"
#include "mld/numerics/rng.hpp"

namespace mld {

namespace {
constexpr size_t kOracleBudget = 10000;
}

GradCheckReport grad_check(const std::function<Var()>& loss_fn, const ParamStore& params,
                           const GradCheckOptions& opts) {
  if (!(opts.tol > 0)) throw Error("grad_check: tol must be positive");
  if (!(opts.step > 0)) throw Error("grad_check: step must be positive");
  if (params.scalar_count(true) > kOracleBudget && opts.max_coords_per_param == 0)
    throw Error("grad_check: " + std::to_string(params.scalar_count(true)) +
                " trainable scalars exceed the finite-difference budget; set max_coords_per_param");

  std::vector<Var> vars;
  std::vector<std::string> names;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    vars.push_back(e.var);
    names.push_back(e.name);
  }
  const Var loss = loss_fn();
  const auto analytic = reverse_gradients(loss, vars);

  Rng rng(opts.seed);
  GradCheckReport report;
  double diff2 = 0, a2 = 0, n2 = 0, worst_diff = -1;
  for (size_t p = 0; p < vars.size(); ++p) {
    Var& v = vars[p];
    const Tensor original = v.value();
    std::vector<size_t> coords(original.size());
    std::iota(coords.begin(), coords.end(), size_t(0));
    if (opts.max_coords_per_param && coords.size() > opts.max_coords_per_param) {
      rng.shuffle(std::span<size_t>(coords));
      coords.resize(opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    double tensor_diff2 = 0;
    for (size_t c : coords) {
      Tensor plus = original, minus = original;
      plus[c] = real(double(original[c]) + opts.step);
      minus[c] = real(double(original[c]) - opts.step);
      const double span = double(plus[c]) - double(minus[c]);
      double fp, fm;
      {
        NoGradGuard ng;
        v.assign(plus);
        fp = loss_fn().value().item();
        v.assign(minus);
        fm = loss_fn().value().item();
      }
      v.assign(original);
      const double numeric = (fp - fm) / span;
      const double a = analytic[p][c];
      tensor_diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++report.coords_checked;
    }
    diff2 += tensor_diff2;
    if (tensor_diff2 > worst_diff) {
      worst_diff = tensor_diff2;
      report.worst_param = names[p];
    }
  }
  report.max_rel_err = std::sqrt(diff2) / (std::sqrt(a2) + std::sqrt(n2) + opts.floor);
  report.passed = report.max_rel_err < opts.tol;
  return report;
}

}  // namespace mld
