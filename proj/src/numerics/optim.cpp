#include "mld/numerics/optim.hpp"

#include <cmath>

#include "mld/error.hpp"

namespace mld {

OptimState init_optim(std::span<const Var> params, const AdamWConfig& hp) {
  OptimState s;
  s.hp = hp;
  for (const auto& p : params) {
    s.m.emplace_back(p.dims());
    s.v.emplace_back(p.dims());
  }
  return s;
}

void adamw_step(std::span<const Var> params, std::span<const Tensor> grads, OptimState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, " + std::to_string(state.m.size()) + " moment slots");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].dims() != grads[i].dims() || params[i].dims() != state.m[i].dims() ||
        params[i].dims() != state.v[i].dims())
      throw ShapeError("adamw_step: dims mismatch for parameter " + std::to_string(i) + " " +
                       shape_str(params[i].dims()) + " vs grad " + shape_str(grads[i].dims()));
    if (!grads[i].all_finite()) throw NonFiniteError("adamw_step: non-finite gradient for parameter " + std::to_string(i));
  }
  const auto& hp = state.hp;
  ++state.step;
  const double t = double(state.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  const double decay = 1.0 - hp.lr * hp.weight_decay;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].value();
    auto pd = p.data();
    auto md = state.m[i].data();
    auto vd = state.v[i].data();
    const auto gd = grads[i].data();
    for (size_t j = 0; j < pd.size(); ++j) {
      const double g = gd[j];
      const double m = hp.beta1 * md[j] + (1.0 - hp.beta1) * g;
      const double v = hp.beta2 * vd[j] + (1.0 - hp.beta2) * g * g;
      md[j] = real(m);
      vd[j] = real(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      pd[j] = real(double(pd[j]) * decay - hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
    }
    params[i].assign(std::move(p));
  }
}

AdamW::AdamW(const ParamStore& store, const AdamWConfig& hp)
    : params_(store.trainable_vars()), state_(init_optim(params_, hp)) {}

double AdamW::step(const Var& loss) {
  auto grads = reverse_gradients(loss, params_);
  adamw_step(params_, grads, state_);
  return loss.value().item();
}

}  // namespace mld
