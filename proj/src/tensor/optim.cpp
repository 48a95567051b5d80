#include "ninv/optim.hpp"

#include <cmath>

namespace ninv {

OptimState make_optim_state(const OptimConfig& config, std::span<const Tensor> params) {
  OptimState state;
  state.config = config;
  for (const auto& p : params) {
    state.first.emplace_back(p.numel(), 0.0);
    if (config.kind == OptimKind::Adam) state.second.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void optim_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw DimensionError("optim_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, state for " + std::to_string(state.first.size()));
  }
  const auto& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    const bool has = grads[i].defined();
    if (has && grads[i].numel() != p.size()) {
      throw DimensionError("optim_step: gradient " + shape_str(grads[i].shape()) + " for parameter " +
                           shape_str(params[i].shape()));
    }
    if (state.first[i].size() != p.size()) throw DimensionError("optim_step: state does not match parameter");
    auto& m = state.first[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = has ? static_cast<double>(grads[i].at(k)) : 0.0;
      double w = static_cast<double>(p[k]);
      if (cfg.weight_decay != 0.0) w -= cfg.learning_rate * cfg.weight_decay * w;
      if (cfg.kind == OptimKind::Adam) {
        auto& v = state.second[i];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        w -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
      } else {
        m[k] = cfg.momentum * m[k] + g;
        w -= cfg.learning_rate * m[k];
      }
      p[k] = static_cast<float>(w);
    }
  }
}

void optim_step(std::span<Tensor> params, OptimState& state) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  optim_step(params, grads, state);
}

}  // namespace ninv
