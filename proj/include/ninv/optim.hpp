#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ninv/tensor.hpp"

namespace ninv {

enum class OptimKind { Adam, Momentum };

struct OptimConfig {
  OptimKind kind = OptimKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double momentum = 0.9;      // Momentum only
};

struct OptimState {
  OptimConfig config;
  std::uint64_t step = 0;
  // Adam: first/second moments. Momentum: velocity lives in `first`.
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
};

OptimState make_optim_state(const OptimConfig& config, std::span<const Tensor> params);

/// Applies one update in place. grads[i] must have the shape of params[i];
/// undefined grads are treated as zero.
void optim_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state);

/// Convenience: uses each parameter's accumulated .grad.
void optim_step(std::span<Tensor> params, OptimState& state);

}  // namespace ninv
