#pragma once

// Central finite-difference oracle, independent of the tape: it only ever
// evaluates the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ninv/autodiff.hpp"
#include "ninv/ops.hpp"
#include "ninv/rng.hpp"

namespace ninv::testing {

using ScalarFn = std::function<TensorD(const std::vector<TensorD>&)>;

inline double norm_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

// Numeric gradient of f with respect to inputs[which].
inline std::vector<double> numeric_gradient(const ScalarFn& f, std::vector<TensorD> inputs, std::size_t which,
                                            double h) {
  auto base = inputs[which].clone();
  std::vector<double> grad(base.numel());
  for (std::size_t k = 0; k < base.numel(); ++k) {
    auto plus = base.clone();
    auto minus = base.clone();
    plus.mutable_data()[k] += h;
    minus.mutable_data()[k] -= h;
    inputs[which] = plus;
    const double fp = f(inputs).item();
    inputs[which] = minus;
    const double fm = f(inputs).item();
    grad[k] = (fp - fm) / (2 * h);
  }
  return grad;
}

// Largest per-input relative error between tape gradients and central
// differences.
inline double gradcheck(const ScalarFn& f, const std::vector<TensorD>& inputs, double h = 1e-6) {
  std::vector<TensorD> tracked;
  for (const auto& in : inputs) {
    auto t = in.clone();
    t.set_requires_grad(true);
    tracked.push_back(t);
  }
  std::vector<TensorD> analytic;
  {
    TapeD tape;
    auto out = f(tracked);
    analytic = tape.gradients(out, tracked);
  }
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> a(analytic[i].data().begin(), analytic[i].data().end());
    auto n = numeric_gradient(f, inputs, i, h);
    worst = std::max(worst, norm_relative_error(a, n));
  }
  return worst;
}

inline TensorD random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD(std::move(shape), std::move(v));
}

inline Tensor random_tensor_f(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace ninv::testing
