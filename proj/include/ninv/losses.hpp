#pragma once

#include <span>
#include <vector>

#include "ninv/rng.hpp"
#include "ninv/tensor.hpp"

namespace ninv {

inline constexpr double kLogFloor = 1e-8;

/// Mean over rows of KL(target || probs), logs floored at 1e-8. Rows of
/// both inputs must sum to 1 within 1e-3.
template <typename T>
BasicTensor<T> kl_loss(const BasicTensor<T>& probs, const BasicTensor<T>& target);

/// Mean over rows of weight[label] * -log softmax(logits)[label].
template <typename T>
BasicTensor<T> weighted_ce_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                                std::span<const double> class_weights);

template <typename T>
BasicTensor<T> ce_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels);

/// Mean cosine similarity over unordered row pairs; needs B >= 2.
template <typename T>
BasicTensor<T> cosine_diversity_loss(const BasicTensor<T>& features);

/// ||G - I||_F^2 with G the Gram matrix of row-normalized features.
template <typename T>
BasicTensor<T> ortho_loss(const BasicTensor<T>& features);

/// Squared horizontal and vertical neighbour differences, summed and divided
/// by the total pixel count B*C*H*W.
template <typename T>
BasicTensor<T> tv_loss(const BasicTensor<T>& images);

/// Mean over pixels of max(0, x - 1)^2 + max(0, -x)^2.
template <typename T>
BasicTensor<T> pixel_loss(const BasicTensor<T>& images);

/// clamp(images + u, 0, 1) with u uniform in [-eps, eps] per pixel.
template <typename T>
BasicTensor<T> linf_perturb(const BasicTensor<T>& images, double eps, Rng& rng);

/// (1 - s) * onehot(label) + s / m per row.
template <typename T>
BasicTensor<T> soft_targets(std::span<const std::size_t> labels, std::size_t classes, double smoothing);

}  // namespace ninv
