#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ninv/autodiff.hpp"
#include "ninv/tensor.hpp"

namespace ninv {

class Rng;

// Flat source offsets; -1 reads as zero (padding).
using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

// ---- elementwise, identical shapes ----
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, double s);
template <typename T> BasicTensor<T> mul_scalar(const BasicTensor<T>& a, double s);

template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sqrt(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& a, double slope);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& a, double lo, double hi);
template <typename T> BasicTensor<T> clamp_min(const BasicTensor<T>& a, double lo);

// Inverted dropout: zeroes each entry with probability rate, scales the
// rest by 1/(1-rate). rate == 0 returns the input unchanged.
template <typename T> BasicTensor<T> dropout(const BasicTensor<T>& a, double rate, Rng& rng);

// ---- linear algebra ----
// op(a) x op(b) where op transposes when the flag is set. Both rank 2.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_a = false,
                      bool trans_b = false);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);

// ---- reshaping / indexing ----
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& a, IndexMap index, Shape out_shape);
template <typename T>
BasicTensor<T> scatter_add(const BasicTensor<T>& a, IndexMap index, Shape out_shape);
// Concatenate along the last axis of two rank-2 tensors.
template <typename T> BasicTensor<T> concat_cols(const BasicTensor<T>& a, const BasicTensor<T>& b);
// Broadcast v[d] to [rows x d].
template <typename T> BasicTensor<T> broadcast_rows(const BasicTensor<T>& v, std::size_t rows);
// Broadcast a[... x 1] to [... x cols].
template <typename T> BasicTensor<T> broadcast_last(const BasicTensor<T>& a, std::size_t cols);
// Picks a[i, cols[i]] from a rank-2 tensor; result shape [rows].
template <typename T>
BasicTensor<T> pick_cols(const BasicTensor<T>& a, const std::vector<std::size_t>& cols);

// ---- reductions (accumulated in double) ----
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
// Sum over the last axis, keeping it with length 1.
template <typename T> BasicTensor<T> sum_last(const BasicTensor<T>& a);

// ---- nn ----
// Over the last axis, max-subtracted.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& logits);
template <typename T> BasicTensor<T> log_softmax(const BasicTensor<T>& logits);

// x: B x F  (rank 2), bias: F
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

// Cross-correlation with zero padding. input B x C x H x W, kernel F x C x kH x kW.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, std::size_t stride,
                      std::size_t pad);
// Adds bias[F] to every position of a B x F x H x W tensor.
template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);
// Non-overlapping window x window max pooling (floor on odd sizes).
template <typename T> BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t window);

}  // namespace ninv
