#include "ninv/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "ninv/rng.hpp"

namespace ninv {

namespace {

template <typename T>
using Tn = BasicTensor<T>;
template <typename T>
using BackwardFn = typename BasicTape<T>::BackwardFn;

template <typename T>
Tn<T> finish(std::string_view op, std::vector<Tn<T>> inputs, Shape shape, std::vector<T> data,
             BackwardFn<T> backward) {
  Tn<T> out(std::move(shape), std::move(data));
  auto* tape = BasicTape<T>::active();
  if (tape && tape->recording()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) tape->record(op, std::move(inputs), out, std::move(backward));
  }
  return out;
}

// For ops whose adjoint is cheapest in terms of their own result.
template <typename T, typename Make>
Tn<T> finish_with_output(std::string_view op, std::vector<Tn<T>> inputs, Shape shape, std::vector<T> data,
                         Make make_backward) {
  Tn<T> out(std::move(shape), std::move(data));
  auto* tape = BasicTape<T>::active();
  if (tape && tape->recording()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) tape->record(op, std::move(inputs), out, make_backward(out));
  }
  return out;
}

template <typename T>
void require_same_shape(std::string_view op, const Tn<T>& a, const Tn<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T, typename F>
std::vector<T> map_values(const Tn<T>& a, F f) {
  auto src = a.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = f(src[i]);
  return out;
}

template <typename T, typename F>
std::vector<T> zip_values(const Tn<T>& a, const Tn<T>& b, F f) {
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

template <typename T>
Tn<T> constant_like(const Tn<T>& a, std::vector<T> values) {
  return Tn<T>(a.shape(), std::move(values));
}

IndexMap make_index(std::vector<std::int64_t> idx) {
  return std::make_shared<const std::vector<std::int64_t>>(std::move(idx));
}

// Geometry-keyed cache for the index maps of conv/bias/permute; these depend
// only on shapes, never on data.
using GeometryKey = std::array<std::size_t, 10>;

IndexMap cached_index(char kind, GeometryKey key, const std::function<std::vector<std::int64_t>()>& build) {
  thread_local std::map<std::pair<char, GeometryKey>, IndexMap> cache;
  auto k = std::make_pair(kind, key);
  auto it = cache.find(k);
  if (it != cache.end()) return it->second;
  if (cache.size() > 256) cache.clear();
  auto idx = make_index(build());
  cache.emplace(k, idx);
  return idx;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Tn<T> add(const Tn<T>& a, const Tn<T>& b) {
  require_same_shape("add", a, b);
  return finish<T>("add", {a, b}, a.shape(), zip_values(a, b, [](T x, T y) { return x + y; }),
                   [](const Tn<T>& g, const std::vector<bool>&) { return std::vector<Tn<T>>{g, g}; });
}

template <typename T>
Tn<T> sub(const Tn<T>& a, const Tn<T>& b) {
  require_same_shape("sub", a, b);
  return finish<T>("sub", {a, b}, a.shape(), zip_values(a, b, [](T x, T y) { return x - y; }),
                   [](const Tn<T>& g, const std::vector<bool>& needs) {
                     return std::vector<Tn<T>>{g, needs[1] ? mul_scalar(g, -1.0) : Tn<T>{}};
                   });
}

template <typename T>
Tn<T> mul(const Tn<T>& a, const Tn<T>& b) {
  require_same_shape("mul", a, b);
  return finish<T>("mul", {a, b}, a.shape(), zip_values(a, b, [](T x, T y) { return x * y; }),
                   [a, b](const Tn<T>& g, const std::vector<bool>& needs) {
                     return std::vector<Tn<T>>{needs[0] ? mul(g, b) : Tn<T>{}, needs[1] ? mul(g, a) : Tn<T>{}};
                   });
}

template <typename T>
Tn<T> div(const Tn<T>& a, const Tn<T>& b) {
  require_same_shape("div", a, b);
  // d(a/b)/db = -(a/b)/b
  return finish_with_output<T>(
      "div", {a, b}, a.shape(), zip_values(a, b, [](T x, T y) { return x / y; }), [a, b](const Tn<T>& result) {
        return BackwardFn<T>([a, b, result](const Tn<T>& g, const std::vector<bool>& needs) {
          return std::vector<Tn<T>>{needs[0] ? div(g, b) : Tn<T>{},
                                    needs[1] ? mul_scalar(div(mul(g, result), b), -1.0) : Tn<T>{}};
        });
      });
}

template <typename T>
Tn<T> add_scalar(const Tn<T>& a, double s) {
  return finish<T>("add_scalar", {a}, a.shape(), map_values(a, [s](T x) { return static_cast<T>(x + s); }),
                   [](const Tn<T>& g, const std::vector<bool>&) { return std::vector<Tn<T>>{g}; });
}

template <typename T>
Tn<T> mul_scalar(const Tn<T>& a, double s) {
  return finish<T>("mul_scalar", {a}, a.shape(), map_values(a, [s](T x) { return static_cast<T>(x * s); }),
                   [s](const Tn<T>& g, const std::vector<bool>&) { return std::vector<Tn<T>>{mul_scalar(g, s)}; });
}

// Ops whose derivative is best written in terms of their own output.
template <typename T, typename F, typename D>
Tn<T> unary_with_output(std::string_view name, const Tn<T>& a, F f, D derivative) {
  return finish_with_output<T>(name, {a}, a.shape(), map_values(a, f), [a, derivative](const Tn<T>& result) {
    return BackwardFn<T>([a, result, derivative](const Tn<T>& g, const std::vector<bool>&) {
      return std::vector<Tn<T>>{derivative(g, a, result)};
    });
  });
}

template <typename T>
Tn<T> exp(const Tn<T>& a) {
  return unary_with_output<T>(
      "exp", a, [](T x) { return std::exp(x); },
      [](const Tn<T>& g, const Tn<T>&, const Tn<T>& out) { return mul(g, out); });
}

template <typename T>
Tn<T> log(const Tn<T>& a) {
  return finish<T>("log", {a}, a.shape(), map_values(a, [](T x) { return std::log(x); }),
                   [a](const Tn<T>& g, const std::vector<bool>&) { return std::vector<Tn<T>>{div(g, a)}; });
}

template <typename T>
Tn<T> sqrt(const Tn<T>& a) {
  return unary_with_output<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](const Tn<T>& g, const Tn<T>&, const Tn<T>& out) { return div(g, mul_scalar(out, 2.0)); });
}

template <typename T>
Tn<T> square(const Tn<T>& a) {
  return finish<T>("square", {a}, a.shape(), map_values(a, [](T x) { return x * x; }),
                   [a](const Tn<T>& g, const std::vector<bool>&) {
                     return std::vector<Tn<T>>{mul(g, mul_scalar(a, 2.0))};
                   });
}

template <typename T>
Tn<T> sigmoid(const Tn<T>& a) {
  return unary_with_output<T>(
      "sigmoid", a,
      [](T x) {
        return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      },
      [](const Tn<T>& g, const Tn<T>&, const Tn<T>& out) {
        return mul(g, mul(out, add_scalar(mul_scalar(out, -1.0), 1.0)));
      });
}

template <typename T>
Tn<T> tanh(const Tn<T>& a) {
  return unary_with_output<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](const Tn<T>& g, const Tn<T>&, const Tn<T>& out) {
        return mul(g, add_scalar(mul_scalar(square(out), -1.0), 1.0));
      });
}

// Piecewise-linear ops: the derivative is a constant mask, so the second
// derivative vanishes and mul() carries the adjoint through a second replay.
template <typename T, typename F, typename M>
Tn<T> piecewise_linear(std::string_view name, const Tn<T>& a, F f, M mask_of) {
  auto values = map_values(a, f);
  BackwardFn<T> backward;
  if (a.requires_grad()) {
    auto mask = constant_like(a, map_values(a, mask_of));
    backward = [mask](const Tn<T>& g, const std::vector<bool>&) { return std::vector<Tn<T>>{mul(g, mask)}; };
  }
  return finish<T>(name, {a}, a.shape(), std::move(values), std::move(backward));
}

template <typename T>
Tn<T> leaky_relu(const Tn<T>& a, double slope) {
  const T s = static_cast<T>(slope);
  return piecewise_linear<T>(
      "leaky_relu", a, [s](T x) { return x > 0 ? x : s * x; }, [s](T x) { return x > 0 ? T(1) : s; });
}

template <typename T>
Tn<T> relu(const Tn<T>& a) {
  return leaky_relu(a, 0.0);
}

template <typename T>
Tn<T> clamp(const Tn<T>& a, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return piecewise_linear<T>(
      "clamp", a, [l, h](T x) { return std::min(std::max(x, l), h); },
      [l, h](T x) { return (x >= l && x <= h) ? T(1) : T(0); });
}

template <typename T>
Tn<T> clamp_min(const Tn<T>& a, double lo) {
  const T l = static_cast<T>(lo);
  return piecewise_linear<T>(
      "clamp_min", a, [l](T x) { return std::max(x, l); }, [l](T x) { return x >= l ? T(1) : T(0); });
}

template <typename T>
Tn<T> dropout(const Tn<T>& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(a.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? T(0) : scale;
  return mul(a, constant_like(a, std::move(mask)));
}

// ------------------------------------------------------------ linear algebra

template <typename T>
Tn<T> matmul(const Tn<T>& a, const Tn<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t rows = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t inner_a = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t inner_b = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t cols = trans_b ? b.dim(0) : b.dim(1);
  if (inner_a != inner_b) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> A(a.data().data(), a.dim(0), a.dim(1));
  Eigen::Map<const Mat> B(b.data().data(), b.dim(0), b.dim(1));
  std::vector<T> out(rows * cols);
  Eigen::Map<Mat> C(out.data(), rows, cols);
  // Row by row when A is untransposed so every output row takes the same
  // code path: identical input rows give bit-identical output rows.
  if (!trans_a && !trans_b) {
    for (Eigen::Index i = 0; i < C.rows(); ++i) C.row(i).noalias() = A.row(i) * B;
  } else if (!trans_a && trans_b) {
    for (Eigen::Index i = 0; i < C.rows(); ++i) C.row(i).noalias() = A.row(i) * B.transpose();
  } else if (!trans_b) {
    C.noalias() = A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B.transpose();
  }

  return finish<T>("matmul", {a, b}, Shape{rows, cols}, std::move(out),
                   [a, b, trans_a, trans_b](const Tn<T>& g, const std::vector<bool>& needs) {
                     Tn<T> ga, gb;
                     if (!trans_a && !trans_b) {
                       if (needs[0]) ga = matmul(g, b, false, true);
                       if (needs[1]) gb = matmul(a, g, true, false);
                     } else if (trans_a && !trans_b) {
                       if (needs[0]) ga = matmul(b, g, false, true);
                       if (needs[1]) gb = matmul(a, g, false, false);
                     } else if (!trans_a && trans_b) {
                       if (needs[0]) ga = matmul(g, b, false, false);
                       if (needs[1]) gb = matmul(g, a, true, false);
                     } else {
                       if (needs[0]) ga = matmul(b, g, true, true);
                       if (needs[1]) gb = matmul(g, a, true, true);
                     }
                     return std::vector<Tn<T>>{ga, gb};
                   });
}

template <typename T>
Tn<T> transpose(const Tn<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<std::int64_t> idx(r * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < r; ++j) idx[i * r + j] = static_cast<std::int64_t>(j * c + i);
  return gather(a, make_index(std::move(idx)), Shape{c, r});
}

// ------------------------------------------------------- reshaping, indexing

template <typename T>
Tn<T> reshape(const Tn<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> values(a.data().begin(), a.data().end());
  Shape original = a.shape();
  return finish<T>("reshape", {a}, std::move(shape), std::move(values),
                   [original](const Tn<T>& g, const std::vector<bool>&) {
                     return std::vector<Tn<T>>{reshape(g, original)};
                   });
}

template <typename T>
Tn<T> gather(const Tn<T>& a, IndexMap index, Shape out_shape) {
  if (shape_numel(out_shape) != index->size()) {
    throw DimensionError("gather: index length " + std::to_string(index->size()) + " does not fill " +
                         shape_str(out_shape));
  }
  auto src = a.data();
  std::vector<T> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto k = (*index)[i];
    if (k >= static_cast<std::int64_t>(src.size())) throw DimensionError("gather: index out of range");
    out[i] = k < 0 ? T(0) : src[static_cast<std::size_t>(k)];
  }
  Shape in_shape = a.shape();
  return finish<T>("gather", {a}, std::move(out_shape), std::move(out),
                   [index, in_shape](const Tn<T>& g, const std::vector<bool>&) {
                     return std::vector<Tn<T>>{scatter_add(g, index, in_shape)};
                   });
}

template <typename T>
Tn<T> scatter_add(const Tn<T>& a, IndexMap index, Shape out_shape) {
  if (index->size() != a.numel()) {
    throw DimensionError("scatter_add: index length " + std::to_string(index->size()) + " vs source " +
                         shape_str(a.shape()));
  }
  const std::size_t n = shape_numel(out_shape);
  auto src = a.data();
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto k = (*index)[i];
    if (k < 0) continue;
    if (k >= static_cast<std::int64_t>(n)) throw DimensionError("scatter_add: index out of range");
    out[static_cast<std::size_t>(k)] += src[i];
  }
  Shape in_shape = a.shape();
  return finish<T>("scatter_add", {a}, std::move(out_shape), std::move(out),
                   [index, in_shape](const Tn<T>& g, const std::vector<bool>&) {
                     return std::vector<Tn<T>>{gather(g, index, in_shape)};
                   });
}

template <typename T>
Tn<T> concat_cols(const Tn<T>& a, const Tn<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<T> out(n * (p + q));
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.begin() + i * p, p, out.begin() + i * (p + q));
    std::copy_n(y.begin() + i * q, q, out.begin() + i * (p + q) + p);
  }
  return finish<T>("concat_cols", {a, b}, Shape{n, p + q}, std::move(out),
                   [n, p, q](const Tn<T>& g, const std::vector<bool>& needs) {
                     Tn<T> ga, gb;
                     if (needs[0]) {
                       std::vector<std::int64_t> idx(n * p);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < p; ++j) idx[i * p + j] = static_cast<std::int64_t>(i * (p + q) + j);
                       ga = gather(g, make_index(std::move(idx)), Shape{n, p});
                     }
                     if (needs[1]) {
                       std::vector<std::int64_t> idx(n * q);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < q; ++j)
                           idx[i * q + j] = static_cast<std::int64_t>(i * (p + q) + p + j);
                       gb = gather(g, make_index(std::move(idx)), Shape{n, q});
                     }
                     return std::vector<Tn<T>>{ga, gb};
                   });
}

template <typename T>
Tn<T> broadcast_rows(const Tn<T>& v, std::size_t rows) {
  const std::size_t d = v.numel();
  auto idx = cached_index('r', {rows, d}, [rows, d] {
    std::vector<std::int64_t> out(rows * d);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<std::int64_t>(j);
    return out;
  });
  return gather(v, idx, Shape{rows, d});
}

template <typename T>
Tn<T> broadcast_last(const Tn<T>& a, std::size_t cols) {
  if (a.rank() == 0 || a.shape().back() != 1) {
    throw DimensionError("broadcast_last expects a trailing axis of length 1, got " + shape_str(a.shape()));
  }
  const std::size_t rows = a.numel();
  Shape out_shape = a.shape();
  out_shape.back() = cols;
  auto idx = cached_index('l', {rows, cols}, [rows, cols] {
    std::vector<std::int64_t> out(rows * cols);
    for (std::size_t i = 0; i < rows * cols; ++i) out[i] = static_cast<std::int64_t>(i / cols);
    return out;
  });
  return gather(a, idx, std::move(out_shape));
}

template <typename T>
Tn<T> pick_cols(const Tn<T>& a, const std::vector<std::size_t>& cols) {
  if (a.rank() != 2 || cols.size() != a.dim(0)) {
    throw DimensionError("pick_cols: " + std::to_string(cols.size()) + " picks for " + shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  std::vector<std::int64_t> idx(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= c) throw DomainError("pick_cols: column " + std::to_string(cols[i]) + " out of range");
    idx[i] = static_cast<std::int64_t>(i * c + cols[i]);
  }
  return gather(a, make_index(std::move(idx)), Shape{cols.size()});
}

// ----------------------------------------------------------------- reductions

template <typename T>
Tn<T> sum(const Tn<T>& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += static_cast<double>(v);
  const std::size_t n = a.numel();
  Shape in_shape = a.shape();
  return finish<T>("sum", {a}, Shape{}, std::vector<T>{static_cast<T>(acc)},
                   [n, in_shape](const Tn<T>& g, const std::vector<bool>&) {
                     auto idx = cached_index('s', {n}, [n] { return std::vector<std::int64_t>(n, 0); });
                     return std::vector<Tn<T>>{gather(g, idx, in_shape)};
                   });
}

template <typename T>
Tn<T> mean(const Tn<T>& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

template <typename T>
Tn<T> sum_last(const Tn<T>& a) {
  if (a.rank() == 0) throw DimensionError("sum_last on a scalar");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  auto src = a.data();
  std::vector<T> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += static_cast<double>(src[i * c + j]);
    out[i] = static_cast<T>(acc);
  }
  Shape out_shape = a.shape();
  out_shape.back() = 1;
  return finish<T>("sum_last", {a}, std::move(out_shape), std::move(out),
                   [c](const Tn<T>& g, const std::vector<bool>&) {
                     return std::vector<Tn<T>>{broadcast_last(g, c)};
                   });
}

// ------------------------------------------------------------------------ nn

template <typename T>
Tn<T> softmax(const Tn<T>& logits) {
  if (logits.rank() == 0) throw DimensionError("softmax on a scalar");
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.numel() / c;
  auto src = logits.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = src.data() + i * c;
    T mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += static_cast<double>(out[i * c + j]);
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = static_cast<T>(out[i * c + j] / z);
  }
  return finish_with_output<T>("softmax", {logits}, logits.shape(), std::move(out), [c](const Tn<T>& s) {
    return BackwardFn<T>([s, c](const Tn<T>& g, const std::vector<bool>&) {
      return std::vector<Tn<T>>{mul(s, sub(g, broadcast_last(sum_last(mul(g, s)), c)))};
    });
  });
}

template <typename T>
Tn<T> log_softmax(const Tn<T>& logits) {
  if (logits.rank() == 0) throw DimensionError("log_softmax on a scalar");
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.numel() / c;
  auto src = logits.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = src.data() + i * c;
    T mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double lz = std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = static_cast<T>(static_cast<double>(row[j] - mx) - lz);
  }
  return finish_with_output<T>("log_softmax", {logits}, logits.shape(), std::move(out), [c](const Tn<T>& ls) {
    return BackwardFn<T>([ls, c](const Tn<T>& g, const std::vector<bool>&) {
      return std::vector<Tn<T>>{sub(g, mul(exp(ls), broadcast_last(sum_last(g), c)))};
    });
  });
}

template <typename T>
Tn<T> affine(const Tn<T>& x, const Tn<T>& weight, const Tn<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != bias.dim(0)) {
    throw DimensionError("affine: incompatible input " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  return add(matmul(x, weight), broadcast_rows(bias, x.dim(0)));
}

template <typename T>
Tn<T> conv2d(const Tn<T>& input, const Tn<T>& kernel, std::size_t stride, std::size_t pad) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: incompatible input " + shape_str(input.shape()) + " and kernel " +
                         shape_str(kernel.shape()));
  }
  if (stride == 0) throw DomainError("conv2d: stride must be positive");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t F = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > H + 2 * pad || kw > W + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()) + " with pad " + std::to_string(pad));
  }
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t patch = C * kh * kw;
  const std::size_t positions = B * Ho * Wo;

  auto cols_idx = cached_index('c', {B, C, H, W, kh, kw, stride, pad}, [=] {
    std::vector<std::int64_t> idx(patch * positions);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          const std::size_t r = (c * kh + i) * kw + j;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oy = 0; oy < Ho; ++oy)
              for (std::size_t ox = 0; ox < Wo; ++ox) {
                const auto y = static_cast<std::int64_t>(oy * stride + i) - static_cast<std::int64_t>(pad);
                const auto x = static_cast<std::int64_t>(ox * stride + j) - static_cast<std::int64_t>(pad);
                const std::size_t q = (b * Ho + oy) * Wo + ox;
                std::int64_t src = -1;
                if (y >= 0 && x >= 0 && y < static_cast<std::int64_t>(H) && x < static_cast<std::int64_t>(W)) {
                  src = static_cast<std::int64_t>(((b * C + c) * H + static_cast<std::size_t>(y)) * W +
                                                  static_cast<std::size_t>(x));
                }
                idx[r * positions + q] = src;
              }
        }
    return idx;
  });
  auto permute_idx = cached_index('p', {B, F, Ho, Wo}, [=] {
    std::vector<std::int64_t> idx(B * F * Ho * Wo);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t s = 0; s < Ho * Wo; ++s)
          idx[(b * F + f) * Ho * Wo + s] = static_cast<std::int64_t>(f * positions + b * Ho * Wo + s);
    return idx;
  });

  auto cols = gather(input, cols_idx, Shape{patch, positions});
  auto out = matmul(reshape(kernel, Shape{F, patch}), cols);
  return gather(out, permute_idx, Shape{B, F, Ho, Wo});
}

template <typename T>
Tn<T> add_channel_bias(const Tn<T>& x, const Tn<T>& bias) {
  if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  }
  const std::size_t B = x.dim(0), F = x.dim(1), S = x.dim(2) * x.dim(3);
  auto idx = cached_index('b', {B, F, S}, [=] {
    std::vector<std::int64_t> out(B * F * S);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int64_t>((i / S) % F);
    return out;
  });
  return add(x, gather(bias, idx, x.shape()));
}

template <typename T>
Tn<T> max_pool2d(const Tn<T>& x, std::size_t window) {
  if (x.rank() != 4) throw DimensionError("max_pool2d expects rank 4, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window == 0 || window > H || window > W) {
    throw DimensionError("max_pool2d: window " + std::to_string(window) + " for " + shape_str(x.shape()));
  }
  const std::size_t Ho = H / window, Wo = W / window;
  auto src = x.data();
  std::vector<std::int64_t> idx(B * C * Ho * Wo);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = bc * H * W + (oy * window) * W + ox * window;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t k = bc * H * W + (oy * window + i) * W + ox * window + j;
            if (src[k] > src[best]) best = k;
          }
        idx[(bc * Ho + oy) * Wo + ox] = static_cast<std::int64_t>(best);
      }
  return gather(x, make_index(std::move(idx)), Shape{B, C, Ho, Wo});
}

// ------------------------------------------------------------ instantiation

#define NINV_INSTANTIATE_OPS(T)                                                            \
  template Tn<T> add(const Tn<T>&, const Tn<T>&);                                          \
  template Tn<T> sub(const Tn<T>&, const Tn<T>&);                                          \
  template Tn<T> mul(const Tn<T>&, const Tn<T>&);                                          \
  template Tn<T> div(const Tn<T>&, const Tn<T>&);                                          \
  template Tn<T> add_scalar(const Tn<T>&, double);                                         \
  template Tn<T> mul_scalar(const Tn<T>&, double);                                         \
  template Tn<T> exp(const Tn<T>&);                                                        \
  template Tn<T> log(const Tn<T>&);                                                        \
  template Tn<T> sqrt(const Tn<T>&);                                                       \
  template Tn<T> square(const Tn<T>&);                                                     \
  template Tn<T> sigmoid(const Tn<T>&);                                                    \
  template Tn<T> tanh(const Tn<T>&);                                                       \
  template Tn<T> leaky_relu(const Tn<T>&, double);                                         \
  template Tn<T> relu(const Tn<T>&);                                                       \
  template Tn<T> clamp(const Tn<T>&, double, double);                                      \
  template Tn<T> clamp_min(const Tn<T>&, double);                                          \
  template Tn<T> dropout(const Tn<T>&, double, Rng&);                                      \
  template Tn<T> matmul(const Tn<T>&, const Tn<T>&, bool, bool);                           \
  template Tn<T> transpose(const Tn<T>&);                                                  \
  template Tn<T> reshape(const Tn<T>&, Shape);                                             \
  template Tn<T> gather(const Tn<T>&, IndexMap, Shape);                                    \
  template Tn<T> scatter_add(const Tn<T>&, IndexMap, Shape);                               \
  template Tn<T> concat_cols(const Tn<T>&, const Tn<T>&);                                  \
  template Tn<T> broadcast_rows(const Tn<T>&, std::size_t);                                \
  template Tn<T> broadcast_last(const Tn<T>&, std::size_t);                                \
  template Tn<T> pick_cols(const Tn<T>&, const std::vector<std::size_t>&);                 \
  template Tn<T> sum(const Tn<T>&);                                                        \
  template Tn<T> mean(const Tn<T>&);                                                       \
  template Tn<T> sum_last(const Tn<T>&);                                                   \
  template Tn<T> softmax(const Tn<T>&);                                                    \
  template Tn<T> log_softmax(const Tn<T>&);                                                \
  template Tn<T> affine(const Tn<T>&, const Tn<T>&, const Tn<T>&);                         \
  template Tn<T> conv2d(const Tn<T>&, const Tn<T>&, std::size_t, std::size_t);             \
  template Tn<T> add_channel_bias(const Tn<T>&, const Tn<T>&);                             \
  template Tn<T> max_pool2d(const Tn<T>&, std::size_t);

NINV_INSTANTIATE_OPS(float)
NINV_INSTANTIATE_OPS(double)

}  // namespace ninv
