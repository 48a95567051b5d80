#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ninv/errors.hpp"

namespace ninv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. Rank-0 tensors are scalars.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data->size(); }

  std::span<const T> data() const { return *impl_->data; }
  // Mutation is reserved for optimizers and initializers; never mutate a
  // tensor that a live tape still references.
  std::span<T> mutable_data() { return *impl_->data; }

  T item() const;
  T at(std::size_t flat) const { return (*impl_->data)[flat]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return impl_ && impl_->grad != nullptr; }
  // Returns an undefined tensor when no gradient has been accumulated.
  BasicTensor grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const T> g);

  // Same storage, fresh graph identity, no gradient tracking.
  BasicTensor detach() const;
  BasicTensor clone() const;

  const void* id() const { return impl_.get(); }

  // Used by ops to mark non-leaf results.
  void mark_result() { impl_->is_leaf = false; }

 private:
  explicit BasicTensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

struct NamedTensor {
  std::string name;
  Tensor value;
};

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace ninv
