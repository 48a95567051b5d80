#include "ninv/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace ninv {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimension of size 0 in " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<std::vector<T>>(std::move(data));
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return (*impl_->data)[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  if (!impl_->is_leaf) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::grad() const {
  if (!has_grad()) return {};
  auto g = std::make_shared<detail::TensorImpl<T>>();
  g->shape = impl_->shape;
  g->data = impl_->grad;
  return BasicTensor(g);
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  impl_->grad.reset();
}

template <typename T>
void BasicTensor<T>::accumulate_grad(std::span<const T> g) {
  if (g.size() != numel()) throw DimensionError("gradient size mismatch for " + shape_str(shape()));
  if (!impl_->grad) {
    impl_->grad = std::make_shared<std::vector<T>>(g.begin(), g.end());
    return;
  }
  auto& acc = *impl_->grad;
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto d = std::make_shared<detail::TensorImpl<T>>();
  d->shape = impl_->shape;
  d->data = impl_->data;
  return BasicTensor(d);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(impl_->shape, *impl_->data, impl_->requires_grad && impl_->is_leaf);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace ninv
