#include "restv2/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "restv2/errors.hpp"

namespace restv2 {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor() = default;

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor buffer holds " + std::to_string(values.size()) +
                         " values but shape " + shape_str(shape) + " needs " +
                         std::to_string(numel(shape)));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> values(numel(shape), value);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return values().size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return values();
}

template <typename T>
const std::vector<T>& Tensor<T>::values() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for shape " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return !impl_ || impl_->leaf;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!impl_) return {};
  return impl_->grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), impl_->grad);
}

template <typename T>
void Tensor<T>::zero_grad() const {
  if (impl_) impl_->grad.assign(impl_->grad.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return Tensor(shape(), values(), requires_grad);
}

template <typename T>
std::vector<T>& Tensor<T>::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::mark_nonleaf() const {
  impl_->leaf = false;
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, bool requires_grad) {
  Tensor t(std::move(shape), std::move(values), requires_grad);
  t.impl_->leaf = false;
  return t;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace restv2
