#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace restv2 {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies refer to the same node, which is how
/// the tape reaches the gradient buffers of values it recorded. Values are
/// fixed at construction; only the gradient is mutable.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  bool defined() const { return static_cast<bool>(impl_); }

  std::span<const T> data() const;
  const std::vector<T>& values() const;
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;

  /// Gradient accumulated by backward(); empty span when none was produced.
  std::span<const T> grad() const;
  bool has_grad() const;
  Tensor grad_tensor() const;
  void zero_grad() const;

  /// Copy of the values as a fresh leaf.
  Tensor detach(bool requires_grad = false) const;

  template <typename U>
  Tensor<U> cast() const;

  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }

  // Autograd plumbing, used by ops and the tape.
  std::vector<T>& grad_buffer() const;
  void mark_nonleaf() const;
  static Tensor make_result(Shape shape, std::vector<T> values, bool requires_grad);

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;
  };
  std::shared_ptr<Impl> impl_;
};

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(values().begin(), values().end());
  return Tensor<U>(shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace restv2
