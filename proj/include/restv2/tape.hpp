#pragma once

#include <functional>
#include <span>
#include <vector>

#include "restv2/tensor.hpp"

namespace restv2 {

/// Ordered record of differentiable operations executed while the tape is
/// active on the current thread.
///
/// Constructing a Tape makes it the active tape for its scalar type on this
/// thread; destruction restores the previously active one. Records are
/// appended in execution order, so replaying them in reverse is a valid
/// reverse topological order.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const T> grad_output)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn backward);

  /// Populates dLoss/dLeaf for every requires_grad leaf reached from `loss`.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
  Tape* previous_;
};

/// True when `inputs` contain a tensor that requires grad and a tape is active.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace restv2
