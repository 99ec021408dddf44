#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dcu/common.hpp"

namespace dcu {

template <typename T>
class Tensor;

namespace detail {

/// Shared storage behind a Tensor handle. Holds the value, the optional
/// gradient, and, for op outputs, the recorded inputs plus the closure that
/// routes an incoming gradient back to them.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool backward_ran = false;
  std::vector<Tensor<T>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;
};

}  // namespace detail

/// Dense N×C×H×W tensor, row-major, with reverse-mode gradient support.
/// Copies are cheap handles onto shared storage. Values are immutable once
/// an op has produced them; only gradients accumulate. mutable_data() exists
/// for parameter initialization and optimizer updates between passes.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape) { return full(shape, T{0}); }

  static Tensor full(const Shape& shape, T value) {
    check_shape(shape);
    auto node = std::make_shared<detail::TensorNode<T>>();
    node->shape = shape;
    node->data.assign(static_cast<std::size_t>(shape.numel()), value);
    return Tensor(std::move(node));
  }

  static Tensor from_data(const Shape& shape, std::vector<T> values) {
    check_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    auto node = std::make_shared<detail::TensorNode<T>>();
    node->shape = shape;
    node->data = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value) { return full(Shape{1, 1, 1, 1}, value); }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return checked().shape; }
  std::int64_t numel() const { return shape().numel(); }

  std::span<const T> data() const { return checked().data; }

  /// Direct write access to the value. Callers must not mutate a tensor
  /// that is an input of a recorded, not-yet-backpropagated graph.
  std::span<T> mutable_data() { return checked().data; }

  T at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    const auto& s = shape();
    return checked().data[static_cast<std::size_t>(
        ((n * s.c + c) * s.h + y) * s.w + x)];
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() requires a scalar tensor, got " + shape().str());
    }
    return checked().data[0];
  }

  bool requires_grad() const { return checked().requires_grad; }

  Tensor& set_requires_grad(bool v) {
    checked().requires_grad = v;
    return *this;
  }

  bool has_grad() const { return defined() && !node_->grad.empty(); }

  std::span<const T> grad() const {
    const auto& node = checked();
    if (node.grad.empty()) {
      throw Error("tensor has no gradient; run backward first");
    }
    return node.grad;
  }

  void zero_grad() { checked().grad.clear(); }

  detail::TensorNode<T>& node() const { return checked(); }
  const std::shared_ptr<detail::TensorNode<T>>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode<T>> node)
      : node_(std::move(node)) {}

  static void check_shape(const Shape& shape) {
    if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
      throw ShapeError("tensor extents must be positive, got " + shape.str());
    }
  }

  detail::TensorNode<T>& checked() const {
    if (!node_) throw Error("operation on an undefined tensor");
    return *node_;
  }

  template <typename U>
  friend Tensor<U> make_op_output(Shape, std::vector<U>, std::vector<Tensor<U>>,
                                  std::function<void(detail::TensorNode<U>&)>);

  std::shared_ptr<detail::TensorNode<T>> node_;
};

/// True while gradient recording is enabled on this thread.
bool grad_enabled();

/// Disables graph recording for its scope (inference / plain evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

template <typename T>
void accumulate_grad(TensorNode<T>& node, std::span<const T> g);

}  // namespace detail

/// Builds an op output node. Parents and the backward closure are recorded
/// only when grad mode is on and at least one parent requires gradients.
template <typename T>
Tensor<T> make_op_output(Shape shape, std::vector<T> data,
                         std::vector<Tensor<T>> parents,
                         std::function<void(detail::TensorNode<T>&)> backward_fn);

/// Runs reverse-mode differentiation from a scalar root, accumulating
/// dRoot/dTensor into every reachable tensor that requires gradients.
template <typename T>
void backward(const Tensor<T>& root);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dcu
