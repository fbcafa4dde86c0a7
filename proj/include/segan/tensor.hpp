#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segan/error.hpp"

namespace segan {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major tensor with an optional gradient buffer.
///
/// 4-D tensors use the (batch, channel, height, width) layout throughout.
/// The gradient buffer exists iff requires_grad() is true and always has the
/// same shape as the data.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    const std::size_t expected = segan::numel(shape_);
    if (data_.size() != expected) {
      throw ShapeError("shape " + shape_string(shape_) + " expected " + std::to_string(expected) +
                       " values, got " + std::to_string(data_.size()));
    }
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T{0}, requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = segan::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element of a 4-D tensor.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// First element; the value of a scalar tensor.
  T item() const { return data_.at(0); }

  bool requires_grad() const noexcept { return requires_grad_; }

  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on) {
      grad_.assign(data_.size(), T{0});
    } else {
      grad_.clear();
      grad_.shrink_to_fit();
    }
  }

  std::span<T> grad() {
    if (!requires_grad_) throw Error("tensor does not require grad");
    return grad_;
  }
  std::span<const T> grad() const {
    if (!requires_grad_) throw Error("tensor does not require grad");
    return grad_;
  }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{0}); }

  /// Same contents viewed under a new shape with the same element count.
  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> values(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(values), requires_grad_);
  }

  /// Bitwise-equal shape and data; gradients are ignored.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

/// Builds a constant tensor; the value count must match the shape.
template <typename T>
Tensor<T> tensor_from(Shape shape, std::vector<T> values) {
  return Tensor<T>(std::move(shape), std::move(values));
}

}  // namespace segan
