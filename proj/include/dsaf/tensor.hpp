#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsaf/error.hpp"

namespace dsaf {

// N x C x H x W. Matrices are stored as (n, features, 1, 1).
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  // Per-sample flattened length.
  std::size_t row() const { return c * h * w; }
  bool empty() const { return numel() == 0; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return Tensor(Shape{rows, cols, 1, 1}, std::move(data));
  }
  static Tensor vector(std::vector<T> data) {
    const std::size_t len = data.size();
    return Tensor(Shape{1, len, 1, 1}, std::move(data));
  }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  // Sample `n` flattened to c*h*w values.
  std::span<T> row(std::size_t n) { return std::span<T>(data_).subspan(n * shape_.row(), shape_.row()); }
  std::span<const T> row(std::size_t n) const {
    return std::span<const T>(data_).subspan(n * shape_.row(), shape_.row());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor reshaped(Shape s) const {
    if (s.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    }
    return Tensor(s, data_);
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Rows n, channels [begin, end) copied into a new tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Rows [begin, end) of the batch axis.
template <class T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Stacks per-sample tensors of identical (c, h, w) along the batch axis.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts);

}  // namespace dsaf
