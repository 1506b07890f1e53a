// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace viewmatch::diffcore {

using Shape = std::vector<std::int64_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string node_kind, std::size_t node_index)
      : std::runtime_error("non-finite value produced by node '" + node_kind + "' (#" +
                           std::to_string(node_index) + ")"),
        node_kind_(std::move(node_kind)),
        node_index_(node_index) {}

  const std::string& node_kind() const { return node_kind_; }
  std::size_t node_index() const { return node_index_; }

 private:
  std::string node_kind_;
  std::size_t node_index_;
};

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major array. The float instantiation is the working precision;
// the double one exists for gradient checking.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_numel(shape_)), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const {
    if (axis < 0) axis += rank();
    return shape_.at(static_cast<std::size_t>(axis));
  }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (checked_numel(shape) != static_cast<std::int64_t>(data_.size())) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const Tensor&) const = default;

 private:
  static std::int64_t checked_numel(const Shape& shape) {
    for (auto d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    }
    return shape_numel(shape);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Array = Tensor<float>;
using Array64 = Tensor<double>;

}  // namespace viewmatch::diffcore
