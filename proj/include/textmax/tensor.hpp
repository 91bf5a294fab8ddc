#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "textmax/errors.hpp"

namespace textmax {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major tensor. Immutable once built; copies share storage.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  /// Scalar zero.
  BasicTensor() : BasicTensor(adopt({1}, std::vector<T>(1, T{0}))) {}

  /// Validating constructor: positive extents, matching length, finite values.
  BasicTensor(Shape shape, std::vector<T> data) {
    check_layout(shape, data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw NumericError(i, "tensor element " + std::to_string(i) +
                                  " is not finite");
      }
    }
    shape_ = std::move(shape);
    data_ = std::make_shared<const std::vector<T>>(std::move(data));
  }

  /// Takes ownership without the finiteness scan. Used by graph primitives,
  /// which do their own checking when the graph runs in checked mode.
  static BasicTensor adopt(Shape shape, std::vector<T> data) {
    check_layout(shape, data.size());
    BasicTensor t(Unchecked{});
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<T>>(std::move(data));
    return t;
  }

  static BasicTensor zeros(Shape shape) {
    const auto n = textmax::numel(shape);
    return adopt(std::move(shape), std::vector<T>(n, T{0}));
  }

  static BasicTensor full(Shape shape, T value) {
    const auto n = textmax::numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value));
  }

  static BasicTensor scalar(T value) { return BasicTensor({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_->size(); }

  std::span<const T> data() const noexcept { return {data_->data(), data_->size()}; }
  const std::vector<T>& vec() const noexcept { return *data_; }

  T operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::size_t row, std::size_t col) const {
    return (*data_)[row * shape_.back() + col];
  }

  std::span<const T> row(std::size_t r) const {
    const auto cols = shape_.back();
    return data().subspan(r * cols, cols);
  }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + to_string(shape_));
    }
    return (*data_)[0];
  }

  bool all_finite() const {
    for (T v : *data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return BasicTensor<U>::adopt(shape_, std::move(out));
  }

  BasicTensor reshaped(Shape shape) const {
    if (textmax::numel(shape) != numel()) {
      throw ShapeError("reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    BasicTensor t(*this);
    t.shape_ = std::move(shape);
    return t;
  }

 private:
  struct Unchecked {};
  explicit BasicTensor(Unchecked) {}

  static void check_layout(const Shape& shape, std::size_t length) {
    if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extent must be positive: " + to_string(shape));
    }
    if (textmax::numel(shape) != length) {
      throw ShapeError("tensor shape " + to_string(shape) + " needs " +
                       std::to_string(textmax::numel(shape)) + " elements, got " +
                       std::to_string(length));
    }
  }

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
};

using Tensor = BasicTensor<float>;

template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

}  // namespace textmax
