#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cstnet/error.hpp"
#include "cstnet/rng.hpp"

namespace cstnet {

/// Between one and four extents, each at least 1.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() : rank_(1), dims_{1, 1, 1, 1} {}

  Shape(std::initializer_list<std::size_t> dims) : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

  explicit Shape(std::span<const std::size_t> dims) : rank_(dims.size()), dims_{1, 1, 1, 1} {
    if (dims.empty() || dims.size() > kMaxRank) {
      throw ShapeError("tensor rank must be 1-4, got " + std::to_string(dims.size()));
    }
    std::size_t total = 1;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (dims[i] == 0) throw ShapeError("tensor extent " + std::to_string(i) + " is zero");
      if (total > std::numeric_limits<std::size_t>::max() / dims[i]) {
        throw ShapeError("tensor extents overflow");
      }
      total *= dims[i];
      dims_[i] = dims[i];
    }
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

  std::size_t size() const {
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank_; ++i) total *= dims_[i];
    return total;
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && std::equal(a.dims().begin(), a.dims().end(), b.dims().begin());
  }

  std::string str() const {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < rank_; ++i) out << (i ? "," : "") << dims_[i];
    out << ')';
    return out.str();
  }

 private:
  std::size_t rank_;
  std::array<std::size_t, kMaxRank> dims_;
};

/// Dense row-major tensor, innermost dimension last (N,C,H,W for rank 4).
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : data_(1, T{}) {}

  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}

  BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) + " values, shape " + shape_.str() +
                       " needs " + std::to_string(shape_.size()));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(shape); }

  static BasicTensor constant(Shape shape, T value) { return BasicTensor(shape, value); }

  /// Mean-zero normal draws with standard deviation `stddev`.
  static BasicTensor normal(Shape shape, double stddev, RngStream& rng) {
    BasicTensor out(shape);
    for (auto& v : out.data_) v = static_cast<T>(stddev * rng.normal());
    return out;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  /// Same data under a new shape of equal size.
  BasicTensor reshaped(Shape shape) const {
    if (shape.size() != size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    BasicTensor out = *this;
    out.shape_ = shape;
    return out;
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> values(data_.size());
    std::transform(data_.begin(), data_.end(), values.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(values));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

inline void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape.str());
  }
}

}  // namespace cstnet
