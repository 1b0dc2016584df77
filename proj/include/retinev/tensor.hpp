// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "retinev/error.hpp"

namespace retinev {

/// NCHW extents. Every tensor in the library is four-dimensional; parameters
/// and scalars use singleton axes.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  [[nodiscard]] std::size_t image() const { return plane() * static_cast<std::size_t>(c); }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ']';
  return os.str();
}

/// Dense row-major NCHW tensor with value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ValidationError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                            to_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor({1, 1, 1, 1}, v); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] int n() const { return shape_.n; }
  [[nodiscard]] int c() const { return shape_.c; }
  [[nodiscard]] int h() const { return shape_.h; }
  [[nodiscard]] int w() const { return shape_.w; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  /// Pointer to the start of image `n`, channel `c`.
  T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  [[nodiscard]] Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  [[nodiscard]] T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

 private:
  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ValidationError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace retinev
