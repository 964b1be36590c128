#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lear/errors.hpp"

namespace lear {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += "x";
  }
  return out + "]";
}

/// Dense contiguous tensor, channel-last layout: [N, spatial..., C].
/// Copies are shallow (shared buffer); clone() deep-copies.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.buf_->begin(), t.buf_->end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("Tensor::from: value count does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  bool defined() const { return static_cast<bool>(buf_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return buf_ ? static_cast<std::int64_t>(buf_->size()) : 0; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }
  T& operator[](std::int64_t i) { return (*buf_)[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

  /// Same buffer, new shape (must preserve numel).
  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<T>>(*buf_);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(shape_);
    const T* src = data();
    U* dst = t.data();
    for (std::int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<U>(src[i]);
    return t;
  }

  void fill(T v) { std::fill(buf_->begin(), buf_->end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool shares_buffer(const Tensor& o) const { return buf_ == o.buf_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;

  template <typename U>
  friend class Tensor;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  const T* p = t.data();
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) return false;
  return true;
}

}  // namespace lear
