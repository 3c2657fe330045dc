#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wtpose/error.hpp"

namespace wtpose {

using Shape = std::vector<std::int64_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

// Dense row-major array with an optional gradient buffer of the same size.
// T is float or double. Values are treated as immutable once a tensor is
// handed to a graph; the gradient buffer is the only state that changes
// during a backward sweep, hence `mutable`.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_numel(shape_) != values_.size()) {
      throw DimensionError("tensor value count " + std::to_string(values_.size()) +
                           " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  // NCHW element access.
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return values_[offset4(n, c, h, w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return values_[offset4(n, c, h, w)];
  }

  bool has_grad() const { return !grad_.empty(); }
  // Allocates a zeroed gradient buffer on first use.
  std::span<T> grad() const {
    if (grad_.empty()) grad_.assign(values_.size(), T(0));
    return grad_;
  }
  void accumulate_grad(std::span<const T> g) const {
    auto dst = grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
  void zero_grad() const {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
  }
  void drop_grad() const {
    grad_.clear();
    grad_.shrink_to_fit();
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), values_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  // Compares shape and values only.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  std::size_t offset4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
  }

  Shape shape_;
  std::vector<T> values_;
  mutable std::vector<T> grad_;
};

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(t.shape()));
  }
}

}  // namespace wtpose
