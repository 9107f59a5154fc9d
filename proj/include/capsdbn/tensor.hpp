#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "capsdbn/error.hpp"

namespace capsdbn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major n-dimensional array.
///
/// `T` is the storage type. Reductions throughout the library accumulate in
/// double regardless of `T`, so `Tensor<float>` is the production type and
/// `Tensor<double>` is used where gradient checks need full precision.
template <typename T = float>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_))
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Idx>
  T& operator()(Idx... idx) noexcept {
    return data_[offset(static_cast<std::size_t>(idx)...)];
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const noexcept {
    return data_[offset(static_cast<std::size_t>(idx)...)];
  }

  /// Contiguous view of the sub-array at leading index `i`.
  std::span<T> slice(std::size_t i) {
    const std::size_t stride = size() / shape_.at(0);
    return std::span<T>(data_).subspan(i * stride, stride);
  }
  std::span<const T> slice(std::size_t i) const {
    const std::size_t stride = size() / shape_.at(0);
    return std::span<const T>(data_).subspan(i * stride, stride);
  }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape_));
  }

  template <typename... Idx>
  std::size_t offset(Idx... idx) const noexcept {
    const std::size_t ix[] = {idx...};
    std::size_t off = 0;
    for (std::size_t d = 0; d < sizeof...(Idx); ++d) off = off * shape_[d] + ix[d];
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!all_finite(t.data())) throw NumericError(std::string(what) + ": non-finite value");
}

/// Dot product with 64-bit accumulation in index order.
template <typename T>
double dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ConfigError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  return dot(a.data(), b.data());
}

template <typename T>
double sum(std::span<const T> values) {
  double acc = 0.0;
  for (T v : values) acc += static_cast<double>(v);
  return acc;
}

}  // namespace capsdbn
