#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "matter/errors.hpp"

namespace matter {

// Dense row-major array. Production code uses float (Tensor); the double
// instantiation (TensorD) exists so gradient verification can run the same
// code paths without single-precision cancellation in finite differences.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<int> shape, T fill = T(0))
      : shape_(std::move(shape)) {
    data_.assign(checked_count(shape_), fill);
  }

  // An empty shape with no data is the null tensor of the default constructor.
  BasicTensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() && data_.empty()) return;
    if (data_.size() != checked_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string());
    }
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int i, int j) { return data_[index2(i, j)]; }
  const T& at(int i, int j) const { return data_[index2(i, j)]; }
  T& at(int c, int i, int j) { return data_[index3(c, i, j)]; }
  const T& at(int c, int i, int j) const { return data_[index3(c, i, j)]; }
  T& at(int n, int c, int i, int j) { return data_[index4(n, c, i, j)]; }
  const T& at(int n, int c, int i, int j) const { return data_[index4(n, c, i, j)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  // Same data under new extents; element count must be preserved.
  BasicTensor reshaped(std::vector<int> shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
      if (e < 0) throw ShapeError("negative tensor extent");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }
  std::size_t index2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t index3(int c, int i, int j) const {
    return (static_cast<std::size_t>(c) * shape_[1] + i) * shape_[2] + j;
  }
  std::size_t index4(int n, int c, int i, int j) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + i) *
               shape_[3] + j;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace matter
