#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "convlstm/error.hpp"

namespace convlstm {

// Dense row-major tensor of real scalars. Images are channel-major (C,H,W);
// a batch, when present, is a leading axis. The scalar type selects the
// compute mode: float for training, double for gradient checking.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), T(0));
  }

  TensorT(std::vector<int> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_size(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw DimensionError("tensor value count does not match shape product");
    }
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    t.fill(value);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  int extent(int axis) const {
    if (axis < 0 || axis >= rank()) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                           std::to_string(rank()));
    }
    return shape_[axis];
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i, int j) {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  const T& operator()(int i, int j) const {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  T& operator()(int c, int y, int x) {
    assert(rank() == 3);
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const T& operator()(int c, int y, int x) const {
    assert(rank() == 3);
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  T& operator()(int n, int c, int y, int x) {
    assert(rank() == 4);
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& operator()(int n, int c, int y, int x) const {
    assert(rank() == 4);
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(T value) { data_.assign(data_.size(), value); }
  void zero() { fill(T(0)); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // Reinterprets the storage under a new shape with the same element count.
  TensorT reshaped(std::vector<int> shape) const {
    if (checked_size(shape) != size()) {
      throw DimensionError("reshape changes element count");
    }
    return TensorT(std::move(shape), data_);
  }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(out));
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  std::string shape_string() const { return shape_string(shape_); }

 private:
  static std::int64_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
    std::int64_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] < 1) {
        throw DimensionError("tensor extent must be >= 1 at axis " + std::to_string(i));
      }
      n *= shape[i];
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + TensorT<T>::shape_string(a.shape()) +
                         " vs " + TensorT<T>::shape_string(b.shape()));
  }
}

}  // namespace convlstm
