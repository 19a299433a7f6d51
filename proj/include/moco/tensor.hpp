#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "moco/common.hpp"

namespace moco {

/// Dense N-dimensional array of doubles in row-major order.
/// Canonical image layout is [batch, channel, height, width].
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(checked_numel(shape_) == static_cast<int64_t>(data_.size()),
          ErrorCode::ShapeMismatch, "tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  bool empty() const { return data_.empty(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int dim() const { return static_cast<int>(shape_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }

  int64_t size(int axis) const {
    check(axis >= 0 && axis < dim(), ErrorCode::OutOfBounds, "axis out of range");
    return shape_[axis];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D and 4-D accessors cover the layouts used throughout (matrices, images).
  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

  double& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  double& at(int64_t b, int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  double at(int64_t b, int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(std::vector<int64_t> new_shape) const {
    check(checked_numel(new_shape) == numel(), ErrorCode::ShapeMismatch,
          "reshape changes element count");
    return Tensor(std::move(new_shape), data_);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < dim(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    check(!shape.empty(), ErrorCode::InvalidArgument, "tensor shape must not be empty");
    int64_t n = 1;
    for (int64_t e : shape) {
      check(e >= 1, ErrorCode::InvalidArgument, "tensor extents must be >= 1");
      n *= e;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  check(a.same_shape(b), ErrorCode::ShapeMismatch,
        std::string(where) + ": shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace moco
