#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "tabatt/errors.hpp"

namespace tabatt {

using Shape = std::vector<int64_t>;

constexpr int kMaxRank = 5;

int64_t numel(const Shape& shape);
std::vector<int64_t> row_major_strides(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles, rank 1..5. A scalar is shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Multi-index access, for readability in oracles and small kernels.
  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Broadcast rules: align trailing axes, extent-1 axes stretch.
Shape broadcast_shape(const Shape& a, const Shape& b);

// Strides of `in` viewed as `out` (left-padded with 1s, stride 0 on
// stretched axes). Throws ShapeMismatch if not broadcastable to `out`.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out);

// Sum `t` down to `target` shape (inverse of broadcasting).
Tensor reduce_to(const Tensor& t, const Shape& target);

// Batched matrix product of raw tensors with optional transposes of the
// trailing two axes; leading batch axes broadcast.
Tensor mm(const Tensor& a, const Tensor& b, bool transpose_a = false,
          bool transpose_b = false);

}  // namespace tabatt
