#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fruitnet/errors.hpp"

namespace fruitnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Spatial image shape. Batch is only meaningful for stacked inputs.
struct Shape4 {
  Index height = 1;
  Index width = 1;
  Index channels = 1;
  Index batch = 1;

  Shape hwc() const { return {height, width, channels}; }
  Shape nhwc() const { return {batch, height, width, channels}; }
  bool valid() const { return height >= 1 && width >= 1 && channels >= 1 && batch >= 1; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense row-major N-d array. Images and feature maps are H x W x C (or
/// N x H x W x C for batches); element (i, j, k) of an H x W x C tensor lives
/// at flat index (i * W + j) * C + k.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_dims();
    values_ = Vector<Scalar>::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, Vector<Scalar> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " elements, got " +
                       std::to_string(values_.size()));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Vector<Scalar>(Eigen::Map<const Vector<Scalar>>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return shape_.empty(); }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }
  std::span<Scalar> span() { return {values_.data(), static_cast<std::size_t>(values_.size())}; }
  std::span<const Scalar> span() const {
    return {values_.data(), static_cast<std::size_t>(values_.size())};
  }

  Vector<Scalar>& values() { return values_; }
  const Vector<Scalar>& values() const { return values_; }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  Scalar& at(std::initializer_list<Index> idx) { return values_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return values_[offset(idx)]; }

  /// Row-major matrix view with `cols` columns; rows are inferred.
  Eigen::Map<RowMatrix<Scalar>> matrix(Index cols) {
    return {values_.data(), values_.size() / cols, cols};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix(Index cols) const {
    return {values_.data(), values_.size() / cols, cols};
  }
  /// Matrix view of a rank-2 tensor.
  Eigen::Map<RowMatrix<Scalar>> matrix() { return matrix(dim(1)); }
  Eigen::Map<const RowMatrix<Scalar>> matrix() const { return matrix(dim(1)); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), values_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>().eval());
  }

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_dims() const {
    for (Index d : shape_) {
      if (d < 1) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<std::size_t>(idx.size()) != shape_.size()) {
      throw ShapeError("index rank does not match tensor rank " + shape_string(shape_));
    }
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : idx) flat = flat * shape_[axis++] + i;
    return flat;
  }

  Shape shape_;
  Vector<Scalar> values_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws NumericError naming `what` when `t` holds a NaN or Inf.
template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError(what + " produced a non-finite value");
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

template <typename Scalar, typename F>
Tensor<Scalar> map_elementwise(const Tensor<Scalar>& t, F&& f) {
  Tensor<Scalar> out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = f(t[i]);
  require_finite(out, "map_elementwise");
  return out;
}

}  // namespace fruitnet
