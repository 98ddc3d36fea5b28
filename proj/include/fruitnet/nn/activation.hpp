#pragma once

#include <algorithm>
#include <optional>
#include <string>

#include "fruitnet/random.hpp"
#include "fruitnet/tensor.hpp"
#include "fruitnet/nn/batchnorm.hpp"

namespace fruitnet::nn {

enum class Activation { kLinear, kRelu, kRelu6 };

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& input, Activation kind) {
  Tensor<Scalar> y = input;
  switch (kind) {
    case Activation::kLinear:
      break;
    case Activation::kRelu:
      y.values() = y.values().cwiseMax(Scalar(0));
      break;
    case Activation::kRelu6:
      y.values() = y.values().cwiseMax(Scalar(0)).cwiseMin(Scalar(6));
      break;
  }
  return y;
}

/// Derivative taken as 0 at the kinks.
template <typename Scalar>
Tensor<Scalar> activation_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output,
                                   Activation kind) {
  if (input.shape() != grad_output.shape()) {
    throw ShapeError("activation grad_output " + shape_string(grad_output.shape()) +
                     " does not match input " + shape_string(input.shape()));
  }
  Tensor<Scalar> dx = grad_output;
  const auto& x = input.values().array();
  switch (kind) {
    case Activation::kLinear:
      break;
    case Activation::kRelu:
      dx.values() = (x > Scalar(0)).select(grad_output.values(), Scalar(0));
      break;
    case Activation::kRelu6:
      dx.values() = (x > Scalar(0) && x < Scalar(6)).select(grad_output.values(), Scalar(0));
      break;
  }
  return dx;
}

/// Exp-normalization over the last axis, stabilized by subtracting the max.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input) {
  if (input.empty() || input.shape().back() < 2) {
    throw ShapeError("softmax needs at least 2 classes, got " + shape_string(input.shape()));
  }
  const Index k = input.shape().back();
  Tensor<Scalar> y(input.shape());
  const auto x = input.matrix(k);
  auto out = y.matrix(k);
  for (Index r = 0; r < x.rows(); ++r) {
    out.row(r) = (x.row(r).array() - x.row(r).maxCoeff()).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return y;
}

/// Vector-Jacobian product from the forward output.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& output, const Tensor<Scalar>& grad_output) {
  if (output.shape() != grad_output.shape()) {
    throw ShapeError("softmax grad_output " + shape_string(grad_output.shape()) +
                     " does not match output " + shape_string(output.shape()));
  }
  const Index k = output.shape().back();
  Tensor<Scalar> dx(output.shape());
  const auto y = output.matrix(k);
  const auto dy = grad_output.matrix(k);
  const Vector<Scalar> dots = y.cwiseProduct(dy).rowwise().sum();
  dx.matrix(k) = (y.array() * (dy.colwise() - dots).array()).matrix();
  return dx;
}

template <typename Scalar>
struct DropoutResult {
  Tensor<Scalar> output;
  // Empty in inference mode; otherwise 0 or 1 / (1 - rate) per element.
  std::optional<Tensor<Scalar>> mask;
};

/// Inverted dropout: inference is the identity.
template <typename Scalar>
DropoutResult<Scalar> dropout(const Tensor<Scalar>& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kInfer || rate == 0.0) return {input, std::nullopt};
  Tensor<Scalar> mask(input.shape());
  const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Index i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < rate ? Scalar(0) : keep;
  Tensor<Scalar> y(input.shape(), input.values().cwiseProduct(mask.values()).eval());
  return {std::move(y), std::move(mask)};
}

template <typename Scalar>
Tensor<Scalar> dropout_backward(const std::optional<Tensor<Scalar>>& mask,
                                const Tensor<Scalar>& grad_output) {
  if (!mask) return grad_output;
  return Tensor<Scalar>(grad_output.shape(), grad_output.values().cwiseProduct(mask->values()).eval());
}

}  // namespace fruitnet::nn
