#pragma once

#include <string>

#include "fruitnet/tensor.hpp"

namespace fruitnet::nn {

template <typename Scalar>
struct DenseParams {
  Tensor<Scalar> weight;  // in x out
  Tensor<Scalar> bias;    // out

  Index inputs() const { return weight.dim(0); }
  Index outputs() const { return weight.dim(1); }
};

template <typename Scalar>
struct DenseGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

namespace detail {
template <typename Scalar>
void check_dense(const Tensor<Scalar>& input, const DenseParams<Scalar>& p) {
  if (p.weight.rank() != 2 || p.bias.rank() != 1 || p.bias.dim(0) != p.outputs()) {
    throw ShapeError("dense weight " + shape_string(p.weight.shape()) + " and bias " +
                     shape_string(p.bias.shape()) + " are inconsistent");
  }
  if (input.empty() || input.shape().back() != p.inputs()) {
    throw ShapeError("dense layer with " + std::to_string(p.inputs()) + " inputs got " +
                     shape_string(input.shape()));
  }
}
}  // namespace detail

/// input . W + b over the last axis; leading axes are carried through.
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const DenseParams<Scalar>& p) {
  detail::check_dense(input, p);
  Shape out_shape = input.shape();
  out_shape.back() = p.outputs();
  Tensor<Scalar> y(out_shape);
  auto out = y.matrix(p.outputs());
  out.noalias() = input.matrix(p.inputs()) * p.weight.matrix();
  out.rowwise() += p.bias.values().transpose();
  return y;
}

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& input, const DenseParams<Scalar>& p,
                                  const Tensor<Scalar>& grad_output, bool param_grads = true) {
  detail::check_dense(input, p);
  if (grad_output.size() / p.outputs() != input.size() / p.inputs() ||
      grad_output.shape().back() != p.outputs()) {
    throw ShapeError("dense grad_output " + shape_string(grad_output.shape()) +
                     " does not match forward output");
  }
  DenseGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(p.weight.shape()),
                       Tensor<Scalar>(p.bias.shape())};
  const auto dy = grad_output.matrix(p.outputs());
  g.input.matrix(p.inputs()).noalias() = dy * p.weight.matrix().transpose();
  if (param_grads) {
    g.weight.matrix().noalias() = input.matrix(p.inputs()).transpose() * dy;
    g.bias.values() = dy.colwise().sum().transpose();
  }
  return g;
}

}  // namespace fruitnet::nn
