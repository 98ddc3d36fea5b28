#pragma once

#include <cmath>
#include <string>

#include "fruitnet/tensor.hpp"

namespace fruitnet::nn {

enum class Mode { kTrain, kInfer };

template <typename Scalar>
struct BatchNormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> moving_mean;
  Tensor<Scalar> moving_var;
  Scalar epsilon = Scalar(1e-3);
  // Weight kept on the old moving statistics at each training update.
  Scalar momentum = Scalar(0.99);

  Index channels() const { return gamma.size(); }

  void validate() const {
    const Index c = gamma.size();
    if (beta.size() != c || moving_mean.size() != c || moving_var.size() != c) {
      throw ShapeError("batchnorm parameter vectors differ in length");
    }
    if (!(epsilon > Scalar(0))) throw ConfigError("batchnorm epsilon must be positive");
    if ((moving_var.values().array() < Scalar(0)).any()) {
      throw NumericError("batchnorm moving variance is negative");
    }
  }
};

/// Output plus what backward needs. In train mode the updated moving
/// statistics are returned rather than written back.
template <typename Scalar>
struct BatchNormResult {
  Tensor<Scalar> output;
  Tensor<Scalar> normalized;
  Vector<Scalar> inv_std;
  Tensor<Scalar> moving_mean;
  Tensor<Scalar> moving_var;
};

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

/// Per-channel normalization over every axis except the last.
template <typename Scalar>
BatchNormResult<Scalar> batchnorm(const Tensor<Scalar>& input, const BatchNormParams<Scalar>& p,
                                  Mode mode) {
  p.validate();
  const Index c = p.channels();
  if (input.rank() < 1 || input.shape().back() != c) {
    throw ShapeError("batchnorm over " + std::to_string(c) + " channels got input " +
                     shape_string(input.shape()));
  }
  const auto x = input.matrix(c);
  BatchNormResult<Scalar> r;
  r.moving_mean = p.moving_mean;
  r.moving_var = p.moving_var;
  Vector<Scalar> mean;
  Vector<Scalar> var;
  if (mode == Mode::kTrain) {
    mean = x.colwise().mean().transpose();
    var = (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    r.moving_mean.values() = p.momentum * p.moving_mean.values() + (Scalar(1) - p.momentum) * mean;
    r.moving_var.values() = p.momentum * p.moving_var.values() + (Scalar(1) - p.momentum) * var;
    if ((r.moving_var.values().array() < Scalar(0)).any() ||
        !((var.array() + p.epsilon) > Scalar(0)).all()) {
      throw NumericError("batchnorm variance left its valid range");
    }
  } else {
    mean = p.moving_mean.values();
    var = p.moving_var.values();
  }
  r.inv_std = (var.array() + p.epsilon).rsqrt().matrix();
  r.normalized = Tensor<Scalar>(input.shape());
  r.output = Tensor<Scalar>(input.shape());
  auto xhat = r.normalized.matrix(c);
  xhat = ((x.rowwise() - mean.transpose()).array().rowwise() * r.inv_std.transpose().array()).matrix();
  r.output.matrix(c) =
      ((xhat.array().rowwise() * p.gamma.values().transpose().array()).rowwise() +
       p.beta.values().transpose().array())
          .matrix();
  require_finite(r.output, "batchnorm");
  return r;
}

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const Tensor<Scalar>& grad_output,
                                          const BatchNormResult<Scalar>& cache,
                                          const BatchNormParams<Scalar>& p, Mode mode) {
  const Index c = p.channels();
  if (grad_output.shape() != cache.normalized.shape()) {
    throw ShapeError("batchnorm grad_output " + shape_string(grad_output.shape()) +
                     " does not match forward output " + shape_string(cache.normalized.shape()));
  }
  const auto dy = grad_output.matrix(c);
  const auto xhat = cache.normalized.matrix(c);
  BatchNormGrads<Scalar> g{Tensor<Scalar>(grad_output.shape()), Tensor<Scalar>({c}),
                           Tensor<Scalar>({c})};
  g.beta.values() = dy.colwise().sum().transpose();
  g.gamma.values() = dy.cwiseProduct(xhat).colwise().sum().transpose();
  const Vector<Scalar> scale = p.gamma.values().cwiseProduct(cache.inv_std);
  auto dx = g.input.matrix(c);
  if (mode == Mode::kInfer) {
    dx = (dy.array().rowwise() * scale.transpose().array()).matrix();
  } else {
    const Scalar m = static_cast<Scalar>(dy.rows());
    // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
    dx = ((((dy.array() * m).rowwise() - g.beta.values().transpose().array()) -
           (xhat.array().rowwise() * g.gamma.values().transpose().array()))
              .rowwise() *
          (scale.transpose().array() / m))
             .matrix();
  }
  return g;
}

}  // namespace fruitnet::nn
