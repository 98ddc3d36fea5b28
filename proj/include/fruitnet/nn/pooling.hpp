#pragma once

#include <string>

#include "fruitnet/nn/conv.hpp"
#include "fruitnet/tensor.hpp"

namespace fruitnet::nn {

/// Channelwise max over window x window tiles, valid padding.
template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& input, Index window = 2, Index stride = 2) {
  const Tensor<Scalar> x = detail::as_batch(input);
  if (x.dim(1) < window || x.dim(2) < window) {
    throw ShapeError("maxpool window " + std::to_string(window) + " larger than input " +
                     shape_string(input.shape()));
  }
  const auto g = detail::geometry(x.shape(), window, window, stride, Padding::kValid);
  Tensor<Scalar> y({g.n, g.rows.out, g.cols.out, g.c});
  for (Index n = 0; n < g.n; ++n) {
    for (Index oy = 0; oy < g.rows.out; ++oy) {
      for (Index ox = 0; ox < g.cols.out; ++ox) {
        Scalar* out = y.data() + ((n * g.rows.out + oy) * g.cols.out + ox) * g.c;
        const Scalar* first = x.data() + ((n * g.h + oy * stride) * g.w + ox * stride) * g.c;
        std::copy_n(first, g.c, out);
        for (Index ky = 0; ky < window; ++ky) {
          for (Index kx = 0; kx < window; ++kx) {
            const Scalar* src =
                x.data() + ((n * g.h + oy * stride + ky) * g.w + ox * stride + kx) * g.c;
            for (Index c = 0; c < g.c; ++c) out[c] = std::max(out[c], src[c]);
          }
        }
      }
    }
  }
  return detail::like_input(std::move(y), input);
}

/// Routes each window's gradient to its first maximal element.
template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output,
                                  Index window = 2, Index stride = 2) {
  const Tensor<Scalar> x = detail::as_batch(input);
  const Tensor<Scalar> dy = detail::as_batch(grad_output);
  const auto g = detail::geometry(x.shape(), window, window, stride, Padding::kValid);
  if (dy.shape() != Shape{g.n, g.rows.out, g.cols.out, g.c}) {
    throw ShapeError("maxpool grad_output " + shape_string(grad_output.shape()) +
                     " does not match forward output");
  }
  Tensor<Scalar> dx(x.shape());
  for (Index n = 0; n < g.n; ++n) {
    for (Index oy = 0; oy < g.rows.out; ++oy) {
      for (Index ox = 0; ox < g.cols.out; ++ox) {
        const Index out = ((n * g.rows.out + oy) * g.cols.out + ox) * g.c;
        for (Index c = 0; c < g.c; ++c) {
          Index best = ((n * g.h + oy * stride) * g.w + ox * stride) * g.c + c;
          for (Index ky = 0; ky < window; ++ky) {
            for (Index kx = 0; kx < window; ++kx) {
              const Index at = ((n * g.h + oy * stride + ky) * g.w + ox * stride + kx) * g.c + c;
              if (x[at] > x[best]) best = at;
            }
          }
          dx[best] += dy[out + c];
        }
      }
    }
  }
  return detail::like_input(std::move(dx), input);
}

/// H x W x C -> 1 x 1 x C spatial mean (batched inputs keep their batch axis).
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
  const Tensor<Scalar> x = detail::as_batch(input);
  const Index n = x.dim(0);
  const Index plane = x.dim(1) * x.dim(2);
  const Index c = x.dim(3);
  Tensor<Scalar> y({n, 1, 1, c});
  for (Index i = 0; i < n; ++i) {
    Eigen::Map<const RowMatrix<Scalar>> sample(x.data() + i * plane * c, plane, c);
    y.matrix(c).row(i) = sample.colwise().mean();
  }
  return detail::like_input(std::move(y), input);
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& input_shape,
                                        const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> dx(input_shape);
  const Tensor<Scalar> x = detail::as_batch(dx);
  const Index n = x.dim(0);
  const Index plane = x.dim(1) * x.dim(2);
  const Index c = x.dim(3);
  if (grad_output.size() != n * c) {
    throw ShapeError("global_avg_pool grad_output " + shape_string(grad_output.shape()) +
                     " does not match input " + shape_string(input_shape));
  }
  const auto dy = grad_output.matrix(c);
  for (Index i = 0; i < n; ++i) {
    Eigen::Map<RowMatrix<Scalar>> sample(dx.data() + i * plane * c, plane, c);
    sample.rowwise() = dy.row(i) / static_cast<Scalar>(plane);
  }
  return dx;
}

}  // namespace fruitnet::nn
