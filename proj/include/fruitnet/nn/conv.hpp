#pragma once

#include <algorithm>
#include <optional>
#include <string>

#include "fruitnet/parallel.hpp"
#include "fruitnet/tensor.hpp"

namespace fruitnet::nn {

enum class Padding { kSame, kValid };

/// Output extent and leading pad of one spatial axis. `same` follows the
/// TensorFlow rule: out = ceil(in / stride), extra padding goes after.
struct AxisGeometry {
  Index out = 0;
  Index pad_before = 0;
};

inline AxisGeometry axis_geometry(Index in, Index kernel, Index stride, Padding padding) {
  if (padding == Padding::kSame) {
    const Index out = (in + stride - 1) / stride;
    const Index total = std::max<Index>((out - 1) * stride + kernel - in, 0);
    return {out, total / 2};
  }
  if (in < kernel) {
    throw ShapeError("valid padding needs input extent " + std::to_string(in) +
                     " >= kernel " + std::to_string(kernel));
  }
  return {(in - kernel) / stride + 1, 0};
}

/// Standard convolution: kernel kh x kw x inC x outC. Depthwise: kh x kw x C.
template <typename Scalar>
struct ConvParams {
  Tensor<Scalar> kernel;
  std::optional<Tensor<Scalar>> bias;
  Index stride = 1;
  Padding padding = Padding::kSame;
};

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> kernel;
  std::optional<Tensor<Scalar>> bias;
};

namespace detail {

// Views rank-3 input as a batch of one.
template <typename Scalar>
Tensor<Scalar> as_batch(const Tensor<Scalar>& x) {
  if (x.rank() == 4) return x;
  if (x.rank() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  throw ShapeError("expected an H x W x C or N x H x W x C tensor, got " + shape_string(x.shape()));
}

template <typename Scalar>
Tensor<Scalar> like_input(Tensor<Scalar> y, const Tensor<Scalar>& x) {
  if (x.rank() == 3) return y.reshaped({y.dim(1), y.dim(2), y.dim(3)});
  return y;
}

struct ConvGeometry {
  Index n, h, w, c;
  Index kh, kw;
  Index stride;
  AxisGeometry rows, cols;
};

inline ConvGeometry geometry(const Shape& nhwc, Index kh, Index kw, Index stride, Padding padding) {
  if (stride < 1 || kh < 1 || kw < 1) throw ConfigError("kernel and stride must be positive");
  return {nhwc[0],
          nhwc[1],
          nhwc[2],
          nhwc[3],
          kh,
          kw,
          stride,
          axis_geometry(nhwc[1], kh, stride, padding),
          axis_geometry(nhwc[2], kw, stride, padding)};
}

// Patch matrix of one sample: (oh*ow) x (kh*kw*c), zero outside the image.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.setZero(g.rows.out * g.cols.out, g.kh * g.kw * g.c);
  for (Index oy = 0; oy < g.rows.out; ++oy) {
    for (Index ox = 0; ox < g.cols.out; ++ox) {
      Scalar* row = cols.row(oy * g.cols.out + ox).data();
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index iy = oy * g.stride + ky - g.rows.pad_before;
        if (iy < 0 || iy >= g.h) continue;
        for (Index kx = 0; kx < g.kw; ++kx) {
          const Index ix = ox * g.stride + kx - g.cols.pad_before;
          if (ix < 0 || ix >= g.w) continue;
          std::copy_n(image + (iy * g.w + ix) * g.c, g.c, row + (ky * g.kw + kx) * g.c);
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* image) {
  for (Index oy = 0; oy < g.rows.out; ++oy) {
    for (Index ox = 0; ox < g.cols.out; ++ox) {
      const Scalar* row = cols.row(oy * g.cols.out + ox).data();
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index iy = oy * g.stride + ky - g.rows.pad_before;
        if (iy < 0 || iy >= g.h) continue;
        for (Index kx = 0; kx < g.kw; ++kx) {
          const Index ix = ox * g.stride + kx - g.cols.pad_before;
          if (ix < 0 || ix >= g.w) continue;
          Scalar* dst = image + (iy * g.w + ix) * g.c;
          const Scalar* src = row + (ky * g.kw + kx) * g.c;
          for (Index k = 0; k < g.c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

template <typename Scalar>
void check_bias(const ConvParams<Scalar>& p, Index channels) {
  if (p.bias && (p.bias->rank() != 1 || p.bias->dim(0) != channels)) {
    throw ShapeError("bias " + shape_string(p.bias->shape()) + " does not match " +
                     std::to_string(channels) + " output channels");
  }
}

}  // namespace detail

/// Cross-correlation of an H x W x C (or batched) input with a kh x kw x C x F
/// kernel, computed per sample as im2col followed by a GEMM.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const ConvParams<Scalar>& p) {
  const Tensor<Scalar> x = detail::as_batch(input);
  const Tensor<Scalar>& k = p.kernel;
  if (k.rank() != 4 || k.dim(2) != x.dim(3)) {
    throw ShapeError("conv2d kernel " + shape_string(k.shape()) + " does not match input " +
                     shape_string(input.shape()));
  }
  detail::check_bias(p, k.dim(3));
  const auto g = detail::geometry(x.shape(), k.dim(0), k.dim(1), p.stride, p.padding);
  const Index filters = k.dim(3);
  const Index plane = g.rows.out * g.cols.out;
  Tensor<Scalar> y({g.n, g.rows.out, g.cols.out, filters});
  const auto kmat = k.matrix(filters);
  parallel_for(g.n, [&](Index n) {
    RowMatrix<Scalar> cols;
    detail::im2col(x.data() + n * g.h * g.w * g.c, g, cols);
    Eigen::Map<RowMatrix<Scalar>> out(y.data() + n * plane * filters, plane, filters);
    out.noalias() = cols * kmat;
    if (p.bias) out.rowwise() += p.bias->values().transpose();
  });
  return detail::like_input(std::move(y), input);
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const ConvParams<Scalar>& p,
                                  const Tensor<Scalar>& grad_output, bool param_grads = true) {
  const Tensor<Scalar> x = detail::as_batch(input);
  const Tensor<Scalar> dy = detail::as_batch(grad_output);
  const Tensor<Scalar>& k = p.kernel;
  const auto g = detail::geometry(x.shape(), k.dim(0), k.dim(1), p.stride, p.padding);
  const Index filters = k.dim(3);
  const Index plane = g.rows.out * g.cols.out;
  if (dy.shape() != Shape{g.n, g.rows.out, g.cols.out, filters}) {
    throw ShapeError("conv2d grad_output " + shape_string(grad_output.shape()) +
                     " does not match forward output");
  }
  ConvGrads<Scalar> grads{Tensor<Scalar>(x.shape()), Tensor<Scalar>(k.shape()), std::nullopt};
  if (p.bias && param_grads) grads.bias = Tensor<Scalar>(p.bias->shape());
  const auto kmat = k.matrix(filters);
  auto dk = grads.kernel.matrix(filters);
  RowMatrix<Scalar> cols;
  RowMatrix<Scalar> dcols;
  for (Index n = 0; n < g.n; ++n) {
    Eigen::Map<const RowMatrix<Scalar>> dout(dy.data() + n * plane * filters, plane, filters);
    if (param_grads) {
      detail::im2col(x.data() + n * g.h * g.w * g.c, g, cols);
      dk.noalias() += cols.transpose() * dout;
      if (grads.bias) grads.bias->values() += dout.colwise().sum().transpose();
    }
    dcols.noalias() = dout * kmat.transpose();
    detail::col2im_add(dcols, g, grads.input.data() + n * g.h * g.w * g.c);
  }
  grads.input = detail::like_input(std::move(grads.input), input);
  return grads;
}

/// Per-channel spatial filtering with a kh x kw x C kernel; output channel c
/// reads only input channel c.
template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& input, const ConvParams<Scalar>& p) {
  const Tensor<Scalar> x = detail::as_batch(input);
  const Tensor<Scalar>& k = p.kernel;
  if (k.rank() != 3 || k.dim(2) != x.dim(3)) {
    throw ShapeError("depthwise kernel " + shape_string(k.shape()) + " does not match input " +
                     shape_string(input.shape()));
  }
  detail::check_bias(p, k.dim(2));
  const auto g = detail::geometry(x.shape(), k.dim(0), k.dim(1), p.stride, p.padding);
  Tensor<Scalar> y({g.n, g.rows.out, g.cols.out, g.c});
  parallel_for(g.n * g.rows.out, [&](Index task) {
    const Index n = task / g.rows.out;
    const Index oy = task % g.rows.out;
    const Scalar* image = x.data() + n * g.h * g.w * g.c;
    for (Index ox = 0; ox < g.cols.out; ++ox) {
      Scalar* out = y.data() + ((n * g.rows.out + oy) * g.cols.out + ox) * g.c;
      if (p.bias) {
        std::copy_n(p.bias->data(), g.c, out);
      }
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index iy = oy * g.stride + ky - g.rows.pad_before;
        if (iy < 0 || iy >= g.h) continue;
        for (Index kx = 0; kx < g.kw; ++kx) {
          const Index ix = ox * g.stride + kx - g.cols.pad_before;
          if (ix < 0 || ix >= g.w) continue;
          const Scalar* src = image + (iy * g.w + ix) * g.c;
          const Scalar* w = k.data() + (ky * g.kw + kx) * g.c;
          for (Index c = 0; c < g.c; ++c) out[c] += src[c] * w[c];
        }
      }
    }
  });
  return detail::like_input(std::move(y), input);
}

template <typename Scalar>
ConvGrads<Scalar> depthwise_conv2d_backward(const Tensor<Scalar>& input,
                                            const ConvParams<Scalar>& p,
                                            const Tensor<Scalar>& grad_output,
                                            bool param_grads = true) {
  const Tensor<Scalar> x = detail::as_batch(input);
  const Tensor<Scalar> dy = detail::as_batch(grad_output);
  const Tensor<Scalar>& k = p.kernel;
  const auto g = detail::geometry(x.shape(), k.dim(0), k.dim(1), p.stride, p.padding);
  if (dy.shape() != Shape{g.n, g.rows.out, g.cols.out, g.c}) {
    throw ShapeError("depthwise grad_output " + shape_string(grad_output.shape()) +
                     " does not match forward output");
  }
  ConvGrads<Scalar> grads{Tensor<Scalar>(x.shape()), Tensor<Scalar>(k.shape()), std::nullopt};
  if (p.bias && param_grads) grads.bias = Tensor<Scalar>(p.bias->shape());
  for (Index n = 0; n < g.n; ++n) {
    const Scalar* image = x.data() + n * g.h * g.w * g.c;
    Scalar* dimage = grads.input.data() + n * g.h * g.w * g.c;
    for (Index oy = 0; oy < g.rows.out; ++oy) {
      for (Index ox = 0; ox < g.cols.out; ++ox) {
        const Scalar* dout = dy.data() + ((n * g.rows.out + oy) * g.cols.out + ox) * g.c;
        if (grads.bias) {
          for (Index c = 0; c < g.c; ++c) (*grads.bias)[c] += dout[c];
        }
        for (Index ky = 0; ky < g.kh; ++ky) {
          const Index iy = oy * g.stride + ky - g.rows.pad_before;
          if (iy < 0 || iy >= g.h) continue;
          for (Index kx = 0; kx < g.kw; ++kx) {
            const Index ix = ox * g.stride + kx - g.cols.pad_before;
            if (ix < 0 || ix >= g.w) continue;
            const Index tap = (ky * g.kw + kx) * g.c;
            const Index pix = (iy * g.w + ix) * g.c;
            const Scalar* w = k.data() + tap;
            Scalar* dx = dimage + pix;
            for (Index c = 0; c < g.c; ++c) dx[c] += dout[c] * w[c];
            if (param_grads) {
              Scalar* dw = grads.kernel.data() + tap;
              const Scalar* src = image + pix;
              for (Index c = 0; c < g.c; ++c) dw[c] += dout[c] * src[c];
            }
          }
        }
      }
    }
  }
  grads.input = detail::like_input(std::move(grads.input), input);
  return grads;
}

/// 1 x 1 convolution as a single matmul over the channel axis. Accepts the
/// 1 x 1 x C x F kernel layout of conv2d.
template <typename Scalar>
Tensor<Scalar> pointwise_conv2d(const Tensor<Scalar>& input, const ConvParams<Scalar>& p) {
  const Tensor<Scalar>& k = p.kernel;
  if (k.rank() != 4 || k.dim(0) != 1 || k.dim(1) != 1 || input.rank() < 3 ||
      k.dim(2) != input.shape().back()) {
    throw ShapeError("pointwise kernel " + shape_string(k.shape()) + " does not match input " +
                     shape_string(input.shape()));
  }
  if (p.stride != 1) throw ConfigError("pointwise convolution only supports stride 1");
  detail::check_bias(p, k.dim(3));
  Shape out_shape = input.shape();
  out_shape.back() = k.dim(3);
  Tensor<Scalar> y(out_shape);
  auto out = y.matrix(k.dim(3));
  out.noalias() = input.matrix(k.dim(2)) * k.matrix(k.dim(3));
  if (p.bias) out.rowwise() += p.bias->values().transpose();
  return y;
}

template <typename Scalar>
ConvGrads<Scalar> pointwise_conv2d_backward(const Tensor<Scalar>& input,
                                            const ConvParams<Scalar>& p,
                                            const Tensor<Scalar>& grad_output,
                                            bool param_grads = true) {
  const Tensor<Scalar>& k = p.kernel;
  const Index in_c = k.dim(2);
  const Index out_c = k.dim(3);
  if (grad_output.size() / out_c != input.size() / in_c) {
    throw ShapeError("pointwise grad_output " + shape_string(grad_output.shape()) +
                     " does not match forward output");
  }
  ConvGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>(k.shape()), std::nullopt};
  const auto dy = grad_output.matrix(out_c);
  grads.input.matrix(in_c).noalias() = dy * k.matrix(out_c).transpose();
  if (param_grads) {
    grads.kernel.matrix(out_c).noalias() = input.matrix(in_c).transpose() * dy;
    if (p.bias) grads.bias = Tensor<Scalar>(p.bias->shape(), dy.colwise().sum().transpose().eval());
  }
  return grads;
}

}  // namespace fruitnet::nn
