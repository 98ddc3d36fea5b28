#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fruitnet/model.hpp"
#include "fruitnet/nn/activation.hpp"
#include "fruitnet/nn/batchnorm.hpp"
#include "fruitnet/nn/conv.hpp"
#include "fruitnet/nn/dense.hpp"
#include "fruitnet/nn/pooling.hpp"

namespace fruitnet {

// Runs a ModelGraph over N x H x W x C batches with any parameter precision:
// float for training and inference, double for gradient verification.

constexpr std::size_t kNoCache = std::numeric_limits<std::size_t>::max();

template <typename Scalar>
struct LayerTrace {
  bool cached = false;
  nn::Mode mode = nn::Mode::kInfer;
  Tensor<Scalar> input;
  // dense: pre-activation output; softmax: output; batchnorm: normalized input
  Tensor<Scalar> aux;
  Vector<Scalar> inv_std;
  std::optional<Tensor<Scalar>> mask;
};

template <typename Scalar>
struct Trace {
  std::vector<LayerTrace<Scalar>> layers;
  // New moving statistics produced by train-mode batchnorm layers.
  TensorStore<Scalar> moving_updates;
};

struct ForwardOptions {
  nn::Mode mode = nn::Mode::kInfer;
  std::size_t begin = 0;
  std::size_t end = std::numeric_limits<std::size_t>::max();
  // Layers at or after this index keep what backward needs.
  std::size_t cache_from = kNoCache;
  Rng* rng = nullptr;
};

namespace detail {

template <typename Scalar>
nn::ConvParams<Scalar> conv_params(const LayerSpec& l, const TensorStore<Scalar>& params) {
  nn::ConvParams<Scalar> p;
  p.kernel = params.at(l.name + (l.kind == LayerKind::kDepthwiseConv ? "/depthwise_kernel" : "/kernel"));
  if (l.use_bias) p.bias = params.at(l.name + "/bias");
  p.stride = l.stride;
  p.padding = l.padding;
  return p;
}

template <typename Scalar>
nn::BatchNormParams<Scalar> bn_params(const LayerSpec& l, const TensorStore<Scalar>& params) {
  return {params.at(l.name + "/gamma"),       params.at(l.name + "/beta"),
          params.at(l.name + "/moving_mean"), params.at(l.name + "/moving_variance"),
          static_cast<Scalar>(l.epsilon),     static_cast<Scalar>(l.momentum)};
}

template <typename Scalar>
nn::DenseParams<Scalar> dense_params(const LayerSpec& l, const TensorStore<Scalar>& params) {
  return {params.at(l.name + "/kernel"), params.at(l.name + "/bias")};
}

inline Shape batched(Index n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

}  // namespace detail

/// Forward pass over layers [begin, end). `input` is batched: its leading
/// axis is the sample axis, the rest must equal layers[begin].input_shape.
/// In train mode only trainable layers use batch statistics and dropout.
template <typename Scalar>
Tensor<Scalar> forward(const ModelGraph& model, const TensorStore<Scalar>& params,
                       const Tensor<Scalar>& input, const ForwardOptions& options = {},
                       Trace<Scalar>* trace = nullptr) {
  const std::size_t end = std::min(options.end, model.layers.size());
  if (options.begin > end) throw ConfigError("forward range is empty");
  const Shape& expected = options.begin < model.layers.size()
                              ? model.layers[options.begin].input_shape
                              : model.layers.back().output_shape;
  const Index n = input.rank() > 0 ? input.dim(0) : 0;
  if (input.rank() != static_cast<Index>(expected.size()) + 1 ||
      !std::equal(expected.begin(), expected.end(), input.shape().begin() + 1)) {
    throw ShapeError("model expects batches of " + shape_string(expected) + ", got " +
                     shape_string(input.shape()));
  }
  if (trace) trace->layers.assign(model.layers.size(), {});

  Tensor<Scalar> x = input;
  for (std::size_t i = options.begin; i < end; ++i) {
    const LayerSpec& l = model.layers[i];
    const nn::Mode mode =
        options.mode == nn::Mode::kTrain && l.trainable ? nn::Mode::kTrain : nn::Mode::kInfer;
    LayerTrace<Scalar>* lt = nullptr;
    if (trace && i >= options.cache_from) {
      lt = &trace->layers[i];
      lt->cached = true;
      lt->mode = mode;
      lt->input = x;
    }
    Tensor<Scalar> y;
    switch (l.kind) {
      case LayerKind::kConv:
        y = nn::conv2d(x, detail::conv_params(l, params));
        break;
      case LayerKind::kDepthwiseConv:
        y = nn::depthwise_conv2d(x, detail::conv_params(l, params));
        break;
      case LayerKind::kPointwiseConv:
        y = nn::pointwise_conv2d(x, detail::conv_params(l, params));
        break;
      case LayerKind::kBatchNorm: {
        auto r = nn::batchnorm(x, detail::bn_params(l, params), mode);
        if (mode == nn::Mode::kTrain && trace) {
          trace->moving_updates.set(l.name + "/moving_mean", std::move(r.moving_mean));
          trace->moving_updates.set(l.name + "/moving_variance", std::move(r.moving_var));
        }
        if (lt) {
          lt->aux = std::move(r.normalized);
          lt->inv_std = std::move(r.inv_std);
        }
        y = std::move(r.output);
        break;
      }
      case LayerKind::kActivation:
        y = nn::activation(x, l.activation);
        break;
      case LayerKind::kMaxPool:
        y = nn::maxpool2d(x, l.pool, l.pool);
        break;
      case LayerKind::kGlobalAvgPool:
        y = nn::global_avg_pool(x);
        break;
      case LayerKind::kFlatten:
        y = x.reshaped(detail::batched(n, l.output_shape));
        break;
      case LayerKind::kDense: {
        Tensor<Scalar> pre = nn::dense(x, detail::dense_params(l, params));
        y = nn::activation(pre, l.activation);
        if (lt) lt->aux = std::move(pre);
        break;
      }
      case LayerKind::kDropout: {
        if (mode == nn::Mode::kTrain && !options.rng) {
          throw ConfigError("train-mode dropout needs a random generator");
        }
        Rng unused;
        auto r = nn::dropout(x, l.rate, mode, options.rng ? *options.rng : unused);
        if (lt) lt->mask = std::move(r.mask);
        y = std::move(r.output);
        break;
      }
      case LayerKind::kSoftmax:
        y = nn::softmax(x);
        if (lt) lt->aux = y;
        break;
    }
    require_finite(y, "layer '" + l.name + "'");
    x = std::move(y);
  }
  return x;
}

struct BackwardOptions {
  // Compute parameter gradients of frozen layers too (gradient checks).
  bool all_param_grads = false;
};

/// Backpropagates `grad` (w.r.t. the output of layer end - 1) down to and
/// including layer `stop`, returning the gradient w.r.t. that layer's input.
/// Parameter gradients are accumulated into `grads` when it is non-null.
template <typename Scalar>
Tensor<Scalar> backward(const ModelGraph& model, const TensorStore<Scalar>& params,
                        const Trace<Scalar>& trace, Tensor<Scalar> grad, std::size_t end,
                        std::size_t stop, TensorStore<Scalar>* grads,
                        const BackwardOptions& options = {}) {
  if (end > model.layers.size() || stop > end) throw ConfigError("backward range is invalid");
  for (std::size_t i = end; i-- > stop;) {
    const LayerSpec& l = model.layers[i];
    if (i >= trace.layers.size() || !trace.layers[i].cached) {
      throw StateError("layer '" + l.name + "' has no cached forward state for backward");
    }
    const LayerTrace<Scalar>& lt = trace.layers[i];
    const bool want = grads && (l.trainable || options.all_param_grads);
    auto accumulate = [&](const std::string& name, const Tensor<Scalar>& g) {
      if (Tensor<Scalar>* slot = grads->find(name)) {
        slot->values() += g.values();
      } else {
        grads->set(name, g);
      }
    };
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kDepthwiseConv:
      case LayerKind::kPointwiseConv: {
        const auto p = detail::conv_params(l, params);
        nn::ConvGrads<Scalar> g =
            l.kind == LayerKind::kConv            ? nn::conv2d_backward(lt.input, p, grad, want)
            : l.kind == LayerKind::kDepthwiseConv ? nn::depthwise_conv2d_backward(lt.input, p, grad, want)
                                                  : nn::pointwise_conv2d_backward(lt.input, p, grad, want);
        if (want) {
          accumulate(parameter_names(l).front(), g.kernel);
          if (g.bias) accumulate(l.name + "/bias", *g.bias);
        }
        grad = std::move(g.input);
        break;
      }
      case LayerKind::kBatchNorm: {
        nn::BatchNormResult<Scalar> cache;
        cache.normalized = lt.aux;
        cache.inv_std = lt.inv_std;
        auto g = nn::batchnorm_backward(grad, cache, detail::bn_params(l, params), lt.mode);
        if (want) {
          accumulate(l.name + "/gamma", g.gamma);
          accumulate(l.name + "/beta", g.beta);
        }
        grad = std::move(g.input);
        break;
      }
      case LayerKind::kActivation:
        grad = nn::activation_backward(lt.input, grad, l.activation);
        break;
      case LayerKind::kMaxPool:
        grad = nn::maxpool2d_backward(lt.input, grad, l.pool, l.pool);
        break;
      case LayerKind::kGlobalAvgPool:
        grad = nn::global_avg_pool_backward(lt.input.shape(), grad);
        break;
      case LayerKind::kFlatten:
        grad = grad.reshaped(lt.input.shape());
        break;
      case LayerKind::kDense: {
        grad = nn::activation_backward(lt.aux, grad, l.activation);
        auto g = nn::dense_backward(lt.input, detail::dense_params(l, params), grad, want);
        if (want) {
          accumulate(l.name + "/kernel", g.weight);
          accumulate(l.name + "/bias", g.bias);
        }
        grad = std::move(g.input);
        break;
      }
      case LayerKind::kDropout:
        grad = nn::dropout_backward(lt.mask, grad);
        break;
      case LayerKind::kSoftmax:
        grad = nn::softmax_backward(lt.aux, grad);
        break;
    }
  }
  return grad;
}

/// Stacks per-sample tensors into one batch.
template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& samples) {
  if (samples.empty()) throw ShapeError("cannot stack an empty sample list");
  const Shape& s = samples.front().shape();
  Tensor<Scalar> out(detail::batched(static_cast<Index>(samples.size()), s));
  const Index each = samples.front().size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].shape() != s) throw ShapeError("stacked samples differ in shape");
    std::copy_n(samples[i].data(), each, out.data() + static_cast<Index>(i) * each);
  }
  return out;
}

/// Sample `i` of a batch.
template <typename Scalar>
Tensor<Scalar> unstack(const Tensor<Scalar>& batch, Index i) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const Index each = batch.size() / batch.dim(0);
  Tensor<Scalar> out(s);
  std::copy_n(batch.data() + i * each, each, out.data());
  return out;
}

}  // namespace fruitnet
