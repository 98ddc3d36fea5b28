#include <gtest/gtest.h>

#include "fruitnet/executor.hpp"
#include "fruitnet/model.hpp"
#include "gradient_check.hpp"
#include "test_util.hpp"

// Finite-difference verification of every backward pass in 64-bit mode.

namespace fruitnet::nn {
namespace {

using testing::dot;
using testing::fd_max_error;
using testing::kFdTolerance;
using testing::random_tensor;

struct ConvCase {
  Shape input;
  Index kernel;
  Index filters;  // 0 for depthwise
  Index stride;
  Padding padding;
  bool bias;
};

// Small stand-ins for the stem (3x3 s2, 3 -> 32), the depthwise stages and
// the base CNN's 3x3 s1 convs.
const ConvCase kConvCases[] = {
    {{2, 9, 9, 3}, 3, 8, 2, Padding::kSame, false},
    {{1, 8, 8, 4}, 3, 6, 1, Padding::kSame, true},
    {{1, 7, 6, 2}, 3, 3, 2, Padding::kValid, true},
    {{2, 6, 6, 5}, 3, 0, 1, Padding::kSame, false},
    {{1, 7, 7, 4}, 3, 0, 2, Padding::kSame, true},
    {{2, 4, 4, 6}, 1, 8, 1, Padding::kSame, false},
};

TEST(GradientTest, ConvolutionFamily) {
  Rng rng = make_rng(100);
  for (const ConvCase& c : kConvCases) {
    const bool depthwise = c.filters == 0;
    const bool pointwise = c.kernel == 1;
    const Index ch = c.input.back();
    ConvParams<double> p;
    p.kernel = depthwise ? random_tensor<double>({c.kernel, c.kernel, ch}, rng)
                         : random_tensor<double>({c.kernel, c.kernel, ch, c.filters}, rng);
    if (c.bias) p.bias = random_tensor<double>({depthwise ? ch : c.filters}, rng);
    p.stride = c.stride;
    p.padding = c.padding;
    const TensorD x = random_tensor<double>(c.input, rng);
    auto fwd = [&](const TensorD& in, const ConvParams<double>& q) {
      return depthwise ? depthwise_conv2d(in, q) : pointwise ? pointwise_conv2d(in, q) : conv2d(in, q);
    };
    const TensorD w = random_tensor<double>(fwd(x, p).shape(), rng);
    const auto g = depthwise ? depthwise_conv2d_backward(x, p, w)
                   : pointwise ? pointwise_conv2d_backward(x, p, w)
                               : conv2d_backward(x, p, w);
    EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, fwd(in, p)); }, x, g.input),
              kFdTolerance);
    EXPECT_LT(fd_max_error(
                  [&](const TensorD& k) {
                    auto q = p;
                    q.kernel = k;
                    return dot(w, fwd(x, q));
                  },
                  p.kernel, g.kernel),
              kFdTolerance);
    if (c.bias) {
      EXPECT_LT(fd_max_error(
                    [&](const TensorD& b) {
                      auto q = p;
                      q.bias = b;
                      return dot(w, fwd(x, q));
                    },
                    *p.bias, *g.bias),
                kFdTolerance);
    }
  }
}

TEST(GradientTest, BatchNormBothModes) {
  Rng rng = make_rng(101);
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    const TensorD x = random_tensor<double>({3, 4, 4, 5}, rng, -2, 3);
    BatchNormParams<double> p{random_tensor<double>({5}, rng, 0.5, 2), random_tensor<double>({5}, rng),
                              random_tensor<double>({5}, rng), random_tensor<double>({5}, rng, 0.5, 2),
                              1e-3, 0.99};
    const auto r = batchnorm(x, p, mode);
    const TensorD w = random_tensor<double>(x.shape(), rng);
    const auto g = batchnorm_backward(w, r, p, mode);
    EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, batchnorm(in, p, mode).output); }, x,
                           g.input),
              kFdTolerance);
    EXPECT_LT(fd_max_error(
                  [&](const TensorD& gamma) {
                    auto q = p;
                    q.gamma = gamma;
                    return dot(w, batchnorm(x, q, mode).output);
                  },
                  p.gamma, g.gamma),
              kFdTolerance);
    EXPECT_LT(fd_max_error(
                  [&](const TensorD& beta) {
                    auto q = p;
                    q.beta = beta;
                    return dot(w, batchnorm(x, q, mode).output);
                  },
                  p.beta, g.beta),
              kFdTolerance);
  }
}

TEST(GradientTest, Activations) {
  Rng rng = make_rng(102);
  for (Activation kind : {Activation::kLinear, Activation::kRelu, Activation::kRelu6}) {
    TensorD x = random_tensor<double>({2, 3, 3, 4}, rng, -3, 9);
    // Keep probes away from the kinks at 0 and 6.
    for (Index i = 0; i < x.size(); ++i) {
      if (std::abs(x[i]) < 0.05 || std::abs(x[i] - 6) < 0.05) x[i] += 0.2;
    }
    const TensorD w = random_tensor<double>(x.shape(), rng);
    EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, activation(in, kind)); }, x,
                           activation_backward(x, w, kind)),
              kFdTolerance);
  }
}

TEST(GradientTest, MaxPool) {
  Rng rng = make_rng(103);
  // Distinct values spaced far beyond the probe step, so no window ties.
  TensorD x({2, 6, 8, 3});
  std::vector<Index> order(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  shuffle(order.begin(), order.end(), rng);
  for (Index i = 0; i < x.size(); ++i) x[order[static_cast<std::size_t>(i)]] = 0.01 * static_cast<double>(i);
  const TensorD w = random_tensor<double>({2, 3, 4, 3}, rng);
  EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, maxpool2d(in)); }, x,
                         maxpool2d_backward(x, w)),
            kFdTolerance);
}

TEST(GradientTest, GlobalAveragePool) {
  Rng rng = make_rng(104);
  const TensorD x = random_tensor<double>({2, 7, 7, 6}, rng);
  const TensorD w = random_tensor<double>({2, 1, 1, 6}, rng);
  EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, global_avg_pool(in)); }, x,
                         global_avg_pool_backward(x.shape(), w)),
            kFdTolerance);
}

TEST(GradientTest, Dense) {
  Rng rng = make_rng(105);
  const TensorD x = random_tensor<double>({3, 1, 1, 10}, rng);
  DenseParams<double> p{random_tensor<double>({10, 6}, rng), random_tensor<double>({6}, rng)};
  const TensorD w = random_tensor<double>({3, 1, 1, 6}, rng);
  const auto g = dense_backward(x, p, w);
  EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, dense(in, p)); }, x, g.input),
            kFdTolerance);
  EXPECT_LT(fd_max_error(
                [&](const TensorD& k) { return dot(w, dense(x, DenseParams<double>{k, p.bias})); },
                p.weight, g.weight),
            kFdTolerance);
  EXPECT_LT(fd_max_error(
                [&](const TensorD& b) { return dot(w, dense(x, DenseParams<double>{p.weight, b})); },
                p.bias, g.bias),
            kFdTolerance);
}

TEST(GradientTest, Softmax) {
  Rng rng = make_rng(106);
  const TensorD x = random_tensor<double>({4, 6}, rng, -3, 3);
  const TensorD w = random_tensor<double>({4, 6}, rng);
  EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, softmax(in)); }, x,
                         softmax_backward(softmax(x), w)),
            kFdTolerance);
}

TEST(GradientTest, SoftmaxCrossEntropyClosedForm) {
  Rng rng = make_rng(107);
  const TensorD logits = random_tensor<double>({5, 6}, rng, -3, 3);
  TensorD onehot({5, 6});
  for (Index r = 0; r < 5; ++r) onehot.at({r, static_cast<Index>(uniform_index(rng, 6))}) = 1;
  auto loss = [&](const TensorD& z) {
    const TensorD p = softmax(z);
    double total = 0;
    for (Index i = 0; i < p.size(); ++i) total -= onehot[i] * std::log(p[i]);
    return total / 5.0;
  };
  TensorD closed = softmax(logits);
  closed.values() = (closed.values() - onehot.values()) / 5.0;
  EXPECT_LT(fd_max_error(loss, logits, closed), kFdTolerance);
}

TEST(GradientTest, DropoutWithFixedMask) {
  Rng rng = make_rng(108);
  const TensorD x = random_tensor<double>({200}, rng);
  const std::uint64_t seed = 77;
  auto run = [&](const TensorD& in) {
    Rng r = make_rng(seed);
    return dropout(in, 0.5, Mode::kTrain, r);
  };
  const TensorD w = random_tensor<double>({200}, rng);
  EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, run(in).output); }, x,
                         dropout_backward(run(x).mask, w)),
            kFdTolerance);
}

// Whole-graph checks through the executor: every parameter tensor is probed
// at a few sampled entries, the input at all of them.
void check_model(const ModelGraph& model, Index batch, std::uint64_t seed, std::size_t per_tensor,
                 Mode mode = Mode::kTrain, double step = testing::kFdStep) {
  Rng rng = make_rng(seed);
  const TensorStore<double> params = model.params.cast<double>();
  Shape in_shape{batch};
  for (Index d : model.input.hwc()) in_shape.push_back(d);
  const TensorD x = random_tensor<double>(in_shape, rng);
  const std::size_t n = model.layers.size();
  auto run = [&](const TensorStore<double>& ps, const TensorD& in, Trace<double>* trace) {
    Rng drop = make_rng(seed, 1);
    ForwardOptions opt{.mode = mode, .cache_from = 0, .rng = &drop};
    return forward(model, ps, in, opt, trace);
  };
  Trace<double> trace;
  const TensorD out = run(params, x, &trace);
  const TensorD w = random_tensor<double>(out.shape(), rng);
  TensorStore<double> grads;
  const TensorD dx = backward(model, params, trace, w, n, 0, &grads, {.all_param_grads = true});

  EXPECT_LT(fd_max_error([&](const TensorD& in) { return dot(w, run(params, in, nullptr)); }, x, dx, testing::sample_indices(x.size(), 40, rng), step),
            kFdTolerance)
      << "input gradient";
  TensorStore<double> probe = params;
  for (const auto& layer : model.layers) {
    for (const auto& name : trainable_parameter_names(layer)) {
      const TensorD& at = params.at(name);
      const auto idx = testing::sample_indices(at.size(), per_tensor, rng);
      const double err = fd_max_error(
          [&](const TensorD& t) {
            probe.at(name) = t;
            const double value = dot(w, run(probe, x, nullptr));
            probe.at(name) = at;
            return value;
          },
          at, grads.at(name), idx, step);
      EXPECT_LT(err, kFdTolerance) << name;
    }
  }
}

TEST(GradientTest, BaseCnnShapedModel) {
  // The base CNN layer pattern at a reduced width/resolution.
  SequentialBuilder b(Shape4{12, 12, 3}, 5);
  b.conv("conv_1", 4, 3, 1).batchnorm("bn_1").activation("relu_1", Activation::kRelu).maxpool("pool_1");
  b.conv("conv_2", 5, 3, 1, Padding::kSame, true).activation("relu_2", Activation::kRelu).maxpool("pool_2");
  b.flatten("flatten").dense("dense_1", 8, Activation::kRelu).dropout("dropout", 0.5);
  b.dense("logits", 4).softmax("softmax");
  check_model(std::move(b).build(), 3, 200, 12);
}

void expect_sampled_layers_pass(const ModelGraph& model, std::uint64_t seed) {
  const auto checks = testing::check_sampled_layers(model, seed);
  EXPECT_FALSE(checks.empty());
  for (const auto& c : checks) EXPECT_LT(c.error, kFdTolerance) << c.where;
}

TEST(GradientTest, LayersSampledFromMobileNet) {
  expect_sampled_layers_pass(attach_transfer_head(build_mobilenet(false, {.input_size = 32, .seed = 21}), 6, 22), 300);
}

TEST(GradientTest, LayersSampledFromBaseCnn) {
  expect_sampled_layers_pass(build_base_cnn(6, {.input_size = 32, .seed = 23}), 301);
}

// Sets every batchnorm's moving statistics to those of a random calibration
// batch and gives it a nonzero shift, as in a trained network. Untrained deep
// stacks otherwise shrink activations onto the relu kinks, where central
// differences stop approximating the derivative.
ModelGraph calibrate_batchnorm(ModelGraph model, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Shape in_shape{64};
  for (Index d : model.input.hwc()) in_shape.push_back(d);
  TensorF x = random_tensor<float>(in_shape, rng);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    if (l.kind == LayerKind::kBatchNorm) {
      const Index c = l.input_shape.back();
      const auto m = x.matrix(c);
      const Vector<float> mean = m.colwise().mean().transpose();
      const Vector<float> var =
          (m.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
      model.params.set(l.name + "/moving_mean", TensorF({c}, mean));
      model.params.set(l.name + "/moving_variance", TensorF({c}, var));
      model.params.set(l.name + "/beta", random_tensor<float>({c}, rng, -0.5, 0.5));
    }
    x = forward(model, model.params, x, {.begin = i, .end = i + 1});
  }
  return model;
}

TEST(GradientTest, MobileNetTransferModel) {
  // Frozen-backbone configuration: batchnorm runs on its moving statistics.
  const ModelGraph model = calibrate_batchnorm(
      attach_transfer_head(build_mobilenet(false, {.input_size = 16, .seed = 3}), 6, 4), 9);
  // Many relu6 kinks between input and loss: a smaller step keeps the
  // central differences from straddling them.
  check_model(model, 2, 201, 3, Mode::kInfer, 1e-7);
}

}  // namespace
}  // namespace fruitnet::nn
