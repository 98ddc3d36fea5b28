#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "fruitnet/executor.hpp"
#include "fruitnet/image.hpp"

namespace fruitnet {

template <typename Scalar>
struct CamResult {
  Index class_index = 0;
  std::string layer;       // conv layer the map is taken from
  Scalar score = 0;        // pre-softmax score of the class
  Tensor<Scalar> weights;  // alpha, one per channel of that layer
  Tensor<Scalar> raw;      // h x w, ReLU(sum_c alpha_c A_c)
  Tensor<Scalar> heatmap;  // h x w, raw / max(raw), or zeros
  Tensor<Scalar> resized;  // heatmap bilinearly resized to the input H x W
};

using CamResultF = CamResult<float>;

/// Index of the last conv, depthwise or pointwise layer. Throws ConfigError
/// when the model has none.
std::size_t last_conv_layer(const ModelGraph& model);

/// Grad-CAM of one image (H x W x C or 1 x H x W x C) on the last conv
/// layer's output A: alpha_c is the spatial mean of d score / d A_c, where the
/// score is the class's input to the final softmax (or the model output when
/// there is none). Runs in inference mode.
template <typename Scalar>
CamResult<Scalar> compute_gradcam(const ModelGraph& model, const TensorStore<Scalar>& params,
                                  const Tensor<Scalar>& image, Index class_index) {
  const std::size_t conv = last_conv_layer(model);
  const bool has_softmax = !model.layers.empty() && model.layers.back().kind == LayerKind::kSoftmax;
  const std::size_t end = model.layers.size() - (has_softmax ? 1 : 0);
  const Index width = shape_size(end ? model.layers[end - 1].output_shape : model.input.hwc());
  if (class_index < 0 || class_index >= width) {
    throw ConfigError("class index " + std::to_string(class_index) + " is out of range for " +
                      std::to_string(width) + " outputs");
  }
  Tensor<Scalar> x = image;
  if (x.rank() == 3) x = x.reshaped(detail::batched(1, x.shape()));
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw ShapeError("Grad-CAM takes one image, got " + shape_string(image.shape()));
  }

  const Tensor<Scalar> activations = forward(model, params, x, {.end = conv + 1});
  Trace<Scalar> trace;
  const Tensor<Scalar> scores =
      forward(model, params, activations, {.begin = conv + 1, .end = end, .cache_from = conv + 1}, &trace);
  Tensor<Scalar> seed(scores.shape());
  seed[class_index] = 1;
  const Tensor<Scalar> grad = backward(model, params, trace, std::move(seed), end, conv + 1,
                                       static_cast<TensorStore<Scalar>*>(nullptr));

  const Index h = activations.dim(1), w = activations.dim(2), c = activations.dim(3);
  const auto a = activations.matrix(c);
  const auto g = grad.matrix(c);
  CamResult<Scalar> out;
  out.class_index = class_index;
  out.layer = model.layers[conv].name;
  out.score = scores[class_index];
  out.weights = Tensor<Scalar>({c}, Vector<Scalar>(g.colwise().mean().transpose()));
  out.raw = Tensor<Scalar>({h, w}, Vector<Scalar>((a * out.weights.values()).cwiseMax(Scalar(0))));
  out.heatmap = out.raw;
  const Scalar peak = out.raw.values().maxCoeff();
  if (peak > 0) out.heatmap.values() /= peak;
  out.resized = resize_bilinear(out.heatmap.reshaped({h, w, 1}), x.dim(1), x.dim(2)).reshaped({x.dim(1), x.dim(2)});
  return out;
}

inline CamResultF compute_gradcam(const ModelGraph& model, const TensorF& image, Index class_index) {
  return compute_gradcam(model, model.params, image, class_index);
}

/// Jet-like ramp: 0 is dark blue, 0.5 green-yellow, 1 dark red.
std::array<std::uint8_t, 3> jet(double value);

inline constexpr double kHeatmapBlend = 0.4;

/// Side by side: the base image, the colorized map, and the base blended with
/// the colorized map at kHeatmapBlend. The base must match the map's size.
Image render_heatmap(const CamResultF& cam, const Image& base);
void render_heatmap(const CamResultF& cam, const Image& base, const std::filesystem::path& path);

/// The unnormalized map as a single-tensor NTW file ("gradcam/raw").
void write_raw_cam(const CamResultF& cam, const std::filesystem::path& path);

}  // namespace fruitnet
