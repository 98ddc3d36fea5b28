#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fruitnet/nn/activation.hpp"
#include "fruitnet/nn/conv.hpp"
#include "fruitnet/tensor.hpp"
#include "fruitnet/tensor_store.hpp"

namespace fruitnet {

enum class LayerKind {
  kConv,
  kDepthwiseConv,
  kPointwiseConv,
  kBatchNorm,
  kActivation,
  kMaxPool,
  kGlobalAvgPool,
  kFlatten,
  kDense,
  kDropout,
  kSoftmax,
};

std::string to_string(LayerKind kind);
bool is_conv_family(LayerKind kind);

/// One entry of a sequential model. Only the fields of its kind are used.
struct LayerSpec {
  LayerKind kind = LayerKind::kActivation;
  std::string name;
  bool trainable = true;

  // conv, dwconv, pwconv
  Index kernel_size = 1;
  Index filters = 0;
  Index stride = 1;
  nn::Padding padding = nn::Padding::kSame;
  bool use_bias = false;
  // dense units; dense and activation layers share `activation`
  Index units = 0;
  nn::Activation activation = nn::Activation::kLinear;
  // maxpool
  Index pool = 2;
  // batchnorm
  double epsilon = 1e-3;
  double momentum = 0.99;
  // dropout
  double rate = 0.0;

  // Per-sample shapes, filled in by the builder.
  Shape input_shape;
  Shape output_shape;
};

/// Parameter names a layer owns, "<layer_name>/<role>".
std::vector<std::string> parameter_names(const LayerSpec& layer);
/// Subset updated by the optimizer (batchnorm moving statistics excluded).
std::vector<std::string> trainable_parameter_names(const LayerSpec& layer);

struct ModelGraph {
  Shape4 input;
  std::vector<LayerSpec> layers;
  WeightStore params;
  // Index of the first transfer-head layer; equals layers.size() when absent.
  std::size_t head_begin = 0;

  Index output_width() const;
  bool has_classifier() const;
  std::size_t find_layer(const std::string& name) const;
};

struct ParamCensus {
  Index tensors = 0;
  Index parameters = 0;
  Index trainable_parameters = 0;
  Index frozen_parameters = 0;
};

ParamCensus census(const ModelGraph& model);

/// Appends layers with shape checking and seeded He-uniform initialization.
/// Each layer draws from its own stream keyed by (seed, layer position).
class SequentialBuilder {
 public:
  SequentialBuilder(Shape4 input, std::uint64_t seed);
  /// Continues an existing model; new layers draw from streams after it.
  SequentialBuilder(ModelGraph base, std::uint64_t seed);

  SequentialBuilder& conv(const std::string& name, Index filters, Index kernel, Index stride,
                          nn::Padding padding = nn::Padding::kSame, bool use_bias = false);
  SequentialBuilder& depthwise(const std::string& name, Index kernel, Index stride,
                               nn::Padding padding = nn::Padding::kSame, bool use_bias = false);
  SequentialBuilder& pointwise(const std::string& name, Index filters, bool use_bias = false);
  SequentialBuilder& batchnorm(const std::string& name, double epsilon = 1e-3,
                               double momentum = 0.99);
  SequentialBuilder& activation(const std::string& name, nn::Activation kind);
  SequentialBuilder& maxpool(const std::string& name, Index window = 2);
  SequentialBuilder& global_avg_pool(const std::string& name);
  SequentialBuilder& flatten(const std::string& name);
  SequentialBuilder& dense(const std::string& name, Index units,
                           nn::Activation act = nn::Activation::kLinear);
  SequentialBuilder& dropout(const std::string& name, double rate);
  SequentialBuilder& softmax(const std::string& name);
  SequentialBuilder& mark_head();

  const Shape& current_shape() const { return shape_; }
  ModelGraph build() &&;

 private:
  LayerSpec& push(LayerSpec spec, Shape output);
  void init_uniform(const std::string& name, Shape shape, Index fan_in);
  Rng layer_rng() const;

  ModelGraph model_;
  Shape shape_;
  std::uint64_t seed_;
};

struct BaseCnnOptions {
  Index input_size = 256;
  std::uint64_t seed = 0;
  double dropout_rate = 0.5;
};

/// Four conv/maxpool stages (batchnorm after the first three), three hidden
/// dense layers with dropout after the first, softmax classifier.
ModelGraph build_base_cnn(Index num_classes, const BaseCnnOptions& options = {});

struct MobileNetOptions {
  Index input_size = 224;
  std::uint64_t seed = 0;
  Index top_classes = 1000;
};

/// MobileNet v1 (alpha 1.0). Every conv is followed by batchnorm and relu6.
/// With include_top the 7x7 average pool, the 1024 -> 1000 classifier and a
/// softmax follow; otherwise the graph ends at the last pointwise block and
/// carries no pooling layer.
ModelGraph build_mobilenet(bool include_top, const MobileNetOptions& options = {});

/// GAP -> dense 1024 -> 512 -> 256 (relu) -> dense num_classes -> softmax.
ModelGraph attach_transfer_head(ModelGraph backbone, Index num_classes, std::uint64_t seed = 0);

/// Replaces the final dense layer with a freshly initialized num_classes one.
ModelGraph replace_classifier(ModelGraph model, Index num_classes, std::uint64_t seed = 0);

/// Freezes the first `freeze_first_n` layers of the flattened list and marks
/// every later one trainable.
ModelGraph set_trainable_boundary(ModelGraph model, std::size_t freeze_first_n);

/// Per-layer table: type/stride, filter shape, input size, trainable flag,
/// parameter count.
std::string summarize(const ModelGraph& model);

struct SummaryRow {
  std::string name;
  std::string type;
  std::string filter;
  std::string input_size;
  bool trainable = true;
  Index parameters = 0;
};
std::vector<SummaryRow> summary_rows(const ModelGraph& model);

/// "224 × 224 × 3" style rendering used by the summary.
std::string dims_string(const Shape& shape);

}  // namespace fruitnet
