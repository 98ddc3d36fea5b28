#include "fruitnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <unordered_set>

namespace fruitnet {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDepthwiseConv: return "dwconv";
    case LayerKind::kPointwiseConv: return "pwconv";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kGlobalAvgPool: return "gap";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "unknown";
}

bool is_conv_family(LayerKind kind) {
  return kind == LayerKind::kConv || kind == LayerKind::kDepthwiseConv ||
         kind == LayerKind::kPointwiseConv;
}

std::vector<std::string> parameter_names(const LayerSpec& layer) {
  const std::string& n = layer.name;
  switch (layer.kind) {
    case LayerKind::kConv:
    case LayerKind::kPointwiseConv:
      if (layer.use_bias) return {n + "/kernel", n + "/bias"};
      return {n + "/kernel"};
    case LayerKind::kDepthwiseConv:
      if (layer.use_bias) return {n + "/depthwise_kernel", n + "/bias"};
      return {n + "/depthwise_kernel"};
    case LayerKind::kBatchNorm:
      return {n + "/gamma", n + "/beta", n + "/moving_mean", n + "/moving_variance"};
    case LayerKind::kDense:
      return {n + "/kernel", n + "/bias"};
    default:
      return {};
  }
}

std::vector<std::string> trainable_parameter_names(const LayerSpec& layer) {
  if (layer.kind == LayerKind::kBatchNorm) return {layer.name + "/gamma", layer.name + "/beta"};
  return parameter_names(layer);
}

Index ModelGraph::output_width() const {
  if (layers.empty()) return input.channels;
  return layers.back().output_shape.back();
}

bool ModelGraph::has_classifier() const {
  return std::any_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
    return l.kind == LayerKind::kDense || l.kind == LayerKind::kSoftmax;
  });
}

std::size_t ModelGraph::find_layer(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  throw ConfigError("model has no layer named '" + name + "'");
}

ParamCensus census(const ModelGraph& model) {
  ParamCensus c;
  for (const auto& layer : model.layers) {
    for (const auto& name : parameter_names(layer)) {
      c.tensors += 1;
      c.parameters += model.params.at(name).size();
    }
    if (!layer.trainable) continue;
    for (const auto& name : trainable_parameter_names(layer)) {
      c.trainable_parameters += model.params.at(name).size();
    }
  }
  c.frozen_parameters = c.parameters - c.trainable_parameters;
  return c;
}

// --- SequentialBuilder ------------------------------------------------------

SequentialBuilder::SequentialBuilder(Shape4 input, std::uint64_t seed)
    : shape_(input.hwc()), seed_(seed) {
  if (!input.valid()) throw ShapeError("model input dimensions must be positive");
  model_.input = input;
}

SequentialBuilder::SequentialBuilder(ModelGraph base, std::uint64_t seed)
    : model_(std::move(base)), seed_(seed) {
  shape_ = model_.layers.empty() ? model_.input.hwc() : model_.layers.back().output_shape;
  model_.head_begin = std::min(model_.head_begin, model_.layers.size());
}

Rng SequentialBuilder::layer_rng() const { return make_rng(seed_, model_.layers.size()); }

void SequentialBuilder::init_uniform(const std::string& name, Shape shape, Index fan_in) {
  Rng rng = layer_rng();
  Tensor<float> t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(uniform(rng, -limit, limit));
  model_.params.set(name, std::move(t));
}

LayerSpec& SequentialBuilder::push(LayerSpec spec, Shape output) {
  for (const auto& l : model_.layers) {
    if (l.name == spec.name) throw ConfigError("duplicate layer name '" + spec.name + "'");
  }
  spec.input_shape = shape_;
  spec.output_shape = output;
  shape_ = std::move(output);
  model_.layers.push_back(std::move(spec));
  return model_.layers.back();
}

namespace {

void require_spatial(const Shape& s, const std::string& name) {
  if (s.size() != 3) {
    throw ShapeError("layer '" + name + "' needs an H x W x C input, got " + shape_string(s));
  }
}

}  // namespace

SequentialBuilder& SequentialBuilder::conv(const std::string& name, Index filters, Index kernel,
                                           Index stride, nn::Padding padding, bool use_bias) {
  require_spatial(shape_, name);
  const Index c = shape_[2];
  const auto rows = nn::axis_geometry(shape_[0], kernel, stride, padding);
  const auto cols = nn::axis_geometry(shape_[1], kernel, stride, padding);
  LayerSpec spec{.kind = LayerKind::kConv, .name = name, .kernel_size = kernel, .filters = filters,
                 .stride = stride, .padding = padding, .use_bias = use_bias};
  // Parameters are drawn before push() so the stream index is the layer's own.
  init_uniform(name + "/kernel", {kernel, kernel, c, filters}, kernel * kernel * c);
  if (use_bias) model_.params.set(name + "/bias", Tensor<float>({filters}));
  push(std::move(spec), {rows.out, cols.out, filters});
  return *this;
}

SequentialBuilder& SequentialBuilder::depthwise(const std::string& name, Index kernel,
                                                Index stride, nn::Padding padding,
                                                bool use_bias) {
  require_spatial(shape_, name);
  const Index c = shape_[2];
  const auto rows = nn::axis_geometry(shape_[0], kernel, stride, padding);
  const auto cols = nn::axis_geometry(shape_[1], kernel, stride, padding);
  LayerSpec spec{.kind = LayerKind::kDepthwiseConv, .name = name, .kernel_size = kernel,
                 .filters = c, .stride = stride, .padding = padding, .use_bias = use_bias};
  init_uniform(name + "/depthwise_kernel", {kernel, kernel, c}, kernel * kernel);
  if (use_bias) model_.params.set(name + "/bias", Tensor<float>({c}));
  push(std::move(spec), {rows.out, cols.out, c});
  return *this;
}

SequentialBuilder& SequentialBuilder::pointwise(const std::string& name, Index filters,
                                                bool use_bias) {
  require_spatial(shape_, name);
  const Index c = shape_[2];
  LayerSpec spec{.kind = LayerKind::kPointwiseConv, .name = name, .kernel_size = 1,
                 .filters = filters, .stride = 1, .use_bias = use_bias};
  init_uniform(name + "/kernel", {1, 1, c, filters}, c);
  if (use_bias) model_.params.set(name + "/bias", Tensor<float>({filters}));
  push(std::move(spec), {shape_[0], shape_[1], filters});
  return *this;
}

SequentialBuilder& SequentialBuilder::batchnorm(const std::string& name, double epsilon,
                                                double momentum) {
  const Index c = shape_.back();
  LayerSpec spec{.kind = LayerKind::kBatchNorm, .name = name};
  spec.epsilon = epsilon;
  spec.momentum = momentum;
  model_.params.set(name + "/gamma", Tensor<float>({c}, 1.0f));
  model_.params.set(name + "/beta", Tensor<float>({c}));
  model_.params.set(name + "/moving_mean", Tensor<float>({c}));
  model_.params.set(name + "/moving_variance", Tensor<float>({c}, 1.0f));
  Shape out = shape_;
  push(std::move(spec), std::move(out));
  return *this;
}

SequentialBuilder& SequentialBuilder::activation(const std::string& name, nn::Activation kind) {
  LayerSpec spec{.kind = LayerKind::kActivation, .name = name};
  spec.activation = kind;
  Shape out = shape_;
  push(std::move(spec), std::move(out));
  return *this;
}

SequentialBuilder& SequentialBuilder::maxpool(const std::string& name, Index window) {
  require_spatial(shape_, name);
  if (shape_[0] < window || shape_[1] < window) {
    throw ShapeError("maxpool '" + name + "' window exceeds input " + shape_string(shape_));
  }
  LayerSpec spec{.kind = LayerKind::kMaxPool, .name = name, .stride = window};
  spec.pool = window;
  const auto rows = nn::axis_geometry(shape_[0], window, window, nn::Padding::kValid);
  const auto cols = nn::axis_geometry(shape_[1], window, window, nn::Padding::kValid);
  push(std::move(spec), {rows.out, cols.out, shape_[2]});
  return *this;
}

SequentialBuilder& SequentialBuilder::global_avg_pool(const std::string& name) {
  require_spatial(shape_, name);
  LayerSpec spec{.kind = LayerKind::kGlobalAvgPool, .name = name};
  push(std::move(spec), {1, 1, shape_[2]});
  return *this;
}

SequentialBuilder& SequentialBuilder::flatten(const std::string& name) {
  LayerSpec spec{.kind = LayerKind::kFlatten, .name = name};
  push(std::move(spec), {shape_size(shape_)});
  return *this;
}

SequentialBuilder& SequentialBuilder::dense(const std::string& name, Index units,
                                            nn::Activation act) {
  const Index in = shape_.back();
  LayerSpec spec{.kind = LayerKind::kDense, .name = name};
  spec.units = units;
  spec.activation = act;
  init_uniform(name + "/kernel", {in, units}, in);
  model_.params.set(name + "/bias", Tensor<float>({units}));
  Shape out = shape_;
  out.back() = units;
  push(std::move(spec), std::move(out));
  return *this;
}

SequentialBuilder& SequentialBuilder::dropout(const std::string& name, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  LayerSpec spec{.kind = LayerKind::kDropout, .name = name};
  spec.rate = rate;
  Shape out = shape_;
  push(std::move(spec), std::move(out));
  return *this;
}

SequentialBuilder& SequentialBuilder::softmax(const std::string& name) {
  if (shape_.back() < 2) throw ShapeError("softmax needs at least 2 classes");
  LayerSpec spec{.kind = LayerKind::kSoftmax, .name = name};
  Shape out = shape_;
  push(std::move(spec), std::move(out));
  return *this;
}

SequentialBuilder& SequentialBuilder::mark_head() {
  model_.head_begin = model_.layers.size();
  return *this;
}

ModelGraph SequentialBuilder::build() && {
  if (model_.head_begin == 0 || model_.head_begin > model_.layers.size()) {
    model_.head_begin = model_.layers.size();
  }
  return std::move(model_);
}

// --- Architectures ----------------------------------------------------------

ModelGraph build_base_cnn(Index num_classes, const BaseCnnOptions& options) {
  if (num_classes < 2) throw ConfigError("base CNN needs at least 2 classes");
  using nn::Activation;
  SequentialBuilder b(Shape4{options.input_size, options.input_size, 3}, options.seed);
  const Index widths[] = {32, 64, 128, 256};
  for (int i = 0; i < 4; ++i) {
    const std::string id = std::to_string(i + 1);
    const bool with_bn = i < 3;
    b.conv("conv_" + id, widths[i], 3, 1, nn::Padding::kSame, /*use_bias=*/!with_bn);
    if (with_bn) b.batchnorm("bn_" + id);
    b.activation("relu_" + id, Activation::kRelu);
    b.maxpool("pool_" + id, 2);
  }
  b.flatten("flatten");
  b.dense("dense_1", 512, Activation::kRelu);
  b.dropout("dropout", options.dropout_rate);
  b.dense("dense_2", 256, Activation::kRelu);
  b.dense("dense_3", 128, Activation::kRelu);
  b.dense("logits", num_classes);
  b.softmax("softmax");
  return std::move(b).build();
}

namespace {

void conv_bn_relu6(SequentialBuilder& b, const std::string& conv_name, LayerKind kind,
                   Index filters, Index stride) {
  if (kind == LayerKind::kConv) {
    b.conv(conv_name, filters, 3, stride);
  } else if (kind == LayerKind::kDepthwiseConv) {
    b.depthwise(conv_name, 3, stride);
  } else {
    b.pointwise(conv_name, filters);
  }
  b.batchnorm(conv_name + "_bn");
  b.activation(conv_name + "_relu", nn::Activation::kRelu6);
}

}  // namespace

ModelGraph build_mobilenet(bool include_top, const MobileNetOptions& options) {
  SequentialBuilder b(Shape4{options.input_size, options.input_size, 3}, options.seed);
  conv_bn_relu6(b, "conv1", LayerKind::kConv, 32, 2);
  struct Block {
    Index filters;
    Index stride;
  };
  // Depthwise stride and pointwise width of the 13 separable blocks.
  const Block blocks[] = {{64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}, {512, 1},
                          {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1}};
  int id = 1;
  for (const Block& block : blocks) {
    const std::string n = std::to_string(id++);
    conv_bn_relu6(b, "conv_dw_" + n, LayerKind::kDepthwiseConv, 0, block.stride);
    conv_bn_relu6(b, "conv_pw_" + n, LayerKind::kPointwiseConv, block.filters, 1);
  }
  if (include_top) {
    b.global_avg_pool("avg_pool");
    b.dense("predictions", options.top_classes);
    b.softmax("softmax");
  }
  return std::move(b).build();
}

ModelGraph attach_transfer_head(ModelGraph backbone, Index num_classes, std::uint64_t seed) {
  if (backbone.has_classifier()) {
    throw ConfigError("backbone already has a classification head; build it without the top");
  }
  if (num_classes < 2) throw ConfigError("transfer head needs at least 2 classes");
  using nn::Activation;
  SequentialBuilder b(std::move(backbone), seed);
  b.mark_head();
  b.global_avg_pool("head_gap");
  b.dense("head_dense_1024", 1024, Activation::kRelu);
  b.dense("head_dense_512", 512, Activation::kRelu);
  b.dense("head_dense_256", 256, Activation::kRelu);
  b.dense("head_logits", num_classes);
  b.softmax("head_softmax");
  return std::move(b).build();
}

ModelGraph replace_classifier(ModelGraph model, Index num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  auto last_dense = std::find_if(model.layers.rbegin(), model.layers.rend(), [](const auto& l) {
    return l.kind == LayerKind::kDense;
  });
  if (last_dense == model.layers.rend()) throw ConfigError("model has no dense classifier");
  const std::size_t at = static_cast<std::size_t>(model.layers.rend() - last_dense) - 1;
  std::vector<LayerSpec> tail(model.layers.begin() + static_cast<std::ptrdiff_t>(at),
                              model.layers.end());
  for (const auto& l : tail) {
    for (const auto& name : parameter_names(l)) model.params.erase(name);
  }
  model.layers.resize(at);
  const std::size_t head_begin = model.head_begin;
  SequentialBuilder b(std::move(model), seed);
  for (const auto& l : tail) {
    if (l.kind == LayerKind::kDense) {
      b.dense(l.name, num_classes, l.activation);
    } else if (l.kind == LayerKind::kSoftmax) {
      b.softmax(l.name);
    } else {
      throw ConfigError("unexpected layer '" + l.name + "' after the classifier");
    }
  }
  ModelGraph out = std::move(b).build();
  out.head_begin = head_begin;
  return out;
}

ModelGraph set_trainable_boundary(ModelGraph model, std::size_t freeze_first_n) {
  if (freeze_first_n > model.layers.size()) {
    throw ConfigError("cannot freeze " + std::to_string(freeze_first_n) + " layers of a " +
                      std::to_string(model.layers.size()) + "-layer model");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) model.layers[i].trainable = i >= freeze_first_n;
  return model;
}

// --- Summary -----------------------------------------------------------------

std::string dims_string(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += " × ";
    out += std::to_string(shape[i]);
  }
  return out;
}

std::vector<SummaryRow> summary_rows(const ModelGraph& model) {
  std::vector<SummaryRow> rows;
  rows.reserve(model.layers.size());
  for (const auto& l : model.layers) {
    SummaryRow r;
    r.name = l.name;
    r.input_size = dims_string(l.input_shape);
    r.trainable = l.trainable;
    for (const auto& name : parameter_names(l)) r.parameters += model.params.at(name).size();
    const std::string k = std::to_string(l.kernel_size);
    const std::string stride = " / s" + std::to_string(l.stride);
    const Index in_c = l.input_shape.back();
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kPointwiseConv:
        r.type = "Conv" + stride;
        r.filter = k + " × " + k + " × " + std::to_string(in_c) + " × " + std::to_string(l.filters);
        break;
      case LayerKind::kDepthwiseConv:
        r.type = "Conv dw" + stride;
        r.filter = k + " × " + k + " × " + std::to_string(in_c) + " dw";
        break;
      case LayerKind::kBatchNorm:
        r.type = "BatchNorm";
        r.filter = std::to_string(in_c);
        break;
      case LayerKind::kActivation:
        r.type = l.activation == nn::Activation::kRelu6  ? "ReLU6"
                 : l.activation == nn::Activation::kRelu ? "ReLU"
                                                         : "Linear";
        r.filter = "-";
        break;
      case LayerKind::kMaxPool:
        r.type = "Max Pool / s" + std::to_string(l.pool);
        r.filter = "Pool " + std::to_string(l.pool) + "×" + std::to_string(l.pool);
        break;
      case LayerKind::kGlobalAvgPool:
        r.type = "Avg Pool / s1";
        r.filter = "Pool " + std::to_string(l.input_shape[0]) + "×" + std::to_string(l.input_shape[1]);
        break;
      case LayerKind::kFlatten:
        r.type = "Flatten";
        r.filter = "-";
        break;
      case LayerKind::kDense:
        r.type = "FC / s1";
        r.filter = std::to_string(in_c) + "×" + std::to_string(l.units);
        if (l.activation == nn::Activation::kRelu) r.filter += " relu";
        break;
      case LayerKind::kDropout: {
        std::ostringstream os;
        os << "rate " << l.rate;
        r.type = "Dropout";
        r.filter = os.str();
        break;
      }
      case LayerKind::kSoftmax:
        r.type = "Softmax / s1";
        r.filter = "Classifier";
        break;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

// Display width of UTF-8 text: counts code points, not bytes.
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char ch) { return (static_cast<unsigned char>(ch) & 0xC0) != 0x80; }));
}

std::string pad(const std::string& s, std::size_t width) {
  const std::size_t w = display_width(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

}  // namespace

std::string summarize(const ModelGraph& model) {
  const auto rows = summary_rows(model);
  const std::vector<std::string> header = {"#", "Layer", "Type / Stride", "Filter Shape",
                                           "Input Size", "Trainable", "Params"};
  std::vector<std::vector<std::string>> cells;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    cells.push_back({std::to_string(i + 1), r.name, r.type, r.filter, r.input_size,
                     r.trainable ? "yes" : "no", std::to_string(r.parameters)});
  }
  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    widths[c] = display_width(header[c]);
    for (const auto& row : cells) widths[c] = std::max(widths[c], display_width(row[c]));
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << (c ? "  " : "") << (c + 1 == row.size() ? row[c] : pad(row[c], widths[c]));
    }
    os << '\n';
  };
  emit(header);
  for (const auto& row : cells) emit(row);
  const ParamCensus totals = census(model);
  os << "Total params: " << totals.parameters << '\n'
     << "Trainable params: " << totals.trainable_parameters << '\n'
     << "Non-trainable params: " << totals.frozen_parameters << '\n';
  return os.str();
}

}  // namespace fruitnet
