#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fruitnet/data.hpp"
#include "fruitnet/metrics.hpp"
#include "fruitnet/model.hpp"

namespace fruitnet {

/// Mean over rows of -sum(y * log(max(p, 1e-12))). Both tensors are read as
/// rows of their last axis and must have equal shapes.
template <typename Scalar>
Scalar cross_entropy(const Tensor<Scalar>& probs, const Tensor<Scalar>& onehot) {
  if (probs.shape() != onehot.shape() || probs.rank() == 0) {
    throw ShapeError("cross_entropy shapes differ: " + shape_string(probs.shape()) + " vs " +
                     shape_string(onehot.shape()));
  }
  const Index k = probs.shape().back();
  const auto p = probs.matrix(k);
  const auto y = onehot.matrix(k);
  const Scalar floor = static_cast<Scalar>(1e-12);
  const Scalar total = -(y.array() * p.array().max(floor).log()).sum();
  return total / static_cast<Scalar>(p.rows());
}

template <typename Scalar>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::int64_t step = 0;
  TensorStore<Scalar> m;
  TensorStore<Scalar> v;
};

/// One bias-corrected Adam update of every parameter named in `grads`;
/// parameters without a gradient (frozen ones) are left untouched.
template <typename Scalar>
void adam_step(TensorStore<Scalar>& params, const TensorStore<Scalar>& grads, AdamState<Scalar>& state,
               double learning_rate) {
  for (const auto& [name, g] : grads) {
    const Tensor<Scalar>* p = params.find(name);
    if (!p) throw ConfigError("gradient for unknown parameter '" + name + "'");
    if (p->shape() != g.shape()) {
      throw ShapeError("gradient of '" + name + "' has shape " + shape_string(g.shape()) +
                       ", parameter has " + shape_string(p->shape()));
    }
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, t));
  const auto lr = static_cast<Scalar>(learning_rate);
  const auto eps = static_cast<Scalar>(state.epsilon);
  for (const auto& [name, g] : grads) {
    if (!state.m.contains(name)) {
      state.m.set(name, Tensor<Scalar>(g.shape()));
      state.v.set(name, Tensor<Scalar>(g.shape()));
    }
    auto m = state.m.at(name).values().array();
    auto v = state.v.at(name).values().array();
    const auto gv = g.values().array();
    m = b1 * m + (1 - b1) * gv;
    v = b2 * v + (1 - b2) * gv.square();
    params.at(name).values().array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

struct TrainConfig {
  int epochs = 16;
  double learning_rate = 1e-3;
  Index batch_size = 32;
  // Epochs without validation-loss improvement before stopping; 0 disables
  // early stopping. When it triggers the best-epoch weights are restored.
  int early_stop_patience = 0;
  std::uint64_t seed = 0;
  // Applied with set_trainable_boundary when set; otherwise the model's
  // trainable flags are used as they are.
  std::optional<std::size_t> freeze_first_n;
  std::optional<AugmentSpec> augment;
  // Without augmentation, outputs of the frozen prefix are computed once and
  // reused while they fit in this many bytes.
  std::size_t feature_cache_bytes = std::size_t{512} << 20;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  bool stopped_early = false;

  /// epoch,train_loss,train_acc,val_loss,val_acc
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Adam on categorical cross-entropy over the train split, then a validation
/// pass per epoch. Frozen layers run batchnorm and dropout in inference mode
/// and are never written. Deterministic for a given seed and dataset.
/// Throws ConfigError without trainable parameters, DataError for an empty
/// train or val split, NumericError naming the batch on non-finite values.
TrainLog train(ModelGraph& model, const ImageCache& images, const TrainConfig& config,
               const EpochCallback& on_epoch = {});

/// Sets moving mean and variance of the named batchnorm layers to the
/// per-channel statistics (population variance) of their inputs over
/// `images`, run through the model in inference mode. Useful for a randomly
/// initialised frozen backbone, whose output channels otherwise share a large
/// common offset. Throws ConfigError for unknown or non-batchnorm layers.
void calibrate_batchnorm(ModelGraph& model, const TensorF& images, const std::vector<std::string>& layers,
                         Index batch_size = 32);

/// Class probabilities for a batch of preprocessed images, N x K.
TensorF predict(const ModelGraph& model, const TensorF& images);

/// Argmax predictions over a split (no augmentation) and the derived report.
EvalReport evaluate(const ModelGraph& model, const ImageCache& images, Split split, Index batch_size = 32);

}  // namespace fruitnet
