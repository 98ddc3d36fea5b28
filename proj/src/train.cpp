#include "fruitnet/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "fruitnet/executor.hpp"

namespace fruitnet {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (early_stop_patience < 0) throw ConfigError("patience must be nonnegative");
  if (augment) augment->validate();
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss, e.train_accuracy,
                  e.val_loss, e.val_accuracy);
    os << line;
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << to_csv();
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

namespace {

std::size_t classifier_index(const ModelGraph& model) {
  if (model.layers.empty() || model.layers.back().kind != LayerKind::kSoftmax) {
    throw ConfigError("model must end in a softmax classifier");
  }
  return model.layers.size() - 1;
}

TensorF rows_of(const TensorF& t) { return t.reshaped({t.dim(0), t.size() / t.dim(0)}); }

int argmax_row(const TensorF& probs, Index row) {
  Index best = 0;
  probs.matrix().row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

TensorF gather(const std::vector<TensorF>& store, const std::vector<std::size_t>& samples) {
  std::vector<TensorF> picked;
  picked.reserve(samples.size());
  for (std::size_t s : samples) picked.push_back(store[s]);
  return stack(picked);
}

TensorF labels_of(const LabeledDataset& ds, const std::vector<std::size_t>& samples) {
  TensorF y({static_cast<Index>(samples.size()), ds.num_classes()});
  for (std::size_t i = 0; i < samples.size(); ++i) y.at({static_cast<Index>(i), ds.samples[samples[i]].label}) = 1;
  return y;
}

struct Totals {
  double loss = 0;
  Index correct = 0;
  Index count = 0;

  void add(const TensorF& probs, const TensorF& onehot) {
    const Index n = probs.dim(0);
    loss += static_cast<double>(cross_entropy(probs, onehot)) * static_cast<double>(n);
    for (Index i = 0; i < n; ++i) correct += onehot.at({i, argmax_row(probs, i)}) == 1.0f;
    count += n;
  }
  double mean_loss() const { return loss / static_cast<double>(count); }
  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(count); }
};

}  // namespace

void calibrate_batchnorm(ModelGraph& model, const TensorF& images, const std::vector<std::string>& layers,
                         Index batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (images.rank() == 0 || images.dim(0) == 0) throw DataError("no images to calibrate batchnorm on");
  std::vector<std::size_t> targets;
  for (const auto& name : layers) {
    const std::size_t i = model.find_layer(name);
    if (model.layers[i].kind != LayerKind::kBatchNorm) throw ConfigError("layer '" + name + "' is not batchnorm");
    targets.push_back(i);
  }
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  const Index n = images.dim(0);
  // Earlier targets change what later ones see, so they are set in order.
  for (std::size_t t : targets) {
    const Index c = model.layers[t].input_shape.back();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(c);
    Index rows = 0;
    for (Index lo = 0; lo < n; lo += batch_size) {
      std::vector<TensorF> chunk;
      for (Index i = lo; i < std::min(n, lo + batch_size); ++i) chunk.push_back(unstack(images, i));
      const TensorF x = forward(model, model.params, stack(chunk), {.end = t});
      const auto m = x.matrix(c).cast<double>();
      sum += m.colwise().sum().transpose();
      sq += m.array().square().matrix().colwise().sum().transpose();
      rows += m.rows();
    }
    const Eigen::VectorXd mean = sum / static_cast<double>(rows);
    const Eigen::VectorXd var = (sq / static_cast<double>(rows) - mean.cwiseAbs2()).cwiseMax(0.0);
    const std::string& name = model.layers[t].name;
    model.params.at(name + "/moving_mean") = TensorF({c}, mean.cast<float>());
    model.params.at(name + "/moving_variance") = TensorF({c}, var.cast<float>());
  }
}

TensorF predict(const ModelGraph& model, const TensorF& images) {
  classifier_index(model);
  return rows_of(forward(model, model.params, images));
}

TrainLog train(ModelGraph& model, const ImageCache& images, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const LabeledDataset& ds = images.dataset();
  const auto train_idx = ds.indices(Split::kTrain);
  const auto val_idx = ds.indices(Split::kVal);
  // A rejected configuration leaves the model's trainable flags as they were.
  std::vector<LayerSpec> previous = model.layers;
  std::size_t soft = 0;
  try {
    if (config.freeze_first_n) {
      ModelGraph shell{model.input, std::move(model.layers), {}, model.head_begin};
      model.layers = set_trainable_boundary(std::move(shell), *config.freeze_first_n).layers;
    }
    soft = classifier_index(model);
    if (census(model).trainable_parameters == 0) {
      throw ConfigError("model has no trainable parameters; nothing to train");
    }
    if (ds.num_classes() != model.output_width()) {
      throw ConfigError("model predicts " + std::to_string(model.output_width()) + " classes but the dataset has " +
                        std::to_string(ds.num_classes()));
    }
    if (train_idx.empty()) throw DataError("the train split is empty");
    if (val_idx.empty()) throw DataError("the val split is empty");
  } catch (...) {
    model.layers = std::move(previous);
    throw;
  }

  std::size_t first = 0;
  while (!model.layers[first].trainable) ++first;

  // Frozen-prefix outputs never change, so without augmentation they are
  // computed once per sample.
  const Index feature_size = shape_size(model.layers[first].input_shape);
  const std::size_t cache_bytes = (train_idx.size() + val_idx.size()) * static_cast<std::size_t>(feature_size) * sizeof(float);
  const bool use_cache = first > 0 && !config.augment && cache_bytes <= config.feature_cache_bytes;
  std::vector<TensorF> features;
  if (use_cache) {
    features.resize(ds.samples.size());
    for (Split split : {Split::kTrain, Split::kVal}) {
      BatchStream stream(images, split, {.batch_size = config.batch_size, .shuffle = false});
      while (auto batch = stream.next()) {
        const TensorF out = forward(model, model.params, batch->images, {.end = first});
        for (std::size_t i = 0; i < batch->samples.size(); ++i) {
          features[batch->samples[i]] = unstack(out, static_cast<Index>(i));
        }
      }
    }
  }
  const std::size_t begin = use_cache ? first : 0;

  AdamState<float> adam;
  TrainLog log;
  double best_val = std::numeric_limits<double>::infinity();
  WeightStore best_params;
  int stale = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    BatchStream stream(images, Split::kTrain,
                       {.batch_size = config.batch_size,
                        .shuffle = true,
                        .seed = config.seed,
                        .epoch = static_cast<std::uint64_t>(epoch),
                        .augment = config.augment});
    Rng dropout_rng = make_rng(config.seed ^ 0x5DEECE66Dull, static_cast<std::uint64_t>(epoch));
    Totals train_totals;
    const auto& order = stream.order();
    const std::size_t batches = stream.num_batches();
    for (std::size_t b = 0; b < batches; ++b) {
      try {
        TensorF x;
        TensorF y;
        if (use_cache) {
          const std::size_t lo = b * static_cast<std::size_t>(config.batch_size);
          const std::vector<std::size_t> samples(
              order.begin() + static_cast<std::ptrdiff_t>(lo),
              order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), lo + static_cast<std::size_t>(config.batch_size))));
          x = gather(features, samples);
          y = labels_of(ds, samples);
        } else {
          Batch batch = *stream.next();
          x = std::move(batch.images);
          y = std::move(batch.labels);
        }
        Trace<float> trace;
        const TensorF logits = forward(
            model, model.params, x,
            {.mode = nn::Mode::kTrain, .begin = begin, .end = soft, .cache_from = first, .rng = &dropout_rng}, &trace);
        const TensorF probs = nn::softmax(rows_of(logits));
        train_totals.add(probs, y);
        if (!std::isfinite(train_totals.loss)) throw NumericError("loss is not finite");
        // Softmax and mean cross-entropy differentiate jointly to (p - y) / n.
        TensorF grad = probs;
        grad.values() = (probs.values() - y.values()) / static_cast<float>(probs.dim(0));
        TensorStore<float> grads;
        backward(model, model.params, trace, grad.reshaped(logits.shape()), soft, first, &grads);
        for (auto& [name, t] : trace.moving_updates) model.params.at(name) = std::move(t);
        adam_step(model.params, grads, adam, config.learning_rate);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1) + "/" +
                           std::to_string(batches) + ": " + e.what());
      }
    }

    Totals val_totals;
    if (use_cache) {
      for (std::size_t lo = 0; lo < val_idx.size(); lo += static_cast<std::size_t>(config.batch_size)) {
        const std::vector<std::size_t> samples(
            val_idx.begin() + static_cast<std::ptrdiff_t>(lo),
            val_idx.begin() + static_cast<std::ptrdiff_t>(std::min(val_idx.size(), lo + static_cast<std::size_t>(config.batch_size))));
        val_totals.add(rows_of(forward(model, model.params, gather(features, samples), {.begin = first})),
                       labels_of(ds, samples));
      }
    } else {
      BatchStream val(images, Split::kVal, {.batch_size = config.batch_size, .shuffle = false});
      while (auto batch = val.next()) val_totals.add(predict(model, batch->images), batch->labels);
    }

    const EpochStats stats{epoch + 1, train_totals.mean_loss(), train_totals.accuracy(), val_totals.mean_loss(),
                           val_totals.accuracy()};
    log.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (config.early_stop_patience > 0) {
      if (stats.val_loss < best_val) {
        best_val = stats.val_loss;
        best_params = model.params;
        log.best_epoch = stats.epoch;
        stale = 0;
      } else if (++stale >= config.early_stop_patience) {
        log.stopped_early = true;
        break;
      }
    } else {
      log.best_epoch = stats.epoch;
    }
  }
  if (config.early_stop_patience > 0) model.params = std::move(best_params);
  return log;
}

EvalReport evaluate(const ModelGraph& model, const ImageCache& images, Split split, Index batch_size) {
  const LabeledDataset& ds = images.dataset();
  if (ds.num_classes() != model.output_width()) {
    throw ConfigError("model predicts " + std::to_string(model.output_width()) + " classes but the dataset has " +
                      std::to_string(ds.num_classes()));
  }
  BatchStream stream(images, split, {.batch_size = batch_size, .shuffle = false});
  std::vector<int> truth;
  std::vector<int> predicted;
  while (auto batch = stream.next()) {
    const TensorF probs = predict(model, batch->images);
    for (std::size_t i = 0; i < batch->samples.size(); ++i) {
      truth.push_back(ds.samples[batch->samples[i]].label);
      predicted.push_back(argmax_row(probs, static_cast<Index>(i)));
    }
  }
  return classification_report(confusion_matrix(truth, predicted, static_cast<int>(ds.num_classes())), ds.class_names);
}

}  // namespace fruitnet
