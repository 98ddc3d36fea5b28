// fruitnet: dataset tooling, training, evaluation, prediction, Grad-CAM and
// model inspection. Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fruitnet/data.hpp"
#include "fruitnet/errors.hpp"
#include "fruitnet/gradcam.hpp"
#include "fruitnet/image.hpp"
#include "fruitnet/metrics.hpp"
#include "fruitnet/model.hpp"
#include "fruitnet/ntw.hpp"
#include "fruitnet/parallel.hpp"
#include "fruitnet/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fruitnet;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

const std::vector<std::string> kArchitectures = {"mobilenet-transfer", "base-cnn", "mobilenet"};

void print_config(const std::string& command, const json& config, const json& source = json::object()) {
  json out;
  out["command"] = command;
  out["threads"] = thread_count();
  out.update(source);
  out.update(config);
  std::cerr << "config " << out.dump() << "\n";
}

// --- Models and their sidecar -------------------------------------------------

struct ModelMeta {
  std::string arch = "mobilenet-transfer";
  Index input_size = 0;  // 0: architecture default
  std::vector<std::string> class_names;
};

Index default_input_size(const std::string& arch) { return arch == "base-cnn" ? 256 : 224; }

ModelGraph build_model(const ModelMeta& meta, std::uint64_t seed) {
  const Index size = meta.input_size ? meta.input_size : default_input_size(meta.arch);
  const auto k = static_cast<Index>(meta.class_names.size());
  if (meta.arch == "base-cnn") return build_base_cnn(k, {.input_size = size, .seed = seed});
  if (meta.arch == "mobilenet") return build_mobilenet(true, {.input_size = size, .seed = seed});
  if (meta.arch == "mobilenet-transfer") {
    return attach_transfer_head(build_mobilenet(false, {.input_size = size, .seed = seed}), k, seed + 1);
  }
  throw ConfigError("unknown architecture '" + meta.arch + "'");
}

fs::path sidecar_for(const fs::path& weights, const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  fs::path p = weights;
  p.replace_extension(".json");
  if (p == weights) throw ConfigError("cannot derive a metadata path from '" + weights.string() + "'; pass --meta");
  return p;
}

void write_meta(const ModelMeta& meta, const fs::path& path) {
  json j;
  j["arch"] = meta.arch;
  j["input_size"] = meta.input_size ? meta.input_size : default_input_size(meta.arch);
  j["class_names"] = meta.class_names;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
}

ModelMeta read_meta(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model metadata '" + path.string() + "'");
  try {
    const auto j = json::parse(in);
    return {j.at("arch").get<std::string>(), j.at("input_size").get<Index>(),
            j.at("class_names").get<std::vector<std::string>>()};
  } catch (const json::exception& e) {
    throw FormatError("malformed model metadata '" + path.string() + "': " + e.what());
  }
}

struct LoadedModel {
  ModelMeta meta;
  ModelGraph graph;
};

LoadedModel load_model(const std::string& weights, const std::string& meta_path) {
  LoadedModel m;
  m.meta = read_meta(sidecar_for(weights, meta_path));
  m.graph = build_model(m.meta, 0);
  load_weights(m.graph, weights);
  return m;
}

// --- Datasets ---------------------------------------------------------------------

struct DataSource {
  std::string manifest;
  std::string data;

  void add_to(CLI::App* app) {
    auto* m = app->add_option("--manifest", manifest, "Split manifest (JSONL) from 'split'");
    auto* d = app->add_option("--data", data, "Class-per-directory image root, split with --seed");
    m->excludes(d);
    d->excludes(m);
  }
  json describe() const { return manifest.empty() ? json{{"data", data}} : json{{"manifest", manifest}}; }

  LabeledDataset load(std::uint64_t seed) const {
    if (manifest.empty() && data.empty()) throw ConfigError("one of --manifest or --data is required");
    if (!manifest.empty()) return read_manifest(manifest);
    std::vector<std::string> warnings;
    LabeledDataset ds = split_dataset(scan_dataset(data), {}, seed, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    return ds;
  }
};

// --- Subcommands ------------------------------------------------------------------

struct SynthCommand {
  std::string out;
  Index classes = 6;
  Index per_class = 50;
  Index size = 64;
  std::uint64_t seed = 0;

  void add_to(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "Write a seeded synthetic image corpus");
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--classes", classes, "Number of classes")->capture_default_str();
    c->add_option("--per-class", per_class, "Images per class")->capture_default_str();
    c->add_option("--size", size, "Image side in pixels")->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
  }
  int run() const {
    print_config("synth", {{"out", out}, {"classes", classes}, {"per_class", per_class}, {"size", size}, {"seed", seed}});
    generate_synthetic_corpus(out, classes, per_class, seed, {.image_size = size});
    std::cout << "wrote " << classes * per_class << " images to " << out << "\n";
    return 0;
  }
};

struct SplitCommand {
  std::string data;
  std::string out;
  SplitFractions fractions;
  std::uint64_t seed = 0;

  void add_to(CLI::App& app) {
    auto* c = app.add_subcommand("split", "Stratified train/val/test split into a JSONL manifest");
    c->add_option("--data", data, "Class-per-directory image root")->required();
    c->add_option("--out", out, "Manifest path")->required();
    c->add_option("--train", fractions.train)->capture_default_str();
    c->add_option("--val", fractions.val)->capture_default_str();
    c->add_option("--test", fractions.test)->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
  }
  int run() const {
    print_config("split", {{"data", data}, {"out", out}, {"train", fractions.train}, {"val", fractions.val},
                           {"test", fractions.test}, {"seed", seed}});
    std::vector<std::string> warnings;
    const LabeledDataset ds = split_dataset(scan_dataset(data), fractions, seed, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    write_manifest(ds, out);
    std::cout << "train " << ds.count(Split::kTrain) << ", val " << ds.count(Split::kVal) << ", test "
              << ds.count(Split::kTest) << " over " << ds.num_classes() << " classes\n";
    return 0;
  }
};

struct TrainCommand {
  DataSource source;
  std::string arch = "mobilenet-transfer";
  Index input_size = 0;
  std::string weights;
  std::string weights_scope = "backbone";
  std::optional<std::size_t> freeze;
  int epochs = 16;
  double lr = 1e-3;
  Index batch = 32;
  int patience = 0;
  bool early_stop = false;
  std::uint64_t seed = 0;
  bool no_augment = false;
  double rotation = 30.0;
  double shift = 0.1;
  std::vector<std::string> calibrate_bn;
  std::string out;
  std::string log;
  std::string meta;
  CLI::Option* patience_opt = nullptr;

  void add_to(CLI::App& app) {
    auto* c = app.add_subcommand("train", "Train a classifier and write its weights, log and metadata");
    source.add_to(c);
    c->add_option("--arch", arch)->check(CLI::IsMember(kArchitectures))->capture_default_str();
    c->add_option("--input-size", input_size, "Input side (default 224 for MobileNet, 256 for base-cnn)");
    c->add_option("--weights", weights, "NTW file to initialise from");
    c->add_option("--weights-scope", weights_scope,
                  "Tensors taken from --weights: backbone (all but the head), no-classifier (all but the "
                  "final dense layer), all")
        ->check(CLI::IsMember({"backbone", "no-classifier", "all"}))
        ->capture_default_str();
    c->add_option("--freeze", freeze, "Layers kept frozen, counted from the input (default 20 for MobileNet)");
    c->add_option("--epochs", epochs)->capture_default_str();
    c->add_option("--lr", lr)->capture_default_str();
    c->add_option("--batch", batch)->capture_default_str();
    patience_opt = c->add_option("--patience", patience, "Early-stopping patience in epochs, 0 disables")
                       ->capture_default_str();
    c->add_flag("--early-stop", early_stop, "Enable early stopping with patience 3");
    c->add_option("--seed", seed)->capture_default_str();
    c->add_flag("--no-augment", no_augment, "Disable rotation/shift/flip augmentation");
    c->add_option("--rotation", rotation, "Augmentation rotation range in degrees")->capture_default_str();
    c->add_option("--shift", shift, "Augmentation shift as a fraction of the image")->capture_default_str();
    c->add_option("--calibrate-bn", calibrate_bn,
                  "Batchnorm layers whose moving statistics are set from training images first");
    c->add_option("--out", out, "Weights output (NTW)")->required();
    c->add_option("--log", log, "Epoch log CSV (default: --out with .csv)");
    c->add_option("--meta", meta, "Model metadata JSON (default: --out with .json)");
  }

  int run() const {
    TrainConfig config;
    config.epochs = epochs;
    config.learning_rate = lr;
    config.batch_size = batch;
    config.early_stop_patience = patience_opt->count() ? patience : early_stop ? 3 : 0;
    config.seed = seed;
    config.freeze_first_n = freeze ? *freeze : arch == "base-cnn" ? 0 : 20;
    if (!no_augment) config.augment = AugmentSpec{.rotation_deg = rotation, .shift = shift, .seed = seed};
    fs::path log_path = log;
    if (log.empty()) log_path = fs::path(out).replace_extension(".csv");
    const fs::path meta_path = sidecar_for(out, meta);
    if (log_path == fs::path(out) || log_path == meta_path) throw ConfigError("output paths must differ");

    print_config("train", {{"arch", arch},
                                           {"input_size", input_size ? input_size : default_input_size(arch)},
                                           {"weights", weights},
                                           {"weights_scope", weights_scope},
                                           {"freeze", *config.freeze_first_n},
                                           {"epochs", epochs},
                                           {"lr", lr},
                                           {"batch", batch},
                                           {"patience", config.early_stop_patience},
                                           {"seed", seed},
                                           {"augment", !no_augment},
                                           {"rotation", rotation},
                                           {"shift", shift},
                                           {"calibrate_bn", calibrate_bn},
                                           {"out", out},
                                           {"log", log_path.string()},
                                           {"meta", meta_path.string()}}, source.describe());
    config.validate();

    const LabeledDataset ds = source.load(seed);
    ModelMeta m{arch, input_size, ds.class_names};
    ModelGraph model = build_model(m, seed);
    if (!weights.empty()) {
      LoadOptions opts;
      if (weights_scope == "backbone") opts.skip_layers = head_layer_names(model);
      if (weights_scope == "no-classifier") {
        std::size_t last_dense = model.layers.size();
        while (last_dense-- > 0 && model.layers[last_dense].kind != LayerKind::kDense) {
        }
        if (last_dense < model.layers.size()) opts.skip_layers.insert(model.layers[last_dense].name);
      }
      load_weights(model, weights, opts);
    }
    ImageCache cache(ds, model.input);
    if (!calibrate_bn.empty()) {
      const auto idx = ds.indices(Split::kTrain);
      std::vector<TensorF> images;
      for (std::size_t i = 0; i < std::min<std::size_t>(idx.size(), 256); ++i) images.push_back(cache.get(idx[i]));
      if (images.empty()) throw DataError("the train split is empty");
      calibrate_batchnorm(model, stack(images), calibrate_bn);
    }
    const TrainLog result = train(model, cache, config, [&](const EpochStats& e) {
      std::fprintf(stderr, "epoch %d/%d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n", e.epoch, epochs,
                   e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
    });
    save_weights(model, out);
    result.write_csv(log_path);
    write_meta(m, meta_path);
    const EpochStats& best = result.epochs[static_cast<std::size_t>(result.best_epoch - 1)];
    std::printf("trained %zu epochs%s; epoch %d: train_acc %.4f val_acc %.4f\n", result.epochs.size(),
                result.stopped_early ? " (stopped early)" : "", best.epoch, best.train_accuracy, best.val_accuracy);
    return 0;
  }
};

struct EvalCommand {
  DataSource source;
  std::string model;
  std::string meta;
  std::string split = "test";
  Index batch = 32;
  std::uint64_t seed = 0;
  std::string json_out;
  std::string text_out;

  void add_to(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "Classification report and confusion matrix on one split");
    source.add_to(c);
    c->add_option("--model", model, "Weights (NTW)")->required();
    c->add_option("--meta", meta, "Model metadata (default: --model with .json)");
    c->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
    c->add_option("--batch", batch)->capture_default_str();
    c->add_option("--seed", seed, "Split seed when reading --data")->capture_default_str();
    c->add_option("--json", json_out, "Report JSON output");
    c->add_option("--text", text_out, "Report text output");
  }
  int run() const {
    print_config("eval",
                 {{"model", model},
                  {"meta", sidecar_for(model, meta).string()},
                  {"split", split},
                  {"batch", batch},
                  {"seed", seed},
                  {"json", json_out},
                  {"text", text_out}},
                 source.describe());
    const LoadedModel m = load_model(model, meta);
    const LabeledDataset ds = source.load(seed);
    if (ds.class_names != m.meta.class_names) {
      throw DataError("dataset classes do not match the model's classes");
    }
    ImageCache cache(ds, m.graph.input);
    const EvalReport report = evaluate(m.graph, cache, parse_split(split), batch);
    if (!json_out.empty()) export_report(report, json_out, ReportFormat::kJson);
    if (!text_out.empty()) export_report(report, text_out, ReportFormat::kText);
    std::cout << render_text(report);
    return 0;
  }
};

struct PredictCommand {
  std::string model;
  std::string meta;
  std::string image;
  Index top_k = 3;

  void add_to(CLI::App& app) {
    auto* c = app.add_subcommand("predict", "Top-k classes for one image");
    c->add_option("--model", model, "Weights (NTW)")->required();
    c->add_option("--meta", meta, "Model metadata (default: --model with .json)");
    c->add_option("--image", image, "PNG or JPEG file")->required();
    c->add_option("--top-k", top_k)->check(CLI::PositiveNumber)->capture_default_str();
  }
  int run() const {
    print_config("predict", {{"model", model},
                             {"meta", sidecar_for(model, meta).string()},
                             {"image", image},
                             {"top_k", top_k}});
    const LoadedModel m = load_model(model, meta);
    const TensorF x = load_image(image, m.graph.input);
    const TensorF probs = predict(m.graph, x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
    std::vector<Index> order(static_cast<std::size_t>(probs.dim(1)));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return probs[a] > probs[b]; });
    for (std::size_t r = 0; r < std::min<std::size_t>(order.size(), static_cast<std::size_t>(top_k)); ++r) {
      const Index c = order[r];
      std::printf("%zu\t%s\t%.6f\n", r + 1, m.meta.class_names[static_cast<std::size_t>(c)].c_str(),
                  static_cast<double>(probs[c]));
    }
    return 0;
  }
};

struct GradcamCommand {
  std::string model;
  std::string meta;
  std::string image;
  std::string cls;
  std::string out;
  std::string raw;

  void add_to(CLI::App& app) {
    auto* c = app.add_subcommand("gradcam", "Grad-CAM heatmap of one image");
    c->add_option("--model", model, "Weights (NTW)")->required();
    c->add_option("--meta", meta, "Model metadata (default: --model with .json)");
    c->add_option("--image", image, "PNG or JPEG file")->required();
    c->add_option("--class", cls, "Class name or index (default: the predicted class)");
    c->add_option("--out", out, "PNG: image, heatmap, overlay side by side")->required();
    c->add_option("--raw", raw, "Also write the unnormalized map as NTW");
  }
  int run() const {
    print_config("gradcam", {{"model", model},
                             {"meta", sidecar_for(model, meta).string()},
                             {"image", image},
                             {"class", cls},
                             {"out", out},
                             {"raw", raw}});
    const LoadedModel m = load_model(model, meta);
    const Image source = read_image(image);
    const TensorF x = preprocess(source, m.graph.input);
    const auto& names = m.meta.class_names;
    Index k = 0;
    if (cls.empty()) {
      const TensorF probs = predict(m.graph, x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
      probs.values().maxCoeff(&k);
    } else if (auto it = std::find(names.begin(), names.end(), cls); it != names.end()) {
      k = it - names.begin();
    } else {
      try {
        std::size_t used = 0;
        k = std::stoll(cls, &used);
        if (used != cls.size()) throw std::invalid_argument(cls);
      } catch (const std::logic_error&) {
        throw ConfigError("unknown class '" + cls + "'");
      }
    }
    const CamResultF cam = compute_gradcam(m.graph, x, k);
    render_heatmap(cam, from_unit_range(x), out);
    if (!raw.empty()) write_raw_cam(cam, raw);
    std::printf("class %s  score %.6f  layer %s  map %lldx%lld\n",
                k < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(k)].c_str() : "?",
                static_cast<double>(cam.score), cam.layer.c_str(), static_cast<long long>(cam.raw.dim(0)),
                static_cast<long long>(cam.raw.dim(1)));
    return 0;
  }
};

struct InspectCommand {
  std::string model;
  std::string meta;
  std::string arch = "mobilenet-transfer";
  Index classes = 6;
  Index input_size = 0;
  std::optional<std::size_t> freeze;

  void add_to(CLI::App& app) {
    auto* c = app.add_subcommand("inspect", "Print the layer table and parameter census");
    c->add_option("--model", model, "Weights (NTW); the architecture comes from its metadata");
    c->add_option("--meta", meta, "Model metadata (default: --model with .json)");
    c->add_option("--arch", arch)->check(CLI::IsMember(kArchitectures))->capture_default_str();
    c->add_option("--classes", classes)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--input-size", input_size, "Input side (default 224 for MobileNet, 256 for base-cnn)");
    c->add_option("--freeze", freeze, "Show trainable flags as after freezing this many layers");
  }
  int run() const {
    print_config("inspect", {{"model", model},
                             {"meta", model.empty() ? "" : sidecar_for(model, meta).string()},
                             {"arch", arch},
                             {"classes", classes},
                             {"input_size", input_size ? input_size : default_input_size(arch)}});
    ModelGraph graph;
    if (!model.empty()) {
      graph = load_model(model, meta).graph;
    } else {
      ModelMeta m{arch, input_size, {}};
      m.class_names.resize(static_cast<std::size_t>(classes));
      graph = build_model(m, 0);
    }
    if (freeze) graph = set_trainable_boundary(std::move(graph), *freeze);
    std::cout << summarize(graph);
    return 0;
  }
};

int run_main(int argc, char** argv) {
  CLI::App app{"fruitnet: MobileNet transfer learning for fruit images"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (overrides FRUITNET_THREADS)");

  SynthCommand synth;
  SplitCommand split;
  TrainCommand train_cmd;
  EvalCommand eval;
  PredictCommand predict_cmd;
  GradcamCommand gradcam;
  InspectCommand inspect;
  synth.add_to(app);
  split.add_to(app);
  train_cmd.add_to(app);
  eval.add_to(app);
  predict_cmd.add_to(app);
  gradcam.add_to(app);
  inspect.add_to(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (threads > 0) set_thread_count(threads);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "synth") return synth.run();
    if (name == "split") return split.run();
    if (name == "train") return train_cmd.run();
    if (name == "eval") return eval.run();
    if (name == "predict") return predict_cmd.run();
    if (name == "gradcam") return gradcam.run();
    return inspect.run();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) { return run_main(argc, argv); }
