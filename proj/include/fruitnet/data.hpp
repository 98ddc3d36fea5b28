#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fruitnet/random.hpp"
#include "fruitnet/tensor.hpp"

namespace fruitnet {

enum class Split { kUnassigned, kTrain, kVal, kTest };

std::string to_string(Split split);
/// "train" / "val" / "test" / "none". Throws ConfigError otherwise.
Split parse_split(const std::string& name);

struct Sample {
  std::filesystem::path path;
  int label = 0;
  Split split = Split::kUnassigned;
};

struct LabeledDataset {
  std::vector<std::string> class_names;  // sorted
  std::vector<Sample> samples;

  Index num_classes() const { return static_cast<Index>(class_names.size()); }
  /// Sample indices assigned to `split`, in dataset order.
  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
};

/// root/<class>/<image>: classes are the sorted subdirectory names, samples
/// the sorted .png/.jpg/.jpeg files in each. Hidden entries are skipped.
/// Throws DataError for an empty or missing root, an image-less class, an
/// image lying outside a class directory, or a file without a PNG/JPEG
/// signature (named in the message).
LabeledDataset scan_dataset(const std::filesystem::path& root);

struct SplitFractions {
  double train = 0.76;
  double val = 0.19;
  double test = 0.05;
};

/// Stratified split: per class val = round(n * val), test = round(n * test),
/// the rest train, after a seeded shuffle of that class. Classes with fewer
/// than three samples go entirely to train and add a message to `warnings`.
/// Throws ConfigError unless every fraction is positive and they sum to 1.
LabeledDataset split_dataset(LabeledDataset ds, const SplitFractions& fractions, std::uint64_t seed,
                             std::vector<std::string>* warnings = nullptr);

/// One JSON object per line: {"path": ..., "class": ..., "split": ...}.
void write_manifest(const LabeledDataset& ds, const std::filesystem::path& path);
/// Class names are the sorted distinct "class" values; relative paths are
/// resolved against the manifest's directory.
LabeledDataset read_manifest(const std::filesystem::path& path);

// --- Augmentation ------------------------------------------------------------

enum class FillMode { kNearest, kConstant };

struct AugmentSpec {
  double rotation_deg = 30.0;  // uniform in [-r, r]
  double shift = 0.1;          // fraction of width/height, uniform in [-s, s]
  bool horizontal_flip = true;
  bool vertical_flip = true;
  FillMode fill = FillMode::kNearest;
  float fill_value = 0.0f;  // kConstant only
  std::uint64_t seed = 0;

  /// Throws ConfigError unless rotation in [0, 180] and shift in [0, 0.5].
  void validate() const;
};

/// A concrete draw of the augmentation parameters.
struct Affine {
  double rotation_deg = 0;  // counter-clockwise about the image center
  double shift_x = 0;       // pixels, positive moves content right
  double shift_y = 0;       // pixels, positive moves content down
  bool flip_horizontal = false;
  bool flip_vertical = false;
};

Affine draw_affine(const AugmentSpec& spec, Index height, Index width, Rng& rng);

/// Flips first, then rotation and shift by inverse mapping with bilinear
/// sampling. Zero rotation with integer shifts and flips are exact
/// permutations of the input.
TensorF apply_affine(const TensorF& hwc, const Affine& t, FillMode fill = FillMode::kNearest,
                     float fill_value = 0.0f);

TensorF augment(const TensorF& hwc, const AugmentSpec& spec, Rng& rng);

// --- Batching ----------------------------------------------------------------

/// Preprocessed images by sample index, loaded on first use and kept while
/// they fit in the byte budget. Holds a reference to the dataset. get() is
/// safe to call concurrently.
class ImageCache {
 public:
  ImageCache(const LabeledDataset& ds, Shape4 target, std::size_t budget_bytes = std::size_t{1} << 30);

  TensorF get(std::size_t sample) const;
  const Shape4& target() const { return target_; }
  const LabeledDataset& dataset() const { return ds_; }

 private:
  const LabeledDataset& ds_;
  Shape4 target_;
  std::size_t budget_;
  mutable std::vector<std::shared_ptr<const TensorF>> slots_;
  mutable std::size_t used_ = 0;
  mutable std::mutex mutex_;
};

struct Batch {
  TensorF images;  // B x H x W x C
  TensorF labels;  // B x K one-hot
  std::vector<std::size_t> samples;
};

struct BatchOptions {
  Index batch_size = 32;
  bool shuffle = true;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::optional<AugmentSpec> augment;
};

/// Epoch order over one split. With shuffle, the order is a seeded
/// permutation keyed by (seed, epoch); the last batch may be short.
/// Augmentation draws per sample from (augment seed, epoch, position), so
/// batches are identical for any thread count.
class BatchStream {
 public:
  BatchStream(const ImageCache& images, Split split, BatchOptions options);

  std::size_t num_batches() const;
  std::size_t num_samples() const { return order_.size(); }
  const std::vector<std::size_t>& order() const { return order_; }
  /// Next batch, or nullopt at the end of the epoch.
  std::optional<Batch> next();

 private:
  const ImageCache& images_;
  BatchOptions options_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Batch sizes a split of `count` samples yields.
std::vector<Index> batch_sizes(std::size_t count, Index batch_size);

// --- Synthetic corpus ------------------------------------------------------------

struct SyntheticOptions {
  Index image_size = 64;
};

/// Writes root/<class>/NNNN.png for `classes` classes of `per_class`
/// images each: an ellipse of class-specific hue and elongation on a plain
/// light background with seeded jitter in position, size, angle and shade.
/// Six classes use the banana sub-family names. Byte-identical per seed.
void generate_synthetic_corpus(const std::filesystem::path& root, Index classes, Index per_class,
                               std::uint64_t seed, const SyntheticOptions& options = {});

/// Names generate_synthetic_corpus uses for `classes` classes.
std::vector<std::string> synthetic_class_names(Index classes);

}  // namespace fruitnet
