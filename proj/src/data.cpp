#include "fruitnet/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "fruitnet/errors.hpp"
#include "fruitnet/image.hpp"
#include "fruitnet/parallel.hpp"

namespace fruitnet {

namespace fs = std::filesystem;

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
    case Split::kUnassigned:
      break;
  }
  return "none";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "none") return Split::kUnassigned;
  throw ConfigError("unknown split '" + name + "' (expected train, val, test or none)");
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

// --- Scanning ------------------------------------------------------------------

namespace {

bool is_hidden(const fs::path& p) { return p.filename().string().starts_with("."); }

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::directory_entry> sorted_entries(const fs::path& dir) {
  std::vector<fs::directory_entry> entries(fs::directory_iterator(dir), fs::directory_iterator{});
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.path().filename() < b.path().filename(); });
  return entries;
}

}  // namespace

LabeledDataset scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  LabeledDataset ds;
  for (const auto& entry : sorted_entries(root)) {
    if (is_hidden(entry.path())) continue;
    if (!entry.is_directory()) {
      if (has_image_extension(entry.path())) {
        throw DataError("image '" + entry.path().string() + "' is not inside a class directory");
      }
      continue;
    }
    const int label = static_cast<int>(ds.class_names.size());
    std::size_t found = 0;
    for (const auto& file : sorted_entries(entry.path())) {
      if (is_hidden(file.path()) || !file.is_regular_file() || !has_image_extension(file.path())) continue;
      if (!has_image_signature(file.path())) {
        throw DataError("'" + file.path().string() + "' is not a decodable PNG or JPEG file");
      }
      ds.samples.push_back({file.path(), label, Split::kUnassigned});
      ++found;
    }
    if (found == 0) throw DataError("class directory '" + entry.path().string() + "' contains no images");
    ds.class_names.push_back(entry.path().filename().string());
  }
  if (ds.class_names.empty()) throw DataError("dataset root '" + root.string() + "' has no class directories");
  return ds;
}

// --- Splitting -----------------------------------------------------------------

LabeledDataset split_dataset(LabeledDataset ds, const SplitFractions& f, std::uint64_t seed,
                             std::vector<std::string>* warnings) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0)) {
    throw ConfigError("split fractions must all be positive");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  for (int c = 0; c < static_cast<int>(ds.class_names.size()); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      if (ds.samples[i].label == c) members.push_back(i);
    }
    const auto n = static_cast<Index>(members.size());
    if (n < 3) {
      for (std::size_t i : members) ds.samples[i].split = Split::kTrain;
      if (warnings) {
        warnings->push_back("class '" + ds.class_names[static_cast<std::size_t>(c)] + "' has only " +
                            std::to_string(n) + " sample(s); all assigned to train");
      }
      continue;
    }
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(c));
    shuffle(members.begin(), members.end(), rng);
    Index n_val = std::llround(static_cast<double>(n) * f.val);
    Index n_test = std::llround(static_cast<double>(n) * f.test);
    while (n_val + n_test > n - 1) (n_val >= n_test ? n_val : n_test) -= 1;
    for (Index k = 0; k < n; ++k) {
      ds.samples[members[static_cast<std::size_t>(k)]].split =
          k < n_val ? Split::kVal : k < n_val + n_test ? Split::kTest : Split::kTrain;
    }
  }
  return ds;
}

// --- Manifest ------------------------------------------------------------------

void write_manifest(const LabeledDataset& ds, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& s : ds.samples) {
    fs::path p = fs::absolute(s.path).lexically_normal().lexically_relative(base);
    if (p.empty()) p = fs::absolute(s.path);
    nlohmann::ordered_json line;
    line["path"] = p.generic_string();
    line["class"] = ds.class_names.at(static_cast<std::size_t>(s.label));
    line["split"] = to_string(s.split);
    out << line.dump() << '\n';
  }
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

LabeledDataset read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  struct Row {
    fs::path path;
    std::string cls;
    Split split;
  };
  std::vector<Row> rows;
  std::set<std::string> classes;
  const fs::path base = path.parent_path();
  std::string text;
  for (int line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      fs::path p = j.at("path").get<std::string>();
      if (p.is_relative()) p = base / p;
      rows.push_back({p, j.at("class").get<std::string>(), parse_split(j.at("split").get<std::string>())});
      classes.insert(rows.back().cls);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  if (rows.empty()) throw DataError("manifest '" + path.string() + "' lists no samples");
  LabeledDataset ds;
  ds.class_names.assign(classes.begin(), classes.end());
  for (const auto& r : rows) {
    const auto it = std::lower_bound(ds.class_names.begin(), ds.class_names.end(), r.cls);
    ds.samples.push_back({r.path, static_cast<int>(it - ds.class_names.begin()), r.split});
  }
  return ds;
}

// --- Augmentation --------------------------------------------------------------

void AugmentSpec::validate() const {
  if (!(rotation_deg >= 0 && rotation_deg <= 180)) throw ConfigError("rotation range must lie in [0, 180] degrees");
  if (!(shift >= 0 && shift <= 0.5)) throw ConfigError("shift fraction must lie in [0, 0.5]");
}

Affine draw_affine(const AugmentSpec& spec, Index height, Index width, Rng& rng) {
  Affine t;
  // Fixed draw order keeps streams aligned whatever the spec enables.
  const double r = uniform(rng, -1.0, 1.0);
  const double sx = uniform(rng, -1.0, 1.0);
  const double sy = uniform(rng, -1.0, 1.0);
  const double fh = uniform01(rng);
  const double fv = uniform01(rng);
  t.rotation_deg = r * spec.rotation_deg;
  t.shift_x = sx * spec.shift * static_cast<double>(width);
  t.shift_y = sy * spec.shift * static_cast<double>(height);
  t.flip_horizontal = spec.horizontal_flip && fh < 0.5;
  t.flip_vertical = spec.vertical_flip && fv < 0.5;
  return t;
}

namespace {

TensorF flip(const TensorF& src, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return src;
  const Index h = src.dim(0), w = src.dim(1), c = src.dim(2);
  TensorF out(src.shape());
  for (Index y = 0; y < h; ++y) {
    const Index sy = vertical ? h - 1 - y : y;
    for (Index x = 0; x < w; ++x) {
      const Index sx = horizontal ? w - 1 - x : x;
      std::copy_n(src.data() + (sy * w + sx) * c, c, out.data() + (y * w + x) * c);
    }
  }
  return out;
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-6 ? r : v;
}

}  // namespace

TensorF apply_affine(const TensorF& hwc, const Affine& t, FillMode fill, float fill_value) {
  if (hwc.rank() != 3) throw ShapeError("augmentation expects H x W x C, got " + shape_string(hwc.shape()));
  TensorF src = flip(hwc, t.flip_horizontal, t.flip_vertical);
  if (t.rotation_deg == 0 && t.shift_x == 0 && t.shift_y == 0) return src;
  const Index h = src.dim(0), w = src.dim(1), c = src.dim(2);
  const double theta = t.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  TensorF out(src.shape());
  std::vector<float> acc(static_cast<std::size_t>(c));
  auto tap = [&](Index y, Index x, float weight) {
    if (weight == 0.0f) return;
    if (y < 0 || y >= h || x < 0 || x >= w) {
      if (fill == FillMode::kConstant) {
        for (auto& a : acc) a += weight * fill_value;
        return;
      }
      y = std::clamp<Index>(y, 0, h - 1);
      x = std::clamp<Index>(x, 0, w - 1);
    }
    const float* p = src.data() + (y * w + x) * c;
    for (Index k = 0; k < c; ++k) acc[static_cast<std::size_t>(k)] += weight * p[k];
  };
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      // Undo the shift, then the counter-clockwise rotation about the center.
      const double dx = static_cast<double>(x) - t.shift_x - cx;
      const double dy = static_cast<double>(y) - t.shift_y - cy;
      const double sx = snap(cs * dx - sn * dy + cx);
      const double sy = snap(sn * dx + cs * dy + cy);
      const double fy = std::floor(sy), fx = std::floor(sx);
      const auto wy = static_cast<float>(sy - fy), wx = static_cast<float>(sx - fx);
      const auto y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
      std::fill(acc.begin(), acc.end(), 0.0f);
      tap(y0, x0, (1 - wy) * (1 - wx));
      tap(y0, x0 + 1, (1 - wy) * wx);
      tap(y0 + 1, x0, wy * (1 - wx));
      tap(y0 + 1, x0 + 1, wy * wx);
      std::copy(acc.begin(), acc.end(), out.data() + (y * w + x) * c);
    }
  }
  return out;
}

TensorF augment(const TensorF& hwc, const AugmentSpec& spec, Rng& rng) {
  if (hwc.rank() != 3) throw ShapeError("augmentation expects H x W x C, got " + shape_string(hwc.shape()));
  return apply_affine(hwc, draw_affine(spec, hwc.dim(0), hwc.dim(1), rng), spec.fill, spec.fill_value);
}

// --- Batching --------------------------------------------------------------------

ImageCache::ImageCache(const LabeledDataset& ds, Shape4 target, std::size_t budget_bytes)
    : ds_(ds), target_(target), budget_(budget_bytes), slots_(ds.samples.size()) {
  if (target.channels != 3) throw ShapeError("image input must have 3 channels");
}

TensorF ImageCache::get(std::size_t sample) const {
  {
    std::lock_guard lock(mutex_);
    if (const auto& slot = slots_.at(sample)) return *slot;
  }
  auto loaded = std::make_shared<const TensorF>(load_image(ds_.samples[sample].path, target_));
  const std::size_t bytes = static_cast<std::size_t>(loaded->size()) * sizeof(float);
  std::lock_guard lock(mutex_);
  if (!slots_[sample] && used_ + bytes <= budget_) {
    slots_[sample] = loaded;
    used_ += bytes;
  }
  return *loaded;
}

std::vector<Index> batch_sizes(std::size_t count, Index batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<Index> sizes;
  for (auto left = static_cast<Index>(count); left > 0; left -= batch_size) sizes.push_back(std::min(left, batch_size));
  return sizes;
}

BatchStream::BatchStream(const ImageCache& images, Split split, BatchOptions options)
    : images_(images), options_(std::move(options)), order_(images.dataset().indices(split)) {
  if (options_.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (order_.empty()) throw DataError("the " + to_string(split) + " split is empty");
  if (options_.augment) options_.augment->validate();
  if (options_.shuffle) {
    Rng rng = make_rng(options_.seed, options_.epoch);
    shuffle(order_.begin(), order_.end(), rng);
  }
}

std::size_t BatchStream::num_batches() const {
  const auto b = static_cast<std::size_t>(options_.batch_size);
  return (order_.size() + b - 1) / b;
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t begin = cursor_;
  const std::size_t end = std::min(order_.size(), begin + static_cast<std::size_t>(options_.batch_size));
  cursor_ = end;
  const Shape4& t = images_.target();
  const Index n = static_cast<Index>(end - begin);
  const Index k = images_.dataset().num_classes();
  Batch batch;
  batch.samples.assign(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                       order_.begin() + static_cast<std::ptrdiff_t>(end));
  batch.images = TensorF({n, t.height, t.width, t.channels});
  batch.labels = TensorF({n, k});
  const Index each = t.height * t.width * t.channels;
  parallel_for(n, [&](Index i) {
    const std::size_t sample = batch.samples[static_cast<std::size_t>(i)];
    TensorF img = images_.get(sample);
    if (options_.augment) {
      Rng rng = make_rng(options_.augment->seed, (options_.epoch << 32) + begin + static_cast<std::size_t>(i));
      img = augment(img, *options_.augment, rng);
    }
    std::copy_n(img.data(), each, batch.images.data() + i * each);
  });
  for (Index i = 0; i < n; ++i) {
    batch.labels.at({i, images_.dataset().samples[batch.samples[static_cast<std::size_t>(i)]].label}) = 1.0f;
  }
  return batch;
}

// --- Synthetic corpus --------------------------------------------------------------

std::vector<std::string> synthetic_class_names(Index classes) {
  if (classes == 6) return {"Elakki", "Hill Banana", "Nendram", "Other Fruits", "Red Banana", "Robusta"};
  std::vector<std::string> names;
  const int digits = classes > 99 ? 3 : 2;
  for (Index c = 0; c < classes; ++c) {
    std::string id = std::to_string(c);
    names.push_back("class_" + std::string(static_cast<std::size_t>(std::max<int>(0, digits - static_cast<int>(id.size()))), '0') + id);
  }
  return names;
}

namespace {

// HSV with h in degrees, s and v in [0, 1].
void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1 - std::abs(std::fmod(h, 2.0) - 1));
  const int sector = static_cast<int>(h);
  const double table[6][3] = {{c, x, 0}, {x, c, 0}, {0, c, x}, {0, x, c}, {x, 0, c}, {c, 0, x}};
  for (int i = 0; i < 3; ++i) rgb[i] = table[sector % 6][i] + (v - c);
}

Image synthetic_image(Index size, Index cls, Index classes, Rng& rng) {
  const double s = static_cast<double>(size);
  const double bg = uniform(rng, 0.86, 0.94);
  const double hue = 360.0 * static_cast<double>(cls) / static_cast<double>(classes) + uniform(rng, -6, 6);
  double color[3];
  hsv_to_rgb(hue, uniform(rng, 0.65, 0.85), uniform(rng, 0.75, 0.95), color);
  // Elongation grows with the class index: round for the first, slim for the last.
  const double elong = 0.85 - 0.5 * static_cast<double>(cls) / static_cast<double>(std::max<Index>(classes - 1, 1));
  const double a = s * uniform(rng, 0.24, 0.32);
  const double b = a * (elong + uniform(rng, -0.05, 0.05));
  const double cy = s * uniform(rng, 0.4, 0.6), cx = s * uniform(rng, 0.4, 0.6);
  const double angle = uniform(rng, 0, std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  Image img(size, size);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      // 2x2 supersampling softens the rim.
      double cover = 0;
      for (double oy : {0.25, 0.75}) {
        for (double ox : {0.25, 0.75}) {
          const double dy = static_cast<double>(y) + oy - cy, dx = static_cast<double>(x) + ox - cx;
          const double u = (ca * dx + sa * dy) / a, v = (-sa * dx + ca * dy) / b;
          cover += u * u + v * v <= 1.0 ? 0.25 : 0.0;
        }
      }
      const double noise = uniform(rng, -0.015, 0.015);
      std::uint8_t* p = img.pixel(y, x);
      for (int k = 0; k < 3; ++k) {
        const double value = cover * color[k] + (1 - cover) * bg + noise;
        p[k] = static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

}  // namespace

void generate_synthetic_corpus(const fs::path& root, Index classes, Index per_class, std::uint64_t seed,
                               const SyntheticOptions& options) {
  if (classes < 2) throw ConfigError("synthetic corpus needs at least 2 classes");
  if (per_class < 1) throw ConfigError("synthetic corpus needs at least 1 image per class");
  if (options.image_size < 8) throw ConfigError("synthetic image size must be at least 8");
  const auto names = synthetic_class_names(classes);
  std::error_code ec;
  for (Index c = 0; c < classes; ++c) {
    const fs::path dir = root / names[static_cast<std::size_t>(c)];
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
    for (Index i = 0; i < per_class; ++i) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(c * per_class + i));
      char file[32];
      std::snprintf(file, sizeof file, "%04lld.png", static_cast<long long>(i));
      write_png(synthetic_image(options.image_size, c, classes, rng), dir / file);
    }
  }
}

}  // namespace fruitnet
