#include "fruitnet/ntw.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fruitnet {

namespace {

constexpr std::string_view kMagic = "NTW1";
constexpr std::uint8_t kDtypeF32 = 0;

template <typename UInt>
void put(std::string& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename UInt>
  UInt get(const char* what) {
    need(sizeof(UInt), what);
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      value |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("NTW file truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_ntw(const WeightStore& store) {
  std::string out(kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    if (name.size() > UINT16_MAX) throw FormatError("tensor name too long: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kDtypeF32));
    out.push_back(static_cast<char>(t.rank()));
    for (Index d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(t[i]));
  }
  return out;
}

WeightStore decode_ntw(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("not an NTW file: bad magic/version (expected \"NTW1\")");
  }
  in.take(kMagic.size(), "magic");
  const auto count = in.get<std::uint32_t>("tensor count");
  WeightStore store;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto len = in.get<std::uint16_t>("name length");
    std::string name(in.take(len, "tensor name"));
    const auto dtype = in.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) {
      throw FormatError("tensor '" + name + "' has unsupported dtype code " + std::to_string(dtype));
    }
    const auto rank = in.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.get<std::uint32_t>("dimension");
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
    }
    Tensor<float> t(shape);
    const auto payload = in.take(static_cast<std::size_t>(t.size()) * 4, "tensor data");
    for (Index i = 0; i < t.size(); ++i) {
      std::uint32_t word = 0;
      for (int b = 0; b < 4; ++b) {
        word |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[static_cast<std::size_t>(4 * i + b)])) << (8 * b);
      }
      t[i] = std::bit_cast<float>(word);
    }
    if (store.contains(name)) throw FormatError("duplicate tensor name '" + name + "'");
    store.set(name, std::move(t));
  }
  if (!in.done()) throw FormatError("trailing bytes after the last NTW tensor");
  return store;
}

void write_ntw(const WeightStore& store, const std::filesystem::path& path) {
  const std::string bytes = encode_ntw(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

WeightStore read_ntw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return decode_ntw(buffer.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_weights(const ModelGraph& model, const std::filesystem::path& path) {
  WeightStore ordered;
  for (const auto& layer : model.layers) {
    for (const auto& name : parameter_names(layer)) ordered.set(name, model.params.at(name));
  }
  write_ntw(ordered, path);
}

void bind_weights(ModelGraph& model, const WeightStore& store, const LoadOptions& options) {
  std::vector<std::string> missing;
  for (const auto& layer : model.layers) {
    if (options.skip_layers.contains(layer.name)) continue;
    for (const auto& name : parameter_names(layer)) {
      const auto* source = store.find(name);
      if (!source) {
        missing.push_back(name);
        continue;
      }
      const auto& target = model.params.at(name);
      if (source->shape() != target.shape()) {
        throw LoadError("tensor '" + name + "' has shape " + shape_string(source->shape()) +
                        " but the model expects " + shape_string(target.shape()));
      }
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw LoadError("weight file is missing " + std::to_string(missing.size()) +
                    " tensor(s): " + list);
  }
  for (const auto& layer : model.layers) {
    if (options.skip_layers.contains(layer.name)) continue;
    for (const auto& name : parameter_names(layer)) model.params.set(name, store.at(name));
  }
}

WeightStore load_weights(ModelGraph& model, const std::filesystem::path& path,
                         const LoadOptions& options) {
  WeightStore store = read_ntw(path);
  bind_weights(model, store, options);
  return store;
}

std::set<std::string> head_layer_names(const ModelGraph& model) {
  std::set<std::string> names;
  for (std::size_t i = model.head_begin; i < model.layers.size(); ++i) {
    names.insert(model.layers[i].name);
  }
  return names;
}

}  // namespace fruitnet
