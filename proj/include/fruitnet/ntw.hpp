#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>

#include "fruitnet/model.hpp"
#include "fruitnet/tensor_store.hpp"

namespace fruitnet {

// NTW named-tensor container, all integers little-endian:
//   "NTW1" | u32 count | count x { u16 name_len | name | u8 dtype (0 = f32) |
//   u8 rank | rank x u32 dim | prod(dims) x f32 row-major }
// No padding or alignment anywhere.

std::string encode_ntw(const WeightStore& store);
/// Throws FormatError on bad magic, unknown dtype or truncation.
WeightStore decode_ntw(std::string_view bytes);

void write_ntw(const WeightStore& store, const std::filesystem::path& path);
WeightStore read_ntw(const std::filesystem::path& path);

void save_weights(const ModelGraph& model, const std::filesystem::path& path);

/// Which model tensors a load must provide.
struct LoadOptions {
  // Layers whose parameters are left untouched (e.g. a fresh head).
  std::set<std::string> skip_layers;
};

/// Binds every model parameter (minus skipped layers) from `store`. Fails
/// with a LoadError listing every missing name or naming the first shape
/// mismatch; the model is unchanged on failure. Extra tensors are ignored.
void bind_weights(ModelGraph& model, const WeightStore& store, const LoadOptions& options = {});

/// Reads `path` and binds it into `model`. Returns the file contents.
WeightStore load_weights(ModelGraph& model, const std::filesystem::path& path,
                         const LoadOptions& options = {});

/// Layer names from head_begin onward.
std::set<std::string> head_layer_names(const ModelGraph& model);

}  // namespace fruitnet
