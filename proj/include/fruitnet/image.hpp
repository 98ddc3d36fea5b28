#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fruitnet/tensor.hpp"

namespace fruitnet {

/// 8-bit RGB raster, row-major H x W x 3.
struct Image {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(Index h, Index w, std::uint8_t fill = 0)
      : height(h), width(w), rgb(static_cast<std::size_t>(h * w * 3), fill) {}

  std::uint8_t* pixel(Index y, Index x) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t* pixel(Index y, Index x) const { return rgb.data() + (y * width + x) * 3; }
};

/// Decodes PNG or baseline JPEG (chosen by file signature). Grayscale is
/// replicated to RGB, alpha is dropped. Throws DataError naming the path.
Image read_image(const std::filesystem::path& path);

/// True when the first bytes carry a PNG or JPEG signature.
bool has_image_signature(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG. The output bytes depend only on the pixels.
void write_png(const Image& image, const std::filesystem::path& path);

/// Bilinear resize with half-pixel centers (no antialiasing), any channel count.
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& hwc, Index out_h, Index out_w);

/// Pixels as floats in [0, 255].
TensorF to_tensor(const Image& image);
/// Inverse of the [-1, 1] input scaling, rounded and clamped to bytes.
Image from_unit_range(const TensorF& hwc);

/// Decode, bilinear-resize to target height x width, scale to [-1, 1] via
/// x / 127.5 - 1. Target channels must be 3.
TensorF load_image(const std::filesystem::path& path, const Shape4& target);
/// Same preprocessing for an already decoded image.
TensorF preprocess(const Image& image, const Shape4& target);

}  // namespace fruitnet
