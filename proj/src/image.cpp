#include "fruitnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "fruitnet/errors.hpp"

namespace fruitnet {

namespace {

enum class Format { kUnknown, kPng, kJpeg };

Format sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char head[8] = {};
  if (!in.read(reinterpret_cast<char*>(head), sizeof head)) return Format::kUnknown;
  if (png_sig_cmp(head, 0, 8) == 0) return Format::kPng;
  if (head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return Format::kJpeg;
  return Format::kUnknown;
}

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgba.data(), 0, nullptr)) {
    const std::string message = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path.string() + "': " + message);
  }
  Image out(img.height, img.width);
  for (std::size_t i = 0, n = static_cast<std::size_t>(out.height * out.width); i < n; ++i) {
    std::memcpy(&out.rgb[3 * i], &rgba[4 * i], 3);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw DataError("cannot open '" + path.string() + "'");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  Image out;
  // Nothing with a destructor may be created between setjmp and the last
  // libjpeg call; the raster is allocated through `out`, declared above.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("cannot decode JPEG '" + path.string() + "': " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.jpeg_color_space == JCS_CMYK || cinfo.jpeg_color_space == JCS_YCCK) {
    std::strcpy(err.message, "CMYK JPEG is not supported");
    std::longjmp(err.jump, 1);
  }
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.height = cinfo.output_height;
  out.width = cinfo.output_width;
  out.rgb.resize(static_cast<std::size_t>(out.height * out.width * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

bool has_image_signature(const std::filesystem::path& path) { return sniff(path) != Format::kUnknown; }

Image read_image(const std::filesystem::path& path) {
  switch (sniff(path)) {
    case Format::kPng:
      return read_png(path);
    case Format::kJpeg:
      return read_jpeg(path);
    case Format::kUnknown:
      break;
  }
  if (!std::filesystem::exists(path)) throw DataError("image '" + path.string() + "' does not exist");
  throw DataError("'" + path.string() + "' is neither PNG nor JPEG");
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.height <= 0 || image.width <= 0) throw ShapeError("cannot write an empty image");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw DataError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& hwc, Index out_h, Index out_w) {
  if (hwc.rank() != 3) throw ShapeError("resize expects H x W x C, got " + shape_string(hwc.shape()));
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
  const Index h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
  if (h == out_h && w == out_w) return hwc;
  struct Tap {
    Index lo, hi;
    Scalar frac;
  };
  auto taps = [](Index in, Index out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const Index lo = static_cast<Index>(std::floor(src));
      t[static_cast<std::size_t>(o)] = {lo, std::min(lo + 1, in - 1), static_cast<Scalar>(src - static_cast<double>(lo))};
    }
    return t;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  Tensor<Scalar> out({out_h, out_w, c});
  const Scalar* src = hwc.data();
  Scalar* dst = out.data();
  for (Index y = 0; y < out_h; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (Index x = 0; x < out_w; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      const Scalar* p00 = src + (a.lo * w + b.lo) * c;
      const Scalar* p01 = src + (a.lo * w + b.hi) * c;
      const Scalar* p10 = src + (a.hi * w + b.lo) * c;
      const Scalar* p11 = src + (a.hi * w + b.hi) * c;
      Scalar* o = dst + (y * out_w + x) * c;
      for (Index k = 0; k < c; ++k) {
        const Scalar top = p00[k] + (p01[k] - p00[k]) * b.frac;
        const Scalar bottom = p10[k] + (p11[k] - p10[k]) * b.frac;
        o[k] = top + (bottom - top) * a.frac;
      }
    }
  }
  return out;
}

template TensorF resize_bilinear(const TensorF&, Index, Index);
template TensorD resize_bilinear(const TensorD&, Index, Index);

TensorF to_tensor(const Image& image) {
  TensorF t({image.height, image.width, 3});
  std::transform(image.rgb.begin(), image.rgb.end(), t.data(), [](std::uint8_t v) { return static_cast<float>(v); });
  return t;
}

Image from_unit_range(const TensorF& hwc) {
  if (hwc.rank() != 3 || hwc.dim(2) != 3) throw ShapeError("expected H x W x 3, got " + shape_string(hwc.shape()));
  Image out(hwc.dim(0), hwc.dim(1));
  for (Index i = 0; i < hwc.size(); ++i) {
    const float v = std::round((hwc[i] + 1.0f) * 127.5f);
    out.rgb[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
  }
  return out;
}

TensorF preprocess(const Image& image, const Shape4& target) {
  if (target.channels != 3) throw ShapeError("image input must have 3 channels, got " + std::to_string(target.channels));
  TensorF t = resize_bilinear(to_tensor(image), target.height, target.width);
  t.values() = t.values().array() / 127.5f - 1.0f;
  return t;
}

TensorF load_image(const std::filesystem::path& path, const Shape4& target) {
  return preprocess(read_image(path), target);
}

}  // namespace fruitnet
