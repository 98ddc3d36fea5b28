#include "fruitnet/gradcam.hpp"

#include <algorithm>
#include <cmath>

#include "fruitnet/ntw.hpp"

namespace fruitnet {

std::size_t last_conv_layer(const ModelGraph& model) {
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    if (is_conv_family(model.layers[i].kind)) return i;
  }
  throw ConfigError("Grad-CAM needs a model with at least one convolution layer");
}

std::array<std::uint8_t, 3> jet(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  auto ramp = [v](double center) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0) * 255.0));
  };
  return {ramp(3.0), ramp(2.0), ramp(1.0)};
}

Image render_heatmap(const CamResultF& cam, const Image& base) {
  const Index h = base.height, w = base.width;
  if (cam.resized.rank() != 2 || cam.resized.dim(0) != h || cam.resized.dim(1) != w) {
    throw ShapeError("base image is " + std::to_string(h) + "x" + std::to_string(w) + " but the map is " +
                     shape_string(cam.resized.shape()));
  }
  Image out(h, 3 * w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const std::uint8_t* src = base.pixel(y, x);
      const auto color = jet(cam.resized.at({y, x}));
      std::uint8_t* left = out.pixel(y, x);
      std::uint8_t* mid = out.pixel(y, w + x);
      std::uint8_t* right = out.pixel(y, 2 * w + x);
      for (int k = 0; k < 3; ++k) {
        left[k] = src[k];
        mid[k] = color[static_cast<std::size_t>(k)];
        right[k] = static_cast<std::uint8_t>(
            std::lround((1.0 - kHeatmapBlend) * src[k] + kHeatmapBlend * color[static_cast<std::size_t>(k)]));
      }
    }
  }
  return out;
}

void render_heatmap(const CamResultF& cam, const Image& base, const std::filesystem::path& path) {
  write_png(render_heatmap(cam, base), path);
}

void write_raw_cam(const CamResultF& cam, const std::filesystem::path& path) {
  WeightStore store;
  store.set("gradcam/raw", cam.raw);
  write_ntw(store, path);
}

}  // namespace fruitnet
