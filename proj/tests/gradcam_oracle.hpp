#pragma once

#include "fruitnet/gradcam.hpp"
#include "test_util.hpp"

namespace fruitnet::testing {

// conv 3x3 (5 filters) -> GAP -> dense 3 -> softmax on 7 x 6 x 2 inputs.
inline ModelGraph gradcam_toy(std::uint64_t seed = 1) {
  ModelGraph m = std::move(SequentialBuilder(Shape4{7, 6, 2}, seed)
                               .conv("conv", 5, 3, 1)
                               .global_avg_pool("gap")
                               .dense("logits", 3)
                               .softmax("softmax"))
                     .build();
  Rng rng = make_rng(seed, 99);
  m.params.at("logits/kernel") = random_tensor<float>({5, 3}, rng);
  m.params.at("logits/bias") = random_tensor<float>({3}, rng);
  return m;
}

struct HandCam {
  TensorD alpha;
  TensorD raw;
};

// Independent derivation: with GAP between conv and dense, d score_k / d A_ijc
// is W[c, k] / (h w) at every position, so alpha_c = W[c, k] / (h w).
inline HandCam hand_cam(const ModelGraph& m, const TensorD& image, Index k) {
  const TensorD a = naive_conv2d(image, m.params.at("conv/kernel").cast<double>(), 1, true);
  const TensorD w = m.params.at("logits/kernel").cast<double>();
  const Index h = a.dim(0), wd = a.dim(1), c = a.dim(2);
  HandCam out{TensorD({c}), TensorD({h, wd})};
  for (Index ch = 0; ch < c; ++ch) out.alpha[ch] = w.at({ch, k}) / static_cast<double>(h * wd);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < wd; ++x) {
      double s = 0;
      for (Index ch = 0; ch < c; ++ch) s += out.alpha[ch] * a.at({y, x, ch});
      out.raw.at({y, x}) = std::max(s, 0.0);
    }
  return out;
}

}  // namespace fruitnet::testing
