#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "fruitnet/random.hpp"
#include "fruitnet/tensor.hpp"

namespace fruitnet::testing {

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) : path_(std::filesystem::temp_directory_path() / ("fruitnet_" + tag)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename Scalar = float>
Tensor<Scalar> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(uniform(rng, lo, hi));
  return t;
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0;
  for (Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

/// Largest |a - b| / max(|a|, |b|, floor).
template <typename Scalar>
double max_rel_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b, double floor = 1e-6) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = a[i];
    const double y = b[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

// Naive references. Padding follows the TensorFlow "same" rule:
// out = ceil(in / s), pad_before = floor(total / 2).
inline Index same_out(Index in, Index s) { return (in + s - 1) / s; }
inline Index same_pad(Index in, Index k, Index s) {
  return std::max<Index>((same_out(in, s) - 1) * s + k - in, 0) / 2;
}

/// H x W x C input, kh x kw x C x F kernel, six nested loops.
inline TensorD naive_conv2d(const TensorD& x, const TensorD& k, Index stride, bool same) {
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const Index kh = k.dim(0), kw = k.dim(1), f = k.dim(3);
  const Index oh = same ? same_out(h, stride) : (h - kh) / stride + 1;
  const Index ow = same ? same_out(w, stride) : (w - kw) / stride + 1;
  const Index pt = same ? same_pad(h, kh, stride) : 0;
  const Index pl = same ? same_pad(w, kw, stride) : 0;
  TensorD y({oh, ow, f});
  for (Index oy = 0; oy < oh; ++oy)
    for (Index ox = 0; ox < ow; ++ox)
      for (Index o = 0; o < f; ++o) {
        double acc = 0;
        for (Index ky = 0; ky < kh; ++ky)
          for (Index kx = 0; kx < kw; ++kx)
            for (Index ci = 0; ci < c; ++ci) {
              const Index iy = oy * stride + ky - pt;
              const Index ix = ox * stride + kx - pl;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x.at({iy, ix, ci}) * k.at({ky, kx, ci, o});
            }
        y.at({oy, ox, o}) = acc;
      }
  return y;
}

/// Runs each channel separately through naive_conv2d with a 1-channel kernel.
inline TensorD naive_depthwise(const TensorD& x, const TensorD& k, Index stride) {
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const Index kh = k.dim(0), kw = k.dim(1);
  TensorD y({same_out(h, stride), same_out(w, stride), c});
  for (Index ch = 0; ch < c; ++ch) {
    TensorD plane({h, w, 1});
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) plane.at({i, j, 0}) = x.at({i, j, ch});
    TensorD kk({kh, kw, 1, 1});
    for (Index i = 0; i < kh; ++i)
      for (Index j = 0; j < kw; ++j) kk.at({i, j, 0, 0}) = k.at({i, j, ch});
    const TensorD out = naive_conv2d(plane, kk, stride, true);
    for (Index i = 0; i < y.dim(0); ++i)
      for (Index j = 0; j < y.dim(1); ++j) y.at({i, j, ch}) = out.at({i, j, 0});
  }
  return y;
}

inline TensorD naive_matmul(const TensorD& a, const TensorD& b) {
  TensorD out({a.dim(0), b.dim(1)});
  for (Index i = 0; i < a.dim(0); ++i)
    for (Index j = 0; j < b.dim(1); ++j) {
      double acc = 0;
      for (Index k = 0; k < a.dim(1); ++k) acc += a.at({i, k}) * b.at({k, j});
      out.at({i, j}) = acc;
    }
  return out;
}

// Textbook Adam on flat vectors, kept independent of adam_step.
struct ReferenceAdam {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& theta, const std::vector<double>& g, double lr) {
    if (m.empty()) m.assign(theta.size(), 0), v.assign(theta.size(), 0);
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(0.9, t));
      const double vhat = v[i] / (1 - std::pow(0.999, t));
      theta[i] -= lr * mhat / (std::sqrt(vhat) + 1e-7);
    }
  }
};

}  // namespace fruitnet::testing
