#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "stealthbench/image.hpp"

namespace stealthbench {

// Interleaved 3-channel float raster used between resampling stages.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0f) {}
  explicit FloatImage(const ImageBuffer& img) : width(img.width()), height(img.height()), data(img.size()) {
    const auto src = img.data();
    for (std::size_t i = 0; i < src.size(); ++i) data[i] = src[i];
  }

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  ImageBuffer to_u8() const {
    ImageBuffer out(width, height);
    auto dst = out.data();
    for (std::size_t i = 0; i < data.size(); ++i) dst[i] = clamp_u8(data[i]);
    return out;
  }
};

namespace resample_detail {

struct Taps {
  int first = 0;
  std::vector<float> weights;
};

// Bilinear with pixel-centre alignment and edge clamping, no antialiasing
// (the usual INTER_LINEAR convention).
// The window [origin, origin + span) of the source is mapped onto dst pixels.
inline std::vector<Taps> bilinear_taps(int src, int dst, double origin, double span) {
  std::vector<Taps> taps(dst);
  const double scale = span / dst;
  for (int i = 0; i < dst; ++i) {
    double s = origin + (i + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    if (s > src - 1) s = src - 1;
    const int s0 = static_cast<int>(std::floor(s));
    const double t = s - s0;
    if (s0 + 1 < src && t > 0) {
      taps[i].first = s0;
      taps[i].weights = {static_cast<float>(1.0 - t), static_cast<float>(t)};
    } else {
      taps[i].first = s0;
      taps[i].weights = {1.0f};
    }
  }
  return taps;
}

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  x *= std::numbers::pi;
  return std::sin(x) / x;
}

inline double lanczos3(double x) {
  if (x <= -3.0 || x >= 3.0) return 0.0;
  return sinc(x) * sinc(x / 3.0);
}

// Lanczos-3 with support widened on downscale; taps that fall outside the
// source are dropped and the rest renormalised.
inline std::vector<Taps> lanczos_taps(int src, int dst) {
  std::vector<Taps> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  const double fscale = scale > 1.0 ? scale : 1.0;
  const double support = 3.0 * fscale;
  for (int i = 0; i < dst; ++i) {
    const double centre = (i + 0.5) * scale;
    int lo = static_cast<int>(std::floor(centre - support));
    int hi = static_cast<int>(std::ceil(centre + support));
    if (lo < 0) lo = 0;
    if (hi > src) hi = src;
    double total = 0.0;
    std::vector<double> w;
    for (int j = lo; j < hi; ++j) {
      const double v = lanczos3((j + 0.5 - centre) / fscale);
      w.push_back(v);
      total += v;
    }
    taps[i].first = lo;
    taps[i].weights.resize(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) taps[i].weights[k] = static_cast<float>(w[k] / total);
  }
  return taps;
}

inline FloatImage apply_separable(const FloatImage& in, int out_w, int out_h, const std::vector<Taps>& tx,
                                  const std::vector<Taps>& ty) {
  FloatImage mid(out_w, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Taps& t = tx[x];
      float acc[3] = {0, 0, 0};
      for (std::size_t k = 0; k < t.weights.size(); ++k) {
        const float w = t.weights[k];
        const int sx = t.first + static_cast<int>(k);
        for (int c = 0; c < 3; ++c) acc[c] += w * in.at(sx, y, c);
      }
      for (int c = 0; c < 3; ++c) mid.at(x, y, c) = acc[c];
    }
  }
  FloatImage out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const Taps& t = ty[y];
    for (int x = 0; x < out_w; ++x) {
      float acc[3] = {0, 0, 0};
      for (std::size_t k = 0; k < t.weights.size(); ++k) {
        const float w = t.weights[k];
        const int sy = t.first + static_cast<int>(k);
        for (int c = 0; c < 3; ++c) acc[c] += w * mid.at(x, sy, c);
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = acc[c];
    }
  }
  return out;
}

}  // namespace resample_detail

inline FloatImage resize_bilinear(const FloatImage& in, int w, int h) {
  using namespace resample_detail;
  return apply_separable(in, w, h, bilinear_taps(in.width, w, 0, in.width), bilinear_taps(in.height, h, 0, in.height));
}

// Bilinear resize of the sub-window starting at (x0, y0) with extent cw x ch;
// fractional origins keep centred crops exactly centred.
inline FloatImage crop_resize_bilinear(const FloatImage& in, double x0, double y0, double cw, double ch, int w,
                                       int h) {
  using namespace resample_detail;
  return apply_separable(in, w, h, bilinear_taps(in.width, w, x0, cw), bilinear_taps(in.height, h, y0, ch));
}
inline ImageBuffer resize_bilinear(const ImageBuffer& in, int w, int h) {
  return resize_bilinear(FloatImage(in), w, h).to_u8();
}

inline FloatImage resize_lanczos3(const FloatImage& in, int w, int h) {
  using namespace resample_detail;
  return apply_separable(in, w, h, lanczos_taps(in.width, w), lanczos_taps(in.height, h));
}
inline ImageBuffer resize_lanczos3(const ImageBuffer& in, int w, int h) {
  return resize_lanczos3(FloatImage(in), w, h).to_u8();
}

// Sampled, normalised Gaussian with radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable Gaussian blur with reflect-101 borders.
inline ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int w = img.width();
  const int h = img.height();
  std::vector<double> mid(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc[3] = {0, 0, 0};
      for (int i = -r; i <= r; ++i) {
        const int sx = reflect101(x + i, w);
        for (int c = 0; c < 3; ++c) acc[c] += k[i + r] * img.at(sx, y, c);
      }
      for (int c = 0; c < 3; ++c) mid[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc[c];
    }
  }
  ImageBuffer out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc[3] = {0, 0, 0};
      for (int i = -r; i <= r; ++i) {
        const int sy = reflect101(y + i, h);
        for (int c = 0; c < 3; ++c) acc[c] += k[i + r] * mid[(static_cast<std::size_t>(sy) * w + x) * 3 + c];
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = clamp_u8(acc[c]);
    }
  }
  return out;
}

// Bilinear sample with border replication; used by rotation.
inline float sample_bilinear(const FloatImage& img, double x, double y, int c) {
  if (x < 0) x = 0;
  if (y < 0) y = 0;
  if (x > img.width - 1) x = img.width - 1;
  if (y > img.height - 1) y = img.height - 1;
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = x0 + 1 < img.width ? x0 + 1 : x0;
  const int y1 = y0 + 1 < img.height ? y0 + 1 : y0;
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
  const double bot = img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

inline FloatImage crop(const FloatImage& img, int x0, int y0, int w, int h) {
  FloatImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

}  // namespace stealthbench
