#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/image.hpp"
#include "stealthbench/imageio/imageio.hpp"
#include "stealthbench/resample.hpp"
#include "stealthbench/rng.hpp"

namespace stealthbench::operators {

inline constexpr int kOperatorCount = 10;

struct OperatorSpec {
  int id = 1;  // 1..10 for A01..A10
  double parameter = 0.0;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const OperatorSpec&, const OperatorSpec&) = default;
};

inline const std::vector<double>& parameter_set(int id) {
  static const std::array<std::vector<double>, kOperatorCount> sets = {{
      {74, 76, 78, 80, 82, 84, 86, 88},
      {420, 422},
      {5, 6, 7},
      {0.35, 0.5, 0.7, 0.9, 1.1, 1.35},
      {45, 60, 75, 90},
      {7, 8, 9, 10, 11, 12},
      {8, 12, 16, 20, 24, 28, 32},
      {-4, -3, -2, -1, 1, 2, 3, 4},
      {336, 384, 448},
      {-6, -4, -2, 2, 4, 6},
  }};
  if (id < 1 || id > kOperatorCount) {
    throw Error(Errc::kInvalidParameter, "operator id out of range: " + std::to_string(id));
  }
  return sets[id - 1];
}

inline std::string operator_code(int id) {
  return (id < 10 ? "A0" : "A") + std::to_string(id);
}

inline std::string_view operator_label(int id) {
  static constexpr std::array<std::string_view, kOperatorCount> names = {
      "jpeg", "chroma_subsampling", "quantization", "gaussian_blur", "bilateral",
      "nlm", "crop_resize", "rotate_crop", "scaling", "hue_shift"};
  return names.at(id - 1);
}

inline int parse_operator_code(std::string_view code) {
  for (int id = 1; id <= kOperatorCount; ++id) {
    if (code == operator_code(id) || code == operator_label(id)) return id;
  }
  throw Error(Errc::kInvalidParameter, "unknown operator " + std::string(code));
}

inline bool parameter_allowed(int id, double p) {
  for (double v : parameter_set(id)) {
    if (v == p) return true;
  }
  return false;
}

// Parameter drawn uniformly from the operator's set.
inline OperatorSpec sample_parameter(int id, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6f70));
  const auto& set = parameter_set(id);
  return {id, set[rng.uniform_index(set.size())], seed};
}

inline OperatorSpec sample_operator(std::uint64_t seed) {
  Rng rng(seed);
  const int id = 1 + static_cast<int>(rng.uniform_index(kOperatorCount));
  return sample_parameter(id, seed);
}

inline nlohmann::json to_json(const OperatorSpec& s) {
  return {{"id", operator_code(s.id)}, {"parameter", s.parameter}, {"seed", s.rng_seed}};
}

inline OperatorSpec spec_from_json(const nlohmann::json& j) {
  OperatorSpec s;
  s.id = parse_operator_code(j.at("id").get<std::string>());
  s.parameter = j.at("parameter").get<double>();
  s.rng_seed = j.at("seed").get<std::uint64_t>();
  return s;
}

namespace detail {

inline void rgb_to_ycbcr(float r, float g, float b, float& y, float& cb, float& cr) {
  y = 0.299f * r + 0.587f * g + 0.114f * b;
  cb = -0.168736f * r - 0.331264f * g + 0.5f * b + 128.0f;
  cr = 0.5f * r - 0.418688f * g - 0.081312f * b + 128.0f;
}

inline void ycbcr_to_rgb(float y, float cb, float cr, float& r, float& g, float& b) {
  r = y + 1.402f * (cr - 128.0f);
  g = y - 0.344136f * (cb - 128.0f) - 0.714136f * (cr - 128.0f);
  b = y + 1.772f * (cb - 128.0f);
}

inline ImageBuffer chroma_subsample(const ImageBuffer& img, int mode) {
  const int w = img.width();
  const int h = img.height();
  const int fy = mode == 420 ? 2 : 1;
  constexpr int fx = 2;
  FloatImage ycc(img);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float Y, cb, cr;
      rgb_to_ycbcr(ycc.at(x, y, 0), ycc.at(x, y, 1), ycc.at(x, y, 2), Y, cb, cr);
      ycc.at(x, y, 0) = Y;
      ycc.at(x, y, 1) = cb;
      ycc.at(x, y, 2) = cr;
    }
  }
  const int cw = (w + fx - 1) / fx;
  const int ch = (h + fy - 1) / fy;
  FloatImage small(cw, ch);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      for (int c = 1; c < 3; ++c) {
        float acc = 0.0f;
        int n = 0;
        for (int dy = 0; dy < fy; ++dy) {
          for (int dx = 0; dx < fx; ++dx) {
            const int sx = x * fx + dx;
            const int sy = y * fy + dy;
            if (sx < w && sy < h) {
              acc += ycc.at(sx, sy, c);
              ++n;
            }
          }
        }
        small.at(x, y, c) = acc / n;
      }
    }
  }
  const FloatImage up = resize_bilinear(small, w, h);
  ImageBuffer out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float r, g, b;
      ycbcr_to_rgb(ycc.at(x, y, 0), up.at(x, y, 1), up.at(x, y, 2), r, g, b);
      out.at(x, y, 0) = clamp_u8(r);
      out.at(x, y, 1) = clamp_u8(g);
      out.at(x, y, 2) = clamp_u8(b);
    }
  }
  return out;
}

// Reconstruction on the grid {0, step, 2 step, ...}: each value goes to the
// nearest level, ties up, and the top level is 256 - step. Values already on
// the grid are unchanged.
inline ImageBuffer quantize(const ImageBuffer& img, int bits) {
  const int step = 1 << (8 - bits);
  ImageBuffer out = img;
  for (auto& v : out.data()) {
    int q = ((v + step / 2) / step) * step;
    if (q > 256 - step) q = 256 - step;
    v = static_cast<std::uint8_t>(q);
  }
  return out;
}

inline ImageBuffer bilateral(const ImageBuffer& img, double sigma_color) {
  constexpr int kRadius = 3;
  constexpr double kSigmaSpace = 3.0;
  const int w = img.width();
  const int h = img.height();
  double spatial[2 * kRadius + 1][2 * kRadius + 1];
  for (int dy = -kRadius; dy <= kRadius; ++dy)
    for (int dx = -kRadius; dx <= kRadius; ++dx)
      spatial[dy + kRadius][dx + kRadius] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigmaSpace * kSigmaSpace));
  // Colour weight indexed by squared Euclidean RGB distance.
  constexpr int kMaxD2 = 3 * 255 * 255;
  std::vector<float> color(kMaxD2 + 1);
  for (int d = 0; d <= kMaxD2; ++d) color[d] = static_cast<float>(std::exp(-d / (2.0 * sigma_color * sigma_color)));
  ImageBuffer out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int r0 = img.at(x, y, 0), g0 = img.at(x, y, 1), b0 = img.at(x, y, 2);
      double acc[3] = {0, 0, 0};
      double norm = 0.0;
      for (int dy = -kRadius; dy <= kRadius; ++dy) {
        const int sy = reflect101(y + dy, h);
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
          const int sx = reflect101(x + dx, w);
          const int r = img.at(sx, sy, 0), g = img.at(sx, sy, 1), b = img.at(sx, sy, 2);
          const int d2 = (r - r0) * (r - r0) + (g - g0) * (g - g0) + (b - b0) * (b - b0);
          const double wgt = spatial[dy + kRadius][dx + kRadius] * color[d2];
          acc[0] += wgt * r;
          acc[1] += wgt * g;
          acc[2] += wgt * b;
          norm += wgt;
        }
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = clamp_u8(acc[c] / norm);
    }
  }
  return out;
}

// Non-local means: weight exp(-d2 / h^2), d2 = mean squared difference over
// the 7x7x3 patch. Patch distances come from per-offset box sums.
inline ImageBuffer nlm(const ImageBuffer& img, double h_param) {
  constexpr int kPatch = 3;
  constexpr int kSearch = 10;
  constexpr int kPad = kPatch + kSearch;
  const int w = img.width();
  const int h = img.height();
  const int pw = w + 2 * kPad;
  const int ph = h + 2 * kPad;
  std::vector<std::int32_t> pad(static_cast<std::size_t>(pw) * ph * 3);
  for (int y = 0; y < ph; ++y) {
    const int sy = reflect101(y - kPad, h);
    for (int x = 0; x < pw; ++x) {
      const int sx = reflect101(x - kPad, w);
      for (int c = 0; c < 3; ++c) pad[(static_cast<std::size_t>(y) * pw + x) * 3 + c] = img.at(sx, sy, c);
    }
  }
  constexpr int kPatchSamples = (2 * kPatch + 1) * (2 * kPatch + 1) * 3;
  const double inv = 1.0 / (kPatchSamples * h_param * h_param);
  // Weights below exp(-30) are treated as zero.
  const auto cutoff = static_cast<std::int64_t>(30.0 / inv);
  std::vector<float> table(static_cast<std::size_t>(cutoff) + 1);
  for (std::int64_t s = 0; s <= cutoff; ++s) table[s] = static_cast<float>(std::exp(-static_cast<double>(s) * inv));

  std::vector<double> num(static_cast<std::size_t>(w) * h * 3, 0.0);
  std::vector<double> den(static_cast<std::size_t>(w) * h, 0.0);
  auto px_at = [&](int x, int y) { return &pad[(static_cast<std::size_t>(y + kPad) * pw + x + kPad) * 3]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const std::int32_t* q = px_at(x, y);
      for (int c = 0; c < 3; ++c) num[i * 3 + c] += q[c];
      den[i] += 1.0;
    }
  }
  // Distances are symmetric, d(p, p+o) = d(p+o, p), so each offset pair is
  // handled once over base pixels p where either p or p+o is in the image.
  std::vector<std::int32_t> diff;
  std::vector<std::int64_t> colsum;
  for (int oy = 0; oy <= kSearch; ++oy) {
    for (int ox = -kSearch; ox <= kSearch; ++ox) {
      if (oy == 0 && ox <= 0) continue;
      const int x0 = std::min(0, -ox), x1 = std::max(w, w - ox);
      const int y0 = -oy, y1 = h;
      const int rw = x1 - x0, rh = y1 - y0;
      const int dw = rw + 2 * kPatch;
      const int dh = rh + 2 * kPatch;
      diff.resize(static_cast<std::size_t>(dw) * dh);
      colsum.resize(static_cast<std::size_t>(dw) * rh);
      for (int y = 0; y < dh; ++y) {
        for (int x = 0; x < dw; ++x) {
          const std::int32_t* a = px_at(x + x0 - kPatch, y + y0 - kPatch);
          const std::int32_t* b = px_at(x + x0 - kPatch + ox, y + y0 - kPatch + oy);
          const int d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
          diff[static_cast<std::size_t>(y) * dw + x] = d0 * d0 + d1 * d1 + d2 * d2;
        }
      }
      for (int x = 0; x < dw; ++x) {
        std::int64_t s = 0;
        for (int y = 0; y < 2 * kPatch + 1; ++y) s += diff[static_cast<std::size_t>(y) * dw + x];
        colsum[x] = s;
        for (int y = 1; y < rh; ++y) {
          s += diff[static_cast<std::size_t>(y + 2 * kPatch) * dw + x] - diff[static_cast<std::size_t>(y - 1) * dw + x];
          colsum[static_cast<std::size_t>(y) * dw + x] = s;
        }
      }
      for (int ry = 0; ry < rh; ++ry) {
        const std::int64_t* row = &colsum[static_cast<std::size_t>(ry) * dw];
        const int y = ry + y0;
        const bool base_row = y >= 0;
        const bool pair_row = y + oy < h;
        std::int64_t s = 0;
        for (int x = 0; x < 2 * kPatch + 1; ++x) s += row[x];
        for (int rx = 0; rx < rw; ++rx) {
          if (rx > 0) s += row[rx + 2 * kPatch] - row[rx - 1];
          if (s > cutoff) continue;
          const double wgt = table[s];
          const int x = rx + x0;
          if (base_row && x >= 0 && x < w) {
            const std::int32_t* q = px_at(x + ox, y + oy);
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            num[i * 3] += wgt * q[0];
            num[i * 3 + 1] += wgt * q[1];
            num[i * 3 + 2] += wgt * q[2];
            den[i] += wgt;
          }
          if (pair_row && x + ox >= 0 && x + ox < w) {
            const std::int32_t* q = px_at(x, y);
            const std::size_t i = static_cast<std::size_t>(y + oy) * w + x + ox;
            num[i * 3] += wgt * q[0];
            num[i * 3 + 1] += wgt * q[1];
            num[i * 3 + 2] += wgt * q[2];
            den[i] += wgt;
          }
        }
      }
    }
  }
  ImageBuffer out(w, h);
  auto dst = out.data();
  for (std::size_t i = 0; i < den.size(); ++i)
    for (int c = 0; c < 3; ++c) dst[i * 3 + c] = clamp_u8(num[i * 3 + c] / den[i]);
  return out;
}

inline ImageBuffer crop_resize(const ImageBuffer& img, int p) {
  if (p == 0) return img;
  const FloatImage f(img);
  const FloatImage c = crop(f, p, p, img.width() - 2 * p, img.height() - 2 * p);
  return resize_bilinear(c, img.width(), img.height()).to_u8();
}

// Largest axis-aligned rectangle inside a w x h rectangle rotated by angle.
inline std::pair<double, double> max_inscribed_rect(double w, double h, double angle_rad) {
  const bool width_longer = w >= h;
  const double side_long = width_longer ? w : h;
  const double side_short = width_longer ? h : w;
  const double sa = std::abs(std::sin(angle_rad));
  const double ca = std::abs(std::cos(angle_rad));
  if (side_short <= 2.0 * sa * ca * side_long || std::abs(sa - ca) < 1e-10) {
    const double x = 0.5 * side_short;
    return width_longer ? std::pair{x / sa, x / ca} : std::pair{x / ca, x / sa};
  }
  const double cos2a = ca * ca - sa * sa;
  return {(w * ca - h * sa) / cos2a, (h * ca - w * sa) / cos2a};
}

inline ImageBuffer rotate_crop(const ImageBuffer& img, double degrees) {
  const int w = img.width();
  const int h = img.height();
  const double a = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(a);
  const double sn = std::sin(a);
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const FloatImage src(img);
  FloatImage rot(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = cs * dx - sn * dy + cx;
      const double sy = sn * dx + cs * dy + cy;
      for (int c = 0; c < 3; ++c) rot.at(x, y, c) = sample_bilinear(src, sx, sy, c);
    }
  }
  // Rotation output is quantised before the crop stage.
  const FloatImage rot8(rot.to_u8());
  const auto [rw, rh] = max_inscribed_rect(w, h, a);
  // Whole-pixel crop extent, centred exactly (the origin may be a half pixel).
  const double cw = std::floor(rw);
  const double ch = std::floor(rh);
  return crop_resize_bilinear(rot8, (w - cw) / 2, (h - ch) / 2, cw, ch, w, h).to_u8();
}

inline ImageBuffer scale_down_up(const ImageBuffer& img, int size) {
  const ImageBuffer small = resize_bilinear(img, size, size);
  return resize_lanczos3(small, img.width(), img.height());
}

// 8-bit HSV with hue in [0,180), mirroring the common integer conversion.
inline void rgb_to_hsv8(int r, int g, int b, int& h, int& s, int& v) {
  constexpr int kShift = 12;
  v = std::max({r, g, b});
  const int vmin = std::min({r, g, b});
  const int diff = v - vmin;
  s = v == 0 ? 0 : static_cast<int>((diff * std::lround((255 << kShift) / static_cast<double>(v)) + (1 << (kShift - 1))) >> kShift);
  if (diff == 0) {
    h = 0;
    return;
  }
  int hh;
  if (v == r) {
    hh = g - b;
  } else if (v == g) {
    hh = b - r + 2 * diff;
  } else {
    hh = r - g + 4 * diff;
  }
  const long hdiv = std::lround((180 << kShift) / (6.0 * diff));
  h = static_cast<int>((hh * hdiv + (1 << (kShift - 1))) >> kShift);
  if (h < 0) h += 180;
  if (h >= 180) h -= 180;
}

inline void hsv8_to_rgb(int h8, int s8, int v8, std::uint8_t out[3]) {
  const double s = s8 / 255.0;
  const double v = v8 / 255.0;
  double r, g, b;
  if (s8 == 0) {
    r = g = b = v;
  } else {
    double hh = h8 * (6.0 / 180.0);
    if (hh < 0) hh += 6;
    if (hh >= 6) hh -= 6;
    const int sector = static_cast<int>(std::floor(hh));
    const double f = hh - sector;
    const double tab[4] = {v, v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))};
    static constexpr int kSector[6][3] = {{1, 3, 0}, {1, 0, 2}, {3, 0, 1}, {0, 2, 1}, {0, 1, 3}, {2, 1, 0}};
    b = tab[kSector[sector][0]];
    g = tab[kSector[sector][1]];
    r = tab[kSector[sector][2]];
  }
  out[0] = clamp_u8(r * 255.0);
  out[1] = clamp_u8(g * 255.0);
  out[2] = clamp_u8(b * 255.0);
}

inline ImageBuffer hue_shift(const ImageBuffer& img, int shift) {
  ImageBuffer out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      int h, s, v;
      rgb_to_hsv8(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2), h, s, v);
      h = ((h + shift) % 180 + 180) % 180;
      std::uint8_t rgb[3];
      hsv8_to_rgb(h, s, v, rgb);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
    }
  }
  return out;
}

}  // namespace detail

// No validation of the parameter against the sampling set; tests use this for
// boundary parameters such as a zero crop.
inline ImageBuffer apply_unchecked(const ImageBuffer& img, const OperatorSpec& spec) {
  const double p = spec.parameter;
  switch (spec.id) {
    case 1: return imageio::decode_jpeg(imageio::encode_jpeg(img, static_cast<int>(p), imageio::ChromaSubsampling::k420));
    case 2: return detail::chroma_subsample(img, static_cast<int>(p));
    case 3: return detail::quantize(img, static_cast<int>(p));
    case 4: return gaussian_blur(img, p);
    case 5: return detail::bilateral(img, p);
    case 6: return detail::nlm(img, p);
    case 7: return detail::crop_resize(img, static_cast<int>(p));
    case 8: return detail::rotate_crop(img, p);
    case 9: return detail::scale_down_up(img, static_cast<int>(p));
    case 10: return detail::hue_shift(img, static_cast<int>(p));
    default: throw Error(Errc::kInvalidParameter, "operator id out of range");
  }
}

inline ImageBuffer apply(const ImageBuffer& img, const OperatorSpec& spec) {
  require_standard(img, "operator input");
  if (!parameter_allowed(spec.id, spec.parameter)) {
    throw Error(Errc::kInvalidParameter, operator_code(spec.id) + " does not allow parameter " +
                                             std::to_string(spec.parameter));
  }
  return apply_unchecked(img, spec);
}

enum class ChannelProbe { kBmp, kCanonicalPng, kGrayscale, kDownUp, kSocialMedia };

inline constexpr std::array<ChannelProbe, 5> kAllProbes = {ChannelProbe::kBmp, ChannelProbe::kCanonicalPng,
                                                           ChannelProbe::kGrayscale, ChannelProbe::kDownUp,
                                                           ChannelProbe::kSocialMedia};

inline std::string_view probe_name(ChannelProbe p) {
  switch (p) {
    case ChannelProbe::kBmp: return "bmp";
    case ChannelProbe::kCanonicalPng: return "canonical_png";
    case ChannelProbe::kGrayscale: return "grayscale";
    case ChannelProbe::kDownUp: return "down_up";
    case ChannelProbe::kSocialMedia: return "social_media";
  }
  return "?";
}

inline ImageBuffer to_grayscale(const ImageBuffer& img) {
  ImageBuffer out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double l = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      const std::uint8_t v = clamp_u8(l);
      out.at(x, y, 0) = out.at(x, y, 1) = out.at(x, y, 2) = v;
    }
  }
  return out;
}

inline ImageBuffer apply_probe(const ImageBuffer& img, ChannelProbe probe) {
  require_standard(img, "probe input");
  switch (probe) {
    case ChannelProbe::kBmp:
    case ChannelProbe::kCanonicalPng:
      return img;
    case ChannelProbe::kGrayscale:
      return to_grayscale(img);
    case ChannelProbe::kDownUp:
      return resize_lanczos3(resize_bilinear(img, 256, 256), kStandardSize, kStandardSize);
    case ChannelProbe::kSocialMedia: {
      const ImageBuffer q75 = imageio::decode_jpeg(imageio::encode_jpeg(img, 75));
      const ImageBuffer small = resize_bilinear(q75, 410, 410);
      const ImageBuffer q85 = imageio::decode_jpeg(imageio::encode_jpeg(small, 85));
      return resize_bilinear(q85, kStandardSize, kStandardSize);
    }
  }
  return img;
}

struct DistortionStats {
  double psnr = 0.0;
  double mean_abs_diff = 0.0;
  double changed_fraction = 0.0;
};

inline DistortionStats distortion_stats(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_geometry(a, b, "distortion_stats");
  const auto da = a.data();
  const auto db = b.data();
  double se = 0.0;
  double ae = 0.0;
  std::size_t changed = 0;
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    bool diff = false;
    for (int c = 0; c < 3; ++c) {
      const int d = int(da[p * 3 + c]) - int(db[p * 3 + c]);
      se += static_cast<double>(d) * d;
      ae += std::abs(d);
      diff |= d != 0;
    }
    changed += diff;
  }
  const double n = static_cast<double>(a.size());
  DistortionStats s;
  const double mse = se / n;
  s.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(255.0 * 255.0 / mse);
  s.mean_abs_diff = ae / n;
  s.changed_fraction = static_cast<double>(changed) / static_cast<double>(a.pixel_count());
  return s;
}

inline double psnr(const ImageBuffer& a, const ImageBuffer& b) { return distortion_stats(a, b).psnr; }

}  // namespace stealthbench::operators
