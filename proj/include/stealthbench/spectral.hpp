#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/fft.hpp"
#include "stealthbench/image.hpp"
#include "stealthbench/parallel.hpp"
#include "stealthbench/rng.hpp"

namespace stealthbench::spectral {

// Mean windowed power spectrum, DC-centred: cell (x, y) holds frequency
// (x - W/2, y - H/2) in pixel-frequency units.
struct Psd2D {
  RealField values;
  std::size_t n_samples = 0;
};

struct SpectralProfile {
  std::vector<double> bins;  // mean PSD per integer radius, 0..N/2

  std::size_t size() const { return bins.size(); }
  // Bin k sits at k / N cycles per pixel; the last bin is Nyquist.
  double frequency(std::size_t k) const { return static_cast<double>(k) / (2.0 * (bins.size() - 1)); }
};

struct LogRatioProfile {
  std::vector<double> values;  // log10(attack / control); 0 where masked
  std::vector<bool> valid;
  std::vector<double> zero_crossings;  // cycles per pixel
  std::size_t masked = 0;

  double frequency(std::size_t k) const { return static_cast<double>(k) / (2.0 * (values.size() - 1)); }
};

struct DeviationMap {
  RealField values;  // log10 ratio, 0 where masked
  std::vector<std::uint8_t> valid;
  std::size_t masked = 0;
  double scale = 0.0;  // symmetric colour range [-scale, scale]
};

struct PsdOptions {
  bool window = true;  // tests disable it for the Parseval identity
  int jobs = 1;
};

// Residual of a paired sample: (attacked - clean) in [0,1] units, averaged
// over the three channels.
inline RealField residual(const ImageBuffer& clean, const ImageBuffer& attacked) {
  require_same_geometry(clean, attacked, "residual");
  RealField out(clean.width(), clean.height());
  const auto a = attacked.data();
  const auto c = clean.data();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const int d = (a[i * 3] - c[i * 3]) + (a[i * 3 + 1] - c[i * 3 + 1]) + (a[i * 3 + 2] - c[i * 3 + 2]);
    dst[i] = d / (3.0 * 255.0);
  }
  return out;
}

// Grayscale intensity of one image in [0,1], same channel average.
inline RealField intensity(const ImageBuffer& img) {
  RealField out(img.width(), img.height());
  const auto s = img.data();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (s[i * 3] + s[i * 3 + 1] + s[i * 3 + 2]) / (3.0 * 255.0);
  return out;
}

// Symmetric Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / (N - 1)).
inline std::vector<double> hann(int n) {
  std::vector<double> w(n, 1.0);
  if (n == 1) return w;
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
  return w;
}

// Squared DFT magnitude of one field, DC-centred, without the (HW)^-2 scale.
inline RealField power_spectrum(const RealField& field, bool window) {
  const int w = field.width();
  const int h = field.height();
  RealField input = field;
  if (window) {
    const auto wx = hann(w);
    const auto wy = hann(h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) input.at(x, y) *= wx[x] * wy[y];
  }
  const auto f = fft::forward_2d(input);
  RealField out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy = (y + h / 2) % h;
    for (int x = 0; x < w; ++x) {
      const int sx = (x + w / 2) % w;
      out.at(sx, sy) = std::norm(f[static_cast<std::size_t>(y) * w + x]);
    }
  }
  return out;
}

// Streamed mean of per-sample spectra. Samples are summed in arrival order,
// so the result does not depend on how the spectra themselves were computed.
class PsdAccumulator {
 public:
  explicit PsdAccumulator(bool window = true) : window_(window) {}

  void add(const RealField& field) { add_spectrum(power_spectrum(field, window_)); }

  void add_spectrum(const RealField& spectrum) {
    if (count_ == 0) {
      sum_ = RealField(spectrum.width(), spectrum.height());
    } else if (!sum_.same_geometry(spectrum)) {
      throw Error(Errc::kGeometryMismatch, "psd: residual geometry changed within a stream");
    }
    auto s = sum_.values();
    const auto v = spectrum.values();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += v[i];
    ++count_;
  }

  std::size_t count() const { return count_; }

  Psd2D result() const {
    if (count_ == 0) throw Error(Errc::kInsufficientImages, "psd: no residuals");
    Psd2D out{sum_, count_};
    const double hw = static_cast<double>(sum_.width()) * sum_.height();
    const double scale = 1.0 / (static_cast<double>(count_) * hw * hw);
    for (auto& v : out.values.values()) v *= scale;
    return out;
  }

 private:
  bool window_;
  RealField sum_;
  std::size_t count_ = 0;
};

// Pulls n fields from make(i) in batches, computing spectra in parallel and
// accumulating them in index order.
template <typename MakeField>
Psd2D psd_stream(std::size_t n, MakeField&& make, const PsdOptions& opt = {}) {
  PsdAccumulator acc(opt.window);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.jobs)) * 4;
  std::vector<RealField> spectra;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    spectra.assign(count, RealField());
    parallel_for(count, opt.jobs, [&](std::size_t i) { spectra[i] = power_spectrum(make(start + i), opt.window); });
    for (const auto& s : spectra) acc.add_spectrum(s);
  }
  return acc.result();
}

inline Psd2D psd(std::span<const RealField> fields, const PsdOptions& opt = {}) {
  return psd_stream(fields.size(), [&](std::size_t i) -> const RealField& { return fields[i]; }, opt);
}

// Integer radius of every DC-centred cell, rounded half up and clamped to N/2;
// the corner cells beyond the inscribed circle fold into the Nyquist bin so
// that the bins partition the grid.
inline std::vector<int> radius_index(int w, int h) {
  const int last = std::min(w, h) / 2;
  std::vector<int> idx(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const double v = y - h / 2;
    for (int x = 0; x < w; ++x) {
      const double u = x - w / 2;
      int r = static_cast<int>(std::floor(std::sqrt(u * u + v * v) + 0.5));
      if (r > last) r = last;
      idx[static_cast<std::size_t>(y) * w + x] = r;
    }
  }
  return idx;
}

inline std::vector<std::size_t> radial_cell_counts(int w, int h) {
  std::vector<std::size_t> counts(std::min(w, h) / 2 + 1, 0);
  for (int r : radius_index(w, h)) ++counts[r];
  return counts;
}

inline SpectralProfile radial_profile(const RealField& p) {
  const auto idx = radius_index(p.width(), p.height());
  const std::size_t nb = std::min(p.width(), p.height()) / 2 + 1;
  // Incremental mean: a ring of equal cells reproduces its value exactly.
  SpectralProfile out;
  out.bins.assign(nb, 0.0);
  std::vector<std::size_t> count(nb, 0);
  const auto v = p.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const int r = idx[i];
    out.bins[r] += (v[i] - out.bins[r]) / static_cast<double>(++count[r]);
  }
  return out;
}

inline SpectralProfile radial_profile(const Psd2D& p) { return radial_profile(p.values); }

// PSD of n_pairs disjoint unpaired differences x_i - x_j drawn from the
// cleans without replacement.
inline Psd2D control_psd(std::span<const ImageBuffer> cleans, std::size_t n_pairs, std::uint64_t seed,
                         const PsdOptions& opt = {}) {
  if (n_pairs == 0 || cleans.size() < 2 * n_pairs) {
    throw Error(Errc::kInsufficientImages, "control needs " + std::to_string(2 * n_pairs) + " clean images, have " +
                                               std::to_string(cleans.size()));
  }
  std::vector<std::size_t> order(cleans.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  return psd_stream(
      n_pairs, [&](std::size_t i) { return residual(cleans[order[2 * i + 1]], cleans[order[2 * i]]); }, opt);
}

inline SpectralProfile control_profile(std::span<const ImageBuffer> cleans, std::size_t n_pairs, std::uint64_t seed,
                                       const PsdOptions& opt = {}) {
  return radial_profile(control_psd(cleans, n_pairs, seed, opt));
}

// Paired-residual PSD of (clean[i], attacked[i]) over the first n pairs.
inline Psd2D residual_psd(std::span<const ImageBuffer> cleans, std::span<const ImageBuffer> attacked,
                          const PsdOptions& opt = {}) {
  if (cleans.size() != attacked.size()) {
    throw Error(Errc::kInvalidParameter, "residual_psd: pair lists differ in length");
  }
  return psd_stream(cleans.size(), [&](std::size_t i) { return residual(cleans[i], attacked[i]); }, opt);
}

namespace detail {

inline double interpolate_crossing(double f0, double v0, double f1, double v1) {
  return f0 + (f1 - f0) * v0 / (v0 - v1);
}

}  // namespace detail

// Sign changes between consecutive valid, non-zero bins. Adjacent pairs are
// interpolated linearly; a run of exact zeros between opposite signs reports
// the middle of the run.
inline std::vector<double> zero_crossings(const LogRatioProfile& lr) {
  std::vector<double> out;
  long prev = -1;
  for (std::size_t k = 0; k < lr.values.size(); ++k) {
    if (!lr.valid[k] || lr.values[k] == 0.0) continue;
    if (prev >= 0 && (lr.values[prev] < 0) != (lr.values[k] < 0)) {
      const auto p = static_cast<std::size_t>(prev);
      if (k == p + 1) {
        out.push_back(detail::interpolate_crossing(lr.frequency(p), lr.values[p], lr.frequency(k), lr.values[k]));
      } else {
        out.push_back(0.5 * (lr.frequency(p + 1) + lr.frequency(k - 1)));
      }
    }
    prev = static_cast<long>(k);
  }
  return out;
}

// Bins whose control is zero are masked; so are bins where the attack side is
// zero, since the ratio has no finite logarithm there.
inline LogRatioProfile log_ratio(const SpectralProfile& attack, const SpectralProfile& control) {
  if (attack.size() != control.size()) {
    throw Error(Errc::kGeometryMismatch, "log_ratio: bin counts differ");
  }
  LogRatioProfile out;
  const std::size_t n = attack.size();
  out.values.assign(n, 0.0);
  out.valid.assign(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    if (control.bins[k] > 0.0 && attack.bins[k] > 0.0) {
      out.values[k] = std::log10(attack.bins[k] / control.bins[k]);
      out.valid[k] = true;
    } else {
      ++out.masked;
    }
  }
  if (out.masked == n) throw Error(Errc::kAllBinsMasked, "log_ratio: no bin has power on both the attack and control side");
  out.zero_crossings = zero_crossings(out);
  return out;
}

inline DeviationMap deviation_map_2d(const Psd2D& attack, const Psd2D& control) {
  if (!attack.values.same_geometry(control.values)) {
    throw Error(Errc::kGeometryMismatch, "deviation_map_2d: PSD geometries differ");
  }
  DeviationMap out;
  out.values = RealField(attack.values.width(), attack.values.height());
  out.valid.assign(out.values.size(), 0);
  const auto a = attack.values.values();
  const auto c = control.values.values();
  auto dst = out.values.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (c[i] > 0.0 && a[i] > 0.0) {
      dst[i] = std::log10(a[i] / c[i]);
      out.valid[i] = 1;
      out.scale = std::max(out.scale, std::abs(dst[i]));
    } else {
      ++out.masked;
    }
  }
  if (out.masked == dst.size()) throw Error(Errc::kAllCellsMasked, "deviation_map_2d: every control cell is zero");
  return out;
}

// Diverging blue-white-red rendering at the map's own symmetric scale; masked
// cells are mid grey.
inline ImageBuffer deviation_heatmap(const DeviationMap& map) {
  const int w = map.values.width();
  const int h = map.values.height();
  ImageBuffer img(w, h);
  const double scale = map.scale > 0 ? map.scale : 1.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!map.valid[i]) {
        img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = 128;
        continue;
      }
      const double t = std::clamp(map.values.at(x, y) / scale, -1.0, 1.0);
      const double fade = 255.0 * (1.0 - std::abs(t));
      if (t >= 0) {
        img.at(x, y, 0) = 255;
        img.at(x, y, 1) = clamp_u8(fade);
        img.at(x, y, 2) = clamp_u8(fade);
      } else {
        img.at(x, y, 0) = clamp_u8(fade);
        img.at(x, y, 1) = clamp_u8(fade);
        img.at(x, y, 2) = 255;
      }
    }
  }
  return img;
}

// Raw little-endian float32 grid, row-major, preceded by no header; geometry
// travels in the accompanying JSON.
inline std::vector<std::uint8_t> raw_float_grid(const RealField& field) {
  std::vector<std::uint8_t> out(field.size() * 4);
  const auto v = field.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = static_cast<float>(v[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

inline std::string profile_csv(const SpectralProfile& p) {
  std::ostringstream os;
  os.precision(17);
  os << "frequency,value\n";
  for (std::size_t k = 0; k < p.size(); ++k) os << p.frequency(k) << ',' << p.bins[k] << '\n';
  return os.str();
}

inline std::string log_ratio_csv(const LogRatioProfile& lr) {
  std::ostringstream os;
  os.precision(17);
  os << "frequency,value\n";
  for (std::size_t k = 0; k < lr.values.size(); ++k) {
    os << lr.frequency(k) << ',';
    if (lr.valid[k]) os << lr.values[k];
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const LogRatioProfile& lr) {
  nlohmann::json values = nlohmann::json::array();
  for (std::size_t k = 0; k < lr.values.size(); ++k) values.push_back(lr.valid[k] ? nlohmann::json(lr.values[k]) : nlohmann::json(nullptr));
  return {{"bins", lr.values.size()}, {"values", values}, {"zero_crossings", lr.zero_crossings}, {"masked", lr.masked}};
}

inline nlohmann::json to_json(const SpectralProfile& p) { return {{"bins", p.size()}, {"values", p.bins}}; }

}  // namespace stealthbench::spectral
