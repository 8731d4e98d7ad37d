#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/detector.hpp"
#include "stealthbench/error.hpp"
#include "stealthbench/metrics.hpp"
#include "stealthbench/parallel.hpp"
#include "stealthbench/image.hpp"
#include "stealthbench/operators.hpp"
#include "stealthbench/rng.hpp"
#include "stealthbench/spectral.hpp"

namespace stealthbench::stealth {

inline constexpr double kDefaultStrength = 2.0;
// Frozen from calibrate_threshold on 1,000 clean and 1,000 marked fixtures.
inline constexpr double kDefaultThreshold = 0.0741;
inline constexpr double kVerifySigma = 1.5;
inline constexpr int kPatch = 32;

struct SyntheticWatermark {
  std::uint64_t key = 0;
  double strength = kDefaultStrength;
  double threshold = kDefaultThreshold;
  int width = kStandardSize;
  int height = kStandardSize;
};

// Unit-variance Gaussian field, standardized on the sample so the variance
// holds exactly rather than in expectation.
inline std::vector<float> pattern(const SyntheticWatermark& wm) {
  const std::size_t n = static_cast<std::size_t>(wm.width) * wm.height * 3;
  Rng rng(derive_seed(wm.key, 0x776d));
  std::vector<double> v(n);
  double mean = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    mean += x;
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (auto& x : v) {
    x -= mean;
    ss += x * x;
  }
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(n));
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

inline ImageBuffer embed(const ImageBuffer& x, const SyntheticWatermark& wm, std::span<const float> pat) {
  if (x.width() != wm.width || x.height() != wm.height) {
    throw Error(Errc::kGeometryMismatch, "watermark geometry does not match image");
  }
  ImageBuffer y(x.width(), x.height());
  auto src = x.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = clamp_u8(src[i] + wm.strength * pat[i]);
  return y;
}

inline ImageBuffer embed(const ImageBuffer& x, const SyntheticWatermark& wm) { return embed(x, wm, pattern(wm)); }

namespace detail {

inline std::vector<float> verify_kernel() {
  const int radius = static_cast<int>(std::ceil(3.0 * kVerifySigma));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (kVerifySigma * kVerifySigma));
    k[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

// High-pass y - G(y) over the rectangle [x0, x1) x [y0, y1), written into hp
// (full-frame layout). Borders reflect.
inline void highpass_region(const ImageBuffer& y, std::vector<float>& hp, int x0, int y0, int x1, int y1) {
  static const std::vector<float> k = verify_kernel();
  const int r = static_cast<int>(k.size() / 2);
  const int w = y.width(), h = y.height();
  const int ry0 = std::max(0, y0 - r), ry1 = std::min(h, y1 + r);
  const int cw = x1 - x0;
  std::vector<float> tmp(static_cast<std::size_t>(ry1 - ry0) * cw * 3);
  for (int yy = ry0; yy < ry1; ++yy) {
    for (int xx = x0; xx < x1; ++xx) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int t = -r; t <= r; ++t) acc += k[t + r] * y.at(reflect101(xx + t, w), yy, c);
        tmp[(static_cast<std::size_t>(yy - ry0) * cw + (xx - x0)) * 3 + c] = acc;
      }
    }
  }
  for (int yy = y0; yy < y1; ++yy) {
    for (int xx = x0; xx < x1; ++xx) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int t = -r; t <= r; ++t) {
          const int sy = reflect101(yy + t, h);
          acc += k[t + r] * tmp[(static_cast<std::size_t>(sy - ry0) * cw + (xx - x0)) * 3 + c];
        }
        const std::size_t i = (static_cast<std::size_t>(yy) * w + xx) * 3 + c;
        hp[i] = static_cast<float>(y.at(xx, yy, c)) - acc;
      }
    }
  }
}

struct CorrSums {
  double rp = 0.0, r = 0.0, rr = 0.0;

  void add(double hv, double pv, double sign) {
    rp += sign * hv * pv;
    r += sign * hv;
    rr += sign * hv * hv;
  }

  double statistic(std::size_t n) const {
    const double var = rr - r * r / static_cast<double>(n);
    if (!(var > 0.0)) return 0.0;
    return rp / std::sqrt(var * static_cast<double>(n));  // pattern has unit variance
  }
};

}  // namespace detail

struct Verdict {
  double statistic = 0.0;
  bool decision = false;
};

// Normalized correlation between the high-pass residual y - G(y) and the key
// pattern; decision when the statistic exceeds the threshold.
inline Verdict verify(const ImageBuffer& y, const SyntheticWatermark& wm, std::span<const float> pat) {
  if (y.width() != wm.width || y.height() != wm.height) {
    throw Error(Errc::kGeometryMismatch, "watermark geometry does not match image");
  }
  std::vector<float> hp(y.size());
  detail::highpass_region(y, hp, 0, 0, y.width(), y.height());
  detail::CorrSums s;
  for (std::size_t i = 0; i < hp.size(); ++i) s.add(hp[i], pat[i], 1.0);
  const double stat = s.statistic(hp.size());
  return {stat, stat > wm.threshold};
}

inline Verdict verify(const ImageBuffer& y, const SyntheticWatermark& wm) { return verify(y, wm, pattern(wm)); }

// Midpoint between the clean 99th percentile and the marked 1st percentile.
inline double calibrate_threshold(std::vector<double> clean_stats, std::vector<double> marked_stats) {
  if (clean_stats.empty() || marked_stats.empty()) {
    throw Error(Errc::kInsufficientImages, "calibration needs clean and marked statistics");
  }
  std::sort(clean_stats.begin(), clean_stats.end());
  std::sort(marked_stats.begin(), marked_stats.end());
  auto pct = [](const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(v.size() - 1, lo + 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return 0.5 * (pct(clean_stats, 0.99) + pct(marked_stats, 0.01));
}

// ---- stealth objective ----

struct StealthWeights {
  double fid = 1.0;
  double wm = 1.0;
  double ben = 1.0;
};

inline void validate(const StealthWeights& w) {
  if (!(w.fid >= 0.0 && w.wm >= 0.0 && w.ben >= 0.0)) {
    throw Error(Errc::kInvalidParameter, "stealth weights must be non-negative");
  }
}

struct StealthScore {
  double S = 0.0;
  double F = 0.0;
  double W = 0.0;
  double B = 0.0;
};

inline double combine(const StealthWeights& w, double F, double W, double B) {
  return w.fid * F - w.wm * W + w.ben * B;
}

inline double fidelity_from_sse(double sse, std::size_t samples) {
  if (sse <= 0.0) return 1.0;
  const double psnr = 10.0 * std::log10(255.0 * 255.0 * static_cast<double>(samples) / sse);
  return std::min(1.0, psnr / 50.0);
}

// RMS of the radial log-ratio of the residual y - x against the control;
// zero residual masks every bin and is defined as 0.
inline double benignity(const ImageBuffer& y, const ImageBuffer& x, const spectral::SpectralProfile& control) {
  spectral::PsdAccumulator acc(true);
  acc.add(spectral::residual(x, y));
  const auto profile = spectral::radial_profile(acc.result());
  try {
    const auto lr = spectral::log_ratio(profile, control);
    double ss = 0.0;
    for (double v : lr.values) ss += v * v;
    return -std::sqrt(ss) / std::sqrt(static_cast<double>(lr.values.size()));
  } catch (const Error& e) {
    if (e.code() == Errc::kAllBinsMasked) return 0.0;
    throw;
  }
}

inline StealthScore stealth_score(const ImageBuffer& y, const ImageBuffer& x, const SyntheticWatermark& wm,
                                  std::span<const float> pat, const StealthWeights& weights,
                                  const spectral::SpectralProfile& control) {
  validate(weights);
  require_same_geometry(y, x, "stealth_score");
  double sse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y.data()[i]) - x.data()[i];
    sse += d * d;
  }
  StealthScore s;
  s.F = fidelity_from_sse(sse, y.size());
  s.W = verify(y, wm, pat).statistic;
  s.B = weights.ben > 0.0 ? benignity(y, x, control) : 0.0;
  s.S = combine(weights, s.F, s.W, s.B);
  return s;
}

inline StealthScore stealth_score(const ImageBuffer& y, const ImageBuffer& x, const SyntheticWatermark& wm,
                                  const StealthWeights& weights, const spectral::SpectralProfile& control) {
  return stealth_score(y, x, wm, pattern(wm), weights, control);
}

// ---- random walk ----

enum class Proposal { kPatchBlur, kPatchNoise, kPatchShuffle };

inline const char* proposal_name(Proposal p) {
  switch (p) {
    case Proposal::kPatchBlur: return "patch_blur";
    case Proposal::kPatchNoise: return "patch_noise";
    case Proposal::kPatchShuffle: return "patch_shuffle";
  }
  return "?";
}

inline Proposal parse_proposal(std::string_view s) {
  for (Proposal p : {Proposal::kPatchBlur, Proposal::kPatchNoise, Proposal::kPatchShuffle}) {
    if (s == proposal_name(p)) return p;
  }
  throw Error(Errc::kInvalidParameter, "unknown proposal " + std::string(s));
}

struct WalkOptions {
  int steps = 50;
  Proposal proposal = Proposal::kPatchShuffle;
  std::uint64_t seed = 0;
  double temperature = 0.0;  // 0: greedy, accept iff S does not decrease
  int jitter = 0;            // pixels of random offset around the tile origin
};

struct StepRecord {
  int step = 0;
  double F = 0.0, W = 0.0, B = 0.0, S = 0.0;
  bool accepted = false;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct WalkState {
  ImageBuffer current;
  int step = 0;
  StealthScore score;
  std::vector<StepRecord> history;
  int accepted = 0;
};

namespace detail {

struct Rect {
  int x0, y0, x1, y1;
};

inline void propose(ImageBuffer& y, const Rect& p, Proposal kind, Rng& rng) {
  const int w = y.width(), h = y.height();
  switch (kind) {
    case Proposal::kPatchBlur: {
      const double sigma = rng.uniform(0.6, 1.6);
      const std::vector<double> k = [&] {
        const int r = static_cast<int>(std::ceil(3.0 * sigma));
        std::vector<double> v(2 * r + 1);
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += v[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
        for (auto& e : v) e /= s;
        return v;
      }();
      const int r = static_cast<int>(k.size() / 2);
      const int pw = p.x1 - p.x0, ph = p.y1 - p.y0;
      const int ty0 = std::max(0, p.y0 - r), ty1 = std::min(h, p.y1 + r);
      std::vector<double> tmp(static_cast<std::size_t>(ty1 - ty0) * pw * 3);
      for (int yy = ty0; yy < ty1; ++yy)
        for (int xx = p.x0; xx < p.x1; ++xx)
          for (int c = 0; c < 3; ++c) {
            double a = 0.0;
            for (int t = -r; t <= r; ++t) a += k[t + r] * y.at(reflect101(xx + t, w), yy, c);
            tmp[(static_cast<std::size_t>(yy - ty0) * pw + (xx - p.x0)) * 3 + c] = a;
          }
      std::vector<std::uint8_t> out(static_cast<std::size_t>(ph) * pw * 3);
      for (int yy = p.y0; yy < p.y1; ++yy)
        for (int xx = p.x0; xx < p.x1; ++xx)
          for (int c = 0; c < 3; ++c) {
            double a = 0.0;
            for (int t = -r; t <= r; ++t) {
              const int sy = reflect101(yy + t, h);
              a += k[t + r] * tmp[(static_cast<std::size_t>(sy - ty0) * pw + (xx - p.x0)) * 3 + c];
            }
            out[(static_cast<std::size_t>(yy - p.y0) * pw + (xx - p.x0)) * 3 + c] = clamp_u8(a);
          }
      for (int yy = p.y0; yy < p.y1; ++yy)
        for (int xx = p.x0; xx < p.x1; ++xx)
          for (int c = 0; c < 3; ++c) y.at(xx, yy, c) = out[(static_cast<std::size_t>(yy - p.y0) * pw + (xx - p.x0)) * 3 + c];
      break;
    }
    case Proposal::kPatchNoise: {
      const double sd = rng.uniform(1.0, 4.0);
      for (int yy = p.y0; yy < p.y1; ++yy)
        for (int xx = p.x0; xx < p.x1; ++xx)
          for (int c = 0; c < 3; ++c) y.at(xx, yy, c) = clamp_u8(y.at(xx, yy, c) + sd * rng.normal());
      break;
    }
    case Proposal::kPatchShuffle: {
      // random permutation inside each 2x2 cell of the patch
      for (int yy = p.y0; yy + 1 < p.y1; yy += 2)
        for (int xx = p.x0; xx + 1 < p.x1; xx += 2) {
          std::array<std::array<std::uint8_t, 3>, 4> px;
          for (int q = 0; q < 4; ++q)
            for (int c = 0; c < 3; ++c) px[q][c] = y.at(xx + (q & 1), yy + (q >> 1), c);
          rng.shuffle(std::span<std::array<std::uint8_t, 3>>(px));
          for (int q = 0; q < 4; ++q)
            for (int c = 0; c < 3; ++c) y.at(xx + (q & 1), yy + (q >> 1), c) = px[q][c];
        }
      break;
    }
  }
}

}  // namespace detail

// Greedy erosion walk from x_w. Each step edits one random 32x32 patch and
// keeps it iff S_x does not decrease (or by the Metropolis rule when a
// temperature is set). F and B are scored against the source x; W is the
// verifier statistic, updated incrementally over the touched region.
inline WalkState walk(const ImageBuffer& x_w, const ImageBuffer& source, const SyntheticWatermark& wm,
                      const StealthWeights& weights, const spectral::SpectralProfile& control,
                      const WalkOptions& opt) {
  validate(weights);
  require_standard(x_w, "walk");
  require_same_geometry(x_w, source, "walk");
  const auto pat = pattern(wm);
  const int w = x_w.width(), h = x_w.height();
  const std::size_t n = x_w.size();
  const int r = static_cast<int>(detail::verify_kernel().size() / 2);

  WalkState st;
  st.current = x_w;
  std::vector<float> hp(n);
  detail::highpass_region(st.current, hp, 0, 0, w, h);
  detail::CorrSums sums;
  for (std::size_t i = 0; i < n; ++i) sums.add(hp[i], pat[i], 1.0);
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x_w.data()[i]) - source.data()[i];
    sse += d * d;
  }
  auto score_of = [&](const ImageBuffer& y, double sse_v, const detail::CorrSums& s) {
    StealthScore out;
    out.F = fidelity_from_sse(sse_v, n);
    out.W = s.statistic(n);
    out.B = weights.ben > 0.0 ? benignity(y, source, control) : 0.0;
    out.S = combine(weights, out.F, out.W, out.B);
    return out;
  };
  st.score = score_of(st.current, sse, sums);

  Rng rng(opt.seed);
  ImageBuffer cand = st.current;
  std::vector<float> hp_cand = hp;
  // Patch positions come from the 32-pixel tile grid in shuffled order,
  // reshuffled once exhausted, with a random sub-tile jitter.
  const int tiles_x = w / kPatch, tiles_y = h / kPatch;
  std::vector<int> tiles(static_cast<std::size_t>(tiles_x) * tiles_y);
  std::size_t next_tile = tiles.size();
  for (int step = 1; step <= opt.steps; ++step) {
    if (next_tile == tiles.size()) {
      for (std::size_t t = 0; t < tiles.size(); ++t) tiles[t] = static_cast<int>(t);
      rng.shuffle(std::span<int>(tiles));
      next_tile = 0;
    }
    const int tile = tiles[next_tile++];
    detail::Rect p;
    p.x0 = std::clamp((tile % tiles_x) * kPatch + rng.uniform_int(-opt.jitter, opt.jitter), 0, w - kPatch);
    p.y0 = std::clamp((tile / tiles_x) * kPatch + rng.uniform_int(-opt.jitter, opt.jitter), 0, h - kPatch);
    p.x1 = p.x0 + kPatch;
    p.y1 = p.y0 + kPatch;
    detail::propose(cand, p, opt.proposal, rng);

    double sse_c = sse;
    for (int yy = p.y0; yy < p.y1; ++yy)
      for (int xx = p.x0; xx < p.x1; ++xx)
        for (int c = 0; c < 3; ++c) {
          const double s0 = source.at(xx, yy, c);
          const double a = st.current.at(xx, yy, c) - s0, b = cand.at(xx, yy, c) - s0;
          sse_c += b * b - a * a;
        }
    const detail::Rect touched{std::max(0, p.x0 - r), std::max(0, p.y0 - r), std::min(w, p.x1 + r),
                               std::min(h, p.y1 + r)};
    detail::highpass_region(cand, hp_cand, touched.x0, touched.y0, touched.x1, touched.y1);
    detail::CorrSums sums_c = sums;
    for (int yy = touched.y0; yy < touched.y1; ++yy)
      for (int xx = touched.x0; xx < touched.x1; ++xx)
        for (int c = 0; c < 3; ++c) {
          const std::size_t i = (static_cast<std::size_t>(yy) * w + xx) * 3 + c;
          sums_c.add(hp[i], pat[i], -1.0);
          sums_c.add(hp_cand[i], pat[i], 1.0);
        }
    const StealthScore sc = score_of(cand, sse_c, sums_c);
    const double delta = sc.S - st.score.S;
    bool accept = delta >= 0.0;
    if (!accept && opt.temperature > 0.0) accept = rng.uniform01() < std::exp(delta / opt.temperature);

    st.history.push_back({step, sc.F, sc.W, sc.B, sc.S, accept});
    auto copy_region = [&](ImageBuffer& dst, const ImageBuffer& src, std::vector<float>& hdst,
                           const std::vector<float>& hsrc) {
      for (int yy = p.y0; yy < p.y1; ++yy)
        for (int xx = p.x0; xx < p.x1; ++xx)
          for (int c = 0; c < 3; ++c) dst.at(xx, yy, c) = src.at(xx, yy, c);
      for (int yy = touched.y0; yy < touched.y1; ++yy)
        for (int xx = touched.x0; xx < touched.x1; ++xx)
          for (int c = 0; c < 3; ++c) {
            const std::size_t i = (static_cast<std::size_t>(yy) * w + xx) * 3 + c;
            hdst[i] = hsrc[i];
          }
    };
    if (accept) {
      copy_region(st.current, cand, hp, hp_cand);
      sums = sums_c;
      sse = sse_c;
      st.score = sc;
      ++st.accepted;
    } else {
      copy_region(cand, st.current, hp_cand, hp);
    }
    st.step = step;
  }
  return st;
}

inline std::string history_csv(const WalkState& st) {
  std::ostringstream os;
  os.precision(17);
  os << "step,F,W,B,S,accepted\n";
  for (const auto& h : st.history) {
    os << h.step << ',' << h.F << ',' << h.W << ',' << h.B << ',' << h.S << ',' << (h.accepted ? 1 : 0) << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const WalkState& st) {
  return {{"steps", st.step},
          {"accepted", st.accepted},
          {"S", st.score.S},
          {"F", st.score.F},
          {"W", st.score.W},
          {"B", st.score.B}};
}

struct StealthReportOptions {
  std::uint64_t seed = 0;
  int jobs = 1;
  detector::Hyper hyper;
  metrics::EvaluateOptions eval;
};

// Detector trained on walk outputs (label 1) against clean releases (label 0);
// each side is split 70/15/15 on its own and the test split is evaluated.
inline metrics::MetricReport stealth_report(std::span<const ImageBuffer> walk_outputs, std::span<const ImageBuffer> cleans,
                                            const StealthReportOptions& opt = {}) {
  if (walk_outputs.size() < 100 || cleans.size() < 100) {
    throw Error(Errc::kInsufficientImages, "stealth report needs at least 100 images per side");
  }
  detector::FeatureMap features;
  std::vector<detector::FeatureVector> fw(walk_outputs.size()), fc(cleans.size());
  parallel_for(fw.size(), opt.jobs, [&](std::size_t i) { fw[i] = detector::extract_features(walk_outputs[i]); });
  parallel_for(fc.size(), opt.jobs, [&](std::size_t i) { fc[i] = detector::extract_features(cleans[i]); });

  std::vector<detector::Example> tr, va, te;
  auto deal = [&](const std::vector<detector::FeatureVector>& f, int label, const char* prefix, std::uint64_t stream) {
    std::vector<std::size_t> order(f.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(opt.seed, stream));
    rng.shuffle(std::span<std::size_t>(order));
    const double n = static_cast<double>(order.size());
    const auto n_train = static_cast<std::size_t>(std::floor(0.70 * n + 0.5));
    const auto n_val = static_cast<std::size_t>(std::floor(0.15 * n + 0.5));
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::string id = prefix + std::to_string(order[k]);
      features[id] = f[order[k]];
      (k < n_train ? tr : (k < n_train + n_val ? va : te)).push_back({id, label});
    }
  };
  deal(fw, 1, "w", 1);
  deal(fc, 0, "c", 2);
  const auto model = detector::train(tr, va, features, opt.hyper);
  return metrics::evaluate(detector::score(model, te, features), opt.eval);
}

}  // namespace stealthbench::stealth
