#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "stealthbench/operators.hpp"
#include "stealthbench/spectral.hpp"
#include "stealthbench/synth.hpp"

using namespace stealthbench;
using namespace stealthbench::spectral;

namespace {

constexpr int N = 512;

RealField random_field(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  RealField f(w, h);
  for (auto& v : f.values()) v = rng.uniform(-1.0, 1.0);
  return f;
}

double max_abs(const RealField& f) {
  double m = 0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST(Fft, MatchesNaiveDft) {
  Rng rng(1);
  for (int n : {1, 2, 8, 64, 256}) {
    std::vector<fft::Complex> x(n);
    for (auto& v : x) v = fft::Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto y = x;
    fft::Plan(n).forward(y.data());
    const auto ref = fft::naive_dft(x);
    for (int k = 0; k < n; ++k) EXPECT_NEAR(std::abs(y[k] - ref[k]), 0.0, 1e-10 * n) << n << " " << k;
  }
}

TEST(Fft, TwoDimensionalMatchesDirectSum) {
  const int w = 8, h = 4;
  const RealField f = random_field(w, h, 2);
  const auto F = fft::forward_2d(f);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      fft::Complex acc = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double a = -2.0 * std::numbers::pi * (static_cast<double>(u * x) / w + static_cast<double>(v * y) / h);
          acc += f.at(x, y) * fft::Complex(std::cos(a), std::sin(a));
        }
      EXPECT_NEAR(std::abs(F[v * w + u] - acc), 0.0, 1e-12);
    }
  }
}

TEST(Fft, RejectsNonPowerOfTwo) {
  try {
    fft::Plan p(12);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInvalidParameter);
  }
}

TEST(Residual, Examples) {
  const ImageBuffer a = synth::natural_image(64, 3);
  const RealField zero = residual(a, a);
  EXPECT_EQ(max_abs(zero), 0.0);

  ImageBuffer base(16, 16, 100);
  ImageBuffer plus(16, 16, 101);
  const RealField step = residual(base, plus);
  for (double v : step.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 255.0);

  const ImageBuffer b = synth::natural_image(64, 4);
  const RealField ab = residual(a, b);
  const RealField ba = residual(b, a);
  for (std::size_t i = 0; i < ab.size(); ++i) EXPECT_EQ(ab.values()[i], -ba.values()[i]);

  EXPECT_THROW(residual(ImageBuffer(4, 4), ImageBuffer(4, 5)), Error);
}

TEST(Psd, ZeroFieldIsZero) {
  std::vector<RealField> fields{RealField(N, N)};
  EXPECT_EQ(max_abs(psd(fields).values), 0.0);
}

TEST(Psd, WindowedDcMatchesClosedForm) {
  // Sum of the symmetric Hann window is (N - 1) / 2, so the windowed DC of a
  // constant c is (c ((N-1)/2)^2)^2 / (N^2)^2.
  const double c = 0.37;
  std::vector<RealField> fields{RealField(N, N, c)};
  const Psd2D p = psd(fields);
  const double s = (N - 1) / 2.0;
  const double expected = std::pow(c * s * s, 2) / std::pow(double(N) * N, 2);
  EXPECT_NEAR(p.values.at(N / 2, N / 2) / expected, 1.0, 1e-9);
  // DC dominates: everything else is at least 3 orders smaller.
  double rest = 0;
  for (int y = 0; y < N; ++y)
    for (int x = 0; x < N; ++x)
      if (std::abs(x - N / 2) > 1 || std::abs(y - N / 2) > 1) rest = std::max(rest, p.values.at(x, y));
  EXPECT_LT(rest, 1e-3 * expected);
}

TEST(Psd, CosineLandsAtPredictedCells) {
  RealField f(N, N);
  for (int y = 0; y < N; ++y)
    for (int x = 0; x < N; ++x) f.at(x, y) = std::cos(2.0 * std::numbers::pi * 0.25 * x);
  std::vector<RealField> fields{f};
  const Psd2D p = psd(fields);
  // 0.25 cyc/px is frequency index 128, i.e. columns 256 +- 128 on row 256.
  int best_x = -1, best_y = -1;
  double best = -1, second = -1;
  int sx = -1, sy = -1;
  for (int y = 0; y < N; ++y)
    for (int x = 0; x < N; ++x) {
      const double v = p.values.at(x, y);
      if (v > best) {
        second = best, sx = best_x, sy = best_y;
        best = v, best_x = x, best_y = y;
      } else if (v > second) {
        second = v, sx = x, sy = y;
      }
    }
  EXPECT_EQ(best_y, N / 2);
  EXPECT_EQ(sy, N / 2);
  EXPECT_EQ(std::min(best_x, sx), 128);
  EXPECT_EQ(std::max(best_x, sx), 384);
  // Energy outside the Hann main lobe (+-2 bins around each peak) is negligible.
  double total = 0, lobe = 0;
  for (int y = 0; y < N; ++y)
    for (int x = 0; x < N; ++x) {
      total += p.values.at(x, y);
      if (std::abs(y - N / 2) <= 1 && (std::abs(x - 128) <= 2 || std::abs(x - 384) <= 2)) lobe += p.values.at(x, y);
    }
  EXPECT_GT(lobe / total, 0.999);
  // Radial profile peaks at bin 128.
  const auto prof = radial_profile(p);
  EXPECT_EQ(std::max_element(prof.bins.begin(), prof.bins.end()) - prof.bins.begin(), 128);
  EXPECT_DOUBLE_EQ(prof.frequency(128), 0.25);
}

TEST(Psd, ParsevalWithoutWindow) {
  std::vector<RealField> fields{random_field(N, N, 5), random_field(N, N, 6)};
  PsdOptions opt;
  opt.window = false;
  const Psd2D p = psd(fields, opt);
  double total = 0;
  for (double v : p.values.values()) total += v;
  double msq = 0;
  for (const auto& f : fields)
    for (double v : f.values()) msq += v * v;
  msq /= 2.0 * N * N;
  EXPECT_NEAR(total / msq, 1.0, 1e-9);
}

TEST(Psd, OrderAndWorkerInvariant) {
  std::vector<RealField> fields;
  for (int i = 0; i < 5; ++i) fields.push_back(random_field(N, N, 10 + i));
  const Psd2D a = psd(fields);
  std::vector<RealField> permuted{fields[3], fields[0], fields[4], fields[1], fields[2]};
  const Psd2D b = psd(permuted);
  PsdOptions par;
  par.jobs = 3;
  const Psd2D c = psd(fields, par);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double va = a.values.values()[i];
    EXPECT_NEAR(b.values.values()[i], va, 1e-12 * std::max(1e-300, std::abs(va)) + 1e-300);
    EXPECT_EQ(c.values.values()[i], va);
  }
  EXPECT_EQ(a.n_samples, 5u);
}

TEST(Psd, PointReflectionSymmetry) {
  std::vector<RealField> fields{random_field(N, N, 21)};
  const Psd2D p = psd(fields);
  double worst = 0;
  for (int y = 0; y < N; ++y)
    for (int x = 0; x < N; ++x) {
      const double a = p.values.at(x, y);
      const double b = p.values.at((N - x) % N, (N - y) % N);
      worst = std::max(worst, std::abs(a - b) / std::max(a, b));
    }
  EXPECT_LT(worst, 1e-9);
}

TEST(Radial, BinContract) {
  const auto counts = radial_cell_counts(N, N);
  ASSERT_EQ(counts.size(), 257u);
  std::size_t total = 0;
  for (auto c : counts) total += c;
  EXPECT_EQ(total, std::size_t(N) * N);
  EXPECT_EQ(counts[0], 1u);
  // Radius 1 holds the four axis neighbours and the four diagonals (sqrt 2 rounds to 1).
  EXPECT_EQ(counts[1], 8u);
  SpectralProfile prof = radial_profile(RealField(N, N));
  EXPECT_EQ(prof.size(), 257u);
  EXPECT_DOUBLE_EQ(prof.frequency(256), 0.5);
  EXPECT_DOUBLE_EQ(prof.frequency(0), 0.0);
}

TEST(Radial, IsotropicFieldReproduced) {
  const auto idx = radius_index(N, N);
  RealField p(N, N);
  auto v = p.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.5 * idx[i] + std::sin(idx[i]);
  const auto prof = radial_profile(p);
  for (int r = 0; r <= 256; ++r) EXPECT_DOUBLE_EQ(prof.bins[r], 1.0 + 0.5 * r + std::sin(r));
}

TEST(Radial, SingleCell) {
  RealField p(N, N);
  p.at(N / 2 + 6, N / 2 + 8) = 3.0;  // radius exactly 10
  const auto prof = radial_profile(p);
  for (int r = 0; r <= 256; ++r) {
    if (r == 10)
      EXPECT_GT(prof.bins[r], 0.0);
    else
      EXPECT_EQ(prof.bins[r], 0.0);
  }
}

TEST(Radial, RoundsHalfUpAndFoldsCorners) {
  const auto idx = radius_index(N, N);
  auto at = [&](int u, int v) { return idx[static_cast<std::size_t>(v + N / 2) * N + (u + N / 2)]; };
  EXPECT_EQ(at(3, 3), 4);      // 4.243
  EXPECT_EQ(at(1, 2), 2);      // 2.236
  EXPECT_EQ(at(2, 2), 3);      // 2.828
  EXPECT_EQ(at(-256, -256), 256);
  EXPECT_EQ(at(200, 200), 256);
}

TEST(Control, DuplicatedCleansGiveZero) {
  const ImageBuffer x = synth::natural_image(N, 7);
  std::vector<ImageBuffer> cleans(4, x);
  const auto prof = control_profile(cleans, 2, 1);
  for (double v : prof.bins) EXPECT_EQ(v, 0.0);
}

TEST(Control, DeterministicAndInsufficient) {
  std::vector<ImageBuffer> cleans;
  for (int i = 0; i < 6; ++i) cleans.push_back(synth::natural_image(N, 100 + i));
  const auto a = control_profile(cleans, 3, 9);
  const auto b = control_profile(cleans, 3, 9);
  EXPECT_EQ(a.bins, b.bins);
  try {
    control_profile(cleans, 4, 9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInsufficientImages);
  }
}

TEST(Control, WhiteNoiseIsFlat) {
  std::vector<ImageBuffer> cleans;
  for (int i = 0; i < 1000; ++i) cleans.push_back(synth::white_noise_image(N, i));
  const auto prof = control_profile(cleans, 500, 0);
  double lo = 1e300, hi = 0;
  for (int k = 5; k <= 250; ++k) {
    lo = std::min(lo, prof.bins[k]);
    hi = std::max(hi, prof.bins[k]);
  }
  EXPECT_LT(hi / lo, 3.0);
}

TEST(LogRatio, IdentityAndScale) {
  SpectralProfile c;
  for (int k = 0; k < 257; ++k) c.bins.push_back(1.0 / (1 + k));
  const auto same = log_ratio(c, c);
  for (double v : same.values) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(same.zero_crossings.empty());

  SpectralProfile four = c;
  for (auto& v : four.bins) v *= 4;
  for (double v : log_ratio(four, c).values) EXPECT_NEAR(v, 0.6020599913279624, 1e-12);
}

TEST(LogRatio, CrossingsInterpolated) {
  SpectralProfile c, a;
  c.bins.assign(257, 1.0);
  a.bins.assign(257, 1.0);
  // log10 values +1 at bin 10 and -1 at bin 11: crossing halfway, 10.5/512.
  for (int k = 0; k <= 10; ++k) a.bins[k] = 10.0;
  for (int k = 11; k < 257; ++k) a.bins[k] = 0.1;
  // +log10(2) at bins 200.. back to positive, -1 at 199: crossing 1/(1+0.30103) of the way.
  for (int k = 200; k < 257; ++k) a.bins[k] = 2.0;
  const auto lr = log_ratio(a, c);
  ASSERT_EQ(lr.zero_crossings.size(), 2u);
  EXPECT_NEAR(lr.zero_crossings[0], 10.5 / 512, 1e-15);
  EXPECT_NEAR(lr.zero_crossings[1], (199 + 1.0 / (1.0 + std::log10(2.0))) / 512, 1e-15);
}

TEST(LogRatio, ZeroRunReportsMiddle) {
  SpectralProfile c, a;
  c.bins.assign(257, 1.0);
  a.bins.assign(257, 1.0);
  a.bins[20] = 10.0;
  a.bins[24] = 0.1;  // bins 21..23 are exact zeros
  for (int k = 25; k < 257; ++k) a.bins[k] = 0.1;
  for (int k = 0; k < 20; ++k) a.bins[k] = 10.0;
  const auto lr = log_ratio(a, c);
  ASSERT_EQ(lr.zero_crossings.size(), 1u);
  EXPECT_NEAR(lr.zero_crossings[0], 22.0 / 512, 1e-15);
}

TEST(LogRatio, Masking) {
  SpectralProfile c, a;
  c.bins.assign(257, 0.0);
  a.bins.assign(257, 1.0);
  try {
    log_ratio(a, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kAllBinsMasked);
  }
  c.bins[3] = 1.0;
  const auto lr = log_ratio(a, c);
  EXPECT_EQ(lr.masked, 256u);
  EXPECT_TRUE(lr.valid[3]);
  SpectralProfile shorter;
  shorter.bins.assign(10, 1.0);
  EXPECT_THROW(log_ratio(shorter, c), Error);
}

TEST(LogRatio, BlurCrossingsStableAcrossHalves) {
  constexpr int kPairs = 24;
  std::vector<ImageBuffer> cleans, blurred, cleans2, blurred2, pool;
  for (int i = 0; i < kPairs; ++i) {
    cleans.push_back(synth::natural_image(N, 1000 + i));
    blurred.push_back(gaussian_blur(cleans.back(), 1.0));
    cleans2.push_back(synth::natural_image(N, 2000 + i));
    blurred2.push_back(gaussian_blur(cleans2.back(), 1.0));
  }
  for (int i = 0; i < 4 * kPairs; ++i) pool.push_back(synth::natural_image(N, 3000 + i));
  std::span<const ImageBuffer> all(pool);
  const auto ctrl1 = control_profile(all.subspan(0, 2 * kPairs), kPairs, 1);
  const auto ctrl2 = control_profile(all.subspan(2 * kPairs), kPairs, 2);
  const auto lr1 = log_ratio(radial_profile(residual_psd(cleans, blurred)), ctrl1);
  const auto lr2 = log_ratio(radial_profile(residual_psd(cleans2, blurred2)), ctrl2);
  ASSERT_EQ(lr1.zero_crossings.size(), lr2.zero_crossings.size());
  for (std::size_t i = 0; i < lr1.zero_crossings.size(); ++i)
    EXPECT_NEAR(lr1.zero_crossings[i], lr2.zero_crossings[i], 0.02);
  for (int k = 154; k <= 256; ++k) {
    EXPECT_LT(lr1.values[k], 0.0) << k;
    EXPECT_LT(lr2.values[k], 0.0) << k;
  }
}

TEST(Deviation, IdentityIsZeroAndMasking) {
  std::vector<RealField> fields{random_field(N, N, 30)};
  const Psd2D p = psd(fields);
  const auto m = deviation_map_2d(p, p);
  EXPECT_EQ(max_abs(m.values), 0.0);
  Psd2D zero{RealField(N, N), 1};
  try {
    deviation_map_2d(p, zero);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kAllCellsMasked);
  }
}

TEST(Deviation, RadialAverageConsistentWithProfile) {
  // With an isotropic control, averaging the exponentiated map over a ring
  // equals the ratio of ring means exactly.
  const auto idx = radius_index(N, N);
  Psd2D control{RealField(N, N), 1};
  Psd2D attack{RealField(N, N), 1};
  Rng rng(4);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    control.values.values()[i] = 1.0 / (1.0 + idx[i]);
    attack.values.values()[i] = rng.uniform(0.1, 2.0) / (1.0 + idx[i]);
  }
  const auto map = deviation_map_2d(attack, control);
  RealField expo(N, N);
  for (std::size_t i = 0; i < idx.size(); ++i) expo.values()[i] = std::pow(10.0, map.values.values()[i]);
  const auto ring = radial_profile(expo);
  const auto lr = log_ratio(radial_profile(attack), radial_profile(control));
  for (int k = 0; k <= 256; ++k) EXPECT_NEAR(std::log10(ring.bins[k]), lr.values[k], 1e-9);
}

TEST(Deviation, PlantedCross) {
  Psd2D control{RealField(N, N, 2.0), 1};
  Psd2D attack = control;
  for (int i = 0; i < N; ++i) {
    attack.values.at(N / 2, i) = 0.2;
    attack.values.at(i, N / 2) = 0.2;
  }
  const auto map = deviation_map_2d(attack, control);
  EXPECT_NEAR(map.scale, 1.0, 1e-12);
  for (int y = 0; y < N; ++y)
    for (int x = 0; x < N; ++x) {
      const double expect = (x == N / 2 || y == N / 2) ? -1.0 : 0.0;
      ASSERT_NEAR(map.values.at(x, y), expect, 1e-12);
    }
  const ImageBuffer heat = deviation_heatmap(map);
  EXPECT_EQ(heat.at(N / 2, 3, 2), 255);
  EXPECT_EQ(heat.at(N / 2, 3, 0), 0);
  EXPECT_EQ(heat.at(3, 3, 0), 255);
  EXPECT_EQ(heat.at(3, 3, 1), 255);
}

TEST(Export, RawGridAndCsv) {
  RealField f(2, 1);
  f.at(0, 0) = 1.0;
  f.at(1, 0) = -2.0;
  const auto raw = raw_float_grid(f);
  ASSERT_EQ(raw.size(), 8u);
  EXPECT_EQ(raw[3], 0x3f);  // 1.0f = 0x3f800000
  EXPECT_EQ(raw[2], 0x80);
  EXPECT_EQ(raw[7], 0xc0);  // -2.0f = 0xc0000000
  SpectralProfile p;
  p.bins = {1.0, 2.0, 3.0};
  EXPECT_EQ(profile_csv(p), "frequency,value\n0,1\n0.25,2\n0.5,3\n");
}
