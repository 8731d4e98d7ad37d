#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <tuple>

#include "stealthbench/imageio/imageio.hpp"
#include "stealthbench/operators.hpp"
#include "stealthbench/synth.hpp"

namespace sb = stealthbench;
namespace op = stealthbench::operators;
namespace io = stealthbench::imageio;

namespace {

std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(FIXTURE_DIR) / name; }

sb::ImageBuffer raw_fixture(const std::string& name, int w, int h) {
  auto bytes = io::read_file(fixture(name));
  return sb::ImageBuffer(w, h, std::move(bytes));
}

sb::ImageBuffer flat(int v) { return sb::ImageBuffer(512, 512, static_cast<std::uint8_t>(v)); }

template <typename F>
void expect_error(sb::Errc code, F&& f) {
  try {
    f();
    FAIL() << "no exception";
  } catch (const sb::Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

const sb::ImageBuffer& natural() {
  static const sb::ImageBuffer img = sb::synth::natural_image(512, 1234);
  return img;
}

}  // namespace

TEST(Sampling, OperatorFrequenciesAreUniform) {
  std::map<int, int> counts;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto spec = op::sample_operator(s);
    ++counts[spec.id];
    ASSERT_TRUE(op::parameter_allowed(spec.id, spec.parameter));
    ASSERT_EQ(spec.rng_seed, s);
  }
  ASSERT_EQ(counts.size(), 10u);
  for (auto [id, n] : counts) {
    EXPECT_NEAR(n / 10000.0, 0.1, 0.012) << op::operator_code(id);
  }
}

TEST(Sampling, JpegQualitiesComeFromTheTable) {
  std::set<double> seen;
  for (std::uint64_t s = 0; s < 2000; ++s) seen.insert(op::sample_parameter(1, s).parameter);
  EXPECT_EQ(seen, (std::set<double>{74, 76, 78, 80, 82, 84, 86, 88}));
}

TEST(Sampling, Deterministic) {
  for (std::uint64_t s : {0ull, 17ull, 1ull << 40}) EXPECT_EQ(op::sample_operator(s), op::sample_operator(s));
}

TEST(Sampling, JsonRoundTrip) {
  const auto spec = op::sample_operator(99);
  EXPECT_EQ(op::spec_from_json(op::to_json(spec)), spec);
}

TEST(Apply, QuantizeSevenBitsKeepsEvenValues) {
  sb::ImageBuffer img = natural();
  for (auto& v : img.data()) v &= 0xFE;
  EXPECT_EQ(op::apply(img, {3, 7, 0}), img);
}

TEST(Apply, QuantizeLevels) {
  sb::ImageBuffer img(512, 512);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = static_cast<std::uint8_t>(i % 256);
  for (int bits : {5, 6, 7}) {
    const int step = 1 << (8 - bits);
    const auto out = op::apply(img, {3, double(bits), 0});
    std::set<int> levels(out.data().begin(), out.data().end());
    EXPECT_EQ(levels.size(), static_cast<std::size_t>(1 << bits));
    for (std::size_t i = 0; i < img.size(); ++i) {
      ASSERT_EQ(out.data()[i] % step, 0);
      ASSERT_LE(std::abs(int(out.data()[i]) - int(img.data()[i])), step);
    }
  }
}

TEST(Apply, ZeroCropIsIdentity) {
  EXPECT_EQ(op::apply_unchecked(natural(), {7, 0, 0}), natural());
  expect_error(sb::Errc::kInvalidParameter, [] { op::apply(natural(), {7, 0, 0}); });
}

TEST(Apply, GaussianMatchesDirectConvolution) {
  const double sigma = 1.35;
  sb::ImageBuffer img(512, 512, 0);
  for (int c = 0; c < 3; ++c) img.at(200, 300, c) = 255;
  const auto out = op::apply(img, {4, sigma, 0});
  // Oracle: full 2D kernel evaluated directly, normalised over its support.
  const int r = static_cast<int>(std::ceil(3 * sigma));
  double total = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) total += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  for (int y = 290; y < 311; ++y) {
    for (int x = 190; x < 211; ++x) {
      const int dx = x - 200, dy = y - 300;
      double expect = 0;
      if (std::abs(dx) <= r && std::abs(dy) <= r) expect = 255 * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / total;
      for (int c = 0; c < 3; ++c) ASSERT_LE(std::abs(out.at(x, y, c) - expect), 1.0) << x << "," << y;
    }
  }
}

TEST(Apply, GaussianBordersReflect) {
  // Reflect-101 keeps a linear ramp's interior slope at the edge.
  sb::ImageBuffer img(512, 512);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(100 + (y % 2));
  const auto out = op::apply(img, {4, 0.5, 0});
  for (int x = 0; x < 512; ++x) EXPECT_NEAR(out.at(x, 0, 0), out.at(x, 2, 0), 0);
}

TEST(Apply, EveryOperatorPreservesGeometryAndIsDeterministic) {
  for (int id = 1; id <= 10; ++id) {
    const auto spec = op::sample_parameter(id, 5);
    const auto a = op::apply(natural(), spec);
    const auto b = op::apply(natural(), spec);
    EXPECT_EQ(a.width(), 512);
    EXPECT_EQ(a.height(), 512);
    EXPECT_EQ(a, b) << op::operator_code(id);
  }
}

TEST(Apply, EveryParameterIsLightweightOnNaturalFixtures) {
  const sb::ImageBuffer second = sb::synth::natural_image(512, 77);
  for (int id = 1; id <= 10; ++id) {
    for (double p : op::parameter_set(id)) {
      for (const auto* img : {&natural(), &second}) {
        if (id == 6 && img == &second) continue;  // non-local means is slow; one fixture suffices
        const double psnr = op::psnr(*img, op::apply(*img, {id, p, 0}));
        EXPECT_TRUE(std::isfinite(psnr)) << op::operator_code(id) << " " << p;
        EXPECT_GT(psnr, 15.0) << op::operator_code(id) << " " << p;
      }
    }
  }
}

TEST(Apply, JpegPsnrFallsWithQuality) {
  double last = 1e9;
  for (double q : {88, 82, 76, 74}) {
    const double p = op::psnr(natural(), op::apply(natural(), {1, q, 0}));
    EXPECT_LE(p, last) << q;
    last = p;
  }
}

TEST(Apply, RejectsWrongGeometryAndParameters) {
  expect_error(sb::Errc::kGeometryMismatch, [] { op::apply(sb::ImageBuffer(256, 512), {4, 0.5, 0}); });
  expect_error(sb::Errc::kInvalidParameter, [] { op::apply(natural(), {1, 75, 0}); });
  expect_error(sb::Errc::kInvalidParameter, [] { op::apply(natural(), {11, 1, 0}); });
}

TEST(Apply, SmoothersKeepFlatImages) {
  const auto img = flat(90);
  for (int id : {2, 4, 5, 6}) EXPECT_EQ(op::apply(img, op::sample_parameter(id, 1)), img) << id;
}

TEST(Apply, HueShiftLeavesGreysAlone) {
  EXPECT_EQ(op::apply(flat(77), {10, 6, 0}), flat(77));
}

TEST(Apply, HsvMatchesReferenceConversion) {
  const auto src = raw_fixture("hsv_src.rgb", 40, 24);
  const auto hsv = io::read_file(fixture("hsv_ref.hsv"));
  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 40; ++x) {
      int h, s, v;
      op::detail::rgb_to_hsv8(src.at(x, y, 0), src.at(x, y, 1), src.at(x, y, 2), h, s, v);
      const std::size_t i = (static_cast<std::size_t>(y) * 40 + x) * 3;
      ASSERT_EQ(h, hsv[i]);
      ASSERT_EQ(s, hsv[i + 1]);
      ASSERT_EQ(v, hsv[i + 2]);
    }
  }
  const auto shifted = raw_fixture("hsv_shift4.rgb", 40, 24);
  const auto ours = op::detail::hue_shift(src, 4);
  int worst = 0;
  for (std::size_t i = 0; i < ours.size(); ++i) worst = std::max(worst, std::abs(ours.data()[i] - shifted.data()[i]));
  EXPECT_LE(worst, 1);
}

TEST(Resample, BilinearMatchesReferenceWithinOne) {
  const auto src = raw_fixture("hsv_src.rgb", 40, 24);
  for (auto [w, h, name] : {std::tuple{17, 11, "bilinear_17x11.rgb"}, std::tuple{61, 37, "bilinear_61x37.rgb"}}) {
    const auto ref = raw_fixture(name, w, h);
    const auto ours = sb::resize_bilinear(src, w, h);
    int worst = 0;
    for (std::size_t i = 0; i < ours.size(); ++i) worst = std::max(worst, std::abs(ours.data()[i] - ref.data()[i]));
    EXPECT_LE(worst, 1) << name;
  }
}

TEST(Resample, LanczosKeepsConstantsAndIdentityScale) {
  EXPECT_EQ(sb::resize_lanczos3(flat(140), 384, 384), sb::ImageBuffer(384, 384, 140));
  EXPECT_EQ(sb::resize_lanczos3(natural(), 512, 512), natural());
  EXPECT_EQ(sb::resize_bilinear(natural(), 512, 512), natural());
}

TEST(Rotation, InscribedRectangle) {
  // Square of side s rotated by a: the inscribed square has side s / (cos a + sin a).
  const double a = 3.0 * std::numbers::pi / 180;
  const auto [w, h] = op::detail::max_inscribed_rect(512, 512, a);
  EXPECT_NEAR(w, 512 / (std::cos(a) + std::sin(a)), 1e-9);
  EXPECT_NEAR(h, w, 1e-9);
}

TEST(Rotation, OppositeAnglesMirror) {
  // Rotating a horizontally symmetric image by +a and -a gives mirror images.
  sb::ImageBuffer img = natural();
  for (int y = 0; y < 512; ++y)
    for (int x = 256; x < 512; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = img.at(511 - x, y, c);
  const auto p = op::apply(img, {8, 2, 0});
  const auto m = op::apply(img, {8, -2, 0});
  int worst = 0;
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x)
      for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(p.at(x, y, c) - m.at(511 - x, y, c)));
  EXPECT_LE(worst, 1);
}

TEST(Probe, GrayscaleOnGreyIsIdentity) {
  sb::ImageBuffer img = natural();
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x) img.at(x, y, 1) = img.at(x, y, 2) = img.at(x, y, 0);
  EXPECT_EQ(op::apply_probe(img, op::ChannelProbe::kGrayscale), img);
}

TEST(Probe, ContainerProbesKeepPixels) {
  const auto b = op::apply_probe(natural(), op::ChannelProbe::kBmp);
  EXPECT_EQ(b, natural());
  EXPECT_EQ(op::apply_probe(natural(), op::ChannelProbe::kCanonicalPng), natural());
  EXPECT_EQ(io::encode_bmp(b).size(), io::encode_bmp(flat(3)).size());
}

TEST(Probe, SocialMediaNearInvariantOnFlatGrey) {
  const auto img = flat(128);
  EXPECT_GT(op::psnr(img, op::apply_probe(img, op::ChannelProbe::kSocialMedia)), 45.0);
}

TEST(Probe, DownUpLosesDetailButKeepsGeometry) {
  const auto out = op::apply_probe(natural(), op::ChannelProbe::kDownUp);
  EXPECT_EQ(out.width(), 512);
  const double p = op::psnr(natural(), out);
  EXPECT_GT(p, 15.0);
  EXPECT_LT(p, 40.0);
}

TEST(Distortion, IdenticalImages) {
  const auto s = op::distortion_stats(natural(), natural());
  EXPECT_TRUE(std::isinf(s.psnr));
  EXPECT_EQ(s.mean_abs_diff, 0.0);
  EXPECT_EQ(s.changed_fraction, 0.0);
}

TEST(Distortion, OneSampleOff) {
  sb::ImageBuffer b = natural();
  b.at(10, 20, 1) ^= 1;
  const auto s = op::distortion_stats(natural(), b);
  EXPECT_EQ(s.changed_fraction, 1.0 / 262144.0);
  EXPECT_DOUBLE_EQ(s.mean_abs_diff, 1.0 / (262144.0 * 3));
  EXPECT_NEAR(s.psnr, 10 * std::log10(255.0 * 255.0 * 262144 * 3), 1e-9);
}

TEST(Distortion, Q75Band) {
  const auto s = op::distortion_stats(natural(), io::decode_bytes(io::encode_jpeg(natural(), 75)));
  EXPECT_GE(s.psnr, 25.0);
  EXPECT_LE(s.psnr, 35.0);
  EXPECT_GE(s.changed_fraction, 0.5);
  EXPECT_LE(s.changed_fraction, 0.9);
}

TEST(Distortion, GeometryMismatch) {
  expect_error(sb::Errc::kGeometryMismatch, [] { op::distortion_stats(natural(), sb::ImageBuffer(8, 8)); });
}
