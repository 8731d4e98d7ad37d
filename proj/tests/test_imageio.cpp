#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "stealthbench/imageio/imageio.hpp"
#include "stealthbench/operators.hpp"
#include "stealthbench/parallel.hpp"
#include "stealthbench/rng.hpp"
#include "stealthbench/synth.hpp"

namespace sb = stealthbench;
namespace io = stealthbench::imageio;

namespace {

std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(FIXTURE_DIR) / name; }

sb::ImageBuffer noise_image(int w, int h, std::uint64_t seed) {
  sb::Rng rng(seed);
  sb::ImageBuffer img(w, h);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
  return img;
}

double psnr(const sb::ImageBuffer& a, const sb::ImageBuffer& b) {
  return sb::operators::distortion_stats(a, b).psnr;
}

}  // namespace

TEST(Png, ZeroImageDecodesToZero) {
  sb::ImageBuffer img(512, 512, 0);
  const auto bytes = io::encode_png_canonical(img);
  const auto back = io::decode_bytes(bytes);
  ASSERT_EQ(back.width(), 512);
  for (auto v : back.data()) ASSERT_EQ(v, 0);
}

TEST(Png, CanonicalIsDeterministicLosslessAndBare) {
  const auto img = noise_image(67, 41, 3);
  const auto a = io::encode_png_canonical(img);
  const auto b = io::encode_png_canonical(img);
  EXPECT_EQ(a, b);
  EXPECT_EQ(io::decode_bytes(a), img);
  const auto report = io::audit_bytes(a);
  EXPECT_TRUE(report.ancillary_fields.empty());
  EXPECT_FALSE(report.has_color_profile);
  EXPECT_EQ(report.byte_size, a.size());
}

TEST(Png, InjectedTextChunkIsReported) {
  const auto img = noise_image(16, 16, 5);
  const std::string text = std::string("Comment") + '\0' + "made by attack";
  const auto png = io::insert_png_chunk(io::encode_png_canonical(img),
                                        "tEXt", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  const auto report = io::audit_bytes(png);
  ASSERT_EQ(report.ancillary_fields.size(), 1u);
  EXPECT_EQ(report.ancillary_fields[0].name, "tEXt");
  EXPECT_EQ(report.ancillary_fields[0].length, text.size());
  EXPECT_EQ(io::decode_bytes(png), img);
}

TEST(Png, CrcMismatchIsCorrupt) {
  auto png = io::encode_png_canonical(noise_image(8, 8, 1));
  png[png.size() - 20] ^= 0x55;
  try {
    io::decode_bytes(png);
    FAIL();
  } catch (const sb::Error& e) {
    EXPECT_EQ(e.code(), sb::Errc::kCorruptFile);
  }
}

TEST(Png, TruncationIsCorrupt) {
  auto png = io::encode_png_canonical(noise_image(32, 32, 2));
  png.resize(png.size() / 2);
  try {
    io::decode_bytes(png);
    FAIL();
  } catch (const sb::Error& e) {
    EXPECT_EQ(e.code(), sb::Errc::kCorruptFile);
  }
}

TEST(Png, ForeignEncodingsDecode) {
  // Palette, grey+alpha, RGBA and interlaced files written by another encoder.
  for (const char* name : {"pal.png", "ga.png", "rgba.png", "adam7.png", "gray4.png"}) {
    const auto img = io::decode(fixture(name));
    const auto expected = io::read_file(fixture(std::string(name) + ".rgb"));
    ASSERT_EQ(img.size(), expected.size()) << name;
    EXPECT_TRUE(std::equal(expected.begin(), expected.end(), img.data().begin())) << name;
  }
}

TEST(Png, SixteenBitUnsupported) {
  try {
    io::decode(fixture("rgb16.png"));
    FAIL();
  } catch (const sb::Error& e) {
    EXPECT_EQ(e.code(), sb::Errc::kUnsupportedFormat);
  }
}

TEST(Bmp, TwoByTwoLayout) {
  sb::ImageBuffer img(2, 2);
  // (x,y) -> rgb
  const std::uint8_t px[2][2][3] = {{{1, 2, 3}, {4, 5, 6}}, {{7, 8, 9}, {10, 11, 12}}};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = px[y][x][c];
  const auto bmp = io::encode_bmp(img);
  // 14 + 40 header bytes, rows padded from 6 to 8 bytes, stored bottom-up BGR.
  ASSERT_EQ(bmp.size(), 70u);
  EXPECT_EQ(bmp[0], 'B');
  EXPECT_EQ(bmp[1], 'M');
  EXPECT_EQ(bmp[2] | (bmp[3] << 8), 70);
  EXPECT_EQ(bmp[10], 54);
  EXPECT_EQ(bmp[28], 24);
  const std::vector<std::uint8_t> pixels(bmp.begin() + 54, bmp.end());
  const std::vector<std::uint8_t> expected = {9, 8, 7, 12, 11, 10, 0, 0, 3, 2, 1, 6, 5, 4, 0, 0};
  EXPECT_EQ(pixels, expected);
  EXPECT_EQ(io::decode_bytes(bmp), img);
}

TEST(Bmp, SizeDependsOnlyOnGeometry) {
  const auto a = io::encode_bmp(noise_image(512, 512, 1));
  const auto b = io::encode_bmp(sb::ImageBuffer(512, 512, 200));
  EXPECT_EQ(a.size(), b.size());
  EXPECT_EQ(a.size(), io::bmp_size(512, 512));
  const auto report = io::audit_bytes(a);
  EXPECT_TRUE(report.ancillary_fields.empty());
  EXPECT_EQ(report.byte_size, io::bmp_size(512, 512));
}

TEST(Bmp, RoundTripThroughPng) {
  const auto img = noise_image(33, 17, 9);
  const auto via_png = io::decode_bytes(io::encode_png_canonical(img));
  EXPECT_EQ(io::decode_bytes(io::encode_bmp(via_png)), via_png);
}

TEST(Bmp, ForeignVariantsDecode) {
  for (const char* name : {"pal8.bmp", "topdown32.bmp"}) {
    const auto img = io::decode(fixture(name));
    const auto expected = io::read_file(fixture(std::string(name) + ".rgb"));
    ASSERT_EQ(img.size(), expected.size()) << name;
    EXPECT_TRUE(std::equal(expected.begin(), expected.end(), img.data().begin())) << name;
  }
}

// Reference decodes were produced once by libjpeg-turbo (islow IDCT) and frozen.
TEST(Jpeg, SingleBlockFixturesMatchReferenceExactly) {
  for (const char* name : {"block8_444", "block8_gray"}) {
    const auto img = io::decode(fixture(std::string(name) + ".jpg"));
    const auto expected = io::read_file(fixture(std::string(name) + ".rgb"));
    ASSERT_EQ(img.width(), 8);
    ASSERT_EQ(img.height(), 8);
    EXPECT_TRUE(std::equal(expected.begin(), expected.end(), img.data().begin())) << name;
  }
}

TEST(Jpeg, SubsampledAndRestartFixturesMatchReference) {
  for (const char* name : {"odd_420_rst", "odd_422"}) {
    const auto img = io::decode(fixture(std::string(name) + ".jpg"));
    const auto expected = io::read_file(fixture(std::string(name) + ".rgb"));
    ASSERT_EQ(img.width(), 45);
    ASSERT_EQ(img.height(), 37);
    int worst = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      worst = std::max(worst, std::abs(int(expected[i]) - int(img.data()[i])));
    }
    EXPECT_EQ(worst, 0) << name;
  }
}

TEST(Jpeg, ProgressiveUnsupported) {
  try {
    io::decode(fixture("progressive.jpg"));
    FAIL();
  } catch (const sb::Error& e) {
    EXPECT_EQ(e.code(), sb::Errc::kUnsupportedFormat);
  }
}

TEST(Jpeg, InvalidQuality) {
  sb::ImageBuffer img(8, 8, 128);
  for (int q : {0, 101, -5}) {
    try {
      io::encode_jpeg(img, q);
      FAIL();
    } catch (const sb::Error& e) {
      EXPECT_EQ(e.code(), sb::Errc::kInvalidQuality);
    }
  }
}

TEST(Jpeg, FlatGrayQuality100IsNearLossless) {
  sb::ImageBuffer img(64, 48, 0);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 137;
  const auto back = io::decode_bytes(io::encode_jpeg(img, 100, io::ChromaSubsampling::k444));
  for (std::size_t i = 0; i < img.size(); ++i) {
    ASSERT_LE(std::abs(int(back.data()[i]) - int(img.data()[i])), 1);
  }
}

TEST(Jpeg, DeterministicForEverySubsampling) {
  const auto img = sb::synth::natural_image(512, 42);
  for (auto sub : {io::ChromaSubsampling::k444, io::ChromaSubsampling::k422, io::ChromaSubsampling::k420}) {
    const auto a = io::encode_jpeg(img, 75, sub);
    const auto b = io::encode_jpeg(img, 75, sub);
    EXPECT_EQ(a, b);
    EXPECT_EQ(io::sniff_format(a), io::Format::kJpeg);
  }
}

TEST(Jpeg, OurEncoderMatchesReferenceDecoder) {
  // Files emitted by our encoder, decoded by libjpeg-turbo once and frozen.
  for (const char* name : {"ours_q75_420", "ours_q90_444"}) {
    const auto bytes = io::read_file(fixture(std::string(name) + ".jpg"));
    const auto expected = io::read_file(fixture(std::string(name) + ".rgb"));
    const auto img = io::decode_bytes(bytes);
    ASSERT_EQ(img.size(), expected.size());
    EXPECT_TRUE(std::equal(expected.begin(), expected.end(), img.data().begin())) << name;
  }
}

TEST(Jpeg, PsnrMonotoneInQuality) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto img = sb::synth::natural_image(512, seed);
    double last = 0.0;
    for (int q : {50, 75, 90, 100}) {
      const double p = psnr(img, io::decode_bytes(io::encode_jpeg(img, q)));
      EXPECT_GE(p, last) << "q=" << q;
      last = p;
    }
  }
}

TEST(Jpeg, Q75NaturalFixtureBand) {
  const auto img = sb::synth::natural_image(512, 42);
  const auto stats = sb::operators::distortion_stats(img, io::decode_bytes(io::encode_jpeg(img, 75)));
  EXPECT_GE(stats.psnr, 25.0);
  EXPECT_LE(stats.psnr, 35.0);
  EXPECT_GE(stats.changed_fraction, 0.5);
  EXPECT_LE(stats.changed_fraction, 0.9);
}

TEST(Jpeg, AuditListsAppSegments) {
  const auto report = io::audit(fixture("block8_444.jpg"));
  EXPECT_EQ(report.format, io::Format::kJpeg);
  ASSERT_FALSE(report.ancillary_fields.empty());
  EXPECT_EQ(report.ancillary_fields[0].name, "APP0");
  EXPECT_EQ(report.ancillary_fields[0].length, 14u);
}

TEST(Jpeg, TruncationIsCorrupt) {
  auto bytes = io::encode_jpeg(noise_image(64, 64, 4), 80);
  bytes.resize(bytes.size() - 200);
  try {
    io::decode_bytes(bytes);
    FAIL();
  } catch (const sb::Error& e) {
    EXPECT_EQ(e.code(), sb::Errc::kCorruptFile);
  }
}

TEST(Codecs, WorkerCountDoesNotChangeBytes) {
  std::vector<sb::ImageBuffer> imgs;
  for (std::uint64_t s = 0; s < 6; ++s) imgs.push_back(sb::synth::natural_image(128, s));
  auto run = [&](int jobs) {
    std::vector<io::Bytes> out(imgs.size() * 3);
    sb::parallel_for(imgs.size(), jobs, [&](std::size_t i) {
      out[i * 3] = io::encode_jpeg(imgs[i], 80);
      out[i * 3 + 1] = io::encode_png_canonical(imgs[i]);
      out[i * 3 + 2] = io::encode_bmp(imgs[i]);
    });
    return out;
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Decode, UnknownSignature) {
  const io::Bytes junk = {'G', 'I', 'F', '8', '9', 'a', 0, 0};
  try {
    io::decode_bytes(junk);
    FAIL();
  } catch (const sb::Error& e) {
    EXPECT_EQ(e.code(), sb::Errc::kUnsupportedFormat);
  }
}
