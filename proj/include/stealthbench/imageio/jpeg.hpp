#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stealthbench/image.hpp"
#include "stealthbench/imageio/bytes.hpp"
#include "stealthbench/imageio/container.hpp"

namespace stealthbench::imageio {

enum class ChromaSubsampling { k444, k422, k420 };

inline const char* subsampling_name(ChromaSubsampling s) {
  switch (s) {
    case ChromaSubsampling::k444: return "444";
    case ChromaSubsampling::k422: return "422";
    case ChromaSubsampling::k420: return "420";
  }
  return "?";
}

namespace jpeg_detail {

// Natural-order index of the k-th zig-zag coefficient.
inline constexpr std::array<std::uint8_t, 64> kZigZag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

// ITU T.81 Annex K.1, natural order.
inline constexpr std::array<std::uint8_t, 64> kLumaQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
inline constexpr std::array<std::uint8_t, 64> kChromaQuant = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// ITU T.81 Annex K.3 Huffman tables.
inline constexpr std::array<std::uint8_t, 16> kDcLumaBits = {0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
inline constexpr std::array<std::uint8_t, 12> kDcValues = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
inline constexpr std::array<std::uint8_t, 16> kDcChromaBits = {0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
inline constexpr std::array<std::uint8_t, 16> kAcLumaBits = {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d};
inline constexpr std::array<std::uint8_t, 162> kAcLumaValues = {
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa};
inline constexpr std::array<std::uint8_t, 16> kAcChromaBits = {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77};
inline constexpr std::array<std::uint8_t, 162> kAcChromaValues = {
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa};

// round(2^13 * C(u)/2 * cos((2x+1)u*pi/16)); keeps the forward DCT integral.
inline constexpr std::int32_t kDctBasis[8][8] = {
    {2896, 2896, 2896, 2896, 2896, 2896, 2896, 2896},
    {4017, 3406, 2276, 799, -799, -2276, -3406, -4017},
    {3784, 1567, -1567, -3784, -3784, -1567, 1567, 3784},
    {3406, -799, -4017, -2276, 2276, 4017, 799, -3406},
    {2896, -2896, -2896, 2896, 2896, -2896, -2896, 2896},
    {2276, -4017, 799, 3406, -3406, -799, 4017, -2276},
    {1567, -3784, 3784, -1567, -1567, 3784, -3784, 1567},
    {799, -2276, 3406, -4017, 4017, -3406, 2276, -799}};

// IJG linear quality scaling, clamped to the baseline range.
inline std::array<std::uint16_t, 64> scaled_table(const std::array<std::uint8_t, 64>& base, int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - quality * 2;
  std::array<std::uint16_t, 64> out{};
  for (int i = 0; i < 64; ++i) {
    long v = (static_cast<long>(base[i]) * scale + 50) / 100;
    if (v < 1) v = 1;
    if (v > 255) v = 255;
    out[i] = static_cast<std::uint16_t>(v);
  }
  return out;
}

struct HuffCode {
  std::uint16_t code = 0;
  std::uint8_t length = 0;
};

template <std::size_t N>
std::array<HuffCode, 256> build_encode_table(const std::array<std::uint8_t, 16>& bits,
                                             const std::array<std::uint8_t, N>& values) {
  std::array<HuffCode, 256> table{};
  std::uint16_t code = 0;
  std::size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < bits[len - 1]; ++i) {
      table[values[k++]] = {code, static_cast<std::uint8_t>(len)};
      ++code;
    }
    code <<= 1;
  }
  return table;
}

class BitWriter {
 public:
  explicit BitWriter(Bytes& out) : out_(out) {}

  void put(std::uint32_t code, int length) {
    acc_ = (acc_ << length) | (code & ((1u << length) - 1));
    count_ += length;
    while (count_ >= 8) {
      count_ -= 8;
      const auto byte = static_cast<std::uint8_t>(acc_ >> count_);
      out_.push_back(byte);
      if (byte == 0xFF) out_.push_back(0);
    }
    acc_ &= (1u << count_) - 1;
  }
  void flush() {
    if (count_ > 0) put(0x7F, 8 - count_);
  }

 private:
  Bytes& out_;
  std::uint32_t acc_ = 0;
  int count_ = 0;
};

inline int magnitude_bits(int v) {
  int a = v < 0 ? -v : v;
  int n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

// Forward DCT + quantisation. Output is in zig-zag order. Rounds half away
// from zero in a single integer step.
inline void fdct_quantize(const std::int32_t block[64], const std::array<std::uint16_t, 64>& qt,
                          std::int32_t out_zz[64]) {
  std::int64_t tmp[64];
  std::int64_t coef[64];
  for (int y = 0; y < 8; ++y) {
    for (int u = 0; u < 8; ++u) {
      std::int64_t s = 0;
      for (int x = 0; x < 8; ++x) s += static_cast<std::int64_t>(kDctBasis[u][x]) * block[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  }
  for (int v = 0; v < 8; ++v) {
    for (int u = 0; u < 8; ++u) {
      std::int64_t s = 0;
      for (int y = 0; y < 8; ++y) s += kDctBasis[v][y] * tmp[y * 8 + u];
      // s = F(u,v) * 2^26
      const std::int64_t q = static_cast<std::int64_t>(qt[v * 8 + u]) << 26;
      const std::int64_t r = s >= 0 ? (s + q / 2) / q : -((-s + q / 2) / q);
      coef[v * 8 + u] = r;
    }
  }
  for (int k = 0; k < 64; ++k) out_zz[k] = static_cast<std::int32_t>(coef[kZigZag[k]]);
}

struct Plane {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;
  std::uint8_t at_clamped(int x, int y) const {
    x = x < width ? x : width - 1;
    y = y < height ? y : height - 1;
    return samples[static_cast<std::size_t>(y) * width + x];
  }
};

// libjpeg fixed-point constants (16 fractional bits).
inline constexpr std::int32_t kScaleBits = 16;
inline constexpr std::int32_t kOneHalf = 1 << (kScaleBits - 1);
inline constexpr std::int32_t kCbCrOffset = 128 << kScaleBits;

inline void rgb_to_ycc(std::uint8_t r, std::uint8_t g, std::uint8_t b, std::uint8_t& y, std::uint8_t& cb,
                       std::uint8_t& cr) {
  y = static_cast<std::uint8_t>((19595 * r + 38470 * g + 7471 * b + kOneHalf) >> kScaleBits);
  cb = static_cast<std::uint8_t>((-11059 * r - 21709 * g + 32768 * b + kCbCrOffset + kOneHalf - 1) >> kScaleBits);
  cr = static_cast<std::uint8_t>((32768 * r - 27439 * g - 5329 * b + kCbCrOffset + kOneHalf - 1) >> kScaleBits);
}

inline std::uint8_t clamp_sample(int v) {
  return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

inline void ycc_to_rgb(int y, int cb, int cr, std::uint8_t rgb[3]) {
  const int x_cb = cb - 128;
  const int x_cr = cr - 128;
  const int r_off = (91881 * x_cr + kOneHalf) >> kScaleBits;
  const int b_off = (116130 * x_cb + kOneHalf) >> kScaleBits;
  const int g_off = (-22554 * x_cb + kOneHalf - 46802 * x_cr) >> kScaleBits;
  rgb[0] = clamp_sample(y + r_off);
  rgb[1] = clamp_sample(y + g_off);
  rgb[2] = clamp_sample(y + b_off);
}

inline void write_marker_segment(Bytes& out, std::uint8_t marker, std::span<const std::uint8_t> payload) {
  out.push_back(0xFF);
  out.push_back(marker);
  put_u16be(out, static_cast<std::uint32_t>(payload.size() + 2));
  out.insert(out.end(), payload.begin(), payload.end());
}

template <std::size_t N>
void append_dht(Bytes& seg, std::uint8_t cls_id, const std::array<std::uint8_t, 16>& bits,
                const std::array<std::uint8_t, N>& values) {
  seg.push_back(cls_id);
  seg.insert(seg.end(), bits.begin(), bits.end());
  seg.insert(seg.end(), values.begin(), values.end());
}

}  // namespace jpeg_detail

// Baseline sequential JFIF encoder with Annex K tables and IJG quality
// scaling. Pure integer arithmetic, so output is identical on every platform.
inline Bytes encode_jpeg(const ImageBuffer& img, int quality,
                         ChromaSubsampling subsampling = ChromaSubsampling::k420) {
  using namespace jpeg_detail;
  if (quality < 1 || quality > 100) {
    throw Error(Errc::kInvalidQuality, "JPEG quality must be in 1..100, got " + std::to_string(quality));
  }
  const int w = img.width();
  const int h = img.height();
  const int hs = subsampling == ChromaSubsampling::k444 ? 1 : 2;
  const int vs = subsampling == ChromaSubsampling::k420 ? 2 : 1;

  Plane planes[3];
  for (auto& p : planes) {
    p.width = w;
    p.height = h;
    p.samples.resize(static_cast<std::size_t>(w) * h);
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      rgb_to_ycc(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2), planes[0].samples[i],
                 planes[1].samples[i], planes[2].samples[i]);
    }
  }
  const int mcu_w = 8 * hs;
  const int mcu_h = 8 * vs;
  const int mcus_x = (w + mcu_w - 1) / mcu_w;
  const int mcus_y = (h + mcu_h - 1) / mcu_h;
  // Chroma planes downsampled over the padded MCU area with libjpeg's
  // alternating rounding bias.
  Plane chroma[2];
  const int cw = mcus_x * 8;
  const int ch = mcus_y * 8;
  for (int c = 0; c < 2; ++c) {
    const Plane& src = planes[c + 1];
    Plane& dst = chroma[c];
    dst.width = cw;
    dst.height = ch;
    dst.samples.resize(static_cast<std::size_t>(cw) * ch);
    for (int y = 0; y < ch; ++y) {
      int bias = (hs == 2 && vs == 2) ? 1 : 0;
      for (int x = 0; x < cw; ++x) {
        int v;
        if (hs == 1 && vs == 1) {
          v = src.at_clamped(x, y);
        } else if (vs == 1) {
          v = (src.at_clamped(2 * x, y) + src.at_clamped(2 * x + 1, y) + bias) >> 1;
          bias ^= 1;
        } else {
          v = (src.at_clamped(2 * x, 2 * y) + src.at_clamped(2 * x + 1, 2 * y) +
               src.at_clamped(2 * x, 2 * y + 1) + src.at_clamped(2 * x + 1, 2 * y + 1) + bias) >> 2;
          bias ^= 3;
        }
        dst.samples[static_cast<std::size_t>(y) * cw + x] = static_cast<std::uint8_t>(v);
      }
    }
  }

  const auto luma_q = scaled_table(kLumaQuant, quality);
  const auto chroma_q = scaled_table(kChromaQuant, quality);
  static const auto dc_luma = build_encode_table(kDcLumaBits, kDcValues);
  static const auto dc_chroma = build_encode_table(kDcChromaBits, kDcValues);
  static const auto ac_luma = build_encode_table(kAcLumaBits, kAcLumaValues);
  static const auto ac_chroma = build_encode_table(kAcChromaBits, kAcChromaValues);

  Bytes out;
  out.reserve(static_cast<std::size_t>(w) * h);
  out.push_back(0xFF);
  out.push_back(0xD8);
  {
    const Bytes app0 = {'J', 'F', 'I', 'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0};
    write_marker_segment(out, 0xE0, app0);
  }
  {
    Bytes dqt;
    dqt.push_back(0);
    for (int k = 0; k < 64; ++k) dqt.push_back(static_cast<std::uint8_t>(luma_q[kZigZag[k]]));
    dqt.push_back(1);
    for (int k = 0; k < 64; ++k) dqt.push_back(static_cast<std::uint8_t>(chroma_q[kZigZag[k]]));
    write_marker_segment(out, 0xDB, dqt);
  }
  {
    Bytes sof;
    sof.push_back(8);
    put_u16be(sof, static_cast<std::uint32_t>(h));
    put_u16be(sof, static_cast<std::uint32_t>(w));
    sof.push_back(3);
    sof.insert(sof.end(), {1, static_cast<std::uint8_t>((hs << 4) | vs), 0});
    sof.insert(sof.end(), {2, 0x11, 1});
    sof.insert(sof.end(), {3, 0x11, 1});
    write_marker_segment(out, 0xC0, sof);
  }
  {
    Bytes dht;
    append_dht(dht, 0x00, kDcLumaBits, kDcValues);
    append_dht(dht, 0x10, kAcLumaBits, kAcLumaValues);
    append_dht(dht, 0x01, kDcChromaBits, kDcValues);
    append_dht(dht, 0x11, kAcChromaBits, kAcChromaValues);
    write_marker_segment(out, 0xC4, dht);
  }
  {
    const Bytes sos = {3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0};
    write_marker_segment(out, 0xDA, sos);
  }

  BitWriter bw(out);
  int prev_dc[3] = {0, 0, 0};
  auto encode_block = [&](const Plane& plane, int bx, int by, int comp) {
    std::int32_t block[64];
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        block[y * 8 + x] = static_cast<std::int32_t>(plane.at_clamped(bx + x, by + y)) - 128;
      }
    }
    std::int32_t zz[64];
    fdct_quantize(block, comp == 0 ? luma_q : chroma_q, zz);
    const auto& dct = comp == 0 ? dc_luma : dc_chroma;
    const auto& act = comp == 0 ? ac_luma : ac_chroma;
    const int diff = zz[0] - prev_dc[comp];
    prev_dc[comp] = zz[0];
    const int dbits = magnitude_bits(diff);
    bw.put(dct[dbits].code, dct[dbits].length);
    if (dbits) bw.put(diff < 0 ? diff - 1 : diff, dbits);
    int run = 0;
    for (int k = 1; k < 64; ++k) {
      const int v = zz[k];
      if (v == 0) {
        ++run;
        continue;
      }
      while (run > 15) {
        bw.put(act[0xF0].code, act[0xF0].length);
        run -= 16;
      }
      const int nb = magnitude_bits(v);
      const int sym = (run << 4) | nb;
      bw.put(act[sym].code, act[sym].length);
      bw.put(v < 0 ? v - 1 : v, nb);
      run = 0;
    }
    if (run > 0) bw.put(act[0x00].code, act[0x00].length);
  };
  for (int my = 0; my < mcus_y; ++my) {
    for (int mx = 0; mx < mcus_x; ++mx) {
      for (int v = 0; v < vs; ++v) {
        for (int u = 0; u < hs; ++u) encode_block(planes[0], mx * mcu_w + u * 8, my * mcu_h + v * 8, 0);
      }
      encode_block(chroma[0], mx * 8, my * 8, 1);
      encode_block(chroma[1], mx * 8, my * 8, 2);
    }
  }
  bw.flush();
  out.push_back(0xFF);
  out.push_back(0xD9);
  return out;
}

namespace jpeg_detail {

// Integer inverse DCT bit-compatible with libjpeg's "islow" method
// (CONST_BITS 13, PASS1_BITS 2). Input is dequantised natural-order
// coefficients; output samples are level-shifted and clamped.
inline void idct_islow(const std::int32_t in[64], std::uint8_t out[64]) {
  constexpr int kConstBits = 13;
  constexpr int kPass1Bits = 2;
  constexpr std::int64_t F0_298 = 2446, F0_390 = 3196, F0_541 = 4433, F0_765 = 6270, F0_899 = 7373,
                         F1_175 = 9633, F1_501 = 12299, F1_847 = 15137, F1_961 = 16069, F2_053 = 16819,
                         F2_562 = 20995, F3_072 = 25172;
  auto descale = [](std::int64_t x, int n) { return (x + (std::int64_t{1} << (n - 1))) >> n; };
  std::int64_t ws[64];
  for (int col = 0; col < 8; ++col) {
    const std::int32_t* c = in + col;
    if (c[8] == 0 && c[16] == 0 && c[24] == 0 && c[32] == 0 && c[40] == 0 && c[48] == 0 && c[56] == 0) {
      const std::int64_t dc = static_cast<std::int64_t>(c[0]) << kPass1Bits;
      for (int r = 0; r < 8; ++r) ws[r * 8 + col] = dc;
      continue;
    }
    std::int64_t z2 = c[16], z3 = c[48];
    std::int64_t z1 = (z2 + z3) * F0_541;
    std::int64_t tmp2 = z1 + z3 * (-F1_847);
    std::int64_t tmp3 = z1 + z2 * F0_765;
    z2 = c[0];
    z3 = c[32];
    std::int64_t tmp0 = (z2 + z3) << kConstBits;
    std::int64_t tmp1 = (z2 - z3) << kConstBits;
    const std::int64_t tmp10 = tmp0 + tmp3, tmp13 = tmp0 - tmp3;
    const std::int64_t tmp11 = tmp1 + tmp2, tmp12 = tmp1 - tmp2;
    tmp0 = c[56];
    tmp1 = c[40];
    tmp2 = c[24];
    tmp3 = c[8];
    z1 = tmp0 + tmp3;
    z2 = tmp1 + tmp2;
    z3 = tmp0 + tmp2;
    std::int64_t z4 = tmp1 + tmp3;
    const std::int64_t z5 = (z3 + z4) * F1_175;
    tmp0 *= F0_298;
    tmp1 *= F2_053;
    tmp2 *= F3_072;
    tmp3 *= F1_501;
    z1 *= -F0_899;
    z2 *= -F2_562;
    z3 *= -F1_961;
    z4 *= -F0_390;
    z3 += z5;
    z4 += z5;
    tmp0 += z1 + z3;
    tmp1 += z2 + z4;
    tmp2 += z2 + z3;
    tmp3 += z1 + z4;
    constexpr int s = kConstBits - kPass1Bits;
    ws[0 * 8 + col] = descale(tmp10 + tmp3, s);
    ws[7 * 8 + col] = descale(tmp10 - tmp3, s);
    ws[1 * 8 + col] = descale(tmp11 + tmp2, s);
    ws[6 * 8 + col] = descale(tmp11 - tmp2, s);
    ws[2 * 8 + col] = descale(tmp12 + tmp1, s);
    ws[5 * 8 + col] = descale(tmp12 - tmp1, s);
    ws[3 * 8 + col] = descale(tmp13 + tmp0, s);
    ws[4 * 8 + col] = descale(tmp13 - tmp0, s);
  }
  auto emit = [](std::int64_t v) { return clamp_sample(static_cast<int>(v) + 128); };
  for (int row = 0; row < 8; ++row) {
    const std::int64_t* w = ws + row * 8;
    std::uint8_t* o = out + row * 8;
    if (w[1] == 0 && w[2] == 0 && w[3] == 0 && w[4] == 0 && w[5] == 0 && w[6] == 0 && w[7] == 0) {
      const std::uint8_t v = emit(descale(w[0], kPass1Bits + 3));
      for (int i = 0; i < 8; ++i) o[i] = v;
      continue;
    }
    std::int64_t z2 = w[2], z3 = w[6];
    std::int64_t z1 = (z2 + z3) * F0_541;
    std::int64_t tmp2 = z1 + z3 * (-F1_847);
    std::int64_t tmp3 = z1 + z2 * F0_765;
    std::int64_t tmp0 = (w[0] + w[4]) << kConstBits;
    std::int64_t tmp1 = (w[0] - w[4]) << kConstBits;
    const std::int64_t tmp10 = tmp0 + tmp3, tmp13 = tmp0 - tmp3;
    const std::int64_t tmp11 = tmp1 + tmp2, tmp12 = tmp1 - tmp2;
    tmp0 = w[7];
    tmp1 = w[5];
    tmp2 = w[3];
    tmp3 = w[1];
    z1 = tmp0 + tmp3;
    z2 = tmp1 + tmp2;
    z3 = tmp0 + tmp2;
    std::int64_t z4 = tmp1 + tmp3;
    const std::int64_t z5 = (z3 + z4) * F1_175;
    tmp0 *= F0_298;
    tmp1 *= F2_053;
    tmp2 *= F3_072;
    tmp3 *= F1_501;
    z1 *= -F0_899;
    z2 *= -F2_562;
    z3 *= -F1_961;
    z4 *= -F0_390;
    z3 += z5;
    z4 += z5;
    tmp0 += z1 + z3;
    tmp1 += z2 + z4;
    tmp2 += z2 + z3;
    tmp3 += z1 + z4;
    constexpr int s = kConstBits + kPass1Bits + 3;
    o[0] = emit(descale(tmp10 + tmp3, s));
    o[7] = emit(descale(tmp10 - tmp3, s));
    o[1] = emit(descale(tmp11 + tmp2, s));
    o[6] = emit(descale(tmp11 - tmp2, s));
    o[2] = emit(descale(tmp12 + tmp1, s));
    o[5] = emit(descale(tmp12 - tmp1, s));
    o[3] = emit(descale(tmp13 + tmp0, s));
    o[4] = emit(descale(tmp13 - tmp0, s));
  }
}

struct DecodeTable {
  bool defined = false;
  std::array<std::int32_t, 18> maxcode{};
  std::array<std::int32_t, 17> valptr{};
  std::array<std::int32_t, 17> mincode{};
  std::vector<std::uint8_t> values;
};

inline DecodeTable build_decode_table(std::span<const std::uint8_t> bits, std::span<const std::uint8_t> values) {
  DecodeTable t;
  t.defined = true;
  t.values.assign(values.begin(), values.end());
  std::int32_t code = 0;
  std::int32_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    const int n = bits[len - 1];
    if (n == 0) {
      t.maxcode[len] = -1;
    } else {
      t.valptr[len] = k;
      t.mincode[len] = code;
      code += n;
      k += n;
      t.maxcode[len] = code - 1;
    }
    code <<= 1;
  }
  t.maxcode[17] = 0x7FFFFFFF;
  return t;
}

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

  int bit() {
    if (count_ == 0) fill();
    --count_;
    return (acc_ >> count_) & 1;
  }
  int bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | bit();
    return v;
  }
  int decode(const DecodeTable& t) {
    std::int32_t code = bit();
    int len = 1;
    while (len <= 16 && code > t.maxcode[len]) {
      code = (code << 1) | bit();
      ++len;
    }
    if (len > 16) throw Error(Errc::kCorruptFile, "invalid Huffman code");
    const std::size_t idx = static_cast<std::size_t>(t.valptr[len] + code - t.mincode[len]);
    if (idx >= t.values.size()) throw Error(Errc::kCorruptFile, "invalid Huffman code");
    return t.values[idx];
  }
  // Discards buffered bits and consumes an expected RSTn marker.
  void restart() {
    count_ = 0;
    acc_ = 0;
    if (pos_ + 1 < data_.size() && data_[pos_] == 0xFF && data_[pos_ + 1] >= 0xD0 && data_[pos_ + 1] <= 0xD7) {
      pos_ += 2;
    } else {
      throw Error(Errc::kCorruptFile, "missing restart marker");
    }
  }
  // Byte position of the first marker after the entropy-coded segment.
  std::size_t end_position() {
    std::size_t p = pos_;
    while (p + 1 < data_.size()) {
      if (data_[p] == 0xFF && data_[p + 1] != 0 && !(data_[p + 1] >= 0xD0 && data_[p + 1] <= 0xD7)) return p;
      ++p;
    }
    throw Error(Errc::kCorruptFile, "JPEG entropy data truncated");
  }

 private:
  void fill() {
    if (pos_ >= data_.size()) throw Error(Errc::kCorruptFile, "JPEG entropy data truncated");
    std::uint8_t b = data_[pos_];
    if (b == 0xFF) {
      if (pos_ + 1 >= data_.size()) throw Error(Errc::kCorruptFile, "JPEG entropy data truncated");
      const std::uint8_t next = data_[pos_ + 1];
      if (next == 0x00) {
        pos_ += 2;
      } else {
        throw Error(Errc::kCorruptFile, "JPEG entropy data ended early");
      }
    } else {
      ++pos_;
    }
    acc_ = b;
    count_ = 8;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_;
  std::uint32_t acc_ = 0;
  int count_ = 0;
};

inline int extend(int v, int nbits) {
  return nbits == 0 ? 0 : (v < (1 << (nbits - 1)) ? v - (1 << nbits) + 1 : v);
}

struct Component {
  int id = 0;
  int h = 1;
  int v = 1;
  int tq = 0;
  int blocks_w = 0;  // blocks per line in the padded (MCU-aligned) plane
  int blocks_h = 0;
  int width = 0;     // ceil(image_w * h / hmax)
  int height = 0;
  std::vector<std::int32_t> coefs;
  int pred = 0;
};

// libjpeg-style triangle ("fancy") upsampling for the common 2x1 and 2x2
// cases, pixel replication otherwise.
inline std::vector<std::uint8_t> upsample(const std::vector<std::uint8_t>& plane, int pw, int comp_w, int comp_h,
                                          int fx, int fy, int out_w, int out_h) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_w) * out_h);
  auto in = [&](int x, int y) -> int {
    x = x < 0 ? 0 : (x >= comp_w ? comp_w - 1 : x);
    y = y < 0 ? 0 : (y >= comp_h ? comp_h - 1 : y);
    return plane[static_cast<std::size_t>(y) * pw + x];
  };
  if (fx == 1 && fy == 1) {
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out[static_cast<std::size_t>(y) * out_w + x] = static_cast<std::uint8_t>(in(x, y));
    return out;
  }
  if (fx == 2 && fy == 1) {
    std::vector<std::uint8_t> line(static_cast<std::size_t>(comp_w) * 2);
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < comp_w; ++x) {
        const int c = in(x, y) * 3;
        if (comp_w == 1) {
          line[0] = line[1] = static_cast<std::uint8_t>(in(0, y));
          break;
        }
        line[2 * x] = static_cast<std::uint8_t>(x == 0 ? in(0, y) : (c + in(x - 1, y) + 1) >> 2);
        line[2 * x + 1] = static_cast<std::uint8_t>(x == comp_w - 1 ? in(x, y) : (c + in(x + 1, y) + 2) >> 2);
      }
      for (int x = 0; x < out_w; ++x) out[static_cast<std::size_t>(y) * out_w + x] = line[x];
    }
    return out;
  }
  if (fx == 2 && fy == 2) {
    std::vector<std::uint8_t> line(static_cast<std::size_t>(comp_w) * 2);
    for (int oy = 0; oy < out_h; ++oy) {
      const int iy = oy / 2;
      const int ny = (oy % 2 == 0) ? iy - 1 : iy + 1;
      auto colsum = [&](int x) { return in(x, iy) * 3 + in(x, ny); };
      if (comp_w == 1) {
        line[0] = static_cast<std::uint8_t>((colsum(0) * 4 + 8) >> 4);
        line[1] = static_cast<std::uint8_t>((colsum(0) * 4 + 7) >> 4);
      } else {
        for (int x = 0; x < comp_w; ++x) {
          const int t = colsum(x);
          line[2 * x] = static_cast<std::uint8_t>(x == 0 ? (t * 4 + 8) >> 4 : (t * 3 + colsum(x - 1) + 8) >> 4);
          line[2 * x + 1] =
              static_cast<std::uint8_t>(x == comp_w - 1 ? (t * 4 + 7) >> 4 : (t * 3 + colsum(x + 1) + 7) >> 4);
        }
      }
      for (int x = 0; x < out_w; ++x) out[static_cast<std::size_t>(oy) * out_w + x] = line[x];
    }
    return out;
  }
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      out[static_cast<std::size_t>(y) * out_w + x] = static_cast<std::uint8_t>(in(x / fx, y / fy));
  return out;
}

}  // namespace jpeg_detail

// Decodes baseline and extended-sequential (8-bit Huffman) JPEG. Progressive,
// arithmetic-coded, lossless and 12-bit streams raise UnsupportedFormat.
inline ImageBuffer decode_jpeg(std::span<const std::uint8_t> bytes) {
  using namespace jpeg_detail;
  Reader r(bytes);
  if (r.u8() != 0xFF || r.u8() != 0xD8) throw Error(Errc::kUnsupportedFormat, "not a JPEG file");

  std::array<std::array<std::uint16_t, 64>, 4> qtables{};
  std::array<bool, 4> qdefined{};
  std::array<DecodeTable, 4> dc_tables, ac_tables;
  std::vector<Component> comps;
  int width = 0, height = 0, hmax = 1, vmax = 1, mcus_x = 0, mcus_y = 0;
  int restart_interval = 0;
  bool frame_seen = false;
  bool adobe_rgb = false;
  bool eoi = false;

  while (!eoi) {
    std::uint8_t m = r.u8();
    if (m != 0xFF) throw Error(Errc::kCorruptFile, "expected JPEG marker");
    std::uint8_t marker = r.u8();
    while (marker == 0xFF) marker = r.u8();
    if (marker == 0xD9) {
      eoi = true;
      break;
    }
    if (marker >= 0xD0 && marker <= 0xD7) continue;
    const std::uint16_t len = r.u16be();
    if (len < 2) throw Error(Errc::kCorruptFile, "bad JPEG segment length");
    const std::size_t seg_start = r.pos();
    const auto seg = r.take(len - 2);
    Reader s(seg);
    switch (marker) {
      case 0xC0:
      case 0xC1: {
        if (frame_seen) throw Error(Errc::kCorruptFile, "multiple frames");
        frame_seen = true;
        if (s.u8() != 8) throw Error(Errc::kUnsupportedFormat, "only 8-bit JPEG is supported");
        height = s.u16be();
        width = s.u16be();
        const int nc = s.u8();
        if (width == 0 || height == 0) throw Error(Errc::kUnsupportedFormat, "JPEG with DNL height");
        if (nc != 1 && nc != 3) throw Error(Errc::kUnsupportedFormat, "unsupported JPEG component count");
        for (int i = 0; i < nc; ++i) {
          Component c;
          c.id = s.u8();
          const int hv = s.u8();
          c.h = hv >> 4;
          c.v = hv & 15;
          c.tq = s.u8();
          if (c.h < 1 || c.h > 4 || c.v < 1 || c.v > 4 || c.tq > 3) {
            throw Error(Errc::kCorruptFile, "bad JPEG component parameters");
          }
          hmax = std::max(hmax, c.h);
          vmax = std::max(vmax, c.v);
          comps.push_back(std::move(c));
        }
        mcus_x = (width + 8 * hmax - 1) / (8 * hmax);
        mcus_y = (height + 8 * vmax - 1) / (8 * vmax);
        for (auto& c : comps) {
          c.blocks_w = mcus_x * c.h;
          c.blocks_h = mcus_y * c.v;
          c.width = (width * c.h + hmax - 1) / hmax;
          c.height = (height * c.v + vmax - 1) / vmax;
          c.coefs.assign(static_cast<std::size_t>(c.blocks_w) * c.blocks_h * 64, 0);
        }
        break;
      }
      case 0xC2: case 0xC3: case 0xC5: case 0xC6: case 0xC7:
      case 0xC9: case 0xCA: case 0xCB: case 0xCD: case 0xCE: case 0xCF:
        throw Error(Errc::kUnsupportedFormat, "only baseline/sequential Huffman JPEG is supported");
      case 0xC4: {
        while (!s.done()) {
          const int tc_th = s.u8();
          const int tc = tc_th >> 4;
          const int th = tc_th & 15;
          if (tc > 1 || th > 3) throw Error(Errc::kCorruptFile, "bad DHT table id");
          const auto bits = s.take(16);
          std::size_t total = 0;
          for (auto b : bits) total += b;
          if (total > 256) throw Error(Errc::kCorruptFile, "bad DHT symbol count");
          const auto vals = s.take(total);
          (tc == 0 ? dc_tables : ac_tables)[th] = build_decode_table(bits, vals);
        }
        break;
      }
      case 0xDB: {
        while (!s.done()) {
          const int pq_tq = s.u8();
          const int pq = pq_tq >> 4;
          const int tq = pq_tq & 15;
          if (tq > 3 || pq > 1) throw Error(Errc::kCorruptFile, "bad DQT");
          for (int k = 0; k < 64; ++k) qtables[tq][kZigZag[k]] = pq ? s.u16be() : s.u8();
          qdefined[tq] = true;
        }
        break;
      }
      case 0xDD:
        restart_interval = s.u16be();
        break;
      case 0xEE:
        if (seg.size() >= 12 && std::equal(seg.begin(), seg.begin() + 5, "Adobe")) adobe_rgb = seg[11] == 0;
        break;
      case 0xDA: {
        if (!frame_seen) throw Error(Errc::kCorruptFile, "SOS before SOF");
        const int ns = s.u8();
        std::vector<Component*> scomps;
        std::vector<int> td, ta;
        for (int i = 0; i < ns; ++i) {
          const int cid = s.u8();
          const int t = s.u8();
          Component* found = nullptr;
          for (auto& c : comps) {
            if (c.id == cid) found = &c;
          }
          if (!found) throw Error(Errc::kCorruptFile, "SOS references unknown component");
          scomps.push_back(found);
          td.push_back(t >> 4);
          ta.push_back(t & 15);
          if ((t >> 4) > 3 || (t & 15) > 3 || !dc_tables[t >> 4].defined || !ac_tables[t & 15].defined) {
            throw Error(Errc::kCorruptFile, "SOS references undefined Huffman table");
          }
        }
        const int ss = s.u8();
        const int se = s.u8();
        s.u8();
        if (ss != 0 || se != 63) throw Error(Errc::kUnsupportedFormat, "spectral selection not supported");

        BitReader br(bytes, seg_start + seg.size());
        for (auto* c : scomps) c->pred = 0;
        auto decode_block = [&](Component& c, int idx, int bx, int by) {
          std::int32_t* blk = c.coefs.data() + (static_cast<std::size_t>(by) * c.blocks_w + bx) * 64;
          const int t = br.decode(dc_tables[td[idx]]);
          if (t > 11) throw Error(Errc::kCorruptFile, "bad DC magnitude");
          const int diff = extend(br.bits(t), t);
          c.pred += diff;
          blk[0] = c.pred;
          for (int k = 1; k < 64;) {
            const int rs = br.decode(ac_tables[ta[idx]]);
            const int run = rs >> 4;
            const int size = rs & 15;
            if (size == 0) {
              if (run == 15) {
                k += 16;
                continue;
              }
              break;
            }
            k += run;
            if (k > 63) throw Error(Errc::kCorruptFile, "AC coefficient index overflow");
            blk[kZigZag[k]] = extend(br.bits(size), size);
            ++k;
          }
        };
        int mcu_count = 0;
        auto maybe_restart = [&](int total_units) {
          ++mcu_count;
          if (restart_interval > 0 && mcu_count % restart_interval == 0 && mcu_count < total_units) {
            br.restart();
            for (auto* c : scomps) c->pred = 0;
          }
        };
        if (ns == 1) {
          Component& c = *scomps[0];
          const int bw = (c.width + 7) / 8;
          const int bh = (c.height + 7) / 8;
          for (int by = 0; by < bh; ++by) {
            for (int bx = 0; bx < bw; ++bx) {
              decode_block(c, 0, bx, by);
              maybe_restart(bw * bh);
            }
          }
        } else {
          for (int my = 0; my < mcus_y; ++my) {
            for (int mx = 0; mx < mcus_x; ++mx) {
              for (int i = 0; i < ns; ++i) {
                Component& c = *scomps[i];
                for (int v = 0; v < c.v; ++v)
                  for (int u = 0; u < c.h; ++u) decode_block(c, i, mx * c.h + u, my * c.v + v);
              }
              maybe_restart(mcus_x * mcus_y);
            }
          }
        }
        r.seek(br.end_position());
        break;
      }
      default:
        break;  // APPn, COM and other non-structural segments
    }
  }
  if (!frame_seen) throw Error(Errc::kCorruptFile, "JPEG without frame header");

  std::vector<std::vector<std::uint8_t>> full(comps.size());
  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    Component& c = comps[ci];
    if (!qdefined[c.tq]) throw Error(Errc::kCorruptFile, "undefined quantization table");
    const int pw = c.blocks_w * 8;
    std::vector<std::uint8_t> plane(static_cast<std::size_t>(pw) * c.blocks_h * 8);
    std::int32_t deq[64];
    std::uint8_t px[64];
    for (int by = 0; by < c.blocks_h; ++by) {
      for (int bx = 0; bx < c.blocks_w; ++bx) {
        const std::int32_t* blk = c.coefs.data() + (static_cast<std::size_t>(by) * c.blocks_w + bx) * 64;
        for (int k = 0; k < 64; ++k) deq[k] = blk[k] * qtables[c.tq][k];
        idct_islow(deq, px);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            plane[static_cast<std::size_t>(by * 8 + y) * pw + bx * 8 + x] = px[y * 8 + x];
      }
    }
    full[ci] = upsample(plane, pw, c.width, c.height, hmax / c.h, vmax / c.v, width, height);
  }

  ImageBuffer img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      if (comps.size() == 1) {
        img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = full[0][i];
      } else if (adobe_rgb) {
        for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = full[ch][i];
      } else {
        std::uint8_t rgb[3];
        ycc_to_rgb(full[0][i], full[1][i], full[2][i], rgb);
        img.at(x, y, 0) = rgb[0];
        img.at(x, y, 1) = rgb[1];
        img.at(x, y, 2) = rgb[2];
      }
    }
  }
  return img;
}

// Lists APPn/COM segments (and trailing bytes after EOI) as ancillary fields.
inline ContainerReport audit_jpeg(std::span<const std::uint8_t> bytes) {
  ContainerReport report;
  report.format = Format::kJpeg;
  report.byte_size = bytes.size();
  Reader r(bytes);
  if (r.u8() != 0xFF || r.u8() != 0xD8) throw Error(Errc::kUnsupportedFormat, "not a JPEG file");
  for (;;) {
    if (r.u8() != 0xFF) throw Error(Errc::kCorruptFile, "expected JPEG marker");
    std::uint8_t marker = r.u8();
    while (marker == 0xFF) marker = r.u8();
    if (marker == 0xD9) break;
    if (marker >= 0xD0 && marker <= 0xD7) continue;
    const std::uint16_t len = r.u16be();
    if (len < 2) throw Error(Errc::kCorruptFile, "bad JPEG segment length");
    const auto seg = r.take(len - 2);
    if ((marker >= 0xE0 && marker <= 0xEF) || marker == 0xFE) {
      std::string name = marker == 0xFE ? "COM" : "APP" + std::to_string(marker - 0xE0);
      if (marker == 0xE2 && seg.size() >= 12 && std::equal(seg.begin(), seg.begin() + 11, "ICC_PROFILE")) {
        report.has_color_profile = true;
        name += ":ICC_PROFILE";
      }
      report.ancillary_fields.push_back({name, seg.size()});
    }
    if (marker == 0xDA) {
      // Skip entropy-coded data up to the next non-RST marker.
      std::size_t p = r.pos();
      while (p + 1 < bytes.size() &&
             !(bytes[p] == 0xFF && bytes[p + 1] != 0 && !(bytes[p + 1] >= 0xD0 && bytes[p + 1] <= 0xD7))) {
        ++p;
      }
      if (p + 1 >= bytes.size()) throw Error(Errc::kCorruptFile, "JPEG entropy data truncated");
      r.seek(p);
    }
  }
  if (!r.done()) report.ancillary_fields.push_back({"trailing-data", r.remaining()});
  return report;
}

}  // namespace stealthbench::imageio
