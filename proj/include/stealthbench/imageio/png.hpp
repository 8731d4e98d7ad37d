#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "stealthbench/image.hpp"
#include "stealthbench/imageio/bytes.hpp"
#include "stealthbench/imageio/container.hpp"

namespace stealthbench::imageio {

// Canonical PNG settings: 8-bit truecolour, no interlace, per-row adaptive
// filter chosen by minimum sum of absolute differences, zlib level 6 with the
// default strategy, single IDAT, no ancillary chunks.
inline constexpr int kCanonicalPngLevel = 6;

namespace png_detail {

inline constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

inline void write_chunk(Bytes& out, const char type[4], std::span<const std::uint8_t> payload) {
  put_u32be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + payload.size()));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

inline void filter_row(int type, std::span<const std::uint8_t> row, std::span<const std::uint8_t> prev,
                       int bpp, std::uint8_t* out) {
  const std::size_t n = row.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int a = i >= static_cast<std::size_t>(bpp) ? row[i - bpp] : 0;
    const int b = prev.empty() ? 0 : prev[i];
    const int c = (!prev.empty() && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
    int pred = 0;
    switch (type) {
      case 0: pred = 0; break;
      case 1: pred = a; break;
      case 2: pred = b; break;
      case 3: pred = (a + b) / 2; break;
      case 4: pred = paeth(a, b, c); break;
    }
    out[i] = static_cast<std::uint8_t>(row[i] - pred);
  }
}

inline void unfilter_row(int type, std::uint8_t* row, const std::uint8_t* prev, std::size_t n, int bpp) {
  for (std::size_t i = 0; i < n; ++i) {
    const int a = i >= static_cast<std::size_t>(bpp) ? row[i - bpp] : 0;
    const int b = prev ? prev[i] : 0;
    const int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
    int pred = 0;
    switch (type) {
      case 0: pred = 0; break;
      case 1: pred = a; break;
      case 2: pred = b; break;
      case 3: pred = (a + b) / 2; break;
      case 4: pred = paeth(a, b, c); break;
      default: throw Error(Errc::kCorruptFile, "invalid PNG filter type");
    }
    row[i] = static_cast<std::uint8_t>(row[i] + pred);
  }
}

inline Bytes deflate_bytes(std::span<const std::uint8_t> raw, int level) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, 15, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error(Errc::kIo, "deflateInit failed");
  }
  Bytes out(deflateBound(&zs, static_cast<uLong>(raw.size())));
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(Errc::kIo, "deflate failed");
  out.resize(zs.total_out);
  return out;
}

inline Bytes inflate_bytes(std::span<const std::uint8_t> compressed, std::size_t expected) {
  Bytes out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw Error(Errc::kIo, "inflateInit failed");
  zs.next_in = const_cast<Bytef*>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END && !(rc == Z_BUF_ERROR && produced == expected && zs.avail_in == 0)) {
    if (rc == Z_DATA_ERROR) throw Error(Errc::kCorruptFile, "corrupt PNG zlib stream");
    if (produced < expected) throw Error(Errc::kCorruptFile, "PNG image data truncated");
  }
  if (produced < expected) throw Error(Errc::kCorruptFile, "PNG image data truncated");
  return out;
}

struct Chunk {
  std::string type;
  std::span<const std::uint8_t> data;
};

// Splits a PNG stream into CRC-verified chunks. Anything after IEND is
// returned through `trailing`.
inline std::vector<Chunk> read_chunks(std::span<const std::uint8_t> bytes, std::size_t* trailing) {
  Reader r(bytes);
  for (auto b : kSignature) {
    if (r.u8() != b) throw Error(Errc::kUnsupportedFormat, "not a PNG file");
  }
  std::vector<Chunk> chunks;
  for (;;) {
    const std::uint32_t len = r.u32be();
    const auto type_and_data = r.take(4 + static_cast<std::size_t>(len));
    const std::uint32_t crc = r.u32be();
    const uLong actual = crc32(0L, type_and_data.data(), static_cast<uInt>(type_and_data.size()));
    if (actual != crc) throw Error(Errc::kCorruptFile, "PNG chunk CRC mismatch");
    Chunk c;
    c.type.assign(reinterpret_cast<const char*>(type_and_data.data()), 4);
    c.data = type_and_data.subspan(4);
    chunks.push_back(c);
    if (c.type == "IEND") break;
  }
  if (trailing) *trailing = r.remaining();
  return chunks;
}

struct Adam7Pass {
  int x0, y0, dx, dy;
};
inline constexpr std::array<Adam7Pass, 7> kAdam7 = {{
    {0, 0, 8, 8}, {4, 0, 8, 8}, {0, 4, 4, 8}, {2, 0, 4, 4},
    {0, 2, 2, 4}, {1, 0, 2, 2}, {0, 1, 1, 2},
}};

}  // namespace png_detail

inline Bytes encode_png_canonical(const ImageBuffer& img) {
  using namespace png_detail;
  const std::size_t row_bytes = static_cast<std::size_t>(img.width()) * 3;
  Bytes raw((row_bytes + 1) * img.height());
  std::vector<std::uint8_t> candidate(row_bytes);
  for (int y = 0; y < img.height(); ++y) {
    const auto row = img.row(y);
    const std::span<const std::uint8_t> prev =
        y > 0 ? img.row(y - 1) : std::span<const std::uint8_t>{};
    std::uint8_t* dst = raw.data() + (row_bytes + 1) * y;
    long best_cost = -1;
    for (int type = 0; type < 5; ++type) {
      filter_row(type, row, prev, 3, candidate.data());
      long cost = 0;
      for (auto v : candidate) cost += v < 128 ? v : 256 - v;
      if (best_cost < 0 || cost < best_cost) {
        best_cost = cost;
        dst[0] = static_cast<std::uint8_t>(type);
        std::copy(candidate.begin(), candidate.end(), dst + 1);
      }
    }
  }
  Bytes out(kSignature.begin(), kSignature.end());
  Bytes ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(img.width()));
  put_u32be(ihdr, static_cast<std::uint32_t>(img.height()));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolour
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", deflate_bytes(raw, kCanonicalPngLevel));
  write_chunk(out, "IEND", {});
  return out;
}

// Builds a PNG with extra chunks inserted before IDAT. Used to construct
// audit fixtures; the pixel payload is identical to encode_png_canonical.
inline Bytes insert_png_chunk(std::span<const std::uint8_t> png, const std::string& type,
                              std::span<const std::uint8_t> payload) {
  using namespace png_detail;
  const auto chunks = read_chunks(png, nullptr);
  Bytes out(kSignature.begin(), kSignature.end());
  bool inserted = false;
  for (const auto& c : chunks) {
    if (!inserted && c.type == "IDAT") {
      write_chunk(out, type.c_str(), payload);
      inserted = true;
    }
    write_chunk(out, c.type.c_str(), c.data);
  }
  return out;
}

inline ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
  using namespace png_detail;
  const auto chunks = read_chunks(bytes, nullptr);
  if (chunks.empty() || chunks.front().type != "IHDR" || chunks.front().data.size() != 13) {
    throw Error(Errc::kCorruptFile, "PNG missing IHDR");
  }
  Reader ih(chunks.front().data);
  const std::uint32_t width = ih.u32be();
  const std::uint32_t height = ih.u32be();
  const int depth = ih.u8();
  const int color = ih.u8();
  const int compression = ih.u8();
  const int filter = ih.u8();
  const int interlace = ih.u8();
  if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16)) {
    throw Error(Errc::kCorruptFile, "bad PNG dimensions");
  }
  if (compression != 0 || filter != 0 || interlace > 1) {
    throw Error(Errc::kCorruptFile, "bad PNG header fields");
  }
  if (depth == 16) throw Error(Errc::kUnsupportedFormat, "16-bit PNG is not supported");
  int samples = 0;
  switch (color) {
    case 0: samples = 1; break;
    case 2: samples = 3; break;
    case 3: samples = 1; break;
    case 4: samples = 2; break;
    case 6: samples = 4; break;
    default: throw Error(Errc::kCorruptFile, "bad PNG colour type");
  }
  const bool depth_ok = (color == 0 || color == 3) ? (depth == 1 || depth == 2 || depth == 4 || depth == 8)
                                                   : depth == 8;
  if (!depth_ok) throw Error(Errc::kCorruptFile, "bad PNG bit depth for colour type");

  std::vector<std::array<std::uint8_t, 3>> palette;
  Bytes idat;
  bool saw_iend = false;
  for (const auto& c : chunks) {
    if (c.type == "PLTE") {
      if (c.data.size() % 3 != 0 || c.data.size() > 768) throw Error(Errc::kCorruptFile, "bad PLTE");
      palette.resize(c.data.size() / 3);
      for (std::size_t i = 0; i < palette.size(); ++i) {
        palette[i] = {c.data[3 * i], c.data[3 * i + 1], c.data[3 * i + 2]};
      }
    } else if (c.type == "IDAT") {
      idat.insert(idat.end(), c.data.begin(), c.data.end());
    } else if (c.type == "IEND") {
      saw_iend = true;
    } else if ((c.type[0] & 0x20) == 0 && c.type != "IHDR") {
      throw Error(Errc::kUnsupportedFormat, "unknown critical PNG chunk " + c.type);
    }
  }
  if (!saw_iend) throw Error(Errc::kCorruptFile, "PNG missing IEND");
  if (color == 3 && palette.empty()) throw Error(Errc::kCorruptFile, "paletted PNG without PLTE");

  const int bits_per_pixel = samples * depth;
  const int bpp = std::max(1, bits_per_pixel / 8);
  auto row_size = [&](std::uint32_t w) {
    return (static_cast<std::size_t>(w) * bits_per_pixel + 7) / 8;
  };

  struct PassGeometry {
    int x0, y0, dx, dy;
    std::uint32_t w, h;
  };
  std::vector<PassGeometry> passes;
  if (interlace == 0) {
    passes.push_back({0, 0, 1, 1, width, height});
  } else {
    for (const auto& p : kAdam7) {
      const std::uint32_t w = width > static_cast<std::uint32_t>(p.x0)
                                  ? (width - p.x0 + p.dx - 1) / p.dx : 0;
      const std::uint32_t h = height > static_cast<std::uint32_t>(p.y0)
                                  ? (height - p.y0 + p.dy - 1) / p.dy : 0;
      passes.push_back({p.x0, p.y0, p.dx, p.dy, w, h});
    }
  }
  std::size_t expected = 0;
  for (const auto& p : passes) {
    if (p.w != 0 && p.h != 0) expected += (row_size(p.w) + 1) * p.h;
  }
  Bytes raw = inflate_bytes(idat, expected);

  ImageBuffer img(static_cast<int>(width), static_cast<int>(height));
  std::size_t offset = 0;
  for (const auto& p : passes) {
    if (p.w == 0 || p.h == 0) continue;
    const std::size_t rs = row_size(p.w);
    std::uint8_t* prev = nullptr;
    for (std::uint32_t y = 0; y < p.h; ++y) {
      std::uint8_t* line = raw.data() + offset;
      unfilter_row(line[0], line + 1, prev, rs, bpp);
      prev = line + 1;
      offset += rs + 1;
      const std::uint8_t* px = line + 1;
      for (std::uint32_t x = 0; x < p.w; ++x) {
        std::uint8_t rgb[3];
        auto sample = [&](int index) -> int {
          if (depth == 8) return px[static_cast<std::size_t>(x) * samples + index];
          const std::size_t bit = static_cast<std::size_t>(x) * depth;
          return (px[bit / 8] >> (8 - depth - static_cast<int>(bit % 8))) & ((1 << depth) - 1);
        };
        if (color == 3) {
          const int idx = sample(0);
          if (static_cast<std::size_t>(idx) >= palette.size()) {
            throw Error(Errc::kCorruptFile, "PNG palette index out of range");
          }
          rgb[0] = palette[idx][0];
          rgb[1] = palette[idx][1];
          rgb[2] = palette[idx][2];
        } else if (color == 0 || color == 4) {
          const int g = sample(0) * 255 / ((1 << depth) - 1);
          rgb[0] = rgb[1] = rgb[2] = static_cast<std::uint8_t>(g);
        } else {
          rgb[0] = static_cast<std::uint8_t>(sample(0));
          rgb[1] = static_cast<std::uint8_t>(sample(1));
          rgb[2] = static_cast<std::uint8_t>(sample(2));
        }
        const int ox = p.x0 + static_cast<int>(x) * p.dx;
        const int oy = p.y0 + static_cast<int>(y) * p.dy;
        img.at(ox, oy, 0) = rgb[0];
        img.at(ox, oy, 1) = rgb[1];
        img.at(ox, oy, 2) = rgb[2];
      }
    }
  }
  return img;
}

inline ContainerReport audit_png(std::span<const std::uint8_t> bytes) {
  using namespace png_detail;
  std::size_t trailing = 0;
  const auto chunks = read_chunks(bytes, &trailing);
  ContainerReport report;
  report.format = Format::kPng;
  report.byte_size = bytes.size();
  for (const auto& c : chunks) {
    const bool ancillary = (c.type[0] & 0x20) != 0;
    if (ancillary) report.ancillary_fields.push_back({c.type, c.data.size()});
    if (c.type == "iCCP" || c.type == "sRGB") report.has_color_profile = true;
  }
  if (trailing > 0) report.ancillary_fields.push_back({"trailing-data", trailing});
  return report;
}

}  // namespace stealthbench::imageio
