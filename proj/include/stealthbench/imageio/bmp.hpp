#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "stealthbench/image.hpp"
#include "stealthbench/imageio/bytes.hpp"
#include "stealthbench/imageio/container.hpp"

namespace stealthbench::imageio {

namespace bmp_detail {

inline constexpr std::uint32_t kFileHeaderSize = 14;
inline constexpr std::uint32_t kInfoHeaderSize = 40;

inline std::uint32_t row_stride_24(int width) {
  return (static_cast<std::uint32_t>(width) * 3 + 3) & ~3u;
}

struct Header {
  std::uint32_t file_size = 0;
  std::uint32_t pixel_offset = 0;
  std::uint32_t header_size = 0;
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::uint16_t bit_count = 0;
  std::uint32_t compression = 0;
  std::uint32_t colors_used = 0;
  std::uint32_t masks[3] = {0, 0, 0};
  std::uint32_t cs_type = 0;
  std::uint32_t profile_offset = 0;
  std::uint32_t profile_size = 0;
  std::size_t palette_offset = 0;
  std::size_t palette_entries = 0;
  std::size_t palette_entry_size = 4;
};

inline Header parse_header(Reader& r) {
  Header h;
  if (r.u8() != 'B' || r.u8() != 'M') throw Error(Errc::kUnsupportedFormat, "not a BMP file");
  h.file_size = r.u32le();
  r.skip(4);
  h.pixel_offset = r.u32le();
  h.header_size = r.u32le();
  if (h.header_size == 12) {
    h.width = r.u16le();
    h.height = static_cast<std::int16_t>(r.u16le());
    r.skip(2);
    h.bit_count = r.u16le();
    h.palette_entry_size = 3;
  } else if (h.header_size >= kInfoHeaderSize) {
    h.width = static_cast<std::int32_t>(r.u32le());
    h.height = static_cast<std::int32_t>(r.u32le());
    r.skip(2);
    h.bit_count = r.u16le();
    h.compression = r.u32le();
    r.skip(12);
    h.colors_used = r.u32le();
    r.skip(4);
    if (h.header_size >= 52 || h.compression == 3) {
      h.masks[0] = r.u32le();
      h.masks[1] = r.u32le();
      h.masks[2] = r.u32le();
    }
    if (h.header_size >= 108) {
      r.seek(kFileHeaderSize + 56);
      h.cs_type = r.u32le();
    }
    if (h.header_size >= 124) {
      r.seek(kFileHeaderSize + 112);
      h.profile_offset = r.u32le();
      h.profile_size = r.u32le();
    }
  } else {
    throw Error(Errc::kUnsupportedFormat, "unknown BMP header size");
  }
  if (h.width <= 0 || h.height == 0) throw Error(Errc::kCorruptFile, "bad BMP dimensions");
  if (h.bit_count <= 8) {
    h.palette_entries = h.colors_used != 0 ? h.colors_used : (1u << h.bit_count);
    h.palette_offset = kFileHeaderSize + h.header_size +
                       (h.header_size == kInfoHeaderSize && h.compression == 3 ? 12 : 0);
  }
  return h;
}

inline int mask_shift(std::uint32_t mask) {
  int s = 0;
  while (mask != 0 && (mask & 1u) == 0) {
    mask >>= 1;
    ++s;
  }
  return s;
}

inline std::uint8_t extract_channel(std::uint32_t px, std::uint32_t mask) {
  if (mask == 0) return 0;
  const int shift = mask_shift(mask);
  const std::uint32_t m = mask >> shift;
  const std::uint32_t v = (px & mask) >> shift;
  return static_cast<std::uint8_t>((v * 255 + m / 2) / m);
}

}  // namespace bmp_detail

// Uncompressed 24-bit bottom-up BMP with a BITMAPINFOHEADER. The byte length
// depends only on (width, height).
inline Bytes encode_bmp(const ImageBuffer& img) {
  using namespace bmp_detail;
  const std::uint32_t stride = row_stride_24(img.width());
  const std::uint32_t image_size = stride * static_cast<std::uint32_t>(img.height());
  const std::uint32_t offset = kFileHeaderSize + kInfoHeaderSize;
  Bytes out;
  out.reserve(offset + image_size);
  out.push_back('B');
  out.push_back('M');
  put_u32le(out, offset + image_size);
  put_u32le(out, 0);
  put_u32le(out, offset);
  put_u32le(out, kInfoHeaderSize);
  put_u32le(out, static_cast<std::uint32_t>(img.width()));
  put_u32le(out, static_cast<std::uint32_t>(img.height()));
  put_u16le(out, 1);
  put_u16le(out, 24);
  put_u32le(out, 0);  // BI_RGB
  put_u32le(out, image_size);
  put_u32le(out, 2835);
  put_u32le(out, 2835);
  put_u32le(out, 0);
  put_u32le(out, 0);
  for (int y = img.height() - 1; y >= 0; --y) {
    for (int x = 0; x < img.width(); ++x) {
      out.push_back(img.at(x, y, 2));
      out.push_back(img.at(x, y, 1));
      out.push_back(img.at(x, y, 0));
    }
    for (std::uint32_t p = static_cast<std::uint32_t>(img.width()) * 3; p < stride; ++p) {
      out.push_back(0);
    }
  }
  return out;
}

inline std::size_t bmp_size(int width, int height) {
  return bmp_detail::kFileHeaderSize + bmp_detail::kInfoHeaderSize +
         static_cast<std::size_t>(bmp_detail::row_stride_24(width)) * height;
}

inline ImageBuffer decode_bmp(std::span<const std::uint8_t> bytes) {
  using namespace bmp_detail;
  Reader r(bytes);
  const Header h = parse_header(r);
  if (h.compression != 0 && h.compression != 3) {
    throw Error(Errc::kUnsupportedFormat, "compressed BMP variants are not supported");
  }
  const bool bitfields = h.compression == 3;
  if (bitfields && h.bit_count != 16 && h.bit_count != 32) {
    throw Error(Errc::kCorruptFile, "BI_BITFIELDS requires 16 or 32 bpp");
  }
  switch (h.bit_count) {
    case 1: case 4: case 8: case 16: case 24: case 32: break;
    default: throw Error(Errc::kUnsupportedFormat, "unsupported BMP bit depth");
  }
  const int width = h.width;
  const bool top_down = h.height < 0;
  const int height = top_down ? -h.height : h.height;

  std::vector<std::array<std::uint8_t, 3>> palette;
  if (h.bit_count <= 8) {
    r.seek(h.palette_offset);
    palette.resize(h.palette_entries);
    for (auto& entry : palette) {
      const std::uint8_t b = r.u8();
      const std::uint8_t g = r.u8();
      const std::uint8_t rr = r.u8();
      if (h.palette_entry_size == 4) r.skip(1);
      entry = {rr, g, b};
    }
  }

  std::uint32_t masks[3] = {h.masks[0], h.masks[1], h.masks[2]};
  if (!bitfields) {
    if (h.bit_count == 16) {
      masks[0] = 0x7C00;
      masks[1] = 0x03E0;
      masks[2] = 0x001F;
    } else {
      masks[0] = 0x00FF0000;
      masks[1] = 0x0000FF00;
      masks[2] = 0x000000FF;
    }
  }

  const std::size_t stride =
      ((static_cast<std::size_t>(width) * h.bit_count + 31) / 32) * 4;
  r.seek(h.pixel_offset);
  if (r.remaining() < stride * height) {
    throw Error(Errc::kCorruptFile, "BMP pixel data truncated");
  }
  ImageBuffer img(width, height);
  for (int row = 0; row < height; ++row) {
    const int y = top_down ? row : height - 1 - row;
    const auto line = bytes.subspan(h.pixel_offset + stride * row, stride);
    for (int x = 0; x < width; ++x) {
      std::uint8_t rgb[3];
      if (h.bit_count <= 8) {
        const int bits = h.bit_count;
        const std::size_t bit = static_cast<std::size_t>(x) * bits;
        const int idx = (line[bit / 8] >> (8 - bits - static_cast<int>(bit % 8))) & ((1 << bits) - 1);
        if (static_cast<std::size_t>(idx) >= palette.size()) {
          throw Error(Errc::kCorruptFile, "BMP palette index out of range");
        }
        rgb[0] = palette[idx][0];
        rgb[1] = palette[idx][1];
        rgb[2] = palette[idx][2];
      } else if (h.bit_count == 24) {
        rgb[0] = line[x * 3 + 2];
        rgb[1] = line[x * 3 + 1];
        rgb[2] = line[x * 3];
      } else {
        std::uint32_t px = 0;
        if (h.bit_count == 16) {
          px = line[x * 2] | (line[x * 2 + 1] << 8);
        } else {
          px = line[x * 4] | (line[x * 4 + 1] << 8) | (line[x * 4 + 2] << 16) |
               (static_cast<std::uint32_t>(line[x * 4 + 3]) << 24);
        }
        for (int c = 0; c < 3; ++c) rgb[c] = extract_channel(px, masks[c]);
      }
      img.at(x, y, 0) = rgb[0];
      img.at(x, y, 1) = rgb[1];
      img.at(x, y, 2) = rgb[2];
    }
  }
  return img;
}

inline ContainerReport audit_bmp(std::span<const std::uint8_t> bytes) {
  using namespace bmp_detail;
  Reader r(bytes);
  const Header h = parse_header(r);
  ContainerReport report;
  report.format = Format::kBmp;
  report.byte_size = bytes.size();
  if (h.header_size != kInfoHeaderSize) {
    report.ancillary_fields.push_back({"extended-header", h.header_size - kInfoHeaderSize});
  }
  const int height = h.height < 0 ? -h.height : h.height;
  const std::size_t stride =
      ((static_cast<std::size_t>(h.width) * h.bit_count + 31) / 32) * 4;
  const std::size_t pixel_end = h.pixel_offset + stride * height;
  std::size_t expected_offset = kFileHeaderSize + h.header_size;
  if (h.bit_count <= 8) {
    expected_offset = h.palette_offset + h.palette_entries * h.palette_entry_size;
  } else if (h.header_size == kInfoHeaderSize && h.compression == 3) {
    expected_offset += 12;
  }
  if (h.pixel_offset > expected_offset) {
    report.ancillary_fields.push_back({"gap", h.pixel_offset - expected_offset});
  }
  if (bytes.size() > pixel_end) {
    report.ancillary_fields.push_back({"trailing-data", bytes.size() - pixel_end});
  }
  // 'MBED' / 'LINK' colour-space types denote an attached ICC profile.
  if (h.cs_type == 0x4D424544 || h.cs_type == 0x4C494E4B || h.profile_size > 0) {
    report.has_color_profile = true;
    report.ancillary_fields.push_back({"icc-profile", h.profile_size});
  }
  return report;
}

}  // namespace stealthbench::imageio
