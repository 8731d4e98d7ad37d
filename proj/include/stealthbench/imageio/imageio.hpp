#pragma once

#include <filesystem>
#include <span>

#include "stealthbench/image.hpp"
#include "stealthbench/imageio/bmp.hpp"
#include "stealthbench/imageio/bytes.hpp"
#include "stealthbench/imageio/container.hpp"
#include "stealthbench/imageio/jpeg.hpp"
#include "stealthbench/imageio/png.hpp"

namespace stealthbench::imageio {

// Format is sniffed from magic bytes; the file extension is never consulted.
inline Format sniff_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 8 && std::equal(png_detail::kSignature.begin(), png_detail::kSignature.end(), bytes.begin())) {
    return Format::kPng;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return Format::kJpeg;
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return Format::kBmp;
  throw Error(Errc::kUnsupportedFormat, "unrecognised image signature");
}

inline ImageBuffer decode_bytes(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case Format::kPng: return decode_png(bytes);
    case Format::kJpeg: return decode_jpeg(bytes);
    case Format::kBmp: return decode_bmp(bytes);
  }
  throw Error(Errc::kUnsupportedFormat, "unreachable");
}

inline ImageBuffer decode(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return decode_bytes(bytes);
}

inline ContainerReport audit_bytes(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case Format::kPng: return audit_png(bytes);
    case Format::kJpeg: return audit_jpeg(bytes);
    case Format::kBmp: return audit_bmp(bytes);
  }
  throw Error(Errc::kUnsupportedFormat, "unreachable");
}

inline ContainerReport audit(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return audit_bytes(bytes);
}

inline void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  write_file(path, encode_png_canonical(img));
}

}  // namespace stealthbench::imageio
