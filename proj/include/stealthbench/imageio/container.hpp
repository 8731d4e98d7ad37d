#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace stealthbench::imageio {

enum class Format { kPng, kJpeg, kBmp };

inline const char* format_name(Format f) {
  switch (f) {
    case Format::kPng: return "PNG";
    case Format::kJpeg: return "JPEG";
    case Format::kBmp: return "BMP";
  }
  return "?";
}

struct AncillaryField {
  std::string name;
  std::size_t length = 0;

  friend bool operator==(const AncillaryField&, const AncillaryField&) = default;
};

// Inventory of everything in a file that is not pixel payload.
struct ContainerReport {
  Format format = Format::kPng;
  std::size_t byte_size = 0;
  std::vector<AncillaryField> ancillary_fields;
  bool has_color_profile = false;

  nlohmann::json to_json() const {
    nlohmann::json fields = nlohmann::json::array();
    for (const auto& f : ancillary_fields) {
      fields.push_back({{"name", f.name}, {"length", f.length}});
    }
    return {{"format", format_name(format)},
            {"byte_size", byte_size},
            {"ancillary_fields", std::move(fields)},
            {"has_color_profile", has_color_profile}};
  }
};

}  // namespace stealthbench::imageio
