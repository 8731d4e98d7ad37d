#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stealthbench {

enum class Errc {
  kUnsupportedFormat,
  kCorruptFile,
  kIo,
  kInvalidQuality,
  kInvalidParameter,
  kGeometryMismatch,
  kTransformGeometry,
  kEmptyPool,
  kInsufficientImages,
  kAllBinsMasked,
  kAllCellsMasked,
  kDegenerateLabels,
  kDegenerateSplit,
  kMissingFeatures,
  kMissingFile,
  kUnknownId,
  kScoreOutOfRange,
  kMalformedRow,
  kEmptyOperatorBucket,
  kConfig,
  kStageFailure,
  kSchemaViolation,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kUnsupportedFormat: return "UnsupportedFormat";
    case Errc::kCorruptFile: return "CorruptFile";
    case Errc::kIo: return "IoError";
    case Errc::kInvalidQuality: return "InvalidQuality";
    case Errc::kInvalidParameter: return "InvalidParameter";
    case Errc::kGeometryMismatch: return "GeometryMismatch";
    case Errc::kTransformGeometry: return "TransformGeometryError";
    case Errc::kEmptyPool: return "EmptyPool";
    case Errc::kInsufficientImages: return "InsufficientImages";
    case Errc::kAllBinsMasked: return "AllBinsMasked";
    case Errc::kAllCellsMasked: return "AllCellsMasked";
    case Errc::kDegenerateLabels: return "DegenerateLabels";
    case Errc::kDegenerateSplit: return "DegenerateSplit";
    case Errc::kMissingFeatures: return "MissingFeatures";
    case Errc::kMissingFile: return "MissingFile";
    case Errc::kUnknownId: return "UnknownId";
    case Errc::kScoreOutOfRange: return "ScoreOutOfRange";
    case Errc::kMalformedRow: return "MalformedRow";
    case Errc::kEmptyOperatorBucket: return "EmptyOperatorBucket";
    case Errc::kConfig: return "ConfigError";
    case Errc::kStageFailure: return "StageFailure";
    case Errc::kSchemaViolation: return "SchemaViolation";
  }
  return "Unknown";
}

// Every failure surfaced by the library carries one of the codes above so
// callers (and the CLI's exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace stealthbench
