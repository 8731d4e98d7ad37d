#pragma once

// JSON Schemas for the manifest and the evaluation report, checked with
// RapidJSON's draft-04 validator on every emission.

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include <rapidjson/document.h>
#include <rapidjson/schema.h>
#include <rapidjson/stringbuffer.h>

#include "stealthbench/error.hpp"

namespace stealthbench::schema {

inline constexpr std::string_view kManifest = R"json({
  "$schema": "http://json-schema.org/draft-04/schema#",
  "title": "stealthbench dataset manifest",
  "type": "object",
  "required": ["version", "transform_id", "seed", "split_seed", "tamper_fraction", "proportions",
               "settings", "pool_checksums", "origin_keys", "records"],
  "properties": {
    "version": {"enum": ["stealthbench.manifest/1"]},
    "transform_id": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
    "split_seed": {"type": "integer", "minimum": 0},
    "tamper_fraction": {"type": "number", "minimum": 0, "maximum": 1},
    "proportions": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                    "minItems": 3, "maxItems": 3},
    "settings": {"type": "object"},
    "pool_checksums": {"type": "object", "additionalProperties": {"type": "string", "pattern": "^[0-9a-f]{64}$"}},
    "origin_keys": {"type": "object", "additionalProperties": {"type": "string"}},
    "records": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["id", "origin_id", "source", "label", "tampered", "operator", "split", "role"],
        "additionalProperties": false,
        "properties": {
          "id": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
          "origin_id": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
          "source": {"type": "string"},
          "label": {"enum": [0, 1]},
          "tampered": {"type": "boolean"},
          "operator": {
            "oneOf": [
              {"type": "null"},
              {"type": "object", "required": ["id", "parameter", "seed"],
               "properties": {"id": {"type": "string", "pattern": "^A(0[1-9]|10)$"},
                              "parameter": {"type": "number"},
                              "seed": {"type": "integer", "minimum": 0}}}
            ]
          },
          "split": {"enum": ["train", "val", "test"]},
          "role": {"enum": ["clean", "attacked", "tampered_clean", "tampered_attacked"]}
        }
      }
    }
  }
})json";

inline constexpr std::string_view kReport = R"json({
  "$schema": "http://json-schema.org/draft-04/schema#",
  "title": "stealthbench evaluation report",
  "type": "object",
  "definitions": {
    "skipped": {
      "type": "object",
      "required": ["skipped", "reason"],
      "properties": {"skipped": {"enum": [true]}, "reason": {"type": "string"}}
    },
    "rate": {"type": "number", "minimum": 0, "maximum": 1},
    "operating_points": {
      "type": "object",
      "required": ["0.01", "0.001"],
      "properties": {"0.01": {"$ref": "#/definitions/rate"}, "0.001": {"$ref": "#/definitions/rate"}}
    },
    "metrics": {
      "type": "object",
      "required": ["auroc", "accuracy", "n_pos", "n_neg", "tpr_at_fpr", "fp_counts", "confusion", "ci"],
      "properties": {
        "auroc": {"$ref": "#/definitions/rate"},
        "accuracy": {"$ref": "#/definitions/rate"},
        "n_pos": {"type": "integer", "minimum": 1},
        "n_neg": {"type": "integer", "minimum": 1},
        "tpr_at_fpr": {"$ref": "#/definitions/operating_points"},
        "fp_counts": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "confusion": {"type": "object", "required": ["tp", "fp", "tn", "fn"]},
        "ci": {
          "type": "object",
          "additionalProperties": {"type": "array", "items": {"$ref": "#/definitions/rate"},
                                   "minItems": 2, "maxItems": 2}
        },
        "redrawn_resamples": {"type": "integer", "minimum": 0}
      }
    },
    "metrics_or_skipped": {"oneOf": [{"$ref": "#/definitions/metrics"}, {"$ref": "#/definitions/skipped"}]},
    "distortion": {
      "type": "object",
      "required": ["psnr", "mean_abs_diff", "changed_fraction", "n"],
      "properties": {
        "psnr": {"type": "number"},
        "mean_abs_diff": {"type": "number", "minimum": 0},
        "changed_fraction": {"$ref": "#/definitions/rate"},
        "n": {"type": "integer", "minimum": 0}
      }
    }
  },
  "required": ["format", "tool_version", "config", "seeds", "dataset", "detector", "native", "controls",
               "jpeg_sweep", "per_operator", "spectral"],
  "properties": {
    "format": {"enum": ["stealthbench.report/1"]},
    "tool_version": {"type": "string"},
    "config": {"type": "object"},
    "seeds": {
      "type": "object",
      "required": ["dataset", "split", "train", "bootstrap", "control", "walk", "synth", "watermark_key"],
      "additionalProperties": {"type": "integer", "minimum": 0}
    },
    "dataset": {
      "type": "object",
      "required": ["transform_id", "counts", "splits", "integrity"],
      "properties": {
        "counts": {"type": "object",
                   "required": ["clean", "attacked", "tampered_clean", "tampered_attacked"],
                   "additionalProperties": {"type": "integer", "minimum": 0}},
        "splits": {"type": "object", "required": ["train", "val", "test"]},
        "integrity": {"type": "object", "required": ["cross_split_overlaps", "filename_leakage",
                                                      "metadata_findings"]}
      }
    },
    "detector": {
      "type": "object",
      "required": ["provenance"],
      "properties": {"provenance": {"enum": ["native", "external"]}}
    },
    "native": {"$ref": "#/definitions/metrics"},
    "controls": {
      "oneOf": [
        {"$ref": "#/definitions/skipped"},
        {
          "type": "object",
          "required": ["conditions", "size_auc"],
          "properties": {
            "conditions": {
              "type": "object",
              "required": ["native", "bmp", "canonical_png", "grayscale", "down_up", "social_media"],
              "additionalProperties": {"$ref": "#/definitions/metrics_or_skipped"}
            },
            "size_auc": {
              "type": "object",
              "required": ["native", "bmp"],
              "additionalProperties": {"oneOf": [{"$ref": "#/definitions/rate"}, {"$ref": "#/definitions/skipped"}]}
            }
          }
        }
      ]
    },
    "jpeg_sweep": {
      "oneOf": [
        {"$ref": "#/definitions/skipped"},
        {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["quality", "metrics", "clean_distortion"],
            "properties": {
              "quality": {"type": "integer", "minimum": 1, "maximum": 100},
              "metrics": {"$ref": "#/definitions/metrics"},
              "clean_distortion": {"$ref": "#/definitions/distortion"}
            }
          }
        }
      ]
    },
    "per_operator": {
      "oneOf": [
        {"$ref": "#/definitions/skipped"},
        {
          "type": "object",
          "required": ["thresholds", "n_clean", "rows"],
          "properties": {
            "n_clean": {"type": "integer", "minimum": 1},
            "rows": {
              "type": "array",
              "minItems": 10,
              "maxItems": 10,
              "items": {
                "type": "object",
                "required": ["operator", "n"],
                "properties": {
                  "operator": {"type": "string", "pattern": "^A(0[1-9]|10)$"},
                  "n": {"type": "integer", "minimum": 0},
                  "tpr_at_fpr": {"$ref": "#/definitions/operating_points"},
                  "flag": {"enum": ["EmptyOperatorBucket"]}
                }
              }
            }
          }
        }
      ]
    },
    "spectral": {
      "oneOf": [
        {"$ref": "#/definitions/skipped"},
        {
          "type": "object",
          "required": ["n_pairs", "n_control_pairs", "attack", "control", "log_ratio"],
          "properties": {
            "n_pairs": {"type": "integer", "minimum": 1},
            "n_control_pairs": {"type": "integer", "minimum": 1},
            "log_ratio": {"type": "object", "required": ["values", "zero_crossings"]}
          }
        }
      ]
    },
    "artifacts": {"type": "object", "additionalProperties": {"type": "string"}}
  }
})json";

// Throws SchemaViolation naming the failing keyword and document location.
inline void validate(const nlohmann::json& doc, std::string_view schema_text, std::string_view what) {
  rapidjson::Document sd;
  sd.Parse(schema_text.data(), schema_text.size());
  if (sd.HasParseError()) throw Error(Errc::kSchemaViolation, std::string(what) + ": schema text does not parse");
  const rapidjson::SchemaDocument schema(sd);
  rapidjson::Document d;
  const std::string text = doc.dump();
  d.Parse(text.c_str(), text.size());
  if (d.HasParseError()) throw Error(Errc::kSchemaViolation, std::string(what) + ": document does not parse");
  rapidjson::SchemaValidator validator(schema);
  if (d.Accept(validator)) return;
  rapidjson::StringBuffer where, rule;
  validator.GetInvalidDocumentPointer().StringifyUriFragment(where);
  validator.GetInvalidSchemaPointer().StringifyUriFragment(rule);
  throw Error(Errc::kSchemaViolation, std::string(what) + " fails '" + validator.GetInvalidSchemaKeyword() +
                                          "' at " + where.GetString() + " (schema " + rule.GetString() + ")");
}

inline void validate_manifest(const nlohmann::json& j) { validate(j, kManifest, "manifest"); }
inline void validate_report(const nlohmann::json& j) { validate(j, kReport, "report"); }

}  // namespace stealthbench::schema
