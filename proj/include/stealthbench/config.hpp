#pragma once

// Run configuration. Files are either JSON objects or plain `key = value`
// lines ('#' starts a comment, lists are comma separated); both map onto the
// same flat key set, and unknown keys are errors rather than silently ignored.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/error.hpp"
#include "stealthbench/imageio/bytes.hpp"
#include "stealthbench/stealth.hpp"

namespace stealthbench::pipeline {

inline constexpr const char* kToolVersion = "0.3.0";

inline const std::set<std::string>& transform_names() {
  static const std::set<std::string> s = {"identity", "blur", "jpeg_chain", "walk", "external"};
  return s;
}

// Stage names and control conditions accepted by `skip`.
inline const std::set<std::string>& skippable() {
  static const std::set<std::string> s = {"controls", "jpeg_sweep",    "per_operator", "spectral",
                                          "bmp",      "canonical_png", "grayscale",    "down_up",
                                          "social_media", "size_auc"};
  return s;
}

struct RunConfig {
  std::string subcommand = "report";
  std::string out = "run";
  std::string pool;  // directory with one subdirectory per source; empty selects the synthetic pool
  int n = 400;       // pool images; 0 takes everything in the directory
  int synth_sources = 1;
  std::string transform = "identity";
  std::string transform_cmd;  // executable for transform = external
  double blur_sigma = 1.0;
  double tamper_fraction = 0.2;
  std::string scores;  // external score CSV replacing the native detector

  std::uint64_t seed = 0;
  std::uint64_t split_seed = 1;
  std::uint64_t train_seed = 2;
  std::uint64_t bootstrap_seed = 0;
  std::uint64_t control_seed = 3;
  std::uint64_t walk_seed = 4;
  std::uint64_t synth_seed = 5;
  std::uint64_t wm_key = 0;

  int jobs = 0;  // 0: STEALTHBENCH_JOBS or the hardware concurrency
  int cache_images = 0;
  bool with_ci = true;
  int resamples = 10000;

  double lr = 0.5;
  int epochs = 300;
  double l2 = 1e-3;
  int patience = 7;

  std::vector<int> jpeg_qualities = {90, 85, 75};
  std::vector<std::string> skip;
  int spectral_pairs = 5000;
  int control_pairs = 5000;

  int walk_steps = 50;
  std::string walk_proposal = "patch_shuffle";
  double walk_fid = 1.0;
  double walk_wm = 1.0;
  double walk_ben = 1.0;
  int walk_control_pairs = 8;
  double wm_strength = stealth::kDefaultStrength;
  double wm_threshold = stealth::kDefaultThreshold;

  bool skipped(const std::string& what) const {
    for (const auto& s : skip) {
      if (s == what) return true;
    }
    return false;
  }
};

namespace detail {

struct Field {
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

template <typename T>
Field field(T RunConfig::*member) {
  return {[member](const RunConfig& c) { return nlohmann::json(c.*member); },
          [member](RunConfig& c, const nlohmann::json& v) { c.*member = v.get<T>(); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"subcommand", field(&RunConfig::subcommand)},
      {"out", field(&RunConfig::out)},
      {"pool", field(&RunConfig::pool)},
      {"n", field(&RunConfig::n)},
      {"synth_sources", field(&RunConfig::synth_sources)},
      {"transform", field(&RunConfig::transform)},
      {"transform_cmd", field(&RunConfig::transform_cmd)},
      {"blur_sigma", field(&RunConfig::blur_sigma)},
      {"tamper_fraction", field(&RunConfig::tamper_fraction)},
      {"scores", field(&RunConfig::scores)},
      {"seed", field(&RunConfig::seed)},
      {"split_seed", field(&RunConfig::split_seed)},
      {"train_seed", field(&RunConfig::train_seed)},
      {"bootstrap_seed", field(&RunConfig::bootstrap_seed)},
      {"control_seed", field(&RunConfig::control_seed)},
      {"walk_seed", field(&RunConfig::walk_seed)},
      {"synth_seed", field(&RunConfig::synth_seed)},
      {"wm_key", field(&RunConfig::wm_key)},
      {"jobs", field(&RunConfig::jobs)},
      {"cache_images", field(&RunConfig::cache_images)},
      {"with_ci", field(&RunConfig::with_ci)},
      {"resamples", field(&RunConfig::resamples)},
      {"lr", field(&RunConfig::lr)},
      {"epochs", field(&RunConfig::epochs)},
      {"l2", field(&RunConfig::l2)},
      {"patience", field(&RunConfig::patience)},
      {"jpeg_qualities", field(&RunConfig::jpeg_qualities)},
      {"skip", field(&RunConfig::skip)},
      {"spectral_pairs", field(&RunConfig::spectral_pairs)},
      {"control_pairs", field(&RunConfig::control_pairs)},
      {"walk_steps", field(&RunConfig::walk_steps)},
      {"walk_proposal", field(&RunConfig::walk_proposal)},
      {"walk_fid", field(&RunConfig::walk_fid)},
      {"walk_wm", field(&RunConfig::walk_wm)},
      {"walk_ben", field(&RunConfig::walk_ben)},
      {"walk_control_pairs", field(&RunConfig::walk_control_pairs)},
      {"wm_strength", field(&RunConfig::wm_strength)},
      {"wm_threshold", field(&RunConfig::wm_threshold)},
  };
  return f;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Converts a textual value to the JSON type of the key's default.
inline nlohmann::json typed(const std::string& key, const std::string& text, const nlohmann::json& like) {
  auto scalar = [&](const std::string& t, const nlohmann::json& kind) -> nlohmann::json {
    try {
      std::size_t used = 0;
      if (kind.is_boolean()) {
        if (t == "true" || t == "1" || t == "yes") return true;
        if (t == "false" || t == "0" || t == "no") return false;
        throw std::invalid_argument(t);
      }
      if (kind.is_number_unsigned()) {
        if (!t.empty() && t[0] == '-') throw std::invalid_argument(t);
        const auto v = std::stoull(t, &used, 0);
        if (used != t.size()) throw std::invalid_argument(t);
        return v;
      }
      if (kind.is_number_integer()) {
        const auto v = std::stoll(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        return v;
      }
      if (kind.is_number_float()) {
        const auto v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        return v;
      }
      return t;
    } catch (const std::exception&) {
      throw Error(Errc::kConfig, "bad value '" + t + "' for " + key);
    }
  };
  if (!like.is_array()) return scalar(text, like);
  nlohmann::json arr = nlohmann::json::array();
  const nlohmann::json elem = like.empty() ? nlohmann::json(std::string()) : like.front();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) arr.push_back(scalar(item, elem));
  }
  return arr;
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, f] : detail::fields()) j[key] = f.get(c);
  return j;
}

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw Error(Errc::kConfig, m); };
  if (!transform_names().count(c.transform)) fail("unknown transform '" + c.transform + "'");
  if (c.transform == "external" && c.transform_cmd.empty()) fail("transform = external needs transform_cmd");
  if (!(c.tamper_fraction >= 0.0 && c.tamper_fraction <= 1.0)) fail("tamper_fraction must be in [0, 1]");
  if (c.n < 0) fail("n must be non-negative");
  if (c.pool.empty() && c.n < 4) fail("the synthetic pool needs n >= 4");
  if (c.synth_sources < 1) fail("synth_sources must be at least 1");
  if (!(c.blur_sigma > 0.0)) fail("blur_sigma must be positive");
  for (int q : c.jpeg_qualities) {
    if (q < 1 || q > 100) fail("jpeg quality " + std::to_string(q) + " outside 1..100");
  }
  for (const auto& s : c.skip) {
    if (!skippable().count(s)) fail("cannot skip '" + s + "'");
  }
  if (c.resamples < 1) fail("resamples must be positive");
  if (!(c.lr > 0.0) || c.epochs < 1 || c.patience < 1 || c.l2 < 0.0) fail("bad detector hyperparameters");
  if (c.spectral_pairs < 1 || c.control_pairs < 1) fail("spectral pair counts must be positive");
  if (c.walk_steps < 0 || c.walk_control_pairs < 1) fail("bad walk settings");
  if (c.cache_images < 0) fail("cache_images must be non-negative");
  try {
    stealth::parse_proposal(c.walk_proposal);
    stealth::validate(stealth::StealthWeights{c.walk_fid, c.walk_wm, c.walk_ben});
  } catch (const Error& e) {
    fail(e.what());
  }
}

// Missing keys keep their defaults.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  if (!j.is_object()) throw Error(Errc::kConfig, "config must be a JSON object");
  const auto& table = detail::fields();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw Error(Errc::kConfig, "unknown config key '" + key + "'");
    const nlohmann::json like = it->second.get(RunConfig{});
    const bool ok = like.is_array() ? value.is_array()
                    : like.is_boolean() ? value.is_boolean()
                    : like.is_string()  ? value.is_string()
                    : like.is_number_float() ? value.is_number()
                    : like.is_number_unsigned() ? value.is_number_unsigned()
                                                : value.is_number_integer();
    if (!ok) throw Error(Errc::kConfig, "wrong type for config key '" + key + "'");
    try {
      it->second.set(base, value);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::kConfig, "config key '" + key + "': " + e.what());
    }
  }
  validate(base);
  return base;
}

inline nlohmann::json parse_key_values(const std::string& text) {
  nlohmann::json j = nlohmann::json::object();
  const auto& table = detail::fields();
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::kConfig, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const auto it = table.find(key);
    if (it == table.end()) throw Error(Errc::kConfig, "unknown config key '" + key + "'");
    j[key] = detail::typed(key, detail::trim(line.substr(eq + 1)), it->second.get(RunConfig{}));
  }
  return j;
}

// A file whose first non-blank character is '{' is JSON; anything else is
// read as key = value lines.
inline nlohmann::json parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::kConfig, std::string("config JSON: ") + e.what());
    }
  }
  return parse_key_values(text);
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = imageio::read_file(path);
  } catch (const Error&) {
    throw Error(Errc::kConfig, "cannot read config " + path.string());
  }
  return config_from_json(parse_config_text(std::string(bytes.begin(), bytes.end())), std::move(base));
}

// `key=value` overrides from the command line, applied on top of a config.
inline RunConfig apply_overrides(RunConfig base, const std::vector<std::string>& overrides) {
  std::string text;
  for (const auto& o : overrides) text += o + "\n";
  return config_from_json(parse_key_values(text), std::move(base));
}

}  // namespace stealthbench::pipeline
