#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/error.hpp"
#include "stealthbench/hash.hpp"
#include "stealthbench/image.hpp"
#include "stealthbench/imageio/imageio.hpp"
#include "stealthbench/operators.hpp"
#include "stealthbench/parallel.hpp"
#include "stealthbench/rng.hpp"

namespace stealthbench::dataset {

inline constexpr const char* kManifestVersion = "stealthbench.manifest/1";

enum class Split { kTrain, kVal, kTest };
enum class Role { kClean, kAttacked, kTamperedClean, kTamperedAttacked };

inline constexpr std::array<Split, 3> kSplits = {Split::kTrain, Split::kVal, Split::kTest};

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  for (Split v : kSplits) {
    if (s == split_name(v)) return v;
  }
  throw Error(Errc::kSchemaViolation, "unknown split " + std::string(s));
}

inline const char* role_name(Role r) {
  switch (r) {
    case Role::kClean: return "clean";
    case Role::kAttacked: return "attacked";
    case Role::kTamperedClean: return "tampered_clean";
    case Role::kTamperedAttacked: return "tampered_attacked";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  for (Role r : {Role::kClean, Role::kAttacked, Role::kTamperedClean, Role::kTamperedAttacked}) {
    if (s == role_name(r)) return r;
  }
  throw Error(Errc::kSchemaViolation, "unknown role " + std::string(s));
}

inline int role_label(Role r) { return (r == Role::kAttacked || r == Role::kTamperedAttacked) ? 1 : 0; }
inline bool role_tampered(Role r) { return r == Role::kTamperedClean || r == Role::kTamperedAttacked; }

struct ImageRecord {
  std::string id;
  std::string origin_id;
  std::string source;
  int label = 0;
  bool tampered = false;
  std::optional<operators::OperatorSpec> op;
  Split split = Split::kTrain;
  Role role = Role::kClean;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Proportions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::string transform_id;
  std::map<std::string, std::string> pool_checksums;  // origin_id -> pixel sha256
  std::map<std::string, std::string> origin_keys;     // origin_id -> pool key
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double tamper_fraction = 0.0;
  Proportions proportions;

  std::size_t count(int label, bool tampered) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const ImageRecord& r) {
      return r.label == label && r.tampered == tampered;
    }));
  }

  std::vector<const ImageRecord*> in_split(Split s) const {
    std::vector<const ImageRecord*> out;
    for (const auto& r : records) {
      if (r.split == s) out.push_back(&r);
    }
    return out;
  }

  const ImageRecord& find(const std::string& id) const {
    for (const auto& r : records) {
      if (r.id == id) return r;
    }
    throw Error(Errc::kUnknownId, "no record " + id);
  }
};

inline std::unordered_map<std::string, int> labels_map(const DatasetManifest& m) {
  std::unordered_map<std::string, int> out;
  for (const auto& r : m.records) out.emplace(r.id, r.label);
  return out;
}

inline std::filesystem::path record_path(const std::filesystem::path& root, const ImageRecord& r,
                                         std::string_view ext = ".png") {
  return root / split_name(r.split) / std::to_string(r.label) / (r.id + std::string(ext));
}

// ---- construction ----

struct PoolEntry {
  std::string key;  // file path, or any handle the loader understands
  std::string source;
};

using Loader = std::function<ImageBuffer(const PoolEntry&)>;
using Transform = std::function<ImageBuffer(const ImageBuffer&, std::uint64_t seed)>;
using Predicate = std::function<bool(const ImageBuffer& x, const ImageBuffer& tx)>;
using Sink = std::function<void(const ImageRecord&, const ImageBuffer&)>;

inline ImageBuffer load_file(const PoolEntry& e) {
  ImageBuffer img = imageio::decode(e.key);
  require_standard(img, e.key.c_str());
  return img;
}

// Writes canonical PNGs under {root}/{split}/{label}/{id}.png.
inline Sink png_writer(std::filesystem::path root) {
  return [root = std::move(root)](const ImageRecord& r, const ImageBuffer& img) {
    imageio::write_file(record_path(root, r), imageio::encode_png_canonical(img));
  };
}

struct BuildOptions {
  double tamper_fraction = 0.2;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  Proportions proportions;
  int jobs = 1;
  Predicate accept;  // empty: accept all
  // Pool images with index below this stay in memory between the hashing and
  // materialisation passes instead of being loaded twice.
  std::size_t cache_images = 0;
};

struct ClassCounts {
  std::size_t clean = 0;
  std::size_t attacked = 0;
  std::size_t tampered_clean = 0;
  std::size_t tampered_attacked = 0;
  std::size_t total() const { return clean + attacked + tampered_clean + tampered_attacked; }
};

inline std::size_t tamper_count(std::size_t class_size, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(class_size)));
}

// Each source is halved on its own; the clean half takes the odd image.
inline ClassCounts plan_counts(std::span<const std::size_t> per_source, double tamper_fraction) {
  ClassCounts c;
  for (std::size_t n : per_source) {
    c.clean += (n + 1) / 2;
    c.attacked += n / 2;
  }
  c.tampered_clean = tamper_count(c.clean, tamper_fraction);
  c.tampered_attacked = tamper_count(c.attacked, tamper_fraction);
  return c;
}

namespace detail {

inline std::string pixel_hash(const ImageBuffer& img) {
  Sha256 h;
  const std::string dims = std::to_string(img.width()) + "x" + std::to_string(img.height()) + ":";
  h.update(dims);
  h.update(img.data());
  return to_hex(h.finish());
}

inline std::string short_hash(std::string_view text) { return sha256_hex(text).substr(0, 16); }

}  // namespace detail

inline DatasetManifest split(const DatasetManifest& manifest, const Proportions& p, std::uint64_t seed);

// Builds the manifest and materializes every record through sink. Records are
// ordered clean, attacked, tampered-clean, tampered-attacked; sink may be
// called concurrently from several workers.
inline DatasetManifest build(std::span<const PoolEntry> pool, const Loader& load, const Transform& transform,
                             const std::string& transform_id, const BuildOptions& opt, const Sink& sink) {
  if (pool.empty()) throw Error(Errc::kEmptyPool, "image pool is empty");
  if (!(opt.tamper_fraction >= 0.0 && opt.tamper_fraction <= 1.0)) {
    throw Error(Errc::kInvalidParameter, "tamper_fraction must be in [0, 1]");
  }
  const int jobs = std::max(1, opt.jobs);
  const std::size_t n = pool.size();

  std::vector<std::string> hashes(n);
  std::vector<char> reserved(n, 0), accepted(n, 1);

  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < n; ++i) by_source[pool[i].source].push_back(i);
  Rng half_rng(derive_seed(opt.seed, 1));
  for (auto& [source, idx] : by_source) {
    half_rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t k = (idx.size() + 1) / 2; k < idx.size(); ++k) reserved[idx[k]] = 1;
  }

  std::vector<std::optional<ImageBuffer>> cache(std::min(n, opt.cache_images));
  parallel_for(n, jobs, [&](std::size_t i) {
    ImageBuffer x = load(pool[i]);
    hashes[i] = detail::pixel_hash(x);
    if (i < cache.size()) cache[i] = x;
    if (reserved[i] && opt.accept) {
      const ImageBuffer tx = transform(x, derive_seed(opt.seed, 1000 + i));
      accepted[i] = opt.accept(x, tx) ? 1 : 0;
    }
  });

  DatasetManifest m;
  m.transform_id = transform_id;
  m.seed = opt.seed;
  m.tamper_fraction = opt.tamper_fraction;

  std::unordered_set<std::string> used;
  auto make_id = [&](const std::string& content, Role role, std::uint64_t nonce) {
    for (;; ++nonce) {
      std::string id = detail::short_hash(content + "|" + role_name(role) + "|" + std::to_string(nonce));
      if (used.insert(id).second) return id;
    }
  };

  std::vector<std::string> origin_of(n);
  std::vector<std::size_t> clean_idx, attacked_idx;
  for (std::size_t i = 0; i < n; ++i) {
    origin_of[i] = detail::short_hash(hashes[i] + "#" + std::to_string(i));
    if (!reserved[i]) {
      clean_idx.push_back(i);
    } else if (accepted[i]) {
      attacked_idx.push_back(i);
    }
  }

  std::vector<std::size_t> pool_index;  // parallel to m.records
  auto add = [&](std::size_t i, Role role, std::uint64_t nonce, std::optional<operators::OperatorSpec> op) {
    ImageRecord r;
    r.origin_id = origin_of[i];
    r.source = pool[i].source;
    r.role = role;
    r.label = role_label(role);
    r.tampered = role_tampered(role);
    r.op = op;
    r.id = make_id(hashes[i], role, nonce);
    m.records.push_back(std::move(r));
    pool_index.push_back(i);
    m.pool_checksums[origin_of[i]] = hashes[i];
    m.origin_keys[origin_of[i]] = pool[i].key;
  };
  for (std::size_t i : clean_idx) add(i, Role::kClean, 0, std::nullopt);
  for (std::size_t i : attacked_idx) add(i, Role::kAttacked, 0, std::nullopt);

  // Tampered picks without replacement; operator ids are dealt round-robin so
  // every operator is equally represented, then the parameter is sampled.
  auto tamper_class = [&](const std::vector<std::size_t>& members, Role role, std::uint64_t stream) {
    std::vector<std::size_t> order(members);
    Rng rng(derive_seed(opt.seed, stream));
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t k = tamper_count(members.size(), opt.tamper_fraction);
    for (std::size_t j = 0; j < k; ++j) {
      const int op_id = 1 + static_cast<int>(j % operators::kOperatorCount);
      const auto spec = operators::sample_parameter(op_id, derive_seed(derive_seed(opt.seed, stream + 1), j));
      add(order[j], role, j + 1, spec);
    }
  };
  tamper_class(clean_idx, Role::kTamperedClean, 2);
  tamper_class(attacked_idx, Role::kTamperedAttacked, 4);

  m = split(m, opt.proportions, opt.split_seed);

  std::map<std::size_t, std::vector<std::size_t>> per_origin;
  for (std::size_t r = 0; r < m.records.size(); ++r) per_origin[pool_index[r]].push_back(r);
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> work(per_origin.begin(), per_origin.end());

  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const std::size_t i = work[w].first;
    ImageBuffer base = i < cache.size() && cache[i] ? std::move(*cache[i]) : load(pool[i]);
    if (i < cache.size()) cache[i].reset();
    if (reserved[i]) {
      ImageBuffer tx = transform(base, derive_seed(opt.seed, 1000 + i));
      if (!tx.same_geometry(base)) {
        throw Error(Errc::kTransformGeometry,
                    transform_id + " changed geometry to " + std::to_string(tx.width()) + "x" +
                        std::to_string(tx.height()));
      }
      base = std::move(tx);
    }
    for (std::size_t r : work[w].second) {
      const ImageRecord& rec = m.records[r];
      if (rec.op) {
        sink(rec, operators::apply(base, *rec.op));
      } else {
        sink(rec, base);
      }
    }
  });
  return m;
}

// Stratified by (label, source) at origin level; each stratum is shuffled and
// cut by rounded proportions. Derived records inherit their origin's split.
inline DatasetManifest split(const DatasetManifest& manifest, const Proportions& p, std::uint64_t seed) {
  std::map<std::pair<int, std::string>, std::set<std::string>> strata;
  for (const auto& r : manifest.records) strata[{r.label, r.source}].insert(r.origin_id);

  std::unordered_map<std::string, Split> assigned;
  std::uint64_t s_index = 0;
  for (const auto& [key, origins] : strata) {
    std::vector<std::string> order(origins.begin(), origins.end());
    Rng rng(derive_seed(seed, s_index++));
    rng.shuffle(std::span<std::string>(order));
    const double n = static_cast<double>(order.size());
    const std::size_t n_train = std::min(order.size(), static_cast<std::size_t>(std::floor(p.train * n + 0.5)));
    const std::size_t n_val =
        std::min(order.size() - n_train, static_cast<std::size_t>(std::floor(p.val * n + 0.5)));
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Split s = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
      assigned.emplace(order[k], s);
    }
  }

  DatasetManifest out = manifest;
  out.split_seed = seed;
  out.proportions = p;
  for (auto& r : out.records) r.split = assigned.at(r.origin_id);
  return out;
}

// ---- audits ----

struct MetadataFinding {
  std::string field;
  std::size_t clean_count = 0;
  std::size_t attacked_count = 0;
  double clean_rate = 0.0;
  double attacked_rate = 0.0;
};

struct IntegrityReport {
  std::size_t cross_split_overlaps = 0;
  std::size_t origin_overlaps = 0;
  std::size_t id_overlaps = 0;
  bool filename_leakage = false;
  std::vector<std::string> leaking_ids;
  std::vector<MetadataFinding> metadata_findings;
  std::size_t files_audited = 0;
};

inline bool is_opaque_id(std::string_view id) {
  return id.size() == 16 &&
         std::all_of(id.begin(), id.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

namespace detail {

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool all_hex(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
}

}  // namespace detail

inline IntegrityReport audit_integrity(const DatasetManifest& m, const std::optional<std::filesystem::path>& root,
                                       int jobs = 1) {
  IntegrityReport rep;

  std::unordered_map<std::string, std::set<Split>> origin_splits, id_splits;
  std::unordered_map<std::string, std::set<std::string>> id_origins;
  for (const auto& r : m.records) {
    origin_splits[r.origin_id].insert(r.split);
    id_splits[r.id].insert(r.split);
    id_origins[r.id].insert(r.origin_id);
  }
  std::set<std::string> leaking_origins;
  for (const auto& [o, s] : origin_splits) {
    if (s.size() > 1) leaking_origins.insert(o);
  }
  rep.origin_overlaps = leaking_origins.size();
  for (const auto& [id, s] : id_splits) {
    if (s.size() < 2) continue;
    ++rep.id_overlaps;
    // the same leak counted once: only ids whose origins are not already split
    bool covered = false;
    for (const auto& o : id_origins[id]) covered = covered || leaking_origins.count(o);
    if (!covered) ++rep.cross_split_overlaps;
  }
  rep.cross_split_overlaps += rep.origin_overlaps;

  // Hex-only tokens are skipped since a 16-hex id may contain them by chance.
  std::set<std::string> tokens = {"clean", "attack", "tamper", "label", "orig"};
  for (const auto& r : m.records) {
    const std::string s = detail::lower(r.source);
    if (s.size() >= 3) tokens.insert(s);
  }
  for (const auto& r : m.records) {
    const std::string id = detail::lower(r.id);
    bool leak = !is_opaque_id(r.id);
    for (const auto& t : tokens) {
      if (!detail::all_hex(t) && id.find(t) != std::string::npos) leak = true;
    }
    if (leak) rep.leaking_ids.push_back(r.id);
  }
  rep.filename_leakage = !rep.leaking_ids.empty();

  if (root) {
    std::vector<std::set<std::string>> present(m.records.size());
    parallel_for(m.records.size(), jobs, [&](std::size_t i) {
      const auto report = imageio::audit(record_path(*root, m.records[i]));
      auto& p = present[i];
      p.insert(std::string("format:") + imageio::format_name(report.format));
      for (const auto& f : report.ancillary_fields) p.insert("field:" + f.name);
      if (report.has_color_profile) p.insert("color_profile");
    });
    std::map<std::string, std::array<std::size_t, 2>> counts;
    std::array<std::size_t, 2> totals{0, 0};
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const int y = m.records[i].label;
      ++totals[y];
      for (const auto& f : present[i]) ++counts[f][y];
    }
    rep.files_audited = m.records.size();
    for (const auto& [field, c] : counts) {
      const double r0 = totals[0] ? static_cast<double>(c[0]) / totals[0] : 0.0;
      const double r1 = totals[1] ? static_cast<double>(c[1]) / totals[1] : 0.0;
      if (r0 != r1) rep.metadata_findings.push_back({field, c[0], c[1], r0, r1});
    }
  }
  return rep;
}

inline nlohmann::json to_json(const IntegrityReport& r) {
  nlohmann::json findings = nlohmann::json::array();
  for (const auto& f : r.metadata_findings) {
    findings.push_back({{"field", f.field},
                        {"clean_count", f.clean_count},
                        {"attacked_count", f.attacked_count},
                        {"clean_rate", f.clean_rate},
                        {"attacked_rate", f.attacked_rate}});
  }
  return {{"cross_split_overlaps", r.cross_split_overlaps},
          {"origin_overlaps", r.origin_overlaps},
          {"id_overlaps", r.id_overlaps},
          {"filename_leakage", r.filename_leakage},
          {"leaking_ids", r.leaking_ids},
          {"files_audited", r.files_audited},
          {"metadata_findings", std::move(findings)}};
}

struct SizeRow {
  std::string id;
  int label = 0;
  std::uintmax_t byte_size = 0;
};

inline std::vector<SizeRow> file_size_table(const DatasetManifest& m, const std::filesystem::path& root,
                                            std::string_view ext = ".png") {
  std::vector<SizeRow> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    const auto path = record_path(root, r, ext);
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) throw Error(Errc::kMissingFile, "missing " + path.string());
    out.push_back({r.id, r.label, size});
  }
  return out;
}

// ---- serialization ----

inline nlohmann::json settings_json() {
  return {{"png", {{"canonical", true}, {"zlib_level", imageio::kCanonicalPngLevel}, {"filter", "none"}}},
          {"jpeg", {{"subsampling", "4:2:0"}}},
          {"bilateral", {{"sigma_spatial", 3.0}, {"window", 7}}},
          {"nlm", {{"patch", 7}, {"search", 21}}},
          {"hue_range", 180}};
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) {
    records.push_back({{"id", r.id},
                       {"origin_id", r.origin_id},
                       {"source", r.source},
                       {"label", r.label},
                       {"tampered", r.tampered},
                       {"operator", r.op ? operators::to_json(*r.op) : nlohmann::json(nullptr)},
                       {"split", split_name(r.split)},
                       {"role", role_name(r.role)}});
  }
  return {{"version", kManifestVersion},
          {"transform_id", m.transform_id},
          {"seed", m.seed},
          {"split_seed", m.split_seed},
          {"tamper_fraction", m.tamper_fraction},
          {"proportions", {m.proportions.train, m.proportions.val, m.proportions.test}},
          {"settings", settings_json()},
          {"pool_checksums", m.pool_checksums},
          {"origin_keys", m.origin_keys},
          {"records", std::move(records)}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<std::string>() != kManifestVersion) {
      throw Error(Errc::kSchemaViolation, "unsupported manifest version");
    }
    DatasetManifest m;
    m.transform_id = j.at("transform_id").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.tamper_fraction = j.at("tamper_fraction").get<double>();
    const auto& p = j.at("proportions");
    m.proportions = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
    m.pool_checksums = j.at("pool_checksums").get<std::map<std::string, std::string>>();
    if (j.contains("origin_keys")) m.origin_keys = j.at("origin_keys").get<std::map<std::string, std::string>>();
    for (const auto& rj : j.at("records")) {
      ImageRecord r;
      r.id = rj.at("id").get<std::string>();
      r.origin_id = rj.at("origin_id").get<std::string>();
      r.source = rj.at("source").get<std::string>();
      r.label = rj.at("label").get<int>();
      r.tampered = rj.at("tampered").get<bool>();
      if (!rj.at("operator").is_null()) r.op = operators::spec_from_json(rj.at("operator"));
      r.split = parse_split(rj.at("split").get<std::string>());
      r.role = parse_role(rj.at("role").get<std::string>());
      if (r.label != role_label(r.role) || r.tampered != role_tampered(r.role) || r.tampered != r.op.has_value()) {
        throw Error(Errc::kSchemaViolation, "record " + r.id + " is inconsistent with its role");
      }
      if (r.op && !operators::parameter_allowed(r.op->id, r.op->parameter)) {
        throw Error(Errc::kSchemaViolation, "record " + r.id + " has an operator parameter outside its set");
      }
      m.records.push_back(std::move(r));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kSchemaViolation, std::string("manifest: ") + e.what());
  }
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = imageio::read_file(path);
  try {
    return manifest_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::kSchemaViolation, std::string("manifest: ") + e.what());
  }
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const std::string text = to_json(m).dump(2) + "\n";
  imageio::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace stealthbench::dataset
