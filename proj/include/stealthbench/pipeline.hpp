#pragma once

// End-to-end runs: build -> features -> train -> eval -> controls -> sweep ->
// per-operator -> spectral -> report. Stage results are checkpointed under
// {out}/stages keyed by a hash of everything they depend on, so a rerun with
// the same configuration skips finished work and a changed setting recomputes
// only what depends on it.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/config.hpp"
#include "stealthbench/dataset.hpp"
#include "stealthbench/detector.hpp"
#include "stealthbench/hash.hpp"
#include "stealthbench/imageio/imageio.hpp"
#include "stealthbench/metrics.hpp"
#include "stealthbench/operators.hpp"
#include "stealthbench/parallel.hpp"
#include "stealthbench/plot.hpp"
#include "stealthbench/schema.hpp"
#include "stealthbench/spectral.hpp"
#include "stealthbench/stealth.hpp"
#include "stealthbench/synth.hpp"

namespace stealthbench::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kReportFormat = "stealthbench.report/1";

inline int resolve_jobs(int jobs) { return jobs > 0 ? jobs : default_jobs(); }

inline void write_text(const fs::path& path, const std::string& text) {
  imageio::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string read_text(const fs::path& path) {
  const auto bytes = imageio::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// ---- pool ----

inline std::string synth_key(std::uint64_t seed, std::size_t i) {
  return "synth:" + std::to_string(seed) + ":" + std::to_string(i);
}

// Keys of the form synth:<seed>:<index> are regenerated on demand; anything
// else is an image file path.
inline ImageBuffer load_entry(const dataset::PoolEntry& e) {
  if (e.key.rfind("synth:", 0) == 0) {
    const auto colon = e.key.find(':', 6);
    if (colon == std::string::npos) throw Error(Errc::kInvalidParameter, "bad synthetic key " + e.key);
    const std::uint64_t seed = std::stoull(e.key.substr(6, colon - 6));
    const std::uint64_t i = std::stoull(e.key.substr(colon + 1));
    return synth::natural_image(kStandardSize, derive_seed(seed, i));
  }
  return dataset::load_file(e);
}

inline std::vector<dataset::PoolEntry> synth_pool(std::size_t n, int sources, std::uint64_t seed) {
  std::vector<dataset::PoolEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({synth_key(seed, i), "synth" + std::to_string(i % static_cast<std::size_t>(sources))});
  }
  return out;
}

inline bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

// One subdirectory per source; loose files directly under `dir` form a source
// named after the directory. With n > 0, sources are interleaved round-robin
// and the first n files are taken.
inline std::vector<dataset::PoolEntry> scan_pool(const fs::path& dir, std::size_t n) {
  if (!fs::is_directory(dir)) throw Error(Errc::kMissingFile, "pool directory not found: " + dir.string());
  std::map<std::string, std::vector<std::string>> by_source;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) {
      for (const auto& f : fs::directory_iterator(entry.path())) {
        if (f.is_regular_file() && is_image_file(f.path())) {
          by_source[entry.path().filename().string()].push_back(f.path().string());
        }
      }
    } else if (entry.is_regular_file() && is_image_file(entry.path())) {
      by_source[dir.filename().string()].push_back(entry.path().string());
    }
  }
  for (auto& [s, files] : by_source) std::sort(files.begin(), files.end());
  std::vector<dataset::PoolEntry> out;
  for (std::size_t k = 0;; ++k) {
    bool any = false;
    for (const auto& [s, files] : by_source) {
      if (k >= files.size()) continue;
      any = true;
      if (n == 0 || out.size() < n) out.push_back({files[k], s});
    }
    if (!any || (n > 0 && out.size() >= n)) break;
  }
  if (out.empty()) throw Error(Errc::kEmptyPool, "no images under " + dir.string());
  return out;
}

inline std::vector<dataset::PoolEntry> make_pool(const RunConfig& c) {
  if (c.pool.empty()) return synth_pool(static_cast<std::size_t>(c.n), c.synth_sources, c.synth_seed);
  return scan_pool(c.pool, static_cast<std::size_t>(c.n));
}

// Writes a synthetic pool as PNG files, {dir}/synth<k>/<index>.png.
inline std::size_t write_synth_pool(const fs::path& dir, std::size_t n, int sources, std::uint64_t seed, int jobs) {
  const auto pool = synth_pool(n, sources, seed);
  parallel_for(pool.size(), resolve_jobs(jobs), [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    imageio::write_png(dir / pool[i].source / name, load_entry(pool[i]));
  });
  return pool.size();
}

// ---- transforms ----

struct TransformBundle {
  dataset::Transform fn;
  std::string id;
};

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

inline bool executable_exists(const std::string& cmd) {
  auto ok = [](const fs::path& p) {
    std::error_code ec;
    return fs::is_regular_file(p, ec) &&
           (fs::status(p, ec).permissions() & (fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec)) !=
               fs::perms::none;
  };
  if (cmd.find('/') != std::string::npos) return ok(cmd);
  const char* path = std::getenv("PATH");
  if (!path) return false;
  std::stringstream ss(path);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (!dir.empty() && ok(fs::path(dir) / cmd)) return true;
  }
  return false;
}

inline stealth::SyntheticWatermark watermark(const RunConfig& c) {
  stealth::SyntheticWatermark wm;
  wm.key = c.wm_key;
  wm.strength = c.wm_strength;
  wm.threshold = c.wm_threshold;
  return wm;
}

inline stealth::WalkOptions walk_options(const RunConfig& c, std::uint64_t seed) {
  stealth::WalkOptions o;
  o.steps = c.walk_steps;
  o.proposal = stealth::parse_proposal(c.walk_proposal);
  o.seed = seed;
  return o;
}

// Control for the walk's benignity term: unpaired differences among the first
// 2 * walk_control_pairs pool images.
inline spectral::SpectralProfile walk_control(const RunConfig& c, std::span<const dataset::PoolEntry> pool, int jobs) {
  const std::size_t k = std::min(pool.size(), static_cast<std::size_t>(2 * c.walk_control_pairs));
  std::vector<ImageBuffer> imgs(k);
  parallel_for(k, jobs, [&](std::size_t i) { imgs[i] = load_entry(pool[i]); });
  spectral::PsdOptions po;
  po.jobs = jobs;
  return spectral::control_profile(imgs, k / 2, c.control_seed, po);
}

inline TransformBundle make_transform(const RunConfig& c, std::span<const dataset::PoolEntry> pool,
                                      const fs::path& scratch, int jobs) {
  if (c.transform == "identity") return {[](const ImageBuffer& x, std::uint64_t) { return x; }, "identity"};
  if (c.transform == "blur") {
    const double s = c.blur_sigma;
    std::ostringstream id;
    id << "blur(sigma=" << s << ")";
    return {[s](const ImageBuffer& x, std::uint64_t) { return stealthbench::gaussian_blur(x, s); }, id.str()};
  }
  if (c.transform == "jpeg_chain") {
    return {[](const ImageBuffer& x, std::uint64_t) {
              const ImageBuffer a = imageio::decode_jpeg(imageio::encode_jpeg(x, 75));
              return imageio::decode_jpeg(imageio::encode_jpeg(a, 90));
            },
            "jpeg_chain(75,90)"};
  }
  if (c.transform == "walk") {
    const auto wm = watermark(c);
    auto pat = std::make_shared<const std::vector<float>>(stealth::pattern(wm));
    auto control = std::make_shared<const spectral::SpectralProfile>(walk_control(c, pool, jobs));
    const stealth::StealthWeights w{c.walk_fid, c.walk_wm, c.walk_ben};
    const RunConfig cfg = c;
    std::ostringstream id;
    id << "walk(steps=" << c.walk_steps << ",proposal=" << c.walk_proposal << ",weights=" << w.fid << "/" << w.wm
       << "/" << w.ben << ",strength=" << wm.strength << ")";
    return {[=](const ImageBuffer& x, std::uint64_t seed) {
              const ImageBuffer xw = stealth::embed(x, wm, *pat);
              return stealth::walk(xw, x, wm, w, *control, walk_options(cfg, derive_seed(cfg.walk_seed, seed))).current;
            },
            id.str()};
  }
  // external: {cmd} --in {png} --out {png}, one process per image
  const std::string cmd = c.transform_cmd;
  if (!executable_exists(cmd)) throw Error(Errc::kMissingFile, "external transform not found: " + cmd);
  return {[cmd, scratch](const ImageBuffer& x, std::uint64_t seed) {
            char tag[32];
            std::snprintf(tag, sizeof tag, "%016llx", static_cast<unsigned long long>(seed));
            const fs::path in = scratch / (std::string(tag) + "_in.png");
            const fs::path out = scratch / (std::string(tag) + "_out.png");
            imageio::write_png(in, x);
            const std::string line = shell_quote(cmd) + " --in " + shell_quote(in.string()) + " --out " +
                                     shell_quote(out.string()) + " >/dev/null 2>&1";
            const int rc = std::system(line.c_str());
            std::error_code ec;
            fs::remove(in, ec);
            if (rc != 0) throw Error(Errc::kIo, "external transform exited with status " + std::to_string(rc));
            if (!fs::exists(out)) throw Error(Errc::kMissingFile, "external transform wrote no output");
            ImageBuffer y = imageio::decode(out);
            fs::remove(out, ec);
            return y;
          },
          "external(" + cmd + ")"};
}

// ---- features ----

inline dataset::Sink feature_sink(detector::FeatureMap& into, std::mutex& mu) {
  return [&into, &mu](const dataset::ImageRecord& r, const ImageBuffer& img) {
    auto f = detector::extract_features(img);
    std::lock_guard lock(mu);
    into[r.id] = f;
  };
}

using ImageMap = std::function<ImageBuffer(const ImageBuffer&)>;

inline std::vector<const dataset::ImageRecord*> select(const dataset::DatasetManifest& m,
                                                       std::optional<dataset::Split> split) {
  std::vector<const dataset::ImageRecord*> out;
  for (const auto& r : m.records) {
    if (!split || r.split == *split) out.push_back(&r);
  }
  return out;
}

// Features of the stored images, optionally passed through `probe` first.
inline detector::FeatureMap compute_features(const dataset::DatasetManifest& m, const fs::path& data_root, int jobs,
                                             std::optional<dataset::Split> split = {}, const ImageMap& probe = {}) {
  const auto recs = select(m, split);
  std::vector<detector::FeatureVector> f(recs.size());
  parallel_for(recs.size(), jobs, [&](std::size_t i) {
    const ImageBuffer img = imageio::decode(dataset::record_path(data_root, *recs[i]));
    f[i] = detector::extract_features(probe ? probe(img) : img);
  });
  detector::FeatureMap out;
  for (std::size_t i = 0; i < recs.size(); ++i) out[recs[i]->id] = f[i];
  return out;
}

inline json features_to_json(const detector::FeatureMap& f) {
  std::map<std::string, std::vector<double>> sorted;
  for (const auto& [id, v] : f) sorted[id] = std::vector<double>(v.begin(), v.end());
  return sorted;
}

inline detector::FeatureMap features_from_json(const json& j) {
  detector::FeatureMap out;
  for (const auto& [id, v] : j.items()) {
    const auto vec = v.get<std::vector<double>>();
    if (vec.size() != static_cast<std::size_t>(detector::kFeatureCount)) {
      throw Error(Errc::kSchemaViolation, "feature vector for " + id + " has the wrong length");
    }
    detector::FeatureVector fv;
    std::copy(vec.begin(), vec.end(), fv.begin());
    out[id] = fv;
  }
  return out;
}

inline std::vector<detector::Example> examples(const dataset::DatasetManifest& m, dataset::Split s) {
  std::vector<detector::Example> out;
  for (const auto& r : m.records) {
    if (r.split == s) out.push_back({r.id, r.label});
  }
  return out;
}

inline detector::LinearModel train_detector(const dataset::DatasetManifest& m, const detector::FeatureMap& f,
                                            const detector::Hyper& h) {
  return detector::train(examples(m, dataset::Split::kTrain), examples(m, dataset::Split::kVal), f, h);
}

inline metrics::ScoreSet test_scores(const detector::LinearModel& model, const dataset::DatasetManifest& m,
                                     const detector::FeatureMap& f) {
  return detector::score(model, examples(m, dataset::Split::kTest), f);
}

// External scores restricted to the test split, in manifest order.
inline metrics::ScoreSet external_test_scores(const metrics::ScoreSet& all, const dataset::DatasetManifest& m) {
  std::unordered_map<std::string, const metrics::ScoreEntry*> by_id;
  for (const auto& e : all.entries) by_id[e.id] = &e;
  metrics::ScoreSet out;
  out.provenance = all.provenance;
  for (const auto& r : m.records) {
    if (r.split != dataset::Split::kTest) continue;
    const auto it = by_id.find(r.id);
    if (it != by_id.end()) out.entries.push_back(*it->second);
  }
  if (out.entries.empty()) throw Error(Errc::kMissingFeatures, "external scores cover no test record");
  return out;
}

inline metrics::EvaluateOptions eval_options(const RunConfig& c) {
  metrics::EvaluateOptions o;
  o.with_ci = c.with_ci;
  o.resamples = static_cast<std::size_t>(c.resamples);
  o.seed = c.bootstrap_seed;
  o.jobs = resolve_jobs(c.jobs);
  return o;
}

inline detector::Hyper hyper(const RunConfig& c) {
  detector::Hyper h;
  h.lr = c.lr;
  h.epochs = c.epochs;
  h.l2 = c.l2;
  h.patience = c.patience;
  h.seed = c.train_seed;
  return h;
}

inline json skipped_json(const std::string& reason) { return {{"skipped", true}, {"reason", reason}}; }

// ---- controls ----

struct Condition {
  std::string name;
  std::optional<metrics::MetricReport> report;
  metrics::RocCurve curve;
  std::string skip_reason;
};

struct ControlsResult {
  std::vector<Condition> conditions;
  std::optional<double> size_auc_native, size_auc_bmp;
  std::string size_skip_reason;

  const Condition& at(const std::string& name) const {
    for (const auto& c : conditions) {
      if (c.name == name) return c;
    }
    throw Error(Errc::kUnknownId, "no condition " + name);
  }
};

struct ControlOptions {
  std::set<std::string> skip;
  metrics::EvaluateOptions eval;
  int jobs = 1;
};

inline ImageBuffer reencode_bmp(const ImageBuffer& img) { return imageio::decode_bytes(imageio::encode_bmp(img)); }

inline ImageBuffer reencode_png(const ImageBuffer& img) {
  return imageio::decode_bytes(imageio::encode_png_canonical(img));
}

// Detector metrics under each representation probe on the test split, plus
// the file-size baseline for the stored container and for BMP. With external
// scores there is no model to rescore, so probe rows are marked skipped.
inline ControlsResult run_controls(const dataset::DatasetManifest& m, const fs::path& data_root,
                                   const detector::LinearModel* model, const detector::FeatureMap* native_features,
                                   const metrics::ScoreSet* external, const ControlOptions& opt) {
  ControlsResult out;
  const auto test = examples(m, dataset::Split::kTest);
  auto add = [&](const std::string& name, const metrics::ScoreSet& s) {
    out.conditions.push_back({name, metrics::evaluate(s, opt.eval), metrics::roc(s), ""});
  };
  if (model) {
    add("native", native_features ? detector::score(*model, test, *native_features)
                                  : detector::score(*model, test, compute_features(m, data_root, opt.jobs,
                                                                                   dataset::Split::kTest)));
  } else if (external) {
    add("native", external_test_scores(*external, m));
  } else {
    throw Error(Errc::kInvalidParameter, "controls need a model or external scores");
  }
  const std::vector<std::pair<std::string, ImageMap>> probes = {
      {"bmp", reencode_bmp},
      {"canonical_png", reencode_png},
      {"grayscale", [](const ImageBuffer& x) { return operators::apply_probe(x, operators::ChannelProbe::kGrayscale); }},
      {"down_up", [](const ImageBuffer& x) { return operators::apply_probe(x, operators::ChannelProbe::kDownUp); }},
      {"social_media",
       [](const ImageBuffer& x) { return operators::apply_probe(x, operators::ChannelProbe::kSocialMedia); }},
  };
  for (const auto& [name, probe] : probes) {
    if (opt.skip.count(name)) {
      out.conditions.push_back({name, std::nullopt, {}, "skipped by configuration"});
    } else if (!model) {
      out.conditions.push_back({name, std::nullopt, {}, "external scores cannot be recomputed under a probe"});
    } else {
      add(name, detector::score(*model, test, compute_features(m, data_root, opt.jobs, dataset::Split::kTest, probe)));
    }
  }
  if (opt.skip.count("size_auc")) {
    out.size_skip_reason = "skipped by configuration";
    return out;
  }
  const auto recs = select(m, dataset::Split::kTest);
  std::vector<std::pair<int, double>> native(recs.size()), bmp(recs.size());
  parallel_for(recs.size(), opt.jobs, [&](std::size_t i) {
    const auto path = dataset::record_path(data_root, *recs[i]);
    const auto bytes = imageio::read_file(path);
    native[i] = {recs[i]->label, static_cast<double>(bytes.size())};
    bmp[i] = {recs[i]->label, static_cast<double>(imageio::encode_bmp(imageio::decode_bytes(bytes)).size())};
  });
  out.size_auc_native = metrics::auc_from_scalar(native);
  out.size_auc_bmp = metrics::auc_from_scalar(bmp);
  return out;
}

inline json to_json(const ControlsResult& r) {
  json conditions = json::object();
  for (const auto& c : r.conditions) {
    conditions[c.name] = c.report ? metrics::to_json(*c.report) : skipped_json(c.skip_reason);
  }
  json size = json::object();
  if (r.size_auc_native) {
    size["native"] = *r.size_auc_native;
    size["bmp"] = *r.size_auc_bmp;
  } else {
    size["native"] = skipped_json(r.size_skip_reason);
    size["bmp"] = skipped_json(r.size_skip_reason);
  }
  return {{"conditions", conditions}, {"size_auc", size}};
}

// ---- JPEG sweep ----

struct SweepRow {
  int quality = 0;
  metrics::MetricReport report;
  metrics::RocCurve curve;
  double psnr = 0.0;  // from the MSE pooled over all clean test images
  double mean_abs_diff = 0.0;
  double changed_fraction = 0.0;
  std::size_t n_clean = 0;
};

inline std::vector<SweepRow> run_jpeg_sweep(const dataset::DatasetManifest& m, const fs::path& data_root,
                                            const detector::LinearModel& model, std::span<const int> qualities,
                                            const metrics::EvaluateOptions& eval, int jobs) {
  const auto recs = select(m, dataset::Split::kTest);
  const auto test = examples(m, dataset::Split::kTest);
  std::vector<SweepRow> rows;
  for (int q : qualities) {
    std::vector<detector::FeatureVector> f(recs.size());
    std::vector<operators::DistortionStats> d(recs.size());
    parallel_for(recs.size(), jobs, [&](std::size_t i) {
      const ImageBuffer x = imageio::decode(dataset::record_path(data_root, *recs[i]));
      const ImageBuffer y = imageio::decode_jpeg(imageio::encode_jpeg(x, q));
      f[i] = detector::extract_features(y);
      if (recs[i]->label == 0) d[i] = operators::distortion_stats(x, y);
    });
    detector::FeatureMap fm;
    for (std::size_t i = 0; i < recs.size(); ++i) fm[recs[i]->id] = f[i];
    const auto scores = detector::score(model, test, fm);
    SweepRow row;
    row.quality = q;
    row.report = metrics::evaluate(scores, eval);
    row.curve = metrics::roc(scores);
    double mse = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i]->label != 0) continue;
      ++row.n_clean;
      mse += 255.0 * 255.0 / std::pow(10.0, d[i].psnr / 10.0);
      row.mean_abs_diff += d[i].mean_abs_diff;
      row.changed_fraction += d[i].changed_fraction;
    }
    if (row.n_clean > 0) {
      const double n = static_cast<double>(row.n_clean);
      mse /= n;
      row.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(255.0 * 255.0 / mse);
      row.mean_abs_diff /= n;
      row.changed_fraction /= n;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const std::vector<SweepRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"quality", r.quality},
                   {"metrics", metrics::to_json(r.report)},
                   {"clean_distortion",
                    {{"psnr", std::isfinite(r.psnr) ? r.psnr : 999.0},
                     {"mean_abs_diff", r.mean_abs_diff},
                     {"changed_fraction", r.changed_fraction},
                     {"n", r.n_clean}}}});
  }
  return out;
}

// ---- per-operator ----

struct OperatorRow {
  int op = 0;
  std::size_t n = 0;
  std::optional<double> tpr1, tpr01;  // empty for an empty bucket
};

struct PerOperatorTable {
  double threshold1 = 0.0, threshold01 = 0.0;
  std::size_t n_clean = 0;
  std::vector<OperatorRow> rows;
};

// Thresholds come from the untampered clean test scores and stay fixed; each
// operator's TPR is the fraction of its tampered-attacked test scores above
// them.
inline PerOperatorTable run_per_operator(const dataset::DatasetManifest& m, const metrics::ScoreSet& scores) {
  std::unordered_map<std::string, double> by_id;
  for (const auto& e : scores.entries) by_id[e.id] = e.score;
  std::vector<double> clean;
  std::map<int, std::vector<double>> per_op;
  for (const auto& r : m.records) {
    if (r.split != dataset::Split::kTest) continue;
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) continue;
    if (r.role == dataset::Role::kClean) clean.push_back(it->second);
    if (r.role == dataset::Role::kTamperedAttacked) per_op[r.op->id].push_back(it->second);
  }
  if (clean.empty()) throw Error(Errc::kInsufficientImages, "no untampered clean test scores for thresholds");
  PerOperatorTable t;
  t.n_clean = clean.size();
  t.threshold1 = metrics::clean_threshold(clean, metrics::kFpr1);
  t.threshold01 = metrics::clean_threshold(clean, metrics::kFpr01);
  for (int op = 1; op <= operators::kOperatorCount; ++op) {
    OperatorRow row;
    row.op = op;
    const auto& s = per_op[op];
    row.n = s.size();
    if (!s.empty()) {
      row.tpr1 = metrics::fraction_above(s, t.threshold1);
      row.tpr01 = metrics::fraction_above(s, t.threshold01);
    }
    t.rows.push_back(row);
  }
  return t;
}

inline double mean_tpr(const PerOperatorTable& t, int lo, int hi) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : t.rows) {
    if (r.op >= lo && r.op <= hi && r.tpr1) {
      sum += *r.tpr1;
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

inline json to_json(const PerOperatorTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json row = {{"operator", operators::operator_code(r.op)},
                {"label", std::string(operators::operator_label(r.op))},
                {"n", r.n}};
    if (r.tpr1) {
      row["tpr_at_fpr"] = {{"0.01", *r.tpr1}, {"0.001", *r.tpr01}};
    } else {
      row["flag"] = errc_name(Errc::kEmptyOperatorBucket);
    }
    rows.push_back(row);
  }
  json out = {{"thresholds", {{"0.01", t.threshold1}, {"0.001", t.threshold01}}},
              {"n_clean", t.n_clean},
              {"rows", rows}};
  // Smoothing operators (A04-A06) against geometric ones (A07-A09).
  const double smooth = mean_tpr(t, 4, 6), geom = mean_tpr(t, 7, 9);
  if (std::isfinite(smooth) && std::isfinite(geom)) {
    out["smoothing_mean_tpr"] = smooth;
    out["geometric_mean_tpr"] = geom;
    out["direction"] = smooth < geom ? "smoothing_lower" : "smoothing_not_lower";
  }
  return out;
}

// ---- spectral ----

struct SpectralOptions {
  std::size_t pairs = 5000;
  std::size_t control_pairs = 5000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct SpectralResult {
  std::size_t n_pairs = 0, n_control = 0;
  spectral::Psd2D attack_psd, control_psd;
  spectral::SpectralProfile attack, control;
  spectral::LogRatioProfile log_ratio;
};

// Paired residuals T(x) - x over untampered attacked records, against
// unpaired differences of untampered clean records. Origins come back from
// the pool through the manifest's origin keys.
inline SpectralResult run_spectral(const dataset::DatasetManifest& m, const fs::path& data_root,
                                   const SpectralOptions& opt,
                                   const dataset::Loader& load = load_entry) {
  std::vector<const dataset::ImageRecord*> attacked, clean;
  for (const auto& r : m.records) {
    if (r.role == dataset::Role::kAttacked) attacked.push_back(&r);
    if (r.role == dataset::Role::kClean) clean.push_back(&r);
  }
  Rng rng(derive_seed(opt.seed, 1));
  rng.shuffle(std::span<const dataset::ImageRecord*>(attacked));
  SpectralResult out;
  out.n_pairs = std::min(opt.pairs, attacked.size());
  out.n_control = std::min(opt.control_pairs, clean.size() / 2);
  if (out.n_pairs == 0) throw Error(Errc::kInsufficientImages, "no attacked records for paired residuals");
  if (out.n_control == 0) throw Error(Errc::kInsufficientImages, "control needs at least two clean records");
  spectral::PsdOptions po;
  po.jobs = opt.jobs;
  out.attack_psd = spectral::psd_stream(
      out.n_pairs,
      [&](std::size_t i) {
        const auto& r = *attacked[i];
        const auto key = m.origin_keys.find(r.origin_id);
        if (key == m.origin_keys.end()) throw Error(Errc::kUnknownId, "no pool key for origin " + r.origin_id);
        const ImageBuffer x = load({key->second, r.source});
        return spectral::residual(x, imageio::decode(dataset::record_path(data_root, r)));
      },
      po);
  std::vector<std::size_t> order(clean.size());
  std::iota(order.begin(), order.end(), 0);
  Rng crng(derive_seed(opt.seed, 2));
  crng.shuffle(std::span<std::size_t>(order));
  out.control_psd = spectral::psd_stream(
      out.n_control,
      [&](std::size_t i) {
        const ImageBuffer a = imageio::decode(dataset::record_path(data_root, *clean[order[2 * i]]));
        const ImageBuffer b = imageio::decode(dataset::record_path(data_root, *clean[order[2 * i + 1]]));
        return spectral::residual(a, b);
      },
      po);
  out.attack = spectral::radial_profile(out.attack_psd);
  out.control = spectral::radial_profile(out.control_psd);
  out.log_ratio = spectral::log_ratio(out.attack, out.control);
  return out;
}

inline json to_json(const SpectralResult& r) {
  return {{"n_pairs", r.n_pairs},
          {"n_control_pairs", r.n_control},
          {"attack", spectral::to_json(r.attack)},
          {"control", spectral::to_json(r.control)},
          {"log_ratio", spectral::to_json(r.log_ratio)}};
}

inline void write_spectral_artifacts(const SpectralResult& r, const fs::path& dir, const std::string& label) {
  write_text(dir / "attack_profile.csv", spectral::profile_csv(r.attack));
  write_text(dir / "control_profile.csv", spectral::profile_csv(r.control));
  write_text(dir / "log_ratio.csv", spectral::log_ratio_csv(r.log_ratio));
  plot::Series s{label, {}, {}};
  for (std::size_t k = 0; k < r.log_ratio.values.size(); ++k) {
    if (!r.log_ratio.valid[k]) continue;
    s.x.push_back(static_cast<double>(k) / (2.0 * static_cast<double>(r.log_ratio.values.size() - 1)));
    s.y.push_back(r.log_ratio.values[k]);
  }
  write_text(dir / "log_ratio.svg", plot::profile_svg({s}, "residual PSD log-ratio vs clean control", "log10 ratio"));
  try {
    const auto map = spectral::deviation_map_2d(r.attack_psd, r.control_psd);
    imageio::write_png(dir / "deviation_map.png", spectral::deviation_heatmap(map));
    const auto raw = spectral::raw_float_grid(map.values);
    imageio::write_file(dir / "deviation_map.f32", raw);
  } catch (const Error& e) {
    if (e.code() != Errc::kAllCellsMasked) throw;
  }
}

// ---- stage runner ----

struct RunLog {
  std::vector<std::string> executed;
  std::vector<std::string> reused;
};

inline std::string stage_key(const std::string& stage, const json& inputs) {
  return sha256_hex(json{{"stage", stage}, {"tool_version", kToolVersion}, {"inputs", inputs}}.dump());
}

// Returns the checkpointed result when its key matches; otherwise computes,
// then writes the checkpoint atomically. Failures are rethrown as
// StageFailure naming the stage; earlier checkpoints are left untouched.
template <typename Compute>
json run_stage(const fs::path& out, const std::string& name, const std::string& key, RunLog& log, Compute&& compute) {
  const fs::path file = out / "stages" / (name + ".json");
  if (fs::exists(file)) {
    try {
      const json j = json::parse(read_text(file));
      if (j.at("key").get<std::string>() == key) {
        log.reused.push_back(name);
        return j.at("result");
      }
    } catch (const std::exception&) {
      // unreadable checkpoint: recompute
    }
  }
  json result;
  try {
    result = compute();
  } catch (const Error& e) {
    if (e.code() == Errc::kStageFailure) throw;
    throw Error(Errc::kStageFailure, "stage " + name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(Errc::kStageFailure, "stage " + name + ": " + e.what());
  }
  const fs::path tmp = file.string() + ".tmp";
  write_text(tmp, json{{"key", key}, {"result", result}}.dump() + "\n");
  fs::rename(tmp, file);
  log.executed.push_back(name);
  return result;
}

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> s = {"build",    "features",     "train",    "eval", "controls",
                                             "jpeg_sweep", "per_operator", "spectral", "report"};
  return s;
}

inline std::size_t stage_index(const std::string& name) {
  const auto& s = stage_order();
  const auto it = std::find(s.begin(), s.end(), name);
  if (it == s.end()) throw Error(Errc::kConfig, "unknown stage " + name);
  return static_cast<std::size_t>(it - s.begin());
}

struct RunResult {
  json sections = json::object();  // stage name -> result
  json report;                     // filled when the report stage ran
  RunLog log;
};

inline json seeds_json(const RunConfig& c) {
  return {{"dataset", c.seed},         {"split", c.split_seed}, {"train", c.train_seed},
          {"bootstrap", c.bootstrap_seed}, {"control", c.control_seed}, {"walk", c.walk_seed},
          {"synth", c.synth_seed},     {"watermark_key", c.wm_key}};
}

inline json split_counts(const dataset::DatasetManifest& m) {
  json s = json::object();
  for (auto sp : dataset::kSplits) s[dataset::split_name(sp)] = m.in_split(sp).size();
  return s;
}

// Runs stages in order up to and including `until`. Stages outside the path
// to `until` are not touched.
inline RunResult run(const RunConfig& cfg, const std::string& until = "report") {
  validate(cfg);
  const std::size_t last = stage_index(until);
  const fs::path out = cfg.out;
  const fs::path data = out / "data";
  const int jobs = resolve_jobs(cfg.jobs);
  RunResult res;
  fs::create_directories(out / "stages");
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
  auto wanted = [&](const std::string& s) { return stage_index(s) <= last; };

  // build
  const json build_inputs = {{"pool", cfg.pool},
                             {"n", cfg.n},
                             {"synth_sources", cfg.synth_sources},
                             {"synth_seed", cfg.synth_seed},
                             {"transform", cfg.transform},
                             {"transform_cmd", cfg.transform_cmd},
                             {"blur_sigma", cfg.blur_sigma},
                             {"tamper_fraction", cfg.tamper_fraction},
                             {"seed", cfg.seed},
                             {"split_seed", cfg.split_seed},
                             {"walk", cfg.transform == "walk" ? json{{"steps", cfg.walk_steps},
                                                                     {"proposal", cfg.walk_proposal},
                                                                     {"weights", {cfg.walk_fid, cfg.walk_wm, cfg.walk_ben}},
                                                                     {"control_pairs", cfg.walk_control_pairs},
                                                                     {"control_seed", cfg.control_seed},
                                                                     {"walk_seed", cfg.walk_seed},
                                                                     {"wm_key", cfg.wm_key},
                                                                     {"strength", cfg.wm_strength},
                                                                     {"threshold", cfg.wm_threshold}}
                                                              : json(nullptr)}};
  const std::string k_build = stage_key("build", build_inputs);
  const json built = run_stage(out, "build", k_build, res.log, [&] {
    std::error_code ec;
    fs::remove_all(data, ec);
    fs::remove_all(out / "scratch", ec);
    const auto pool = make_pool(cfg);
    const auto t = make_transform(cfg, pool, out / "scratch", jobs);
    dataset::BuildOptions bo;
    bo.tamper_fraction = cfg.tamper_fraction;
    bo.seed = cfg.seed;
    bo.split_seed = cfg.split_seed;
    bo.jobs = jobs;
    bo.cache_images = static_cast<std::size_t>(cfg.cache_images);
    const auto m = dataset::build(pool, load_entry, t.fn, t.id, bo, dataset::png_writer(data));
    fs::remove_all(out / "scratch", ec);
    const json mj = dataset::to_json(m);
    schema::validate_manifest(mj);
    write_text(out / "manifest.json", mj.dump(2) + "\n");
    const auto integrity = dataset::audit_integrity(m, data, jobs);
    return json{{"manifest", mj}, {"integrity", dataset::to_json(integrity)}};
  });
  const auto manifest = dataset::manifest_from_json(built.at("manifest"));
  {
    json d = {{"transform_id", manifest.transform_id},
              {"counts",
               {{"clean", manifest.count(0, false)},
                {"attacked", manifest.count(1, false)},
                {"tampered_clean", manifest.count(0, true)},
                {"tampered_attacked", manifest.count(1, true)}}},
              {"splits", split_counts(manifest)},
              {"integrity", built.at("integrity")}};
    res.sections["build"] = d;
  }
  if (last == 0) return res;

  const bool external = !cfg.scores.empty();
  const auto eval = eval_options(cfg);
  std::optional<detector::FeatureMap> features;
  std::optional<detector::LinearModel> model;
  std::optional<metrics::ScoreSet> ext_scores;
  metrics::ScoreSet scores;
  std::string k_model;

  if (external) {
    const auto bytes = imageio::read_file(cfg.scores);
    k_model = stage_key("train", {{"build", k_build}, {"scores_sha256", sha256_hex(bytes)}});
    const json ingested = run_stage(out, "train", k_model, res.log, [&] {
      const auto s = detector::ingest_scores(cfg.scores, dataset::labels_map(manifest));
      write_text(out / "scores.csv", detector::export_scores_csv(s));
      json entries = json::array();
      for (const auto& e : s.entries) entries.push_back({e.id, e.label, e.score});
      return json{{"provenance", "external"}, {"entries", entries}};
    });
    metrics::ScoreSet s;
    s.provenance = metrics::Provenance::kExternal;
    for (const auto& e : ingested.at("entries")) s.entries.push_back({e[0].get<std::string>(), e[1].get<int>(), e[2].get<double>()});
    ext_scores = s;
    scores = external_test_scores(s, manifest);
    res.sections["train"] = {{"provenance", "external"}};
  } else {
    const std::string k_feat = stage_key("features", {{"build", k_build}});
    const json fj = run_stage(out, "features", k_feat, res.log,
                              [&] { return features_to_json(compute_features(manifest, data, jobs)); });
    features = features_from_json(fj);
    if (last == 1) return res;
    k_model = stage_key("train", {{"features", k_feat},
                                  {"lr", cfg.lr},
                                  {"epochs", cfg.epochs},
                                  {"l2", cfg.l2},
                                  {"patience", cfg.patience},
                                  {"seed", cfg.train_seed}});
    const json mj = run_stage(out, "train", k_model, res.log, [&] {
      const auto mdl = train_detector(manifest, *features, hyper(cfg));
      const json j = detector::to_json(mdl);
      write_text(out / "model.json", j.dump(2) + "\n");
      write_text(out / "scores.csv", detector::export_scores_csv(test_scores(mdl, manifest, *features)));
      return j;
    });
    model = detector::model_from_json(mj);
    scores = test_scores(*model, manifest, *features);
    res.sections["train"] = {{"provenance", "native"},
                             {"best_epoch", model->best_epoch},
                             {"epochs_run", model->epochs_run},
                             {"best_val_auroc", model->best_val_auroc}};
  }
  if (last <= stage_index("train")) return res;

  const json eval_inputs = {{"with_ci", cfg.with_ci}, {"resamples", cfg.resamples}, {"seed", cfg.bootstrap_seed}};
  const std::string k_eval = stage_key("eval", {{"model", k_model}, {"eval", eval_inputs}});
  res.sections["eval"] = run_stage(out, "eval", k_eval, res.log, [&] {
    const auto curve = metrics::roc(scores);
    write_text(out / "roc.csv", metrics::roc_csv(curve));
    write_text(out / "plots" / "roc.svg", plot::roc_svg({{"native", curve}}, "ROC, test split"));
    return metrics::to_json(metrics::evaluate(scores, eval));
  });

  if (wanted("controls")) {
    if (cfg.skipped("controls")) {
      res.sections["controls"] = skipped_json("skipped by configuration");
    } else {
      json skip_list = cfg.skip;
      const std::string k = stage_key("controls", {{"model", k_model}, {"eval", eval_inputs}, {"skip", skip_list}});
      res.sections["controls"] = run_stage(out, "controls", k, res.log, [&] {
        ControlOptions co;
        co.skip = std::set<std::string>(cfg.skip.begin(), cfg.skip.end());
        co.eval = eval;
        co.jobs = jobs;
        const auto r = run_controls(manifest, data, model ? &*model : nullptr, features ? &*features : nullptr,
                                    ext_scores ? &*ext_scores : nullptr, co);
        std::vector<std::pair<std::string, metrics::RocCurve>> curves;
        for (const auto& c : r.conditions) {
          if (c.report) curves.emplace_back(c.name, c.curve);
        }
        write_text(out / "plots" / "controls_roc.svg", plot::roc_svg(curves, "ROC under representation controls"));
        return to_json(r);
      });
    }
  }

  if (wanted("jpeg_sweep")) {
    if (cfg.skipped("jpeg_sweep")) {
      res.sections["jpeg_sweep"] = skipped_json("skipped by configuration");
    } else if (!model) {
      res.sections["jpeg_sweep"] = skipped_json("external scores cannot be recomputed after recompression");
    } else {
      const std::string k =
          stage_key("jpeg_sweep", {{"model", k_model}, {"eval", eval_inputs}, {"qualities", cfg.jpeg_qualities}});
      res.sections["jpeg_sweep"] = run_stage(out, "jpeg_sweep", k, res.log, [&] {
        const auto rows = run_jpeg_sweep(manifest, data, *model, cfg.jpeg_qualities, eval, jobs);
        std::vector<std::pair<std::string, metrics::RocCurve>> curves;
        for (const auto& r : rows) curves.emplace_back("Q" + std::to_string(r.quality), r.curve);
        write_text(out / "plots" / "jpeg_sweep_roc.svg", plot::roc_svg(curves, "ROC under JPEG recompression"));
        return to_json(rows);
      });
    }
  }

  if (wanted("per_operator")) {
    if (cfg.skipped("per_operator")) {
      res.sections["per_operator"] = skipped_json("skipped by configuration");
    } else {
      const std::string k = stage_key("per_operator", {{"model", k_model}});
      res.sections["per_operator"] =
          run_stage(out, "per_operator", k, res.log, [&] { return to_json(run_per_operator(manifest, scores)); });
    }
  }

  if (wanted("spectral")) {
    if (cfg.skipped("spectral")) {
      res.sections["spectral"] = skipped_json("skipped by configuration");
    } else {
      const std::string k = stage_key("spectral", {{"build", k_build},
                                                   {"pairs", cfg.spectral_pairs},
                                                   {"control_pairs", cfg.control_pairs},
                                                   {"seed", cfg.control_seed}});
      res.sections["spectral"] = run_stage(out, "spectral", k, res.log, [&] {
        SpectralOptions so;
        so.pairs = static_cast<std::size_t>(cfg.spectral_pairs);
        so.control_pairs = static_cast<std::size_t>(cfg.control_pairs);
        so.seed = cfg.control_seed;
        so.jobs = jobs;
        try {
          const auto r = run_spectral(manifest, data, so);
          write_spectral_artifacts(r, out / "spectral", manifest.transform_id);
          return to_json(r);
        } catch (const Error& e) {
          // an identity-like transform leaves nothing to fingerprint
          if (e.code() != Errc::kAllBinsMasked) throw;
          return skipped_json(std::string("attack residuals carry no power: ") + e.what());
        }
      });
    }
  }

  if (until != "report") return res;
  json report = {{"format", kReportFormat},
                 {"tool_version", kToolVersion},
                 {"config", to_json(cfg)},
                 {"seeds", seeds_json(cfg)},
                 {"dataset", res.sections["build"]},
                 {"detector", res.sections["train"]},
                 {"native", res.sections["eval"]},
                 {"controls", res.sections["controls"]},
                 {"jpeg_sweep", res.sections["jpeg_sweep"]},
                 {"per_operator", res.sections["per_operator"]},
                 {"spectral", res.sections["spectral"]}};
  json artifacts = {{"manifest", "manifest.json"}, {"config", "config.json"}, {"roc_svg", "plots/roc.svg"},
                    {"roc_csv", "roc.csv"},         {"scores_csv", "scores.csv"}};
  if (model) artifacts["model"] = "model.json";
  if (fs::exists(out / "plots" / "controls_roc.svg")) artifacts["controls_roc_svg"] = "plots/controls_roc.svg";
  if (fs::exists(out / "plots" / "jpeg_sweep_roc.svg")) artifacts["jpeg_sweep_roc_svg"] = "plots/jpeg_sweep_roc.svg";
  if (res.sections["spectral"].contains("n_pairs")) {
    artifacts["log_ratio_svg"] = "spectral/log_ratio.svg";
    artifacts["log_ratio_csv"] = "spectral/log_ratio.csv";
  }
  report["artifacts"] = artifacts;
  try {
    schema::validate_report(report);
  } catch (const Error& e) {
    throw Error(Errc::kStageFailure, std::string("stage report: ") + e.what());
  }
  write_text(out / "report.json", report.dump(2) + "\n");
  res.log.executed.push_back("report");
  res.report = std::move(report);
  return res;
}

// ---- stealth walks over fixtures ----

struct WalkSummary {
  std::size_t index = 0;
  bool flipped = false;
  double statistic_before = 0.0, statistic_after = 0.0;
  double psnr = 0.0;
  int accepted = 0;
  bool monotone = true;
  stealth::StealthScore final_score;
};

// Embeds, walks and re-verifies each of the first `count` pool images.
inline std::vector<WalkSummary> run_walks(const RunConfig& c, std::size_t count, std::vector<ImageBuffer>* outputs = nullptr) {
  const int jobs = resolve_jobs(c.jobs);
  auto pool = make_pool(c);
  if (pool.size() < count) throw Error(Errc::kInsufficientImages, "pool smaller than the walk count");
  const auto wm = watermark(c);
  const auto pat = stealth::pattern(wm);
  const auto control = walk_control(c, pool, jobs);
  const stealth::StealthWeights w{c.walk_fid, c.walk_wm, c.walk_ben};
  std::vector<WalkSummary> out(count);
  if (outputs) outputs->assign(count, ImageBuffer());
  parallel_for(count, jobs, [&](std::size_t i) {
    const ImageBuffer x = load_entry(pool[i]);
    const ImageBuffer xw = stealth::embed(x, wm, pat);
    const auto st = stealth::walk(xw, x, wm, w, control, walk_options(c, derive_seed(c.walk_seed, i)));
    WalkSummary s;
    s.index = i;
    s.statistic_before = stealth::verify(xw, wm, pat).statistic;
    const auto v = stealth::verify(st.current, wm, pat);
    s.statistic_after = v.statistic;
    s.flipped = !v.decision;
    s.psnr = operators::psnr(st.current, x);
    s.accepted = st.accepted;
    double last = -std::numeric_limits<double>::infinity();
    for (const auto& h : st.history) {
      if (!h.accepted) continue;
      if (h.S < last) s.monotone = false;
      last = h.S;
    }
    s.final_score = st.score;
    out[i] = s;
    if (outputs) (*outputs)[i] = st.current;
  });
  return out;
}

inline json to_json(const std::vector<WalkSummary>& walks) {
  json rows = json::array();
  std::size_t flips = 0, flips_at_quality = 0;
  for (const auto& s : walks) {
    flips += s.flipped;
    flips_at_quality += s.flipped && s.psnr >= 30.0;
    rows.push_back({{"index", s.index},
                    {"flipped", s.flipped},
                    {"statistic_before", s.statistic_before},
                    {"statistic_after", s.statistic_after},
                    {"psnr", std::isfinite(s.psnr) ? s.psnr : 999.0},
                    {"accepted", s.accepted},
                    {"monotone", s.monotone},
                    {"S", s.final_score.S},
                    {"F", s.final_score.F},
                    {"W", s.final_score.W},
                    {"B", s.final_score.B}});
  }
  return {{"walks", rows},
          {"flip_rate", walks.empty() ? 0.0 : static_cast<double>(flips) / walks.size()},
          {"flip_rate_psnr30", walks.empty() ? 0.0 : static_cast<double>(flips_at_quality) / walks.size()}};
}

}  // namespace stealthbench::pipeline
