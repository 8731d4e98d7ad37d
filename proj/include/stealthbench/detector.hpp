#pragma once

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/image.hpp"
#include "stealthbench/metrics.hpp"
#include "stealthbench/rng.hpp"
#include "stealthbench/spectral.hpp"

namespace stealthbench::detector {

inline constexpr int kRadialFeatures = 64;
inline constexpr int kStatFeatures = 6;
inline constexpr int kGradientBins = 10;
inline constexpr int kFeatureCount = kRadialFeatures + kStatFeatures + kGradientBins;

using FeatureVector = std::array<double, kFeatureCount>;

// Gradient-magnitude histogram edges in 8-bit units; the last bin is open.
inline constexpr std::array<double, kGradientBins> kGradientEdges = {0, 1, 2, 4, 8, 16, 32, 64, 128, 256};

// Radial group g covers bins [4g, 4g + 4); the last group absorbs 256.
inline std::pair<int, int> radial_group(int g) {
  const int lo = 4 * g;
  const int hi = g == kRadialFeatures - 1 ? 257 : lo + 4;
  return {lo, hi};
}

inline int gradient_bin(double magnitude) {
  int b = 0;
  while (b + 1 < kGradientBins && magnitude >= kGradientEdges[b + 1]) ++b;
  return b;
}

inline FeatureVector extract_features(const ImageBuffer& img) {
  require_standard(img, "extract_features");
  FeatureVector f{};
  // Radial log-energy of the image's own windowed spectrum.
  const RealField gray = spectral::intensity(img);
  spectral::PsdAccumulator acc;
  acc.add(gray);
  const auto prof = spectral::radial_profile(acc.result());
  for (int g = 0; g < kRadialFeatures; ++g) {
    const auto [lo, hi] = radial_group(g);
    double m = 0;
    for (int k = lo; k < hi; ++k) m += prof.bins[k];
    m /= (hi - lo);
    f[g] = std::log10(m + 1e-20);
  }
  // Per-channel mean and variance in [0,1] units.
  const auto d = img.data();
  const std::size_t n = img.pixel_count();
  // Integer moments keep both statistics exact up to the final division.
  for (int c = 0; c < 3; ++c) {
    std::uint64_t s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t v = d[i * 3 + c];
      s += v;
      s2 += v * v;
    }
    const double nn = static_cast<double>(n);
    f[kRadialFeatures + 2 * c] = static_cast<double>(s) / (nn * 255.0);
    const double centred = static_cast<double>(s2 * n - s * s);  // n^2 var, exact below 2^53
    f[kRadialFeatures + 2 * c + 1] = centred / (nn * nn * 255.0 * 255.0);
  }
  // Forward-difference gradient magnitude of the channel mean, 8-bit units.
  // Differences are taken on integer channel sums so bin edges are exact.
  std::array<double, kGradientBins> hist{};
  const int w = img.width();
  const int h = img.height();
  auto sum = [&](int x, int y) {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    return static_cast<int>(d[i]) + d[i + 1] + d[i + 2];
  };
  std::size_t count = 0;
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      const int gx = sum(x + 1, y) - sum(x, y);
      const int gy = sum(x, y + 1) - sum(x, y);
      const double mag = std::sqrt(static_cast<double>(gx * gx + gy * gy)) / 3.0;
      hist[gradient_bin(mag)] += 1;
      ++count;
    }
  }
  for (int b = 0; b < kGradientBins; ++b) f[kRadialFeatures + kStatFeatures + b] = hist[b] / count;
  return f;
}

struct Hyper {
  double lr = 0.5;
  int epochs = 300;
  double l2 = 1e-3;
  int patience = 7;
  std::uint64_t seed = 0;
};

struct LinearModel {
  std::vector<double> weights = std::vector<double>(kFeatureCount, 0.0);
  double bias = 0.0;
  std::vector<double> mean = std::vector<double>(kFeatureCount, 0.0);
  std::vector<double> stdev = std::vector<double>(kFeatureCount, 1.0);
  Hyper hyper;
  int best_epoch = 0;
  int epochs_run = 0;
  double best_val_auroc = 0.0;
};

struct Example {
  std::string id;
  int label = 0;
};

using FeatureMap = std::unordered_map<std::string, FeatureVector>;

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Normalised design matrix for logistic training.
struct Design {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};

// Mean logistic loss plus (l2 / 2) |w|^2; the bias is not penalised.
inline double loss(const Design& d, const std::vector<double>& w, double b, double l2) {
  double total = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    double z = b;
    for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * d.x[i][k];
    total += softplus(z) - d.y[i] * z;
  }
  double reg = 0;
  for (double v : w) reg += v * v;
  return total / d.x.size() + 0.5 * l2 * reg;
}

inline void gradient(const Design& d, const std::vector<double>& w, double b, double l2, std::vector<double>& gw,
                     double& gb) {
  gw.assign(w.size(), 0.0);
  gb = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    double z = b;
    for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * d.x[i][k];
    const double r = sigmoid(z) - d.y[i];
    for (std::size_t k = 0; k < w.size(); ++k) gw[k] += r * d.x[i][k];
    gb += r;
  }
  const double inv = 1.0 / d.x.size();
  for (std::size_t k = 0; k < w.size(); ++k) gw[k] = gw[k] * inv + l2 * w[k];
  gb *= inv;
}

inline std::vector<double> normalise(const FeatureVector& f, const LinearModel& m) {
  std::vector<double> x(kFeatureCount);
  for (int k = 0; k < kFeatureCount; ++k) x[k] = (f[k] - m.mean[k]) / m.stdev[k];
  return x;
}

inline double raw_score(const LinearModel& m, const FeatureVector& f) {
  double z = m.bias;
  for (int k = 0; k < kFeatureCount; ++k) z += m.weights[k] * (f[k] - m.mean[k]) / m.stdev[k];
  return sigmoid(z);
}

namespace detail {

inline const FeatureVector& lookup(const FeatureMap& features, const std::string& id) {
  const auto it = features.find(id);
  if (it == features.end()) throw Error(Errc::kMissingFeatures, "no features for id " + id);
  return it->second;
}

inline void require_both_labels(std::span<const Example> ex, const char* split) {
  bool pos = false, neg = false;
  for (const auto& e : ex) (e.label ? pos : neg) = true;
  if (!pos || !neg) throw Error(Errc::kDegenerateSplit, std::string(split) + " split lacks one label");
}

inline double val_auroc(const Design& d, const std::vector<double>& w, double b) {
  std::vector<std::pair<double, int>> v(d.x.size());
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    double z = b;
    for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * d.x[i][k];
    // The logit orders exactly like the sigmoid and never saturates into ties.
    v[i] = {z, d.y[i]};
  }
  return metrics::trapezoid_area(metrics::roc(v));
}

}  // namespace detail

// Full-batch gradient descent on the logistic loss with L2. Normalisation
// statistics come from `train` only. The epoch with the best validation AUROC
// is kept (lower validation loss breaks ties); training stops once `patience`
// epochs pass without a new best.
inline LinearModel train(std::span<const Example> train_set, std::span<const Example> val_set,
                         const FeatureMap& features, const Hyper& hyper = {}) {
  if (train_set.empty() || val_set.empty()) throw Error(Errc::kDegenerateSplit, "train and val splits must be non-empty");
  detail::require_both_labels(train_set, "train");
  detail::require_both_labels(val_set, "val");
  LinearModel m;
  m.hyper = hyper;
  const std::size_t n = train_set.size();
  for (const auto& e : train_set) {
    const auto& f = detail::lookup(features, e.id);
    for (int k = 0; k < kFeatureCount; ++k) m.mean[k] += f[k];
  }
  for (auto& v : m.mean) v /= n;
  std::vector<double> var(kFeatureCount, 0.0);
  for (const auto& e : train_set) {
    const auto& f = detail::lookup(features, e.id);
    for (int k = 0; k < kFeatureCount; ++k) var[k] += (f[k] - m.mean[k]) * (f[k] - m.mean[k]);
  }
  for (int k = 0; k < kFeatureCount; ++k) {
    const double s = std::sqrt(var[k] / n);
    m.stdev[k] = s > 1e-12 ? s : 1.0;
  }
  auto design = [&](std::span<const Example> ex) {
    Design d;
    for (const auto& e : ex) {
      d.x.push_back(normalise(detail::lookup(features, e.id), m));
      d.y.push_back(e.label);
    }
    return d;
  };
  const Design tr = design(train_set);
  const Design va = design(val_set);

  Rng rng(hyper.seed);
  std::vector<double> w(kFeatureCount);
  for (auto& v : w) v = 0.01 * rng.normal();
  double b = 0.0;
  std::vector<double> best_w = w;
  double best_b = b;
  double best_auc = detail::val_auroc(va, w, b);
  double best_loss = loss(va, w, b, 0.0);
  int since = 0;
  std::vector<double> gw;
  double gb;
  int epoch = 0;
  for (epoch = 1; epoch <= hyper.epochs; ++epoch) {
    gradient(tr, w, b, hyper.l2, gw, gb);
    for (int k = 0; k < kFeatureCount; ++k) w[k] -= hyper.lr * gw[k];
    b -= hyper.lr * gb;
    const double auc = detail::val_auroc(va, w, b);
    const double vl = loss(va, w, b, 0.0);
    if (auc > best_auc || (auc == best_auc && vl < best_loss)) {
      best_auc = auc;
      best_loss = vl;
      best_w = w;
      best_b = b;
      m.best_epoch = epoch;
      since = 0;
    } else if (++since >= hyper.patience) {
      break;
    }
  }
  m.epochs_run = std::min(epoch, hyper.epochs);
  m.weights = best_w;
  m.bias = best_b;
  m.best_val_auroc = best_auc;
  return m;
}

inline metrics::ScoreSet score(const LinearModel& m, std::span<const Example> examples, const FeatureMap& features) {
  metrics::ScoreSet s;
  s.provenance = metrics::Provenance::kNative;
  s.entries.reserve(examples.size());
  for (const auto& e : examples) s.entries.push_back({e.id, e.label, raw_score(m, detail::lookup(features, e.id))});
  return s;
}

inline nlohmann::json to_json(const LinearModel& m) {
  return {{"weights", m.weights},
          {"bias", m.bias},
          {"normalization", {{"mean", m.mean}, {"stdev", m.stdev}}},
          {"hyper",
           {{"lr", m.hyper.lr}, {"epochs", m.hyper.epochs}, {"l2", m.hyper.l2}, {"patience", m.hyper.patience}}},
          {"seed", m.hyper.seed},
          {"best_epoch", m.best_epoch},
          {"epochs_run", m.epochs_run},
          {"best_val_auroc", m.best_val_auroc}};
}

inline LinearModel model_from_json(const nlohmann::json& j) {
  LinearModel m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.bias = j.at("bias").get<double>();
  m.mean = j.at("normalization").at("mean").get<std::vector<double>>();
  m.stdev = j.at("normalization").at("stdev").get<std::vector<double>>();
  if (m.weights.size() != kFeatureCount || m.mean.size() != kFeatureCount || m.stdev.size() != kFeatureCount) {
    throw Error(Errc::kConfig, "model has wrong feature count");
  }
  const auto& h = j.at("hyper");
  m.hyper.lr = h.at("lr").get<double>();
  m.hyper.epochs = h.at("epochs").get<int>();
  m.hyper.l2 = h.at("l2").get<double>();
  m.hyper.patience = h.at("patience").get<int>();
  m.hyper.seed = j.at("seed").get<std::uint64_t>();
  m.best_epoch = j.value("best_epoch", 0);
  m.epochs_run = j.value("epochs_run", 0);
  m.best_val_auroc = j.value("best_val_auroc", 0.0);
  return m;
}

// id,score with a header; 17 significant digits so ingest reproduces the
// doubles exactly.
inline std::string export_scores_csv(const metrics::ScoreSet& s) {
  std::ostringstream os;
  os.precision(17);
  os << "id,score\n";
  for (const auto& e : s.entries) os << e.id << ',' << e.score << '\n';
  return os.str();
}

namespace detail {

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

}  // namespace detail

// Joins an external id,score table with manifest labels. Every row must name
// a known id exactly once and carry a score in [0,1].
inline metrics::ScoreSet ingest_scores_text(const std::string& text,
                                            const std::unordered_map<std::string, int>& labels) {
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) throw Error(Errc::kMalformedRow, "empty score file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // UTF-8 BOM
  if (detail::trim(line) != "id,score") throw Error(Errc::kMalformedRow, "row 1: header must be 'id,score'");
  metrics::ScoreSet s;
  s.provenance = metrics::Provenance::kExternal;
  std::unordered_set<std::string> seen;
  row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw Error(Errc::kMalformedRow, "row " + std::to_string(row) + ": expected two columns");
    }
    const std::string id = detail::trim(line.substr(0, comma));
    const std::string value = detail::trim(line.substr(comma + 1));
    if (id.empty() || value.empty()) throw Error(Errc::kMalformedRow, "row " + std::to_string(row) + ": empty field");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(value.c_str(), &end);
    if (end != value.c_str() + value.size() || errno == ERANGE || std::isnan(v)) {
      throw Error(Errc::kMalformedRow, "row " + std::to_string(row) + ": score '" + value + "' is not a number");
    }
    if (v < 0.0 || v > 1.0) {
      throw Error(Errc::kScoreOutOfRange, "row " + std::to_string(row) + ": score " + value + " outside [0,1]");
    }
    const auto it = labels.find(id);
    if (it == labels.end()) throw Error(Errc::kUnknownId, "row " + std::to_string(row) + ": unknown id " + id);
    if (!seen.insert(id).second) throw Error(Errc::kMalformedRow, "row " + std::to_string(row) + ": duplicate id " + id);
    s.entries.push_back({id, it->second, v});
  }
  return s;
}

inline metrics::ScoreSet ingest_scores(const std::string& path, const std::unordered_map<std::string, int>& labels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::kMissingFile, "cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return ingest_scores_text(os.str(), labels);
}

}  // namespace stealthbench::detector
