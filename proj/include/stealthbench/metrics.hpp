#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stealthbench/error.hpp"
#include "stealthbench/parallel.hpp"
#include "stealthbench/rng.hpp"

namespace stealthbench::metrics {

struct ScoreEntry {
  std::string id;
  int label = 0;  // 1 = attacked
  double score = 0.0;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

enum class Provenance { kNative, kExternal };

inline const char* provenance_name(Provenance p) { return p == Provenance::kNative ? "native" : "external"; }

struct ScoreSet {
  std::vector<ScoreEntry> entries;
  Provenance provenance = Provenance::kNative;

  friend bool operator==(const ScoreSet&, const ScoreSet&) = default;
};

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  // thresholds[i] is the score cut producing point i (score >= cut is
  // positive); the first point uses +inf.
  std::vector<double> thresholds;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct Interval {
  double lo = 0.0, hi = 0.0;
};

enum class Metric { kAuroc, kTpr1, kTpr01 };

inline const char* metric_name(Metric m) {
  switch (m) {
    case Metric::kAuroc: return "auroc";
    case Metric::kTpr1: return "tpr@1%";
    case Metric::kTpr01: return "tpr@0.1%";
  }
  return "?";
}

inline constexpr double kFpr1 = 0.01;
inline constexpr double kFpr01 = 0.001;
inline constexpr double kAccuracyThreshold = 0.5;

struct MetricReport {
  double auroc = 0.0;
  double accuracy = 0.0;
  std::map<double, double> tpr_at_fpr;
  Confusion confusion;
  std::map<std::string, Interval> ci;
  std::size_t n_pos = 0, n_neg = 0;
  std::map<double, std::size_t> fp_counts;
  std::size_t redrawn_resamples = 0;
};

namespace detail {

// Distinct scores in descending order with the (weighted) label mass at each.
struct Group {
  double score;
  double pos;
  double neg;
};

inline std::vector<Group> groups_from_sorted(std::span<const std::pair<double, int>> sorted_desc,
                                             std::span<const double> weight = {}) {
  std::vector<Group> out;
  for (std::size_t i = 0; i < sorted_desc.size(); ++i) {
    const double w = weight.empty() ? 1.0 : weight[i];
    if (w == 0.0) continue;
    const auto [s, label] = sorted_desc[i];
    if (out.empty() || out.back().score != s) out.push_back({s, 0.0, 0.0});
    (label ? out.back().pos : out.back().neg) += w;
  }
  return out;
}

inline std::vector<std::pair<double, int>> sort_desc(std::span<const std::pair<double, int>> values) {
  std::vector<std::pair<double, int>> v(values.begin(), values.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return v;
}

inline RocCurve roc_from_groups(const std::vector<Group>& groups) {
  double P = 0, Nn = 0;
  for (const auto& g : groups) {
    P += g.pos;
    Nn += g.neg;
  }
  if (P == 0 || Nn == 0) throw Error(Errc::kDegenerateLabels, "roc needs both labels");
  RocCurve c;
  c.fpr.reserve(groups.size() + 1);
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  double tp = 0, fp = 0;
  for (const auto& g : groups) {
    tp += g.pos;
    fp += g.neg;
    c.fpr.push_back(fp / Nn);
    c.tpr.push_back(tp / P);
    c.thresholds.push_back(g.score);
  }
  // Guard the endpoint against accumulated rounding.
  c.fpr.back() = 1.0;
  c.tpr.back() = 1.0;
  return c;
}

// Trapezoid area straight from the groups; identical to the U statistic.
inline double auroc_from_groups(const std::vector<Group>& groups) {
  double P = 0, Nn = 0;
  for (const auto& g : groups) {
    P += g.pos;
    Nn += g.neg;
  }
  if (P == 0 || Nn == 0) throw Error(Errc::kDegenerateLabels, "auroc needs both labels");
  double area = 0, tp = 0;
  for (const auto& g : groups) {
    area += g.neg * (tp + 0.5 * g.pos);
    tp += g.pos;
  }
  return area / (P * Nn);
}

inline std::vector<std::pair<double, int>> pairs(const ScoreSet& s) {
  std::vector<std::pair<double, int>> v;
  v.reserve(s.entries.size());
  for (const auto& e : s.entries) v.emplace_back(e.score, e.label);
  return v;
}

}  // namespace detail

inline RocCurve roc(std::span<const std::pair<double, int>> values) {
  const auto sorted = detail::sort_desc(values);
  return detail::roc_from_groups(detail::groups_from_sorted(sorted));
}

inline RocCurve roc(const ScoreSet& scores) {
  const auto v = detail::pairs(scores);
  return roc(v);
}

inline double trapezoid_area(const RocCurve& c) {
  double a = 0;
  for (std::size_t i = 1; i < c.fpr.size(); ++i) a += (c.fpr[i] - c.fpr[i - 1]) * (c.tpr[i] + c.tpr[i - 1]) * 0.5;
  return a;
}

inline double auroc(const ScoreSet& scores) { return trapezoid_area(roc(scores)); }

// Scalar baseline (e.g. file size): larger values count as more attacked.
inline double auc_from_scalar(std::span<const std::pair<int, double>> values) {
  std::vector<std::pair<double, int>> v;
  v.reserve(values.size());
  for (const auto& [label, x] : values) v.emplace_back(x, label);
  return trapezoid_area(roc(v));
}

// Linear interpolation between the last point with fpr <= target and the next
// one; at a vertical run the highest TPR reachable at that FPR is used.
inline double tpr_at_fpr(const RocCurve& c, double target) {
  if (c.fpr.empty()) return 0.0;
  if (target <= c.fpr.front()) {
    std::size_t j = 0;
    while (j + 1 < c.fpr.size() && c.fpr[j + 1] == c.fpr.front()) ++j;
    return target < c.fpr.front() ? c.tpr.front() : c.tpr[j];
  }
  const auto it = std::upper_bound(c.fpr.begin(), c.fpr.end(), target);
  if (it == c.fpr.end()) return c.tpr.back();
  const std::size_t hi = static_cast<std::size_t>(it - c.fpr.begin());
  const std::size_t lo = hi - 1;
  if (c.fpr[lo] == target) return c.tpr[lo];
  const double t = (target - c.fpr[lo]) / (c.fpr[hi] - c.fpr[lo]);
  return c.tpr[lo] + t * (c.tpr[hi] - c.tpr[lo]);
}

// ceil(n_clean * fpr) with a tolerance for products that are integers in
// exact arithmetic but land a hair above in binary.
inline std::size_t fp_count(std::size_t n_clean, double fpr) {
  const double x = static_cast<double>(n_clean) * fpr;
  return static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
}

inline std::map<double, std::size_t> fp_counts(std::size_t n_clean, std::span<const double> fprs) {
  std::map<double, std::size_t> out;
  for (double f : fprs) out[f] = fp_count(n_clean, f);
  return out;
}

inline Confusion confusion_at(const ScoreSet& s, double threshold) {
  Confusion c;
  for (const auto& e : s.entries) {
    const bool pred = e.score >= threshold;
    if (e.label) {
      (pred ? c.tp : c.fn)++;
    } else {
      (pred ? c.fp : c.tn)++;
    }
  }
  return c;
}

// Threshold fixed on a clean reference: the cut that admits
// ceil(n * fpr) false positives. Returns the score that candidates must
// strictly exceed.
inline double clean_threshold(std::span<const double> clean_scores, double fpr) {
  if (clean_scores.empty()) throw Error(Errc::kDegenerateLabels, "clean_threshold: no clean scores");
  std::vector<double> s(clean_scores.begin(), clean_scores.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  const std::size_t k = fp_count(s.size(), fpr);
  if (k >= s.size()) return -std::numeric_limits<double>::infinity();
  return s[k];
}

inline double fraction_above(std::span<const double> scores, double threshold) {
  if (scores.empty()) return 0.0;
  std::size_t n = 0;
  for (double v : scores) n += v > threshold;
  return static_cast<double>(n) / scores.size();
}

// Percentile with linear interpolation between order statistics (the
// (n-1) p convention).
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double f = pos - lo;
  return v[lo] + f * (v[hi] - v[lo]);
}

struct BootstrapResult {
  Interval ci;
  std::size_t redrawn = 0;
  std::vector<double> samples;
};

// Percentile bootstrap. Resample r draws from Rng(derive_seed(seed, r)) so
// any worker count gives the same samples; single-label resamples are redrawn
// from the same stream until both labels appear.
inline BootstrapResult bootstrap(const ScoreSet& scores, std::span<const Metric> metrics_wanted,
                                 std::size_t resamples, std::uint64_t seed, int jobs,
                                 std::vector<BootstrapResult>* per_metric) {
  const auto v = detail::pairs(scores);
  const std::size_t n = v.size();
  std::size_t npos = 0;
  for (const auto& p : v) npos += p.second;
  if (npos == 0 || npos == n) throw Error(Errc::kDegenerateLabels, "bootstrap needs both labels");
  // Sort once; each resample becomes a multiplicity vector over sorted order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a].first > v[b].first; });
  std::vector<std::pair<double, int>> sorted(n);
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    sorted[i] = v[order[i]];
    rank[order[i]] = i;
  }
  const std::size_t m = metrics_wanted.size();
  std::vector<double> samples(resamples * m);
  std::vector<std::size_t> redraws(resamples, 0);
  parallel_for(resamples, jobs, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    std::vector<double> w(n);
    for (;;) {
      std::fill(w.begin(), w.end(), 0.0);
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pick = static_cast<std::size_t>(rng.uniform_index(n));
        w[rank[pick]] += 1.0;
        pos += v[pick].second;
      }
      if (pos != 0 && pos != n) break;
      ++redraws[r];
    }
    const auto groups = detail::groups_from_sorted(sorted, w);
    RocCurve curve;
    bool have_curve = false;
    for (std::size_t k = 0; k < m; ++k) {
      double value;
      if (metrics_wanted[k] == Metric::kAuroc) {
        value = detail::auroc_from_groups(groups);
      } else {
        if (!have_curve) {
          curve = detail::roc_from_groups(groups);
          have_curve = true;
        }
        value = tpr_at_fpr(curve, metrics_wanted[k] == Metric::kTpr1 ? kFpr1 : kFpr01);
      }
      samples[r * m + k] = value;
    }
  });
  BootstrapResult first;
  for (auto c : redraws) first.redrawn += c;
  if (per_metric) per_metric->clear();
  for (std::size_t k = 0; k < m; ++k) {
    BootstrapResult res;
    res.redrawn = first.redrawn;
    res.samples.resize(resamples);
    for (std::size_t r = 0; r < resamples; ++r) res.samples[r] = samples[r * m + k];
    res.ci = {percentile(res.samples, 2.5), percentile(res.samples, 97.5)};
    if (k == 0) first.ci = res.ci;
    if (per_metric) per_metric->push_back(std::move(res));
  }
  return first;
}

inline Interval bootstrap_ci(const ScoreSet& scores, Metric metric, std::size_t resamples = 10000,
                             std::uint64_t seed = 0, int jobs = 1) {
  const Metric one[] = {metric};
  return bootstrap(scores, one, resamples, seed, jobs, nullptr).ci;
}

struct EvaluateOptions {
  bool with_ci = true;
  std::size_t resamples = 10000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

inline MetricReport evaluate(const ScoreSet& scores, const EvaluateOptions& opt = {}) {
  MetricReport rep;
  const RocCurve curve = roc(scores);
  rep.auroc = trapezoid_area(curve);
  rep.tpr_at_fpr[kFpr1] = tpr_at_fpr(curve, kFpr1);
  rep.tpr_at_fpr[kFpr01] = tpr_at_fpr(curve, kFpr01);
  rep.confusion = confusion_at(scores, kAccuracyThreshold);
  for (const auto& e : scores.entries) (e.label ? rep.n_pos : rep.n_neg)++;
  rep.accuracy = static_cast<double>(rep.confusion.tp + rep.confusion.tn) / scores.entries.size();
  const double fprs[] = {kFpr1, kFpr01};
  rep.fp_counts = fp_counts(rep.n_neg, fprs);
  if (opt.with_ci) {
    const Metric all[] = {Metric::kAuroc, Metric::kTpr1, Metric::kTpr01};
    std::vector<BootstrapResult> per;
    const auto first = bootstrap(scores, all, opt.resamples, opt.seed, opt.jobs, &per);
    for (std::size_t k = 0; k < 3; ++k) rep.ci[metric_name(all[k])] = per[k].ci;
    rep.redrawn_resamples = first.redrawn;
  }
  return rep;
}

inline std::string fpr_key(double f) { return f == kFpr1 ? "0.01" : (f == kFpr01 ? "0.001" : std::to_string(f)); }

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["auroc"] = r.auroc;
  j["accuracy"] = r.accuracy;
  j["n_pos"] = r.n_pos;
  j["n_neg"] = r.n_neg;
  for (const auto& [f, t] : r.tpr_at_fpr) j["tpr_at_fpr"][fpr_key(f)] = t;
  for (const auto& [f, c] : r.fp_counts) j["fp_counts"][fpr_key(f)] = c;
  j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
  j["ci"] = nlohmann::json::object();
  for (const auto& [name, iv] : r.ci) j["ci"][name] = {iv.lo, iv.hi};
  j["redrawn_resamples"] = r.redrawn_resamples;
  return j;
}

inline std::string roc_csv(const RocCurve& c) {
  std::ostringstream os;
  os.precision(17);
  os << "fpr,tpr,threshold\n";
  for (std::size_t i = 0; i < c.fpr.size(); ++i) {
    os << c.fpr[i] << ',' << c.tpr[i] << ',';
    if (std::isinf(c.thresholds[i]))
      os << "inf";
    else
      os << c.thresholds[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace stealthbench::metrics
