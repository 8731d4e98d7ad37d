#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "stealthbench/metrics.hpp"

using namespace stealthbench;
using namespace stealthbench::metrics;

namespace {

ScoreSet make_set(const std::vector<double>& pos, const std::vector<double>& neg) {
  ScoreSet s;
  int i = 0;
  for (double v : pos) s.entries.push_back({"p" + std::to_string(i++), 1, v});
  for (double v : neg) s.entries.push_back({"n" + std::to_string(i++), 0, v});
  return s;
}

// O(n^2) Mann-Whitney oracle with half credit for ties.
double mann_whitney(const ScoreSet& s) {
  double num = 0, np = 0, nn = 0;
  for (const auto& a : s.entries) {
    if (a.label) ++np;
    else ++nn;
  }
  for (const auto& a : s.entries) {
    if (!a.label) continue;
    for (const auto& b : s.entries) {
      if (b.label) continue;
      if (a.score > b.score) num += 1;
      else if (a.score == b.score) num += 0.5;
    }
  }
  return num / (np * nn);
}

ScoreSet random_set(Rng& rng, std::size_t npos, std::size_t nneg, double shift, bool ties) {
  ScoreSet s;
  for (std::size_t i = 0; i < npos + nneg; ++i) {
    const int label = i < npos ? 1 : 0;
    double v = rng.normal() + (label ? shift : 0.0);
    if (ties) v = std::round(v * 4) / 4;
    s.entries.push_back({std::to_string(i), label, v});
  }
  return s;
}

}  // namespace

TEST(Roc, PerfectSeparation) {
  const auto s = make_set({0.9, 0.8}, {0.2, 0.1});
  const auto c = roc(s);
  EXPECT_DOUBLE_EQ(auroc(s), 1.0);
  bool through = false;
  for (std::size_t i = 0; i < c.fpr.size(); ++i) through |= c.fpr[i] == 0.0 && c.tpr[i] == 1.0;
  EXPECT_TRUE(through);
  EXPECT_EQ(c.fpr.front(), 0.0);
  EXPECT_EQ(c.tpr.front(), 0.0);
  EXPECT_EQ(c.fpr.back(), 1.0);
  EXPECT_EQ(c.tpr.back(), 1.0);
}

TEST(Roc, AllTiedIsDiagonal) {
  const auto s = make_set({0.5, 0.5, 0.5}, {0.5, 0.5});
  const auto c = roc(s);
  ASSERT_EQ(c.fpr.size(), 2u);
  EXPECT_EQ(c.fpr[1], 1.0);
  EXPECT_EQ(c.tpr[1], 1.0);
  EXPECT_DOUBLE_EQ(auroc(s), 0.5);
}

TEST(Roc, MatchesMannWhitneyOracle) {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const std::size_t np = 1 + rng.uniform_index(100);
    const std::size_t nn = 1 + rng.uniform_index(100);
    const auto s = random_set(rng, np, nn, rng.uniform(-1, 2), t % 2 == 0);
    EXPECT_NEAR(auroc(s), mann_whitney(s), 1e-12);
    std::vector<std::pair<int, double>> scalar;
    for (const auto& e : s.entries) scalar.emplace_back(e.label, e.score);
    EXPECT_NEAR(auc_from_scalar(scalar), mann_whitney(s), 1e-12);
  }
}

TEST(Roc, MonotoneCurveAndInvariantUnderMonotoneMaps) {
  Rng rng(8);
  const auto s = random_set(rng, 80, 90, 0.8, true);
  const auto c = roc(s);
  for (std::size_t i = 1; i < c.fpr.size(); ++i) {
    EXPECT_GE(c.fpr[i], c.fpr[i - 1]);
    EXPECT_GE(c.tpr[i], c.tpr[i - 1]);
  }
  ScoreSet mapped = s;
  for (auto& e : mapped.entries) e.score = 1.0 / (1.0 + std::exp(-3.0 * e.score));
  EXPECT_DOUBLE_EQ(auroc(mapped), auroc(s));
}

TEST(Roc, DegenerateLabels) {
  try {
    roc(make_set({0.1, 0.2}, {}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDegenerateLabels);
  }
}

TEST(Scalar, Examples) {
  std::vector<std::pair<int, double>> equal;
  for (int i = 0; i < 40; ++i) equal.emplace_back(i % 2, 921654.0);
  EXPECT_EQ(auc_from_scalar(equal), 0.5);
  std::vector<std::pair<int, double>> larger;
  for (int i = 0; i < 40; ++i) larger.emplace_back(i % 2, 1000.0 + i % 2 + 0.01 * i);
  EXPECT_EQ(auc_from_scalar(larger), 1.0);
  Rng rng(9);
  std::vector<std::pair<int, double>> rand;
  for (int i = 0; i < 30; ++i) rand.emplace_back(i < 14, rng.uniform01());
  ScoreSet s;
  for (const auto& [l, v] : rand) s.entries.push_back({"", l, v});
  EXPECT_NEAR(auc_from_scalar(rand), mann_whitney(s), 1e-12);
}

TEST(TprAtFpr, HandComputed) {
  RocCurve exact{{0.0, 0.01, 1.0}, {0.0, 0.93, 1.0}, {}};
  EXPECT_EQ(tpr_at_fpr(exact, 0.01), 0.93);
  RocCurve mid{{0.0, 0.02, 1.0}, {0.5, 0.9, 1.0}, {}};
  EXPECT_DOUBLE_EQ(tpr_at_fpr(mid, 0.01), 0.7);
  EXPECT_NEAR(tpr_at_fpr(mid, 1.0 - 1e-9), 1.0, 1e-8);
  // A vertical run at the target FPR reads the top of the run.
  RocCurve vertical{{0.0, 0.0, 0.5, 1.0}, {0.0, 0.6, 0.8, 1.0}, {}};
  EXPECT_EQ(tpr_at_fpr(vertical, 0.0), 0.6);
}

TEST(TprAtFpr, NonDecreasingInTarget) {
  Rng rng(10);
  const auto c = roc(random_set(rng, 150, 150, 1.0, true));
  double prev = -1;
  for (int i = 1; i < 1000; ++i) {
    const double t = tpr_at_fpr(c, i / 1000.0);
    EXPECT_GE(t, prev);
    prev = t;
  }
}

TEST(FpCounts, CeilingRule) {
  EXPECT_EQ(fp_count(14945, 0.01), 150u);
  EXPECT_EQ(fp_count(14945, 0.001), 15u);
  EXPECT_EQ(fp_count(5250, 0.001), 6u);
  EXPECT_EQ(fp_count(1000, 0.001), 1u);
  EXPECT_EQ(fp_count(1000, 0.01), 10u);
  const double f[] = {0.01, 0.001};
  const auto m = fp_counts(14251, f);
  EXPECT_EQ(m.at(0.01), 143u);
  EXPECT_EQ(m.at(0.001), 15u);
}

TEST(Threshold, CleanReferenceCut) {
  std::vector<double> clean;
  for (int i = 0; i < 300; ++i) clean.push_back(i);
  // ceil(300 * 0.01) = 3 false positives: scores 299, 298, 297 lie above the cut.
  const double t = clean_threshold(clean, 0.01);
  EXPECT_EQ(t, 296.0);
  EXPECT_DOUBLE_EQ(fraction_above(clean, t), 0.01);
  std::vector<double> bucket{296.0, 296.5, 400.0, 0.0};
  EXPECT_DOUBLE_EQ(fraction_above(bucket, t), 0.5);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 25), 1.75);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 100), 4.0);
  EXPECT_DOUBLE_EQ(percentile({5}, 2.5), 5.0);
}

TEST(Bootstrap, PerfectSeparationDegenerates) {
  std::vector<double> pos, neg;
  for (int i = 0; i < 1000; ++i) {
    pos.push_back(0.6 + 0.0001 * i);
    neg.push_back(0.4 - 0.0001 * i);
  }
  const auto iv = bootstrap_ci(make_set(pos, neg), Metric::kAuroc);
  EXPECT_EQ(iv.lo, 1.0);
  EXPECT_EQ(iv.hi, 1.0);
  const auto tp = bootstrap_ci(make_set(pos, neg), Metric::kTpr01, 2000);
  EXPECT_EQ(tp.lo, 1.0);
  EXPECT_EQ(tp.hi, 1.0);
}

TEST(Bootstrap, ReproducibleAndWorkerInvariant) {
  Rng rng(11);
  const auto s = random_set(rng, 120, 140, 1.0, false);
  const auto a = bootstrap_ci(s, Metric::kTpr1, 10000, 0, 1);
  const auto b = bootstrap_ci(s, Metric::kTpr1, 10000, 0, 1);
  const auto c = bootstrap_ci(s, Metric::kTpr1, 10000, 0, 3);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_EQ(a.lo, c.lo);
  EXPECT_EQ(a.hi, c.hi);
  const auto d = bootstrap_ci(s, Metric::kTpr1, 10000, 1, 1);
  EXPECT_TRUE(d.lo != a.lo || d.hi != a.hi);
}

TEST(Bootstrap, PointInsideInterval) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const auto s = random_set(rng, 100 + rng.uniform_index(100), 100 + rng.uniform_index(100), rng.uniform(0, 2), t % 3 == 0);
    const auto iv = bootstrap_ci(s, Metric::kAuroc, 2000, t);
    const double a = auroc(s);
    EXPECT_LE(iv.lo, a);
    EXPECT_GE(iv.hi, a);
  }
}

TEST(Bootstrap, WidthShrinksWithSampleSize) {
  Rng rng(13);
  std::vector<double> small, large;
  for (int t = 0; t < 20; ++t) {
    const auto a = bootstrap_ci(random_set(rng, 200, 200, 1.0, false), Metric::kAuroc, 2000, t);
    const auto b = bootstrap_ci(random_set(rng, 2000, 2000, 1.0, false), Metric::kAuroc, 2000, t);
    small.push_back(a.hi - a.lo);
    large.push_back(b.hi - b.lo);
  }
  EXPECT_LT(percentile(large, 50), percentile(small, 50));
}

TEST(Bootstrap, RedrawsSingleLabelResamples) {
  const auto s = make_set({0.9}, {0.1, 0.2, 0.3});
  const Metric m[] = {Metric::kAuroc};
  const auto r = bootstrap(s, m, 1000, 0, 1, nullptr);
  // P(no positive in 4 draws) = (3/4)^4, about 32% of first attempts.
  EXPECT_GT(r.redrawn, 200u);
  EXPECT_EQ(r.ci.lo, 1.0);
  EXPECT_THROW(bootstrap_ci(make_set({0.9, 0.8}, {}), Metric::kAuroc), Error);
}

TEST(Evaluate, ReportFields) {
  const auto s = make_set({0.9, 0.7, 0.4}, {0.6, 0.2, 0.1, 0.05});
  EvaluateOptions opt;
  opt.resamples = 500;
  const auto r = evaluate(s, opt);
  EXPECT_NEAR(r.auroc, 11.0 / 12.0, 1e-15);
  EXPECT_EQ(r.confusion.tp, 2u);
  EXPECT_EQ(r.confusion.fn, 1u);
  EXPECT_EQ(r.confusion.fp, 1u);
  EXPECT_EQ(r.confusion.tn, 3u);
  EXPECT_DOUBLE_EQ(r.accuracy, 5.0 / 7.0);
  EXPECT_EQ(r.confusion.tp + r.confusion.fn, r.n_pos);
  EXPECT_EQ(r.confusion.fp + r.confusion.tn, r.n_neg);
  EXPECT_EQ(r.fp_counts.at(0.01), 1u);
  EXPECT_EQ(r.ci.size(), 3u);
  const auto j = to_json(r);
  EXPECT_EQ(j["confusion"]["tp"], 2);
  EXPECT_TRUE(j["tpr_at_fpr"].contains("0.001"));
  // 0.5 counts as positive.
  const auto half = make_set({0.5}, {0.5});
  EXPECT_EQ(confusion_at(half, 0.5).fp, 1u);
}

TEST(Export, RocCsv) {
  const auto c = roc(make_set({0.9}, {0.1}));
  EXPECT_EQ(roc_csv(c), "fpr,tpr,threshold\n0,0,inf\n0,1,0.90000000000000002\n1,1,0.10000000000000001\n");
}
