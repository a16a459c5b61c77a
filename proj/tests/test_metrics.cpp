#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tale/metrics.hpp"

using namespace tale;

namespace {

// Brute-force oracles, deliberately written against the definitions rather
// than any shared helper, for the equivalence checks below.

double oracle_acc_at_k(const std::vector<RankedPrediction>& preds, std::size_t k) {
  double hits = 0;
  for (const auto& p : preds) {
    std::vector<std::size_t> order(p.scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p.scores[a] > p.scores[b]; });
    bool hit = false;
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i)
      for (std::size_t t : p.truth)
        if (order[i] == t) hit = true;
    hits += hit;
  }
  return hits / static_cast<double>(preds.size());
}

double oracle_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j])
        wins += 1.0;
      else if (s[i] == s[j])
        wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}

double oracle_auprc(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> thresholds = s;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::size_t n_pos = 0;
  for (int v : y) n_pos += v;
  double auprc = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= th && y[i] == 1) ++tp;
      if (s[i] >= th && y[i] == 0) ++fp;
    }
    double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    auprc += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return auprc;
}

double oracle_f1(const std::vector<double>& s, const std::vector<int>& y) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    bool pred = s[i] >= 0.5;
    tp += pred && y[i] == 1;
    fp += pred && y[i] == 0;
    fn += !pred && y[i] == 1;
  }
  if (2 * tp + fp + fn == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

CodeMetrics oracle_macro_f1_recall(const std::vector<RankedPrediction>& preds, double th) {
  std::size_t C = preds[0].scores.size();
  double f1_sum = 0.0;
  std::size_t n_f1 = 0, tp_all = 0, pos_all = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& p : preds) {
      bool truth = std::find(p.truth.begin(), p.truth.end(), c) != p.truth.end();
      bool pred = p.scores[c] >= th;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
    tp_all += tp;
    pos_all += tp + fn;
    if (tp + fn == 0) continue;
    f1_sum += (2 * tp + fp + fn) == 0
                  ? 0.0
                  : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++n_f1;
  }
  return {f1_sum / static_cast<double>(n_f1),
          static_cast<double>(tp_all) / static_cast<double>(pos_all)};
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("top-1 hit and forced miss") {
  RankedPrediction hit{{0.1, 0.2, 0.15, 0.9}, {3}};
  CHECK(acc_at_k({hit}, 1) == 1.0);
  RankedPrediction miss{{0.9, 0.8, 0.7, 0.6}, {3}};  // descending by index
  CHECK(acc_at_k({miss}, 2) == 0.0);
  CHECK(acc_at_k({miss}, 4) == 1.0);
}

TEST_CASE("acc_at_k tie break prefers lower code indices") {
  RankedPrediction p{{0.5, 0.5, 0.5}, {2}};
  CHECK(acc_at_k({p}, 2) == 0.0);  // top-2 under ties is {0, 1}
  CHECK(acc_at_k({p}, 3) == 1.0);
}

TEST_CASE("acc_at_k is non-decreasing in k") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RankedPrediction> preds;
  for (int i = 0; i < 100; ++i) {
    RankedPrediction p;
    for (int c = 0; c < 10; ++c) p.scores.push_back(u(rng));
    p.truth = {static_cast<std::size_t>(i % 10)};
    preds.push_back(p);
  }
  double prev = 0.0;
  for (std::size_t k = 1; k <= 10; ++k) {
    double a = acc_at_k(preds, k);
    CHECK(a >= prev);
    prev = a;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("random scores with singleton truth hit at the combinatorial rate") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 0.0;
  int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    std::vector<RankedPrediction> preds;
    for (int i = 0; i < 200; ++i) {
      RankedPrediction p;
      for (int c = 0; c < 10; ++c) p.scores.push_back(u(rng));
      p.truth = {static_cast<std::size_t>(rng() % 10)};
      preds.push_back(p);
    }
    total += acc_at_k(preds, 5);
  }
  double mean = total / seeds;
  double se = std::sqrt(0.5 * 0.5 / (200.0 * seeds));
  CHECK(std::abs(mean - 0.5) < 4.0 * se);
}

TEST_CASE("binary metric spot values") {
  CHECK(binary_metrics({0.9, 0.8, 0.1}, {1, 0, 0}).auroc == 1.0);
  CHECK(binary_metrics({0.9, 0.8, 0.1}, {0, 1, 0}).auroc == 0.5);
  CHECK(binary_metrics({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}).auroc == 0.5);
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    s.push_back(u(rng));
    y.push_back(rng() % 2);
  }
  double base = binary_metrics(s, y).auroc;
  std::vector<double> warped = s;
  for (auto& v : warped) v = std::exp(3.0 * v) - 7.0;
  CHECK(binary_metrics(warped, y).auroc == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("undefined metrics raise") {
  CHECK_THROWS_AS(acc_at_k({}, 5), MetricError);
  CHECK_THROWS_AS(binary_metrics({0.5, 0.6}, {1, 1}), MetricError);
  CHECK_THROWS_AS(binary_metrics({}, {}), MetricError);
  CHECK_THROWS_AS(macro_f1_recall({}), MetricError);
}

TEST_CASE("macro f1 and recall extremes") {
  std::vector<RankedPrediction> perfect{{{0.9, 0.1, 0.9}, {0, 2}}, {{0.1, 0.9, 0.1}, {1}}};
  auto cm = macro_f1_recall(perfect);
  CHECK(cm.macro_f1 == 1.0);
  CHECK(cm.recall == 1.0);

  std::vector<RankedPrediction> all_neg{{{0.1, 0.1}, {0}}, {{0.2, 0.1}, {1}}};
  auto cm2 = macro_f1_recall(all_neg);
  CHECK(cm2.recall == 0.0);
}

TEST_CASE("three-code case matches a hand confusion matrix") {
  // code 0: tp=1 fp=1 fn=0 -> f1 = 2/3; code 1: tp=1 fp=0 fn=1 -> f1 = 2/3
  // code 2 never positive -> excluded
  std::vector<RankedPrediction> preds{
      {{0.9, 0.8, 0.1}, {0, 1}},
      {{0.7, 0.2, 0.3}, {1}},
  };
  auto cm = macro_f1_recall(preds);
  CHECK(cm.macro_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(cm.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("all metrics match brute-force oracles on 1000 random instances") {
  std::mt19937_64 rng(2025);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> csize(2, 8);

  for (int trial = 0; trial < 40; ++trial) {
    std::size_t C = csize(rng);
    std::vector<RankedPrediction> preds;
    for (int i = 0; i < 25; ++i) {
      RankedPrediction p;
      for (std::size_t c = 0; c < C; ++c) {
        double v = u(rng);
        if (rng() % 4 == 0) v = std::round(v * 4) / 4.0;  // force ties
        p.scores.push_back(v);
      }
      std::size_t n_truth = 1 + rng() % (C - 1);
      while (p.truth.size() < n_truth) {
        std::size_t t = rng() % C;
        if (std::find(p.truth.begin(), p.truth.end(), t) == p.truth.end()) p.truth.push_back(t);
      }
      preds.push_back(p);
    }
    for (std::size_t k = 1; k <= C; ++k)
      CHECK(std::abs(acc_at_k(preds, k) - oracle_acc_at_k(preds, k)) <= 1e-12);
    auto cm = macro_f1_recall(preds);
    auto ocm = oracle_macro_f1_recall(preds, 0.5);
    CHECK(std::abs(cm.macro_f1 - ocm.macro_f1) <= 1e-12);
    CHECK(std::abs(cm.recall - ocm.recall) <= 1e-12);
  }

  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> s;
    std::vector<int> y;
    bool pos = false, neg = false;
    for (int i = 0; i < 25; ++i) {
      double v = u(rng);
      if (rng() % 4 == 0) v = std::round(v * 4) / 4.0;
      s.push_back(v);
      y.push_back(rng() % 2);
      (y.back() ? pos : neg) = true;
    }
    if (!pos) y[0] = 1;
    if (!neg) y[1] = 0;
    auto bm = binary_metrics(s, y);
    CHECK(std::abs(bm.auroc - oracle_auroc(s, y)) <= 1e-12);
    CHECK(std::abs(bm.auprc - oracle_auprc(s, y)) <= 1e-12);
    CHECK(std::abs(bm.f1 - oracle_f1(s, y)) <= 1e-12);
  }
}

TEST_SUITE_END();
