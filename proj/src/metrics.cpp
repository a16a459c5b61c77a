#include "tale/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tale {

namespace {

void validate_prediction(const RankedPrediction& p) {
  for (double s : p.scores)
    if (!std::isfinite(s)) throw MetricError("prediction contains a non-finite score");
  for (std::size_t t : p.truth)
    if (t >= p.scores.size()) throw MetricError("truth index out of range");
}

}  // namespace

double acc_at_k(const std::vector<RankedPrediction>& preds, std::size_t k) {
  if (k < 1) throw MetricError("acc_at_k: k must be >= 1");
  if (preds.empty()) throw MetricError("acc_at_k: no predictions");
  std::size_t hits = 0;
  for (const auto& p : preds) {
    validate_prediction(p);
    std::vector<std::size_t> idx(p.scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::size_t kk = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](std::size_t a, std::size_t b) {
      if (p.scores[a] != p.scores[b]) return p.scores[a] > p.scores[b];
      return a < b;
    });
    bool hit = false;
    for (std::size_t i = 0; i < kk && !hit; ++i)
      hit = std::find(p.truth.begin(), p.truth.end(), idx[i]) != p.truth.end();
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

BinaryMetrics binary_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw MetricError("binary_metrics: size mismatch");
  if (scores.empty()) throw MetricError("binary_metrics: no instances");
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw MetricError("binary_metrics: labels must be 0/1");
    n_pos += y;
  }
  std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("binary_metrics: both classes must be present");
  for (double s : scores)
    if (!std::isfinite(s)) throw MetricError("binary_metrics: non-finite score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney via average ranks over tied groups.
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  double auroc = (rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
                 (static_cast<double>(n_pos) * static_cast<double>(n_neg));

  // Precision-recall walk from the highest score down, one step per distinct
  // score; AUPRC = sum of precision * recall increment.
  double auprc = 0.0;
  {
    std::size_t tp = 0, fp = 0;
    double prev_recall = 0.0;
    for (std::size_t i = order.size(); i > 0;) {
      std::size_t j = i;
      while (j > 0 && scores[order[j - 1]] == scores[order[i - 1]]) --j;
      for (std::size_t k = j; k < i; ++k) {
        if (labels[order[k]] == 1)
          ++tp;
        else
          ++fp;
      }
      double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
      double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      auprc += (recall - prev_recall) * precision;
      prev_recall = recall;
      i = j;
    }
  }

  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    bool pred = scores[i] >= 0.5;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  double f1 = (2 * tp + fp + fn) == 0
                  ? 0.0
                  : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  return {auroc, auprc, f1};
}

CodeMetrics macro_f1_recall(const std::vector<RankedPrediction>& preds, double threshold) {
  if (preds.empty()) throw MetricError("macro_f1_recall: no predictions");
  std::size_t n_codes = preds[0].scores.size();
  std::vector<std::size_t> tp(n_codes, 0), fp(n_codes, 0), fn(n_codes, 0);
  for (const auto& p : preds) {
    validate_prediction(p);
    if (p.scores.size() != n_codes) throw MetricError("macro_f1_recall: inconsistent score widths");
    std::vector<char> truth(n_codes, 0);
    for (std::size_t t : p.truth) truth[t] = 1;
    for (std::size_t c = 0; c < n_codes; ++c) {
      bool pred = p.scores[c] >= threshold;
      if (pred && truth[c]) ++tp[c];
      if (pred && !truth[c]) ++fp[c];
      if (!pred && truth[c]) ++fn[c];
    }
  }
  double f1_sum = 0.0;
  std::size_t f1_count = 0;
  std::size_t tp_all = 0, fn_all = 0;
  for (std::size_t c = 0; c < n_codes; ++c) {
    tp_all += tp[c];
    fn_all += fn[c];
    if (tp[c] + fn[c] == 0) continue;  // code never positive: excluded from macro
    double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1_sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / denom;
    ++f1_count;
  }
  if (f1_count == 0) throw MetricError("macro_f1_recall: no positive code anywhere");
  double recall = (tp_all + fn_all) == 0
                      ? 0.0
                      : static_cast<double>(tp_all) / static_cast<double>(tp_all + fn_all);
  return {f1_sum / static_cast<double>(f1_count), recall};
}

}  // namespace tale
