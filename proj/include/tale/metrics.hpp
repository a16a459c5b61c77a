#pragma once

#include <cstddef>
#include <vector>

#include "tale/errors.hpp"

namespace tale {

// Scored multi-label prediction: one score per code plus the true code set.
struct RankedPrediction {
  std::vector<double> scores;
  std::vector<std::size_t> truth;
};

// Fraction of instances whose top-k codes (ties broken by lower index)
// intersect the truth set.
double acc_at_k(const std::vector<RankedPrediction>& preds, std::size_t k);

struct BinaryMetrics {
  double auroc = 0.0;
  double auprc = 0.0;
  double f1 = 0.0;
};

// AUROC via the Mann-Whitney statistic with half credit for ties; AUPRC via
// step interpolation of precision at each distinct-score recall level; F1 at
// the 0.5 threshold (score >= 0.5 predicts positive). Needs both classes.
BinaryMetrics binary_metrics(const std::vector<double>& scores, const std::vector<int>& labels);

struct CodeMetrics {
  double macro_f1 = 0.0;
  double recall = 0.0;
};

// Per-code F1 from thresholded scores averaged over codes with at least one
// positive instance; recall is micro over all code instances.
CodeMetrics macro_f1_recall(const std::vector<RankedPrediction>& preds, double threshold = 0.5);

}  // namespace tale
