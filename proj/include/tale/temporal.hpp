#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tale/events.hpp"
#include "tale/tensor.hpp"

namespace tale {

enum class WeightVariant { polynomial, mlp, piecewise, constant };

WeightVariant weight_variant_from_string(const std::string& s);
std::string to_string(WeightVariant v);

struct TemporalConfig {
  WeightVariant variant = WeightVariant::polynomial;
  int order = 5;       // polynomial degree
  int mlp_width = 16;  // hidden width of the mlp variant
};

// Learnable map from a preprocessed time gap to an attention multiplier in
// [0,1]. polynomial: sigmoid(sum a_k dt^k); mlp: sigmoid(MLP(dt)); piecewise:
// sigmoid of the logit of the day-space bin containing dt; constant: 1.
class TemporalWeightFn {
 public:
  TemporalWeightFn() = default;
  TemporalWeightFn(TemporalConfig cfg, std::uint64_t seed);

  // Batched evaluation at distinct gaps; entry i is w(dts[i]). dts must be
  // non-negative. Differentiable w.r.t. the variant parameters; the piecewise
  // gradient reaches only the logit of the selected bin.
  Tensor evaluate_many(Tape& tape, const std::vector<double>& dts);
  Tensor evaluate(Tape& tape, double dt);
  double value_at(double dt);  // convenience, no gradients kept

  std::vector<Param*> params();
  WeightVariant variant() const { return cfg_.variant; }
  const TemporalConfig& config() const { return cfg_; }

  // Fixed day-space bin edges of the piecewise variant.
  static const std::vector<double>& piecewise_bin_edges_days();
  static std::size_t piecewise_bin(double days);

 private:
  TemporalConfig cfg_;
  Param poly_coeffs_;  // a_0..a_s
  Param mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
  Param bin_logits_;
};

// Writes "dt_days,w" rows, converting each grid value through the training
// time transform before evaluating.
void dump_curve(TemporalWeightFn& fn, const std::vector<double>& grid_days,
                const std::string& out_path);

}  // namespace tale
