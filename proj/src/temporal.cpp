#include "tale/temporal.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "tale/util.hpp"

namespace tale {

WeightVariant weight_variant_from_string(const std::string& s) {
  if (s == "polynomial") return WeightVariant::polynomial;
  if (s == "mlp") return WeightVariant::mlp;
  if (s == "piecewise") return WeightVariant::piecewise;
  if (s == "constant") return WeightVariant::constant;
  throw ConfigError("unknown time_weight.variant '" + s + "'");
}

std::string to_string(WeightVariant v) {
  switch (v) {
    case WeightVariant::polynomial: return "polynomial";
    case WeightVariant::mlp: return "mlp";
    case WeightVariant::piecewise: return "piecewise";
    case WeightVariant::constant: return "constant";
  }
  return "?";
}

const std::vector<double>& TemporalWeightFn::piecewise_bin_edges_days() {
  static const std::vector<double> edges{7.0, 30.0, 90.0, 180.0, 365.0, 720.0};
  return edges;
}

std::size_t TemporalWeightFn::piecewise_bin(double days) {
  const auto& edges = piecewise_bin_edges_days();
  std::size_t b = 0;
  while (b < edges.size() && days >= edges[b]) ++b;
  return b;  // 7 bins: [0,7), [7,30), [30,90), [90,180), [180,365), [365,720), [720,inf)
}

TemporalWeightFn::TemporalWeightFn(TemporalConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  switch (cfg_.variant) {
    case WeightVariant::polynomial: {
      if (cfg_.order < 1) throw ConfigError("time_weight.order must be >= 1");
      poly_coeffs_ = Param("wfn.coeffs", {static_cast<std::size_t>(cfg_.order + 1)});
      // Start near-neutral at dt=0 (w ~ 0.88) with a gentle decay. The slope
      // tilt matters: w multiplies signed attention logits, so a perfectly
      // flat start leaves "decaying weight on positive scores" and "rising
      // weight on negative scores" equally reachable, and the inverted basin
      // produces upside-down weight curves.
      poly_coeffs_.value[0] = 2.0;
      poly_coeffs_.value[1] = -1.0;
      break;
    }
    case WeightVariant::mlp: {
      if (cfg_.mlp_width < 1) throw ConfigError("time_weight.mlp_width must be >= 1");
      auto h = static_cast<std::size_t>(cfg_.mlp_width);
      mlp_w1_ = Param("wfn.w1", {h, 1});
      mlp_b1_ = Param("wfn.b1", {h});
      mlp_w2_ = Param("wfn.w2", {1, h});
      mlp_b2_ = Param("wfn.b2", {1});
      std::mt19937_64 rng(seed_mix(seed, 0x3f2a));
      std::normal_distribution<double> dist(0.0, 1.0);
      for (auto& v : mlp_w1_.value) v = dist(rng);
      for (auto& v : mlp_w2_.value) v = dist(rng) / std::sqrt(static_cast<double>(h));
      mlp_b2_.value[0] = 2.0;
      break;
    }
    case WeightVariant::piecewise: {
      bin_logits_ = Param("wfn.bin_logits", {7});
      for (auto& v : bin_logits_.value) v = 2.0;
      break;
    }
    case WeightVariant::constant:
      break;
  }
}

std::vector<Param*> TemporalWeightFn::params() {
  switch (cfg_.variant) {
    case WeightVariant::polynomial: return {&poly_coeffs_};
    case WeightVariant::mlp: return {&mlp_w1_, &mlp_b1_, &mlp_w2_, &mlp_b2_};
    case WeightVariant::piecewise: return {&bin_logits_};
    case WeightVariant::constant: return {};
  }
  return {};
}

Tensor TemporalWeightFn::evaluate_many(Tape& tape, const std::vector<double>& dts) {
  if (dts.empty()) throw ContractError("evaluate_many: empty gap list");
  for (double dt : dts)
    if (!(dt >= 0.0)) throw DomainError("temporal weight: negative time gap " + fmt_double(dt));
  std::size_t n = dts.size();
  switch (cfg_.variant) {
    case WeightVariant::constant:
      return tape.ones({n});
    case WeightVariant::polynomial: {
      // Vandermonde basis against the coefficient vector.
      auto s = static_cast<std::size_t>(cfg_.order + 1);
      std::vector<double> basis(n * s);
      for (std::size_t i = 0; i < n; ++i) {
        double p = 1.0;
        for (std::size_t k = 0; k < s; ++k) {
          basis[i * s + k] = p;
          p *= dts[i];
        }
      }
      Tensor b = tape.constant({n, s}, std::move(basis));
      return sigmoid(matmul(b, tape.leaf(poly_coeffs_)));
    }
    case WeightVariant::mlp: {
      Tensor x = tape.constant({n, 1}, std::vector<double>(dts));
      Tensor h = gelu(add(matmul(x, transpose(tape.leaf(mlp_w1_))),
                          broadcast_rows(tape.leaf(mlp_b1_), n)));
      Tensor y = add(matmul(h, transpose(tape.leaf(mlp_w2_))),
                     broadcast_rows(tape.leaf(mlp_b2_), n));
      return sigmoid(reshape(y, {n}));
    }
    case WeightVariant::piecewise: {
      // Bins are defined on raw-day gaps; invert the log-week transform.
      std::vector<std::size_t> bins(n);
      for (std::size_t i = 0; i < n; ++i) bins[i] = piecewise_bin(days_from_pre(dts[i]));
      return sigmoid(gather(tape.leaf(bin_logits_), std::move(bins)));
    }
  }
  throw ConfigError("temporal weight: unknown variant");
}

Tensor TemporalWeightFn::evaluate(Tape& tape, double dt) {
  return reshape(evaluate_many(tape, {dt}), {});
}

double TemporalWeightFn::value_at(double dt) {
  Tape tape;
  return evaluate(tape, dt).scalar();
}

void dump_curve(TemporalWeightFn& fn, const std::vector<double>& grid_days,
                const std::string& out_path) {
  if (grid_days.empty()) throw ContractError("dump_curve: empty grid");
  for (double d : grid_days)
    if (!(d >= 0.0)) throw DomainError("dump_curve: negative grid value");
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write curve file: " + out_path);
  for (double d : grid_days) {
    double w = fn.value_at(pre_from_days(d));
    out << fmt_double(d) << ',' << fmt_double(w) << '\n';
  }
  if (!out) throw IoError("write failed: " + out_path);
}

}  // namespace tale
