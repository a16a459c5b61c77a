#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tale/tensor.hpp"
#include "tale/util.hpp"

namespace tale {

// Dense layer y = W x + b with W stored (out, in).
struct Linear {
  Param w, b;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
      : w(name + ".w", {out, in}), b(name + ".b", {out}) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (auto& v : w.value) v = dist(rng);
  }

  Tensor apply(Tape& tape, const Tensor& x) {
    return add(matmul(tape.leaf(w), x), tape.leaf(b));
  }
};

// Feed-forward stack with GELU between layers (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, std::mt19937_64& rng) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers.emplace_back(name + ".l" + std::to_string(i), widths[i], widths[i + 1], rng);
  }

  Tensor apply(Tape& tape, Tensor x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].apply(tape, x);
      if (i + 1 < layers.size()) x = gelu(x);
    }
    return x;
  }

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  }
};

}  // namespace tale
