#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "tale/errors.hpp"

namespace tale {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// A named, persistent trainable array. Parameters outlive tapes; each forward
// pass binds them as leaves and flushes gradients back after backward().
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), value(numel(shape), 0.0), grad(numel(shape), 0.0) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Tape;

// Handle into a Tape node. Cheap to copy; valid as long as the tape lives.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  const std::vector<double>& value() const;
  // Accumulated gradient; empty means "never reached by backward" (all zero).
  const std::vector<double>& grad() const;
  std::vector<double> grad_dense() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  std::size_t size() const { return value().size(); }
  double scalar() const;

 private:
  friend class Tape;
  Tensor(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

namespace detail {

// Per-backward-pass gradient buffers, so repeated backward() calls accumulate
// correctly into the persistent node gradients.
struct GradStore {
  std::vector<std::vector<double>> g;
  std::vector<double>& at(std::size_t id, std::size_t n);
  bool has(std::size_t id) const { return id < g.size() && !g[id].empty(); }
};

using PullFn = std::function<void(Tape&, GradStore&, const std::vector<double>&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // accumulated across backward() calls
  bool requires_grad = false;
  Param* bound = nullptr;
  PullFn pull;  // pushes the output gradient to the parents
  const char* op = "leaf";
};

}  // namespace detail

// Records operations in execution order; backward() replays them once, in
// reverse. One tape per forward pass; tapes are single-threaded.
class Tape {
 public:
  Tape();

  Tensor constant(Shape shape, std::vector<double> data);
  Tensor scalar_const(double v);
  Tensor ones(Shape shape);
  // Differentiable leaf bound to a persistent parameter.
  Tensor leaf(Param& p);
  // Differentiable leaf not bound to any parameter (tests, probes).
  Tensor variable(Shape shape, std::vector<double> data);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  // loss must be scalar. Calling twice accumulates.
  void backward(const Tensor& loss);

  // Adds the gradient of every bound leaf into its Param::grad. One-shot.
  void flush_param_grads();

  std::size_t node_count() const { return nodes_.size(); }
  detail::Node& node(std::size_t id) { return nodes_[id]; }
  const detail::Node& node(std::size_t id) const { return nodes_[id]; }

  Tensor emit(Shape shape, std::vector<double> value, bool requires_grad, const char* op,
              detail::PullFn pull);

 private:
  std::deque<detail::Node> nodes_;
  bool flushed_ = false;
  bool check_finite_ = false;
};

// ---- forward operations -------------------------------------------------

// Matrix/vector product. Accepts (r,k)x(k,c), (r,k)x(k), (k)x(k,c), (k)x(k).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar
Tensor concat(const std::vector<Tensor>& parts);      // rank-1 pieces -> rank-1
Tensor stack_rows(const std::vector<Tensor>& rows);   // n rank-1 of len m -> (n,m)
Tensor softmax(const Tensor& a);  // rank-1, or rank-2 along the last axis
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor ln(const Tensor& a);    // elementwise natural log; requires x > 0
Tensor softplus(const Tensor& a);
Tensor pow_int(const Tensor& a, int k);
// Replaces entries where mask != 0 by fill; gradient is zero there.
Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, double fill);
// out[i] = a[idx[i]]; backward scatter-adds. a must be rank-1.
Tensor gather(const Tensor& a, std::vector<std::size_t> idx);
Tensor reshape(const Tensor& a, Shape shape);
// Repeats a rank-1 row n times into (n, m); backward sums over rows.
Tensor broadcast_rows(const Tensor& row, std::size_t n);

}  // namespace tale
