#include "tale/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

namespace tale {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": tensors on different tapes");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double ipow(double x, int k) {
  if (k < 0) return 1.0 / ipow(x, -k);
  double r = 1.0, base = x;
  while (k > 0) {
    if (k & 1) r *= base;
    base *= base;
    k >>= 1;
  }
  return r;
}

constexpr double kGeluA = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

}  // namespace

std::vector<double>& detail::GradStore::at(std::size_t id, std::size_t n) {
  if (g.size() <= id) g.resize(id + 1);
  if (g[id].empty()) g[id].assign(n, 0.0);
  return g[id];
}

// ---- Tensor accessors ----------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
const std::vector<double>& Tensor::value() const { return tape_->node(id_).value; }
const std::vector<double>& Tensor::grad() const { return tape_->node(id_).grad; }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

std::vector<double> Tensor::grad_dense() const {
  const auto& n = tape_->node(id_);
  if (!n.grad.empty()) return n.grad;
  return std::vector<double>(n.value.size(), 0.0);
}

double Tensor::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ContractError("scalar(): tensor has " + std::to_string(v.size()) + " elements");
  return v[0];
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
  const char* env = std::getenv("TALE_CHECK_FINITE");
  check_finite_ = env != nullptr && env[0] == '1';
}

Tensor Tape::emit(Shape shape, std::vector<double> value, bool requires_grad, const char* op,
                  detail::PullFn pull) {
  if (value.size() != numel(shape))
    throw ShapeError(std::string(op) + ": data length " + std::to_string(value.size()) +
                     " does not match shape " + shape_str(shape));
  if (check_finite_) {
    for (double v : value)
      if (!std::isfinite(v))
        throw DomainError(std::string(op) + ": non-finite value in output");
  }
  detail::Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.pull = std::move(pull);
  n.op = op;
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Shape shape, std::vector<double> data) {
  return emit(std::move(shape), std::move(data), false, "constant", nullptr);
}

Tensor Tape::scalar_const(double v) { return constant(Shape{}, {v}); }

Tensor Tape::ones(Shape shape) {
  std::vector<double> d(numel(shape), 1.0);
  return emit(std::move(shape), std::move(d), false, "ones", nullptr);
}

Tensor Tape::leaf(Param& p) {
  Tensor t = emit(p.shape, p.value, true, "leaf", nullptr);
  nodes_[t.id()].bound = &p;
  return t;
}

Tensor Tape::variable(Shape shape, std::vector<double> data) {
  return emit(std::move(shape), std::move(data), true, "variable", nullptr);
}

void Tape::backward(const Tensor& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss from another tape");
  if (numel(loss.shape()) != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  detail::GradStore gs;
  gs.at(loss.id(), 1)[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (!gs.has(i)) continue;
    auto& n = nodes_[i];
    if (n.pull) n.pull(*this, gs, gs.g[i]);
  }
  for (std::size_t i = 0; i < gs.g.size(); ++i) {
    if (gs.g[i].empty()) continue;
    auto& n = nodes_[i];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    for (std::size_t j = 0; j < n.grad.size(); ++j) n.grad[j] += gs.g[i][j];
  }
}

void Tape::flush_param_grads() {
  if (flushed_) throw StateError("flush_param_grads: already flushed for this tape");
  flushed_ = true;
  for (auto& n : nodes_) {
    if (n.bound == nullptr || n.grad.empty()) continue;
    for (std::size_t j = 0; j < n.grad.size(); ++j) n.bound->grad[j] += n.grad[j];
  }
}

// ---- elementwise helpers ---------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op,
                          double (*fwd)(double, double),
                          void (*bwd)(double, double, double, double&, double&)) {
  require_same_tape(a, b, op);
  require_same_shape(a, b, op);
  Tape& tp = a.tape();
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  bool rg = a.requires_grad() || b.requires_grad();
  if (!rg) return tp.emit(a.shape(), std::move(out), false, op, nullptr);
  std::size_t ia = a.id(), ib = b.id();
  return tp.emit(a.shape(), std::move(out), true, op,
                 [ia, ib, bwd](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& na = t.node(ia);
                   auto& nb = t.node(ib);
                   std::vector<double>* ga = na.requires_grad ? &gs.at(ia, na.value.size()) : nullptr;
                   std::vector<double>* gb = nb.requires_grad ? &gs.at(ib, nb.value.size()) : nullptr;
                   for (std::size_t i = 0; i < go.size(); ++i) {
                     double da = 0, db = 0;
                     bwd(na.value[i], nb.value[i], go[i], da, db);
                     if (ga) (*ga)[i] += da;
                     if (gb) (*gb)[i] += db;
                   }
                 });
}

// bwd(x, g) returns the contribution to dL/dx given upstream g.
using UnaryBwd = std::function<double(double x, double g)>;

Tensor unary_elementwise(const Tensor& a, const char* op, const std::function<double(double)>& fwd,
                         const UnaryBwd& bwd) {
  Tape& tp = a.tape();
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  if (!a.requires_grad()) return tp.emit(a.shape(), std::move(out), false, op, nullptr);
  std::size_t ia = a.id();
  return tp.emit(a.shape(), std::move(out), true, op,
                 [ia, bwd](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& na = t.node(ia);
                   auto& ga = gs.at(ia, na.value.size());
                   for (std::size_t i = 0; i < go.size(); ++i) ga[i] += bwd(na.value[i], go[i]);
                 });
}

}  // namespace

// ---- arithmetic ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& a, double c) {
  return unary_elementwise(
      a, "scale", [c](double x) { return x * c; },
      [c](double, double g) { return g * c; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double x, double g) {
        double s = stable_sigmoid(x);
        return g * s * (1.0 - s);
      });
}

Tensor ln(const Tensor& a) {
  for (double v : a.value())
    if (!(v > 0.0)) throw DomainError("ln: input must be positive, got " + std::to_string(v));
  return unary_elementwise(
      a, "ln", [](double x) { return std::log(x); },
      [](double x, double g) { return g / x; });
}

Tensor softplus(const Tensor& a) {
  return unary_elementwise(
      a, "softplus",
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double g) { return g * stable_sigmoid(x); });
}

Tensor gelu(const Tensor& a) {
  return unary_elementwise(
      a, "gelu",
      [](double x) {
        double u = kGeluA * (x + kGeluC * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
      },
      [](double x, double g) {
        double u = kGeluA * (x + kGeluC * x * x * x);
        double th = std::tanh(u);
        double du = kGeluA * (1.0 + 3.0 * kGeluC * x * x);
        return g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
      });
}

Tensor pow_int(const Tensor& a, int k) {
  return unary_elementwise(
      a, "pow_int", [k](double x) { return ipow(x, k); },
      [k](double x, double g) {
        if (k == 0) return 0.0;
        return g * static_cast<double>(k) * ipow(x, k - 1);
      });
}

Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, double fill) {
  if (mask.size() != a.size())
    throw ShapeError("masked_fill: mask length " + std::to_string(mask.size()) +
                     " does not match tensor " + shape_str(a.shape()));
  Tape& tp = a.tape();
  std::vector<double> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = fill;
  if (!a.requires_grad()) return tp.emit(a.shape(), std::move(out), false, "masked_fill", nullptr);
  std::size_t ia = a.id();
  return tp.emit(a.shape(), std::move(out), true, "masked_fill",
                 [ia, mask](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& ga = gs.at(ia, t.node(ia).value.size());
                   for (std::size_t i = 0; i < go.size(); ++i)
                     if (!mask[i]) ga[i] += go[i];
                 });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  Tape& tp = a.tape();
  double s = 0.0;
  for (double v : a.value()) s += v;
  if (!a.requires_grad()) return tp.emit(Shape{}, {s}, false, "sum", nullptr);
  std::size_t ia = a.id();
  return tp.emit(Shape{}, {s}, true, "sum",
                 [ia](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& ga = gs.at(ia, t.node(ia).value.size());
                   for (double& g : ga) g += go[0];
                 });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---- structure -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& tp = parts[0].tape();
  std::vector<double> out;
  bool rg = false;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p, "concat");
    if (p.shape().size() > 1) throw ShapeError("concat: rank-1 inputs required, got " + shape_str(p.shape()));
    offsets.push_back(out.size());
    out.insert(out.end(), p.value().begin(), p.value().end());
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
  }
  Shape shape{out.size()};
  if (!rg) return tp.emit(std::move(shape), std::move(out), false, "concat", nullptr);
  return tp.emit(std::move(shape), std::move(out), true, "concat",
                 [ids, offsets](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   for (std::size_t k = 0; k < ids.size(); ++k) {
                     auto& n = t.node(ids[k]);
                     if (!n.requires_grad) continue;
                     auto& g = gs.at(ids[k], n.value.size());
                     for (std::size_t j = 0; j < n.value.size(); ++j) g[j] += go[offsets[k] + j];
                   }
                 });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  Tape& tp = rows[0].tape();
  std::size_t m = rows[0].size();
  std::vector<double> out;
  out.reserve(rows.size() * m);
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const auto& r : rows) {
    require_same_tape(rows[0], r, "stack_rows");
    if (r.shape().size() != 1 || r.size() != m)
      throw ShapeError("stack_rows: rows must share shape, got " + shape_str(r.shape()));
    out.insert(out.end(), r.value().begin(), r.value().end());
    rg = rg || r.requires_grad();
    ids.push_back(r.id());
  }
  Shape shape{rows.size(), m};
  if (!rg) return tp.emit(std::move(shape), std::move(out), false, "stack_rows", nullptr);
  return tp.emit(std::move(shape), std::move(out), true, "stack_rows",
                 [ids, m](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   for (std::size_t k = 0; k < ids.size(); ++k) {
                     auto& n = t.node(ids[k]);
                     if (!n.requires_grad) continue;
                     auto& g = gs.at(ids[k], m);
                     for (std::size_t j = 0; j < m; ++j) g[j] += go[k * m + j];
                   }
                 });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> idx) {
  if (a.shape().size() != 1) throw ShapeError("gather: rank-1 input required, got " + shape_str(a.shape()));
  const auto& av = a.value();
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= av.size()) throw ShapeError("gather: index " + std::to_string(idx[i]) + " out of range");
    out[i] = av[idx[i]];
  }
  Tape& tp = a.tape();
  Shape shape{idx.size()};
  if (!a.requires_grad()) return tp.emit(std::move(shape), std::move(out), false, "gather", nullptr);
  std::size_t ia = a.id();
  return tp.emit(std::move(shape), std::move(out), true, "gather",
                 [ia, idx = std::move(idx)](Tape& t, detail::GradStore& gs,
                                            const std::vector<double>& go) {
                   auto& ga = gs.at(ia, t.node(ia).value.size());
                   for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += go[i];
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
  Tape& tp = a.tape();
  std::vector<double> out = a.value();
  if (!a.requires_grad()) return tp.emit(std::move(shape), std::move(out), false, "reshape", nullptr);
  std::size_t ia = a.id();
  return tp.emit(std::move(shape), std::move(out), true, "reshape",
                 [ia](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& ga = gs.at(ia, t.node(ia).value.size());
                   for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                 });
}

Tensor broadcast_rows(const Tensor& row, std::size_t n) {
  if (row.shape().size() != 1) throw ShapeError("broadcast_rows: rank-1 input required");
  std::size_t m = row.size();
  std::vector<double> out;
  out.reserve(n * m);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), row.value().begin(), row.value().end());
  Tape& tp = row.tape();
  Shape shape{n, m};
  if (!row.requires_grad()) return tp.emit(std::move(shape), std::move(out), false, "broadcast_rows", nullptr);
  std::size_t ia = row.id();
  return tp.emit(std::move(shape), std::move(out), true, "broadcast_rows",
                 [ia, n, m](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& ga = gs.at(ia, m);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) ga[j] += go[i * m + j];
                 });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: rank-2 input required, got " + shape_str(a.shape()));
  std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto& av = a.value();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  Tape& tp = a.tape();
  Shape shape{c, r};
  if (!a.requires_grad()) return tp.emit(std::move(shape), std::move(out), false, "transpose", nullptr);
  std::size_t ia = a.id();
  return tp.emit(std::move(shape), std::move(out), true, "transpose",
                 [ia, r, c](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& ga = gs.at(ia, r * c);
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[j * r + i];
                 });
}

// ---- matmul ----------------------------------------------------------------

namespace {

// Unified (r,k)x(k,c) kernel; rank-1 operands are treated as (1,k) or (k,1)
// and the singleton axes are dropped from the output shape.
struct MatDims {
  std::size_t r, k, c;
  bool a_vec, b_vec;
};

MatDims matmul_dims(const Shape& sa, const Shape& sb) {
  MatDims d{};
  d.a_vec = sa.size() == 1;
  d.b_vec = sb.size() == 1;
  if (sa.size() == 2 && sb.size() == 2) {
    d.r = sa[0];
    d.k = sa[1];
    d.c = sb[1];
    if (sb[0] != d.k) shape_fail("matmul", sa, sb);
  } else if (sa.size() == 2 && d.b_vec) {
    d.r = sa[0];
    d.k = sa[1];
    d.c = 1;
    if (sb[0] != d.k) shape_fail("matmul", sa, sb);
  } else if (d.a_vec && sb.size() == 2) {
    d.r = 1;
    d.k = sa[0];
    d.c = sb[1];
    if (sb[0] != d.k) shape_fail("matmul", sa, sb);
  } else if (d.a_vec && d.b_vec) {
    d.r = 1;
    d.k = sa[0];
    d.c = 1;
    if (sb[0] != d.k) shape_fail("matmul", sa, sb);
  } else {
    shape_fail("matmul", sa, sb);
  }
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b, "matmul");
  MatDims d = matmul_dims(a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(d.r * d.c, 0.0);
  for (std::size_t i = 0; i < d.r; ++i)
    for (std::size_t j = 0; j < d.c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d.k; ++k) s += av[i * d.k + k] * bv[k * d.c + j];
      out[i * d.c + j] = s;
    }
  Shape shape;
  if (d.a_vec && d.b_vec)
    shape = Shape{};
  else if (d.b_vec)
    shape = Shape{d.r};
  else if (d.a_vec)
    shape = Shape{d.c};
  else
    shape = Shape{d.r, d.c};
  Tape& tp = a.tape();
  bool rg = a.requires_grad() || b.requires_grad();
  if (!rg) return tp.emit(std::move(shape), std::move(out), false, "matmul", nullptr);
  std::size_t ia = a.id(), ib = b.id();
  return tp.emit(std::move(shape), std::move(out), true, "matmul",
                 [ia, ib, d](Tape& t, detail::GradStore& gs, const std::vector<double>& go) {
                   auto& na = t.node(ia);
                   auto& nb = t.node(ib);
                   if (na.requires_grad) {
                     auto& ga = gs.at(ia, na.value.size());
                     // dA = dC * B^T
                     for (std::size_t i = 0; i < d.r; ++i)
                       for (std::size_t k = 0; k < d.k; ++k) {
                         double s = 0.0;
                         for (std::size_t j = 0; j < d.c; ++j)
                           s += go[i * d.c + j] * nb.value[k * d.c + j];
                         ga[i * d.k + k] += s;
                       }
                   }
                   if (nb.requires_grad) {
                     auto& gb = gs.at(ib, nb.value.size());
                     // dB = A^T * dC
                     for (std::size_t k = 0; k < d.k; ++k)
                       for (std::size_t j = 0; j < d.c; ++j) {
                         double s = 0.0;
                         for (std::size_t i = 0; i < d.r; ++i)
                           s += na.value[i * d.k + k] * go[i * d.c + j];
                         gb[k * d.c + j] += s;
                       }
                   }
                 });
}

// ---- softmax ---------------------------------------------------------------

Tensor softmax(const Tensor& a) {
  const Shape& s = a.shape();
  std::size_t rows, cols;
  if (s.size() == 1) {
    rows = 1;
    cols = s[0];
  } else if (s.size() == 2) {
    rows = s[0];
    cols = s[1];
  } else {
    throw ShapeError("softmax: rank-1 or rank-2 input required, got " + shape_str(s));
  }
  if (cols == 0) throw ShapeError("softmax: empty axis");
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = av[i * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, av[i * cols + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] = std::exp(av[i * cols + j] - mx);
      z += out[i * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= z;
  }
  Tape& tp = a.tape();
  if (!a.requires_grad()) return tp.emit(s, std::move(out), false, "softmax", nullptr);
  std::size_t ia = a.id();
  std::vector<double> saved = out;
  return tp.emit(s, std::move(out), true, "softmax",
                 [ia, rows, cols, saved = std::move(saved)](Tape& t, detail::GradStore& gs,
                                                            const std::vector<double>& go) {
                   auto& ga = gs.at(ia, t.node(ia).value.size());
                   for (std::size_t i = 0; i < rows; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < cols; ++j)
                       dot += go[i * cols + j] * saved[i * cols + j];
                     for (std::size_t j = 0; j < cols; ++j)
                       ga[i * cols + j] += saved[i * cols + j] * (go[i * cols + j] - dot);
                   }
                 });
}

}  // namespace tale
