#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pode/tensor.hpp"

namespace pode {

/// A learned tensor plus its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Curriculum stage in which the owning layer group was added.
  int stage_of_birth = 1;

  Parameter() = default;
  Parameter(std::string n, Tensor v, int stage = 1)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), stage_of_birth(stage) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

enum class Activation : std::uint8_t { identity, tanh, relu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  concat,
  concat_rows,
  slice,
  tanh,
  sigmoid,
  relu,
  exp,
  sum,
  mean,
  square,
  scale,
  add_row,
  linear,
  blend,
  axpy_rows,
  rk4_combine,
  gru_cell,
};

const char* op_name(OpKind k);

class Tape;

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using GradientMap = std::map<std::string, Tensor>;

namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(g, bt.data(), c, m, n, k);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double activate(Activation act, double v) {
  switch (act) {
    case Activation::identity: return v;
    case Activation::tanh: return std::tanh(v);
    case Activation::relu: return v > 0.0 ? v : 0.0;
  }
  return v;
}

// Derivative expressed through the activation output y.
inline double activate_grad(Activation act, double y) {
  switch (act) {
    case Activation::identity: return 1.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

}  // namespace detail

struct Node {
  OpKind op = OpKind::leaf;
  std::vector<int> inputs;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  Parameter* param = nullptr;
  Activation act = Activation::identity;
  double scalar = 0.0;
  std::size_t offset = 0;
  std::vector<double> coeffs;
  std::vector<Tensor> saved;
};

/// Define-by-run record of operations for reverse-mode differentiation.
///
/// Nodes are append-only, so every input id is smaller than the id of the node
/// consuming it. A tape is built per training step and discarded afterwards.
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Leaf bound to a parameter. Each parameter gets one node per tape.
  Var param(Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
    Node n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    Var v = push(std::move(n));
    param_ids_.emplace(&p, v.id());
    param_order_.push_back(&p);
    return v;
  }

  Var push(Node n) {
    if (!n.requires_grad) {
      for (int i : n.inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor& value(int id) const { return node(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Parameters registered on this tape, in first-use order.
  const std::vector<Parameter*>& parameters() const noexcept { return param_order_; }

  /// Reverse sweep from a scalar root.
  ///
  /// Adds d(root)/d(param) into every registered Parameter::grad and returns
  /// this pass's contribution by parameter name. Registered parameters that
  /// the root does not depend on map to zero tensors. Node gradients are
  /// cleared afterwards, so calling twice accumulates twice.
  GradientMap backward(Var root);

 private:
  Tensor& grad_of(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }
  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  void propagate(int id);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
  std::vector<Parameter*> param_order_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::concat: return "concat";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice: return "slice";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu";
    case OpKind::exp: return "exp";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::square: return "square";
    case OpKind::scale: return "scale";
    case OpKind::add_row: return "add_row";
    case OpKind::linear: return "linear";
    case OpKind::blend: return "blend";
    case OpKind::axpy_rows: return "axpy_rows";
    case OpKind::rk4_combine: return "rk4_combine";
    case OpKind::gru_cell: return "gru_cell";
  }
  return "?";
}

namespace detail {

[[noreturn]] inline void shape_mismatch(OpKind op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

inline Tape* tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw std::invalid_argument("operation on an unbound Var");
    if (t && v.tape() != t) throw std::invalid_argument("operands recorded on different tapes");
    t = v.tape();
  }
  return t;
}

template <class F>
Var unary(OpKind op, Var x, F f) {
  Tape* t = tape_of({x});
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto in = xv.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  Node n;
  n.op = op;
  n.inputs = {x.id()};
  n.value = std::move(out);
  return t->push(std::move(n));
}

template <class F>
Var binary(OpKind op, Var a, Var b, F f) {
  Tape* t = tape_of({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_mismatch(op, av.shape(), bv.shape());
  Tensor out(av.shape());
  auto x = av.data();
  auto y = bv.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  Node n;
  n.op = op;
  n.inputs = {a.id(), b.id()};
  n.value = std::move(out);
  return t->push(std::move(n));
}

}  // namespace detail

// ---- elementary ops ----

inline Var add(Var a, Var b) {
  return detail::binary(OpKind::add, a, b, [](double x, double y) { return x + y; });
}
inline Var sub(Var a, Var b) {
  return detail::binary(OpKind::sub, a, b, [](double x, double y) { return x - y; });
}
inline Var mul(Var a, Var b) {
  return detail::binary(OpKind::mul, a, b, [](double x, double y) { return x * y; });
}
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline Var tanh(Var x) {
  return detail::unary(OpKind::tanh, x, [](double v) { return std::tanh(v); });
}
inline Var sigmoid(Var x) { return detail::unary(OpKind::sigmoid, x, detail::sigmoid); }
inline Var relu(Var x) {
  return detail::unary(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; });
}
inline Var exp(Var x) {
  return detail::unary(OpKind::exp, x, [](double v) { return std::exp(v); });
}
inline Var square(Var x) {
  return detail::unary(OpKind::square, x, [](double v) { return v * v; });
}

inline Var scale(Var x, double s) {
  Tape* t = detail::tape_of({x});
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  Node n;
  n.op = OpKind::scale;
  n.inputs = {x.id()};
  n.scalar = s;
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// [.., k] x [k, n] -> [.., n]
inline Var matmul(Var a, Var b) {
  Tape* t = detail::tape_of({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.shape()[0]) {
    detail::shape_mismatch(OpKind::matmul, av.shape(), bv.shape());
  }
  Shape s = av.shape();
  s.back() = bv.shape()[1];
  Tensor out(s);
  detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), av.rows(), av.cols(),
                  bv.cols());
  Node n;
  n.op = OpKind::matmul;
  n.inputs = {a.id(), b.id()};
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// Concatenate along the last dimension.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape* t = parts[0].tape();
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != t) throw std::invalid_argument("operands recorded on different tapes");
    if (p.value().rows() != rows)
      detail::shape_mismatch(OpKind::concat, parts[0].shape(), p.shape());
    cols += p.value().cols();
  }
  Shape s = parts[0].shape();
  s.back() = cols;
  Tensor out(s);
  Node n;
  n.op = OpKind::concat;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t c = pv.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data().data() + r * c, c, out.data().data() + r * cols + off);
    off += c;
    n.inputs.push_back(p.id());
  }
  n.value = std::move(out);
  return t->push(std::move(n));
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// Stack rank-2 inputs along the first dimension.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape* t = parts[0].tape();
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != t) throw std::invalid_argument("operands recorded on different tapes");
    if (p.value().cols() != cols)
      detail::shape_mismatch(OpKind::concat_rows, parts[0].shape(), p.shape());
    rows += p.value().rows();
  }
  Tensor out(Shape{rows, cols});
  Node n;
  n.op = OpKind::concat_rows;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + off);
    off += p.value().size();
    n.inputs.push_back(p.id());
  }
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// Columns [offset, offset + width) of the last dimension.
inline Var slice(Var x, std::size_t offset, std::size_t width) {
  Tape* t = detail::tape_of({x});
  const Tensor& xv = x.value();
  if (width == 0 || offset + width > xv.cols()) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + width) + ") outside " + shape_str(xv.shape()));
  }
  Shape s = xv.shape();
  s.back() = width;
  Tensor out(s);
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data().data() + r * cols + offset, width, out.data().data() + r * width);
  Node n;
  n.op = OpKind::slice;
  n.inputs = {x.id()};
  n.offset = offset;
  n.value = std::move(out);
  return t->push(std::move(n));
}

inline Var sum(Var x) {
  Tape* t = detail::tape_of({x});
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  Node n;
  n.op = OpKind::sum;
  n.inputs = {x.id()};
  n.value = Tensor::scalar(s);
  return t->push(std::move(n));
}

inline Var mean(Var x) {
  Tape* t = detail::tape_of({x});
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  Node n;
  n.op = OpKind::mean;
  n.inputs = {x.id()};
  n.value = Tensor::scalar(s / static_cast<double>(x.value().size()));
  return t->push(std::move(n));
}

// ---- fused ops used by the networks and the integrator ----

/// x + b with b broadcast over rows; b has shape [cols].
inline Var add_row(Var x, Var b) {
  Tape* t = detail::tape_of({x, b});
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.size() != xv.cols()) detail::shape_mismatch(OpKind::add_row, xv.shape(), bv.shape());
  Tensor out = xv;
  const std::size_t cols = xv.cols();
  auto o = out.data();
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] += bv[c];
  Node n;
  n.op = OpKind::add_row;
  n.inputs = {x.id(), b.id()};
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// act(x W + b)
inline Var linear(Var x, Var w, Var b, Activation act) {
  Tape* t = detail::tape_of({x, w, b});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.cols() != wv.shape()[0])
    detail::shape_mismatch(OpKind::linear, xv.shape(), wv.shape());
  if (bv.size() != wv.shape()[1]) detail::shape_mismatch(OpKind::linear, wv.shape(), bv.shape());
  Shape s = xv.shape();
  s.back() = wv.shape()[1];
  Tensor out(s);
  const std::size_t rows = xv.rows();
  const std::size_t cols = wv.cols();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bv.data().begin(), bv.data().end(), o.begin() + r * cols);
  detail::gemm_nn(xv.data().data(), wv.data().data(), o.data(), rows, xv.cols(), cols);
  if (act != Activation::identity)
    for (double& v : o) v = detail::activate(act, v);
  Node n;
  n.op = OpKind::linear;
  n.inputs = {x.id(), w.id(), b.id()};
  n.act = act;
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// (1 - alpha) * h + alpha * g
inline Var blend(Var h, Var g, double alpha) {
  Tape* t = detail::tape_of({h, g});
  const Tensor& hv = h.value();
  const Tensor& gv = g.value();
  if (!hv.same_shape(gv)) detail::shape_mismatch(OpKind::blend, hv.shape(), gv.shape());
  Tensor out(hv.shape());
  const double keep = 1.0 - alpha;
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = keep * hv[i] + alpha * gv[i];
  Node n;
  n.op = OpKind::blend;
  n.inputs = {h.id(), g.id()};
  n.scalar = alpha;
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// z + c[r] * k per row r.
inline Var axpy_rows(Var z, Var k, std::vector<double> c) {
  Tape* t = detail::tape_of({z, k});
  const Tensor& zv = z.value();
  const Tensor& kv = k.value();
  if (!zv.same_shape(kv)) detail::shape_mismatch(OpKind::axpy_rows, zv.shape(), kv.shape());
  if (c.size() != zv.rows())
    detail::shape_mismatch(OpKind::axpy_rows, zv.shape(), Shape{c.size()});
  Tensor out(zv.shape());
  const std::size_t cols = zv.cols();
  auto o = out.data();
  for (std::size_t r = 0; r < zv.rows(); ++r)
    for (std::size_t j = 0; j < cols; ++j) o[r * cols + j] = zv[r * cols + j] + c[r] * kv[r * cols + j];
  Node n;
  n.op = OpKind::axpy_rows;
  n.inputs = {z.id(), k.id()};
  n.coeffs = std::move(c);
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// z + (h[r] / 6) (k1 + 2 k2 + 2 k3 + k4) per row r.
inline Var rk4_combine(Var z, Var k1, Var k2, Var k3, Var k4, std::vector<double> h) {
  Tape* t = detail::tape_of({z, k1, k2, k3, k4});
  const Tensor& zv = z.value();
  for (Var k : {k1, k2, k3, k4})
    if (!zv.same_shape(k.value())) detail::shape_mismatch(OpKind::rk4_combine, zv.shape(), k.shape());
  if (h.size() != zv.rows()) detail::shape_mismatch(OpKind::rk4_combine, zv.shape(), Shape{h.size()});
  const Tensor& a = k1.value();
  const Tensor& b = k2.value();
  const Tensor& c = k3.value();
  const Tensor& d = k4.value();
  Tensor out(zv.shape());
  const std::size_t cols = zv.cols();
  auto o = out.data();
  for (std::size_t r = 0; r < zv.rows(); ++r) {
    const double w = h[r] / 6.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t i = r * cols + j;
      o[i] = zv[i] + w * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
    }
  }
  Node n;
  n.op = OpKind::rk4_combine;
  n.inputs = {z.id(), k1.id(), k2.id(), k3.id(), k4.id()};
  n.coeffs = std::move(h);
  n.value = std::move(out);
  return t->push(std::move(n));
}

/// One GRU step with gates packed as [reset | update | candidate]:
///   r = s(x Wx_r + bx_r + h Wh_r + bh_r)
///   u = s(x Wx_u + bx_u + h Wh_u + bh_u)
///   n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
///   h' = (1 - u) * n + u * h
inline Var gru_cell(Var x, Var h, Var wx, Var wh, Var bx, Var bh) {
  Tape* t = detail::tape_of({x, h, wx, wh, bx, bh});
  const Tensor& xv = x.value();
  const Tensor& hv = h.value();
  const Tensor& wxv = wx.value();
  const Tensor& whv = wh.value();
  const std::size_t hidden = hv.cols();
  const std::size_t rows = xv.rows();
  if (wxv.rank() != 2 || wxv.shape()[0] != xv.cols() || wxv.shape()[1] != 3 * hidden)
    detail::shape_mismatch(OpKind::gru_cell, xv.shape(), wxv.shape());
  if (whv.rank() != 2 || whv.shape()[0] != hidden || whv.shape()[1] != 3 * hidden)
    detail::shape_mismatch(OpKind::gru_cell, hv.shape(), whv.shape());
  if (hv.rows() != rows) detail::shape_mismatch(OpKind::gru_cell, xv.shape(), hv.shape());
  if (bx.value().size() != 3 * hidden || bh.value().size() != 3 * hidden)
    detail::shape_mismatch(OpKind::gru_cell, bx.shape(), bh.shape());

  const std::size_t g3 = 3 * hidden;
  Tensor gx(Shape{rows, g3});
  Tensor gh(Shape{rows, g3});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(bx.value().data().begin(), bx.value().data().end(), gx.data().begin() + r * g3);
    std::copy(bh.value().data().begin(), bh.value().data().end(), gh.data().begin() + r * g3);
  }
  detail::gemm_nn(xv.data().data(), wxv.data().data(), gx.data().data(), rows, xv.cols(), g3);
  detail::gemm_nn(hv.data().data(), whv.data().data(), gh.data().data(), rows, hidden, g3);

  // saved: reset, update, candidate, h-side candidate pre-activation
  Tensor rg(Shape{rows, hidden}), ug(Shape{rows, hidden}), ng(Shape{rows, hidden}),
      hn(Shape{rows, hidden});
  Tensor out(Shape{rows, hidden});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gxr = gx.data().data() + r * g3;
    const double* ghr = gh.data().data() + r * g3;
    for (std::size_t j = 0; j < hidden; ++j) {
      const std::size_t i = r * hidden + j;
      const double rv = detail::sigmoid(gxr[j] + ghr[j]);
      const double uv = detail::sigmoid(gxr[hidden + j] + ghr[hidden + j]);
      const double hnv = ghr[2 * hidden + j];
      const double nv = std::tanh(gxr[2 * hidden + j] + rv * hnv);
      rg[i] = rv;
      ug[i] = uv;
      ng[i] = nv;
      hn[i] = hnv;
      out[i] = (1.0 - uv) * nv + uv * hv[i];
    }
  }
  if (hv.rank() != 2) out = Tensor(hv.shape(), std::vector<double>(out.vec()));
  Node n;
  n.op = OpKind::gru_cell;
  n.inputs = {x.id(), h.id(), wx.id(), wh.id(), bx.id(), bh.id()};
  n.saved = {std::move(rg), std::move(ug), std::move(ng), std::move(hn)};
  n.value = std::move(out);
  return t->push(std::move(n));
}

// ---- reverse sweep ----

inline void Tape::propagate(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = n.grad;
  auto in = [&](std::size_t k) { return n.inputs[k]; };
  auto val = [&](std::size_t k) -> const Tensor& { return nodes_[static_cast<std::size_t>(in(k))].value; };

  switch (n.op) {
    case OpKind::leaf:
      break;
    case OpKind::add:
      for (std::size_t k = 0; k < 2; ++k)
        if (wants(in(k))) {
          auto d = grad_of(in(k)).data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
      break;
    case OpKind::sub:
      if (wants(in(0))) {
        auto d = grad_of(in(0)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      }
      if (wants(in(1))) {
        auto d = grad_of(in(1)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
      }
      break;
    case OpKind::mul:
      if (wants(in(0))) {
        const Tensor& o = val(1);
        auto d = grad_of(in(0)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * o[i];
      }
      if (wants(in(1))) {
        const Tensor& o = val(0);
        auto d = grad_of(in(1)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * o[i];
      }
      break;
    case OpKind::matmul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      const std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
      if (wants(in(0))) detail::gemm_nt(g.data().data(), b.data().data(), grad_of(in(0)).data().data(), m, k, nn);
      if (wants(in(1))) detail::gemm_tn(a.data().data(), g.data().data(), grad_of(in(1)).data().data(), m, k, nn);
      break;
    }
    case OpKind::concat: {
      const std::size_t rows = g.rows();
      const std::size_t cols = g.cols();
      std::size_t off = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        const std::size_t c = val(p).cols();
        if (wants(in(p))) {
          auto d = grad_of(in(p)).data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) d[r * c + j] += g[r * cols + off + j];
        }
        off += c;
      }
      break;
    }
    case OpKind::concat_rows: {
      std::size_t off = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        const std::size_t sz = val(p).size();
        if (wants(in(p))) {
          auto d = grad_of(in(p)).data();
          for (std::size_t i = 0; i < sz; ++i) d[i] += g[off + i];
        }
        off += sz;
      }
      break;
    }
    case OpKind::slice: {
      if (!wants(in(0))) break;
      const std::size_t cols = val(0).cols();
      const std::size_t w = g.cols();
      auto d = grad_of(in(0)).data();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < w; ++j) d[r * cols + n.offset + j] += g[r * w + j];
      break;
    }
    case OpKind::tanh:
    case OpKind::sigmoid:
    case OpKind::relu:
    case OpKind::exp:
    case OpKind::square:
    case OpKind::scale: {
      if (!wants(in(0))) break;
      const Tensor& x = val(0);
      const Tensor& y = n.value;
      auto d = grad_of(in(0)).data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        double dy = 0.0;
        switch (n.op) {
          case OpKind::tanh: dy = 1.0 - y[i] * y[i]; break;
          case OpKind::sigmoid: dy = y[i] * (1.0 - y[i]); break;
          case OpKind::relu: dy = x[i] > 0.0 ? 1.0 : 0.0; break;
          case OpKind::exp: dy = y[i]; break;
          case OpKind::square: dy = 2.0 * x[i]; break;
          default: dy = n.scalar; break;
        }
        d[i] += g[i] * dy;
      }
      break;
    }
    case OpKind::sum:
    case OpKind::mean: {
      if (!wants(in(0))) break;
      auto d = grad_of(in(0)).data();
      const double gv = n.op == OpKind::sum ? g[0] : g[0] / static_cast<double>(d.size());
      for (double& v : d) v += gv;
      break;
    }
    case OpKind::add_row: {
      if (wants(in(0))) {
        auto d = grad_of(in(0)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      }
      if (wants(in(1))) {
        auto d = grad_of(in(1)).data();
        const std::size_t cols = g.cols();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
      }
      break;
    }
    case OpKind::linear: {
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      const std::size_t rows = x.rows(), k = x.cols(), cols = w.cols();
      std::vector<double> pre(g.size());
      for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = g[i] * detail::activate_grad(n.act, n.value[i]);
      if (wants(in(0))) detail::gemm_nt(pre.data(), w.data().data(), grad_of(in(0)).data().data(), rows, k, cols);
      if (wants(in(1))) detail::gemm_tn(x.data().data(), pre.data(), grad_of(in(1)).data().data(), rows, k, cols);
      if (wants(in(2))) {
        auto d = grad_of(in(2)).data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) d[c] += pre[r * cols + c];
      }
      break;
    }
    case OpKind::blend: {
      if (wants(in(0))) {
        auto d = grad_of(in(0)).data();
        const double keep = 1.0 - n.scalar;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += keep * g[i];
      }
      if (wants(in(1))) {
        auto d = grad_of(in(1)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += n.scalar * g[i];
      }
      break;
    }
    case OpKind::axpy_rows: {
      const std::size_t cols = g.cols();
      if (wants(in(0))) {
        auto d = grad_of(in(0)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      }
      if (wants(in(1))) {
        auto d = grad_of(in(1)).data();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < cols; ++j) d[r * cols + j] += n.coeffs[r] * g[r * cols + j];
      }
      break;
    }
    case OpKind::rk4_combine: {
      const std::size_t cols = g.cols();
      if (wants(in(0))) {
        auto d = grad_of(in(0)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      }
      constexpr double weights[4] = {1.0, 2.0, 2.0, 1.0};
      for (std::size_t k = 0; k < 4; ++k) {
        if (!wants(in(k + 1))) continue;
        auto d = grad_of(in(k + 1)).data();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double w = weights[k] * (n.coeffs[r] / 6.0);
          for (std::size_t j = 0; j < cols; ++j) d[r * cols + j] += w * g[r * cols + j];
        }
      }
      break;
    }
    case OpKind::gru_cell: {
      const Tensor& x = val(0);
      const Tensor& h = val(1);
      const Tensor& wx = val(2);
      const Tensor& wh = val(3);
      const Tensor& rg = n.saved[0];
      const Tensor& ug = n.saved[1];
      const Tensor& ng = n.saved[2];
      const Tensor& hn = n.saved[3];
      const std::size_t rows = x.rows();
      const std::size_t hidden = h.cols();
      const std::size_t g3 = 3 * hidden;
      std::vector<double> dgx(rows * g3), dgh(rows * g3);
      std::vector<double> dh_direct(rows * hidden);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < hidden; ++j) {
          const std::size_t i = r * hidden + j;
          const double go = g[i];
          const double u = ug[i], nv = ng[i], rv = rg[i];
          const double dn = go * (1.0 - u) * (1.0 - nv * nv);
          const double du = go * (h[i] - nv) * u * (1.0 - u);
          const double dr = dn * hn[i] * rv * (1.0 - rv);
          dh_direct[i] = go * u;
          double* ax = dgx.data() + r * g3;
          double* ah = dgh.data() + r * g3;
          ax[j] = dr;
          ah[j] = dr;
          ax[hidden + j] = du;
          ah[hidden + j] = du;
          ax[2 * hidden + j] = dn;
          ah[2 * hidden + j] = dn * rv;
        }
      }
      if (wants(in(0))) detail::gemm_nt(dgx.data(), wx.data().data(), grad_of(in(0)).data().data(), rows, x.cols(), g3);
      if (wants(in(1))) {
        auto d = grad_of(in(1)).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dh_direct[i];
        detail::gemm_nt(dgh.data(), wh.data().data(), d.data(), rows, hidden, g3);
      }
      if (wants(in(2))) detail::gemm_tn(x.data().data(), dgx.data(), grad_of(in(2)).data().data(), rows, x.cols(), g3);
      if (wants(in(3))) detail::gemm_tn(h.data().data(), dgh.data(), grad_of(in(3)).data().data(), rows, hidden, g3);
      for (std::size_t k = 4; k < 6; ++k) {
        if (!wants(in(k))) continue;
        const std::vector<double>& src = k == 4 ? dgx : dgh;
        auto d = grad_of(in(k)).data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < g3; ++c) d[c] += src[r * g3 + c];
      }
      break;
    }
  }
}

inline GradientMap Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (nodes_.empty()) throw std::invalid_argument("backward: empty tape");
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  grad_of(root.id()).fill(1.0);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (n.op != OpKind::leaf && n.requires_grad) propagate(id);
    if (n.op != OpKind::leaf) {
      n.grad = Tensor();
      n.has_grad = false;
    }
  }

  GradientMap out;
  for (Parameter* p : param_order_) {
    Node& n = nodes_[static_cast<std::size_t>(param_ids_.at(p))];
    if (n.has_grad) {
      auto src = n.grad.data();
      auto dst = p->grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      out[p->name] = std::move(n.grad);
      n.grad = Tensor();
      n.has_grad = false;
    } else {
      out[p->name] = Tensor(p->value.shape(), 0.0);
    }
  }
  // constant leaves may have picked up gradients; drop them
  for (Node& n : nodes_) {
    if (n.has_grad) {
      n.grad = Tensor();
      n.has_grad = false;
    }
  }
  return out;
}

/// Largest relative disagreement between the tape gradient of `f` with
/// respect to `p` and a central difference with step `h`:
/// max_i |analytic_i - numeric_i| / (|analytic_i| + floor).
///
/// `f` must build its graph on the supplied tape and be deterministic. The
/// parameter's value is restored and its gradient left unchanged.
inline double finite_diff_check(const std::function<Var(Tape&)>& f, Parameter& p, double h, double floor = 1e-8) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  const Tensor saved_grad = p.grad;
  Tensor analytic;
  {
    Tape tape;
    Var root = f(tape);
    // make sure p is registered so an unused parameter yields zeros
    tape.param(p);
    analytic = tape.backward(root).at(p.name);
  }
  p.grad = saved_grad;

  auto eval = [&] {
    Tape tape;
    return f(tape).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double orig = p.value[i];
    p.value[i] = orig + h;
    const double up = eval();
    p.value[i] = orig - h;
    const double down = eval();
    p.value[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + floor));
  }
  return worst;
}

}  // namespace pode
