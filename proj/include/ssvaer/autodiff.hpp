#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssvaer/tensor.hpp"

namespace ssvaer {

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  div,
  exp,
  log,
  tanh,
  relu,
  square,
  sum,
  sum_rows,
  mean,
  broadcast,
  affine,
  stop_gradient,
  clamp,
  concat_cols,
  gather_rows,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::square: return "square";
    case OpKind::sum: return "sum";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::mean: return "mean";
    case OpKind::broadcast: return "broadcast";
    case OpKind::affine: return "affine";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::clamp: return "clamp";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::gather_rows: return "gather_rows";
  }
  return "?";
}

/// Lower clamp applied to log arguments and divisors.
inline constexpr double kLogFloor = 1e-12;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of operation records for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every record's inputs precede
/// it and a single reverse sweep visits each record once. Parameters are
/// bound by address: `backward` accumulates into `Tensor::grad()` of every
/// tensor registered through `parameter`.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) {
    Node n;
    n.kind = OpKind::leaf;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Registers `param` as a trainable leaf. Registering the same tensor twice
  /// returns the same node.
  Var parameter(Tensor& param) {
    if (auto it = param_ids_.find(&param); it != param_ids_.end()) return Var(this, it->second);
    Node n;
    n.kind = OpKind::leaf;
    n.value = param;
    n.value.drop_grad();
    n.param = &param;
    Var v = push(std::move(n));
    param_ids_.emplace(&param, v.id());
    return v;
  }

  const Tensor& value(Var v) const { return node(v).value; }
  double scalar(Var v) const {
    const auto& t = node(v).value;
    if (!t.is_scalar()) throw ShapeError("scalar: tensor is " + t.shape_string());
    return t[0];
  }
  OpKind kind(Var v) const { return node(v).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

  /// Gradient of the last backward target with respect to `v`; zeros when `v`
  /// does not influence it.
  std::span<const double> grad(Var v) const {
    const auto& n = node(v);
    if (n.grad.empty()) {
      zero_scratch_.assign(n.value.size(), 0.0);
      return zero_scratch_;
    }
    return n.grad;
  }

  void reset() {
    nodes_.clear();
    param_ids_.clear();
    backward_done_ = false;
  }

  // ---- primitives -------------------------------------------------------

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.rows()) {
      throw ShapeError("matmul: inner dimensions differ (" + A.shape_string() + " x " +
                       B.shape_string() + ")");
    }
    Tensor C(A.rows(), B.cols());
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double* crow = C.values().data() + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A(i, p);
        if (aip == 0.0) continue;
        const double* brow = B.values().data() + p * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
      }
    }
    return push_op(OpKind::matmul, {a.id(), b.id()}, std::move(C));
  }

  Var add(Var a, Var b) { return binary(OpKind::add, a, b); }
  Var sub(Var a, Var b) { return binary(OpKind::sub, a, b); }
  Var mul(Var a, Var b) { return binary(OpKind::mul, a, b); }
  /// a / max(b, 1e-12)
  Var div(Var a, Var b) { return binary(OpKind::div, a, b); }

  Var exp(Var x) {
    return unary(OpKind::exp, x, [](double v) { return std::exp(v); });
  }
  /// log(max(x, 1e-12))
  Var log(Var x) {
    return unary(OpKind::log, x, [](double v) { return std::log(std::max(v, kLogFloor)); });
  }
  Var tanh(Var x) {
    return unary(OpKind::tanh, x, [](double v) { return std::tanh(v); });
  }
  Var relu(Var x) {
    return unary(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; });
  }
  Var square(Var x) {
    return unary(OpKind::square, x, [](double v) { return v * v; });
  }
  Var stop_gradient(Var x) {
    return unary(OpKind::stop_gradient, x, [](double v) { return v; });
  }
  /// scale * x + shift
  Var affine(Var x, double scale, double shift = 0.0) {
    auto out = value(x);
    out.drop_grad();
    for (auto& v : out.values()) v = scale * v + shift;
    Node n = make_node(OpKind::affine, {x.id()}, std::move(out));
    n.a = scale;
    n.b = shift;
    return push_checked(std::move(n));
  }
  Var clamp(Var x, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lower bound exceeds upper bound");
    auto out = value(x);
    out.drop_grad();
    for (auto& v : out.values()) v = std::clamp(v, lo, hi);
    Node n = make_node(OpKind::clamp, {x.id()}, std::move(out));
    n.a = lo;
    n.b = hi;
    return push_checked(std::move(n));
  }

  /// Sum of all entries (1x1).
  Var sum(Var x) {
    double s = 0.0;
    for (double v : value(x).values()) s += v;
    return push_op(OpKind::sum, {x.id()}, Tensor::scalar(s));
  }
  /// Per-row sum across columns (rows x 1).
  Var sum_rows(Var x) {
    const auto& X = value(x);
    Tensor out(X.rows(), 1);
    for (std::size_t i = 0; i < X.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < X.cols(); ++j) s += X(i, j);
      out[i] = s;
    }
    return push_op(OpKind::sum_rows, {x.id()}, std::move(out));
  }
  /// Mean of all entries (1x1).
  Var mean(Var x) {
    const auto& X = value(x);
    if (X.size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : X.values()) s += v;
    return push_op(OpKind::mean, {x.id()}, Tensor::scalar(s / static_cast<double>(X.size())));
  }

  /// Repeats a 1xc row, an rx1 column, or a 1x1 scalar up to rows x cols.
  Var broadcast(Var x, std::size_t rows, std::size_t cols) {
    const auto& X = value(x);
    const bool ok = (X.rows() == rows || X.rows() == 1) && (X.cols() == cols || X.cols() == 1);
    if (!ok) {
      throw ShapeError("broadcast: cannot expand " + X.shape_string() + " to " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    }
    Tensor out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        out(i, j) = X(X.rows() == 1 ? 0 : i, X.cols() == 1 ? 0 : j);
    return push_op(OpKind::broadcast, {x.id()}, std::move(out));
  }

  Var concat_cols(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows() != B.rows()) {
      throw ShapeError("concat_cols: row counts differ (" + A.shape_string() + ", " +
                       B.shape_string() + ")");
    }
    Tensor out(A.rows(), A.cols() + B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) = A(i, j);
      for (std::size_t j = 0; j < B.cols(); ++j) out(i, A.cols() + j) = B(i, j);
    }
    return push_op(OpKind::concat_cols, {a.id(), b.id()}, std::move(out));
  }

  Var gather_rows(Var x, std::vector<std::size_t> rows) {
    Tensor out = value(x).select_rows(rows);
    Node n = make_node(OpKind::gather_rows, {x.id()}, std::move(out));
    n.index = std::move(rows);
    return push_checked(std::move(n));
  }

  // ---- reverse sweep ----------------------------------------------------

  /// Propagates d(loss)/d(node) to every node and accumulates parameter
  /// gradients. Allowed once per graph; call `reset` to reuse.
  void backward(Var loss) {
    check_owner(loss);
    if (backward_done_) throw std::logic_error("backward: already run on this graph; reset first");
    const auto& L = nodes_[loss.id()].value;
    if (!L.is_scalar()) throw ShapeError("backward: loss must be scalar, got " + L.shape_string());

    std::vector<char> live(loss.id() + 1, 0);
    live[loss.id()] = 1;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (!live[i]) continue;
      for (std::size_t in : nodes_[i].inputs) {
        if (in == kNone) continue;
        if (in >= i) throw std::logic_error("backward: cycle detected at node " + std::to_string(i));
        live[in] = 1;
      }
    }

    for (auto& n : nodes_) n.grad.clear();
    nodes_[loss.id()].grad.assign(1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (!live[i] || nodes_[i].grad.empty()) continue;
      propagate(i);
    }
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      auto& n = nodes_[i];
      if (n.grad.empty()) continue;
      for (double g : n.grad) {
        if (!std::isfinite(g)) {
          throw NumericError(std::string("backward: non-finite gradient at ") + op_name(n.kind) +
                             " node " + std::to_string(i));
        }
      }
      if (n.param != nullptr) {
        n.param->ensure_grad();
        auto pg = n.param->grad();
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
    backward_done_ = true;
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    OpKind kind = OpKind::leaf;
    std::array<std::size_t, 2> inputs{kNone, kNone};
    Tensor value;
    std::vector<double> grad;
    Tensor* param = nullptr;
    double a = 0.0;
    double b = 0.0;
    std::vector<std::size_t> index;
  };

  const Node& node(Var v) const {
    check_owner(v);
    return nodes_[v.id()];
  }

  void check_owner(Var v) const {
    if (v.graph() != this || v.id() >= nodes_.size()) {
      throw std::invalid_argument("graph: variable does not belong to this graph");
    }
  }

  static Node make_node(OpKind kind, std::initializer_list<std::size_t> in, Tensor out) {
    Node n;
    n.kind = kind;
    std::size_t k = 0;
    for (auto id : in) n.inputs[k++] = id;
    n.value = std::move(out);
    return n;
  }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var push_checked(Node&& n) {
    if (!n.value.all_finite()) {
      throw NumericError(std::string("numeric overflow: ") + op_name(n.kind) +
                         " produced a non-finite value (shape " + n.value.shape_string() + ")");
    }
    return push(std::move(n));
  }

  Var push_op(OpKind kind, std::initializer_list<std::size_t> in, Tensor out) {
    for (auto id : in) {
      if (id >= nodes_.size()) throw std::invalid_argument("graph: unknown input node");
    }
    return push_checked(make_node(kind, in, std::move(out)));
  }

  template <class F>
  Var unary(OpKind kind, Var x, F f) {
    check_owner(x);
    auto out = nodes_[x.id()].value;
    out.drop_grad();
    for (auto& v : out.values()) v = f(v);
    return push_op(kind, {x.id()}, std::move(out));
  }

  Var binary(OpKind kind, Var a, Var b) {
    check_owner(a);
    check_owner(b);
    auto sa = value(a).shape();
    auto sb = value(b).shape();
    if (sa != sb) {
      auto fits = [](std::array<std::size_t, 2> from, std::array<std::size_t, 2> to) {
        return (from[0] == to[0] || from[0] == 1) && (from[1] == to[1] || from[1] == 1);
      };
      if (fits(sb, sa)) {
        b = broadcast(b, sa[0], sa[1]);
      } else if (fits(sa, sb)) {
        a = broadcast(a, sb[0], sb[1]);
      } else {
        throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " +
                         value(a).shape_string() + " and " + value(b).shape_string());
      }
    }
    const auto& A = value(a);
    const auto& B = value(b);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
      switch (kind) {
        case OpKind::add: out[i] = A[i] + B[i]; break;
        case OpKind::sub: out[i] = A[i] - B[i]; break;
        case OpKind::mul: out[i] = A[i] * B[i]; break;
        case OpKind::div: out[i] = A[i] / std::max(B[i], kLogFloor); break;
        default: throw std::logic_error("binary: bad kind");
      }
    }
    return push_op(kind, {a.id(), b.id()}, std::move(out));
  }

  std::vector<double>& grad_slot(std::size_t id) {
    auto& g = nodes_[id].grad;
    if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
    return g;
  }

  void propagate(std::size_t i) {
    // grad_slot only touches input nodes, never node i itself.
    const Node& n = nodes_[i];
    const auto& g = n.grad;
    const auto in0 = n.inputs[0];
    const auto in1 = n.inputs[1];
    switch (n.kind) {
      case OpKind::leaf:
      case OpKind::stop_gradient:
        return;
      case OpKind::matmul: {
        const auto& A = nodes_[in0].value;
        const auto& B = nodes_[in1].value;
        const std::size_t rows = A.rows(), inner = A.cols(), cols = B.cols();
        auto& ga = grad_slot(in0);
        auto& gb = grad_slot(in1);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t p = 0; p < inner; ++p) {
            double acc = 0.0;
            const double a_rp = A(r, p);
            for (std::size_t c = 0; c < cols; ++c) {
              const double gc = g[r * cols + c];
              acc += gc * B(p, c);
              gb[p * cols + c] += a_rp * gc;
            }
            ga[r * inner + p] += acc;
          }
        }
        return;
      }
      case OpKind::add: {
        auto& ga = grad_slot(in0);
        auto& gb = grad_slot(in1);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga[k] += g[k];
          gb[k] += g[k];
        }
        return;
      }
      case OpKind::sub: {
        auto& ga = grad_slot(in0);
        auto& gb = grad_slot(in1);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga[k] += g[k];
          gb[k] -= g[k];
        }
        return;
      }
      case OpKind::mul: {
        const auto& A = nodes_[in0].value;
        const auto& B = nodes_[in1].value;
        auto& ga = grad_slot(in0);
        auto& gb = grad_slot(in1);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga[k] += g[k] * B[k];
          gb[k] += g[k] * A[k];
        }
        return;
      }
      case OpKind::div: {
        const auto& A = nodes_[in0].value;
        const auto& B = nodes_[in1].value;
        auto& ga = grad_slot(in0);
        auto& gb = grad_slot(in1);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double d = std::max(B[k], kLogFloor);
          ga[k] += g[k] / d;
          if (B[k] > kLogFloor) gb[k] -= g[k] * A[k] / (d * d);
        }
        return;
      }
      case OpKind::exp: {
        auto& gx = grad_slot(in0);
        for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * n.value[k];
        return;
      }
      case OpKind::log: {
        const auto& X = nodes_[in0].value;
        auto& gx = grad_slot(in0);
        for (std::size_t k = 0; k < g.size(); ++k)
          if (X[k] > kLogFloor) gx[k] += g[k] / X[k];
        return;
      }
      case OpKind::tanh: {
        auto& gx = grad_slot(in0);
        for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * (1.0 - n.value[k] * n.value[k]);
        return;
      }
      case OpKind::relu: {
        const auto& X = nodes_[in0].value;
        auto& gx = grad_slot(in0);
        for (std::size_t k = 0; k < g.size(); ++k)
          if (X[k] > 0.0) gx[k] += g[k];
        return;
      }
      case OpKind::square: {
        const auto& X = nodes_[in0].value;
        auto& gx = grad_slot(in0);
        for (std::size_t k = 0; k < g.size(); ++k) gx[k] += 2.0 * X[k] * g[k];
        return;
      }
      case OpKind::affine: {
        auto& gx = grad_slot(in0);
        for (std::size_t k = 0; k < g.size(); ++k) gx[k] += n.a * g[k];
        return;
      }
      case OpKind::clamp: {
        const auto& X = nodes_[in0].value;
        auto& gx = grad_slot(in0);
        for (std::size_t k = 0; k < g.size(); ++k)
          if (X[k] >= n.a && X[k] <= n.b) gx[k] += g[k];
        return;
      }
      case OpKind::sum: {
        auto& gx = grad_slot(in0);
        for (auto& v : gx) v += g[0];
        return;
      }
      case OpKind::mean: {
        auto& gx = grad_slot(in0);
        const double s = g[0] / static_cast<double>(gx.size());
        for (auto& v : gx) v += s;
        return;
      }
      case OpKind::sum_rows: {
        const auto cols = nodes_[in0].value.cols();
        auto& gx = grad_slot(in0);
        for (std::size_t r = 0; r < g.size(); ++r)
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
        return;
      }
      case OpKind::broadcast: {
        const auto& X = nodes_[in0].value;
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        auto& gx = grad_slot(in0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            gx[(X.rows() == 1 ? 0 : r) * X.cols() + (X.cols() == 1 ? 0 : c)] += g[r * cols + c];
        return;
      }
      case OpKind::concat_cols: {
        const auto ca = nodes_[in0].value.cols();
        const auto cb = nodes_[in1].value.cols();
        const auto cols = ca + cb;
        auto& ga = grad_slot(in0);
        auto& gb = grad_slot(in1);
        for (std::size_t r = 0; r < n.value.rows(); ++r) {
          for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * cols + c];
          for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * cols + ca + c];
        }
        return;
      }
      case OpKind::gather_rows: {
        const auto cols = n.value.cols();
        auto& gx = grad_slot(in0);
        for (std::size_t r = 0; r < n.index.size(); ++r)
          for (std::size_t c = 0; c < cols; ++c) gx[n.index[r] * cols + c] += g[r * cols + c];
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
  bool backward_done_ = false;
  mutable std::vector<double> zero_scratch_;
};

// Free-function spellings so loss code reads as arithmetic.

inline Graph& graph_of(Var a, Var b) {
  if (a.graph() == nullptr || a.graph() != b.graph()) {
    throw std::invalid_argument("operands belong to different graphs");
  }
  return *a.graph();
}

inline Var operator+(Var a, Var b) { return graph_of(a, b).add(a, b); }
inline Var operator-(Var a, Var b) { return graph_of(a, b).sub(a, b); }
inline Var operator*(Var a, Var b) { return graph_of(a, b).mul(a, b); }
inline Var operator/(Var a, Var b) { return graph_of(a, b).div(a, b); }
inline Var operator*(double s, Var x) { return x.graph()->affine(x, s); }
inline Var operator+(Var x, double s) { return x.graph()->affine(x, 1.0, s); }
inline Var operator-(Var x) { return x.graph()->affine(x, -1.0); }

inline Var matmul(Var a, Var b) { return graph_of(a, b).matmul(a, b); }
inline Var exp(Var x) { return x.graph()->exp(x); }
inline Var log(Var x) { return x.graph()->log(x); }
inline Var tanh(Var x) { return x.graph()->tanh(x); }
inline Var relu(Var x) { return x.graph()->relu(x); }
inline Var square(Var x) { return x.graph()->square(x); }
inline Var sum(Var x) { return x.graph()->sum(x); }
inline Var sum_rows(Var x) { return x.graph()->sum_rows(x); }
inline Var mean(Var x) { return x.graph()->mean(x); }
inline Var stop_gradient(Var x) { return x.graph()->stop_gradient(x); }
inline Var clamp(Var x, double lo, double hi) { return x.graph()->clamp(x, lo, hi); }
inline Var concat_cols(Var a, Var b) { return graph_of(a, b).concat_cols(a, b); }

/// Builds a scalar loss on a fresh graph. Must be a pure function of the
/// registered parameter values: any noise has to be fixed up front.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients with central differences.
///
/// Returns max over every entry of every parameter of
/// |analytic - numeric| / max(1, |numeric|).
inline double check_gradients(const LossBuilder& build, std::span<Tensor* const> params,
                              double step = 1e-5) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw std::invalid_argument("check_gradients: step must be positive and finite");
  }
  auto evaluate = [&]() {
    Graph g;
    return g.scalar(build(g));
  };

  for (Tensor* p : params) p->zero_grad();
  double base = 0.0;
  {
    Graph g;
    Var loss = build(g);
    base = g.scalar(loss);
    g.backward(loss);
  }
  if (evaluate() != base) {
    throw std::runtime_error("check_gradients: loss builder is not deterministic");
  }

  double worst = 0.0;
  for (Tensor* p : params) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    for (std::size_t k = 0; k < p->size(); ++k) {
      const double saved = (*p)[k];
      (*p)[k] = saved + step;
      const double up = evaluate();
      (*p)[k] = saved - step;
      const double down = evaluate();
      (*p)[k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ssvaer
