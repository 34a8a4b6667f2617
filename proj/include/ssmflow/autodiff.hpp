#pragma once

// Reverse-mode differentiation over a define-then-run expression graph.
//
// Nodes hold dense matrices so that batched network layers and per-row
// densities are single primitives; a 1x1 node is a scalar. Elementwise binary
// primitives accept operands of equal shape or a 1x1 operand that is broadcast.
// All arithmetic is double precision and every reduction runs left to right,
// so identical graphs and bindings give bitwise-identical results.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssmflow/error.hpp"

namespace ssmflow::ad {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLog2Pi = 1.8378770664093454836;

// ---------------------------------------------------------------------------
// Scalar helpers shared by the double and graph code paths.

inline double square(double x) { return x * x; }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double gaussian_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * d * d / var;
}

// ---------------------------------------------------------------------------
// Trainable parameters: one flat array carved into named row-major slices.

struct ParamSlice {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

class ParameterStore {
 public:
  ParamSlice add(std::string name, Index rows, Index cols) {
    if (rows <= 0 || cols <= 0) throw InvalidArgument("parameter slice '" + name + "' has empty shape");
    if (index_.contains(name)) throw InvalidArgument("duplicate parameter slice '" + name + "'");
    ParamSlice s{std::move(name), values_.size(), rows, cols};
    values_.conservativeResize(values_.size() + s.size());
    values_.tail(s.size()).setZero();
    index_.emplace(s.name, slices_.size());
    slices_.push_back(std::move(s));
    return slices_.back();
  }

  const ParamSlice& slice(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InvalidArgument("unknown parameter slice '" + std::string(name) + "'");
    return slices_[it->second];
  }
  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::span<const ParamSlice> slices() const { return slices_; }
  Index size() const { return values_.size(); }
  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

  Eigen::Map<RowMatrix> view(const ParamSlice& s) {
    return Eigen::Map<RowMatrix>(values_.data() + s.offset, s.rows, s.cols);
  }
  Eigen::Map<const RowMatrix> view(const ParamSlice& s) const {
    return Eigen::Map<const RowMatrix>(values_.data() + s.offset, s.rows, s.cols);
  }
  Eigen::Map<RowMatrix> view(std::string_view name) { return view(slice(name)); }
  Eigen::Map<const RowMatrix> view(std::string_view name) const { return view(slice(name)); }

 private:
  std::vector<ParamSlice> slices_;
  std::unordered_map<std::string, std::size_t> index_;
  Vector values_;
};

// ---------------------------------------------------------------------------

enum class OpKind : std::uint8_t {
  input,
  constant,
  parameter,
  add,
  subtract,
  multiply,
  divide,
  negate,
  exp,
  log,
  square,
  sqrt,
  sigmoid,
  softplus,
  relu,
  tanh,
  affine,           // x * W^T + b, the batched matrix-vector product
  sum,              // all entries -> 1x1
  row_sum,          // R x C -> R x 1
  segment_sum,      // consecutive row blocks -> (R / block) x C
  gaussian_logpdf,  // fused log N(x; mean, var)
  gather_rows,      // windowed row gather with zero padding
  slice_cols,
  concat_cols,
};

constexpr std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::add: return "add";
    case OpKind::subtract: return "subtract";
    case OpKind::multiply: return "multiply";
    case OpKind::divide: return "divide";
    case OpKind::negate: return "negate";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softplus: return "softplus";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::affine: return "affine";
    case OpKind::sum: return "sum";
    case OpKind::row_sum: return "row_sum";
    case OpKind::segment_sum: return "segment_sum";
    case OpKind::gaussian_logpdf: return "gaussian_logpdf";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::concat_cols: return "concat_cols";
  }
  return "unknown";
}

class Graph;

// Lightweight handle to a node of a Graph.
class Expr {
 public:
  Expr() = default;
  Expr(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }
  Index rows() const;
  Index cols() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // -- leaves ---------------------------------------------------------------

  Expr input(std::string name, Index rows, Index cols) {
    if (input_names_.contains(name)) throw InvalidArgument("duplicate input '" + name + "'");
    Node n = make(OpKind::input, rows, cols);
    n.name = name;
    const Expr e = push(std::move(n));
    input_names_.emplace(std::move(name), e.id());
    return e;
  }

  Expr constant(Matrix value) {
    Node n = make(OpKind::constant, value.rows(), value.cols());
    n.value = std::move(value);
    return push(std::move(n));
  }
  Expr constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

  Expr parameter(const ParamSlice& s) {
    Node n = make(OpKind::parameter, s.rows, s.cols);
    n.slice = s;
    return push(std::move(n));
  }

  // -- primitives -----------------------------------------------------------

  Expr add(Expr a, Expr b) { return binary(OpKind::add, a, b); }
  Expr subtract(Expr a, Expr b) { return binary(OpKind::subtract, a, b); }
  Expr multiply(Expr a, Expr b) { return binary(OpKind::multiply, a, b); }
  Expr divide(Expr a, Expr b) { return binary(OpKind::divide, a, b); }
  Expr unary(OpKind k, Expr a) {
    check_owned(a);
    Node n = make(k, a.rows(), a.cols());
    n.args = {a.id()};
    return push(std::move(n));
  }

  // x: R x D, weight: H x D, bias: 1 x H. An optional constant 0/1 mask of the
  // weight's shape zeroes connections (autoregressive masking).
  Expr affine(Expr x, Expr weight, Expr bias, const Matrix* mask = nullptr) {
    return affine_impl(x, weight, bias, mask, false);
  }

  // relu(affine(...)) as one node; saves a full-size intermediate per layer.
  Expr affine_relu(Expr x, Expr weight, Expr bias, const Matrix* mask = nullptr) {
    return affine_impl(x, weight, bias, mask, true);
  }

 private:
  Expr affine_impl(Expr x, Expr weight, Expr bias, const Matrix* mask, bool relu_out) {
    check_owned(x);
    check_owned(weight);
    check_owned(bias);
    if (weight.cols() != x.cols()) throw InvalidArgument("affine: weight cols != input cols");
    if (bias.rows() != 1 || bias.cols() != weight.rows()) throw InvalidArgument("affine: bias must be 1 x H");
    Node n = make(OpKind::affine, x.rows(), weight.rows());
    n.args = {x.id(), weight.id(), bias.id()};
    if (mask != nullptr) {
      if (mask->rows() != weight.rows() || mask->cols() != weight.cols())
        throw InvalidArgument("affine: mask shape mismatch");
      n.aux = *mask;
    }
    n.width = relu_out ? 1 : 0;
    return push(std::move(n));
  }

 public:

  Expr sum(Expr a) {
    check_owned(a);
    Node n = make(OpKind::sum, 1, 1);
    n.args = {a.id()};
    return push(std::move(n));
  }

  Expr row_sum(Expr a) {
    check_owned(a);
    Node n = make(OpKind::row_sum, a.rows(), 1);
    n.args = {a.id()};
    return push(std::move(n));
  }

  Expr segment_sum(Expr a, Index block) {
    check_owned(a);
    if (block <= 0 || a.rows() % block != 0) throw InvalidArgument("segment_sum: block must divide rows");
    Node n = make(OpKind::segment_sum, a.rows() / block, a.cols());
    n.args = {a.id()};
    n.width = block;
    return push(std::move(n));
  }

  Expr gaussian_logpdf(Expr x, Expr mean, Expr var) {
    check_owned(x);
    check_owned(mean);
    check_owned(var);
    Index r = 1, c = 1;
    for (Expr e : {x, mean, var}) {
      if (e.rows() == 1 && e.cols() == 1) continue;
      if (r == 1 && c == 1) {
        r = e.rows();
        c = e.cols();
      } else if (e.rows() != r || e.cols() != c) {
        throw InvalidArgument("gaussian_logpdf: operand shape mismatch");
      }
    }
    Node n = make(OpKind::gaussian_logpdf, r, c);
    n.args = {x.id(), mean.id(), var.id()};
    return push(std::move(n));
  }

  // Output row r, slot s holds source row index[r * slots + s] of x (or zeros
  // when that entry is negative); output is out_rows x (slots * x.cols()).
  Expr gather_rows(Expr x, std::vector<Index> index, Index slots) {
    check_owned(x);
    if (slots <= 0 || index.size() % static_cast<std::size_t>(slots) != 0)
      throw InvalidArgument("gather_rows: index size must be a multiple of slots");
    for (Index i : index)
      if (i >= x.rows()) throw InvalidArgument("gather_rows: source row out of range");
    Node n = make(OpKind::gather_rows, static_cast<Index>(index.size()) / slots, slots * x.cols());
    n.args = {x.id()};
    n.index = std::move(index);
    n.width = slots;
    return push(std::move(n));
  }

  Expr slice_cols(Expr x, Index start, Index count) {
    check_owned(x);
    if (start < 0 || count <= 0 || start + count > x.cols()) throw InvalidArgument("slice_cols: out of range");
    Node n = make(OpKind::slice_cols, x.rows(), count);
    n.args = {x.id()};
    n.width = start;
    return push(std::move(n));
  }

  Expr concat_cols(std::span<const Expr> parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no operands");
    Index cols = 0;
    Node n = make(OpKind::concat_cols, parts.front().rows(), 0);
    for (Expr p : parts) {
      check_owned(p);
      if (p.rows() != n.rows) throw InvalidArgument("concat_cols: row mismatch");
      cols += p.cols();
      n.args.push_back(p.id());
    }
    n.cols = cols;
    return push(std::move(n));
  }

  // -- evaluation -----------------------------------------------------------

  void bind(Expr in, Matrix value) {
    Node& n = input_node(in);
    if (value.rows() != n.rows || value.cols() != n.cols)
      throw InvalidArgument("bind: shape mismatch for input '" + n.name + "'");
    n.value = std::move(value);
    n.bound = true;
    forwarded_root_ = -1;
  }
  void bind(std::string_view name, Matrix value) { bind(find_input(name), std::move(value)); }

  // Writable storage for an input; marks it bound. Avoids reallocations when
  // the same graph is re-run with fresh noise every iteration.
  Matrix& input_slot(Expr in) {
    Node& n = input_node(in);
    n.value.resize(n.rows, n.cols);
    n.bound = true;
    forwarded_root_ = -1;
    return n.value;
  }

  Expr find_input(std::string_view name) const {
    auto it = input_names_.find(std::string(name));
    if (it == input_names_.end()) throw InvalidArgument("unknown input '" + std::string(name) + "'");
    return Expr(const_cast<Graph*>(this), it->second);
  }

  void set_nan_check(bool on) { nan_check_ = on; }

  const Matrix& forward(Expr root, const ParameterStore& store) {
    check_owned(root);
    const std::vector<int>& order = schedule(root.id());
    for (int id : order) {
      Node& n = nodes_[id];
      if (n.kind == OpKind::input && !n.bound) throw MissingInput("input '" + n.name + "' is not bound");
      if (n.kind == OpKind::parameter && n.slice.offset + n.slice.size() > store.size())
        throw InvalidArgument("parameter slice '" + n.slice.name + "' outside the store");
    }
    for (int id : order) {
      eval(nodes_[id], store);
      if (nan_check_ && nodes_[id].value.hasNaN()) {
        const auto op = std::string(to_string(nodes_[id].kind));
        throw NumericFault(op, "NaN produced by " + op + " (node " + std::to_string(id) + ")");
      }
    }
    forwarded_root_ = root.id();
    store_size_ = store.size();
    return nodes_[root.id()].value;
  }

  // Gradient of a 1x1 root with respect to every entry of the store; entries
  // that do not participate receive exactly 0.
  Vector backward(Expr root) {
    check_owned(root);
    if (forwarded_root_ != root.id()) throw StateError("backward called before forward on this root");
    if (root.rows() != 1 || root.cols() != 1) throw InvalidArgument("backward: root must be 1x1");
    const std::vector<int>& order = schedule(root.id());
    for (int id : order) nodes_[id].touched = false;
    adj(nodes_[root.id()])(0, 0) = 1.0;
    Vector grad = Vector::Zero(store_size_);
    for (auto it = order.rbegin(); it != order.rend(); ++it) propagate(nodes_[*it], grad);
    return grad;
  }

  const Matrix& value(Expr e) const { return nodes_.at(e.id()).value; }
  Matrix adjoint(Expr e) const {
    const Node& n = nodes_.at(e.id());
    return n.touched ? n.adjoint : Matrix::Zero(n.rows, n.cols);
  }
  Index rows(int id) const { return nodes_[id].rows; }
  Index cols(int id) const { return nodes_[id].cols; }
  OpKind kind(Expr e) const { return nodes_.at(e.id()).kind; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<int> args;
    Index rows = 0;
    Index cols = 0;
    Matrix value;
    Matrix adjoint;
    std::string name;
    ParamSlice slice;
    std::vector<Index> index;
    Index width = 0;
    Matrix aux;      // affine mask
    Matrix scratch;  // masked weight cached between forward and backward
    bool bound = false;
    bool touched = false;  // adjoint holds a live value in the current backward pass
  };

  // Adjoints are zeroed lazily, on first use in a backward pass.
  static Matrix& adj(Node& n) {
    if (!n.touched) {
      n.adjoint.setZero(n.rows, n.cols);
      n.touched = true;
    }
    return n.adjoint;
  }

  static Node make(OpKind k, Index rows, Index cols) {
    Node n;
    n.kind = k;
    n.rows = rows;
    n.cols = cols;
    return n;
  }

  Expr push(Node n) {
    nodes_.push_back(std::move(n));
    schedules_.clear();
    return Expr(this, static_cast<int>(nodes_.size()) - 1);
  }

  void check_owned(Expr e) const {
    if (e.graph() != this || e.id() < 0 || e.id() >= static_cast<int>(nodes_.size()))
      throw InvalidArgument("expression does not belong to this graph");
  }

  Node& input_node(Expr in) {
    check_owned(in);
    Node& n = nodes_[in.id()];
    if (n.kind != OpKind::input) throw InvalidArgument("bind: node is not an input");
    return n;
  }

  Expr binary(OpKind k, Expr a, Expr b) {
    check_owned(a);
    check_owned(b);
    const bool sa = a.rows() == 1 && a.cols() == 1;
    const bool sb = b.rows() == 1 && b.cols() == 1;
    if (!sa && !sb && (a.rows() != b.rows() || a.cols() != b.cols()))
      throw InvalidArgument(std::string(to_string(k)) + ": operand shape mismatch");
    const Expr& shape = sa ? b : a;
    Node n = make(k, shape.rows(), shape.cols());
    n.args = {a.id(), b.id()};
    return push(std::move(n));
  }

  const std::vector<int>& schedule(int root) {
    auto it = schedules_.find(root);
    if (it != schedules_.end()) return it->second;
    std::vector<char> mark(root + 1, 0);
    mark[root] = 1;
    for (int id = root; id >= 0; --id) {
      if (!mark[id]) continue;
      for (int a : nodes_[id].args) mark[a] = 1;
    }
    std::vector<int> order;
    for (int id = 0; id <= root; ++id)
      if (mark[id]) order.push_back(id);
    return schedules_.emplace(root, std::move(order)).first->second;
  }

  // Broadcast-aware elementwise view of an operand.
  static auto bcast(const Node& n, Index rows, Index cols) {
    if (n.rows == 1 && n.cols == 1 && (rows != 1 || cols != 1))
      return Matrix::Constant(rows, cols, n.value(0, 0)).eval();
    return n.value;
  }

  static void accumulate(Node& n, const Matrix& g) {
    if (n.rows == 1 && n.cols == 1 && (g.rows() != 1 || g.cols() != 1)) {
      double s = 0.0;
      for (Index c = 0; c < g.cols(); ++c)
        for (Index r = 0; r < g.rows(); ++r) s += g(r, c);
      adj(n)(0, 0) += s;
    } else if (!n.touched) {
      n.adjoint = g;
      n.touched = true;
    } else {
      n.adjoint += g;
    }
  }

  static bool scalar(const Node& n) { return n.rows == 1 && n.cols == 1; }

  void eval(Node& n, const ParameterStore& store) {
    auto arg = [&](std::size_t i) -> const Node& { return nodes_[n.args[i]]; };
    switch (n.kind) {
      case OpKind::input:
      case OpKind::constant:
        return;
      case OpKind::parameter:
        n.value = store.view(n.slice);
        return;
      case OpKind::add:
      case OpKind::subtract:
      case OpKind::multiply:
      case OpKind::divide: {
        const Node& a = arg(0);
        const Node& b = arg(1);
        if (scalar(a) && !scalar(b)) {
          const double s = a.value(0, 0);
          switch (n.kind) {
            case OpKind::add: n.value = (s + b.value.array()).matrix(); break;
            case OpKind::subtract: n.value = (s - b.value.array()).matrix(); break;
            case OpKind::multiply: n.value = s * b.value; break;
            default: n.value = (s / b.value.array()).matrix(); break;
          }
        } else if (scalar(b) && !scalar(a)) {
          const double s = b.value(0, 0);
          switch (n.kind) {
            case OpKind::add: n.value = (a.value.array() + s).matrix(); break;
            case OpKind::subtract: n.value = (a.value.array() - s).matrix(); break;
            case OpKind::multiply: n.value = a.value * s; break;
            default: n.value = (a.value.array() / s).matrix(); break;
          }
        } else {
          switch (n.kind) {
            case OpKind::add: n.value = a.value + b.value; break;
            case OpKind::subtract: n.value = a.value - b.value; break;
            case OpKind::multiply: n.value = a.value.cwiseProduct(b.value); break;
            default: n.value = a.value.cwiseQuotient(b.value); break;
          }
        }
        return;
      }
      case OpKind::negate: n.value = -arg(0).value; return;
      case OpKind::exp: n.value = arg(0).value.array().exp().matrix(); return;
      case OpKind::log: n.value = arg(0).value.array().log().matrix(); return;
      case OpKind::square: n.value = arg(0).value.array().square().matrix(); return;
      case OpKind::sqrt: n.value = arg(0).value.array().sqrt().matrix(); return;
      case OpKind::sigmoid: n.value = arg(0).value.unaryExpr([](double x) { return sigmoid(x); }); return;
      case OpKind::softplus: n.value = arg(0).value.unaryExpr([](double x) { return softplus(x); }); return;
      case OpKind::relu: n.value = arg(0).value.cwiseMax(0.0); return;
      case OpKind::tanh: n.value = arg(0).value.array().tanh().matrix(); return;
      case OpKind::affine: {
        const Node& x = arg(0);
        const Node& w = arg(1);
        const Node& b = arg(2);
        if (n.aux.size() > 0) {
          n.scratch = w.value.cwiseProduct(n.aux);
          n.value.noalias() = x.value * n.scratch.transpose();
        } else {
          n.value.noalias() = x.value * w.value.transpose();
        }
        n.value.rowwise() += b.value.row(0);
        if (n.width == 1) n.value = n.value.cwiseMax(0.0);
        return;
      }
      case OpKind::sum: {
        const Matrix& v = arg(0).value;
        double s = 0.0;
        for (Index r = 0; r < v.rows(); ++r)
          for (Index c = 0; c < v.cols(); ++c) s += v(r, c);
        n.value.resize(1, 1);
        n.value(0, 0) = s;
        return;
      }
      case OpKind::row_sum: {
        const Matrix& v = arg(0).value;
        n.value.resize(v.rows(), 1);
        n.value.col(0) = v.col(0);
        for (Index c = 1; c < v.cols(); ++c) n.value.col(0) += v.col(c);
        return;
      }
      case OpKind::segment_sum: {
        const Matrix& v = arg(0).value;
        const Index block = n.width;
        n.value.resize(n.rows, n.cols);
        for (Index c = 0; c < v.cols(); ++c)
          for (Index s = 0; s < n.rows; ++s) {
            double acc = 0.0;
            for (Index r = s * block; r < (s + 1) * block; ++r) acc += v(r, c);
            n.value(s, c) = acc;
          }
        return;
      }
      case OpKind::gaussian_logpdf: {
        const Matrix x = bcast(arg(0), n.rows, n.cols);
        const Matrix m = bcast(arg(1), n.rows, n.cols);
        const Matrix v = bcast(arg(2), n.rows, n.cols);
        n.value = (-0.5 * (kLog2Pi + v.array().log()) - 0.5 * (x - m).array().square() / v.array()).matrix();
        return;
      }
      case OpKind::gather_rows: {
        const Matrix& x = arg(0).value;
        const Index slots = n.width;
        const Index c = x.cols();
        n.value.setZero(n.rows, n.cols);
        for (Index r = 0; r < n.rows; ++r)
          for (Index s = 0; s < slots; ++s) {
            const Index src = n.index[r * slots + s];
            if (src >= 0) n.value.block(r, s * c, 1, c) = x.row(src);
          }
        return;
      }
      case OpKind::slice_cols:
        n.value = arg(0).value.middleCols(n.width, n.cols);
        return;
      case OpKind::concat_cols: {
        n.value.resize(n.rows, n.cols);
        Index at = 0;
        for (int id : n.args) {
          const Matrix& p = nodes_[id].value;
          n.value.middleCols(at, p.cols()) = p;
          at += p.cols();
        }
        return;
      }
    }
  }

  void propagate(Node& n, Vector& grad) {
    if (!n.touched) return;
    if (n.kind == OpKind::affine && n.width == 1)
      n.adjoint = (n.value.array() > 0.0).select(n.adjoint, 0.0);
    const Matrix& g = n.adjoint;
    auto arg = [&](std::size_t i) -> Node& { return nodes_[n.args[i]]; };
    switch (n.kind) {
      case OpKind::input:
      case OpKind::constant:
        return;
      case OpKind::parameter:
        Eigen::Map<RowMatrix>(grad.data() + n.slice.offset, n.slice.rows, n.slice.cols) += g;
        return;
      case OpKind::add:
        accumulate(arg(0), g);
        accumulate(arg(1), g);
        return;
      case OpKind::subtract:
        accumulate(arg(0), g);
        accumulate(arg(1), -g);
        return;
      case OpKind::multiply: {
        Node& a = arg(0);
        Node& b = arg(1);
        if (scalar(a) == scalar(b)) {
          adj(a) += g.cwiseProduct(b.value);
          adj(b) += g.cwiseProduct(a.value);
        } else {
          accumulate(a, g.cwiseProduct(bcast(b, n.rows, n.cols)));
          accumulate(b, g.cwiseProduct(bcast(a, n.rows, n.cols)));
        }
        return;
      }
      case OpKind::divide: {
        Node& a = arg(0);
        Node& b = arg(1);
        const Matrix bv = bcast(b, n.rows, n.cols);
        accumulate(a, g.cwiseQuotient(bv));
        accumulate(b, (-g.array() * n.value.array() / bv.array()).matrix());
        return;
      }
      case OpKind::negate: adj(arg(0)) -= g; return;
      case OpKind::exp: adj(arg(0)) += g.cwiseProduct(n.value); return;
      case OpKind::log: adj(arg(0)) += g.cwiseQuotient(arg(0).value); return;
      case OpKind::square: adj(arg(0)) += (2.0 * g.array() * arg(0).value.array()).matrix(); return;
      case OpKind::sqrt: adj(arg(0)) += (0.5 * g.array() / n.value.array()).matrix(); return;
      case OpKind::sigmoid:
        adj(arg(0)) += (g.array() * n.value.array() * (1.0 - n.value.array())).matrix();
        return;
      case OpKind::softplus:
        adj(arg(0)) += g.cwiseProduct(arg(0).value.unaryExpr([](double x) { return sigmoid(x); }));
        return;
      case OpKind::relu:
        adj(arg(0)) += (arg(0).value.array() > 0.0).select(g, 0.0);
        return;
      case OpKind::tanh:
        adj(arg(0)) += (g.array() * (1.0 - n.value.array().square())).matrix();
        return;
      case OpKind::affine: {
        Node& x = arg(0);
        Node& w = arg(1);
        Node& b = arg(2);
        const bool masked = n.aux.size() > 0;
        const Matrix& weight = masked ? n.scratch : w.value;
        if (x.kind != OpKind::constant) {
          if (!x.touched) {
            x.adjoint.noalias() = g * weight;
            x.touched = true;
          } else {
            x.adjoint.noalias() += g * weight;
          }
        }
        if (masked) {
          adj(w) += (g.transpose() * x.value).cwiseProduct(n.aux);
        } else {
          adj(w).noalias() += g.transpose() * x.value;
        }
        Matrix& bg = adj(b);
        for (Index c = 0; c < g.cols(); ++c) {
          double s = 0.0;
          for (Index r = 0; r < g.rows(); ++r) s += g(r, c);
          bg(0, c) += s;
        }
        return;
      }
      case OpKind::sum: adj(arg(0)).array() += g(0, 0); return;
      case OpKind::row_sum:
        adj(arg(0)).colwise() += g.col(0);
        return;
      case OpKind::segment_sum: {
        Node& a = arg(0);
        const Index block = n.width;
        for (Index s = 0; s < n.rows; ++s) adj(a).middleRows(s * block, block).rowwise() += g.row(s);
        return;
      }
      case OpKind::gaussian_logpdf: {
        Node& xn = arg(0);
        Node& mn = arg(1);
        Node& vn = arg(2);
        const Matrix x = bcast(xn, n.rows, n.cols);
        const Matrix m = bcast(mn, n.rows, n.cols);
        const Matrix v = bcast(vn, n.rows, n.cols);
        const Eigen::ArrayXXd d = (x - m).array();
        const Eigen::ArrayXXd dx = -g.array() * d / v.array();
        accumulate(xn, dx.matrix());
        accumulate(mn, (-dx).matrix());
        accumulate(vn, (g.array() * (-0.5 / v.array() + 0.5 * d.square() / v.array().square())).matrix());
        return;
      }
      case OpKind::gather_rows: {
        Node& x = arg(0);
        const Index slots = n.width;
        const Index c = x.cols;
        Matrix& xa = adj(x);
        for (Index r = 0; r < n.rows; ++r)
          for (Index s = 0; s < slots; ++s) {
            const Index src = n.index[r * slots + s];
            if (src >= 0) xa.row(src) += g.block(r, s * c, 1, c);
          }
        return;
      }
      case OpKind::slice_cols:
        adj(arg(0)).middleCols(n.width, n.cols) += g;
        return;
      case OpKind::concat_cols: {
        Index at = 0;
        for (int id : n.args) {
          Node& p = nodes_[id];
          if (p.kind != OpKind::constant) adj(p) += g.middleCols(at, p.cols);
          at += p.cols;
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> input_names_;
  std::unordered_map<int, std::vector<int>> schedules_;
  int forwarded_root_ = -1;
  Index store_size_ = 0;
  bool nan_check_ = true;
};

inline Index Expr::rows() const { return graph_->rows(id_); }
inline Index Expr::cols() const { return graph_->cols(id_); }

// ---------------------------------------------------------------------------
// Operator sugar so that model code templated on the scalar type can run on
// doubles or on graph columns unchanged.

inline Expr lift(Expr like, double v) { return like.graph()->constant(v); }

inline Expr operator+(Expr a, Expr b) { return a.graph()->add(a, b); }
inline Expr operator-(Expr a, Expr b) { return a.graph()->subtract(a, b); }
inline Expr operator*(Expr a, Expr b) { return a.graph()->multiply(a, b); }
inline Expr operator/(Expr a, Expr b) { return a.graph()->divide(a, b); }
inline Expr operator-(Expr a) { return a.graph()->unary(OpKind::negate, a); }
inline Expr operator+(Expr a, double b) { return a + lift(a, b); }
inline Expr operator+(double a, Expr b) { return lift(b, a) + b; }
inline Expr operator-(Expr a, double b) { return a - lift(a, b); }
inline Expr operator-(double a, Expr b) { return lift(b, a) - b; }
inline Expr operator*(Expr a, double b) { return a * lift(a, b); }
inline Expr operator*(double a, Expr b) { return lift(b, a) * b; }
inline Expr operator/(Expr a, double b) { return a / lift(a, b); }
inline Expr operator/(double a, Expr b) { return lift(b, a) / b; }

inline Expr exp(Expr a) { return a.graph()->unary(OpKind::exp, a); }
inline Expr log(Expr a) { return a.graph()->unary(OpKind::log, a); }
inline Expr square(Expr a) { return a.graph()->unary(OpKind::square, a); }
inline Expr sqrt(Expr a) { return a.graph()->unary(OpKind::sqrt, a); }
inline Expr sigmoid(Expr a) { return a.graph()->unary(OpKind::sigmoid, a); }
inline Expr softplus(Expr a) { return a.graph()->unary(OpKind::softplus, a); }
inline Expr relu(Expr a) { return a.graph()->unary(OpKind::relu, a); }
inline Expr tanh(Expr a) { return a.graph()->unary(OpKind::tanh, a); }
inline Expr sum(Expr a) { return a.graph()->sum(a); }
inline Expr row_sum(Expr a) { return a.graph()->row_sum(a); }
inline Expr segment_sum(Expr a, Index block) { return a.graph()->segment_sum(a, block); }
inline Expr gaussian_logpdf(Expr x, Expr mean, Expr var) { return x.graph()->gaussian_logpdf(x, mean, var); }
inline Expr gaussian_logpdf(Expr x, double mean, double var) {
  return gaussian_logpdf(x, lift(x, mean), lift(x, var));
}
inline Expr col(Expr a, Index c) { return a.graph()->slice_cols(a, c, 1); }
inline Expr concat_cols(std::span<const Expr> parts) { return parts.front().graph()->concat_cols(parts); }

// ---------------------------------------------------------------------------

struct GradientCheck {
  double max_rel_error = 0.0;
  Index worst = -1;
  Vector analytic;
  Vector numeric;
};

// Relative error with an absolute floor so that 0 vs 0 reports 0.
inline double relative_error(double a, double b, double floor = 1e-8) {
  const double d = std::abs(a - b);
  if (d == 0.0) return 0.0;
  return d / std::max({std::abs(a), std::abs(b), floor});
}

// Compares backward() of a 1x1 root against central differences on the listed
// store coordinates (all of them when `coords` is empty). Inputs must already
// be bound; the store is restored before returning.
inline GradientCheck check_gradient(Graph& g, Expr root, ParameterStore& store, double eps,
                                    std::span<const Index> coords = {}, double floor = 1e-8) {
  if (!(eps > 0.0)) throw InvalidArgument("check_gradient: eps must be positive");
  std::vector<Index> all;
  if (coords.empty()) {
    all.resize(static_cast<std::size_t>(store.size()));
    for (Index i = 0; i < store.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    coords = all;
  }
  g.forward(root, store);
  const Vector full = g.backward(root);
  GradientCheck out;
  out.analytic.resize(static_cast<Index>(coords.size()));
  out.numeric.resize(static_cast<Index>(coords.size()));
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const Index i = coords[j];
    const double saved = store.values()[i];
    store.values()[i] = saved + eps;
    const double up = g.forward(root, store)(0, 0);
    store.values()[i] = saved - eps;
    const double down = g.forward(root, store)(0, 0);
    store.values()[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    out.analytic[static_cast<Index>(j)] = full[i];
    out.numeric[static_cast<Index>(j)] = fd;
    const double e = relative_error(full[i], fd, floor);
    if (out.worst < 0 || e > out.max_rel_error) {
      out.max_rel_error = e;
      out.worst = i;
    }
  }
  g.forward(root, store);
  return out;
}

}  // namespace ssmflow::ad
