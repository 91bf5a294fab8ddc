#pragma once

// Define-by-run reverse-mode differentiation over BasicTensor.
//
// A Graph records every primitive applied to its Vars in creation order, so
// node ids are a valid topological order. Only leaves created through
// Graph::leaf() are differentiable; constants (model weights, frozen input
// rows) never receive gradients and nothing downstream of constants alone is
// visited by backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "textmax/errors.hpp"
#include "textmax/tensor.hpp"

namespace textmax {

using NodeId = std::size_t;

enum class Op {
  kConstant,
  kLeaf,
  kMatMul,
  kAdd,
  kMul,
  kMulScalar,
  kGelu,
  kTanh,
  kSoftmax,
  kLayerNorm,
  kTranspose,
  kSlice,
  kConcat,
  kReshape,
  kSum,
  kMean,
  kPick,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kMulScalar: return "mul_scalar";
    case Op::kGelu: return "gelu";
    case Op::kTanh: return "tanh";
    case Op::kSoftmax: return "softmax_lastdim";
    case Op::kLayerNorm: return "layernorm_lastdim";
    case Op::kTranspose: return "transpose2d";
    case Op::kSlice: return "slice";
    case Op::kConcat: return "concat";
    case Op::kReshape: return "reshape";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kPick: return "pick";
  }
  return "?";
}

template <class T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }
  const BasicTensor<T>& value() const { return graph_->node(id_).value; }
  const Shape& shape() const { return value().shape(); }

 private:
  Graph<T>* graph_ = nullptr;
  NodeId id_ = 0;
};

template <class T>
class Graph {
 public:
  struct Node {
    Op op = Op::kConstant;
    std::vector<NodeId> inputs;
    BasicTensor<T> value;
    bool requires_grad = false;
    double scalar = 0.0;
    std::size_t axis = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<std::size_t> indices;
    std::vector<double> saved;
  };

  using GradientMap = std::map<NodeId, BasicTensor<T>>;

  explicit Graph(bool checked = true) : checked_(checked) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(BasicTensor<T> value) {
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// A leaf that receives a gradient in backward().
  Var<T> leaf(BasicTensor<T> value) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
  }

  bool checked() const noexcept { return checked_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  bool is_differentiable_leaf(NodeId id) const { return nodes_.at(id).op == Op::kLeaf; }

  /// Appends a node; inputs must already be in the graph. Primitives go through here.
  Var<T> push(Node n) {
    for (auto in : n.inputs) {
      if (in >= nodes_.size()) throw Error("graph: input node precedes nothing");
      n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    const NodeId id = nodes_.size();
    if (checked_ && !n.value.all_finite()) {
      throw NumericError(id, std::string("node ") + std::to_string(id) + " (" +
                                 op_name(n.op) + ") produced a non-finite value");
    }
    nodes_.push_back(std::move(n));
    return Var<T>(this, id);
  }

  /// d(root)/d(leaf) for every differentiable leaf. Root must hold one element.
  GradientMap backward(Var<T> root) const;

 private:
  bool checked_;
  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
Graph<T>& same_graph(const Var<T>& a, const Var<T>& b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

template <class T>
typename Graph<T>::Node node_of(Op op, std::initializer_list<NodeId> inputs,
                                BasicTensor<T> value) {
  typename Graph<T>::Node n;
  n.op = op;
  n.inputs = inputs;
  n.value = std::move(value);
  return n;
}

inline double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
  constexpr double k = 0.7978845608028654;
  const double inner = k * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
}

// Views a tensor as outer x axis x inner around `axis`.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace detail

// ---- primitives ----------------------------------------------------------

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& g = detail::same_graph(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + to_string(A.shape()) + " vs " +
                     to_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  const auto pa = A.data();
  const auto pb = B.data();
  std::vector<double> acc(n);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const T* brow = pb.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aip * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(acc[j]);
  }
  return g.push(detail::node_of<T>(Op::kMatMul, {a.id(), b.id()},
                                   BasicTensor<T>::adopt({m, n}, std::move(out))));
}

/// Elementwise sum. `b` may also be a 1-D bias matching the last extent of `a`.
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& g = detail::same_graph(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  std::vector<T> out(A.numel());
  const auto pa = A.data();
  const auto pb = B.data();
  if (A.shape() == B.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  } else if (B.rank() == 1 && B.dim(0) == A.shape().back()) {
    const auto cols = B.dim(0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i % cols];
  } else {
    throw ShapeError("add: shape mismatch " + to_string(A.shape()) + " vs " +
                     to_string(B.shape()));
  }
  return g.push(detail::node_of<T>(Op::kAdd, {a.id(), b.id()},
                                   BasicTensor<T>::adopt(A.shape(), std::move(out))));
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& g = detail::same_graph(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) {
    throw ShapeError("mul: shape mismatch " + to_string(A.shape()) + " vs " +
                     to_string(B.shape()));
  }
  std::vector<T> out(A.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return g.push(detail::node_of<T>(Op::kMul, {a.id(), b.id()},
                                   BasicTensor<T>::adopt(A.shape(), std::move(out))));
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, double c) {
  const auto& A = a.value();
  std::vector<T> out(A.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(c * A[i]);
  auto n = detail::node_of<T>(Op::kMulScalar, {a.id()},
                              BasicTensor<T>::adopt(A.shape(), std::move(out)));
  n.scalar = c;
  return a.graph().push(std::move(n));
}

/// Tanh-approximated GELU.
template <class T>
Var<T> gelu(const Var<T>& a) {
  const auto& A = a.value();
  std::vector<T> out(A.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(detail::gelu(A[i]));
  return a.graph().push(detail::node_of<T>(Op::kGelu, {a.id()},
                                           BasicTensor<T>::adopt(A.shape(), std::move(out))));
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  const auto& A = a.value();
  std::vector<T> out(A.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(std::tanh(double(A[i])));
  return a.graph().push(detail::node_of<T>(Op::kTanh, {a.id()},
                                           BasicTensor<T>::adopt(A.shape(), std::move(out))));
}

template <class T>
Var<T> softmax_lastdim(const Var<T>& a) {
  const auto& A = a.value();
  const std::size_t cols = A.shape().back();
  const std::size_t rows = A.numel() / cols;
  std::vector<T> out(A.numel());
  std::vector<double> e(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto x = A.row(r);
    const double mx = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      e[j] = std::exp(double(x[j]) - mx);
      total += e[j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = static_cast<T>(e[j] / total);
  }
  return a.graph().push(detail::node_of<T>(Op::kSoftmax, {a.id()},
                                           BasicTensor<T>::adopt(A.shape(), std::move(out))));
}

/// Normalizes each last-dim row with its population mean and variance.
template <class T>
Var<T> layernorm_lastdim(const Var<T>& a, const Var<T>& gain, const Var<T>& bias, double eps) {
  auto& g = detail::same_graph(a, gain);
  detail::same_graph(a, bias);
  if (!(eps >= 0.0)) throw ContractError("layernorm_lastdim: eps must be >= 0");
  const auto& A = a.value();
  const std::size_t cols = A.shape().back();
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    throw ShapeError("layernorm_lastdim: shape mismatch " + to_string(A.shape()) + " vs " +
                     to_string(gain.shape()) + "/" + to_string(bias.shape()));
  }
  const std::size_t rows = A.numel() / cols;
  const auto pg = gain.value().data();
  const auto pb = bias.value().data();
  std::vector<T> out(A.numel());
  std::vector<double> saved(2 * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto x = A.row(r);
    double mu = 0.0;
    for (auto v : x) mu += v;
    mu /= double(cols);
    double var = 0.0;
    for (auto v : x) var += (v - mu) * (v - mu);
    var /= double(cols);
    const double rstd = 1.0 / std::sqrt(var + eps);
    saved[2 * r] = mu;
    saved[2 * r + 1] = rstd;
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = static_cast<T>((x[j] - mu) * rstd * pg[j] + pb[j]);
    }
  }
  auto n = detail::node_of<T>(Op::kLayerNorm, {a.id(), gain.id(), bias.id()},
                              BasicTensor<T>::adopt(A.shape(), std::move(out)));
  n.scalar = eps;
  n.saved = std::move(saved);
  return g.push(std::move(n));
}

template <class T>
Var<T> transpose2d(const Var<T>& a) {
  const auto& A = a.value();
  if (A.rank() != 2) throw ShapeError("transpose2d: needs rank 2, got " + to_string(A.shape()));
  const std::size_t m = A.dim(0), n = A.dim(1);
  std::vector<T> out(A.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return a.graph().push(detail::node_of<T>(Op::kTranspose, {a.id()},
                                           BasicTensor<T>::adopt({n, m}, std::move(out))));
}

/// Half-open range [begin, end) along `axis`.
template <class T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  if (axis >= A.rank() || begin >= end || end > A.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + to_string(A.shape()));
  }
  const auto v = detail::axis_view(A.shape(), axis);
  const std::size_t len = end - begin;
  std::vector<T> out(v.outer * len * v.inner);
  const auto src = A.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(src.begin() + (o * v.extent + begin) * v.inner, len * v.inner,
                out.begin() + o * len * v.inner);
  }
  Shape shape = A.shape();
  shape[axis] = len;
  auto n = detail::node_of<T>(Op::kSlice, {a.id()},
                              BasicTensor<T>::adopt(std::move(shape), std::move(out)));
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return a.graph().push(std::move(n));
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  auto& g = parts.front().graph();
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + to_string(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::same_graph(parts.front(), p);
    Shape probe = p.shape();
    if (probe.size() != shape.size()) {
      throw ShapeError("concat: shape mismatch " + to_string(shape) + " vs " + to_string(probe));
    }
    probe[axis] = shape[axis];
    if (probe != shape) {
      throw ShapeError("concat: shape mismatch " + to_string(shape) + " vs " +
                       to_string(p.shape()));
    }
    total += p.shape()[axis];
  }
  shape[axis] = total;
  const auto v = detail::axis_view(shape, axis);
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  typename Graph<T>::Node n;
  n.op = Op::kConcat;
  n.axis = axis;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto src = p.value().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(src.begin() + o * len * v.inner, len * v.inner,
                  out.begin() + (o * total + offset) * v.inner);
    }
    offset += len;
    n.inputs.push_back(p.id());
  }
  n.value = BasicTensor<T>::adopt(std::move(shape), std::move(out));
  return g.push(std::move(n));
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis) {
  return concat(std::span<const Var<T>>(parts.begin(), parts.size()), axis);
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return a.graph().push(detail::node_of<T>(Op::kReshape, {a.id()}, a.value().reshaped(std::move(shape))));
}

template <class T>
Var<T> sum(const Var<T>& a) {
  double total = 0.0;
  for (auto v : a.value().data()) total += v;
  return a.graph().push(detail::node_of<T>(
      Op::kSum, {a.id()}, BasicTensor<T>::adopt({1}, {static_cast<T>(total)})));
}

template <class T>
Var<T> mean(const Var<T>& a) {
  double total = 0.0;
  for (auto v : a.value().data()) total += v;
  total /= double(a.value().numel());
  return a.graph().push(detail::node_of<T>(
      Op::kMean, {a.id()}, BasicTensor<T>::adopt({1}, {static_cast<T>(total)})));
}

/// Gathers elements at flat (row-major) indices into a 1-D tensor.
template <class T>
Var<T> pick(const Var<T>& a, std::vector<std::size_t> indices) {
  if (indices.empty()) throw ContractError("pick: empty index set");
  const auto& A = a.value();
  std::vector<T> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= A.numel()) {
      throw ShapeError("pick: index " + std::to_string(indices[i]) + " outside " +
                       to_string(A.shape()));
    }
    out[i] = A[indices[i]];
  }
  auto n = detail::node_of<T>(Op::kPick, {a.id()},
                              BasicTensor<T>::adopt({indices.size()}, std::move(out)));
  n.indices = std::move(indices);
  return a.graph().push(std::move(n));
}

// ---- backward ------------------------------------------------------------

template <class T>
typename Graph<T>::GradientMap Graph<T>::backward(Var<T> root) const {
  if (&root.graph() != this) throw ContractError("backward: root belongs to another graph");
  const NodeId rid = root.id();
  if (nodes_.at(rid).value.numel() != 1) {
    throw ContractError("backward: root must be scalar, got shape " +
                        to_string(nodes_[rid].value.shape()));
  }

  std::vector<std::vector<T>> grad(rid + 1);
  grad[rid] = {T{1}};

  auto sink = [&](NodeId id) -> std::vector<T>* {
    if (!nodes_[id].requires_grad) return nullptr;
    auto& g = grad[id];
    if (g.empty()) g.assign(nodes_[id].value.numel(), T{0});
    return &g;
  };

  for (NodeId id = rid + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (grad[id].empty() || !n.requires_grad || n.op == Op::kLeaf) continue;
    const std::vector<T>& dy = grad[id];

    switch (n.op) {
      case Op::kConstant:
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        const std::size_t m = A.dim(0), k = A.dim(1), c = B.dim(1);
        if (auto* da = sink(n.inputs[0])) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < c; ++j) acc += double(dy[i * c + j]) * B[p * c + j];
              (*da)[i * k + p] += static_cast<T>(acc);
            }
        }
        if (auto* db = sink(n.inputs[1])) {
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < c; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i) acc += double(A[i * k + p]) * dy[i * c + j];
              (*db)[p * c + j] += static_cast<T>(acc);
            }
        }
        break;
      }
      case Op::kAdd: {
        if (auto* da = sink(n.inputs[0])) {
          for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
        }
        if (auto* db = sink(n.inputs[1])) {
          if (db->size() == dy.size()) {
            for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i];
          } else {
            const std::size_t cols = db->size();
            for (std::size_t j = 0; j < cols; ++j) {
              double acc = 0.0;
              for (std::size_t i = j; i < dy.size(); i += cols) acc += dy[i];
              (*db)[j] += static_cast<T>(acc);
            }
          }
        }
        break;
      }
      case Op::kMul: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        if (auto* da = sink(n.inputs[0]))
          for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * B[i];
        if (auto* db = sink(n.inputs[1]))
          for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * A[i];
        break;
      }
      case Op::kMulScalar: {
        if (auto* da = sink(n.inputs[0]))
          for (std::size_t i = 0; i < dy.size(); ++i)
            (*da)[i] += static_cast<T>(n.scalar * dy[i]);
        break;
      }
      case Op::kGelu: {
        const auto& A = nodes_[n.inputs[0]].value;
        if (auto* da = sink(n.inputs[0]))
          for (std::size_t i = 0; i < dy.size(); ++i)
            (*da)[i] += static_cast<T>(dy[i] * detail::gelu_derivative(A[i]));
        break;
      }
      case Op::kTanh: {
        if (auto* da = sink(n.inputs[0]))
          for (std::size_t i = 0; i < dy.size(); ++i) {
            const double y = n.value[i];
            (*da)[i] += static_cast<T>(dy[i] * (1.0 - y * y));
          }
        break;
      }
      case Op::kSoftmax: {
        if (auto* da = sink(n.inputs[0])) {
          const std::size_t cols = n.value.shape().back();
          for (std::size_t r = 0; r < dy.size() / cols; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += double(dy[r * cols + j]) * n.value[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) {
              const std::size_t i = r * cols + j;
              (*da)[i] += static_cast<T>(n.value[i] * (dy[i] - dot));
            }
          }
        }
        break;
      }
      case Op::kLayerNorm: {
        const auto& X = nodes_[n.inputs[0]].value;
        const auto& G = nodes_[n.inputs[1]].value;
        const std::size_t cols = X.shape().back();
        const std::size_t rows = X.numel() / cols;
        auto* dx = sink(n.inputs[0]);
        auto* dg = sink(n.inputs[1]);
        auto* dbias = sink(n.inputs[2]);
        std::vector<double> xhat(cols), dxhat(cols);
        std::vector<double> gacc(cols, 0.0), bacc(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double mu = n.saved[2 * r];
          const double rstd = n.saved[2 * r + 1];
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t i = r * cols + j;
            xhat[j] = (X[i] - mu) * rstd;
            dxhat[j] = double(dy[i]) * G[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[j];
            gacc[j] += double(dy[i]) * xhat[j];
            bacc[j] += dy[i];
          }
          m1 /= double(cols);
          m2 /= double(cols);
          if (dx) {
            for (std::size_t j = 0; j < cols; ++j)
              (*dx)[r * cols + j] += static_cast<T>(rstd * (dxhat[j] - m1 - xhat[j] * m2));
          }
        }
        if (dg) for (std::size_t j = 0; j < cols; ++j) (*dg)[j] += static_cast<T>(gacc[j]);
        if (dbias) for (std::size_t j = 0; j < cols; ++j) (*dbias)[j] += static_cast<T>(bacc[j]);
        break;
      }
      case Op::kTranspose: {
        if (auto* da = sink(n.inputs[0])) {
          const std::size_t rows = n.value.dim(0), cols = n.value.dim(1);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) (*da)[j * rows + i] += dy[i * cols + j];
        }
        break;
      }
      case Op::kSlice: {
        if (auto* da = sink(n.inputs[0])) {
          const auto v = detail::axis_view(nodes_[n.inputs[0]].value.shape(), n.axis);
          const std::size_t len = n.end - n.begin;
          for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t t = 0; t < len * v.inner; ++t)
              (*da)[(o * v.extent + n.begin) * v.inner + t] += dy[o * len * v.inner + t];
        }
        break;
      }
      case Op::kConcat: {
        const auto v = detail::axis_view(n.value.shape(), n.axis);
        std::size_t offset = 0;
        for (auto in : n.inputs) {
          const std::size_t len = nodes_[in].value.shape()[n.axis];
          if (auto* da = sink(in)) {
            for (std::size_t o = 0; o < v.outer; ++o)
              for (std::size_t t = 0; t < len * v.inner; ++t)
                (*da)[o * len * v.inner + t] += dy[(o * v.extent + offset) * v.inner + t];
          }
          offset += len;
        }
        break;
      }
      case Op::kReshape: {
        if (auto* da = sink(n.inputs[0]))
          for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        if (auto* da = sink(n.inputs[0])) {
          const double scale = n.op == Op::kMean ? 1.0 / double(da->size()) : 1.0;
          const T d = static_cast<T>(dy[0] * scale);
          for (auto& x : *da) x += d;
        }
        break;
      }
      case Op::kPick: {
        if (auto* da = sink(n.inputs[0]))
          for (std::size_t i = 0; i < n.indices.size(); ++i) (*da)[n.indices[i]] += dy[i];
        break;
      }
    }
    if (checked_) {
      for (auto in : n.inputs) {
        for (T x : grad[in]) {
          if (!std::isfinite(x)) {
            throw NumericError(in, "gradient at node " + std::to_string(in) + " is not finite");
          }
        }
      }
    }
  }

  GradientMap out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op != Op::kLeaf) continue;
    if (id <= rid && !grad[id].empty()) {
      out.emplace(id, BasicTensor<T>::adopt(nodes_[id].value.shape(), std::move(grad[id])));
    } else {
      out.emplace(id, BasicTensor<T>::zeros(nodes_[id].value.shape()));
    }
  }
  return out;
}

}  // namespace textmax
