#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsr/rng.hpp"
#include "hsr/tensor.hpp"

namespace hsr {

using NodeId = int;

enum class OpKind {
  Leaf,
  Add,
  AddRowVec,
  AddConst,
  MatMul,
  MatMulNT,
  Scale,
  CMul,
  SoftmaxRows,
  Gelu,
  LayerNorm,
  Dropout,
  GatherRows,
  SliceRows,
  SliceCols,
  ConcatCols,
  Sum,
  MaskedCE,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::AddRowVec: return "add_rowvec";
    case OpKind::AddConst: return "add_const";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Scale: return "scale";
    case OpKind::CMul: return "cmul";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::Gelu: return "gelu";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Dropout: return "dropout";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::Sum: return "sum";
    case OpKind::MaskedCE: return "masked_ce";
  }
  return "?";
}

// Reverse-mode tape over Tensor values. Nodes are appended in construction
// order, which is a topological order by construction; backward() walks them
// in exact reverse. Leaves may borrow external tensors (parameters) so graphs
// stay cheap to build per training example.
template <class S>
class Graph {
 public:
  explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

  // Borrowing leaf; *external must outlive the graph. An optional grad_sink
  // receives this leaf's gradient instead of graph-local storage, letting many
  // short-lived graphs accumulate into one shared buffer; the caller zeroes it
  // between optimizer steps.
  NodeId leaf(const Tensor<S>* external, Tensor<S>* grad_sink = nullptr) {
    if (grad_sink != nullptr && !grad_sink->same_shape(*external))
      throw DimensionError("leaf: grad sink shape differs from value");
    Node n;
    n.kind = OpKind::Leaf;
    n.external = external;
    n.grad_sink = grad_sink;
    return push(std::move(n));
  }

  // Owning leaf.
  NodeId constant(Tensor<S> v) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (!va.same_shape(vb)) throw DimensionError("add: shape mismatch");
    Node n;
    n.kind = OpKind::Add;
    n.inputs = {a, b};
    n.value = Tensor<S>(va.mat() + vb.mat(), va.shape());
    return push(std::move(n));
  }

  // x: m-by-k, v: row vector of k entries broadcast over the rows of x
  NodeId add_rowvec(NodeId x, NodeId v) {
    const auto& vx = val(x);
    const auto& vv = val(v);
    if (vv.rows() != 1 || vv.cols() != vx.cols())
      throw DimensionError("add_rowvec: vector length mismatch");
    Node n;
    n.kind = OpKind::AddRowVec;
    n.inputs = {x, v};
    n.value = Tensor<S>((vx.mat().rowwise() + vv.mat().row(0)).eval(), vx.shape());
    return push(std::move(n));
  }

  // x plus a non-trainable constant of the same shape (attention pad bias)
  NodeId add_const(NodeId x, Tensor<S> c) {
    const auto& vx = val(x);
    if (!vx.same_shape(c)) throw DimensionError("add_const: shape mismatch");
    Node n;
    n.kind = OpKind::AddConst;
    n.inputs = {x};
    n.value = Tensor<S>(vx.mat() + c.mat(), vx.shape());
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (va.cols() != vb.rows()) throw DimensionError("matmul: inner dimensions differ");
    Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {a, b};
    n.value = Tensor<S>(va.mat() * vb.mat());
    return push(std::move(n));
  }

  // a * b^T
  NodeId matmul_nt(NodeId a, NodeId b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (va.cols() != vb.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
    Node n;
    n.kind = OpKind::MatMulNT;
    n.inputs = {a, b};
    n.value = Tensor<S>(va.mat() * vb.mat().transpose());
    return push(std::move(n));
  }

  NodeId scale(NodeId x, S c) {
    const auto& vx = val(x);
    Node n;
    n.kind = OpKind::Scale;
    n.inputs = {x};
    n.sc = c;
    n.value = Tensor<S>((vx.mat() * c).eval(), vx.shape());
    return push(std::move(n));
  }

  NodeId cmul(NodeId a, NodeId b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (!va.same_shape(vb)) throw DimensionError("cmul: shape mismatch");
    Node n;
    n.kind = OpKind::CMul;
    n.inputs = {a, b};
    n.value = Tensor<S>(va.mat().cwiseProduct(vb.mat()).eval(), va.shape());
    return push(std::move(n));
  }

  // softmax along the last axis, max-subtracted
  NodeId softmax_rows(NodeId x) {
    const auto& vx = val(x);
    Node n;
    n.kind = OpKind::SoftmaxRows;
    n.inputs = {x};
    MatrixX<S> y = vx.mat();
    for (Index r = 0; r < y.rows(); ++r) {
      S mx = y.row(r).maxCoeff();
      y.row(r) = (y.row(r).array() - mx).exp();
      y.row(r) /= y.row(r).sum();
    }
    n.value = Tensor<S>(std::move(y), vx.shape());
    return push(std::move(n));
  }

  NodeId gelu(NodeId x) {
    const auto& vx = val(x);
    Node n;
    n.kind = OpKind::Gelu;
    n.inputs = {x};
    MatrixX<S> y = vx.mat().unaryExpr([](S v) { return gelu_scalar(v); });
    n.value = Tensor<S>(std::move(y), vx.shape());
    return push(std::move(n));
  }

  // Per-row normalization over the last axis followed by the affine map
  // gain/bias; variance is the population variance stabilized with eps 1e-5.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias) {
    const auto& vx = val(x);
    const auto& vg = val(gain);
    const auto& vb = val(bias);
    const Index cols = vx.cols();
    if (cols < 2) throw DimensionError("layer_norm: last axis extent < 2");
    if (vg.rows() != 1 || vg.cols() != cols || vb.rows() != 1 || vb.cols() != cols)
      throw DimensionError("layer_norm: gain/bias length mismatch");
    Node n;
    n.kind = OpKind::LayerNorm;
    n.inputs = {x, gain, bias};
    const S eps = S(1e-5);
    MatrixX<S> xhat(vx.rows(), cols);
    MatrixX<S> istd(vx.rows(), 1);
    for (Index r = 0; r < vx.rows(); ++r) {
      S mean = vx.mat().row(r).mean();
      S var = (vx.mat().row(r).array() - mean).square().mean();
      S is = S(1) / std::sqrt(var + eps);
      istd(r, 0) = is;
      xhat.row(r) = (vx.mat().row(r).array() - mean) * is;
    }
    MatrixX<S> y = (xhat.array().rowwise() * vg.mat().row(0).array()).rowwise() +
                   vb.mat().row(0).array();
    n.saved = Tensor<S>(std::move(xhat));
    n.saved2 = Tensor<S>(std::move(istd));
    n.value = Tensor<S>(std::move(y), vx.shape());
    return push(std::move(n));
  }

  // Inverted dropout; evaluation mode is the identity (no node emitted).
  NodeId dropout(NodeId x, S rate, RngStream& rng, bool train) {
    if (rate < S(0) || rate >= S(1)) throw ContractError("dropout: rate must be in [0, 1)");
    if (!train || rate == S(0)) return x;
    const auto& vx = val(x);
    Node n;
    n.kind = OpKind::Dropout;
    n.inputs = {x};
    const S keep_scale = S(1) / (S(1) - rate);
    MatrixX<S> mask(vx.rows(), vx.cols());
    for (Index r = 0; r < mask.rows(); ++r)
      for (Index c = 0; c < mask.cols(); ++c)
        mask(r, c) = rng.bernoulli(static_cast<double>(rate)) ? S(0) : keep_scale;
    n.value = Tensor<S>(vx.mat().cwiseProduct(mask).eval(), vx.shape());
    n.saved = Tensor<S>(std::move(mask));
    return push(std::move(n));
  }

  // rows of `table` selected by index; duplicate ids allowed (scatter-add)
  NodeId gather_rows(NodeId table, std::vector<int> ids) {
    const auto& vt = val(table);
    if (ids.empty()) throw ContractError("gather_rows: empty index list");
    for (int id : ids)
      if (id < 0 || id >= vt.rows()) throw ContractError("gather_rows: index out of range");
    Node n;
    n.kind = OpKind::GatherRows;
    n.inputs = {table};
    MatrixX<S> y(static_cast<Index>(ids.size()), vt.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) y.row(static_cast<Index>(i)) = vt.mat().row(ids[i]);
    n.indices = std::move(ids);
    n.value = Tensor<S>(std::move(y));
    return push(std::move(n));
  }

  NodeId slice_rows(NodeId x, Index begin, Index len) {
    const auto& vx = val(x);
    if (begin < 0 || len <= 0 || begin + len > vx.rows())
      throw DimensionError("slice_rows: range out of bounds");
    Node n;
    n.kind = OpKind::SliceRows;
    n.inputs = {x};
    n.i0 = begin;
    n.i1 = len;
    n.value = Tensor<S>(vx.mat().middleRows(begin, len).eval());
    return push(std::move(n));
  }

  NodeId slice_cols(NodeId x, Index begin, Index len) {
    const auto& vx = val(x);
    if (begin < 0 || len <= 0 || begin + len > vx.cols())
      throw DimensionError("slice_cols: range out of bounds");
    Node n;
    n.kind = OpKind::SliceCols;
    n.inputs = {x};
    n.i0 = begin;
    n.i1 = len;
    n.value = Tensor<S>(vx.mat().middleCols(begin, len).eval());
    return push(std::move(n));
  }

  NodeId concat_cols(std::span<const NodeId> xs) {
    if (xs.empty()) throw DimensionError("concat_cols: no inputs");
    Index rows = val(xs[0]).rows();
    Index cols = 0;
    for (NodeId id : xs) {
      if (val(id).rows() != rows) throw DimensionError("concat_cols: row count mismatch");
      cols += val(id).cols();
    }
    Node n;
    n.kind = OpKind::ConcatCols;
    n.inputs.assign(xs.begin(), xs.end());
    MatrixX<S> y(rows, cols);
    Index at = 0;
    for (NodeId id : xs) {
      y.middleCols(at, val(id).cols()) = val(id).mat();
      at += val(id).cols();
    }
    n.value = Tensor<S>(std::move(y));
    return push(std::move(n));
  }

  NodeId sum(NodeId x) {
    Node n;
    n.kind = OpKind::Sum;
    n.inputs = {x};
    n.value = Tensor<S>::full({1}, val(x).mat().sum());
    return push(std::move(n));
  }

  // Mean negative log-softmax of the true entry over rows whose label is not
  // the sentinel -1; rows with the sentinel contribute nothing.
  NodeId masked_ce(NodeId logits, std::vector<int> labels) {
    const auto& vl = val(logits);
    if (static_cast<Index>(labels.size()) != vl.rows())
      throw DimensionError("masked_ce: one label per logit row required");
    Index m = 0;
    for (int lb : labels) {
      if (lb >= 0) {
        if (lb >= vl.cols()) throw ContractError("masked_ce: label out of vocabulary");
        ++m;
      }
    }
    if (m == 0) throw ContractError("masked_ce: no labeled rows in batch");
    Node n;
    n.kind = OpKind::MaskedCE;
    n.inputs = {logits};
    MatrixX<S> probs = MatrixX<S>::Zero(vl.rows(), vl.cols());
    S loss = S(0);
    for (Index r = 0; r < vl.rows(); ++r) {
      int lb = labels[static_cast<std::size_t>(r)];
      if (lb < 0) continue;
      S mx = vl.mat().row(r).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (vl.mat().row(r).array() - mx).exp();
      S z = e.sum();
      probs.row(r) = e / z;
      loss += std::log(z) - (vl(r, lb) - mx);
    }
    n.indices = std::move(labels);
    n.saved = Tensor<S>(std::move(probs));
    n.value = Tensor<S>::full({1}, loss / S(m));
    return push(std::move(n));
  }

  // The reference is invalidated by any call that appends a node.
  const Tensor<S>& value(NodeId id) const { return val(id); }

  // Zero-filled until backward() writes it; callers may read any node.
  const Tensor<S>& grad(NodeId id) {
    ensure_grad(id);
    return nodes_[static_cast<std::size_t>(id)].gref();
  }

  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(seed * loss)/d(node) into every node's gradient. Visits
  // nodes in exact reverse construction order; nodes not on a path to the
  // loss keep their zero gradient.
  void backward(NodeId loss, S seed = S(1)) {
    if (!val(loss).is_scalar()) throw ContractError("backward: loss must be scalar");
    ensure_grad(loss);
    nodes_[static_cast<std::size_t>(loss)].gref()(0, 0) += seed;
    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.grad_live()) continue;  // not reached from the loss
      if (check_finite_ && n.kind != OpKind::Leaf && !n.gref().all_finite())
        throw NumericError(std::string("backward: non-finite gradient at ") + op_name(n.kind));
      propagate(n);
    }
  }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor<S> value;
    const Tensor<S>* external = nullptr;
    Tensor<S> grad;
    Tensor<S>* grad_sink = nullptr;
    Tensor<S> saved;   // op context: dropout mask, softmax probs, x-hat
    Tensor<S> saved2;  // layer_norm inverse stddev per row
    std::vector<int> indices;
    Index i0 = 0, i1 = 0;
    S sc = S(0);

    const Tensor<S>& val() const { return external ? *external : value; }
    bool grad_live() const { return grad_sink != nullptr || grad.size() != 0; }
    Tensor<S>& gref() { return grad_sink != nullptr ? *grad_sink : grad; }
  };

  const Tensor<S>& val(NodeId id) const {
    return nodes_.at(static_cast<std::size_t>(id)).val();
  }

  NodeId push(Node n) {
    if (check_finite_ && n.kind != OpKind::Leaf && !n.val().all_finite())
      throw NumericError(std::string("forward: non-finite output of ") + op_name(n.kind));
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void ensure_grad(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad_sink == nullptr && n.grad.size() == 0)
      n.grad = Tensor<S>::zeros(n.val().shape());
  }

  MatrixX<S>& gmat(NodeId id) {
    ensure_grad(id);
    return nodes_[static_cast<std::size_t>(id)].gref().mat();
  }

  void propagate(Node& n) {
    const MatrixX<S>& g = n.gref().mat();
    switch (n.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::Add:
        gmat(n.inputs[0]) += g;
        gmat(n.inputs[1]) += g;
        break;
      case OpKind::AddRowVec:
        gmat(n.inputs[0]) += g;
        gmat(n.inputs[1]).row(0) += g.colwise().sum();
        break;
      case OpKind::AddConst:
        gmat(n.inputs[0]) += g;
        break;
      case OpKind::MatMul:
        gmat(n.inputs[0]).noalias() += g * val(n.inputs[1]).mat().transpose();
        gmat(n.inputs[1]).noalias() += val(n.inputs[0]).mat().transpose() * g;
        break;
      case OpKind::MatMulNT:
        gmat(n.inputs[0]).noalias() += g * val(n.inputs[1]).mat();
        gmat(n.inputs[1]).noalias() += g.transpose() * val(n.inputs[0]).mat();
        break;
      case OpKind::Scale:
        gmat(n.inputs[0]) += g * n.sc;
        break;
      case OpKind::CMul:
        gmat(n.inputs[0]) += g.cwiseProduct(val(n.inputs[1]).mat());
        gmat(n.inputs[1]) += g.cwiseProduct(val(n.inputs[0]).mat());
        break;
      case OpKind::SoftmaxRows: {
        const MatrixX<S>& y = n.value.mat();
        MatrixX<S>& dx = gmat(n.inputs[0]);
        for (Index r = 0; r < y.rows(); ++r) {
          S dot = g.row(r).dot(y.row(r));
          dx.row(r) += ((g.row(r).array() - dot) * y.row(r).array()).matrix();
        }
        break;
      }
      case OpKind::Gelu: {
        const MatrixX<S>& x = val(n.inputs[0]).mat();
        gmat(n.inputs[0]) +=
            g.cwiseProduct(x.unaryExpr([](S v) { return gelu_grad_scalar(v); }));
        break;
      }
      case OpKind::LayerNorm: {
        const MatrixX<S>& xhat = n.saved.mat();
        const MatrixX<S>& istd = n.saved2.mat();
        const MatrixX<S>& gain = val(n.inputs[1]).mat();
        MatrixX<S>& dx = gmat(n.inputs[0]);
        gmat(n.inputs[1]).row(0) += g.cwiseProduct(xhat).colwise().sum();
        gmat(n.inputs[2]).row(0) += g.colwise().sum();
        for (Index r = 0; r < xhat.rows(); ++r) {
          Eigen::Array<S, 1, Eigen::Dynamic> q = g.row(r).array() * gain.row(0).array();
          S mq = q.mean();
          S mqx = (q * xhat.row(r).array()).mean();
          dx.row(r) += (istd(r, 0) * (q - mq - xhat.row(r).array() * mqx)).matrix();
        }
        break;
      }
      case OpKind::Dropout:
        gmat(n.inputs[0]) += g.cwiseProduct(n.saved.mat());
        break;
      case OpKind::GatherRows: {
        MatrixX<S>& dt = gmat(n.inputs[0]);
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          dt.row(n.indices[i]) += g.row(static_cast<Index>(i));
        break;
      }
      case OpKind::SliceRows:
        gmat(n.inputs[0]).middleRows(n.i0, n.i1) += g;
        break;
      case OpKind::SliceCols:
        gmat(n.inputs[0]).middleCols(n.i0, n.i1) += g;
        break;
      case OpKind::ConcatCols: {
        Index at = 0;
        for (NodeId id : n.inputs) {
          Index w = val(id).cols();
          gmat(id) += g.middleCols(at, w);
          at += w;
        }
        break;
      }
      case OpKind::Sum:
        gmat(n.inputs[0]).array() += g(0, 0);
        break;
      case OpKind::MaskedCE: {
        const MatrixX<S>& probs = n.saved.mat();
        MatrixX<S>& dl = gmat(n.inputs[0]);
        Index m = 0;
        for (int lb : n.indices)
          if (lb >= 0) ++m;
        const S w = g(0, 0) / S(m);
        for (Index r = 0; r < probs.rows(); ++r) {
          int lb = n.indices[static_cast<std::size_t>(r)];
          if (lb < 0) continue;
          dl.row(r) += w * probs.row(r);
          dl(r, lb) -= w;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool check_finite_;
};

}  // namespace hsr
