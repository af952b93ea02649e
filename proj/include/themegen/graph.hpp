#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "themegen/eigen_types.hpp"
#include "themegen/errors.hpp"
#include "themegen/params.hpp"

namespace themegen {

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <class Scalar>
std::string shape_str(const Mat<Scalar>& m) {
  return shape_str(m.rows(), m.cols());
}

template <class Scalar>
class Graph;

// Handle to one node of a Graph; cheap to copy, valid while the graph lives.
template <class Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int node = -1;

  const Mat<Scalar>& value() const;
  Mat<Scalar> grad() const;  // zeros when backward never reached this node
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
};

// Reverse-mode tape over dense matrices.  Build the forward pass with the
// free functions below, call backward(loss) to populate gradients; parameter
// gradients accumulate into their ParamStore slots until the next optimizer
// step.  One graph per pass, one thread per graph.
template <class Scalar>
class Graph {
 public:
  using M = Mat<Scalar>;

  Var<Scalar> constant(M value) { return push(std::move(value), false, nullptr); }
  Var<Scalar> leaf(M value) { return push(std::move(value), true, nullptr); }

  // Copies the current parameter value in; the store (and its grad buffer)
  // must outlive the graph.
  Var<Scalar> param(ParamStore<Scalar>& store, const std::string& name) {
    auto& e = store.entry(name);
    return push(e.value, true, &e.grad);
  }

  Var<Scalar> push(M value, bool track, M* sink) {
#ifndef NDEBUG
    if (!value.allFinite()) throw NumericError("non-finite value in forward pass");
#endif
    nodes_.push_back(Node{std::move(value), M(), {}, sink, track || sink != nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(int node, std::function<void(Graph&)> fn) {
    nodes_[node].backward = std::move(fn);
  }

  const M& value(int i) const { return nodes_[i].value; }
  bool tracked(int i) const { return nodes_[i].track; }

  // Gradient buffer, allocated to zeros on first touch.
  M& grad(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  M grad_of(int i) const {
    const Node& n = nodes_[i];
    if (n.grad.size() == 0) return M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.  Node gradients
  // are reset first, so each call contributes one full gradient into the
  // parameter sinks (two calls without an optimizer step double them).
  void backward(Var<Scalar> loss) {
    if (loss.graph != this || loss.node < 0) {
      throw Error("backward: loss is not a node of this graph");
    }
    const M& lv = value(loss.node);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw Error("backward: loss must be a 1x1 scalar, got " + shape_str(lv));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    grad(loss.node).setConstant(Scalar(1));
    for (int i = loss.node; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this);
    }
    for (Node& n : nodes_) {
      if (n.sink && n.grad.size() != 0) *n.sink += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    M value;
    M grad;
    std::function<void(Graph&)> backward;
    M* sink = nullptr;  // external accumulator (parameter grad)
    bool track = false; // does any gradient flow through this node
  };
  std::vector<Node> nodes_;
};

template <class Scalar>
const Mat<Scalar>& Var<Scalar>::value() const {
  return graph->value(node);
}

template <class Scalar>
Mat<Scalar> Var<Scalar>::grad() const {
  return graph->grad_of(node);
}

namespace detail {

template <class Scalar>
Graph<Scalar>& same_graph(Var<Scalar> a, Var<Scalar> b, const char* op) {
  if (!a.graph || a.graph != b.graph) {
    throw Error(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

}  // namespace detail

// ---- primitive ops ----------------------------------------------------------
// Each op computes its value eagerly and registers a closure that adds into
// the parents' gradient buffers.  Closures capture node indices, never
// references, because the tape vector may reallocate as nodes are added.

template <class Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  auto& g = detail::same_graph(a, b, "matmul");
  const auto& A = g.value(a.node);
  const auto& B = g.value(b.node);
  if (A.cols() != B.rows()) {
    throw Error("matmul: inner dimensions differ: " + shape_str(A) + " vs " + shape_str(B));
  }
  auto out = g.push(A * B, g.tracked(a.node) || g.tracked(b.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, bi = b.node, oi = out.node](Graph<Scalar>& g) {
      const auto& G = g.grad(oi);
      if (g.tracked(ai)) g.grad(ai).noalias() += G * g.value(bi).transpose();
      if (g.tracked(bi)) g.grad(bi).noalias() += g.value(ai).transpose() * G;
    });
  }
  return out;
}

// Same-shape addition, or broadcast of a 1-row bias across every row of a.
template <class Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  auto& g = detail::same_graph(a, b, "add");
  const auto& A = g.value(a.node);
  const auto& B = g.value(b.node);
  Mat<Scalar> y;
  bool row_bcast = false;
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    y = A + B;
  } else if (B.rows() == 1 && B.cols() == A.cols()) {
    row_bcast = true;
    y = A.rowwise() + B.row(0);
  } else {
    throw Error("add: incompatible shapes: " + shape_str(A) + " vs " + shape_str(B));
  }
  auto out = g.push(std::move(y), g.tracked(a.node) || g.tracked(b.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node,
                   [ai = a.node, bi = b.node, oi = out.node, row_bcast](Graph<Scalar>& g) {
                     const auto& G = g.grad(oi);
                     if (g.tracked(ai)) g.grad(ai) += G;
                     if (g.tracked(bi)) {
                       if (row_bcast) g.grad(bi) += G.colwise().sum();
                       else g.grad(bi) += G;
                     }
                   });
  }
  return out;
}

template <class Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  auto& g = detail::same_graph(a, b, "sub");
  const auto& A = g.value(a.node);
  const auto& B = g.value(b.node);
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw Error("sub: incompatible shapes: " + shape_str(A) + " vs " + shape_str(B));
  }
  auto out = g.push(A - B, g.tracked(a.node) || g.tracked(b.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, bi = b.node, oi = out.node](Graph<Scalar>& g) {
      const auto& G = g.grad(oi);
      if (g.tracked(ai)) g.grad(ai) += G;
      if (g.tracked(bi)) g.grad(bi) -= G;
    });
  }
  return out;
}

// Element-wise product; b may also be a column (per-row factor) or row
// (per-column factor) vector, broadcast across a.
template <class Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  auto& g = detail::same_graph(a, b, "mul");
  const auto& A = g.value(a.node);
  const auto& B = g.value(b.node);
  enum class Cast { None, Col, Row };
  Cast cast;
  Mat<Scalar> y;
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    cast = Cast::None;
    y = A.cwiseProduct(B);
  } else if (B.cols() == 1 && B.rows() == A.rows()) {
    cast = Cast::Col;
    y = (A.array().colwise() * B.col(0).array()).matrix();
  } else if (B.rows() == 1 && B.cols() == A.cols()) {
    cast = Cast::Row;
    y = (A.array().rowwise() * B.row(0).array()).matrix();
  } else {
    throw Error("mul: incompatible shapes: " + shape_str(A) + " vs " + shape_str(B));
  }
  auto out = g.push(std::move(y), g.tracked(a.node) || g.tracked(b.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, bi = b.node, oi = out.node, cast](Graph<Scalar>& g) {
      const auto& G = g.grad(oi);
      const auto& A = g.value(ai);
      const auto& B = g.value(bi);
      if (g.tracked(ai)) {
        switch (cast) {
          case Cast::None: g.grad(ai) += G.cwiseProduct(B); break;
          case Cast::Col: g.grad(ai) += (G.array().colwise() * B.col(0).array()).matrix(); break;
          case Cast::Row: g.grad(ai) += (G.array().rowwise() * B.row(0).array()).matrix(); break;
        }
      }
      if (g.tracked(bi)) {
        switch (cast) {
          case Cast::None: g.grad(bi) += G.cwiseProduct(A); break;
          case Cast::Col: g.grad(bi) += G.cwiseProduct(A).rowwise().sum(); break;
          case Cast::Row: g.grad(bi) += G.cwiseProduct(A).colwise().sum(); break;
        }
      }
    });
  }
  return out;
}

template <class Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  auto& g = *a.graph;
  auto out = g.push(g.value(a.node) * factor, g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node, factor](Graph<Scalar>& g) {
      if (g.tracked(ai)) g.grad(ai) += g.grad(oi) * factor;
    });
  }
  return out;
}

template <class Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  auto& g = *a.graph;
  auto out = g.push(g.value(a.node).transpose(), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node](Graph<Scalar>& g) {
      if (g.tracked(ai)) g.grad(ai) += g.grad(oi).transpose();
    });
  }
  return out;
}

template <class Scalar>
Var<Scalar> concat_rows(Var<Scalar> a, Var<Scalar> b) {
  auto& g = detail::same_graph(a, b, "concat_rows");
  const auto& A = g.value(a.node);
  const auto& B = g.value(b.node);
  if (A.cols() != B.cols()) {
    throw Error("concat_rows: column counts differ: " + shape_str(A) + " vs " + shape_str(B));
  }
  // Row/col counts are hoisted before push(): the tape may reallocate and
  // invalidate the A/B references.
  const int ar = static_cast<int>(A.rows());
  const int br = static_cast<int>(B.rows());
  Mat<Scalar> y(ar + br, A.cols());
  y << A, B;
  auto out = g.push(std::move(y), g.tracked(a.node) || g.tracked(b.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node,
                   [ai = a.node, bi = b.node, oi = out.node, ar, br](Graph<Scalar>& g) {
                     const auto& G = g.grad(oi);
                     if (g.tracked(ai)) g.grad(ai) += G.topRows(ar);
                     if (g.tracked(bi)) g.grad(bi) += G.bottomRows(br);
                   });
  }
  return out;
}

template <class Scalar>
Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b) {
  auto& g = detail::same_graph(a, b, "concat_cols");
  const auto& A = g.value(a.node);
  const auto& B = g.value(b.node);
  if (A.rows() != B.rows()) {
    throw Error("concat_cols: row counts differ: " + shape_str(A) + " vs " + shape_str(B));
  }
  const int ac = static_cast<int>(A.cols());
  const int bc = static_cast<int>(B.cols());
  Mat<Scalar> y(A.rows(), ac + bc);
  y << A, B;
  auto out = g.push(std::move(y), g.tracked(a.node) || g.tracked(b.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node,
                   [ai = a.node, bi = b.node, oi = out.node, ac, bc](Graph<Scalar>& g) {
                     const auto& G = g.grad(oi);
                     if (g.tracked(ai)) g.grad(ai) += G.leftCols(ac);
                     if (g.tracked(bi)) g.grad(bi) += G.rightCols(bc);
                   });
  }
  return out;
}

template <class Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, int start, int count) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  if (start < 0 || count < 0 || start + count > A.rows()) {
    throw Error("slice_rows: rows [" + std::to_string(start) + ", " +
                std::to_string(start + count) + ") out of " + shape_str(A));
  }
  auto out = g.push(A.middleRows(start, count), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node, start, count](Graph<Scalar>& g) {
      if (g.tracked(ai)) g.grad(ai).middleRows(start, count) += g.grad(oi);
    });
  }
  return out;
}

template <class Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, int start, int count) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  if (start < 0 || count < 0 || start + count > A.cols()) {
    throw Error("slice_cols: cols [" + std::to_string(start) + ", " +
                std::to_string(start + count) + ") out of " + shape_str(A));
  }
  auto out = g.push(A.middleCols(start, count), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node, start, count](Graph<Scalar>& g) {
      if (g.tracked(ai)) g.grad(ai).middleCols(start, count) += g.grad(oi);
    });
  }
  return out;
}

// Gathers table rows by index (embedding lookup); repeated ids scatter-add.
template <class Scalar>
Var<Scalar> lookup_rows(Var<Scalar> table, std::vector<int> ids) {
  auto& g = *table.graph;
  const auto& T = g.value(table.node);
  for (int id : ids) {
    if (id < 0 || id >= T.rows()) {
      throw Error("lookup_rows: id " + std::to_string(id) + " out of " + shape_str(T));
    }
  }
  Mat<Scalar> y(static_cast<int>(ids.size()), T.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) y.row(static_cast<int>(k)) = T.row(ids[k]);
  auto out = g.push(std::move(y), g.tracked(table.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node,
                   [ti = table.node, oi = out.node, ids = std::move(ids)](Graph<Scalar>& g) {
                     if (!g.tracked(ti)) return;
                     const auto& G = g.grad(oi);
                     auto& GT = g.grad(ti);
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       GT.row(ids[k]) += G.row(static_cast<int>(k));
                     }
                   });
  }
  return out;
}

template <class Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  Mat<Scalar> y(A.rows(), A.cols());
  for (int i = 0; i < A.rows(); ++i) {
    const Scalar m = A.row(i).maxCoeff();
    auto e = (A.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      const auto& G = g.grad(oi);
      const auto& Y = g.value(oi);
      auto& GA = g.grad(ai);
      for (int i = 0; i < Y.rows(); ++i) {
        const Scalar dot = G.row(i).dot(Y.row(i));
        GA.row(i) += ((G.row(i).array() - dot) * Y.row(i).array()).matrix();
      }
    });
  }
  return out;
}

// Row-wise log(sum(exp(x))) as an n-by-1 column.
template <class Scalar>
Var<Scalar> log_sum_exp_rows(Var<Scalar> a) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  Mat<Scalar> y(A.rows(), 1);
  for (int i = 0; i < A.rows(); ++i) {
    const Scalar m = A.row(i).maxCoeff();
    y(i, 0) = m + std::log((A.row(i).array() - m).exp().sum());
  }
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      const auto& G = g.grad(oi);
      const auto& A = g.value(ai);
      const auto& L = g.value(oi);
      auto& GA = g.grad(ai);
      for (int i = 0; i < A.rows(); ++i) {
        GA.row(i) += (G(i, 0) * (A.row(i).array() - L(i, 0)).exp()).matrix();
      }
    });
  }
  return out;
}

// Rows scaled to unit Euclidean norm (cosine-similarity prep); rows with
// norm below 1e-12 are divided by that floor instead.
template <class Scalar>
Var<Scalar> l2_normalize_rows(Var<Scalar> a) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  constexpr Scalar kFloor = Scalar(1e-12);
  Mat<Scalar> y(A.rows(), A.cols());
  for (int i = 0; i < A.rows(); ++i) {
    y.row(i) = A.row(i) / std::max(A.row(i).norm(), kFloor);
  }
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      constexpr Scalar kFloor = Scalar(1e-12);
      const auto& G = g.grad(oi);
      const auto& A = g.value(ai);
      const auto& Y = g.value(oi);
      auto& GA = g.grad(ai);
      for (int i = 0; i < A.rows(); ++i) {
        const Scalar n = A.row(i).norm();
        if (n > kFloor) {
          const Scalar dot = G.row(i).dot(Y.row(i));
          GA.row(i) += (G.row(i) - dot * Y.row(i)) / n;
        } else {
          GA.row(i) += G.row(i) / kFloor;
        }
      }
    });
  }
  return out;
}

// Per-row standardization followed by a learned per-column gain and bias.
template <class Scalar>
Var<Scalar> layer_norm_rows(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias) {
  auto& g = detail::same_graph(x, gain, "layer_norm_rows");
  detail::same_graph(x, bias, "layer_norm_rows");
  const auto& A = g.value(x.node);
  const auto& W = g.value(gain.node);
  const auto& B = g.value(bias.node);
  if (W.rows() != 1 || W.cols() != A.cols() || B.rows() != 1 || B.cols() != A.cols()) {
    throw Error("layer_norm_rows: gain/bias must be 1x" + std::to_string(A.cols()) + ", got " +
                shape_str(W) + " and " + shape_str(B));
  }
  constexpr Scalar kEps = Scalar(1e-5);
  Mat<Scalar> y(A.rows(), A.cols());
  for (int i = 0; i < A.rows(); ++i) {
    const Scalar mu = A.row(i).mean();
    const Scalar var = (A.row(i).array() - mu).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + kEps);
    y.row(i) = (((A.row(i).array() - mu) * inv) * W.row(0).array() + B.row(0).array()).matrix();
  }
  const bool track = g.tracked(x.node) || g.tracked(gain.node) || g.tracked(bias.node);
  auto out = g.push(std::move(y), track, nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [xi = x.node, wi = gain.node, bi = bias.node,
                              oi = out.node](Graph<Scalar>& g) {
      const auto& G = g.grad(oi);
      const auto& A = g.value(xi);
      const auto& W = g.value(wi);
      const Scalar n = static_cast<Scalar>(A.cols());
      for (int i = 0; i < A.rows(); ++i) {
        const Scalar mu = A.row(i).mean();
        const Scalar var = (A.row(i).array() - mu).square().mean();
        const Scalar inv = Scalar(1) / std::sqrt(var + kEps);
        const auto xhat = ((A.row(i).array() - mu) * inv).eval();
        const auto dy = G.row(i).array();
        if (g.tracked(wi)) g.grad(wi).row(0) += (dy * xhat).matrix();
        if (g.tracked(bi)) g.grad(bi).row(0) += G.row(i);
        if (g.tracked(xi)) {
          const auto dxhat = (dy * W.row(0).array()).eval();
          const Scalar s1 = dxhat.sum();
          const Scalar s2 = (dxhat * xhat).sum();
          g.grad(xi).row(i) += ((dxhat - (s1 + xhat * s2) / n) * inv).matrix();
        }
      }
    });
  }
  return out;
}

// Exact Gaussian-CDF formulation: x * Phi(x).
template <class Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  auto cdf = [inv_sqrt2](Scalar v) { return Scalar(0.5) * std::erfc(-v * inv_sqrt2); };
  Mat<Scalar> y = A.unaryExpr([&](Scalar v) { return v * cdf(v); });
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node, cdf](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      const auto& A = g.value(ai);
      const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
      auto slope = A.unaryExpr([&](Scalar v) {
        return cdf(v) + v * inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
      });
      g.grad(ai) += g.grad(oi).cwiseProduct(slope);
    });
  }
  return out;
}

// Inverted dropout: keeps each element with probability 1-p and rescales by
// 1/(1-p); p = 0 is the identity (no node added).  Mask order is row-major
// over the matrix, drawn from the caller's engine.
template <class Scalar>
Var<Scalar> dropout(Var<Scalar> a, double p, std::mt19937_64& rng) {
  if (p == 0.0) return a;
  if (p < 0.0 || p >= 1.0) throw Error("dropout: probability must be in [0, 1)");
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  Mat<Scalar> mask(A.rows(), A.cols());
  for (int i = 0; i < A.rows(); ++i) {
    for (int j = 0; j < A.cols(); ++j) {
      mask(i, j) = uniform01(rng) >= p ? keep_scale : Scalar(0);
    }
  }
  auto out = g.push(A.cwiseProduct(mask), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node, mask = std::move(mask)](Graph<Scalar>& g) {
      if (g.tracked(ai)) g.grad(ai) += g.grad(oi).cwiseProduct(mask);
    });
  }
  return out;
}

// Replaces elements where mask is true with a constant; gradient is blocked
// there.
template <class Scalar>
Var<Scalar> masked_fill(Var<Scalar> a, const BoolMat& mask, Scalar fill) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  if (mask.rows() != A.rows() || mask.cols() != A.cols()) {
    throw Error("masked_fill: mask shape " + shape_str(mask.rows(), mask.cols()) +
                " does not match " + shape_str(A));
  }
  Mat<Scalar> y = mask.select(Mat<Scalar>::Constant(A.rows(), A.cols(), fill), A);
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node, mask](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      const auto& G = g.grad(oi);
      g.grad(ai) += mask.select(Mat<Scalar>::Zero(G.rows(), G.cols()), G);
    });
  }
  return out;
}

template <class Scalar>
Var<Scalar> colwise_mean(Var<Scalar> a) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  if (A.rows() == 0) throw Error("colwise_mean: empty input");
  Mat<Scalar> y = A.colwise().mean();
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      auto& GA = g.grad(ai);
      GA.rowwise() += (g.grad(oi).row(0) / static_cast<Scalar>(GA.rows()));
    });
  }
  return out;
}

template <class Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  auto& g = *a.graph;
  Mat<Scalar> y(1, 1);
  y(0, 0) = g.value(a.node).sum();
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node](Graph<Scalar>& g) {
      if (g.tracked(ai)) g.grad(ai).array() += g.grad(oi)(0, 0);
    });
  }
  return out;
}

template <class Scalar>
Var<Scalar> mean_all(Var<Scalar> a) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  if (A.size() == 0) throw Error("mean_all: empty input");
  Mat<Scalar> y(1, 1);
  y(0, 0) = A.mean();
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      auto& GA = g.grad(ai);
      GA.array() += g.grad(oi)(0, 0) / static_cast<Scalar>(GA.size());
    });
  }
  return out;
}

// Picks elements (rows[k], cols[k]) into a k-by-1 column.
template <class Scalar>
Var<Scalar> select_elements(Var<Scalar> a, std::vector<int> rows, std::vector<int> cols) {
  auto& g = *a.graph;
  const auto& A = g.value(a.node);
  if (rows.size() != cols.size()) {
    throw Error("select_elements: index lists differ in length");
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= A.rows() || cols[k] < 0 || cols[k] >= A.cols()) {
      throw Error("select_elements: index (" + std::to_string(rows[k]) + ", " +
                  std::to_string(cols[k]) + ") out of " + shape_str(A));
    }
  }
  Mat<Scalar> y(static_cast<int>(rows.size()), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) y(static_cast<int>(k), 0) = A(rows[k], cols[k]);
  auto out = g.push(std::move(y), g.tracked(a.node), nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [ai = a.node, oi = out.node, rows = std::move(rows),
                              cols = std::move(cols)](Graph<Scalar>& g) {
      if (!g.tracked(ai)) return;
      const auto& G = g.grad(oi);
      auto& GA = g.grad(ai);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        GA(rows[k], cols[k]) += G(static_cast<int>(k), 0);
      }
    });
  }
  return out;
}

// Mean token-level cross entropy between logits rows and integer targets.
// Rows whose target equals ignore_id contribute exactly zero loss and zero
// gradient; if every row is ignored the loss is 0.
template <class Scalar>
Var<Scalar> cross_entropy_with_logits(Var<Scalar> logits, std::vector<int> targets,
                                      int ignore_id) {
  auto& g = *logits.graph;
  const auto& A = g.value(logits.node);
  if (static_cast<Eigen::Index>(targets.size()) != A.rows()) {
    throw Error("cross_entropy_with_logits: " + std::to_string(targets.size()) +
                " targets for " + shape_str(A));
  }
  int counted = 0;
  Scalar total = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == ignore_id) continue;
    if (targets[t] < 0 || targets[t] >= A.cols()) {
      throw Error("cross_entropy_with_logits: target " + std::to_string(targets[t]) +
                  " out of " + shape_str(A));
    }
    const int i = static_cast<int>(t);
    const Scalar m = A.row(i).maxCoeff();
    const Scalar lse = m + std::log((A.row(i).array() - m).exp().sum());
    total += lse - A(i, targets[t]);
    ++counted;
  }
  Mat<Scalar> y(1, 1);
  y(0, 0) = counted > 0 ? total / static_cast<Scalar>(counted) : Scalar(0);
  auto out = g.push(std::move(y), g.tracked(logits.node) && counted > 0, nullptr);
  if (g.tracked(out.node)) {
    g.set_backward(out.node, [li = logits.node, oi = out.node, targets = std::move(targets),
                              ignore_id, counted](Graph<Scalar>& g) {
      if (!g.tracked(li)) return;
      const Scalar w = g.grad(oi)(0, 0) / static_cast<Scalar>(counted);
      const auto& A = g.value(li);
      auto& GA = g.grad(li);
      for (std::size_t t = 0; t < targets.size(); ++t) {
        if (targets[t] == ignore_id) continue;
        const int i = static_cast<int>(t);
        const Scalar m = A.row(i).maxCoeff();
        const auto e = (A.row(i).array() - m).exp().eval();
        GA.row(i) += (w * (e / e.sum())).matrix();
        GA(i, targets[t]) -= w;
      }
    });
  }
  return out;
}

}  // namespace themegen
