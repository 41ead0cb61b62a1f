#pragma once

// Reverse-mode differentiation over whole matrices.
//
// A Tape records every operation of one forward pass. Values live in the
// nodes; backward() walks the nodes in reverse and each op accumulates into
// the gradients of its inputs. Parameters enter as leaves that borrow the
// caller's storage, so building a graph copies no weights.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include <unsupported/Eigen/SpecialFunctions>

#include "alvi/error.hpp"
#include "alvi/tensor.hpp"

namespace alvi::ad {

using Index = Eigen::Index;

template <class S>
class Tape {
 public:
  using M = Mat<S>;

  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
  };

  explicit Tape(bool record_grad = true) : record_(record_grad) { nodes_.reserve(512); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const M& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ext ? *n.ext : n.val;
  }

  /// Gradient of the backward() seed with respect to v; zero-sized if v took no part.
  const M& grad(Var v) const { return nodes_[v.id].grad; }

  /// Leaf that copies its value.
  Var constant(M v) { return push(std::move(v), false, {}); }

  /// Leaf that borrows its value; gradients flow into grad(var).
  Var param(const M& storage) {
    Node n;
    n.ext = &storage;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  Var matmul(Var a, Var b) {
    M out;
    out.noalias() = value(a) * value(b);
    return push(std::move(out), any_grad(a, b), [a, b](Tape& t, const M& g) {
      if (t.wants(a)) t.acc(a).noalias() += g * t.value(b).transpose();
      if (t.wants(b)) t.acc(b).noalias() += t.value(a).transpose() * g;
    });
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    M out;
    out.noalias() = value(a) * value(b).transpose();
    return push(std::move(out), any_grad(a, b), [a, b](Tape& t, const M& g) {
      if (t.wants(a)) t.acc(a).noalias() += g * t.value(b);
      if (t.wants(b)) t.acc(b).noalias() += g.transpose() * t.value(a);
    });
  }

  Var add(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), ErrorCode::shape_mismatch, "add: shape mismatch");
    M out = value(a) + value(b);
    return push(std::move(out), any_grad(a, b), [a, b](Tape& t, const M& g) {
      if (t.wants(a)) t.acc(a) += g;
      if (t.wants(b)) t.acc(b) += g;
    });
  }

  /// a + broadcast of the single row b.
  Var add_row(Var a, Var b) {
    require(value(b).rows() == 1 && value(b).cols() == value(a).cols(), ErrorCode::shape_mismatch, "add_row: shape mismatch");
    M out = value(a).rowwise() + value(b).row(0);
    return push(std::move(out), any_grad(a, b), [a, b](Tape& t, const M& g) {
      if (t.wants(a)) t.acc(a) += g;
      if (t.wants(b)) t.acc(b) += g.colwise().sum();
    });
  }

  /// x W + b: the usual affine layer.
  Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

  Var scale(Var a, S s) {
    M out = value(a) * s;
    return push(std::move(out), wants(a), [a, s](Tape& t, const M& g) { t.acc(a) += g * s; });
  }

  /// Per-row layer normalization with learned gain and bias rows.
  Var layer_norm(Var x, Var gain, Var bias, S eps = S(1e-5)) {
    const M& X = value(x);
    const Index n = X.rows(), d = X.cols();
    M xhat(n, d);
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(n);
    for (Index i = 0; i < n; ++i) {
      const S mean = X.row(i).mean();
      const S var = (X.row(i).array() - mean).square().mean();
      inv_std(i) = S(1) / std::sqrt(var + eps);
      xhat.row(i) = (X.row(i).array() - mean) * inv_std(i);
    }
    M out = (xhat.array().rowwise() * value(gain).row(0).array()).rowwise() + value(bias).row(0).array();
    return push(std::move(out), any_grad(x, gain, bias),
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const M& g) {
                  const Index d = g.cols();
                  if (t.wants(gain)) t.acc(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
                  if (t.wants(bias)) t.acc(bias) += g.colwise().sum();
                  if (t.wants(x)) {
                    M gx = g.array().rowwise() * t.value(gain).row(0).array();
                    M& ax = t.acc(x);
                    for (Index i = 0; i < g.rows(); ++i) {
                      const S m1 = gx.row(i).mean();
                      const S m2 = (gx.row(i).array() * xhat.row(i).array()).mean();
                      ax.row(i).array() += inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
                    }
                    (void)d;
                  }
                });
  }

  /// Exact (erf) GELU.
  Var gelu(Var x) {
    const auto X = value(x).array();
    const S inv_sqrt2 = S(1) / std::sqrt(S(2));
    M out = (S(0.5) * X * (S(1) + (X * inv_sqrt2).erf())).matrix();
    return push(std::move(out), wants(x), [x, inv_sqrt2](Tape& t, const M& g) {
      const auto X = t.value(x).array();
      const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * std::numbers::pi_v<S>);
      const auto cdf = S(0.5) * (S(1) + (X * inv_sqrt2).erf());
      const auto pdf = inv_sqrt2pi * (S(-0.5) * X.square()).exp();
      t.acc(x).array() += g.array() * (cdf + X * pdf);
    });
  }

  /// Row-wise softmax.
  Var softmax_rows(Var x) {
    const M& X = value(x);
    M out(X.rows(), X.cols());
    for (Index i = 0; i < X.rows(); ++i) {
      const S mx = X.row(i).maxCoeff();
      out.row(i) = (X.row(i).array() - mx).exp();
      out.row(i) /= out.row(i).sum();
    }
    const std::size_t self = nodes_.size();
    return push(std::move(out), wants(x), [x, self](Tape& t, const M& g) {
      const M& P = t.nodes_[self].val;
      M& ax = t.acc(x);
      for (Index i = 0; i < P.rows(); ++i) {
        const S dot = (g.row(i).array() * P.row(i).array()).sum();
        ax.row(i).array() += P.row(i).array() * (g.row(i).array() - dot);
      }
    });
  }

  Var col_slice(Var x, Index c0, Index width) {
    M out = value(x).middleCols(c0, width);
    return push(std::move(out), wants(x), [x, c0, width](Tape& t, const M& g) { t.acc(x).middleCols(c0, width) += g; });
  }

  Var hconcat(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorCode::invalid_argument, "hconcat: no inputs");
    const Index rows = value(parts[0]).rows();
    Index cols = 0;
    bool g = false;
    for (auto p : parts) {
      require(value(p).rows() == rows, ErrorCode::shape_mismatch, "hconcat: row mismatch");
      cols += value(p).cols();
      g = g || wants(p);
    }
    M out(rows, cols);
    Index c = 0;
    for (auto p : parts) {
      out.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return push(std::move(out), g, [parts](Tape& t, const M& g) {
      Index c = 0;
      for (auto p : parts) {
        const Index w = t.value(p).cols();
        if (t.wants(p)) t.acc(p) += g.middleCols(c, w);
        c += w;
      }
    });
  }

  /// out.row(k) = x.row(rows[k]); rows may repeat.
  Var gather_rows(Var x, std::vector<Index> rows) {
    const M& X = value(x);
    M out(static_cast<Index>(rows.size()), X.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = X.row(rows[k]);
    return push(std::move(out), wants(x), [x, rows = std::move(rows)](Tape& t, const M& g) {
      M& ax = t.acc(x);
      for (std::size_t k = 0; k < rows.size(); ++k) ax.row(rows[k]) += g.row(static_cast<Index>(k));
    });
  }

  /// Sequence of length n whose rows at positions[k] come from visible.row(k)
  /// and whose remaining rows are copies of the single row fill.
  Var scatter_rows(Var visible, Var fill, std::vector<Index> positions, Index n) {
    const M& V = value(visible);
    const M& F = value(fill);
    require(V.rows() == static_cast<Index>(positions.size()) && F.rows() == 1 && F.cols() == V.cols(),
            ErrorCode::shape_mismatch, "scatter_rows: shape mismatch");
    M out = F.replicate(n, 1);
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    for (std::size_t k = 0; k < positions.size(); ++k) {
      out.row(positions[k]) = V.row(static_cast<Index>(k));
      taken[static_cast<std::size_t>(positions[k])] = 1;
    }
    return push(std::move(out), any_grad(visible, fill),
                [visible, fill, positions = std::move(positions), taken = std::move(taken)](Tape& t, const M& g) {
                  if (t.wants(visible)) {
                    M& av = t.acc(visible);
                    for (std::size_t k = 0; k < positions.size(); ++k) av.row(static_cast<Index>(k)) += g.row(positions[k]);
                  }
                  if (t.wants(fill)) {
                    M& af = t.acc(fill);
                    for (Index i = 0; i < g.rows(); ++i)
                      if (!taken[static_cast<std::size_t>(i)]) af.row(0) += g.row(i);
                  }
                });
  }

  /// Mean squared error between pred.row(r) and target.row(r) over the listed rows.
  Var mse_rows(Var pred, const M& target, std::vector<Index> rows) {
    const M& P = value(pred);
    require(P.rows() == target.rows() && P.cols() == target.cols(), ErrorCode::shape_mismatch, "mse_rows: shape mismatch");
    require(!rows.empty(), ErrorCode::invalid_argument, "mse_rows: no rows");
    const S count = static_cast<S>(rows.size()) * static_cast<S>(P.cols());
    S sum = 0;
    for (auto r : rows) sum += (P.row(r) - target.row(r)).squaredNorm();
    M out(1, 1);
    out(0, 0) = sum / count;
    return push(std::move(out), wants(pred), [pred, target, rows = std::move(rows), count](Tape& t, const M& g) {
      const M& P = t.value(pred);
      M& ap = t.acc(pred);
      for (auto r : rows) ap.row(r) += (S(2) * g(0, 0) / count) * (P.row(r) - target.row(r));
    });
  }

  /// Mean absolute error over all entries.
  Var l1_mean(Var pred, const M& target) {
    const M& P = value(pred);
    require(P.rows() == target.rows() && P.cols() == target.cols(), ErrorCode::shape_mismatch, "l1_mean: shape mismatch");
    const S count = static_cast<S>(P.size());
    M out(1, 1);
    out(0, 0) = (P - target).cwiseAbs().sum() / count;
    return push(std::move(out), wants(pred), [pred, target, count](Tape& t, const M& g) {
      const M& P = t.value(pred);
      t.acc(pred).array() += (g(0, 0) / count) * (P - target).array().sign();
    });
  }

  /// Accumulate d(seed * out)/d(every node). out must be 1x1.
  void backward(Var out, S seed = S(1)) {
    require(record_, ErrorCode::invalid_argument, "backward on a tape built without gradients");
    require(value(out).size() == 1, ErrorCode::shape_mismatch, "backward needs a scalar output");
    acc(out)(0, 0) += seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.size() == 0) continue;
      n.back(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  using Backward = std::function<void(Tape&, const M&)>;

  struct Node {
    M val;
    const M* ext = nullptr;
    M grad;
    Backward back;
    bool needs_grad = false;
  };

  bool wants(Var v) const { return nodes_[v.id].needs_grad; }
  template <class... V>
  bool any_grad(V... v) const {
    return record_ && (wants(v) || ...);
  }

  M& acc(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      const M& val = value(v);
      n.grad = M::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  Var push(M val, bool needs_grad, Backward back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad && record_;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace alvi::ad
