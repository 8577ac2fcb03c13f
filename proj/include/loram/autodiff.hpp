// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loram/tensor.hpp"

namespace loram {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
template <typename Scalar>
class Var {
 public:
  using Mat = Matrix<Scalar>;

  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Mat& value() const { return tape_->value(id_); }
  /// Gradient after backward(); 0×0 if no gradient reached this node.
  const Mat& grad() const { return tape_->grad(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed operations. Rebuilt for every forward pass;
/// backward() may be called once.
///
/// In checked mode (the default) every recorded value is scanned and a
/// NumericalError is raised on the first NaN/Inf.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, const Mat& grad_out)>;

  explicit Tape(bool checked = true) : checked_(checked) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Mat value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr, "leaf");
  }

  /// Records an operation output. The node requires grad iff any input does;
  /// otherwise the backward function is dropped.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn,
                     const char* op) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw std::logic_error(std::string(op) + ": input from another tape");
      if (requires_grad(in.id())) needs = true;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, op);
  }

  /// Adds `g` into the gradient of node `id` (no-op for constants).
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  void backward(const Var<Scalar>& loss) {
    if (consumed_) throw std::logic_error("backward: tape already consumed; re-run forward");
    if (&loss.tape() != this) throw std::logic_error("backward: loss belongs to another tape");
    const Mat& v = value(loss.id());
    if (v.rows() != 1 || v.cols() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(v));
    }
    consumed_ = true;
    if (!requires_grad(loss.id())) return;
    accumulate(loss.id(), Mat::Ones(1, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      ++visited_;
      n.backward(*this, n.grad);
    }
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  std::size_t size() const { return nodes_.size(); }
  /// Number of operation backward functions executed by backward().
  std::size_t visited() const { return visited_; }
  bool consumed() const { return consumed_; }
  bool checked() const { return checked_; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, BackwardFn fn, const char* op) {
    if (consumed_) throw std::logic_error("tape already consumed; create a new tape");
    if (checked_ && !value.allFinite()) {
      throw NumericalError(std::string("non-finite value produced by ") + op);
    }
    nodes_.push_back(Node{std::move(value), Mat{}, requires_grad, false, std::move(fn)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable references across push_back
  bool checked_;
  bool consumed_ = false;
  std::size_t visited_ = 0;
};

namespace detail {

template <typename Scalar>
void same_tape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations. Each validates shapes before touching data.

/// a·b
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.value()) + " · " +
                     shape_str(b.value()));
  }
  Matrix<Scalar> out = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
      },
      "matmul");
}

/// a·bᵀ; the linear-layer primitive for [out×in] weights.
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a.value()) + " · " +
                     shape_str(b.value()) + "ᵀ");
  }
  Matrix<Scalar> out = a.value() * b.value().transpose();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
        if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
      },
      "matmul_nt");
}

template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b, "hadamard");
  require_same_shape(a.value(), b.value(), "hadamard");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
      },
      "hadamard");
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Matrix<Scalar> out = a.value() + b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
      },
      "add");
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Matrix<Scalar> out = a.value() - b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
      },
      "sub");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  const auto ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, s](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(ia, g * s); }, "scale");
}

/// x·sigmoid(x), elementwise.
template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return x * detail::sigmoid(x); });
  const auto ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        Matrix<Scalar> d = t.value(ia).unaryExpr([](Scalar x) {
          const Scalar s = detail::sigmoid(x);
          return s * (Scalar(1) + x * (Scalar(1) - s));
        });
        t.accumulate(ia, g.cwiseProduct(d));
      },
      "silu");
}

/// x ∘ r broadcast over rows: x is [n×d], r is [1×d].
template <typename Scalar>
Var<Scalar> mul_broadcast_rows(const Var<Scalar>& x, const Var<Scalar>& r) {
  detail::same_tape(x, r, "mul_broadcast_rows");
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("mul_broadcast_rows: row vector " + shape_str(r.value()) +
                     " does not broadcast over " + shape_str(x.value()));
  }
  Matrix<Scalar> out = x.value().array().rowwise() * r.value().row(0).array();
  const auto ix = x.id(), ir = r.id();
  return x.tape().record(
      std::move(out), {x, r},
      [ix, ir](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.requires_grad(ix)) {
          t.accumulate(ix, (g.array().rowwise() * t.value(ir).row(0).array()).matrix());
        }
        if (t.requires_grad(ir)) {
          t.accumulate(ir, g.cwiseProduct(t.value(ix)).colwise().sum());
        }
      },
      "mul_broadcast_rows");
}

/// Per row: x / sqrt(mean(x²) + eps) ∘ gain.
template <typename Scalar>
Var<Scalar> rmsnorm(const Var<Scalar>& x, const Var<Scalar>& gain, Scalar eps) {
  detail::same_tape(x, gain, "rmsnorm");
  if (gain.rows() != 1 || gain.cols() != x.cols() || x.cols() < 1) {
    throw ShapeError("rmsnorm: gain " + shape_str(gain.value()) + " does not match " +
                     shape_str(x.value()));
  }
  if (!(eps > Scalar(0))) throw ShapeError("rmsnorm: eps must be positive");
  const auto& xv = x.value();
  const Index d = xv.cols();
  auto inv_rms = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(xv.rows());
  for (Index i = 0; i < xv.rows(); ++i) {
    (*inv_rms)(i) = Scalar(1) / std::sqrt(xv.row(i).squaredNorm() / Scalar(d) + eps);
  }
  Matrix<Scalar> normed = inv_rms->asDiagonal() * xv;
  Matrix<Scalar> out = normed.array().rowwise() * gain.value().row(0).array();
  const auto ix = x.id(), ig = gain.id();
  return x.tape().record(
      std::move(out), {x, gain},
      [ix, ig, inv_rms, d](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& xv = t.value(ix);
        Matrix<Scalar> xhat = inv_rms->asDiagonal() * xv;
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ix)) {
          Matrix<Scalar> gh = g.array().rowwise() * t.value(ig).row(0).array();
          Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots =
              gh.cwiseProduct(xhat).rowwise().sum() / Scalar(d);
          Matrix<Scalar> gx = gh - dots.asDiagonal() * xhat;
          t.accumulate(ix, inv_rms->asDiagonal() * gx);
        }
      },
      "rmsnorm");
}

/// Gathers rows of `table` by token id.
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const std::int32_t> ids) {
  const auto& tv = table.value();
  Matrix<Scalar> out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw ShapeError("embedding: token id " + std::to_string(ids[i]) + " outside vocab of " +
                       std::to_string(tv.rows()));
    }
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  const auto it = table.id();
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return table.tape().record(
      std::move(out), {table},
      [it, kept = std::move(kept)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        Matrix<Scalar> gt = Matrix<Scalar>::Zero(t.value(it).rows(), t.value(it).cols());
        for (std::size_t i = 0; i < kept.size(); ++i) gt.row(kept[i]) += g.row(static_cast<Index>(i));
        t.accumulate(it, gt);
      },
      "embedding");
}

/// Multi-head causal self-attention over a batch of equal-length sequences.
///
/// q, k, v are [B·T × H·hd] with row b·T+i holding position i of sequence b and
/// column block h holding head h. Scores are scaled by 1/sqrt(hd); position i
/// attends to positions 0..i.
template <typename Scalar>
Var<Scalar> causal_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                             Index n_heads, Index seq_len) {
  detail::same_tape(q, k, "causal_attention");
  detail::same_tape(q, v, "causal_attention");
  require_same_shape(q.value(), k.value(), "causal_attention(q,k)");
  require_same_shape(q.value(), v.value(), "causal_attention(q,v)");
  if (n_heads < 1 || q.cols() % n_heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(q.cols()) +
                     " not divisible into " + std::to_string(n_heads) + " heads");
  }
  if (seq_len < 1 || q.rows() % seq_len != 0) {
    throw ShapeError("causal_attention: rows not a multiple of seq_len");
  }
  const Index hd = q.cols() / n_heads;
  const Index batch = q.rows() / seq_len;
  const Scalar sc = Scalar(1) / std::sqrt(Scalar(hd));
  // probs[b * n_heads + h] is the T×T attention matrix.
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(
      static_cast<std::size_t>(batch * n_heads));
  Matrix<Scalar> out(q.rows(), q.cols());
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < n_heads; ++h) {
      auto qb = qv.block(b * seq_len, h * hd, seq_len, hd);
      auto kb = kv.block(b * seq_len, h * hd, seq_len, hd);
      auto vb = vv.block(b * seq_len, h * hd, seq_len, hd);
      Matrix<Scalar> p = (qb * kb.transpose()) * sc;
      for (Index i = 0; i < seq_len; ++i) {
        const Scalar mx = p.row(i).head(i + 1).maxCoeff();
        Scalar denom = 0;
        for (Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          denom += p(i, j);
        }
        p.row(i).head(i + 1) /= denom;
        p.row(i).tail(seq_len - i - 1).setZero();
      }
      out.block(b * seq_len, h * hd, seq_len, hd).noalias() = p * vb;
      (*probs)[static_cast<std::size_t>(b * n_heads + h)] = std::move(p);
    }
  }
  const auto iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record(
      std::move(out), {q, k, v},
      [iq, ik, iv, probs, n_heads, seq_len, hd, batch, sc](Tape<Scalar>& t,
                                                           const Matrix<Scalar>& g) {
        const auto& qv = t.value(iq);
        const auto& kv = t.value(ik);
        const auto& vv = t.value(iv);
        Matrix<Scalar> gq = Matrix<Scalar>::Zero(qv.rows(), qv.cols());
        Matrix<Scalar> gk = Matrix<Scalar>::Zero(qv.rows(), qv.cols());
        Matrix<Scalar> gv = Matrix<Scalar>::Zero(qv.rows(), qv.cols());
        for (Index b = 0; b < batch; ++b) {
          for (Index h = 0; h < n_heads; ++h) {
            const auto& p = (*probs)[static_cast<std::size_t>(b * n_heads + h)];
            auto go = g.block(b * seq_len, h * hd, seq_len, hd);
            auto qb = qv.block(b * seq_len, h * hd, seq_len, hd);
            auto kb = kv.block(b * seq_len, h * hd, seq_len, hd);
            auto vb = vv.block(b * seq_len, h * hd, seq_len, hd);
            gv.block(b * seq_len, h * hd, seq_len, hd).noalias() = p.transpose() * go;
            Matrix<Scalar> gp = go * vb.transpose();
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = p.cwiseProduct(gp).rowwise().sum();
            Matrix<Scalar> gs = p.cwiseProduct(gp - rowdot.replicate(1, seq_len));
            gq.block(b * seq_len, h * hd, seq_len, hd).noalias() = (gs * kb) * sc;
            gk.block(b * seq_len, h * hd, seq_len, hd).noalias() = (gs.transpose() * qb) * sc;
          }
        }
        t.accumulate(iq, gq);
        t.accumulate(ik, gk);
        t.accumulate(iv, gv);
      },
      "causal_attention");
}

/// Mean over rows of -log softmax(logits)[target], max-subtracted. Returns 1×1.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const std::int32_t> targets) {
  const auto& lv = logits.value();
  if (lv.rows() < 1 || static_cast<std::size_t>(lv.rows()) != targets.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(lv));
  }
  auto probs = std::make_shared<Matrix<Scalar>>(lv.rows(), lv.cols());
  double total = 0;
  for (Index i = 0; i < lv.rows(); ++i) {
    const auto tgt = targets[static_cast<std::size_t>(i)];
    if (tgt < 0 || tgt >= lv.cols()) {
      throw ShapeError("cross_entropy: target id " + std::to_string(tgt) + " outside vocab of " +
                       std::to_string(lv.cols()));
    }
    const Scalar mx = lv.row(i).maxCoeff();
    auto e = (lv.row(i).array() - mx).exp();
    const Scalar sum = e.sum();
    probs->row(i) = e / sum;
    total += std::log(static_cast<double>(sum)) - static_cast<double>(lv(i, tgt) - mx);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total / static_cast<double>(lv.rows()));
  const auto il = logits.id();
  std::vector<std::int32_t> kept(targets.begin(), targets.end());
  return logits.tape().record(
      std::move(out), {logits},
      [il, probs, kept = std::move(kept)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        Matrix<Scalar> gl = *probs;
        for (std::size_t i = 0; i < kept.size(); ++i) gl(static_cast<Index>(i), kept[i]) -= Scalar(1);
        t.accumulate(il, gl * (g(0, 0) / Scalar(kept.size())));
      },
      "cross_entropy");
}

/// Sum of all entries, as a 1×1.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const auto ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        t.accumulate(ia, Matrix<Scalar>::Constant(t.value(ia).rows(), t.value(ia).cols(), g(0, 0)));
      },
      "sum");
}

}  // namespace loram
