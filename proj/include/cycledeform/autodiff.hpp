#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every executed op together with a closure that pushes the
// output gradient back to the op's inputs. Nodes are appended in execution
// order, so a single reverse sweep is a valid topological traversal.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cycledeform/errors.hpp"

namespace cycledeform::ad {

template <typename T>
using Tensor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = std::vector<std::uint32_t>;

template <typename T>
std::vector<std::size_t> shape_of(const Tensor<T>& t) {
  return {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())};
}

/// Log of the discrete choices taken by piecewise ops (ReLU masks, max-pool
/// argmaxes, nearest-neighbor projections). Recording one forward pass and
/// replaying it on later passes evaluates the same smooth piece, which is
/// what a finite-difference check of a piecewise-smooth function needs.
class DecisionLog {
 public:
  enum class Mode { Record, Replay };

  void set_mode(Mode m) {
    mode_ = m;
    cursor_ = 0;
    if (m == Mode::Record) entries_.clear();
  }
  Mode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return entries_.size(); }

  // Record: keeps a copy of `fresh`. Replay: replaces `fresh` with the entry
  // recorded at the same position.
  void exchange(Index& fresh) {
    if (mode_ == Mode::Record) {
      entries_.push_back(fresh);
      return;
    }
    if (cursor_ >= entries_.size() || entries_[cursor_].size() != fresh.size())
      throw ShapeMismatch("decision replay diverged from the recorded pass");
    fresh = entries_[cursor_++];
  }

 private:
  Mode mode_ = Mode::Record;
  std::vector<Index> entries_;
  std::size_t cursor_ = 0;
};

// x * 0 is NaN exactly for infinite or NaN x, so the sum is zero iff every
// entry is finite. Vectorizes, unlike a per-entry classification.
template <typename T>
bool all_finite(const Tensor<T>& x) {
  return (x.array() * T(0)).sum() == T(0);
}

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Tensor<T>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  T scalar() const { return value()(0, 0); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }
  Var<T> parameter(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  /// Appends an op result. Non-finite values abort the pass.
  Var<T> record(Tensor<T> value, bool requires_grad, Backward backward, const char* op) {
    if (!all_finite(value)) throw NonFiniteValue(std::string("non-finite value produced by ") + op);
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulated at `id`; zeros if nothing flowed there.
  const Tensor<T>& grad(std::size_t id) {
    return grad_mut(id);
  }

  /// Adds `g` to the gradient of node `id`; the first contribution is
  /// assigned, which skips zero-filling large activations.
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.noalias() = g;
    else n.grad.noalias() += g;
  }

  Tensor<T>& grad_mut(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  /// Seeds d(loss)/d(loss) = 1 elementwise and sweeps the tape in reverse.
  void backward(const Var<T>& loss) {
    if (loss.id() >= nodes_.size()) throw IndexOutOfRange("loss node is not on this tape");
    grad_mut(loss.id()).setOnes();
    visits_ = 0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      ++visits_;
      if (n.backward) n.backward(*this, id);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t last_backward_visits() const noexcept { return visits_; }

  void attach(DecisionLog* log) noexcept { log_ = log; }
  DecisionLog* decisions() const noexcept { return log_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, std::move(backward), requires_grad});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
  DecisionLog* log_ = nullptr;
};

namespace detail {

template <typename T>
void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeMismatch(std::string(op) + ": " + what);
}

template <typename T>
std::string dims(const Var<T>& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

}  // namespace detail

/// Rows x_i -> W x_i + b. x: n x d_in, W: d_out x d_in, b: 1 x d_out.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require<T>(x.cols() == w.cols(), "linear", "input " + detail::dims(x) + " vs weight " + detail::dims(w));
  detail::require<T>(b.rows() == 1 && b.cols() == w.rows(), "linear", "bias " + detail::dims(b));
  Tape<T>& tape = x.tape();
  Tensor<T> y = x.value() * w.value().transpose();
  y.rowwise() += b.value().row(0);
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return tape.record(std::move(y), rg, [xi, wi, bi](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(xi)) t.accumulate(xi, gy * t.value(wi));
    if (t.requires_grad(wi)) t.accumulate(wi, gy.transpose() * t.value(xi));
    if (t.requires_grad(bi)) t.grad_mut(bi) += gy.colwise().sum();
  }, "linear");
}

/// Bias-free variant: rows x_i -> W x_i.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
  detail::require<T>(x.cols() == w.cols(), "linear", "input " + detail::dims(x) + " vs weight " + detail::dims(w));
  Tape<T>& tape = x.tape();
  Tensor<T> y = x.value() * w.value().transpose();
  const std::size_t xi = x.id(), wi = w.id();
  const bool rg = x.requires_grad() || w.requires_grad();
  return tape.record(std::move(y), rg, [xi, wi](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(xi)) t.accumulate(xi, gy * t.value(wi));
    if (t.requires_grad(wi)) t.accumulate(wi, gy.transpose() * t.value(xi));
  }, "linear");
}

/// Rows x_i -> s ⊙ x_i + b with s, b of shape 1 x d.
template <typename T>
Var<T> hadamard_affine(const Var<T>& x, const Var<T>& s, const Var<T>& b) {
  detail::require<T>(s.rows() == 1 && s.cols() == x.cols() && b.rows() == 1 && b.cols() == x.cols(),
                     "hadamard_affine", "x " + detail::dims(x) + ", s " + detail::dims(s) + ", b " + detail::dims(b));
  Tape<T>& tape = x.tape();
  Tensor<T> y = x.value();
  y.array().rowwise() *= s.value().array().row(0);
  y.rowwise() += b.value().row(0);
  const std::size_t xi = x.id(), si = s.id(), bi = b.id();
  const bool rg = x.requires_grad() || s.requires_grad() || b.requires_grad();
  return tape.record(std::move(y), rg, [xi, si, bi](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(xi)) t.accumulate(xi, (gy.array().rowwise() * t.value(si).array().row(0)).matrix());
    if (t.requires_grad(si)) t.grad_mut(si) += (gy.array() * t.value(xi).array()).matrix().colwise().sum();
    if (t.requires_grad(bi)) t.grad_mut(bi) += gy.colwise().sum();
  }, "hadamard_affine");
}

/// Elementwise max(x, 0); the derivative at 0 is taken as 0.
template <typename T>
Var<T> relu(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  const std::size_t xi = x.id();
  DecisionLog* log = tape.decisions();
  if (!log) {
    Tensor<T> y = x.value().cwiseMax(T(0));
    return tape.record(std::move(y), x.requires_grad(), [xi](Tape<T>& t, std::size_t self) {
      const Tensor<T>& gy = t.grad(self);
      t.accumulate(xi, (t.value(self).array() > T(0)).select(gy.array(), T(0)).matrix());
    }, "relu");
  }
  const Tensor<T>& xv = x.value();
  Index mask(static_cast<std::size_t>(xv.size()));
  for (Eigen::Index i = 0; i < xv.size(); ++i) mask[static_cast<std::size_t>(i)] = xv.data()[i] > T(0);
  log->exchange(mask);
  Tensor<T> m(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = mask[static_cast<std::size_t>(i)] ? T(1) : T(0);
  Tensor<T> y = xv.cwiseProduct(m);
  return tape.record(std::move(y), x.requires_grad(), [xi, m = std::move(m)](Tape<T>& t, std::size_t self) {
    t.grad_mut(xi) += t.grad(self).cwiseProduct(m);
  }, "relu");
}

template <typename T>
Var<T> tanh_act(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  Tensor<T> y = x.value().array().tanh().matrix();
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi](Tape<T>& t, std::size_t self) {
    const auto yv = t.value(self).array();
    t.grad_mut(xi).array() += t.grad(self).array() * (T(1) - yv * yv);
  }, "tanh");
}

namespace detail {

// First row attaining the column maximum.
template <typename Derived>
Index column_argmax(const Eigen::MatrixBase<Derived>& x) {
  Index arg(static_cast<std::size_t>(x.cols()), 0);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    auto best = x(0, j);
    for (Eigen::Index i = 1; i < x.rows(); ++i)
      if (x(i, j) > best) {
        best = x(i, j);
        arg[static_cast<std::size_t>(j)] = static_cast<std::uint32_t>(i);
      }
  }
  return arg;
}

}  // namespace detail

/// Columnwise max over rows: n x d -> 1 x d. Gradient goes to the first
/// argmax row of each column only.
template <typename T>
Var<T> max_pool_points(const Var<T>& x) {
  detail::require<T>(x.rows() >= 1, "max_pool_points", "needs at least one row");
  Tape<T>& tape = x.tape();
  const Tensor<T>& xv = x.value();
  Index arg = detail::column_argmax(xv);
  if (auto* log = tape.decisions()) log->exchange(arg);
  Tensor<T> y(1, xv.cols());
  for (Eigen::Index j = 0; j < xv.cols(); ++j) y(0, j) = xv(arg[static_cast<std::size_t>(j)], j);
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad_mut(xi);
    for (std::size_t j = 0; j < arg.size(); ++j) gx(arg[j], static_cast<Eigen::Index>(j)) += gy(0, static_cast<Eigen::Index>(j));
  }, "max_pool_points");
}

/// max_pool_points(linear(x, W, b)) as one op. The pooled gradient touches a
/// single row per output column, so the backward pass costs O(d_out * d_in)
/// instead of a dense product with a mostly-zero gradient.
template <typename T>
Var<T> max_pool_linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require<T>(x.cols() == w.cols() && x.rows() >= 1, "max_pool_linear",
                     "input " + detail::dims(x) + " vs weight " + detail::dims(w));
  detail::require<T>(b.rows() == 1 && b.cols() == w.rows(), "max_pool_linear", "bias " + detail::dims(b));
  Tape<T>& tape = x.tape();
  Tensor<T> z = x.value() * w.value().transpose();
  Index arg = detail::column_argmax(z);  // bias is constant per column, argmax unaffected
  if (auto* log = tape.decisions()) log->exchange(arg);
  Tensor<T> y(1, z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) y(0, j) = z(arg[static_cast<std::size_t>(j)], j) + b.value()(0, j);
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return tape.record(std::move(y), rg, [xi, wi, bi, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    const bool gx = t.requires_grad(xi), gw = t.requires_grad(wi), gb = t.requires_grad(bi);
    for (std::size_t j = 0; j < arg.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const T g = gy(0, jj);
      if (g == T(0)) continue;
      const auto r = static_cast<Eigen::Index>(arg[j]);
      if (gx) t.grad_mut(xi).row(r) += g * t.value(wi).row(jj);
      if (gw) t.grad_mut(wi).row(jj) += g * t.value(xi).row(r);
      if (gb) t.grad_mut(bi)(0, jj) += g;
    }
  }, "max_pool_linear");
}

/// Column-wise concatenation of tensors with equal row counts.
template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b) {
  detail::require<T>(a.rows() == b.rows(), "concat", detail::dims(a) + " vs " + detail::dims(b));
  Tape<T>& tape = a.tape();
  Tensor<T> y(a.rows(), a.cols() + b.cols());
  y.leftCols(a.cols()) = a.value();
  y.rightCols(b.cols()) = b.value();
  const std::size_t ai = a.id(), bi = b.id();
  const Eigen::Index ac = a.cols(), bc = b.cols();
  return tape.record(std::move(y), a.requires_grad() || b.requires_grad(),
                     [ai, bi, ac, bc](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& gy = t.grad(self);
                       if (t.requires_grad(ai)) t.grad_mut(ai) += gy.leftCols(ac);
                       if (t.requires_grad(bi)) t.grad_mut(bi) += gy.rightCols(bc);
                     }, "concat");
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols())
    throw IndexOutOfRange("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                          ") outside " + std::to_string(x.cols()) + " columns");
  Tape<T>& tape = x.tape();
  Tensor<T> y = x.value().middleCols(start, count);
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi, start, count](Tape<T>& t, std::size_t self) {
    t.grad_mut(xi).middleCols(start, count) += t.grad(self);
  }, "slice_cols");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require<T>(a.rows() == b.rows() && a.cols() == b.cols(), "add", detail::dims(a) + " vs " + detail::dims(b));
  Tape<T>& tape = a.tape();
  Tensor<T> y = a.value() + b.value();
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(std::move(y), a.requires_grad() || b.requires_grad(), [ai, bi](Tape<T>& t, std::size_t self) {
    if (t.requires_grad(ai)) t.grad_mut(ai) += t.grad(self);
    if (t.requires_grad(bi)) t.grad_mut(bi) += t.grad(self);
  }, "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require<T>(a.rows() == b.rows() && a.cols() == b.cols(), "sub", detail::dims(a) + " vs " + detail::dims(b));
  Tape<T>& tape = a.tape();
  Tensor<T> y = a.value() - b.value();
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(std::move(y), a.requires_grad() || b.requires_grad(), [ai, bi](Tape<T>& t, std::size_t self) {
    if (t.requires_grad(ai)) t.grad_mut(ai) += t.grad(self);
    if (t.requires_grad(bi)) t.grad_mut(bi) -= t.grad(self);
  }, "sub");
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tape<T>& tape = x.tape();
  Tensor<T> y = x.value() * factor;
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi, factor](Tape<T>& t, std::size_t self) {
    t.grad_mut(xi) += t.grad(self) * factor;
  }, "scale");
}

/// Sum of all entries, as a 1 x 1 tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  Tensor<T> y(1, 1);
  y(0, 0) = x.value().sum();
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi](Tape<T>& t, std::size_t self) {
    t.grad_mut(xi).array() += t.grad(self)(0, 0);
  }, "sum");
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  detail::require<T>(x.value().size() > 0, "mean", "empty tensor");
  Tape<T>& tape = x.tape();
  const T inv = T(1) / static_cast<T>(x.value().size());
  Tensor<T> y(1, 1);
  y(0, 0) = x.value().sum() * inv;
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi, inv](Tape<T>& t, std::size_t self) {
    t.grad_mut(xi).array() += t.grad(self)(0, 0) * inv;
  }, "mean");
}

template <typename T>
Var<T> sum_sq_norm(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  Tensor<T> y(1, 1);
  y(0, 0) = x.value().squaredNorm();
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi](Tape<T>& t, std::size_t self) {
    t.grad_mut(xi) += (T(2) * t.grad(self)(0, 0)) * t.value(xi);
  }, "sum_sq_norm");
}

/// Per-row Euclidean norm: n x d -> n x 1. Rows of zero norm get zero gradient.
template <typename T>
Var<T> euclid_norm_rows(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  Tensor<T> y = x.value().rowwise().norm();
  const std::size_t xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [xi](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& r = t.value(self);
    Tensor<T>& gx = t.grad_mut(xi);
    const Tensor<T>& xv = t.value(xi);
    for (Eigen::Index i = 0; i < xv.rows(); ++i)
      if (r(i, 0) > T(0)) gx.row(i) += (gy(i, 0) / r(i, 0)) * xv.row(i);
  }, "euclid_norm_rows");
}

namespace detail {

template <typename T>
void check_rows(const Var<T>& x, const Index& rows, const char* op) {
  for (auto r : rows)
    if (r >= static_cast<std::uint64_t>(x.rows()))
      throw IndexOutOfRange(std::string(op) + ": row " + std::to_string(r) + " of " + std::to_string(x.rows()));
}

}  // namespace detail

/// Row selection that blocks all gradient: the result is a constant.
template <typename T>
Var<T> gather_rows(const Var<T>& x, const Index& rows) {
  detail::check_rows(x, rows, "gather_rows");
  Tensor<T> y(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = x.value().row(rows[i]);
  return x.tape().constant(std::move(y));
}

/// Row selection with gradient scattered back to the selected rows. The
/// index itself is treated as constant.
template <typename T>
Var<T> select_rows(const Var<T>& x, Index rows) {
  detail::check_rows(x, rows, "select_rows");
  Tensor<T> y(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = x.value().row(rows[i]);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(y), x.requires_grad(), [xi, rows = std::move(rows)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += gy.row(static_cast<Eigen::Index>(i));
  }, "select_rows");
}

}  // namespace cycledeform::ad
