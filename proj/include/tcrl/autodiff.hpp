#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value on a tape is a 2-D matrix (batch x features); scalars
// are 1x1. Templated on the real type so training can run in float while
// tests run in double.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tcrl/core.hpp"

namespace tcrl::ad {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
class Tape;

/// Handle to a node recorded on a tape.
template <class S>
class Var {
 public:
  Var() = default;

  const Matrix<S>& value() const { return tape_->value(id_); }
  const Matrix<S>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<S>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<S>;
  Var(Tape<S>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<S>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient (data, detached targets).
  Var<S> constant(Matrix<S> v) { return push(std::move(v), false, nullptr); }
  /// Leaf that accumulates gradient.
  Var<S> variable(Matrix<S> v) { return push(std::move(v), true, nullptr); }

  Var<S> record(Matrix<S> v, bool requires_grad, BackwardFn fn) {
    return push(std::move(v), requires_grad, requires_grad ? std::move(fn) : nullptr);
  }

  const Matrix<S>& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix<S>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var<S>& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <class Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad.noalias() = g;
    } else {
      n.grad.noalias() += g;
    }
  }

  void backward(const Var<S>& loss) {
    if (loss.tape() != this) throw UsageError("backward: loss was recorded on a different tape");
    const Matrix<S>& v = value(loss.id());
    if (v.rows() != 1 || v.cols() != 1) {
      throw UsageError("backward: loss must be a scalar, got " + std::to_string(v.rows()) + "x" +
                       std::to_string(v.cols()));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Matrix<S>::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  // Parameter bindings: one leaf per (owner, path), reused within the tape.
  std::optional<std::size_t> find_binding(const void* owner, const std::string& path) const {
    auto it = bindings_.find({owner, path});
    if (it == bindings_.end()) return std::nullopt;
    return it->second;
  }
  void add_binding(const void* owner, const std::string& path, std::size_t id) { bindings_[{owner, path}] = id; }
  Var<S> var(std::size_t id) { return Var<S>(this, id); }

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<S> push(Matrix<S> v, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(v), Matrix<S>(), std::move(fn), requires_grad});
    return Var<S>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::map<std::pair<const void*, std::string>, std::size_t> bindings_;
};

namespace detail {

template <class S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

template <class S>
bool any_grad(const Var<S>& a) {
  return a.tape()->requires_grad(a);
}

template <class S>
bool any_grad(const Var<S>& a, const Var<S>& b) {
  return a.tape()->requires_grad(a) || b.tape()->requires_grad(b);
}

}  // namespace detail

template <class S>
Var<S> detach(const Var<S>& a) {
  return a.tape()->constant(a.value());
}

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul: inner dimension mismatch " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  }
  Matrix<S> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), detail::any_grad(a, b), [ia, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// x * W + b with b a 1 x out row broadcast over the batch.
template <class S>
Var<S> affine(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ConfigError("affine: shape mismatch input " + std::to_string(x.cols()) + " weight " +
                      std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + " bias " + std::to_string(b.rows()) +
                      "x" + std::to_string(b.cols()));
  }
  Matrix<S> out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  const bool rg = detail::any_grad(x, w) || detail::any_grad(b);
  return x.tape()->record(std::move(out), rg, [ix, iw, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
    if (t.requires_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), detail::any_grad(a, b), [ia, ib](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), detail::any_grad(a, b), [ia, ib](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix<S> out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), detail::any_grad(a, b), [ia, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

/// Each row of a scaled by the matching entry of the n x 1 column c.
template <class S>
Var<S> mul_col(const Var<S>& a, const Var<S>& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) throw ConfigError("mul_col: expected an n x 1 column");
  const std::size_t ia = a.id(), ic = c.id();
  Matrix<S> out = a.value().array().colwise() * c.value().col(0).array();
  return a.tape()->record(std::move(out), detail::any_grad(a, c), [ia, ic](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, (g.array().colwise() * t.value(ic).col(0).array()).matrix());
    if (t.requires_grad(ic)) t.accumulate(ic, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

template <class S>
Var<S> scale(const Var<S>& a, S s) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value() * s, detail::any_grad(a),
                          [ia, s](Tape<S>& t, std::size_t self) { t.accumulate(ia, t.grad(self) * s); });
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S s) {
  const std::size_t ia = a.id();
  Matrix<S> out = a.value().array() + s;
  return a.tape()->record(std::move(out), detail::any_grad(a),
                          [ia](Tape<S>& t, std::size_t self) { t.accumulate(ia, t.grad(self)); });
}

template <class S>
Matrix<S> elu_values(const Matrix<S>& x) {
  // Written without select() so that Eigen vectorizes it.
  return (x.array().max(S(0)) + (x.array().min(S(0)).exp() - S(1))).matrix();
}

template <class S>
Var<S> elu(const Var<S>& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(elu_values(a.value()), detail::any_grad(a), [ia](Tape<S>& t, std::size_t self) {
    // d elu / dx = 1 for x > 0, y + 1 otherwise
    const auto& y = t.value(self).array();
    const auto& g = t.grad(self).array();
    t.accumulate(ia, ((y.min(S(0)) + S(1)) * g).matrix());
  });
}

template <class S>
Var<S> tanh(const Var<S>& a) {
  const std::size_t ia = a.id();
  Matrix<S> out = a.value().array().tanh();
  return a.tape()->record(std::move(out), detail::any_grad(a), [ia](Tape<S>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ia, ((S(1) - y.array().square()) * t.grad(self).array()).matrix());
  });
}

template <class S>
Var<S> square(const Var<S>& a) {
  const std::size_t ia = a.id();
  Matrix<S> out = a.value().array().square();
  return a.tape()->record(std::move(out), detail::any_grad(a), [ia](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, (S(2) * t.value(ia).array() * t.grad(self).array()).matrix());
  });
}

template <class S>
Var<S> exp(const Var<S>& a) {
  const std::size_t ia = a.id();
  Matrix<S> out = a.value().array().exp();
  return a.tape()->record(std::move(out), detail::any_grad(a), [ia](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.value(self).cwiseProduct(t.grad(self)));
  });
}

/// Elementwise clamp; gradient is zero where the bound is active.
template <class S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  const std::size_t ia = a.id();
  Matrix<S> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->record(std::move(out), detail::any_grad(a), [ia, lo, hi](Tape<S>& t, std::size_t self) {
    const auto& x = t.value(ia).array();
    t.accumulate(ia, ((x > lo && x < hi).select(t.grad(self).array(), S(0))).matrix());
  });
}

/// Clamp in the forward pass, identity in the backward pass.
template <class S>
Var<S> clamp_straight_through(const Var<S>& a, S lo, S hi) {
  const std::size_t ia = a.id();
  Matrix<S> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->record(std::move(out), detail::any_grad(a),
                          [ia](Tape<S>& t, std::size_t self) { t.accumulate(ia, t.grad(self)); });
}

/// Elementwise minimum; ties route the gradient to the first argument.
template <class S>
Var<S> minimum(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "minimum");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix<S> out = a.value().cwiseMin(b.value());
  return a.tape()->record(std::move(out), detail::any_grad(a, b), [ia, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self).array();
    const auto first = t.value(ia).array() <= t.value(ib).array();
    if (t.requires_grad(ia)) t.accumulate(ia, first.select(g, S(0)).matrix());
    if (t.requires_grad(ib)) t.accumulate(ib, first.select(S(0), g).matrix());
  });
}

template <class S>
Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows()) throw ConfigError("concat_cols: row count mismatch");
  const Eigen::Index na = a.cols(), nb = b.cols();
  Matrix<S> out(a.rows(), na + nb);
  out.leftCols(na) = a.value();
  out.rightCols(nb) = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), detail::any_grad(a, b), [ia, ib, na, nb](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(na));
    if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(nb));
  });
}

template <class S>
Var<S> slice_cols(const Var<S>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols: out of range");
  const std::size_t ia = a.id();
  const Eigen::Index total = a.cols();
  Matrix<S> out = a.value().middleCols(start, count);
  return a.tape()->record(std::move(out), detail::any_grad(a),
                          [ia, start, count, total](Tape<S>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            Matrix<S> full = Matrix<S>::Zero(g.rows(), total);
                            full.middleCols(start, count) = g;
                            t.accumulate(ia, full);
                          });
}

template <class S>
Var<S> sum(const Var<S>& a) {
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), detail::any_grad(a), [ia, r, c](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, Matrix<S>::Constant(r, c, t.grad(self)(0, 0)));
  });
}

template <class S>
Var<S> mean(const Var<S>& a) {
  const auto n = static_cast<S>(a.value().size());
  return scale(sum(a), S(1) / n);
}

/// n x m -> n x 1
template <class S>
Var<S> row_sum(const Var<S>& a) {
  const std::size_t ia = a.id();
  const Eigen::Index c = a.cols();
  Matrix<S> out = a.value().rowwise().sum();
  return a.tape()->record(std::move(out), detail::any_grad(a), [ia, c](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).col(0).replicate(1, c));
  });
}

template <class S>
Var<S> row_mean(const Var<S>& a) {
  return scale(row_sum(a), S(1) / static_cast<S>(a.cols()));
}

/// Rowwise cosine similarity, n x m, n x m -> n x 1. A row whose norm product
/// falls below eps gets eps added to its denominator; the number of such rows
/// is reported through `degenerate`.
template <class S>
Var<S> row_cosine(const Var<S>& a, const Var<S>& b, S eps = S(1e-8), std::size_t* degenerate = nullptr) {
  detail::require_same_shape(a, b, "row_cosine");
  const auto& av = a.value();
  const auto& bv = b.value();
  const Eigen::Index n = av.rows();
  Matrix<S> out(n, 1);
  // Per-row cached quantities: |a|, |b|, denominator.
  Matrix<S> cache(n, 3);
  std::size_t bad = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const S na = av.row(i).norm();
    const S nb = bv.row(i).norm();
    S d = na * nb;
    if (na < eps || nb < eps) {
      d += eps;
      ++bad;
    }
    cache(i, 0) = na;
    cache(i, 1) = nb;
    cache(i, 2) = d;
    out(i, 0) = av.row(i).dot(bv.row(i)) / d;
  }
  if (degenerate) *degenerate += bad;
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), detail::any_grad(a, b), [ia, ib, cache = std::move(cache)](Tape<S>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& av = t.value(ia);
        const auto& bv = t.value(ib);
        const auto& c = t.value(self);
        const Eigen::Index n = av.rows();
        // dc/da = b/d - c * nb/na * a / d
        if (t.requires_grad(ia)) {
          Matrix<S> ga(av.rows(), av.cols());
          for (Eigen::Index i = 0; i < n; ++i) {
            const S na = cache(i, 0), nb = cache(i, 1), d = cache(i, 2);
            ga.row(i) = bv.row(i) / d;
            if (na > S(0)) ga.row(i) -= (c(i, 0) * nb / (na * d)) * av.row(i);
            ga.row(i) *= g(i, 0);
          }
          t.accumulate(ia, ga);
        }
        if (t.requires_grad(ib)) {
          Matrix<S> gb(bv.rows(), bv.cols());
          for (Eigen::Index i = 0; i < n; ++i) {
            const S na = cache(i, 0), nb = cache(i, 1), d = cache(i, 2);
            gb.row(i) = av.row(i) / d;
            if (nb > S(0)) gb.row(i) -= (c(i, 0) * na / (nb * d)) * bv.row(i);
            gb.row(i) *= g(i, 0);
          }
          t.accumulate(ib, gb);
        }
      });
}

}  // namespace tcrl::ad
