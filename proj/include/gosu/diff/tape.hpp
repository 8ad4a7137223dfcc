#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gosu/diff/tensor.hpp"
#include "gosu/error.hpp"
#include "gosu/rng.hpp"

namespace gosu::diff {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Append-only record of operations. Node ids are created in topological
/// order, so backward() is a single reverse sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), nullptr, false, -1, {}); }
  Var variable(Tensor value) { return push(std::move(value), nullptr, true, -1, {}); }

  /// References an external tensor without tracking gradients.
  Var external(const Tensor& value) { return push(Tensor{}, &value, false, -1, {}); }

  /// References an externally owned parameter; its gradient is reported under `slot`.
  Var parameter(const Tensor& value, std::size_t slot) {
    return push(Tensor{}, &value, true, static_cast<std::ptrdiff_t>(slot), {});
  }

  Var record(Tensor value, bool requires_grad, Backward backward) {
    if (!value.all_finite()) throw Error(ErrorCode::kNonFinite, "operation produced NaN/Inf");
    return push(std::move(value), nullptr, requires_grad, -1,
                requires_grad ? std::move(backward) : Backward{});
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of an input, allocated on first use during backward().
  Tensor& grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 && value(id).size() != 0) {
      const Tensor& v = value(id);
      n.grad = Tensor(v.rows(), v.cols());
    }
    return n.grad;
  }

  void backward(Var loss, double seed = 1.0) {
    if (loss.tape != this) throw Error(ErrorCode::kShapeMismatch, "loss belongs to another tape");
    if (value(loss.id).size() != 1)
      throw Error(ErrorCode::kShapeMismatch, "backward() needs a scalar loss");
    if (!nodes_[loss.id].requires_grad) return;
    grad_of(loss.id)[0] += seed;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, id);
    }
  }

  /// Calls f(slot, grad) for every parameter that received a gradient.
  template <class F>
  void for_each_parameter_grad(F&& f) const {
    for (const Node& n : nodes_)
      if (n.slot >= 0 && n.grad.size() != 0) f(static_cast<std::size_t>(n.slot), n.grad);
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    std::ptrdiff_t slot = -1;
    Backward backward;
  };

  Var push(Tensor value, const Tensor* external, bool requires_grad, std::ptrdiff_t slot,
           Backward backward) {
    nodes_.push_back(Node{std::move(value), external, Tensor{}, requires_grad, slot,
                          std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }

namespace detail {

inline Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = vars.begin()->tape;
  for (const Var& v : vars)
    if (v.tape != t) throw Error(ErrorCode::kShapeMismatch, "operands live on different tapes");
  return *t;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Y = X W^T (+ b), X: n x in, W: out x in, b: 1 x out.
inline Var affine(Var x, Var w, std::optional<Var> b = std::nullopt) {
  Tape& t = b ? detail::tape_of({x, w, *b}) : detail::tape_of({x, w});
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  detail::require(X.cols() == W.cols(), "affine: input width " + shape_string(X) +
                                            " does not match weight " + shape_string(W));
  if (b) detail::require(b->value().rows() == 1 && b->value().cols() == W.rows(), "affine: bias");
  const std::size_t n = X.rows(), in = X.cols(), out = W.rows();
  Tensor Y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = &X(i, 0);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = &W(o, 0);
      double acc = b ? b->value()[o] : 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wo[k];
      Y(i, o) = acc;
    }
  }
  const std::size_t xid = x.id, wid = w.id;
  const std::ptrdiff_t bid = b ? static_cast<std::ptrdiff_t>(b->id) : -1;
  const bool rg = t.requires_grad(xid) || t.requires_grad(wid) ||
                  (bid >= 0 && t.requires_grad(static_cast<std::size_t>(bid)));
  return t.record(std::move(Y), rg, [xid, wid, bid, n, in, out](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    const Tensor& X = tp.value(xid);
    const Tensor& W = tp.value(wid);
    if (tp.requires_grad(xid)) {
      Tensor& dX = tp.grad_of(xid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
          const double g = dY(i, o);
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < in; ++k) dX(i, k) += g * W(o, k);
        }
    }
    if (tp.requires_grad(wid)) {
      Tensor& dW = tp.grad_of(wid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
          const double g = dY(i, o);
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < in; ++k) dW(o, k) += g * X(i, k);
        }
    }
    if (bid >= 0 && tp.requires_grad(static_cast<std::size_t>(bid))) {
      Tensor& db = tp.grad_of(static_cast<std::size_t>(bid));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) db[o] += dY(i, o);
    }
  });
}

/// Y = A B, A: n x k, B: k x m.
inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of({a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.cols() == B.rows(), "matmul: " + shape_string(A) + " x " + shape_string(B));
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor Y(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) Y(i, j) += aip * B(p, j);
    }
  const std::size_t aid = a.id, bid = b.id;
  const bool rg = t.requires_grad(aid) || t.requires_grad(bid);
  return t.record(std::move(Y), rg, [aid, bid, n, k, m](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    const Tensor& A = tp.value(aid);
    const Tensor& B = tp.value(bid);
    if (tp.requires_grad(aid)) {
      Tensor& dA = tp.grad_of(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += dY(i, j) * B(p, j);
          dA(i, p) += acc;
        }
    }
    if (tp.requires_grad(bid)) {
      Tensor& dB = tp.grad_of(bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) dB(p, j) += aip * dY(i, j);
        }
    }
  });
}

namespace detail {

/// Elementwise unary op; `deriv(x, y)` is dy/dx at input x with output y.
template <class F, class D>
Var unary(Var x, F f, D deriv) {
  Tape& t = *x.tape;
  const Tensor& X = x.value();
  Tensor Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = f(X[i]);
  const std::size_t xid = x.id;
  return t.record(std::move(Y), t.requires_grad(xid), [xid, deriv](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    const Tensor& X = tp.value(xid);
    const Tensor& Y = tp.value(self);
    Tensor& dX = tp.grad_of(xid);
    for (std::size_t i = 0; i < X.size(); ++i) dX[i] += dY[i] * deriv(X[i], Y[i]);
  });
}

}  // namespace detail

inline Var tanh(Var x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

/// ELU with alpha = 1.
inline Var elu(Var x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

inline Var log(Var x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var scale(Var x, double c) {
  return detail::unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of({a, b});
  detail::require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor Y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  const std::size_t aid = a.id, bid = b.id;
  const bool rg = t.requires_grad(aid) || t.requires_grad(bid);
  return t.record(std::move(Y), rg, [aid, bid](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    for (std::size_t id : {aid, bid}) {
      if (!tp.requires_grad(id)) continue;
      Tensor& d = tp.grad_of(id);
      for (std::size_t i = 0; i < dY.size(); ++i) d[i] += dY[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of({a, b});
  detail::require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor Y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= B[i];
  const std::size_t aid = a.id, bid = b.id;
  const bool rg = t.requires_grad(aid) || t.requires_grad(bid);
  return t.record(std::move(Y), rg, [aid, bid](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    const Tensor& A = tp.value(aid);
    const Tensor& B = tp.value(bid);
    if (tp.requires_grad(aid)) {
      Tensor& d = tp.grad_of(aid);
      for (std::size_t i = 0; i < dY.size(); ++i) d[i] += dY[i] * B[i];
    }
    if (tp.requires_grad(bid)) {
      Tensor& d = tp.grad_of(bid);
      for (std::size_t i = 0; i < dY.size(); ++i) d[i] += dY[i] * A[i];
    }
  });
}

/// Softmax over all entries of x with mask[i] == false entries forced to exactly 0.
inline Var masked_softmax(Var x, const std::vector<bool>& mask) {
  Tape& t = *x.tape;
  const Tensor& X = x.value();
  detail::require(mask.size() == X.size(), "masked_softmax: mask size");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < X.size(); ++i)
    if (mask[i]) mx = std::max(mx, X[i]);
  if (!std::isfinite(mx)) throw Error(ErrorCode::kAllMasked, "masked_softmax: every entry masked");
  Tensor Y(X.rows(), X.cols());
  double z = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i)
    if (mask[i]) z += (Y[i] = std::exp(X[i] - mx));
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] /= z;
  const std::size_t xid = x.id;
  return t.record(std::move(Y), t.requires_grad(xid), [xid](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    const Tensor& Y = tp.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < Y.size(); ++i) dot += Y[i] * dY[i];
    Tensor& dX = tp.grad_of(xid);
    for (std::size_t i = 0; i < Y.size(); ++i) dX[i] += Y[i] * (dY[i] - dot);
  });
}

/// Column-wise concatenation of equally tall blocks.
inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::require(p.tape == &t, "concat_cols: operands on different tapes");
    detail::require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
    rg = rg || t.requires_grad(p.id);
    ids.push_back(p.id);
  }
  Tensor Y(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c) Y(r, off + c) = P(r, c);
    off += P.cols();
  }
  return t.record(std::move(Y), rg, [ids = std::move(ids), rows](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t c_n = tp.value(id).cols();
      if (tp.requires_grad(id)) {
        Tensor& d = tp.grad_of(id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < c_n; ++c) d(r, c) += dY(r, off + c);
      }
      off += c_n;
    }
  });
}

/// 1 x d sum of the selected rows; an empty selection gives a zero row.
inline Var sum_rows(Var x, std::vector<std::size_t> rows) {
  Tape& t = *x.tape;
  const Tensor& X = x.value();
  Tensor Y(1, X.cols());
  for (std::size_t r : rows) {
    detail::require(r < X.rows(), "sum_rows: row index out of range");
    for (std::size_t c = 0; c < X.cols(); ++c) Y[c] += X(r, c);
  }
  const std::size_t xid = x.id;
  return t.record(std::move(Y), t.requires_grad(xid),
                  [xid, rows = std::move(rows)](Tape& tp, std::size_t self) {
                    const Tensor& dY = tp.grad(self);
                    Tensor& dX = tp.grad_of(xid);
                    for (std::size_t r : rows)
                      for (std::size_t c = 0; c < dX.cols(); ++c) dX(r, c) += dY[c];
                  });
}

inline Var row(Var x, std::size_t r) { return sum_rows(x, {r}); }

inline Var reshape(Var x, std::size_t rows, std::size_t cols) {
  Tape& t = *x.tape;
  detail::require(rows * cols == x.value().size(), "reshape: size mismatch");
  Tensor Y(rows, cols, x.value().values());
  const std::size_t xid = x.id;
  return t.record(std::move(Y), t.requires_grad(xid), [xid](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    Tensor& dX = tp.grad_of(xid);
    for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i];
  });
}

/// Scalar (1 x 1) entry at flat index i.
inline Var pick(Var x, std::size_t i) {
  Tape& t = *x.tape;
  detail::require(i < x.value().size(), "pick: index out of range");
  Tensor Y(1, 1, x.value()[i]);
  const std::size_t xid = x.id;
  return t.record(std::move(Y), t.requires_grad(xid), [xid, i](Tape& tp, std::size_t self) {
    tp.grad_of(xid)[i] += tp.grad(self)[0];
  });
}

inline Var sum_all(Var x) {
  Tape& t = *x.tape;
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xid = x.id;
  return t.record(Tensor(1, 1, s), t.requires_grad(xid), [xid](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    Tensor& dX = tp.grad_of(xid);
    for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += g;
  });
}

/// Inverted dropout. Identity (the same Var) at inference or when p == 0.
inline Var dropout(Var x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::kShapeMismatch, "dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  Tape& t = *x.tape;
  const Tensor& X = x.value();
  auto keep = std::make_shared<std::vector<double>>(X.size());
  const double s = 1.0 / (1.0 - p);
  Tensor Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*keep)[i] = uniform01(rng) < p ? 0.0 : s;
    Y[i] = X[i] * (*keep)[i];
  }
  const std::size_t xid = x.id;
  return t.record(std::move(Y), t.requires_grad(xid), [xid, keep](Tape& tp, std::size_t self) {
    const Tensor& dY = tp.grad(self);
    Tensor& dX = tp.grad_of(xid);
    for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += dY[i] * (*keep)[i];
  });
}

using Neighborhoods = std::vector<std::vector<std::size_t>>;

/// Segment-softmax aggregation over graph neighborhoods:
///   out_i = sum_{j in N(i)} alpha_ij v_j,  alpha_i. = softmax_{j in N(i)}(q_i + k_j)
/// values: n x d, query/key scores: n x 1.
inline Var neighborhood_attention(Var values, Var query, Var key,
                                  std::shared_ptr<const Neighborhoods> nbrs) {
  Tape& t = detail::tape_of({values, query, key});
  const Tensor& V = values.value();
  const Tensor& Q = query.value();
  const Tensor& K = key.value();
  const std::size_t n = V.rows(), d = V.cols();
  detail::require(Q.size() == n && K.size() == n && nbrs->size() == n,
                  "neighborhood_attention: size mismatch");
  auto alpha = std::make_shared<std::vector<std::vector<double>>>(n);
  Tensor Y(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = (*nbrs)[i];
    if (nb.empty()) throw Error(ErrorCode::kAllMasked, "neighborhood_attention: empty neighborhood");
    auto& a = (*alpha)[i];
    a.resize(nb.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nb.size(); ++j) mx = std::max(mx, a[j] = Q[i] + K[nb[j]]);
    double z = 0.0;
    for (double& v : a) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j < nb.size(); ++j) {
      a[j] /= z;
      for (std::size_t c = 0; c < d; ++c) Y(i, c) += a[j] * V(nb[j], c);
    }
  }
  const std::size_t vid = values.id, qid = query.id, kid = key.id;
  const bool rg = t.requires_grad(vid) || t.requires_grad(qid) || t.requires_grad(kid);
  return t.record(std::move(Y), rg,
                  [vid, qid, kid, nbrs, alpha, n, d](Tape& tp, std::size_t self) {
                    const Tensor& dY = tp.grad(self);
                    const Tensor& V = tp.value(vid);
                    const bool gv = tp.requires_grad(vid);
                    const bool gq = tp.requires_grad(qid);
                    const bool gk = tp.requires_grad(kid);
                    Tensor* dV = gv ? &tp.grad_of(vid) : nullptr;
                    Tensor* dQ = gq ? &tp.grad_of(qid) : nullptr;
                    Tensor* dK = gk ? &tp.grad_of(kid) : nullptr;
                    std::vector<double> da;
                    for (std::size_t i = 0; i < n; ++i) {
                      const auto& nb = (*nbrs)[i];
                      const auto& a = (*alpha)[i];
                      da.assign(nb.size(), 0.0);
                      double dot = 0.0;
                      for (std::size_t j = 0; j < nb.size(); ++j) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < d; ++c) {
                          acc += dY(i, c) * V(nb[j], c);
                          if (dV) (*dV)(nb[j], c) += a[j] * dY(i, c);
                        }
                        da[j] = acc;
                        dot += a[j] * acc;
                      }
                      for (std::size_t j = 0; j < nb.size(); ++j) {
                        const double dl = a[j] * (da[j] - dot);
                        if (dQ) (*dQ)[i] += dl;
                        if (dK) (*dK)[nb[j]] += dl;
                      }
                    }
                  });
}

}  // namespace gosu::diff
