#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <utility>
#include <vector>

#include "avsdf/core/error.hpp"
#include "avsdf/core/gemm.hpp"
#include "avsdf/core/tensor.hpp"

namespace avsdf::num {

class Tape;

// Recorded tensor handle. id < 0 marks a constant that lives outside any tape;
// ops accept mixed recorded/constant inputs.
struct Var {
  Tensor v;
  int32_t id = -1;
  Tape* tape = nullptr;

  Var() = default;
  Var(Tensor t) : v(std::move(t)) {}  // constant
  Var(Tensor t, int32_t i, Tape* tp) : v(std::move(t)), id(i), tape(tp) {}
  bool recorded() const { return id >= 0; }
};

// One factored gradient contribution to a blend bank: g[r,:] += coeff[r] * dmat.
// Keeping bank gradients in this form lets the optimizer consume them without
// ever materializing a bank-sized gradient buffer.
struct FactoredTerm {
  Tensor coeff;  // [R]
  Tensor dmat;   // effective-weight gradient, flattened row-major
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor t) {
    const int32_t id = push(std::move(t));
    return Var{out_of(id), id, this};  // shares storage with the node
  }

  // Marks a leaf so blend_add stores its gradient factored instead of dense.
  void mark_factored(const Var& x) {
    require(x.recorded() && x.tape == this, "mark_factored: not a leaf of this tape");
    factored_.resize(nodes_.size(), 0);
    factored_[x.id] = 1;
  }

  bool is_factored(int32_t id) const {
    return id >= 0 && id < static_cast<int32_t>(factored_.size()) && factored_[id];
  }

  std::vector<FactoredTerm>& factored_terms(int32_t id) {
    fgrads_.resize(nodes_.size());
    return fgrads_[id];
  }

  // gradient buffer, allocated zero on first touch
  Tensor& grad(int32_t id) {
    Tensor& g = grads_[id];
    if (!g.defined()) g = Tensor(nodes_[id].out.shape());
    return g;
  }

  bool has_grad(int32_t id) const { return grads_[id].defined(); }

  // Dense gradient of a var; zeros if it never participated. Materializes
  // factored contributions (test/verification path).
  Tensor grad_dense(const Var& x) {
    require(x.recorded() && x.tape == this, "grad_dense: var not on this tape");
    Tensor g = grads_[x.id].defined() ? grads_[x.id].clone() : Tensor(x.v.shape());
    if (x.id < static_cast<int32_t>(fgrads_.size())) {
      for (const FactoredTerm& t : fgrads_[x.id]) {
        const int64_t r = t.coeff.numel(), w = t.dmat.numel();
        for (int64_t i = 0; i < r; ++i) {
          const float c = t.coeff[i];
          for (int64_t j = 0; j < w; ++j) g[i * w + j] += c * t.dmat[j];
        }
      }
    }
    return g;
  }

  void backward(const Var& root) {
    require(root.recorded() && root.tape == this, "backward: root not on this tape");
    require(root.v.numel() == 1, "backward: root must be scalar, got " + shape_str(root.v.shape()));
    grad(root.id)[0] = 1.0f;
    sweep();
  }

  // reverse sweep from an explicit cotangent on a (possibly non-scalar) output
  void backward_seeded(const Var& root, const Tensor& seed) {
    require(root.recorded() && root.tape == this, "backward_seeded: root not on this tape");
    check_same_shape(root.v, seed, "backward_seeded");
    detail_copy(grad(root.id), seed);
    sweep();
  }

  size_t size() const { return nodes_.size(); }

  // -- recording internals used by the op implementations --

  int32_t push(Tensor out) {
    nodes_.push_back(Node{{}, std::move(out)});
    grads_.emplace_back();
    return static_cast<int32_t>(nodes_.size()) - 1;
  }

  void set_back(int32_t id, std::function<void()> fn) { nodes_[id].back = std::move(fn); }

  const Tensor& out_of(int32_t id) const { return nodes_[id].out; }

 private:
  static void detail_copy(Tensor& dst, const Tensor& src) {
    std::copy(src.data(), src.data() + src.numel(), dst.data());
  }

  void sweep() {
    for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back && grads_[i].defined()) nodes_[i].back();
  }

  struct Node {
    std::function<void()> back;
    Tensor out;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> factored_;
  std::vector<std::vector<FactoredTerm>> fgrads_;
};

inline Tape* merge_tape(std::initializer_list<const Var*> xs) {
  Tape* t = nullptr;
  for (const Var* x : xs) {
    if (!x->recorded()) continue;
    require(t == nullptr || t == x->tape, "op: inputs recorded on different tapes");
    t = x->tape;
  }
  return t;
}

inline Var make_result(Tape* t, Tensor out) {
  if (!t) return Var(std::move(out));
  const int32_t id = t->push(std::move(out));
  return Var{t->out_of(id), id, t};
}

// ---------------------------------------------------------------------------
// elementwise helpers

namespace detail {

inline void acc_add(Tensor& dst, const Tensor& src) {
  float* d = dst.data();
  const float* s = src.data();
  const int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

inline void acc_add_scaled(Tensor& dst, const Tensor& src, float a) {
  float* d = dst.data();
  const float* s = src.data();
  const int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += a * s[i];
}

inline void acc_add_mul(Tensor& dst, const Tensor& g, const Tensor& w) {
  float* d = dst.data();
  const float* gp = g.data();
  const float* wp = w.data();
  const int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += gp[i] * wp[i];
}

template <class F>
Var unary_op(const Var& a, const char* name, F&& fwd,
             std::function<void(const Tensor& g, const Tensor& x, const Tensor& y, Tensor& dx)> bwd) {
  Tensor out(a.v.shape());
  const float* x = a.v.data();
  float* y = out.data();
  const int64_t n = a.v.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  debug_check_finite(out, name);
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t && a.recorded()) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    Tensor xv = a.v, yv = r.v;
    auto bw = std::move(bwd);
    t->set_back(ir, [tp, ia, ir, xv, yv, bw]() { bw(tp->grad(ir), xv, yv, tp->grad(ia)); });
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// core ops

inline Var matmul(const Var& a, const Var& b) {
  require(a.v.rank() == 2 && b.v.rank() == 2 && a.v.dim(1) == b.v.dim(0),
          "matmul: bad shapes " + shape_str(a.v.shape()) + " x " + shape_str(b.v.shape()));
  const int64_t m = a.v.dim(0), k = a.v.dim(1), n = b.v.dim(1);
  Tensor out({m, n});
  gemm_nn(a.v.data(), b.v.data(), out.data(), m, k, n, false);
  debug_check_finite(out, "matmul");
  Tape* t = merge_tape({&a, &b});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ib = b.id, ir = r.id;
    Tensor av = a.v, bv = b.v;
    t->set_back(ir, [tp, ia, ib, ir, av, bv, m, k, n]() {
      const Tensor& g = tp->grad(ir);
      if (ia >= 0) {  // dA += G * B^T
        Tensor bt({n, k});
        transpose_copy(bv.data(), bt.data(), k, n);
        gemm_nn(g.data(), bt.data(), tp->grad(ia).data(), m, n, k, true);
      }
      if (ib >= 0)  // dB += A^T * G
        gemm_at_b_acc(av.data(), g.data(), tp->grad(ib).data(), m, k, n);
    });
  }
  return r;
}

namespace detail {

// shared by add/sub: mode 0 same-shape, mode 1 matrix (+/-) row vector
inline int addsub_mode(const Var& a, const Var& b, const char* name) {
  if (a.v.same_shape(b.v)) return 0;
  if (a.v.rank() == 2 && b.v.rank() == 1 && a.v.dim(1) == b.v.dim(0)) return 1;
  throw ContractError(std::string(name) + ": shape mismatch " + shape_str(a.v.shape()) +
                      " vs " + shape_str(b.v.shape()) + " (same-shape or [M,N] op [N])");
}

inline void row_reduce_acc(Tensor& dst, const Tensor& g) {
  // dst[N] += column sums of g[M,N], f64 accumulation per column
  const int64_t m = g.dim(0), n = g.dim(1);
  std::vector<double> acc(static_cast<size_t>(n), 0.0);
  const float* gp = g.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += gp[i * n + j];
  for (int64_t j = 0; j < n; ++j) dst[j] += static_cast<float>(acc[static_cast<size_t>(j)]);
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  const int mode = detail::addsub_mode(a, b, "add");
  Tensor out(a.v.shape());
  const float* ap = a.v.data();
  const float* bp = b.v.data();
  float* op = out.data();
  if (mode == 0) {
    const int64_t n = a.v.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
  } else {
    const int64_t m = a.v.dim(0), n = a.v.dim(1);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) op[i * n + j] = ap[i * n + j] + bp[j];
  }
  debug_check_finite(out, "add");
  Tape* t = merge_tape({&a, &b});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ib = b.id, ir = r.id;
    t->set_back(ir, [tp, ia, ib, ir, mode]() {
      const Tensor& g = tp->grad(ir);
      if (ia >= 0) detail::acc_add(tp->grad(ia), g);
      if (ib >= 0) {
        if (mode == 0)
          detail::acc_add(tp->grad(ib), g);
        else
          detail::row_reduce_acc(tp->grad(ib), g);
      }
    });
  }
  return r;
}

inline Var sub(const Var& a, const Var& b) {
  const int mode = detail::addsub_mode(a, b, "sub");
  Tensor out(a.v.shape());
  const float* ap = a.v.data();
  const float* bp = b.v.data();
  float* op = out.data();
  if (mode == 0) {
    const int64_t n = a.v.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
  } else {
    const int64_t m = a.v.dim(0), n = a.v.dim(1);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) op[i * n + j] = ap[i * n + j] - bp[j];
  }
  debug_check_finite(out, "sub");
  Tape* t = merge_tape({&a, &b});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ib = b.id, ir = r.id;
    t->set_back(ir, [tp, ia, ib, ir, mode]() {
      const Tensor& g = tp->grad(ir);
      if (ia >= 0) detail::acc_add(tp->grad(ia), g);
      if (ib >= 0) {
        if (mode == 0) {
          Tensor& db = tp->grad(ib);
          float* d = db.data();
          const float* gp = g.data();
          for (int64_t i = 0; i < db.numel(); ++i) d[i] -= gp[i];
        } else {
          Tensor neg(g.shape());
          float* np = neg.data();
          const float* gp = g.data();
          for (int64_t i = 0; i < g.numel(); ++i) np[i] = -gp[i];
          detail::row_reduce_acc(tp->grad(ib), neg);
        }
      }
    });
  }
  return r;
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a.v, b.v, "mul");
  Tensor out(a.v.shape());
  const float* ap = a.v.data();
  const float* bp = b.v.data();
  float* op = out.data();
  const int64_t n = a.v.numel();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
  debug_check_finite(out, "mul");
  Tape* t = merge_tape({&a, &b});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ib = b.id, ir = r.id;
    Tensor av = a.v, bv = b.v;
    t->set_back(ir, [tp, ia, ib, ir, av, bv]() {
      const Tensor& g = tp->grad(ir);
      if (ia >= 0) detail::acc_add_mul(tp->grad(ia), g, bv);
      if (ib >= 0) detail::acc_add_mul(tp->grad(ib), g, av);
    });
  }
  return r;
}

inline Var div(const Var& a, const Var& b) {
  check_same_shape(a.v, b.v, "div");
  Tensor out(a.v.shape());
  const float* ap = a.v.data();
  const float* bp = b.v.data();
  float* op = out.data();
  const int64_t n = a.v.numel();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] / bp[i];
  debug_check_finite(out, "div");
  Tape* t = merge_tape({&a, &b});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ib = b.id, ir = r.id;
    Tensor av = a.v, bv = b.v;
    t->set_back(ir, [tp, ia, ib, ir, av, bv]() {
      const Tensor& g = tp->grad(ir);
      const int64_t n2 = g.numel();
      if (ia >= 0) {
        Tensor& da = tp->grad(ia);
        for (int64_t i = 0; i < n2; ++i) da[i] += g[i] / bv[i];
      }
      if (ib >= 0) {
        Tensor& db = tp->grad(ib);
        for (int64_t i = 0; i < n2; ++i) db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
      }
    });
  }
  return r;
}

// scalar [1] times tensor
inline Var smul(const Var& s, const Var& a) {
  require(s.v.numel() == 1, "smul: scale must be a scalar tensor");
  const float sv = s.v[0];
  Tensor out(a.v.shape());
  const float* ap = a.v.data();
  float* op = out.data();
  const int64_t n = a.v.numel();
  for (int64_t i = 0; i < n; ++i) op[i] = sv * ap[i];
  debug_check_finite(out, "smul");
  Tape* t = merge_tape({&s, &a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t is = s.id, ia = a.id, ir = r.id;
    Tensor av = a.v;
    t->set_back(ir, [tp, is, ia, ir, av, sv]() {
      const Tensor& g = tp->grad(ir);
      if (is >= 0) {
        double acc = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) acc += static_cast<double>(g[i]) * av[i];
        tp->grad(is)[0] += static_cast<float>(acc);
      }
      if (ia >= 0) detail::acc_add_scaled(tp->grad(ia), g, sv);
    });
  }
  return r;
}

// alpha * a + beta with constant scalars
inline Var affine(const Var& a, float alpha, float beta) {
  return detail::unary_op(
      a, "affine", [alpha, beta](float x) { return alpha * x + beta; },
      [alpha](const Tensor& g, const Tensor&, const Tensor&, Tensor& dx) {
        detail::acc_add_scaled(dx, g, alpha);
      });
}

inline Var neg(const Var& a) { return affine(a, -1.0f, 0.0f); }

inline Var relu(const Var& a) {
  return detail::unary_op(
      a, "relu", [](float x) { return x > 0.0f ? x : 0.0f; },
      [](const Tensor& g, const Tensor& x, const Tensor&, Tensor& dx) {
        for (int64_t i = 0; i < g.numel(); ++i)
          if (x[i] > 0.0f) dx[i] += g[i];  // subgradient 0 at the kink
      });
}

inline Var abs(const Var& a) {
  return detail::unary_op(
      a, "abs", [](float x) { return std::fabs(x); },
      [](const Tensor& g, const Tensor& x, const Tensor&, Tensor& dx) {
        for (int64_t i = 0; i < g.numel(); ++i) {
          if (x[i] > 0.0f)
            dx[i] += g[i];
          else if (x[i] < 0.0f)
            dx[i] -= g[i];  // and 0 at x == 0
        }
      });
}

inline Var tanh(const Var& a) {
  return detail::unary_op(
      a, "tanh", [](float x) { return std::tanh(x); },
      [](const Tensor& g, const Tensor&, const Tensor& y, Tensor& dx) {
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * (1.0f - y[i] * y[i]);
      });
}

inline Var sigmoid(const Var& a) {
  return detail::unary_op(
      a, "sigmoid", [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
      [](const Tensor& g, const Tensor&, const Tensor& y, Tensor& dx) {
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * y[i] * (1.0f - y[i]);
      });
}

inline Var sin(const Var& a) {
  return detail::unary_op(
      a, "sin", [](float x) { return std::sin(x); },
      [](const Tensor& g, const Tensor& x, const Tensor&, Tensor& dx) {
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * std::cos(x[i]);
      });
}

inline Var cos(const Var& a) {
  return detail::unary_op(
      a, "cos", [](float x) { return std::cos(x); },
      [](const Tensor& g, const Tensor& x, const Tensor&, Tensor& dx) {
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] -= g[i] * std::sin(x[i]);
      });
}

inline Var sqrt(const Var& a) {
  return detail::unary_op(
      a, "sqrt", [](float x) { return std::sqrt(x); },
      [](const Tensor& g, const Tensor&, const Tensor& y, Tensor& dx) {
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * 0.5f / y[i];
      });
}

inline Var square(const Var& a) { return mul(a, a); }

// full reductions to [1]; f64 accumulation
inline Var sum(const Var& a) {
  double acc = 0.0;
  const float* ap = a.v.data();
  for (int64_t i = 0; i < a.v.numel(); ++i) acc += ap[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    t->set_back(ir, [tp, ia, ir]() {
      const float g = tp->grad(ir)[0];
      Tensor& da = tp->grad(ia);
      for (int64_t i = 0; i < da.numel(); ++i) da[i] += g;
    });
  }
  return r;
}

inline Var mean(const Var& a) {
  const int64_t n = a.v.numel();
  double acc = 0.0;
  const float* ap = a.v.data();
  for (int64_t i = 0; i < n; ++i) acc += ap[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    t->set_back(ir, [tp, ia, ir, n]() {
      const float g = tp->grad(ir)[0] / static_cast<float>(n);
      Tensor& da = tp->grad(ia);
      for (int64_t i = 0; i < da.numel(); ++i) da[i] += g;
    });
  }
  return r;
}

inline Var concat(const Var& a, const Var& b, int axis) {
  require(a.v.rank() == b.v.rank(), "concat: rank mismatch");
  require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
  Tensor out;
  if (a.v.rank() == 1) {
    require(axis == 0, "concat: axis 1 on rank-1 tensors");
    out = Tensor({a.v.dim(0) + b.v.dim(0)});
    std::copy(a.v.data(), a.v.data() + a.v.numel(), out.data());
    std::copy(b.v.data(), b.v.data() + b.v.numel(), out.data() + a.v.numel());
  } else {
    require(a.v.rank() == 2, "concat: rank must be 1 or 2");
    if (axis == 0) {
      require(a.v.dim(1) == b.v.dim(1), "concat: column mismatch");
      out = Tensor({a.v.dim(0) + b.v.dim(0), a.v.dim(1)});
      std::copy(a.v.data(), a.v.data() + a.v.numel(), out.data());
      std::copy(b.v.data(), b.v.data() + b.v.numel(), out.data() + a.v.numel());
    } else {
      require(a.v.dim(0) == b.v.dim(0), "concat: row mismatch");
      const int64_t m = a.v.dim(0), na = a.v.dim(1), nb = b.v.dim(1);
      out = Tensor({m, na + nb});
      for (int64_t i = 0; i < m; ++i) {
        std::copy(a.v.data() + i * na, a.v.data() + (i + 1) * na, out.data() + i * (na + nb));
        std::copy(b.v.data() + i * nb, b.v.data() + (i + 1) * nb, out.data() + i * (na + nb) + na);
      }
    }
  }
  Tape* t = merge_tape({&a, &b});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ib = b.id, ir = r.id;
    const Shape sa = a.v.shape(), sb = b.v.shape();
    t->set_back(ir, [tp, ia, ib, ir, sa, sb, axis]() {
      const Tensor& g = tp->grad(ir);
      const int64_t arows = sa[0];
      if (sa.size() == 1 || axis == 0) {
        const int64_t an = shape_numel(sa);
        if (ia >= 0) {
          Tensor& da = tp->grad(ia);
          for (int64_t i = 0; i < an; ++i) da[i] += g[i];
        }
        if (ib >= 0) {
          Tensor& db = tp->grad(ib);
          for (int64_t i = 0; i < shape_numel(sb); ++i) db[i] += g[an + i];
        }
      } else {
        const int64_t na = sa[1], nb = sb[1];
        if (ia >= 0) {
          Tensor& da = tp->grad(ia);
          for (int64_t i = 0; i < arows; ++i)
            for (int64_t j = 0; j < na; ++j) da[i * na + j] += g[i * (na + nb) + j];
        }
        if (ib >= 0) {
          Tensor& db = tp->grad(ib);
          for (int64_t i = 0; i < arows; ++i)
            for (int64_t j = 0; j < nb; ++j) db[i * nb + j] += g[i * (na + nb) + na + j];
        }
      }
    });
  }
  return r;
}

inline Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  require(axis == 0 || axis == 1, "slice: axis must be 0 or 1");
  require(len > 0, "slice: empty result");
  Tensor out;
  if (a.v.rank() == 1) {
    require(axis == 0 && start >= 0 && start + len <= a.v.dim(0), "slice: out of range");
    out = Tensor({len});
    std::copy(a.v.data() + start, a.v.data() + start + len, out.data());
  } else {
    require(a.v.rank() == 2, "slice: rank must be 1 or 2");
    if (axis == 0) {
      require(start >= 0 && start + len <= a.v.dim(0), "slice: out of range");
      const int64_t n = a.v.dim(1);
      out = Tensor({len, n});
      std::copy(a.v.data() + start * n, a.v.data() + (start + len) * n, out.data());
    } else {
      require(start >= 0 && start + len <= a.v.dim(1), "slice: out of range");
      const int64_t m = a.v.dim(0), n = a.v.dim(1);
      out = Tensor({m, len});
      for (int64_t i = 0; i < m; ++i)
        std::copy(a.v.data() + i * n + start, a.v.data() + i * n + start + len,
                  out.data() + i * len);
    }
  }
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    const Shape sa = a.v.shape();
    t->set_back(ir, [tp, ia, ir, sa, axis, start, len]() {
      const Tensor& g = tp->grad(ir);
      Tensor& da = tp->grad(ia);
      if (sa.size() == 1) {
        for (int64_t i = 0; i < len; ++i) da[start + i] += g[i];
      } else if (axis == 0) {
        const int64_t n = sa[1];
        for (int64_t i = 0; i < len * n; ++i) da[start * n + i] += g[i];
      } else {
        const int64_t m = sa[0], n = sa[1];
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < len; ++j) da[i * n + start + j] += g[i * len + j];
      }
    });
  }
  return r;
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.v.viewed(std::move(shape));
  Tape* t = merge_tape({&a});
  if (!t) return Var(std::move(out));
  // fresh node so the original keeps its own grad buffer shape
  Var r = make_result(t, out.clone());
  Tape* tp = t;
  const int32_t ia = a.id, ir = r.id;
  t->set_back(ir, [tp, ia, ir]() {
    const Tensor& g = tp->grad(ir);
    Tensor& da = tp->grad(ia);
    for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
  });
  return r;
}

inline Var transpose(const Var& a) {
  require(a.v.rank() == 2, "transpose: rank-2 only");
  const int64_t m = a.v.dim(0), n = a.v.dim(1);
  Tensor out({n, m});
  transpose_copy(a.v.data(), out.data(), m, n);
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    t->set_back(ir, [tp, ia, ir, m, n]() {
      const Tensor& g = tp->grad(ir);
      Tensor& da = tp->grad(ia);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) da[j * n + i] += g[i * m + j];
    });
  }
  return r;
}

inline Var tile_rows(const Var& a, int64_t m) {
  require(a.v.rank() == 1, "tile_rows: expects a vector");
  const int64_t n = a.v.dim(0);
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i)
    std::copy(a.v.data(), a.v.data() + n, out.data() + i * n);
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    t->set_back(ir, [tp, ia, ir]() { detail::row_reduce_acc(tp->grad(ia), tp->grad(ir)); });
  }
  return r;
}

inline Var gather_rows(const Var& a, std::vector<int64_t> idx) {
  require(a.v.rank() == 2, "gather_rows: rank-2 only");
  const int64_t n = a.v.dim(1), m = static_cast<int64_t>(idx.size());
  require(m > 0, "gather_rows: empty index set");
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    require(idx[static_cast<size_t>(i)] >= 0 && idx[static_cast<size_t>(i)] < a.v.dim(0),
            "gather_rows: index out of range");
    std::copy(a.v.data() + idx[static_cast<size_t>(i)] * n,
              a.v.data() + (idx[static_cast<size_t>(i)] + 1) * n, out.data() + i * n);
  }
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    auto ix = std::make_shared<std::vector<int64_t>>(std::move(idx));
    t->set_back(ir, [tp, ia, ir, ix, n]() {
      const Tensor& g = tp->grad(ir);
      Tensor& da = tp->grad(ia);
      for (int64_t i = 0; i < static_cast<int64_t>(ix->size()); ++i)
        for (int64_t j = 0; j < n; ++j) da[(*ix)[static_cast<size_t>(i)] * n + j] += g[i * n + j];
    });
  }
  return r;
}

// elementwise min against a constant bound; ties keep a's gradient
inline Var minimum(const Var& a, const Tensor& bound) {
  check_same_shape(a.v, bound, "minimum");
  Tensor out(a.v.shape());
  const float* ap = a.v.data();
  const float* bp = bound.data();
  float* op = out.data();
  const int64_t n = a.v.numel();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] <= bp[i] ? ap[i] : bp[i];
  Tape* t = merge_tape({&a});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = r.id;
    Tensor av = a.v, bv = bound;
    t->set_back(ir, [tp, ia, ir, av, bv]() {
      const Tensor& g = tp->grad(ir);
      Tensor& da = tp->grad(ia);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (av[i] <= bv[i]) da[i] += g[i];
    });
  }
  return r;
}

struct Reduced {
  Var values;
  std::vector<int64_t> arg;
};

namespace detail {

template <bool kMin>
Reduced extremum_reduce(const Var& a, int axis) {
  auto better = [](float x, float best) { return kMin ? x < best : x > best; };
  Reduced res;
  Tensor out;
  if (a.v.rank() == 1) {
    require(axis == 0, "reduce: axis 0 for vectors");
    float best = a.v[0];
    int64_t bi = 0;
    for (int64_t i = 1; i < a.v.numel(); ++i)
      if (better(a.v[i], best)) best = a.v[i], bi = i;
    out = Tensor::scalar(best);
    res.arg = {bi};
  } else {
    require(a.v.rank() == 2, "reduce: rank must be 1 or 2");
    const int64_t m = a.v.dim(0), n = a.v.dim(1);
    if (axis == 1) {
      out = Tensor({m});
      res.arg.resize(static_cast<size_t>(m));
      for (int64_t i = 0; i < m; ++i) {
        const float* row = a.v.data() + i * n;
        float best = row[0];
        int64_t bi = 0;
        for (int64_t j = 1; j < n; ++j)
          if (better(row[j], best)) best = row[j], bi = j;
        out[i] = best;
        res.arg[static_cast<size_t>(i)] = bi;
      }
    } else {
      require(axis == 0, "reduce: axis must be 0 or 1");
      out = Tensor({n});
      res.arg.resize(static_cast<size_t>(n));
      const float* p = a.v.data();
      for (int64_t j = 0; j < n; ++j) {
        out[j] = p[j];
        res.arg[static_cast<size_t>(j)] = 0;
      }
      for (int64_t i = 1; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          if (better(p[i * n + j], out[j])) {
            out[j] = p[i * n + j];
            res.arg[static_cast<size_t>(j)] = i;
          }
    }
  }
  Tape* t = merge_tape({&a});
  res.values = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ia = a.id, ir = res.values.id;
    const Shape sa = a.v.shape();
    auto arg = std::make_shared<std::vector<int64_t>>(res.arg);
    t->set_back(ir, [tp, ia, ir, sa, arg, axis]() {
      const Tensor& g = tp->grad(ir);
      Tensor& da = tp->grad(ia);
      if (sa.size() == 1) {
        da[(*arg)[0]] += g[0];
      } else if (axis == 1) {
        const int64_t n = sa[1];
        for (int64_t i = 0; i < g.numel(); ++i) da[i * n + (*arg)[static_cast<size_t>(i)]] += g[i];
      } else {
        const int64_t n = sa[1];
        for (int64_t j = 0; j < g.numel(); ++j) da[(*arg)[static_cast<size_t>(j)] * n + j] += g[j];
      }
    });
  }
  return res;
}

}  // namespace detail

// argmin/argmax take the lowest index on ties (strict comparison while scanning)
inline Reduced min_reduce(const Var& a, int axis = 0) { return detail::extremum_reduce<true>(a, axis); }
inline Reduced max_reduce(const Var& a, int axis = 0) { return detail::extremum_reduce<false>(a, axis); }

// out = base + sum_r coeff[r] * bank[r,:], bank rows flattened like base
inline Var blend_add(const Var& base, const Var& bank, const Var& coeff) {
  require(coeff.v.rank() == 1, "blend_add: coeff must be a vector");
  const int64_t r = coeff.v.dim(0), w = base.v.numel();
  require(bank.v.rank() == 2 && bank.v.dim(0) == r && bank.v.dim(1) == w,
          "blend_add: bank must be [R, numel(base)], got " + shape_str(bank.v.shape()));
  Tensor out = base.v.clone();
  float* op = out.data();
  const float* bp = bank.v.data();
  for (int64_t i = 0; i < r; ++i) {
    const float c = coeff.v[i];
    const float* row = bp + i * w;
    for (int64_t j = 0; j < w; ++j) op[j] += c * row[j];
  }
  debug_check_finite(out, "blend_add");
  Tape* t = merge_tape({&base, &bank, &coeff});
  Var r2 = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ibase = base.id, ibank = bank.id, ic = coeff.id, ir = r2.id;
    Tensor bankv = bank.v, coeffv = coeff.v;
    t->set_back(ir, [tp, ibase, ibank, ic, ir, bankv, coeffv, r, w]() {
      const Tensor& g = tp->grad(ir);
      if (ibase >= 0) detail::acc_add(tp->grad(ibase), g);
      if (ic >= 0) {
        Tensor& dc = tp->grad(ic);
        const float* gp = g.data();
        for (int64_t i = 0; i < r; ++i) {
          const float* row = bankv.data() + i * w;
          double acc = 0.0;
          for (int64_t j = 0; j < w; ++j) acc += static_cast<double>(gp[j]) * row[j];
          dc[i] += static_cast<float>(acc);
        }
      }
      if (ibank >= 0) {
        if (tp->is_factored(ibank)) {
          tp->factored_terms(ibank).push_back(
              FactoredTerm{coeffv.clone(), g.viewed({g.numel()})});
        } else {
          Tensor& db = tp->grad(ibank);
          const float* gp = g.data();
          for (int64_t i = 0; i < r; ++i) {
            const float c = coeffv[i];
            float* row = db.data() + i * w;
            for (int64_t j = 0; j < w; ++j) row[j] += c * gp[j];
          }
        }
      }
    });
  }
  return r2;
}

// skew-symmetric cross-product matrix of a 3-vector
inline Var skew3(const Var& w) {
  require(w.v.numel() == 3, "skew3: expects a 3-vector");
  const float x = w.v[0], y = w.v[1], z = w.v[2];
  Tensor out = Tensor::from({3, 3}, {0, -z, y, z, 0, -x, -y, x, 0});
  Tape* t = merge_tape({&w});
  Var r = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t iw = w.id, ir = r.id;
    t->set_back(ir, [tp, iw, ir]() {
      const Tensor& g = tp->grad(ir);
      Tensor& dw = tp->grad(iw);
      dw[0] += g.at(2, 1) - g.at(1, 2);
      dw[1] += g.at(0, 2) - g.at(2, 0);
      dw[2] += g.at(1, 0) - g.at(0, 1);
    });
  }
  return r;
}

// Ragged argmin across per-part value vectors scattered over n output slots.
// parts[k] carries values for the points listed in idx[k]; every slot must be
// covered by at least one (part, position) pair. Ties resolve to the lowest
// part index, then the lowest position.
struct RaggedMinOut {
  Var values;                  // [n]
  std::vector<int32_t> part;   // argmin part per slot
  std::vector<int64_t> pos;    // argmin position within that part's vector
};

inline RaggedMinOut ragged_min(const std::vector<Var>& parts,
                               const std::vector<std::vector<int64_t>>& idx, int64_t n) {
  require(parts.size() == idx.size(), "ragged_min: parts/idx size mismatch");
  RaggedMinOut res;
  Tensor out({n});
  out.fill(std::numeric_limits<float>::infinity());
  res.part.assign(static_cast<size_t>(n), -1);
  res.pos.assign(static_cast<size_t>(n), -1);
  for (size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].v;
    require(v.numel() == static_cast<int64_t>(idx[k].size()),
            "ragged_min: value/index count mismatch for part " + std::to_string(k));
    for (size_t i = 0; i < idx[k].size(); ++i) {
      const int64_t slot = idx[k][i];
      require(slot >= 0 && slot < n, "ragged_min: slot out of range");
      if (v[static_cast<int64_t>(i)] < out[slot]) {
        out[slot] = v[static_cast<int64_t>(i)];
        res.part[static_cast<size_t>(slot)] = static_cast<int32_t>(k);
        res.pos[static_cast<size_t>(slot)] = static_cast<int64_t>(i);
      }
    }
  }
  for (int64_t i = 0; i < n; ++i)
    require(res.part[static_cast<size_t>(i)] >= 0, "ragged_min: uncovered slot " + std::to_string(i));
  Tape* t = nullptr;
  for (const Var& p : parts) {
    if (!p.recorded()) continue;
    require(t == nullptr || t == p.tape, "ragged_min: inputs on different tapes");
    t = p.tape;
  }
  res.values = make_result(t, std::move(out));
  if (t) {
    Tape* tp = t;
    const int32_t ir = res.values.id;
    std::vector<int32_t> ids(parts.size());
    for (size_t k = 0; k < parts.size(); ++k) ids[k] = parts[k].id;
    auto part = std::make_shared<std::vector<int32_t>>(res.part);
    auto pos = std::make_shared<std::vector<int64_t>>(res.pos);
    auto pids = std::make_shared<std::vector<int32_t>>(std::move(ids));
    t->set_back(ir, [tp, ir, part, pos, pids, n]() {
      const Tensor& g = tp->grad(ir);
      for (int64_t i = 0; i < n; ++i) {
        const int32_t k = (*part)[static_cast<size_t>(i)];
        if ((*pids)[static_cast<size_t>(k)] >= 0)
          tp->grad((*pids)[static_cast<size_t>(k)])[(*pos)[static_cast<size_t>(i)]] += g[i];
      }
    });
  }
  return res;
}

}  // namespace avsdf::num
