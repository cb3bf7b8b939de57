#include "bridgenet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bridgenet {

namespace {

template <typename T>
std::vector<T>& ensure_grad(const std::shared_ptr<TensorImpl<T>>& t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), T(0));
  return t->grad;
}

// True when a tape is recording and any input participates in autodiff.
template <typename T>
bool wants_grad(std::initializer_list<const TensorT<T>*> ins) {
  if (!GradTapeT<T>::recording()) return false;
  for (const TensorT<T>* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
void record(std::initializer_list<const TensorT<T>*> ins, TensorT<T>& out,
            std::function<void()> bw) {
  GradTapeT<T>* tape = GradTapeT<T>::recording();
  out.set_requires_grad(true);
  std::vector<int> nodes;
  nodes.reserve(ins.size());
  for (const TensorT<T>* t : ins)
    if (t->defined()) nodes.push_back(tape->node_for(t->impl()));
  tape->record_op(std::move(nodes), out.impl(), std::move(bw));
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

int64_t prod(const Shape& s, size_t lo, size_t hi) {
  int64_t p = 1;
  for (size_t i = lo; i < hi; ++i) p *= s[i];
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> full(Shape shape, T value) {
  return TensorT<T>(std::move(shape), value);
}

template <typename T>
TensorT<T> rand_uniform(Shape shape, Rng& rng, T lo, T hi) {
  TensorT<T> out(std::move(shape));
  for (auto& v : out.values())
    v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace {
// C[M,N] += A[M,K] * B[K,N], contiguous rows
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[M,K] += G[M,N] * B[K,N]^T  (rows of G dotted with rows of B)
template <typename T>
void gemm_nt_acc(const T* g, const T* b, T* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* grow = g + static_cast<int64_t>(i) * n;
    T* darow = da + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* brow = b + static_cast<int64_t>(p) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB[K,N] += A[M,K]^T * G[M,N]
template <typename T>
void gemm_tn_acc(const T* a, const T* g, T* db, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    const T* grow = g + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      T* dbrow = db + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}
}  // namespace

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<T> out(Shape{m, n});
  gemm_acc(a.data(), b.data(), out.data(), m, k, n);
  if (wants_grad<T>({&a, &b})) {
    record<T>({&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (ai->requires_grad) gemm_nt_acc(g, bi->values.data(), ensure_grad(ai).data(), m, k, n);
      if (bi->requires_grad) gemm_tn_acc(ai->values.data(), g, ensure_grad(bi).data(), m, k, n);
    });
  }
  return out;
}

template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  TensorT<T> out(Shape{bs, m, n});
  for (int i = 0; i < bs; ++i)
    gemm_acc(a.data() + static_cast<int64_t>(i) * m * k,
             b.data() + static_cast<int64_t>(i) * k * n,
             out.data() + static_cast<int64_t>(i) * m * n, m, k, n);
  if (wants_grad<T>({&a, &b})) {
    record<T>({&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), bs, m, k, n] {
      if (oi->grad.empty()) return;
      for (int i = 0; i < bs; ++i) {
        const T* g = oi->grad.data() + static_cast<int64_t>(i) * m * n;
        if (ai->requires_grad)
          gemm_nt_acc(g, bi->values.data() + static_cast<int64_t>(i) * k * n,
                      ensure_grad(ai).data() + static_cast<int64_t>(i) * m * k, m, k, n);
        if (bi->requires_grad)
          gemm_tn_acc(ai->values.data() + static_cast<int64_t>(i) * m * k, g,
                      ensure_grad(bi).data() + static_cast<int64_t>(i) * k * n, m, k, n);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.ndim() < 1 || w.ndim() != 2)
    throw ShapeError("linear: expected x [*, C_in] and w [C_out, C_in]");
  const int cin = w.dim(1), cout = w.dim(0);
  if (x.dim(x.ndim() - 1) != cin)
    throw ShapeError("linear: x shape " + shape_str(x.shape()) +
                     " does not end in C_in=" + std::to_string(cin));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != cout))
    throw ShapeError("linear: bias must be [C_out]");
  const int64_t rows = x.numel() / cin;
  Shape oshape = x.shape();
  oshape.back() = cout;
  TensorT<T> out(oshape);
  const T* xp = x.data();
  const T* wp = w.data();
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * cin;
    T* orow = op + r * cout;
    for (int o = 0; o < cout; ++o) {
      const T* wr = wp + static_cast<int64_t>(o) * cin;
      T acc = b.defined() ? b.data()[o] : T(0);
      for (int c = 0; c < cin; ++c) acc += xr[c] * wr[c];
      orow[o] = acc;
    }
  }
  if (wants_grad<T>({&x, &w, &b})) {
    record<T>({&x, &w, &b}, out,
              [xi = x.impl(), wi = w.impl(), bi = b.defined() ? b.impl() : nullptr,
               oi = out.impl(), rows, cin, cout] {
                if (oi->grad.empty()) return;
                const T* g = oi->grad.data();
                if (xi->requires_grad) {
                  T* dx = ensure_grad(xi).data();
                  const T* wp2 = wi->values.data();
                  for (int64_t r = 0; r < rows; ++r) {
                    const T* grow = g + r * cout;
                    T* dxr = dx + r * cin;
                    for (int o = 0; o < cout; ++o) {
                      const T gv = grow[o];
                      const T* wr = wp2 + static_cast<int64_t>(o) * cin;
                      for (int c = 0; c < cin; ++c) dxr[c] += gv * wr[c];
                    }
                  }
                }
                if (wi->requires_grad) {
                  T* dw = ensure_grad(wi).data();
                  const T* xp2 = xi->values.data();
                  for (int64_t r = 0; r < rows; ++r) {
                    const T* grow = g + r * cout;
                    const T* xr = xp2 + r * cin;
                    for (int o = 0; o < cout; ++o) {
                      const T gv = grow[o];
                      T* dwr = dw + static_cast<int64_t>(o) * cin;
                      for (int c = 0; c < cin; ++c) dwr[c] += gv * xr[c];
                    }
                  }
                }
                if (bi && bi->requires_grad) {
                  T* db = ensure_grad(bi).data();
                  for (int64_t r = 0; r < rows; ++r) {
                    const T* grow = g + r * cout;
                    for (int o = 0; o < cout; ++o) db[o] += grow[o];
                  }
                }
              });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

namespace {
// add/mul allow equal shapes or a single-element operand on either side
enum class BroadcastKind { same, a_scalar, b_scalar };

template <typename T>
BroadcastKind broadcast_kind(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() == b.shape()) return BroadcastKind::same;
  if (a.numel() == 1) return BroadcastKind::a_scalar;
  if (b.numel() == 1) return BroadcastKind::b_scalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
}
}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const BroadcastKind bk = broadcast_kind(a, b, "add");
  const TensorT<T>& big = bk == BroadcastKind::a_scalar ? b : a;
  TensorT<T> out(big.shape());
  const int64_t n = big.numel();
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  if (bk == BroadcastKind::same)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
  else if (bk == BroadcastKind::b_scalar)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[0];
  else
    for (int64_t i = 0; i < n; ++i) op[i] = ap[0] + bp[i];
  if (wants_grad<T>({&a, &b})) {
    record<T>({&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), bk, n] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (ai->requires_grad) {
        T* da = ensure_grad(ai).data();
        if (bk == BroadcastKind::a_scalar)
          for (int64_t i = 0; i < n; ++i) da[0] += g[i];
        else
          for (int64_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (bi->requires_grad) {
        T* db = ensure_grad(bi).data();
        if (bk == BroadcastKind::b_scalar)
          for (int64_t i = 0; i < n; ++i) db[0] += g[i];
        else
          for (int64_t i = 0; i < n; ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  const BroadcastKind bk = broadcast_kind(a, b, "sub");
  const TensorT<T>& big = bk == BroadcastKind::a_scalar ? b : a;
  TensorT<T> out(big.shape());
  const int64_t n = big.numel();
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  if (bk == BroadcastKind::same)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
  else if (bk == BroadcastKind::b_scalar)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] - bp[0];
  else
    for (int64_t i = 0; i < n; ++i) op[i] = ap[0] - bp[i];
  if (wants_grad<T>({&a, &b})) {
    record<T>({&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), bk, n] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (ai->requires_grad) {
        T* da = ensure_grad(ai).data();
        if (bk == BroadcastKind::a_scalar)
          for (int64_t i = 0; i < n; ++i) da[0] += g[i];
        else
          for (int64_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (bi->requires_grad) {
        T* db = ensure_grad(bi).data();
        if (bk == BroadcastKind::b_scalar)
          for (int64_t i = 0; i < n; ++i) db[0] -= g[i];
        else
          for (int64_t i = 0; i < n; ++i) db[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  const BroadcastKind bk = broadcast_kind(a, b, "mul");
  const TensorT<T>& big = bk == BroadcastKind::a_scalar ? b : a;
  TensorT<T> out(big.shape());
  const int64_t n = big.numel();
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  if (bk == BroadcastKind::same)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
  else if (bk == BroadcastKind::b_scalar)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[0];
  else
    for (int64_t i = 0; i < n; ++i) op[i] = ap[0] * bp[i];
  if (wants_grad<T>({&a, &b})) {
    record<T>({&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), bk, n] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      const T* av = ai->values.data();
      const T* bv = bi->values.data();
      if (ai->requires_grad) {
        T* da = ensure_grad(ai).data();
        if (bk == BroadcastKind::same)
          for (int64_t i = 0; i < n; ++i) da[i] += g[i] * bv[i];
        else if (bk == BroadcastKind::b_scalar)
          for (int64_t i = 0; i < n; ++i) da[i] += g[i] * bv[0];
        else
          for (int64_t i = 0; i < n; ++i) da[0] += g[i] * bv[i];
      }
      if (bi->requires_grad) {
        T* db = ensure_grad(bi).data();
        if (bk == BroadcastKind::same)
          for (int64_t i = 0; i < n; ++i) db[i] += g[i] * av[i];
        else if (bk == BroadcastKind::b_scalar)
          for (int64_t i = 0; i < n; ++i) db[0] += g[i] * av[i];
        else
          for (int64_t i = 0; i < n; ++i) db[i] += g[i] * av[0];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c) {
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] * c;
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), c, n] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      T* dx = ensure_grad(xi).data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * c;
    });
  }
  return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), n] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      const T* xv = xi->values.data();
      T* dx = ensure_grad(xi).data();
      for (int64_t i = 0; i < n; ++i)
        if (xv[i] > T(0)) dx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T negative_slope) {
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : negative_slope * xp[i];
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), negative_slope, n] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      const T* xv = xi->values.data();
      T* dx = ensure_grad(xi).data();
      for (int64_t i = 0; i < n; ++i) dx[i] += xv[i] > T(0) ? g[i] : negative_slope * g[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  // exact form: 0.5 x (1 + erf(x / sqrt(2)))
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(xp[i]);
    op[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), n] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      const T* xv = xi->values.data();
      T* dx = ensure_grad(xi).data();
      for (int64_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(xv[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        dx[i] += g[i] * static_cast<T>(cdf + v * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions / normalization
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  TensorT<T> out = TensorT<T>::scalar(acc);
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl()] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T g = oi->grad[0];
      for (auto& d : ensure_grad(xi)) d += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean_all: empty tensor");
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  TensorT<T> out = TensorT<T>::scalar(acc * inv);
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), inv] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T g = oi->grad[0] * inv;
      for (auto& d : ensure_grad(xi)) d += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
  if (x.ndim() < 1) throw ShapeError("softmax_lastdim: rank-0 input");
  const int c = x.dim(x.ndim() - 1);
  if (c <= 0) throw ShapeError("softmax_lastdim: empty last axis");
  const int64_t rows = x.numel() / c;
  TensorT<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * c;
    T* orow = op + r * c;
    T m = xr[0];
    for (int i = 1; i < c; ++i) m = std::max(m, xr[i]);
    T s = T(0);
    for (int i = 0; i < c; ++i) {
      orow[i] = std::exp(xr[i] - m);
      s += orow[i];
    }
    const T inv = T(1) / s;
    for (int i = 0; i < c; ++i) orow[i] *= inv;
  }
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), rows, c] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      const T* y = oi->values.data();
      T* dx = ensure_grad(xi).data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* grow = g + r * c;
        const T* yrow = y + r * c;
        T* dxr = dx + r * c;
        T dot = T(0);
        for (int i = 0; i < c; ++i) dot += grow[i] * yrow[i];
        for (int i = 0; i < c; ++i) dxr[i] += yrow[i] * (grow[i] - dot);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps) {
  if (x.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
  const int c = x.dim(x.ndim() - 1);
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(c) + "]");
  const int64_t rows = x.numel() / c;
  TensorT<T> out(x.shape());
  // cached normalized values and inverse stddevs for the backward pass
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* xp = x.data();
  const T* gp = gamma.data();
  const T* bp = beta.data();
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * c;
    T mu = T(0);
    for (int i = 0; i < c; ++i) mu += xr[i];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (int i = 0; i < c; ++i) {
      const T d = xr[i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = istd;
    T* hrow = xhat->data() + r * c;
    T* orow = op + r * c;
    for (int i = 0; i < c; ++i) {
      hrow[i] = (xr[i] - mu) * istd;
      orow[i] = gp[i] * hrow[i] + bp[i];
    }
  }
  if (wants_grad<T>({&x, &gamma, &beta})) {
    record<T>({&x, &gamma, &beta}, out,
              [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
               xhat, inv_std, rows, c] {
                if (oi->grad.empty()) return;
                const T* g = oi->grad.data();
                const T* gam = gi->values.data();
                for (int64_t r = 0; r < rows; ++r) {
                  const T* grow = g + r * c;
                  const T* hrow = xhat->data() + r * c;
                  if (gi->requires_grad) {
                    T* dg = ensure_grad(gi).data();
                    for (int i = 0; i < c; ++i) dg[i] += grow[i] * hrow[i];
                  }
                  if (bi->requires_grad) {
                    T* db = ensure_grad(bi).data();
                    for (int i = 0; i < c; ++i) db[i] += grow[i];
                  }
                  if (xi->requires_grad) {
                    // dx = istd * (dh - mean(dh) - xhat * mean(dh*xhat)),
                    // with dh = g * gamma
                    T mean_dh = T(0), mean_dhh = T(0);
                    for (int i = 0; i < c; ++i) {
                      const T dh = grow[i] * gam[i];
                      mean_dh += dh;
                      mean_dhh += dh * hrow[i];
                    }
                    mean_dh /= static_cast<T>(c);
                    mean_dhh /= static_cast<T>(c);
                    const T istd = (*inv_std)[static_cast<size_t>(r)];
                    T* dxr = ensure_grad(xi).data() + r * c;
                    for (int i = 0; i < c; ++i) {
                      const T dh = grow[i] * gam[i];
                      dxr[i] += istd * (dh - mean_dh - hrow[i] * mean_dhh);
                    }
                  }
                }
              });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  TensorT<T> out(std::move(shape), x.values());
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl()] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      T* dx = ensure_grad(xi).data();
      const int64_t n = static_cast<int64_t>(xi->values.size());
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

namespace {
std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}
}  // namespace

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& order) {
  const int nd = x.ndim();
  if (static_cast<int>(order.size()) != nd)
    throw ShapeError("permute: order size does not match rank");
  std::vector<char> seen(static_cast<size_t>(nd), 0);
  Shape oshape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    const int a = order[static_cast<size_t>(i)];
    if (a < 0 || a >= nd || seen[static_cast<size_t>(a)])
      throw ShapeError("permute: invalid axis order");
    seen[static_cast<size_t>(a)] = 1;
    oshape[static_cast<size_t>(i)] = x.dim(a);
  }
  TensorT<T> out(oshape);
  const auto xst = row_major_strides(x.shape());
  // stride in x for each output axis
  std::vector<int64_t> step(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) step[static_cast<size_t>(i)] = xst[static_cast<size_t>(order[static_cast<size_t>(i)])];
  const int64_t n = x.numel();
  const T* xp = x.data();
  T* op = out.data();
  std::vector<int> idx(static_cast<size_t>(nd), 0);
  int64_t src = 0;
  for (int64_t i = 0; i < n; ++i) {
    op[i] = xp[src];
    for (int a = nd - 1; a >= 0; --a) {
      if (++idx[static_cast<size_t>(a)] < oshape[static_cast<size_t>(a)]) {
        src += step[static_cast<size_t>(a)];
        break;
      }
      idx[static_cast<size_t>(a)] = 0;
      src -= step[static_cast<size_t>(a)] * (oshape[static_cast<size_t>(a)] - 1);
    }
  }
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), step, oshape, nd, n] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      T* dx = ensure_grad(xi).data();
      std::vector<int> idx2(static_cast<size_t>(nd), 0);
      int64_t src = 0;
      for (int64_t i = 0; i < n; ++i) {
        dx[src] += g[i];
        for (int a = nd - 1; a >= 0; --a) {
          if (++idx2[static_cast<size_t>(a)] < oshape[static_cast<size_t>(a)]) {
            src += step[static_cast<size_t>(a)];
            break;
          }
          idx2[static_cast<size_t>(a)] = 0;
          src -= step[static_cast<size_t>(a)] * (oshape[static_cast<size_t>(a)] - 1);
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int nd = xs[0].ndim();
  if (axis < 0 || axis >= nd) throw ShapeError("concat: axis out of range");
  Shape oshape = xs[0].shape();
  int total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd) throw ShapeError("concat: rank mismatch");
    for (int a = 0; a < nd; ++a)
      if (a != axis && x.dim(a) != oshape[static_cast<size_t>(a)])
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(oshape) + " on non-concat axis");
    total += x.dim(axis);
  }
  oshape[static_cast<size_t>(axis)] = total;
  TensorT<T> out(oshape);
  const int64_t outer = prod(oshape, 0, static_cast<size_t>(axis));
  const int64_t inner = prod(oshape, static_cast<size_t>(axis) + 1, oshape.size());
  const int64_t ostride = static_cast<int64_t>(total) * inner;
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t xstride = static_cast<int64_t>(x.dim(axis)) * inner;
    const T* xp = x.data();
    T* op = out.data() + off;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(op + o * ostride, xp + o * xstride, static_cast<size_t>(xstride) * sizeof(T));
    off += xstride;
  }
  bool any = false;
  for (const auto& x : xs) any = any || x.requires_grad();
  if (any && GradTapeT<T>::recording()) {
    GradTapeT<T>* tape = GradTapeT<T>::recording();
    out.set_requires_grad(true);
    std::vector<int> nodes;
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    std::vector<int64_t> widths;
    for (const auto& x : xs) {
      nodes.push_back(tape->node_for(x.impl()));
      impls.push_back(x.impl());
      widths.push_back(static_cast<int64_t>(x.dim(axis)) * inner);
    }
    tape->record_op(std::move(nodes), out.impl(),
                    [impls, widths, oi = out.impl(), outer, ostride] {
                      if (oi->grad.empty()) return;
                      const T* g = oi->grad.data();
                      int64_t off2 = 0;
                      for (size_t k = 0; k < impls.size(); ++k) {
                        const int64_t w = widths[k];
                        if (impls[k]->requires_grad) {
                          T* dx = ensure_grad(impls[k]).data();
                          for (int64_t o = 0; o < outer; ++o) {
                            const T* gs = g + o * ostride + off2;
                            T* ds = dx + o * w;
                            for (int64_t i = 0; i < w; ++i) ds[i] += gs[i];
                          }
                        }
                        off2 += w;
                      }
                    });
  }
  return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int length) {
  const int nd = x.ndim();
  if (axis < 0 || axis >= nd) throw ShapeError("slice: axis out of range");
  if (start < 0 || length <= 0 || start + length > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for axis size " +
                     std::to_string(x.dim(axis)));
  Shape oshape = x.shape();
  oshape[static_cast<size_t>(axis)] = length;
  TensorT<T> out(oshape);
  const int64_t outer = prod(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t inner = prod(x.shape(), static_cast<size_t>(axis) + 1, x.shape().size());
  const int64_t xstride = static_cast<int64_t>(x.dim(axis)) * inner;
  const int64_t ostride = static_cast<int64_t>(length) * inner;
  const int64_t shift = static_cast<int64_t>(start) * inner;
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(op + o * ostride, xp + o * xstride + shift,
                static_cast<size_t>(ostride) * sizeof(T));
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), outer, xstride, ostride, shift] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      T* dx = ensure_grad(xi).data();
      for (int64_t o = 0; o < outer; ++o) {
        T* ds = dx + o * xstride + shift;
        const T* gs = g + o * ostride;
        for (int64_t i = 0; i < ostride; ++i) ds[i] += gs[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

namespace {
struct ConvDims {
  int cin, h, w;
  int cout, cpg, kh, kw;  // cpg = channels per group on the input side
  int oh, ow;
};

template <typename T>
ConvDims conv_dims(const TensorT<T>& x, const TensorT<T>& wt, int stride, int dilation,
                   int groups, int padding) {
  if (x.ndim() != 3 || wt.ndim() != 4)
    throw ShapeError("conv2d: expected x [C,H,W] and w [C_out,C_in/groups,kh,kw]");
  if (stride < 1 || dilation < 1 || groups < 1 || padding < 0)
    throw ShapeError("conv2d: invalid stride/dilation/groups/padding");
  ConvDims d;
  d.cin = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.cout = wt.dim(0);
  d.cpg = wt.dim(1);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  if (d.cin % groups != 0 || d.cout % groups != 0 || d.cpg != d.cin / groups)
    throw ShapeError("conv2d: channel/group mismatch: x " + shape_str(x.shape()) +
                     ", w " + shape_str(wt.shape()) + ", groups " + std::to_string(groups));
  const int eh = d.h + 2 * padding - dilation * (d.kh - 1) - 1;
  const int ew = d.w + 2 * padding - dilation * (d.kw - 1) - 1;
  if (eh < 0 || ew < 0)
    throw ConfigError("conv2d: nonpositive output size: input " + shape_str(x.shape()) +
                      ", kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                      ", stride " + std::to_string(stride) + ", dilation " +
                      std::to_string(dilation) + ", padding " + std::to_string(padding));
  d.oh = eh / stride + 1;
  d.ow = ew / stride + 1;
  return d;
}

// valid output-column range [lo, hi) for one kernel column offset
inline void ow_range(int off, int stride, int w, int ow, int& lo, int& hi) {
  // input column = ow*stride + off must lie in [0, w)
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  if (w - 1 - off < 0) {  // offset past the right edge: nothing valid
    hi = lo;
    return;
  }
  hi = std::min(ow - 1, (w - 1 - off) / stride) + 1;
  if (hi < lo) hi = lo;
}

template <typename T>
void conv2d_forward_kernel(const T* xp, const T* wp, const T* bp, T* op,
                           const ConvDims& d, int stride, int dilation, int groups,
                           int padding) {
  const int64_t xplane = static_cast<int64_t>(d.h) * d.w;
  const int64_t oplane = static_cast<int64_t>(d.oh) * d.ow;
  const int opg = d.cout / groups;
  for (int oc = 0; oc < d.cout; ++oc) {
    T* oc_base = op + oc * oplane;
    if (bp) {
      const T bv = bp[oc];
      for (int64_t i = 0; i < oplane; ++i) oc_base[i] = bv;
    }
    const int g = oc / opg;
    for (int ic = 0; ic < d.cpg; ++ic) {
      const T* x_base = xp + (static_cast<int64_t>(g) * d.cpg + ic) * xplane;
      const T* w_base = wp + ((static_cast<int64_t>(oc) * d.cpg + ic) * d.kh) * d.kw;
      for (int r = 0; r < d.kh; ++r) {
        const int hoff = r * dilation - padding;
        for (int s = 0; s < d.kw; ++s) {
          const T wv = w_base[r * d.kw + s];
          const int woff = s * dilation - padding;
          int lo, hi;
          ow_range(woff, stride, d.w, d.ow, lo, hi);
          for (int oh = 0; oh < d.oh; ++oh) {
            const int ih = oh * stride + hoff;
            if (ih < 0 || ih >= d.h) continue;
            const T* xrow = x_base + static_cast<int64_t>(ih) * d.w + woff;
            T* orow = oc_base + static_cast<int64_t>(oh) * d.ow;
            if (stride == 1) {
              for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * xrow[ow];
            } else {
              for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * xrow[ow * stride];
            }
          }
        }
      }
    }
  }
}
}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride, int dilation, int groups, int padding) {
  const ConvDims d = conv_dims(x, w, stride, dilation, groups, padding);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.cout))
    throw ShapeError("conv2d: bias must be [C_out]");
  TensorT<T> out(Shape{d.cout, d.oh, d.ow});
  conv2d_forward_kernel(x.data(), w.data(), bias.defined() ? bias.data() : nullptr,
                        out.data(), d, stride, dilation, groups, padding);
  if (wants_grad<T>({&x, &w, &bias})) {
    record<T>({&x, &w, &bias}, out,
              [xi = x.impl(), wi = w.impl(), bi = bias.defined() ? bias.impl() : nullptr,
               oi = out.impl(), d, stride, dilation, groups, padding] {
                if (oi->grad.empty()) return;
                const T* g = oi->grad.data();
                const int64_t xplane = static_cast<int64_t>(d.h) * d.w;
                const int64_t oplane = static_cast<int64_t>(d.oh) * d.ow;
                const int opg = d.cout / groups;
                T* dx = xi->requires_grad ? ensure_grad(xi).data() : nullptr;
                T* dw = wi->requires_grad ? ensure_grad(wi).data() : nullptr;
                if (dx || dw) {
                  for (int oc = 0; oc < d.cout; ++oc) {
                    const T* g_base = g + oc * oplane;
                    const int grp = oc / opg;
                    for (int ic = 0; ic < d.cpg; ++ic) {
                      const int64_t xoff = (static_cast<int64_t>(grp) * d.cpg + ic) * xplane;
                      const T* x_base = xi->values.data() + xoff;
                      T* dx_base = dx ? dx + xoff : nullptr;
                      const int64_t wbase = ((static_cast<int64_t>(oc) * d.cpg + ic) * d.kh) * d.kw;
                      for (int r = 0; r < d.kh; ++r) {
                        const int hoff = r * dilation - padding;
                        for (int s = 0; s < d.kw; ++s) {
                          const int woff = s * dilation - padding;
                          int lo, hi;
                          ow_range(woff, stride, d.w, d.ow, lo, hi);
                          const T wv = wi->values[static_cast<size_t>(wbase + r * d.kw + s)];
                          T wacc = T(0);
                          for (int oh = 0; oh < d.oh; ++oh) {
                            const int ih = oh * stride + hoff;
                            if (ih < 0 || ih >= d.h) continue;
                            const T* grow = g_base + static_cast<int64_t>(oh) * d.ow;
                            const int64_t roff = static_cast<int64_t>(ih) * d.w + woff;
                            if (dx) {
                              T* dxrow = dx_base + roff;
                              if (stride == 1)
                                for (int ow = lo; ow < hi; ++ow) dxrow[ow] += wv * grow[ow];
                              else
                                for (int ow = lo; ow < hi; ++ow) dxrow[ow * stride] += wv * grow[ow];
                            }
                            if (dw) {
                              const T* xrow = x_base + roff;
                              if (stride == 1)
                                for (int ow = lo; ow < hi; ++ow) wacc += grow[ow] * xrow[ow];
                              else
                                for (int ow = lo; ow < hi; ++ow) wacc += grow[ow] * xrow[ow * stride];
                            }
                          }
                          if (dw) dw[wbase + r * d.kw + s] += wacc;
                        }
                      }
                    }
                  }
                }
                if (bi && bi->requires_grad) {
                  T* db = ensure_grad(bi).data();
                  for (int oc = 0; oc < d.cout; ++oc) {
                    const T* g_base = g + oc * oplane;
                    T acc = T(0);
                    for (int64_t i = 0; i < oplane; ++i) acc += g_base[i];
                    db[oc] += acc;
                  }
                }
              });
  }
  return out;
}

template <typename T>
TensorT<T> avg_pool2d(const TensorT<T>& x, int stride) {
  if (x.ndim() != 3) throw ShapeError("avg_pool2d: expected [C,H,W]");
  if (stride < 1) throw ConfigError("avg_pool2d: stride must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % stride != 0 || w % stride != 0)
    throw ConfigError("avg_pool2d: input " + shape_str(x.shape()) +
                      " not divisible by stride " + std::to_string(stride));
  const int oh = h / stride, ow = w / stride;
  TensorT<T> out(Shape{c, oh, ow});
  const T inv = T(1) / static_cast<T>(stride * stride);
  const T* xp = x.data();
  T* op = out.data();
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = xp + static_cast<int64_t>(ci) * h * w;
    T* oc = op + static_cast<int64_t>(ci) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        T acc = T(0);
        for (int r = 0; r < stride; ++r) {
          const T* row = xc + static_cast<int64_t>(i * stride + r) * w + j * stride;
          for (int s = 0; s < stride; ++s) acc += row[s];
        }
        oc[static_cast<int64_t>(i) * ow + j] = acc * inv;
      }
  }
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), c, h, w, oh, ow, stride, inv] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      T* dx = ensure_grad(xi).data();
      for (int ci = 0; ci < c; ++ci) {
        const T* gc = g + static_cast<int64_t>(ci) * oh * ow;
        T* dxc = dx + static_cast<int64_t>(ci) * h * w;
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            const T gv = gc[static_cast<int64_t>(i) * ow + j] * inv;
            for (int r = 0; r < stride; ++r) {
              T* row = dxc + static_cast<int64_t>(i * stride + r) * w + j * stride;
              for (int s = 0; s < stride; ++s) row[s] += gv;
            }
          }
      }
    });
  }
  return out;
}

namespace {
// per-output-position source indices and weights along one axis,
// align_corners=false with edge clamping
template <typename T>
void bilinear_axis_table(int in, int factor, std::vector<int>& i0, std::vector<int>& i1,
                         std::vector<T>& w0, std::vector<T>& w1) {
  const int out = in * factor;
  i0.resize(static_cast<size_t>(out));
  i1.resize(static_cast<size_t>(out));
  w0.resize(static_cast<size_t>(out));
  w1.resize(static_cast<size_t>(out));
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) / factor - 0.5;
    double f = std::floor(src);
    int a = static_cast<int>(f);
    double t = src - f;
    if (a < 0) {
      a = 0;
      t = 0.0;
    }
    int b = a + 1;
    if (b > in - 1) {
      b = in - 1;
      t = 0.0;
    }
    i0[static_cast<size_t>(o)] = a;
    i1[static_cast<size_t>(o)] = b;
    w0[static_cast<size_t>(o)] = static_cast<T>(1.0 - t);
    w1[static_cast<size_t>(o)] = static_cast<T>(t);
  }
}
}  // namespace

template <typename T>
TensorT<T> upsample_bilinear(const TensorT<T>& x, int factor) {
  if (x.ndim() != 3) throw ShapeError("upsample_bilinear: expected [C,H,W]");
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (factor == 1) {
    // still a distinct node so callers can treat it uniformly
    TensorT<T> out(x.shape(), x.values());
    if (wants_grad<T>({&x})) {
      record<T>({&x}, out, [xi = x.impl(), oi = out.impl()] {
        if (oi->grad.empty() || !xi->requires_grad) return;
        const T* g = oi->grad.data();
        T* dx = ensure_grad(xi).data();
        const int64_t n = static_cast<int64_t>(xi->values.size());
        for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
      });
    }
    return out;
  }
  const int oh = h * factor, ow = w * factor;
  auto ytab = std::make_shared<std::vector<int>>();
  auto ytab1 = std::make_shared<std::vector<int>>();
  auto ywt0 = std::make_shared<std::vector<T>>();
  auto ywt1 = std::make_shared<std::vector<T>>();
  auto xtab = std::make_shared<std::vector<int>>();
  auto xtab1 = std::make_shared<std::vector<int>>();
  auto xwt0 = std::make_shared<std::vector<T>>();
  auto xwt1 = std::make_shared<std::vector<T>>();
  bilinear_axis_table<T>(h, factor, *ytab, *ytab1, *ywt0, *ywt1);
  bilinear_axis_table<T>(w, factor, *xtab, *xtab1, *xwt0, *xwt1);
  TensorT<T> out(Shape{c, oh, ow});
  const T* xp = x.data();
  T* op = out.data();
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = xp + static_cast<int64_t>(ci) * h * w;
    T* oc = op + static_cast<int64_t>(ci) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const T* r0 = xc + static_cast<int64_t>((*ytab)[static_cast<size_t>(oy)]) * w;
      const T* r1 = xc + static_cast<int64_t>((*ytab1)[static_cast<size_t>(oy)]) * w;
      const T wy0 = (*ywt0)[static_cast<size_t>(oy)], wy1 = (*ywt1)[static_cast<size_t>(oy)];
      T* orow = oc + static_cast<int64_t>(oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = (*xtab)[static_cast<size_t>(ox)], x1 = (*xtab1)[static_cast<size_t>(ox)];
        const T wx0 = (*xwt0)[static_cast<size_t>(ox)], wx1 = (*xwt1)[static_cast<size_t>(ox)];
        orow[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
      }
    }
  }
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), ytab, ytab1, ywt0, ywt1, xtab,
                          xtab1, xwt0, xwt1, c, h, w, oh, ow] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      T* dx = ensure_grad(xi).data();
      for (int ci = 0; ci < c; ++ci) {
        const T* gc = g + static_cast<int64_t>(ci) * oh * ow;
        T* dxc = dx + static_cast<int64_t>(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          T* d0 = dxc + static_cast<int64_t>((*ytab)[static_cast<size_t>(oy)]) * w;
          T* d1 = dxc + static_cast<int64_t>((*ytab1)[static_cast<size_t>(oy)]) * w;
          const T wy0 = (*ywt0)[static_cast<size_t>(oy)], wy1 = (*ywt1)[static_cast<size_t>(oy)];
          const T* grow = gc + static_cast<int64_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int x0 = (*xtab)[static_cast<size_t>(ox)], x1 = (*xtab1)[static_cast<size_t>(ox)];
            const T wx0 = (*xwt0)[static_cast<size_t>(ox)], wx1 = (*xwt1)[static_cast<size_t>(ox)];
            const T gv = grow[ox];
            d0[x0] += gv * wy0 * wx0;
            d0[x1] += gv * wy0 * wx1;
            d1[x0] += gv * wy1 * wx0;
            d1[x1] += gv * wy1 * wx1;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// fused losses
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax_xent_2d(const TensorT<T>& logits, const IntTensor& labels,
                           int ignore_index) {
  if (logits.ndim() != 3) throw ShapeError("softmax_xent_2d: logits must be [K,H,W]");
  const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (labels.shape() != Shape{h, w})
    throw ShapeError("softmax_xent_2d: labels shape " + shape_str(labels.shape()) +
                     " does not match logits " + shape_str(logits.shape()));
  const int64_t plane = static_cast<int64_t>(h) * w;
  const T* lp = logits.data();
  const int32_t* yp = labels.values().data();
  int64_t valid = 0;
  double total = 0.0;
  for (int64_t p = 0; p < plane; ++p) {
    const int32_t y = yp[p];
    if (y == ignore_index) continue;
    if (y < 0 || y >= k)
      throw ValueError("softmax_xent_2d: label " + std::to_string(y) +
                       " out of range for " + std::to_string(k) + " classes");
    T m = lp[p];
    for (int c = 1; c < k; ++c) m = std::max(m, lp[c * plane + p]);
    double s = 0.0;
    for (int c = 0; c < k; ++c) s += std::exp(static_cast<double>(lp[c * plane + p] - m));
    total += std::log(s) + static_cast<double>(m) - static_cast<double>(lp[y * plane + p]);
    ++valid;
  }
  if (valid == 0) throw ValueError("softmax_xent_2d: no valid pixels (empty mask)");
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(valid)));
  if (wants_grad<T>({&logits})) {
    record<T>({&logits}, out,
              [xi = logits.impl(), oi = out.impl(), labels, ignore_index, k, plane, valid] {
                if (oi->grad.empty() || !xi->requires_grad) return;
                const T gscale = oi->grad[0] / static_cast<T>(valid);
                const T* lp2 = xi->values.data();
                const int32_t* yp2 = labels.values().data();
                T* dx = ensure_grad(xi).data();
                for (int64_t p = 0; p < plane; ++p) {
                  const int32_t y = yp2[p];
                  if (y == ignore_index) continue;
                  T m = lp2[p];
                  for (int c = 1; c < k; ++c) m = std::max(m, lp2[c * plane + p]);
                  T s = T(0);
                  for (int c = 0; c < k; ++c) s += std::exp(lp2[c * plane + p] - m);
                  const T inv = T(1) / s;
                  for (int c = 0; c < k; ++c) {
                    T sm = std::exp(lp2[c * plane + p] - m) * inv;
                    if (c == y) sm -= T(1);
                    dx[c * plane + p] += gscale * sm;
                  }
                }
              });
  }
  return out;
}

namespace {
template <typename T>
void check_masked_shapes(const TensorT<T>& pred, const TensorT<T>& target,
                         const TensorT<T>& mask, const char* op) {
  check_same_shape(pred, target, op);
  if (pred.ndim() != 3) throw ShapeError(std::string(op) + ": expected [C,H,W]");
  if (mask.shape() != Shape{pred.dim(1), pred.dim(2)})
    throw ShapeError(std::string(op) + ": mask shape " + shape_str(mask.shape()) +
                     " does not match map " + shape_str(pred.shape()));
}
}  // namespace

template <typename T>
TensorT<T> masked_l1(const TensorT<T>& pred, const TensorT<T>& target,
                     const TensorT<T>& mask) {
  check_masked_shapes(pred, target, mask, "masked_l1");
  const int c = pred.dim(0);
  const int64_t plane = static_cast<int64_t>(pred.dim(1)) * pred.dim(2);
  const T* pp = pred.data();
  const T* tp = target.data();
  const T* mp = mask.data();
  int64_t valid = 0;
  for (int64_t p = 0; p < plane; ++p)
    if (mp[p] > T(0)) ++valid;
  if (valid == 0) throw ValueError("masked_l1: no valid pixels (empty mask)");
  double total = 0.0;
  for (int ci = 0; ci < c; ++ci) {
    const T* pc = pp + ci * plane;
    const T* tc = tp + ci * plane;
    for (int64_t p = 0; p < plane; ++p)
      if (mp[p] > T(0)) total += std::abs(static_cast<double>(pc[p] - tc[p]));
  }
  const int64_t n = valid * c;
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  if (wants_grad<T>({&pred})) {
    record<T>({&pred, &target, &mask}, out,
              [pi = pred.impl(), ti = target.impl(), mi = mask.impl(), oi = out.impl(),
               c, plane, n] {
                if (oi->grad.empty() || !pi->requires_grad) return;
                const T gscale = oi->grad[0] / static_cast<T>(n);
                const T* pv = pi->values.data();
                const T* tv = ti->values.data();
                const T* mv = mi->values.data();
                T* dx = ensure_grad(pi).data();
                for (int ci = 0; ci < c; ++ci) {
                  const int64_t off = ci * plane;
                  for (int64_t p = 0; p < plane; ++p) {
                    if (mv[p] <= T(0)) continue;
                    const T diff = pv[off + p] - tv[off + p];
                    if (diff > T(0))
                      dx[off + p] += gscale;
                    else if (diff < T(0))
                      dx[off + p] -= gscale;
                  }
                }
              });
  }
  return out;
}

template <typename T>
TensorT<T> cosine_loss(const TensorT<T>& pred, const TensorT<T>& target,
                       const TensorT<T>& mask) {
  check_masked_shapes(pred, target, mask, "cosine_loss");
  if (pred.dim(0) != 3) throw ShapeError("cosine_loss: expected 3 channels");
  const int64_t plane = static_cast<int64_t>(pred.dim(1)) * pred.dim(2);
  const T* pp = pred.data();
  const T* tp = target.data();
  const T* mp = mask.data();
  constexpr double eps = 1e-12;
  int64_t valid = 0;
  double total = 0.0;
  for (int64_t p = 0; p < plane; ++p) {
    if (mp[p] <= T(0)) continue;
    ++valid;
    const double px = pp[p], py = pp[plane + p], pz = pp[2 * plane + p];
    const double tx = tp[p], ty = tp[plane + p], tz = tp[2 * plane + p];
    const double r = std::sqrt(px * px + py * py + pz * pz + eps);
    const double dot = px * tx + py * ty + pz * tz;
    total += 1.0 - dot / r;
  }
  if (valid == 0) throw ValueError("cosine_loss: no valid pixels (empty mask)");
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(valid)));
  if (wants_grad<T>({&pred})) {
    record<T>({&pred, &target, &mask}, out,
              [pi = pred.impl(), ti = target.impl(), mi = mask.impl(), oi = out.impl(),
               plane, valid] {
                if (oi->grad.empty() || !pi->requires_grad) return;
                const double gscale =
                    static_cast<double>(oi->grad[0]) / static_cast<double>(valid);
                const T* pv = pi->values.data();
                const T* tv = ti->values.data();
                const T* mv = mi->values.data();
                T* dx = ensure_grad(pi).data();
                for (int64_t p = 0; p < plane; ++p) {
                  if (mv[p] <= T(0)) continue;
                  const double px = pv[p], py = pv[plane + p], pz = pv[2 * plane + p];
                  const double tx = tv[p], ty = tv[plane + p], tz = tv[2 * plane + p];
                  const double r2 = px * px + py * py + pz * pz + eps;
                  const double r = std::sqrt(r2);
                  const double dot = px * tx + py * ty + pz * tz;
                  // d(1 - dot/r)/dp = -(t/r - dot p / r^3)
                  const double k = dot / (r2 * r);
                  dx[p] += static_cast<T>(gscale * (px * k - tx / r));
                  dx[plane + p] += static_cast<T>(gscale * (py * k - ty / r));
                  dx[2 * plane + p] += static_cast<T>(gscale * (pz * k - tz / r));
                }
              });
  }
  return out;
}

template <typename T>
TensorT<T> weighted_bce(const TensorT<T>& logits, const TensorT<T>& target,
                        const TensorT<T>& mask) {
  // accept [H,W] or [1,H,W] logits/targets
  Shape ls = logits.shape();
  if (ls.size() == 3 && ls[0] == 1) ls.erase(ls.begin());
  Shape ts = target.shape();
  if (ts.size() == 3 && ts[0] == 1) ts.erase(ts.begin());
  if (ls.size() != 2 || ts != ls || mask.shape() != ls)
    throw ShapeError("weighted_bce: shape mismatch: logits " + shape_str(logits.shape()) +
                     ", target " + shape_str(target.shape()) + ", mask " +
                     shape_str(mask.shape()));
  const int64_t n = shape_numel(ls);
  const T* zp = logits.data();
  const T* yp = target.data();
  const T* mp = mask.data();
  int64_t valid = 0, pos = 0;
  for (int64_t p = 0; p < n; ++p) {
    if (mp[p] <= T(0)) continue;
    ++valid;
    if (yp[p] > T(0.5)) ++pos;
  }
  if (valid == 0) throw ValueError("weighted_bce: no valid pixels (empty mask)");
  // positives weighted by the negative fraction and vice versa, so sparse
  // boundary maps are not drowned out by the background
  const double beta = static_cast<double>(valid - pos) / static_cast<double>(valid);
  const double wpos = beta, wneg = 1.0 - beta;
  auto softplus = [](double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  };
  double total = 0.0;
  for (int64_t p = 0; p < n; ++p) {
    if (mp[p] <= T(0)) continue;
    const double z = zp[p];
    if (yp[p] > T(0.5))
      total += wpos * softplus(-z);
    else
      total += wneg * softplus(z);
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(valid)));
  if (wants_grad<T>({&logits})) {
    record<T>({&logits, &target, &mask}, out,
              [zi = logits.impl(), yi = target.impl(), mi = mask.impl(), oi = out.impl(),
               n, valid, wpos, wneg] {
                if (oi->grad.empty() || !zi->requires_grad) return;
                const double gscale =
                    static_cast<double>(oi->grad[0]) / static_cast<double>(valid);
                const T* zv = zi->values.data();
                const T* yv = yi->values.data();
                const T* mv = mi->values.data();
                T* dx = ensure_grad(zi).data();
                for (int64_t p = 0; p < n; ++p) {
                  if (mv[p] <= T(0)) continue;
                  const double z = zv[p];
                  const double sig = 1.0 / (1.0 + std::exp(-z));
                  const double d = yv[p] > T(0.5) ? wpos * (sig - 1.0) : wneg * sig;
                  dx[p] += static_cast<T>(gscale * d);
                }
              });
  }
  return out;
}

// ---------------------------------------------------------------------------
// extension hook
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> custom_unary(const TensorT<T>& x, const std::function<T(T)>& fwd,
                        const std::function<T(T)>& dfdx) {
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);
  if (wants_grad<T>({&x})) {
    record<T>({&x}, out, [xi = x.impl(), oi = out.impl(), dfdx, n] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T* g = oi->grad.data();
      const T* xv = xi->values.data();
      T* dx = ensure_grad(xi).data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * dfdx(xv[i]);
    });
  }
  return out;
}

template <typename T>
void backward(const TensorT<T>& loss) {
  GradTapeT<T>* tape = GradTapeT<T>::active();
  if (!tape) throw ValueError("backward: no active tape");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define BRIDGENET_INSTANTIATE_OPS(T)                                                     \
  template TensorT<T> full<T>(Shape, T);                                                 \
  template TensorT<T> rand_uniform<T>(Shape, Rng&, T, T);                                \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                   \
  template TensorT<T> bmm<T>(const TensorT<T>&, const TensorT<T>&);                      \
  template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&); \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                      \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                      \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                      \
  template TensorT<T> scale<T>(const TensorT<T>&, T);                                    \
  template TensorT<T> relu<T>(const TensorT<T>&);                                        \
  template TensorT<T> leaky_relu<T>(const TensorT<T>&, T);                               \
  template TensorT<T> gelu<T>(const TensorT<T>&);                                        \
  template TensorT<T> sum_all<T>(const TensorT<T>&);                                     \
  template TensorT<T> mean_all<T>(const TensorT<T>&);                                    \
  template TensorT<T> softmax_lastdim<T>(const TensorT<T>&);                             \
  template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&,                \
                                    const TensorT<T>&, T);                               \
  template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                              \
  template TensorT<T> permute<T>(const TensorT<T>&, const std::vector<int>&);            \
  template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, int);                    \
  template TensorT<T> slice<T>(const TensorT<T>&, int, int, int);                        \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                int, int, int, int);                                     \
  template TensorT<T> avg_pool2d<T>(const TensorT<T>&, int);                             \
  template TensorT<T> upsample_bilinear<T>(const TensorT<T>&, int);                      \
  template TensorT<T> softmax_xent_2d<T>(const TensorT<T>&, const IntTensor&, int);      \
  template TensorT<T> masked_l1<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                   const TensorT<T>&);                                   \
  template TensorT<T> cosine_loss<T>(const TensorT<T>&, const TensorT<T>&,               \
                                     const TensorT<T>&);                                 \
  template TensorT<T> weighted_bce<T>(const TensorT<T>&, const TensorT<T>&,              \
                                      const TensorT<T>&);                                \
  template TensorT<T> custom_unary<T>(const TensorT<T>&, const std::function<T(T)>&,     \
                                      const std::function<T(T)>&);                       \
  template void backward<T>(const TensorT<T>&);

BRIDGENET_INSTANTIATE_OPS(float)
BRIDGENET_INSTANTIATE_OPS(double)

#undef BRIDGENET_INSTANTIATE_OPS

}  // namespace bridgenet
