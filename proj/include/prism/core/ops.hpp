#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "prism/core/errors.hpp"
#include "prism/core/tensor.hpp"

namespace prism {

namespace detail {

// How one operand maps onto the broadcast output: k -> (k / div) % mod, or an explicit index map.
struct OperandMap {
    std::size_t div = 1, mod = 0;
    std::vector<std::size_t> idx;

    std::size_t operator()(std::size_t k) const { return idx.empty() ? (k / div) % mod : idx[k]; }
};

// Walks an OperandMap in output order without per-element division.
struct OperandCursor {
    const OperandMap& m;
    std::size_t k = 0, c = 0, i = 0;

    explicit OperandCursor(const OperandMap& map) : m(map) {}
    std::size_t get() const { return m.idx.empty() ? i : m.idx[k]; }
    void next() {
        ++k;
        if (++c == m.div) {
            c = 0;
            if (++i == m.mod) i = 0;
        }
    }
};

struct BroadcastPlan {
    Shape out;
    OperandMap a, b;
    bool same = false;
};

// Padded shape s is out with only a contiguous run of axes kept (all others 1): closed form.
inline OperandMap map_operand(const Shape& s, const Shape& out) {
    const std::size_t r = out.size();
    OperandMap m;
    std::size_t lo = r, hi = 0;
    for (std::size_t i = 0; i < r; ++i)
        if (s[i] != 1) {
            lo = std::min(lo, i);
            hi = i + 1;
        }
    bool run = true;
    for (std::size_t i = lo; i < hi; ++i) run = run && s[i] == out[i];
    if (lo >= hi) {
        m.mod = 1;
        return m;
    }
    if (run) {
        m.mod = 1;
        for (std::size_t i = lo; i < hi; ++i) m.mod *= out[i];
        for (std::size_t i = hi; i < r; ++i) m.div *= out[i];
        return m;
    }
    std::vector<std::size_t> st(r);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
        st[i] = s[i] == 1 ? 0 : acc;
        acc *= s[i];
    }
    const std::size_t n = shape_numel(out);
    m.idx.resize(n);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t o = 0;
        for (std::size_t i = 0; i < r; ++i) o += idx[i] * st[i];
        m.idx[k] = o;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out[i]) break;
            idx[i] = 0;
        }
    }
    return m;
}

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r, 1), pb(r, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
    p.out.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        p.out[i] = std::max(pa[i], pb[i]);
    }
    p.a = map_operand(pa, p.out);
    p.b = map_operand(pb, p.out);
    return p;
}

template <class T, class F, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, F f, DA dfa, DB dfb) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
    const std::size_t n = shape_numel(plan->out);
    std::vector<T> out(n);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    if (plan->same) {
        for (std::size_t k = 0; k < n; ++k) out[k] = f(pa[k], pb[k]);
    } else {
        OperandCursor ca(plan->a), cb(plan->b);
        for (std::size_t k = 0; k < n; ++k, ca.next(), cb.next()) out[k] = f(pa[ca.get()], pb[cb.get()]);
    }
    auto na = a.node();
    auto nb = b.node();
    return make_op<T>(plan->out, std::move(out), {&a, &b}, [na, nb, plan, dfa, dfb](Node<T>& self) {
        const T* g = self.grad.data();
        const T* xa = na->data.data();
        const T* xb = nb->data.data();
        T* ga = grad_sink(na);
        T* gb = grad_sink(nb);
        const std::size_t m = self.grad.size();
        if (plan->same) {
            if (ga)
                for (std::size_t k = 0; k < m; ++k) ga[k] += g[k] * dfa(xa[k], xb[k]);
            if (gb)
                for (std::size_t k = 0; k < m; ++k) gb[k] += g[k] * dfb(xa[k], xb[k]);
            return;
        }
        OperandCursor ca(plan->a), cb(plan->b);
        for (std::size_t k = 0; k < m; ++k, ca.next(), cb.next()) {
            const std::size_t ka = ca.get();
            const std::size_t kb = cb.get();
            if (ga) ga[ka] += g[k] * dfa(xa[ka], xb[kb]);
            if (gb) gb[kb] += g[k] * dfb(xa[ka], xb[kb]);
        }
    });
}

// y = f(x) elementwise; df receives (x, y).
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
    std::vector<T> out(x.numel());
    const T* px = x.data().data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(px[k]);
    auto nx = x.node();
    return make_op<T>(x.shape(), std::move(out), {&x}, [nx, df](Node<T>& self) {
        T* gx = grad_sink(nx);
        if (!gx) return;
        const T* g = self.grad.data();
        const T* xs = nx->data.data();
        const T* ys = self.data.data();
        for (std::size_t k = 0; k < self.grad.size(); ++k) gx[k] += g[k] * df(xs[k], ys[k]);
    });
}

template <class T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Rational erf for float32, accurate to a few ulp and free of libm calls so loops vectorize.
inline float fast_erf(float x) {
    x = std::clamp(x, -4.0f, 4.0f);
    const float x2 = x * x;
    float p = -2.72614225801306e-10f;
    p = p * x2 + 2.77068142495902e-08f;
    p = p * x2 - 2.10102402082508e-06f;
    p = p * x2 - 5.69250639462346e-05f;
    p = p * x2 - 7.34990630326855e-04f;
    p = p * x2 - 2.95459980854025e-03f;
    p = p * x2 - 1.60960333262415e-02f;
    float q = -1.45660718464996e-05f;
    q = q * x2 - 2.13374055278905e-04f;
    q = q * x2 - 1.68282697438203e-03f;
    q = q * x2 - 7.37332916720468e-03f;
    q = q * x2 - 1.42647390514189e-02f;
    return x * p / q;
}

template <class T>
inline T normal_cdf(T x) {
    if constexpr (std::is_same_v<T, float>)
        return 0.5f + 0.5f * fast_erf(x * 0.70710678118654752f);
    else
        return T(0.5) * std::erfc(-x / std::numbers::sqrt2_v<T>);
}

template <class T>
inline T normal_pdf(T x) {
    return std::exp(T(-0.5) * x * x) * (std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>);
}

template <class T>
inline T gelu_scalar(T x) {
    return x * normal_cdf(x);
}

template <class T>
inline T gelu_grad_scalar(T x) {
    return normal_cdf(x) + x * normal_pdf(x);
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return detail::gelu_scalar(v); }, [](T v, T) { return detail::gelu_grad_scalar(v); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return detail::sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v * detail::sigmoid_scalar(v); },
        [](T v, T) {
            const T s = detail::sigmoid_scalar(v);
            return s + v * s * (T(1) - s);
        });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.data()) s += v;
    auto nx = x.node();
    return detail::make_op<T>({1}, {s}, {&x}, [nx](detail::Node<T>& self) {
        T* gx = detail::grad_sink(nx);
        if (!gx) return;
        const T g = self.grad[0];
        for (std::size_t k = 0; k < nx->data.size(); ++k) gx[k] += g;
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Row-major product of x[..., k] with w[k, n].
namespace detail {

// c[m,n] += a[m,k] b[k,n], row-major.
template <class T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict row = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
}

// c[k,n] += a[m,k]^T g[m,n]
template <class T>
void gemm_at_acc(const T* __restrict a, const T* __restrict g, T* __restrict c, std::size_t m, std::size_t k,
                 std::size_t n) {
    constexpr std::size_t B = 64;
    for (std::size_t i0 = 0; i0 < m; i0 += B) {
        const std::size_t i1 = std::min(m, i0 + B);
        for (std::size_t p = 0; p < k; ++p) {
            T* __restrict crow = c + p * n;
            for (std::size_t i = i0; i < i1; ++i) {
                const T av = a[i * k + p];
                const T* __restrict grow = g + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
            }
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 1 || b.rank() != 2) throw DimensionError("matmul expects a[...,k] and b[k,n]");
    const std::size_t k = a.shape().back();
    if (b.dim(0) != k)
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const std::size_t n = b.dim(1);
    const std::size_t m = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<T> out(m * n, T(0));
    detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto na = a.node();
    auto nb = b.node();
    return detail::make_op<T>(std::move(out_shape), std::move(out), {&a, &b},
                              [na, nb, m, k, n](detail::Node<T>& self) {
                                  const T* g = self.grad.data();
                                  if (T* ga = detail::grad_sink(na)) {
                                      // ga += g b^T, with b^T laid out so the inner loop is contiguous
                                      std::vector<T> bt(n * k);
                                      const T* pb = nb->data.data();
                                      for (std::size_t p = 0; p < k; ++p)
                                          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb[p * n + j];
                                      detail::gemm_acc(g, bt.data(), ga, m, n, k);
                                  }
                                  if (T* gb = detail::grad_sink(nb)) {
                                      // gb += a^T g
                                      detail::gemm_at_acc(na->data.data(), g, gb, m, k, n);
                                  }
                              });
}

template <class T>
Tensor<T> outer(const Tensor<T>& u, const Tensor<T>& w) {
    if (u.rank() != 1 || w.rank() != 1 || u.numel() != w.numel())
        throw DimensionError("outer expects two vectors of equal length, got " + shape_str(u.shape()) +
                             " and " + shape_str(w.shape()));
    const std::size_t d = u.numel();
    std::vector<T> out(d * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = u[i] * w[j];
    auto nu = u.node();
    auto nw = w.node();
    return detail::make_op<T>({d, d}, std::move(out), {&u, &w}, [nu, nw, d](detail::Node<T>& self) {
        const T* g = self.grad.data();
        if (T* gu = detail::grad_sink(nu))
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) gu[i] += g[i * d + j] * nw->data[j];
        if (T* gw = detail::grad_sink(nw))
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) gw[j] += g[i * d + j] * nu->data[i];
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    auto nx = x.node();
    return detail::make_op<T>(std::move(shape), x.vec(), {&x}, [nx](detail::Node<T>& self) {
        T* gx = detail::grad_sink(nx);
        if (!gx) return;
        for (std::size_t k = 0; k < self.grad.size(); ++k) gx[k] += self.grad[k];
    });
}

// Columns [begin, end) of the last axis.
template <class T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    const std::size_t c = x.shape().back();
    if (begin >= end || end > c) throw DimensionError("slice_last range out of bounds");
    const std::size_t rows = x.numel() / c, w = end - begin;
    Shape s = x.shape();
    s.back() = w;
    std::vector<T> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x[r * c + begin + j];
    auto nx = x.node();
    return detail::make_op<T>(std::move(s), std::move(out), {&x}, [nx, rows, c, w, begin](detail::Node<T>& self) {
        T* gx = detail::grad_sink(nx);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) gx[r * c + begin + j] += self.grad[r * w + j];
    });
}

// x[..., N, d] convolved along N with a per-channel kernel[w, d], left zero padded
// so that out[t] only sees x[t-w+1 .. t]. kernel[w-1] multiplies the current step.
template <class T>
Tensor<T> causal_depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernel) {
    if (kernel.rank() != 2 || kernel.dim(0) < 1) throw ConfigError("conv kernel must be [w>=1, d]");
    if (x.rank() < 2) throw DimensionError("conv input must be [..., N, d]");
    const std::size_t w = kernel.dim(0), d = kernel.dim(1);
    const std::size_t n = x.dim(x.rank() - 2);
    if (x.shape().back() != d) throw DimensionError("conv kernel channels do not match input");
    const std::size_t batches = x.numel() / (n * d);
    std::vector<T> out(x.numel(), T(0));
    const T* px = x.data().data();
    const T* pk = kernel.data().data();
    for (std::size_t b = 0; b < batches; ++b) {
        const T* xb = px + b * n * d;
        T* ob = out.data() + b * n * d;
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < w; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(w - 1);
                if (src < 0) continue;
                const T* xr = xb + static_cast<std::size_t>(src) * d;
                const T* kr = pk + j * d;
                T* orow = ob + t * d;
                for (std::size_t c = 0; c < d; ++c) orow[c] += kr[c] * xr[c];
            }
    }
    auto nx = x.node();
    auto nk = kernel.node();
    return detail::make_op<T>(x.shape(), std::move(out), {&x, &kernel},
                              [nx, nk, batches, n, d, w](detail::Node<T>& self) {
                                  T* gx = detail::grad_sink(nx);
                                  T* gk = detail::grad_sink(nk);
                                  const T* g = self.grad.data();
                                  for (std::size_t b = 0; b < batches; ++b)
                                      for (std::size_t t = 0; t < n; ++t)
                                          for (std::size_t j = 0; j < w; ++j) {
                                              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) -
                                                                         static_cast<std::ptrdiff_t>(w - 1);
                                              if (src < 0) continue;
                                              const std::size_t xi = (b * n + static_cast<std::size_t>(src)) * d;
                                              const T* grow = g + (b * n + t) * d;
                                              for (std::size_t c = 0; c < d; ++c) {
                                                  if (gx) gx[xi + c] += grow[c] * nk->data[j * d + c];
                                                  if (gk) gk[j * d + c] += grow[c] * nx->data[xi + c];
                                              }
                                          }
                              });
}

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) throw DimensionError("layernorm affine size mismatch");
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const T* px = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = px + r * d;
        T mu = 0;
        for (std::size_t c = 0; c < d; ++c) mu += xr[c];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const T h = (xr[c] - mu) * is;
            (*xhat)[r * d + c] = h;
            out[r * d + c] = h * gain[c] + bias[c];
        }
    }
    auto nx = x.node(), ng = gain.node(), nb = bias.node();
    return detail::make_op<T>(x.shape(), std::move(out), {&x, &gain, &bias},
                              [nx, ng, nb, xhat, inv_std, rows, d](detail::Node<T>& self) {
                                  const T* g = self.grad.data();
                                  T* gx = detail::grad_sink(nx);
                                  T* gg = detail::grad_sink(ng);
                                  T* gb = detail::grad_sink(nb);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      const T* gr = g + r * d;
                                      const T* hr = xhat->data() + r * d;
                                      T s1 = 0, s2 = 0;
                                      for (std::size_t c = 0; c < d; ++c) {
                                          if (gg) gg[c] += gr[c] * hr[c];
                                          if (gb) gb[c] += gr[c];
                                          const T dh = gr[c] * ng->data[c];
                                          s1 += dh;
                                          s2 += dh * hr[c];
                                      }
                                      if (!gx) continue;
                                      const T is = (*inv_std)[r];
                                      const T inv_d = T(1) / static_cast<T>(d);
                                      for (std::size_t c = 0; c < d; ++c) {
                                          const T dh = gr[c] * ng->data[c];
                                          gx[r * d + c] += is * (dh - inv_d * s1 - hr[c] * inv_d * s2);
                                      }
                                  }
                              });
}

template <class T>
Tensor<T> softmax_last(const Tensor<T>& x) {
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.numel() / c;
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[r * c + j]);
        T z = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const T e = x[r * c + j] == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(x[r * c + j] - mx);
            out[r * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= z;
    }
    auto nx = x.node();
    return detail::make_op<T>(x.shape(), std::move(out), {&x}, [nx, rows, c](detail::Node<T>& self) {
        T* gx = detail::grad_sink(nx);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.data.data() + r * c;
            const T* g = self.grad.data() + r * c;
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[j] * (g[j] - dot);
        }
    });
}

// Mean negative log-likelihood of targets under softmax(logits) per row.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
    if (logits.rank() != 2) throw DimensionError("cross entropy expects logits [B, V]");
    const std::size_t rows = logits.dim(0), v = logits.dim(1);
    if (targets.size() != rows) throw DimensionError("cross entropy: one target per logits row required");
    auto probs = std::make_shared<std::vector<T>>(logits.numel());
    auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    T loss = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const int y = targets[r];
        if (y < 0 || static_cast<std::size_t>(y) >= v)
            throw DataError("target " + std::to_string(y) + " outside [0, " + std::to_string(v) + ")");
        const T* lr = logits.data().data() + r * v;
        T mx = lr[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
        T z = 0;
        for (std::size_t j = 0; j < v; ++j) {
            const T e = std::exp(lr[j] - mx);
            (*probs)[r * v + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] /= z;
        loss += (mx + std::log(z)) - lr[static_cast<std::size_t>(y)];
    }
    const T inv_rows = rows ? T(1) / static_cast<T>(rows) : T(0);
    loss *= inv_rows;
    auto nl = logits.node();
    return detail::make_op<T>({1}, {loss}, {&logits}, [nl, probs, tgt, rows, v, inv_rows](detail::Node<T>& self) {
        T* gl = detail::grad_sink(nl);
        if (!gl) return;
        const T g = self.grad[0] * inv_rows;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += g * (*probs)[r * v + j];
            gl[r * v + static_cast<std::size_t>((*tgt)[r])] -= g;
        }
    });
}

// Rows of table[V, D] selected by ids; result shaped prefix + [D].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids, Shape prefix) {
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (shape_numel(prefix) != ids.size()) throw DimensionError("embedding ids do not match prefix shape");
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
            throw DataError("token id " + std::to_string(ids[i]) + " outside vocabulary");
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    prefix.push_back(d);
    auto nt = table.node();
    auto saved = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    return detail::make_op<T>(std::move(prefix), std::move(out), {&table}, [nt, saved, d](detail::Node<T>& self) {
        T* gt = detail::grad_sink(nt);
        if (!gt) return;
        for (std::size_t i = 0; i < saved->size(); ++i) {
            T* row = gt + static_cast<std::size_t>((*saved)[i]) * d;
            for (std::size_t c = 0; c < d; ++c) row[c] += self.grad[i * d + c];
        }
    });
}

// Selects rows of x viewed as [M, D] (D = last axis).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
    const std::size_t d = x.shape().back();
    const std::size_t m = x.numel() / d;
    std::vector<T> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m) throw DimensionError("gather_rows index out of range");
        std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
    }
    auto nx = x.node();
    auto saved = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
    return detail::make_op<T>({rows.size(), d}, std::move(out), {&x}, [nx, saved, d](detail::Node<T>& self) {
        T* gx = detail::grad_sink(nx);
        if (!gx) return;
        for (std::size_t i = 0; i < saved->size(); ++i)
            for (std::size_t c = 0; c < d; ++c) gx[(*saved)[i] * d + c] += self.grad[i * d + c];
    });
}

// Rescales each row (last axis) by 1 / max(1, ||row||_2), projecting onto the unit ball.
template <class T>
Tensor<T> clip_rows_to_unit_ball(const Tensor<T>& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    auto norms = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T s = 0;
        for (std::size_t c = 0; c < d; ++c) s += x[r * d + c] * x[r * d + c];
        const T nrm = std::sqrt(s);
        (*norms)[r] = nrm;
        const T f = nrm > T(1) ? T(1) / nrm : T(1);
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] * f;
    }
    auto nx = x.node();
    return detail::make_op<T>(x.shape(), std::move(out), {&x}, [nx, norms, rows, d](detail::Node<T>& self) {
        T* gx = detail::grad_sink(nx);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const T nrm = (*norms)[r];
            const T* g = self.grad.data() + r * d;
            if (nrm <= T(1)) {
                for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[c];
                continue;
            }
            const T* y = self.data.data() + r * d;
            T dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += y[c] * g[c];
            for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += (g[c] - y[c] * dot) / nrm;
        }
    });
}

}  // namespace prism
