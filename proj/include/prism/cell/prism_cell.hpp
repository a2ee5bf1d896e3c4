#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "prism/core/errors.hpp"
#include "prism/core/linalg.hpp"
#include "prism/core/ops.hpp"
#include "prism/core/random.hpp"
#include "prism/core/scan.hpp"
#include "prism/core/tensor.hpp"

namespace prism {

struct PrismConfig {
    std::size_t d = 16;
    std::size_t L = 2;
    std::size_t w = 4;
    std::size_t chunk = 16;
    bool normalize_k = true;

    void validate() const {
        if (d < 1) throw ConfigError("prism: d must be >= 1");
        if (L < 1) throw ConfigError("prism: L must be >= 1");
        if (w < 1) throw ConfigError("prism: conv width w must be >= 1");
        if (chunk < 1) throw ConfigError("prism: chunk must be >= 1");
    }
};

// Projections are stored input-major ([d_in, d_out]) so that row vectors apply as u @ W.
template <class T>
struct PrismParams {
    Tensor<T> conv;  // [w, d]
    Tensor<T> Wq, Wv;
    Tensor<T> Wa;  // [d, 1]
    std::vector<Tensor<T>> Wk, Wp, Wb;
    Tensor<T> Wo;

    static PrismParams init(const PrismConfig& cfg, Rng& rng, bool requires_grad = true) {
        cfg.validate();
        const std::size_t d = cfg.d;
        const T s = T(1) / std::sqrt(static_cast<T>(d));
        PrismParams p;
        // Conv starts near a pass-through of the current token, plus small taps on history.
        p.conv = Tensor<T>::randn({cfg.w, d}, rng, T(0.2), requires_grad);
        for (std::size_t c = 0; c < d; ++c) p.conv[(cfg.w - 1) * d + c] += T(1);
        p.Wq = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wv = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        // Positive mean on the decay weights: the anchor is mostly positive after silu, so alpha
        // starts well above 1/2 and the state keeps memory long enough to learn recall.
        p.Wa = Tensor<T>::randn({d, 1}, rng, s, requires_grad);
        for (std::size_t i = 0; i < d; ++i) p.Wa[i] += T(1);
        for (std::size_t l = 0; l < cfg.L; ++l) {
            p.Wk.push_back(Tensor<T>::randn({d, d}, rng, s, requires_grad));
            p.Wp.push_back(Tensor<T>::randn({d, d}, rng, s, requires_grad));
            p.Wb.push_back(Tensor<T>::randn({d, 1}, rng, s, requires_grad));
        }
        p.Wo = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        return p;
    }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out{conv, Wq, Wv, Wa};
        for (std::size_t l = 0; l < Wk.size(); ++l) {
            out.push_back(Wk[l]);
            out.push_back(Wp[l]);
            out.push_back(Wb[l]);
        }
        out.push_back(Wo);
        return out;
    }

    std::size_t L() const { return Wk.size(); }
    std::size_t d() const { return Wq.dim(0); }
};

template <class T>
struct StepTerms {
    std::vector<T> u, q, v;
    T alpha = 0;
    std::vector<std::vector<T>> k, p;
    std::vector<T> beta;
};

template <class T>
struct TransitionPair {
    // structured: A = alpha (I - beta k k^T); composed pairs only carry the dense form
    T alpha = 1, beta = 0;
    std::vector<T> k;
    bool structured = false;
    Matrix<T> A, B;

    static TransitionPair identity(std::size_t d) {
        TransitionPair t;
        t.k.assign(d, T(0));
        t.A = Matrix<T>::identity(d);
        t.B = Matrix<T>(d, d);
        return t;
    }
};

template <class T>
struct RankAccumulation {
    Matrix<T> B;
    std::vector<std::vector<T>> residuals;  // r^(1) .. r^(L+1)
    std::vector<std::vector<T>> deltas;
};

// u = silu(causal_conv(x)). Works for [N, d] and [batch, N, d].
template <class T>
Tensor<T> compute_anchor(const Tensor<T>& x, const PrismParams<T>& params) {
    return silu(causal_depthwise_conv1d(x, params.conv));
}

// Differentiable projections of the anchor, shaped like u (gates with last dim 1).
template <class T>
struct Projections {
    Tensor<T> q, v, alpha;
    std::vector<Tensor<T>> k, p, beta;
};

template <class T>
Projections<T> project(const Tensor<T>& u, const PrismParams<T>& params, const PrismConfig& cfg) {
    Projections<T> pr;
    pr.q = matmul(u, params.Wq);
    pr.v = matmul(u, params.Wv);
    pr.alpha = sigmoid(matmul(u, params.Wa));
    for (std::size_t l = 0; l < params.L(); ++l) {
        auto k = matmul(u, params.Wk[l]);
        if (l == 0 && cfg.normalize_k) k = clip_rows_to_unit_ball(k);
        pr.k.push_back(k);
        pr.p.push_back(matmul(u, params.Wp[l]));
        pr.beta.push_back(sigmoid(matmul(u, params.Wb[l])));
    }
    return pr;
}

// Per-step terms for a single sequence u [N, d]; no graph is recorded.
template <class T>
std::vector<StepTerms<T>> compute_step_terms(const Tensor<T>& u, const PrismParams<T>& params,
                                             const PrismConfig& cfg) {
    if (u.rank() != 2) throw DimensionError("compute_step_terms expects u [N, d]");
    NoGradGuard ng;
    const auto pr = project(u, params, cfg);
    const std::size_t n = u.dim(0), d = u.dim(1), L = params.L();
    std::vector<StepTerms<T>> out(n);
    auto row = [d](const Tensor<T>& t, std::size_t i) {
        return std::vector<T>(t.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                              t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    };
    for (std::size_t t = 0; t < n; ++t) {
        auto& s = out[t];
        s.u = row(u, t);
        s.q = row(pr.q, t);
        s.v = row(pr.v, t);
        s.alpha = pr.alpha[t];
        for (std::size_t l = 0; l < L; ++l) {
            s.k.push_back(row(pr.k[l], t));
            s.p.push_back(row(pr.p[l], t));
            s.beta.push_back(pr.beta[l][t]);
        }
    }
    return out;
}

template <class T>
RankAccumulation<T> rank_accumulate(const StepTerms<T>& terms, const std::vector<T>& v, const std::vector<T>& u) {
    const std::size_t d = u.size(), L = terms.k.size();
    if (L < 1) throw ConfigError("rank_accumulate needs L >= 1");
    RankAccumulation<T> out;
    out.B = Matrix<T>(d, d);
    std::vector<T> r(d);
    for (std::size_t i = 0; i < d; ++i) r[i] = v[i] - u[i];
    out.residuals.push_back(r);
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<T> delta(d);
        for (std::size_t i = 0; i < d; ++i) delta[i] = detail::gelu_scalar(terms.p[l][i] * r[i]);
        const T b = terms.beta[l];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) out.B(i, j) += b * delta[i] * terms.k[l][j];
        for (std::size_t i = 0; i < d; ++i) r[i] -= delta[i];
        out.residuals.push_back(r);
        out.deltas.push_back(std::move(delta));
    }
    return out;
}

template <class T>
TransitionPair<T> build_transition(const StepTerms<T>& terms, const Matrix<T>& B) {
    const std::size_t d = terms.k.at(0).size();
    TransitionPair<T> tp;
    tp.alpha = terms.alpha;
    tp.beta = terms.beta.at(0);
    tp.k = terms.k[0];
    tp.A = Matrix<T>(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            tp.A(i, j) = tp.alpha * ((i == j ? T(1) : T(0)) - tp.beta * tp.k[i] * tp.k[j]);
    tp.B = B;
    tp.structured = true;
    return tp;
}

// x A with A in structured form: alpha (x - beta (x.k) k^T) for a row vector x.
template <class T>
std::vector<T> apply_structured(const TransitionPair<T>& tp, const std::vector<T>& x) {
    T dot = 0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * tp.k[i];
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = tp.alpha * (x[i] - tp.beta * dot * tp.k[i]);
    return y;
}

// X A_p, using the structured form when p has one.
template <class T>
Matrix<T> right_apply(const Matrix<T>& X, const TransitionPair<T>& p) {
    if (!p.structured) return X * p.A;
    Matrix<T> Y(X.rows, X.cols);
    for (std::size_t i = 0; i < X.rows; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < X.cols; ++j) dot += X(i, j) * p.k[j];
        const T c = p.beta * dot;
        for (std::size_t j = 0; j < X.cols; ++j) Y(i, j) = p.alpha * (X(i, j) - c * p.k[j]);
    }
    return Y;
}

// Composition for S_t = S_{t-1} A_t + B_t: first a, then b.
template <class T>
TransitionPair<T> compose_transitions(const TransitionPair<T>& a, const TransitionPair<T>& b) {
    if (a.A.rows != b.A.rows) throw DimensionError("compose_transitions: dimension mismatch");
    TransitionPair<T> out;
    out.A = right_apply(a.A, b);
    out.B = right_apply(a.B, b) + b.B;
    out.alpha = a.alpha * b.alpha;
    out.beta = T(0);
    out.k.assign(a.A.rows, T(0));
    return out;
}

namespace detail {

// Fused differentiable recurrence over [batch, N, d] streams. Produces the readout
// o_t = S_t q_t with S_t = alpha_t (S_{t-1} - beta1 (S_{t-1} k1) k1^T) + sum_l beta_l delta_l k_l^T.
template <class T>
struct RecurrenceOut {
    Tensor<T> o;
    std::vector<Matrix<T>> final_states;
};

template <class T>
RecurrenceOut<T> prism_recurrence(const Tensor<T>& alpha, const std::vector<Tensor<T>>& beta,
                                  const std::vector<Tensor<T>>& k, const std::vector<Tensor<T>>& delta,
                                  const Tensor<T>& q, const std::vector<Matrix<T>>* s0 = nullptr) {
    const std::size_t d = q.shape().back();
    const std::size_t n = q.dim(q.rank() - 2);
    const std::size_t batch = q.numel() / (n * d);
    const std::size_t L = k.size();
    const std::size_t dd = d * d;
    // states[b][t] = S_t for t = 0..n (S_0 initial)
    auto states = std::make_shared<std::vector<T>>(batch * (n + 1) * dd, T(0));
    std::vector<T> out(q.numel(), T(0));
    std::vector<T> sk(d);
    for (std::size_t b = 0; b < batch; ++b) {
        T* S = states->data() + b * (n + 1) * dd;
        if (s0) {
            const auto& m = (*s0)[s0->size() == 1 ? 0 : b];
            std::copy(m.a.begin(), m.a.end(), S);
        }
        for (std::size_t t = 0; t < n; ++t) {
            const T* Sp = S + t * dd;
            T* Sn = S + (t + 1) * dd;
            const std::size_t row = b * n + t;
            const T a = alpha[row];
            const T b1 = beta[0][row];
            const T* k1 = k[0].data().data() + row * d;
            for (std::size_t i = 0; i < d; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < d; ++j) acc += Sp[i * d + j] * k1[j];
                sk[i] = acc;
            }
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) Sn[i * d + j] = a * (Sp[i * d + j] - b1 * sk[i] * k1[j]);
            for (std::size_t l = 0; l < L; ++l) {
                const T bl = beta[l][row];
                const T* kl = k[l].data().data() + row * d;
                const T* dl = delta[l].data().data() + row * d;
                for (std::size_t i = 0; i < d; ++i) {
                    const T c = bl * dl[i];
                    for (std::size_t j = 0; j < d; ++j) Sn[i * d + j] += c * kl[j];
                }
            }
            const T* qt = q.data().data() + row * d;
            T* ot = out.data() + row * d;
            bool finite = true;
            for (std::size_t i = 0; i < d; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    acc += Sn[i * d + j] * qt[j];
                    finite = finite && std::isfinite(Sn[i * d + j]);
                }
                ot[i] = acc;
            }
            if (!finite) throw NumericError("non-finite value in PRISM recurrence", static_cast<std::ptrdiff_t>(t));
        }
    }
    RecurrenceOut<T> res;
    res.final_states.resize(batch, Matrix<T>(d, d));
    for (std::size_t b = 0; b < batch; ++b) {
        const T* S = states->data() + (b * (n + 1) + n) * dd;
        std::copy(S, S + dd, res.final_states[b].a.begin());
    }

    std::vector<Tensor<T>> inputs{alpha, q};
    for (std::size_t l = 0; l < L; ++l) {
        inputs.push_back(beta[l]);
        inputs.push_back(k[l]);
        inputs.push_back(delta[l]);
    }
    auto na = alpha.node(), nq = q.node();
    std::vector<NodePtr<T>> nb, nk, nd;
    for (std::size_t l = 0; l < L; ++l) {
        nb.push_back(beta[l].node());
        nk.push_back(k[l].node());
        nd.push_back(delta[l].node());
    }
    res.o = make_op_dynamic<T>(q.shape(), std::move(out), inputs,
                               [=](Node<T>& self) {
                                   T* ga = grad_sink(na);
                                   T* gq = grad_sink(nq);
                                   std::vector<T*> gb(L), gk(L), gd(L);
                                   for (std::size_t l = 0; l < L; ++l) {
                                       gb[l] = grad_sink(nb[l]);
                                       gk[l] = grad_sink(nk[l]);
                                       gd[l] = grad_sink(nd[l]);
                                   }
                                   std::vector<T> G(dd), dP(dd), s(d), e(d), gk_l(d);
                                   for (std::size_t b = 0; b < batch; ++b) {
                                       std::fill(G.begin(), G.end(), T(0));
                                       const T* Sb = states->data() + b * (n + 1) * dd;
                                       for (std::size_t t = n; t-- > 0;) {
                                           const std::size_t row = b * n + t;
                                           const T* St = Sb + (t + 1) * dd;
                                           const T* Sp = Sb + t * dd;
                                           const T* go = self.grad.data() + row * d;
                                           const T* qt = nq->data.data() + row * d;
                                           // readout o = S_t q
                                           for (std::size_t i = 0; i < d; ++i)
                                               for (std::size_t j = 0; j < d; ++j) G[i * d + j] += go[i] * qt[j];
                                           if (gq)
                                               for (std::size_t j = 0; j < d; ++j) {
                                                   T acc = 0;
                                                   for (std::size_t i = 0; i < d; ++i) acc += St[i * d + j] * go[i];
                                                   gq[row * d + j] += acc;
                                               }
                                           // injection terms
                                           for (std::size_t l = 0; l < L; ++l) {
                                               const T* kl = nk[l]->data.data() + row * d;
                                               const T* dl = nd[l]->data.data() + row * d;
                                               const T bl = nb[l]->data[row];
                                               for (std::size_t i = 0; i < d; ++i) {
                                                   T acc = 0;
                                                   for (std::size_t j = 0; j < d; ++j) acc += G[i * d + j] * kl[j];
                                                   gk_l[i] = acc;  // (G k_l)_i
                                               }
                                               if (gb[l]) {
                                                   T acc = 0;
                                                   for (std::size_t i = 0; i < d; ++i) acc += dl[i] * gk_l[i];
                                                   gb[l][row] += acc;
                                               }
                                               if (gd[l])
                                                   for (std::size_t i = 0; i < d; ++i) gd[l][row * d + i] += bl * gk_l[i];
                                               if (gk[l])
                                                   for (std::size_t j = 0; j < d; ++j) {
                                                       T acc = 0;
                                                       for (std::size_t i = 0; i < d; ++i) acc += G[i * d + j] * dl[i];
                                                       gk[l][row * d + j] += bl * acc;
                                                   }
                                           }
                                           // decay term: S_t = a P + ..., P = S_{t-1} - b1 (S_{t-1} k1) k1^T
                                           const T a = na->data[row];
                                           const T b1 = nb[0]->data[row];
                                           const T* k1 = nk[0]->data.data() + row * d;
                                           for (std::size_t i = 0; i < d; ++i) {
                                               T acc = 0;
                                               for (std::size_t j = 0; j < d; ++j) acc += Sp[i * d + j] * k1[j];
                                               s[i] = acc;
                                           }
                                           if (ga) {
                                               T acc = 0;
                                               for (std::size_t i = 0; i < d; ++i)
                                                   for (std::size_t j = 0; j < d; ++j)
                                                       acc += G[i * d + j] * (Sp[i * d + j] - b1 * s[i] * k1[j]);
                                               ga[row] += acc;
                                           }
                                           for (std::size_t x = 0; x < dd; ++x) dP[x] = a * G[x];
                                           for (std::size_t i = 0; i < d; ++i) {
                                               T acc = 0;
                                               for (std::size_t j = 0; j < d; ++j) acc += dP[i * d + j] * k1[j];
                                               e[i] = acc;
                                           }
                                           if (gb[0]) {
                                               T acc = 0;
                                               for (std::size_t i = 0; i < d; ++i) acc += s[i] * e[i];
                                               gb[0][row] -= acc;
                                           }
                                           if (gk[0])
                                               for (std::size_t j = 0; j < d; ++j) {
                                                   T acc = 0;
                                                   for (std::size_t i = 0; i < d; ++i)
                                                       acc += Sp[i * d + j] * e[i] + dP[i * d + j] * s[i];
                                                   gk[0][row * d + j] -= b1 * acc;
                                               }
                                           for (std::size_t i = 0; i < d; ++i)
                                               for (std::size_t j = 0; j < d; ++j)
                                                   G[i * d + j] = dP[i * d + j] - b1 * e[i] * k1[j];
                                       }
                                   }
                               });
    return res;
}

}  // namespace detail

template <class T>
struct ForwardResult {
    Tensor<T> y;
    std::vector<Matrix<T>> final_states;  // one per sequence in the batch

    const Matrix<T>& state() const { return final_states.at(0); }
};

// Differentiable serial rollout; x is [N, d] or [batch, N, d]. s0 holds one matrix
// shared by every sequence or one per sequence; empty means zero.
template <class T>
ForwardResult<T> serial_forward(const Tensor<T>& x, const PrismParams<T>& params, const PrismConfig& cfg,
                                const std::vector<Matrix<T>>& s0 = {}) {
    cfg.validate();
    if (x.rank() < 2 || x.shape().back() != params.d())
        throw DimensionError("serial_forward expects x [.., N, d] with d = " + std::to_string(params.d()));
    const auto u = compute_anchor(x, params);
    const auto pr = project(u, params, cfg);
    const auto r1 = sub(pr.v, u);
    std::vector<Tensor<T>> deltas;
    Tensor<T> r = r1;
    for (std::size_t l = 0; l < params.L(); ++l) {
        auto delta = gelu(mul(pr.p[l], r));
        if (l + 1 < params.L()) r = sub(r, delta);
        deltas.push_back(delta);
    }
    auto rec = detail::prism_recurrence(pr.alpha, pr.beta, pr.k, deltas, pr.q, s0.empty() ? nullptr : &s0);
    return {matmul(rec.o, params.Wo), std::move(rec.final_states)};
}

namespace detail {

// Per-step transition pairs of one sequence in factored form:
// A_t = alpha_t (I - beta_t k_t k_t^T) and B_t = sum_l c_{t,l} k_{t,l}^T with c = beta_l delta_l.
template <class T>
struct CompactPairs {
    std::size_t n = 0, d = 0, L = 0;
    std::vector<T> alpha, beta, q, k, c;  // k, c: [n, L, d]

    // S <- S A_t + B_t in place.
    void step(Matrix<T>& S, std::size_t t) const {
        const T* k1 = &k[t * L * d];
        for (std::size_t i = 0; i < d; ++i) {
            T* row = &S.a[i * d];
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += row[j] * k1[j];
            const T s = beta[t] * dot;
            for (std::size_t j = 0; j < d; ++j) row[j] = alpha[t] * (row[j] - s * k1[j]);
            for (std::size_t l = 0; l < L; ++l) {
                const T ci = c[(t * L + l) * d + i];
                const T* kl = &k[(t * L + l) * d];
                for (std::size_t j = 0; j < d; ++j) row[j] += ci * kl[j];
            }
        }
    }

    // X <- X A_t in place.
    void right_mul(Matrix<T>& X, std::size_t t) const {
        const T* k1 = &k[t * L * d];
        for (std::size_t i = 0; i < X.rows; ++i) {
            T* row = &X.a[i * d];
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += row[j] * k1[j];
            const T s = beta[t] * dot;
            for (std::size_t j = 0; j < d; ++j) row[j] = alpha[t] * (row[j] - s * k1[j]);
        }
    }
};

template <class T>
CompactPairs<T> compact_pairs(const Tensor<T>& u, const PrismParams<T>& params, const PrismConfig& cfg,
                              unsigned threads) {
    const auto pr = project(u, params, cfg);
    CompactPairs<T> cp;
    cp.n = u.dim(0);
    cp.d = u.dim(1);
    cp.L = params.L();
    const std::size_t n = cp.n, d = cp.d, L = cp.L;
    cp.alpha.assign(pr.alpha.vec().begin(), pr.alpha.vec().end());
    cp.beta.assign(pr.beta[0].vec().begin(), pr.beta[0].vec().end());
    cp.q = pr.q.vec();
    cp.k.resize(n * L * d);
    cp.c.resize(n * L * d);
    parallel_for(n, threads, [&](std::size_t t) {
        std::vector<T> r(d);
        for (std::size_t i = 0; i < d; ++i) r[i] = pr.v[t * d + i] - u[t * d + i];
        for (std::size_t l = 0; l < L; ++l) {
            const T b = pr.beta[l][t];
            for (std::size_t i = 0; i < d; ++i) {
                const T delta = gelu_scalar(pr.p[l][t * d + i] * r[i]);
                cp.c[(t * L + l) * d + i] = b * delta;
                cp.k[(t * L + l) * d + i] = pr.k[l][t * d + i];
                r[i] -= delta;
            }
        }
    });
    return cp;
}

}  // namespace detail

// Forward-only chunk-parallel evaluation of a single sequence x [N, d].
// Per-step pairs are state free, each chunk is summarised by composing its pairs, an exclusive
// Blelloch scan over the summaries yields every chunk's entry state, and chunks then run serially.
template <class T>
ForwardResult<T> chunked_scan_forward(const Tensor<T>& x, const PrismParams<T>& params, const PrismConfig& cfg,
                                      const Matrix<T>* s0 = nullptr, unsigned threads = 1) {
    cfg.validate();
    if (x.rank() != 2 || x.dim(1) != params.d()) throw DimensionError("chunked_scan_forward expects x [N, d]");
    NoGradGuard ng;
    const std::size_t n = x.dim(0), d = x.dim(1);
    const std::size_t nchunks = (n + cfg.chunk - 1) / cfg.chunk;

    // Pairs are built chunk by chunk; the conv only needs w - 1 rows of history, so the
    // working set stays bounded as N grows.
    std::vector<detail::CompactPairs<T>> cps(nchunks);
    std::vector<TransitionPair<T>> summary(nchunks);
    parallel_for(nchunks, threads, [&](std::size_t c) {
        const std::size_t lo = c * cfg.chunk, hi = std::min(n, lo + cfg.chunk);
        const std::size_t from = lo >= cfg.w - 1 ? lo - (cfg.w - 1) : 0;
        const auto xs = Tensor<T>::from({hi - from, d}, std::vector<T>(x.vec().begin() + static_cast<std::ptrdiff_t>(from * d),
                                                                      x.vec().begin() + static_cast<std::ptrdiff_t>(hi * d)));
        const auto ue = compute_anchor(xs, params);
        const auto u = Tensor<T>::from({hi - lo, d}, std::vector<T>(ue.vec().end() - static_cast<std::ptrdiff_t>((hi - lo) * d),
                                                                    ue.vec().end()));
        cps[c] = detail::compact_pairs(u, params, cfg, 1);
        auto acc = TransitionPair<T>::identity(d);
        for (std::size_t t = 0; t < hi - lo; ++t) {
            cps[c].right_mul(acc.A, t);
            cps[c].step(acc.B, t);
        }
        summary[c] = std::move(acc);
    });
    const auto prefix = blelloch_exclusive_scan(
        summary, TransitionPair<T>::identity(d),
        [](const TransitionPair<T>& a, const TransitionPair<T>& b) { return compose_transitions(a, b); }, threads);

    const Matrix<T> S0 = s0 ? *s0 : Matrix<T>(d, d);
    std::vector<T> y(n * d);
    std::vector<Matrix<T>> chunk_end(nchunks);
    parallel_for(nchunks, threads, [&](std::size_t c) {
        const std::size_t lo = c * cfg.chunk, hi = std::min(n, lo + cfg.chunk);
        Matrix<T> S = S0 * prefix[c].A + prefix[c].B;
        const auto& cp = cps[c];
        for (std::size_t t = 0; t < hi - lo; ++t) {
            cp.step(S, t);
            const T* qt = &cp.q[t * d];
            for (std::size_t i = 0; i < d; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < d; ++j) acc += S.a[i * d + j] * qt[j];
                if (!std::isfinite(acc))
                    throw NumericError("non-finite value in chunked scan", static_cast<std::ptrdiff_t>(lo + t));
                y[(lo + t) * d + i] = acc;
            }
        }
        chunk_end[c] = std::move(S);
    });
    auto o = Tensor<T>::from({n, d}, std::move(y));
    return {matmul(o, params.Wo), {nchunks ? chunk_end.back() : S0}};
}

// Pre-norm residual block: x + mixer(LN x), then x + MLP(LN x) with hidden 4d.
template <class T>
struct BlockParams {
    Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor<T> W1, b1, W2, b2;

    static BlockParams init(std::size_t d, Rng& rng, bool requires_grad = true) {
        BlockParams p;
        p.ln1_g = Tensor<T>::full({d}, T(1), requires_grad);
        p.ln1_b = Tensor<T>::zeros({d}, requires_grad);
        p.ln2_g = Tensor<T>::full({d}, T(1), requires_grad);
        p.ln2_b = Tensor<T>::zeros({d}, requires_grad);
        p.W1 = Tensor<T>::randn({d, 4 * d}, rng, T(1) / std::sqrt(static_cast<T>(d)), requires_grad);
        p.b1 = Tensor<T>::zeros({4 * d}, requires_grad);
        p.W2 = Tensor<T>::randn({4 * d, d}, rng, T(1) / std::sqrt(static_cast<T>(4 * d)), requires_grad);
        p.b2 = Tensor<T>::zeros({d}, requires_grad);
        return p;
    }

    std::vector<Tensor<T>> parameters() const { return {ln1_g, ln1_b, ln2_g, ln2_b, W1, b1, W2, b2}; }
};

template <class T>
Tensor<T> mlp_gelu(const Tensor<T>& x, const BlockParams<T>& p) {
    return add(matmul(gelu(add(matmul(x, p.W1), p.b1)), p.W2), p.b2);
}

template <class T, class Mixer>
Tensor<T> residual_block(const Tensor<T>& x, const BlockParams<T>& bp, Mixer&& mixer) {
    auto h = add(x, mixer(layernorm(x, bp.ln1_g, bp.ln1_b)));
    return add(h, mlp_gelu(layernorm(h, bp.ln2_g, bp.ln2_b), bp));
}

template <class T>
Tensor<T> prism_block_forward(const Tensor<T>& x, const BlockParams<T>& bp, const PrismParams<T>& pp,
                              const PrismConfig& cfg) {
    return residual_block(x, bp, [&](const Tensor<T>& h) { return serial_forward(h, pp, cfg).y; });
}

}  // namespace prism
