#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "prism/cell/prism_cell.hpp"
#include "prism/core/errors.hpp"
#include "prism/core/ops.hpp"
#include "prism/core/random.hpp"
#include "prism/core/tensor.hpp"

namespace prism {

namespace detail {

// o_t = S_t q_t with S_t = S_{t-1} diag(g_t) + v_t k_t^T, over [batch, N, d].
// An undefined g means no decay (plain linear attention).
template <class T>
Tensor<T> gated_la_recurrence(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& g) {
    if (q.shape() != k.shape() || q.shape() != v.shape() || (g.defined() && g.shape() != q.shape()))
        throw DimensionError("linear attention streams must share a shape");
    const std::size_t d = q.shape().back();
    const std::size_t n = q.dim(q.rank() - 2);
    const std::size_t batch = q.numel() / (n * d);
    const std::size_t dd = d * d;
    const bool gated = g.defined();
    std::vector<T> out(q.numel(), T(0));
    std::vector<T> S(dd);
    std::vector<T> states;
    const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad() ||
                                         (gated && g.requires_grad()));
    if (keep) states.assign(batch * (n + 1) * dd, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        std::fill(S.begin(), S.end(), T(0));
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t row = b * n + t;
            const T* kt = k.data().data() + row * d;
            const T* vt = v.data().data() + row * d;
            const T* qt = q.data().data() + row * d;
            const T* gt = gated ? g.data().data() + row * d : nullptr;
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    T& s = S[i * d + j];
                    if (gated) s *= gt[j];
                    s += vt[i] * kt[j];
                }
            T* ot = out.data() + row * d;
            for (std::size_t i = 0; i < d; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < d; ++j) acc += S[i * d + j] * qt[j];
                ot[i] = acc;
            }
            if (keep) std::copy(S.begin(), S.end(), states.begin() + static_cast<std::ptrdiff_t>((b * (n + 1) + t + 1) * dd));
        }
    }
    std::vector<Tensor<T>> inputs{q, k, v};
    if (gated) inputs.push_back(g);
    auto saved = std::make_shared<std::vector<T>>(std::move(states));
    auto nq = q.node(), nk = k.node(), nv = v.node();
    auto ng = gated ? g.node() : NodePtr<T>{};
    return make_op_dynamic<T>(q.shape(), std::move(out), inputs, [=](Node<T>& self) {
        T* gq = grad_sink(nq);
        T* gk = grad_sink(nk);
        T* gv = grad_sink(nv);
        T* gg = gated ? grad_sink(ng) : nullptr;
        std::vector<T> G(dd);
        for (std::size_t b = 0; b < batch; ++b) {
            std::fill(G.begin(), G.end(), T(0));
            for (std::size_t t = n; t-- > 0;) {
                const std::size_t row = b * n + t;
                const T* St = saved->data() + (b * (n + 1) + t + 1) * dd;
                const T* Sp = saved->data() + (b * (n + 1) + t) * dd;
                const T* go = self.grad.data() + row * d;
                const T* qt = nq->data.data() + row * d;
                const T* kt = nk->data.data() + row * d;
                const T* vt = nv->data.data() + row * d;
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < d; ++j) G[i * d + j] += go[i] * qt[j];
                if (gq)
                    for (std::size_t j = 0; j < d; ++j) {
                        T acc = 0;
                        for (std::size_t i = 0; i < d; ++i) acc += St[i * d + j] * go[i];
                        gq[row * d + j] += acc;
                    }
                if (gv)
                    for (std::size_t i = 0; i < d; ++i) {
                        T acc = 0;
                        for (std::size_t j = 0; j < d; ++j) acc += G[i * d + j] * kt[j];
                        gv[row * d + i] += acc;
                    }
                if (gk)
                    for (std::size_t j = 0; j < d; ++j) {
                        T acc = 0;
                        for (std::size_t i = 0; i < d; ++i) acc += G[i * d + j] * vt[i];
                        gk[row * d + j] += acc;
                    }
                if (gated) {
                    const T* gt = ng->data.data() + row * d;
                    if (gg)
                        for (std::size_t j = 0; j < d; ++j) {
                            T acc = 0;
                            for (std::size_t i = 0; i < d; ++i) acc += G[i * d + j] * Sp[i * d + j];
                            gg[row * d + j] += acc;
                        }
                    for (std::size_t i = 0; i < d; ++i)
                        for (std::size_t j = 0; j < d; ++j) G[i * d + j] *= gt[j];
                }
            }
        }
    });
}

// Causal multi-head softmax attention over [batch, N, D]; heads split the last axis.
template <class T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                           std::vector<T>* weights_out = nullptr) {
    if (q.shape() != k.shape() || q.shape() != v.shape()) throw DimensionError("attention streams must share a shape");
    const std::size_t D = q.shape().back();
    if (heads == 0 || D % heads) throw ConfigError("model dimension must be divisible by the head count");
    const std::size_t n = q.dim(q.rank() - 2);
    const std::size_t batch = q.numel() / (n * D);
    const std::size_t hd = D / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
    auto probs = std::make_shared<std::vector<T>>();
    if (keep) probs->assign(batch * heads * n * n, T(0));
    if (weights_out) weights_out->assign(batch * heads * n * n, T(0));
    std::vector<T> out(q.numel(), T(0));
    std::vector<T> p(n);
    const T* pq = q.data().data();
    const T* pk = k.data().data();
    const T* pv = v.data().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                const T* qi = pq + (b * n + i) * D + h * hd;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const T* kj = pk + (b * n + j) * D + h * hd;
                    T s = 0;
                    for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    p[j] = s * scale;
                    mx = std::max(mx, p[j]);
                }
                T z = 0;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    z += p[j];
                }
                T* oi = out.data() + (b * n + i) * D + h * hd;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[j] /= z;
                    const T* vj = pv + (b * n + j) * D + h * hd;
                    for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
                }
                const std::size_t base = ((b * heads + h) * n + i) * n;
                if (keep) std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(i + 1), probs->begin() + static_cast<std::ptrdiff_t>(base));
                if (weights_out)
                    std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(i + 1), weights_out->begin() + static_cast<std::ptrdiff_t>(base));
            }
    auto nq = q.node(), nk = k.node(), nv = v.node();
    return make_op<T>(q.shape(), std::move(out), {&q, &k, &v}, [=](Node<T>& self) {
        T* gq = grad_sink(nq);
        T* gk = grad_sink(nk);
        T* gv = grad_sink(nv);
        std::vector<T> dp(n);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < n; ++i) {
                    const T* P = probs->data() + ((b * heads + h) * n + i) * n;
                    const T* go = self.grad.data() + (b * n + i) * D + h * hd;
                    T dot = 0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        const T* vj = nv->data.data() + (b * n + j) * D + h * hd;
                        T acc = 0;
                        for (std::size_t c = 0; c < hd; ++c) acc += go[c] * vj[c];
                        dp[j] = acc;
                        dot += P[j] * acc;
                        if (gv) {
                            T* gvj = gv + (b * n + j) * D + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gvj[c] += P[j] * go[c];
                        }
                    }
                    const T* qi = nq->data.data() + (b * n + i) * D + h * hd;
                    for (std::size_t j = 0; j <= i; ++j) {
                        const T ds = P[j] * (dp[j] - dot) * scale;
                        const T* kj = nk->data.data() + (b * n + j) * D + h * hd;
                        if (gq) {
                            T* gqi = gq + (b * n + i) * D + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
                        }
                        if (gk) {
                            T* gkj = gk + (b * n + j) * D + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
                        }
                    }
                }
    });
}

}  // namespace detail

// Optional short-conv anchor shared with PRISM so baselines can be run with the same local mixing.
template <class T>
Tensor<T> init_anchor_kernel(std::size_t w, std::size_t d, Rng& rng, bool requires_grad) {
    auto c = Tensor<T>::randn({w, d}, rng, T(0.2), requires_grad);
    for (std::size_t j = 0; j < d; ++j) c[(w - 1) * d + j] += T(1);
    return c;
}

template <class T>
struct LinearAttentionParams {
    Tensor<T> conv;  // undefined unless the anchor is enabled
    Tensor<T> Wq, Wk, Wv, Wo;

    static LinearAttentionParams init(std::size_t d, Rng& rng, std::size_t anchor_w = 0, bool requires_grad = true) {
        const T s = T(1) / std::sqrt(static_cast<T>(d));
        LinearAttentionParams p;
        if (anchor_w) p.conv = init_anchor_kernel<T>(anchor_w, d, rng, requires_grad);
        p.Wq = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wk = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wv = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wo = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        return p;
    }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        if (conv.defined()) out.push_back(conv);
        for (auto& t : {Wq, Wk, Wv, Wo}) out.push_back(t);
        return out;
    }
};

template <class T>
Tensor<T> linear_attention_forward(const Tensor<T>& x, const LinearAttentionParams<T>& p) {
    const auto h = p.conv.defined() ? silu(causal_depthwise_conv1d(x, p.conv)) : x;
    auto o = detail::gated_la_recurrence(matmul(h, p.Wq), matmul(h, p.Wk), matmul(h, p.Wv), Tensor<T>{});
    return matmul(o, p.Wo);
}

template <class T>
struct MoMParams {
    Tensor<T> conv;
    Tensor<T> Wq, Wr, br, Wo;  // router Wr [d, E], br [E]
    std::vector<Tensor<T>> Wk, Wv, Wg, bg;

    static MoMParams init(std::size_t d, std::size_t experts, Rng& rng, std::size_t anchor_w = 0,
                          bool requires_grad = true) {
        if (experts < 1) throw ConfigError("MoM needs at least one expert");
        const T s = T(1) / std::sqrt(static_cast<T>(d));
        MoMParams p;
        if (anchor_w) p.conv = init_anchor_kernel<T>(anchor_w, d, rng, requires_grad);
        p.Wq = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wr = Tensor<T>::randn({d, experts}, rng, s, requires_grad);
        p.br = Tensor<T>::zeros({experts}, requires_grad);
        for (std::size_t e = 0; e < experts; ++e) {
            p.Wk.push_back(Tensor<T>::randn({d, d}, rng, s, requires_grad));
            p.Wv.push_back(Tensor<T>::randn({d, d}, rng, s, requires_grad));
            p.Wg.push_back(Tensor<T>::randn({d, d}, rng, s, requires_grad));
            // decay gates start near 0.95 so experts keep memory early in training
            p.bg.push_back(Tensor<T>::full({d}, T(3), requires_grad));
        }
        p.Wo = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        return p;
    }

    std::size_t experts() const { return Wk.size(); }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        if (conv.defined()) out.push_back(conv);
        out.push_back(Wq);
        out.push_back(Wr);
        out.push_back(br);
        for (std::size_t e = 0; e < experts(); ++e) {
            out.push_back(Wk[e]);
            out.push_back(Wv[e]);
            out.push_back(Wg[e]);
            out.push_back(bg[e]);
        }
        out.push_back(Wo);
        return out;
    }
};

// Soft-routed mixture of gated linear-attention memories.
template <class T>
Tensor<T> mom_forward(const Tensor<T>& x, const MoMParams<T>& p) {
    const auto h = p.conv.defined() ? silu(causal_depthwise_conv1d(x, p.conv)) : x;
    const auto q = matmul(h, p.Wq);
    const auto route = softmax_last(add(matmul(h, p.Wr), p.br));
    Tensor<T> mixed;
    for (std::size_t e = 0; e < p.experts(); ++e) {
        const auto g = sigmoid(add(matmul(h, p.Wg[e]), p.bg[e]));
        const auto o = detail::gated_la_recurrence(q, matmul(h, p.Wk[e]), matmul(h, p.Wv[e]), g);
        auto w = mul(slice_last(route, e, e + 1), o);
        mixed = mixed.defined() ? add(mixed, w) : w;
    }
    return matmul(mixed, p.Wo);
}

template <class T>
struct AttentionParams {
    Tensor<T> Wq, Wk, Wv, Wo;
    std::size_t heads = 2;

    static AttentionParams init(std::size_t d, std::size_t heads, Rng& rng, bool requires_grad = true) {
        const T s = T(1) / std::sqrt(static_cast<T>(d));
        AttentionParams p;
        p.heads = heads;
        p.Wq = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wk = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wv = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        p.Wo = Tensor<T>::randn({d, d}, rng, s, requires_grad);
        return p;
    }

    std::vector<Tensor<T>> parameters() const { return {Wq, Wk, Wv, Wo}; }
};

template <class T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionParams<T>& p, std::vector<T>* weights = nullptr) {
    auto o = detail::causal_attention(matmul(x, p.Wq), matmul(x, p.Wk), matmul(x, p.Wv), p.heads, weights);
    return matmul(o, p.Wo);
}

template <class T>
Tensor<T> transformer_block_forward(const Tensor<T>& x, const BlockParams<T>& bp, const AttentionParams<T>& ap) {
    return residual_block(x, bp, [&](const Tensor<T>& h) { return attention_forward(h, ap); });
}

// Sinusoidal position table [N, D].
template <class T>
Tensor<T> sinusoidal_positions(std::size_t n, std::size_t d) {
    std::vector<T> pe(n * d);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            const double a = static_cast<double>(t) * freq;
            pe[t * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
        }
    return Tensor<T>::from({n, d}, std::move(pe));
}

}  // namespace prism
