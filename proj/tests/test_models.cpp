#include <gtest/gtest.h>

#include <cmath>

#include "prism/core/gradcheck.hpp"
#include "prism/models/model.hpp"
#include "prism/models/reference.hpp"

using namespace prism;
using Td = Tensor<double>;
using Md = Matrix<double>;

namespace {

std::vector<double> randvec(Rng& rng, std::size_t d, double s = 1) {
    std::normal_distribution<double> n(0, s);
    std::vector<double> v(d);
    for (auto& e : v) e = n(rng);
    return v;
}

Md randmat(Rng& rng, std::size_t r, std::size_t c) {
    Md m(r, c);
    m.a = randvec(rng, r * c);
    return m;
}

template <class F>
void expect_causal(F mixer, std::size_t n, std::size_t d, std::uint64_t seed) {
    auto rng = make_rng(seed);
    auto x = Td::randn({n, d}, rng);
    NoGradGuard ng;
    auto y = mixer(x);
    for (int trial = 0; trial < 5; ++trial) {
        const auto t = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(n) - 1));
        auto xp = Td::from({n, d}, x.vec());
        xp.data()[t * d] += 0.7;
        auto yp = mixer(xp);
        for (std::size_t i = 0; i < t * d; ++i) ASSERT_EQ(y[i], yp[i]) << "perturbed " << t;
    }
}

}  // namespace

TEST(LinearAttention, Examples) {
    auto rng = make_rng(1);
    auto S = randmat(rng, 3, 3);
    auto k = randvec(rng, 3);
    EXPECT_EQ(max_abs_diff(linear_attention_step(S, k, std::vector<double>(3, 0.0)), S), 0.0);
    auto v = randvec(rng, 3);
    auto one = linear_attention_step(Md(3, 3), k, v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(one(i, j), v[i] * k[j]);

    Md acc(4, 4), oracle(4, 4);
    for (int t = 0; t < 20; ++t) {
        auto kt = randvec(rng, 4), vt = randvec(rng, 4);
        acc = linear_attention_step(acc, kt, vt);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) oracle(i, j) += vt[i] * kt[j];
    }
    EXPECT_LT(max_abs_diff(acc, oracle), 1e-12);
    EXPECT_THROW(linear_attention_step(Md(3, 3), k, std::vector<double>(2)), DimensionError);
}

TEST(DeltaRule, Examples) {
    auto rng = make_rng(2);
    auto S = randmat(rng, 4, 4);
    auto k = randvec(rng, 4), v = randvec(rng, 4);
    EXPECT_EQ(max_abs_diff(delta_rule_step(S, k, v, 0.0), S), 0.0);
    // fixed point: v = S k
    EXPECT_LT(max_abs_diff(delta_rule_step(S, k, matvec(S, k), 0.7), S), 1e-15);
    double nk = 0;
    for (double e : k) nk += e * e;
    for (auto& e : k) e /= std::sqrt(nk);
    auto Sk = matvec(delta_rule_step(S, k, v, 1.0), k);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(Sk[i], v[i], 1e-12);
}

TEST(IdealSolver, IdentityIsDeltaRuleBitForBit) {
    auto rng = make_rng(3);
    Md a(5, 5), b(5, 5);
    for (int t = 0; t < 50; ++t) {
        auto k = randvec(rng, 5), v = randvec(rng, 5);
        const double beta = uniform01(rng);
        a = ideal_solver_step(a, k, v, ActivationSpec::identity, beta);
        b = delta_rule_step(b, k, v, beta);
        ASSERT_EQ(a.a, b.a) << "step " << t;
    }
}

TEST(IdealSolver, SaturationSuppressesUpdate) {
    Md S(3, 3);
    for (std::size_t i = 0; i < 3; ++i) S(i, i) = 60;  // |S k| ~ 60 puts tanh deep in saturation
    std::vector<double> k{1, 1, 1}, v{0.3, -0.2, 0.1};
    auto S2 = ideal_solver_step(S, k, v, ActivationSpec::tanh, 1.0);
    double nv = 0;
    for (double e : v) nv += e * e;
    EXPECT_LT(frobenius(S2 - S), 1e-6 * std::sqrt(nv));
}

TEST(IdealSolver, StepFollowsNegativeGradient) {
    // loss(S) = 1/2 |tanh(S k) - v|^2; the step must point along -dloss/dS
    auto rng = make_rng(5);
    auto S = randmat(rng, 4, 4);
    for (auto& e : S.a) e *= 0.3;
    auto k = randvec(rng, 4), v = randvec(rng, 4, 0.5);
    auto loss = [&](const Md& M) {
        auto z = matvec(M, k);
        double s = 0;
        for (std::size_t i = 0; i < 4; ++i) s += 0.5 * std::pow(std::tanh(z[i]) - v[i], 2);
        return s;
    };
    Md grad(4, 4);
    const double h = 1e-6;
    for (std::size_t i = 0; i < 16; ++i) {
        auto p = S, m = S;
        p.a[i] += h;
        m.a[i] -= h;
        grad.a[i] = (loss(p) - loss(m)) / (2 * h);
    }
    const double beta = 0.5;
    auto step = ideal_solver_step(S, k, v, ActivationSpec::tanh, beta) - S;
    double worst = 0;
    for (std::size_t i = 0; i < 16; ++i) worst = std::max(worst, std::abs(step.a[i] + beta * grad.a[i]));
    EXPECT_LT(worst / (beta * frobenius(grad)), 1e-5);
}

TEST(IdealSolver, RepeatedPairDescendsMonotonically) {
    auto rng = make_rng(6);
    for (auto sigma : {ActivationSpec::identity, ActivationSpec::tanh, ActivationSpec::gelu}) {
        Md S(4, 4);
        auto k = randvec(rng, 4), v = randvec(rng, 4, 0.4);
        auto resid = [&](const Md& M) {
            auto z = matvec(M, k);
            double s = 0;
            for (std::size_t i = 0; i < 4; ++i) s += std::pow(activate(sigma, z[i]) - v[i], 2);
            return std::sqrt(s);
        };
        double prev = resid(S);
        for (int t = 0; t < 200; ++t) {
            S = ideal_solver_step(S, k, v, sigma, 0.1);
            const double r = resid(S);
            ASSERT_LE(r, prev + 1e-12) << activation_name(sigma) << " t=" << t;
            prev = r;
        }
    }
}

TEST(Activation, DerivativesMatchCentralDifferences) {
    for (auto a : {ActivationSpec::identity, ActivationSpec::tanh, ActivationSpec::gelu})
        for (double z = -4; z <= 4; z += 0.37) {
            const double h = 1e-5;
            const double fd = (activate(a, z + h) - activate(a, z - h)) / (2 * h);
            EXPECT_LT(std::abs(activate_grad(a, z) - fd) / std::max(1.0, std::abs(fd)), 1e-6) << activation_name(a);
        }
}

TEST(ClosedForm, Examples) {
    auto rng = make_rng(7);
    auto Wv = randmat(rng, 4, 4);
    EXPECT_LT(max_abs_diff(degenerate_closed_form(Md::identity(4), Wv), Wv), 1e-15);
    auto Wk = randmat(rng, 4, 4) + Md::identity(4);
    EXPECT_LT(max_abs_diff(degenerate_closed_form(Wk, Wk), Md::identity(4)), 1e-10);
    EXPECT_THROW(degenerate_closed_form(Md(4, 4), Wv), SingularityError);
}

TEST(ClosedForm, MapsEveryKeyOntoItsValue) {
    auto rng = make_rng(8);
    auto Wk = randmat(rng, 6, 6) + Md::identity(6) * Md::identity(6);
    for (std::size_t i = 0; i < 6; ++i) Wk(i, i) += 2;
    auto Wv = randmat(rng, 6, 6);
    auto S = degenerate_closed_form(Wk, Wv);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = randvec(rng, 6);
        auto k = matvec(Wk, x), v = matvec(Wv, x);
        auto Sk = matvec(S, k);
        double err = 0, nv = 0;
        for (std::size_t i = 0; i < 6; ++i) {
            err += std::pow(Sk[i] - v[i], 2);
            nv += v[i] * v[i];
        }
        EXPECT_LT(std::sqrt(err), 1e-8 * std::sqrt(nv));
    }
}

TEST(ClosedForm, NoRecurrentIterateBeatsIt) {
    auto rng = make_rng(9);
    Md Wk = randmat(rng, 5, 5), Wv = randmat(rng, 5, 5);
    for (std::size_t i = 0; i < 5; ++i) Wk(i, i) += 3;
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 64; ++i) xs.push_back(randvec(rng, 5));
    auto loss = [&](const Md& S) {
        double s = 0;
        for (auto& x : xs) {
            auto k = matvec(Wk, x), v = matvec(Wv, x);
            auto Sk = matvec(S, k);
            for (std::size_t i = 0; i < 5; ++i) s += std::pow(Sk[i] - v[i], 2);
        }
        return s / static_cast<double>(xs.size());
    };
    const double best = loss(degenerate_closed_form(Wk, Wv));
    Md la(5, 5), dr(5, 5);
    for (auto& x : xs) {
        auto k = matvec(Wk, x), v = matvec(Wv, x);
        double nk = 0;
        for (double e : k) nk += e * e;
        la = linear_attention_step(la, k, v);
        dr = delta_rule_step(dr, k, v, 0.5 / nk);
        EXPECT_LE(best, loss(la));
        EXPECT_LE(best, loss(dr));
    }
}

TEST(Mixers, AllCausal) {
    auto rng = make_rng(10);
    auto la = LinearAttentionParams<double>::init(6, rng, 0, false);
    auto la_anchor = LinearAttentionParams<double>::init(6, rng, 4, false);
    auto mom = MoMParams<double>::init(6, 4, rng, 0, false);
    auto at = AttentionParams<double>::init(6, 2, rng, false);
    expect_causal([&](const Td& x) { return linear_attention_forward(x, la); }, 20, 6, 11);
    expect_causal([&](const Td& x) { return linear_attention_forward(x, la_anchor); }, 20, 6, 12);
    expect_causal([&](const Td& x) { return mom_forward(x, mom); }, 20, 6, 13);
    expect_causal([&](const Td& x) { return attention_forward(x, at); }, 20, 6, 14);
}

TEST(LinearAttentionMixer, MatchesReferenceSteps) {
    auto rng = make_rng(15);
    auto p = LinearAttentionParams<double>::init(4, rng, 0, false);
    auto x = Td::randn({9, 4}, rng);
    auto y = linear_attention_forward(x, p);
    auto q = matmul(x, p.Wq), k = matmul(x, p.Wk), v = matmul(x, p.Wv);
    Md S(4, 4);
    for (std::size_t t = 0; t < 9; ++t) {
        auto row = [&](const Td& m) { return std::vector<double>(m.vec().begin() + static_cast<long>(t * 4), m.vec().begin() + static_cast<long>(t * 4 + 4)); };
        S = linear_attention_step(S, row(k), row(v));
        auto o = matvec(S, row(q));
        for (std::size_t j = 0; j < 4; ++j) {
            double e = 0;
            for (std::size_t i = 0; i < 4; ++i) e += o[i] * p.Wo(i, j);
            EXPECT_NEAR(y(t, j), e, 1e-12);
        }
    }
}

TEST(MoM, CollapsedRouterEqualsSingleExpert) {
    auto rng = make_rng(16);
    auto p = MoMParams<double>::init(5, 4, rng, 0, false);
    p.Wr = Td::zeros({5, 4});
    const double inf = std::numeric_limits<double>::infinity();
    p.br = Td::from({4}, {0.0, -inf, -inf, -inf});
    auto single = p;
    single.Wr = Td::zeros({5, 1});
    single.br = Td::zeros({1});
    single.Wk = {p.Wk[0]};
    single.Wv = {p.Wv[0]};
    single.Wg = {p.Wg[0]};
    single.bg = {p.bg[0]};
    auto x = Td::randn({8, 5}, rng);
    auto a = mom_forward(x, p), b = mom_forward(x, single);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(MoM, UniformRouterWithIdenticalExperts) {
    auto rng = make_rng(17);
    auto p = MoMParams<double>::init(5, 4, rng, 0, false);
    p.Wr = Td::zeros({5, 4});
    for (std::size_t e = 1; e < 4; ++e) {
        p.Wk[e] = p.Wk[0];
        p.Wv[e] = p.Wv[0];
        p.Wg[e] = p.Wg[0];
        p.bg[e] = p.bg[0];
    }
    auto single = p;
    single.Wr = Td::zeros({5, 1});
    single.br = Td::zeros({1});
    single.Wk.resize(1);
    single.Wv.resize(1);
    single.Wg.resize(1);
    single.bg.resize(1);
    auto x = Td::randn({8, 5}, rng);
    auto a = mom_forward(x, p), b = mom_forward(x, single);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
}

TEST(Transformer, ZeroValueReducesToMlp) {
    auto rng = make_rng(18);
    auto bp = BlockParams<double>::init(8, rng, false);
    auto ap = AttentionParams<double>::init(8, 2, rng, false);
    ap.Wv = Td::zeros({8, 8});
    auto x = Td::randn({6, 8}, rng);
    auto y = transformer_block_forward(x, bp, ap);
    auto expect = add(x, mlp_gelu(layernorm(x, bp.ln2_g, bp.ln2_b), bp));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-14);
}

TEST(Transformer, AttentionWeights) {
    auto rng = make_rng(19);
    auto ap = AttentionParams<double>::init(8, 2, rng, false);
    std::vector<double> w;
    attention_forward(Td::randn({1, 8}, rng), ap, &w);
    ASSERT_EQ(w.size(), 2u);
    EXPECT_EQ(w[0], 1.0);
    EXPECT_EQ(w[1], 1.0);

    const std::size_t n = 7;
    attention_forward(Td::randn({n, 8}, rng), ap, &w);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p = w[(h * n + i) * n + j];
                if (j > i) { EXPECT_EQ(p, 0.0); }
                s += p;
            }
            EXPECT_NEAR(s, 1.0, 1e-14);
        }
    auto odd = AttentionParams<double>::init(7, 2, rng, false);
    EXPECT_THROW(attention_forward(Td::randn({3, 7}, rng), odd), ConfigError);
}

TEST(MixerGradients, CentralDifferences) {
    auto rng = make_rng(20);
    auto la = LinearAttentionParams<double>::init(4, rng, 3, false);
    auto mom = MoMParams<double>::init(4, 3, rng, 0, false);
    auto at = AttentionParams<double>::init(4, 2, rng, false);
    auto x = Td::randn({6, 4}, rng);
    auto r = Td::randn({6, 4}, rng);
    EXPECT_LT(grad_check([&](const Td& xx) { return sum(mul(linear_attention_forward(xx, la), r)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const Td& xx) { return sum(mul(mom_forward(xx, mom), r)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const Td& xx) { return sum(mul(attention_forward(xx, at), r)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const Td& g) {
                  auto m = mom;
                  m.Wg[1] = g;
                  return sum(mul(mom_forward(x, m), r));
              }, mom.Wg[1].detach()),
              1e-4);
    EXPECT_LT(grad_check([&](const Td& w) {
                  auto m = mom;
                  m.Wr = w;
                  return sum(mul(mom_forward(x, m), r));
              }, mom.Wr.detach()),
              1e-4);
}

TEST(BuildModel, LogitShapes) {
    ModelDims dims;
    const std::size_t n = 10;
    std::vector<int> tokens(2 * n);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i * 7 % 64);
    for (auto k : {ModelKind::PRISM, ModelKind::LinearAttention, ModelKind::MoM, ModelKind::Transformer}) {
        auto m = build_model<float>(k, dims, 1);
        NoGradGuard ng;
        auto logits = m.forward(tokens, 2, n);
        EXPECT_EQ(logits.shape(), (Shape{2, n, 64})) << model_name(k);
        for (float v : logits.data()) ASSERT_TRUE(std::isfinite(v));
    }
}

TEST(BuildModel, PrismParameterCountMatchesHandSum) {
    const std::size_t V = 64, D = 16, L = 2, w = 4;
    const std::size_t block = 4 * D + D * 4 * D + 4 * D + 4 * D * D + D;
    const std::size_t mixer = w * D + 2 * D * D + D + L * (2 * D * D + D) + D * D;
    const std::size_t total = V * D + 2 * (block + mixer) + 2 * D + D * V;
    EXPECT_EQ(total, 10272u);
    EXPECT_EQ(build_model<float>(ModelKind::PRISM, ModelDims{}, 1).num_parameters(), total);
}

TEST(BuildModel, OraclesAreNotTrainable) {
    EXPECT_THROW(build_model<float>(ModelKind::DeltaRule, ModelDims{}, 1), ConfigError);
    EXPECT_THROW(build_model<float>(ModelKind::IdealSolver, ModelDims{}, 1), ConfigError);
    EXPECT_THROW(parse_model_kind("GRU"), ConfigError);
    EXPECT_EQ(parse_model_kind("LA"), ModelKind::LinearAttention);
}

TEST(BuildModel, DeterministicFirstStepLoss) {
    std::vector<int> tokens{1, 5, 9, 13, 2, 6, 10, 14};
    std::vector<std::size_t> pos{3, 7};
    std::vector<int> tgt{20, 30};
    for (auto k : {ModelKind::PRISM, ModelKind::LinearAttention, ModelKind::MoM, ModelKind::Transformer}) {
        auto a = build_model<double>(k, ModelDims{}, 42), b = build_model<double>(k, ModelDims{}, 42);
        auto c = build_model<double>(k, ModelDims{}, 43);
        NoGradGuard ng;
        const double la = a.loss(tokens, 2, 4, pos, tgt).item();
        EXPECT_EQ(la, b.loss(tokens, 2, 4, pos, tgt).item()) << model_name(k);
        EXPECT_NE(la, c.loss(tokens, 2, 4, pos, tgt).item()) << model_name(k);
    }
}

TEST(BuildModel, LogitsAtMatchFullForward) {
    auto m = build_model<double>(ModelKind::PRISM, ModelDims{}, 3);
    std::vector<int> tokens{3, 1, 4, 1, 5, 9, 2, 6};
    NoGradGuard ng;
    auto full = m.forward(tokens, 2, 4);
    std::vector<std::size_t> pos{1, 6};
    auto sel = m.logits_at(tokens, 2, 4, pos);
    for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t v = 0; v < 64; ++v) EXPECT_EQ(sel(p, v), full[pos[p] * 64 + v]);
}

TEST(BuildModel, TokenOutOfRange) {
    auto m = build_model<float>(ModelKind::LinearAttention, ModelDims{}, 3);
    std::vector<int> tokens{3, 64};
    EXPECT_THROW(m.forward(tokens, 1, 2), DataError);
}
