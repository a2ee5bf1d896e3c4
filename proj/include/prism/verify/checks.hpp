#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "prism/cell/prism_cell.hpp"
#include "prism/core/linalg.hpp"
#include "prism/core/random.hpp"
#include "prism/models/reference.hpp"
#include "prism/verify/noise.hpp"

namespace prism {

namespace detail {

inline std::vector<double> random_unit(Rng& rng, std::size_t d) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(d);
    double s = 0;
    for (auto& x : v) {
        x = nd(rng);
        s += x * x;
    }
    s = std::sqrt(s);
    for (auto& x : v) x /= s;
    return v;
}

inline double norm2(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace detail

struct ProxyRow {
    int w = 0;
    double mean_error = 0, max_error = 0, bound = 0;
    bool bound_ok = true;
};

struct ProxyResult {
    double gamma = 0;
    std::vector<ProxyRow> rows;
    double fitted_slope = 0;  // d log(mean error) / d w
};

// z_t = sum_{i<t} gamma^{t-i} c_i with ||c_i|| <= 1 (c_i = v_i k_i^T k_t for unit vectors).
// u_t keeps only the last w terms; the tail is the proxy error.
inline ProxyResult proxy_error_experiment(double gamma, const std::vector<int>& ws, int T, int trials = 200,
                                          std::size_t d = 8, std::uint64_t seed = 11) {
    if (!(gamma > 0 && gamma < 1)) throw ConfigError("proxy experiment needs gamma in (0, 1)");
    ProxyResult res;
    res.gamma = gamma;
    for (int w : ws) res.rows.push_back({w, 0.0, 0.0, std::pow(gamma, w + 1) / (1.0 - gamma), true});
    for (int tr = 0; tr < trials; ++tr) {
        auto rng = make_rng(seed, static_cast<std::uint64_t>(tr));
        const auto kt = detail::random_unit(rng, d);
        std::vector<std::vector<double>> c(static_cast<std::size_t>(T));
        for (auto& ci : c) {
            const auto ki = detail::random_unit(rng, d);
            const auto vi = detail::random_unit(rng, d);
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += ki[j] * kt[j];
            ci.resize(d);
            for (std::size_t j = 0; j < d; ++j) ci[j] = vi[j] * dot;
        }
        for (auto& row : res.rows) {
            // tail: i = 0 .. T-w-1
            std::vector<double> tail(d, 0.0);
            for (int i = 0; i <= T - row.w - 1; ++i) {
                const double f = std::pow(gamma, T - i);
                for (std::size_t j = 0; j < d; ++j) tail[j] += f * c[static_cast<std::size_t>(i)][j];
            }
            const double e = detail::norm2(tail);
            row.mean_error += e / trials;
            row.max_error = std::max(row.max_error, e);
            row.bound_ok = row.bound_ok && e <= row.bound;
        }
    }
    std::vector<double> xs, ys;
    for (auto& row : res.rows)
        if (row.mean_error > 0) {
            xs.push_back(row.w);
            ys.push_back(std::log(row.mean_error));
        }
    if (xs.size() >= 2) {
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            mx += xs[i];
            my += ys[i];
        }
        mx /= static_cast<double>(xs.size());
        my /= static_cast<double>(xs.size());
        double sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxx += (xs[i] - mx) * (xs[i] - mx);
            sxy += (xs[i] - mx) * (ys[i] - my);
        }
        res.fitted_slope = sxy / sxx;
    }
    return res;
}

struct SpectrumReport {
    std::size_t steps = 0;
    bool pass = true;
    std::ptrdiff_t first_violation = -1;
    double min_eig = 1, max_eig = 0, max_numeric_gap = 0;
};

// Analytic eigenvalues {alpha (x d-1), alpha (1 - beta |k|^2)} vs the dense matrix, tol 1e-8.
template <class T>
SpectrumReport spectrum_check(const std::vector<TransitionPair<T>>& stream, double tol = 1e-8) {
    SpectrumReport rep;
    for (std::size_t t = 0; t < stream.size(); ++t) {
        const auto& tp = stream[t];
        const std::size_t d = tp.k.size();
        double kk = 0;
        for (auto v : tp.k) kk += static_cast<double>(v) * static_cast<double>(v);
        std::vector<double> analytic(d, static_cast<double>(tp.alpha));
        analytic[0] = static_cast<double>(tp.alpha) * (1.0 - static_cast<double>(tp.beta) * kk);
        std::sort(analytic.begin(), analytic.end());
        Matrix<double> A(d, d);
        for (std::size_t i = 0; i < d * d; ++i) A.a[i] = static_cast<double>(tp.A.a[i]);
        const auto numeric = symmetric_eigenvalues(A);
        bool ok = true;
        for (std::size_t i = 0; i < d; ++i) {
            rep.max_numeric_gap = std::max(rep.max_numeric_gap, std::abs(numeric[i] - analytic[i]));
            ok = ok && std::abs(numeric[i] - analytic[i]) <= tol;
            ok = ok && analytic[i] >= -tol && analytic[i] <= 1.0 + tol;
        }
        rep.min_eig = std::min(rep.min_eig, analytic.front());
        rep.max_eig = std::max(rep.max_eig, analytic.back());
        if (!ok && rep.pass) {
            rep.pass = false;
            rep.first_violation = static_cast<std::ptrdiff_t>(t);
        }
        ++rep.steps;
    }
    return rep;
}

struct RankProfile {
    std::map<std::size_t, std::size_t> histogram;  // rank -> count
    std::size_t steps = 0;

    double fraction(std::size_t r) const {
        auto it = histogram.find(r);
        return steps && it != histogram.end() ? static_cast<double>(it->second) / static_cast<double>(steps) : 0.0;
    }
    std::size_t max_rank() const { return histogram.empty() ? 0 : histogram.rbegin()->first; }
};

template <class T>
RankProfile rank_profile(const std::vector<Matrix<T>>& Bs, double rel_tol = 1e-8) {
    RankProfile p;
    for (const auto& B : Bs) {
        ++p.histogram[numerical_rank(B, static_cast<T>(rel_tol))];
        ++p.steps;
    }
    return p;
}

// Terms, transitions and injections for a random rollout of one PRISM layer.
struct RolloutTrace {
    std::vector<StepTerms<double>> terms;
    std::vector<TransitionPair<double>> pairs;
    std::vector<Matrix<double>> B;
};

inline RolloutTrace random_rollout(const PrismConfig& cfg, std::size_t n, std::uint64_t seed, double x_scale = 1.0) {
    auto rng = make_rng(seed, 0x524f4c4c);
    const auto params = PrismParams<double>::init(cfg, rng, false);
    const auto x = Tensor<double>::randn({n, cfg.d}, rng, x_scale);
    RolloutTrace tr;
    const auto u = compute_anchor(x, params);
    tr.terms = compute_step_terms(u, params, cfg);
    for (auto& s : tr.terms) {
        auto acc = rank_accumulate(s, s.v, s.u);
        tr.pairs.push_back(build_transition(s, acc.B));
        tr.B.push_back(std::move(acc.B));
    }
    return tr;
}

// Frobenius gap between the PRISM state and an ideal-solver state fed the same (k1, v, beta1) stream.
inline std::vector<double> approximation_gap(const RolloutTrace& tr, ActivationSpec sigma) {
    if (tr.pairs.empty()) return {};
    const std::size_t d = tr.pairs.front().k.size();
    Matrix<double> Sp(d, d), Si(d, d);
    std::vector<double> gap;
    for (std::size_t t = 0; t < tr.pairs.size(); ++t) {
        Sp = Sp * tr.pairs[t].A + tr.pairs[t].B;
        Si = ideal_solver_step(Si, tr.terms[t].k[0], tr.terms[t].v, sigma, tr.terms[t].beta[0]);
        gap.push_back(frobenius(Sp - Si));
    }
    return gap;
}

// Max of GELU' on a fine grid; the Lipschitz constant of exact GELU.
inline double gelu_lipschitz_constant(double lo = -10.0, double hi = 10.0, int points = 2000001) {
    double best = 0;
    for (int i = 0; i < points; ++i) {
        const double x = lo + (hi - lo) * i / (points - 1);
        best = std::max(best, std::abs(detail::gelu_grad_scalar(x)));
    }
    return best;
}

struct LipschitzResult {
    int probes = 0, violations = 0;
    double worst_ratio = 0;  // ||dDelta|| / (max|p| ||eps||)
};

inline LipschitzResult lipschitz_probe(int probes, double L_phi, std::size_t d = 16, std::uint64_t seed = 5) {
    LipschitzResult res;
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < probes; ++i) {
        auto rng = make_rng(seed, static_cast<std::uint64_t>(i));
        std::vector<double> p(d), r(d), eps(d);
        double pmax = 0;
        for (std::size_t j = 0; j < d; ++j) {
            p[j] = nd(rng) * 2.0;
            r[j] = nd(rng) * 2.0;
            pmax = std::max(pmax, std::abs(p[j]));
        }
        // ||eps|| log-uniform in [1e-6, 1e-1]
        const double target = std::pow(10.0, -6.0 + 5.0 * uniform01(rng));
        const auto dir = detail::random_unit(rng, d);
        for (std::size_t j = 0; j < d; ++j) eps[j] = dir[j] * target;
        double diff2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double a = detail::gelu_scalar(p[j] * r[j]);
            const double b = detail::gelu_scalar(p[j] * (r[j] + eps[j]));
            diff2 += (a - b) * (a - b);
        }
        const double ratio = std::sqrt(diff2) / (pmax * detail::norm2(eps));
        res.worst_ratio = std::max(res.worst_ratio, ratio);
        if (std::sqrt(diff2) > L_phi * pmax * detail::norm2(eps)) ++res.violations;
        ++res.probes;
    }
    return res;
}

struct DegeneracyResult {
    double closed_form_residual = 0;  // max relative ||S* k - v|| / ||v||
    double best_delta_residual = 0;   // smallest over delta-rule iterates
    std::size_t iterates = 0;
};

// Linear stream k_t = W_k x_t, v_t = W_v x_t; compares S* against each delta-rule iterate.
inline DegeneracyResult degeneracy_experiment(std::size_t d, std::size_t n, double beta, std::uint64_t seed) {
    auto rng = make_rng(seed, 0x444547);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix<double> Wk = Matrix<double>::identity(d), Wv(d, d);
    for (auto& x : Wk.a) x += nd(rng) * 0.3;
    for (auto& x : Wv.a) x = nd(rng);
    const auto S_star = degenerate_closed_form(Wk, Wv);
    std::vector<std::vector<double>> ks, vs;
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> x(d);
        for (auto& v : x) v = nd(rng);
        auto k = matvec(Wk, x);
        // unit keys keep the delta rule contractive; scaling x keeps the pair linear
        const double kn = detail::norm2(k);
        for (auto& v : x) v /= kn;
        ks.push_back(matvec(Wk, x));
        vs.push_back(matvec(Wv, x));
    }
    auto residual = [&](const Matrix<double>& S) {
        double worst = 0;
        for (std::size_t t = 0; t < n; ++t) {
            const auto p = matvec(S, ks[t]);
            double e = 0;
            for (std::size_t i = 0; i < d; ++i) e += (p[i] - vs[t][i]) * (p[i] - vs[t][i]);
            worst = std::max(worst, std::sqrt(e) / detail::norm2(vs[t]));
        }
        return worst;
    };
    DegeneracyResult res;
    res.closed_form_residual = residual(S_star);
    Matrix<double> S(d, d);
    res.best_delta_residual = residual(S);
    for (std::size_t t = 0; t < n; ++t) {
        S = delta_rule_step(S, ks[t], vs[t], beta);
        res.best_delta_residual = std::min(res.best_delta_residual, residual(S));
        ++res.iterates;
    }
    return res;
}

// Bitwise comparison of ideal_solver_step(identity) and delta_rule_step over random steps.
inline std::size_t ideal_identity_mismatches(std::size_t d, std::size_t steps, std::uint64_t seed) {
    auto rng = make_rng(seed, 0x494445);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix<double> Sa(d, d), Sb(d, d);
    std::size_t mismatches = 0;
    for (std::size_t t = 0; t < steps; ++t) {
        std::vector<double> k(d), v(d);
        for (auto& x : k) x = nd(rng) / std::sqrt(static_cast<double>(d));
        for (auto& x : v) x = nd(rng);
        const double beta = uniform01(rng);
        Sa = ideal_solver_step(Sa, k, v, ActivationSpec::identity, beta);
        Sb = delta_rule_step(Sb, k, v, beta);
        for (std::size_t i = 0; i < d * d; ++i)
            if (Sa.a[i] != Sb.a[i]) ++mismatches;
    }
    return mismatches;
}

// Max |serial - chunked| over the outputs and final state of one random sequence.
template <class T>
double scan_equivalence_gap(const PrismConfig& cfg, std::size_t n, std::uint64_t seed, unsigned threads = 1) {
    auto rng = make_rng(seed, 0x5343414e);
    const auto params = PrismParams<T>::init(cfg, rng, false);
    const auto x = Tensor<T>::randn({n, cfg.d}, rng, T(1));
    NoGradGuard ng;
    const auto a = serial_forward(x, params, cfg);
    const auto b = chunked_scan_forward(x, params, cfg, static_cast<const Matrix<T>*>(nullptr), threads);
    double gap = 0;
    for (std::size_t i = 0; i < a.y.numel(); ++i)
        gap = std::max(gap, static_cast<double>(std::abs(a.y[i] - b.y[i])));
    for (std::size_t i = 0; i < a.state().a.size(); ++i)
        gap = std::max(gap, static_cast<double>(std::abs(a.state().a[i] - b.state().a[i])));
    return gap;
}

}  // namespace prism
