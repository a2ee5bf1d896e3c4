#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "prism/core/errors.hpp"
#include "prism/core/random.hpp"
#include "prism/core/scan.hpp"

namespace prism {

enum class NoiseMode { A, B };

struct NoiseExperimentConfig {
    NoiseMode mode = NoiseMode::A;
    std::vector<double> gammas;
    std::vector<int> horizons{64, 128, 256, 512, 1024, 2048, 4096};
    int trials = 1000;
    double K = 0.01;        // A-mode: log-perturbation variance K * gamma^2
    double sigma_b = 0.1;   // B-mode: additive injection noise std
    std::uint64_t seed = 7;
    unsigned threads = 1;
    // A-mode only: also tabulate per-lag path variance up to this lag (0 = off)
    int max_lag = 0;

    void validate() const {
        if (gammas.empty()) throw ConfigError("noise experiment needs at least one gamma");
        for (double g : gammas)
            if (!(g > 0.0 && g <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
        if (trials < 100) throw ConfigError("noise experiment needs >= 100 trials");
        if (horizons.empty() || !std::is_sorted(horizons.begin(), horizons.end()) || horizons.front() < 1)
            throw ConfigError("horizons must be ascending and positive");
    }
};

struct NoiseTable {
    std::vector<double> gammas;
    std::vector<int> horizons;
    std::vector<std::vector<double>> var;      // [gamma][horizon]
    std::vector<std::vector<double>> lag_var;  // [gamma][tau-1], A-mode with max_lag

    std::vector<double> worst_case() const {
        std::vector<double> w(horizons.size(), 0.0);
        for (auto& row : var)
            for (std::size_t j = 0; j < row.size(); ++j) w[j] = std::max(w[j], row[j]);
        return w;
    }

    // Sum over lags tau <= T of the per-lag maximum over gamma.
    std::vector<double> lag_envelope() const {
        if (lag_var.empty()) throw UsageError("lag table was not requested");
        const std::size_t lags = lag_var.front().size();
        std::vector<double> g(lags, 0.0);
        for (auto& row : lag_var)
            for (std::size_t t = 0; t < lags; ++t) g[t] = std::max(g[t], row[t]);
        std::vector<double> out;
        for (int T : horizons) {
            double s = 0.0;
            for (std::size_t t = 0; t < std::min<std::size_t>(lags, static_cast<std::size_t>(T)); ++t) s += g[t];
            out.push_back(s);
        }
        return out;
    }

    // Lifetime error energy of one injection at gamma index i.
    double lifetime_energy(std::size_t i) const {
        double s = 0.0;
        for (double v : lag_var.at(i)) s += v;
        return s;
    }
};

namespace detail {

// Trials are split into a fixed number of blocks so sums do not depend on the thread count.
constexpr std::size_t kNoiseBlocks = 16;

}  // namespace detail

// Scalar mode s_t = lambda s_{t-1} + b_t, b_t ~ N(0, 1). A-mode perturbs lambda per step by
// exp(xi), xi ~ N(0, K gamma^2); B-mode perturbs b_t by N(0, sigma_b^2).
inline NoiseTable simulate_noise(const NoiseExperimentConfig& cfg) {
    cfg.validate();
    const std::size_t G = cfg.gammas.size(), H = cfg.horizons.size();
    const int Tmax = std::max(cfg.horizons.back(), cfg.mode == NoiseMode::A ? cfg.max_lag : 0);
    const std::size_t lags = cfg.mode == NoiseMode::A ? static_cast<std::size_t>(std::max(cfg.max_lag, 0)) : 0;
    struct Partial {
        std::vector<double> sum, sum2, lag;
    };
    std::vector<Partial> parts(detail::kNoiseBlocks);
    const std::size_t trials = static_cast<std::size_t>(cfg.trials);
    parallel_for(detail::kNoiseBlocks, cfg.threads, [&](std::size_t blk) {
        auto& p = parts[blk];
        p.sum.assign(G * H, 0.0);
        p.sum2.assign(G * H, 0.0);
        p.lag.assign(G * lags, 0.0);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (std::size_t tr = blk; tr < trials; tr += detail::kNoiseBlocks) {
            for (std::size_t gi = 0; gi < G; ++gi) {
                const double gamma = cfg.gammas[gi];
                const double lambda = std::exp(-gamma);
                const double sd = cfg.mode == NoiseMode::A ? std::sqrt(cfg.K) * gamma : cfg.sigma_b;
                auto rng = make_rng(cfg.seed, tr * 1000003ULL + gi);
                double s = 0.0, sh = 0.0, walk = 0.0, lpow = 1.0;
                std::size_t hi = 0;
                for (int t = 1; t <= Tmax; ++t) {
                    const double b = nd(rng);
                    const double xi = nd(rng) * sd;
                    s = lambda * s + b;
                    if (cfg.mode == NoiseMode::A) {
                        sh = lambda * std::exp(xi) * sh + b;
                        if (static_cast<std::size_t>(t) <= lags) {
                            walk += xi;
                            lpow *= lambda;
                            const double dev = lpow * std::expm1(walk);
                            p.lag[gi * lags + static_cast<std::size_t>(t - 1)] += dev * dev;
                        }
                    } else {
                        sh = lambda * sh + b + xi;
                    }
                    if (hi < H && t == cfg.horizons[hi]) {
                        const double e = s - sh;
                        p.sum[gi * H + hi] += e;
                        p.sum2[gi * H + hi] += e * e;
                        ++hi;
                    }
                }
            }
        }
    });
    NoiseTable out;
    out.gammas = cfg.gammas;
    out.horizons = cfg.horizons;
    out.var.assign(G, std::vector<double>(H, 0.0));
    if (lags) out.lag_var.assign(G, std::vector<double>(lags, 0.0));
    std::vector<double> sum(G * H, 0.0), sum2(G * H, 0.0), lag(G * lags, 0.0);
    for (auto& p : parts) {
        for (std::size_t i = 0; i < G * H; ++i) {
            sum[i] += p.sum[i];
            sum2[i] += p.sum2[i];
        }
        for (std::size_t i = 0; i < G * lags; ++i) lag[i] += p.lag[i];
    }
    const double n = static_cast<double>(trials);
    for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t h = 0; h < H; ++h) {
            const double m = sum[g * H + h] / n;
            out.var[g][h] = std::max(0.0, (sum2[g * H + h] - n * m * m) / (n - 1.0));
        }
        for (std::size_t t = 0; t < lags; ++t) out.lag_var[g][t] = lag[g * lags + t] / n;
    }
    return out;
}

inline NoiseTable simulate_a_noise(NoiseExperimentConfig cfg) {
    cfg.mode = NoiseMode::A;
    return simulate_noise(cfg);
}

inline NoiseTable simulate_b_noise(NoiseExperimentConfig cfg) {
    cfg.mode = NoiseMode::B;
    return simulate_noise(cfg);
}

// n log-spaced points on [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> g;
    for (int i = 0; i < n; ++i)
        g.push_back(n == 1 ? lo : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1)));
    return g;
}

enum class Regressor { LnT, T, Constant };

inline const char* regressor_name(Regressor r) {
    switch (r) {
        case Regressor::LnT: return "lnT";
        case Regressor::T: return "T";
        case Regressor::Constant: return "const";
    }
    return "?";
}

struct GrowthFit {
    Regressor regressor = Regressor::LnT;
    double slope = 0, intercept = 0, r2 = 0, residual_norm = 0;
};

// Least squares of y against f(T) for f in {ln T, T, 1}.
inline GrowthFit fit_growth(const std::vector<double>& T, const std::vector<double>& y, Regressor reg) {
    if (T.size() != y.size()) throw DataError("fit_growth: horizon and value counts differ");
    if (T.size() < 5) throw DataError("fit_growth needs at least 5 horizons, got " + std::to_string(T.size()));
    const std::size_t n = T.size();
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(T[i] > 0) || !std::isfinite(y[i])) throw DataError("fit_growth: degenerate table entry");
        x[i] = reg == Regressor::LnT ? std::log(T[i]) : reg == Regressor::T ? T[i] : 0.0;
    }
    double my = 0;
    for (double v : y) my += v;
    my /= static_cast<double>(n);
    GrowthFit f;
    f.regressor = reg;
    if (reg == Regressor::Constant) {
        f.intercept = my;
    } else {
        double mx = 0;
        for (double v : x) mx += v;
        mx /= static_cast<double>(n);
        double sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < n; ++i) {
            sxx += (x[i] - mx) * (x[i] - mx);
            sxy += (x[i] - mx) * (y[i] - my);
        }
        if (sxx == 0) throw DataError("fit_growth: horizons are all equal");
        f.slope = sxy / sxx;
        f.intercept = my - f.slope * mx;
    }
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += r * r;
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    f.residual_norm = std::sqrt(ss_res);
    f.r2 = ss_tot > 0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : (ss_res == 0 ? 1.0 : 0.0);
    return f;
}

inline GrowthFit fit_growth(const std::vector<int>& T, const std::vector<double>& y, Regressor reg) {
    return fit_growth(std::vector<double>(T.begin(), T.end()), y, reg);
}

}  // namespace prism
