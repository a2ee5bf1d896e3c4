#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "prism/verify/checks.hpp"
#include "prism/verify/noise.hpp"

namespace prism {

struct CheckRecord {
    std::string name;
    std::vector<std::pair<std::string, double>> metrics;
    bool pass = true;
};

struct VerifyReport {
    std::vector<CheckRecord> records;

    bool pass() const {
        return std::all_of(records.begin(), records.end(), [](auto& r) { return r.pass; });
    }
};

inline std::string format_g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// One record per line: name pass=0|1 key=value ...
inline std::string report_text(const VerifyReport& rep) {
    std::string s;
    for (auto& r : rep.records) {
        s += r.name + " pass=" + (r.pass ? "1" : "0");
        for (auto& [k, v] : r.metrics) s += " " + k + "=" + format_g6(v);
        s += '\n';
    }
    return s;
}

inline std::string report_csv(const VerifyReport& rep) {
    std::string s = "check,metric,value,pass\n";
    for (auto& r : rep.records)
        for (auto& [k, v] : r.metrics) s += r.name + "," + k + "," + format_g6(v) + "," + (r.pass ? "1" : "0") + "\n";
    return s;
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t report_hash(const VerifyReport& rep) { return fnv1a(report_text(rep)); }

struct VerifyOptions {
    std::uint64_t seed = 1;
    unsigned threads = 1;
    int noise_trials = 1000;
};

namespace detail {

inline CheckRecord check_scan(const VerifyOptions& o) {
    CheckRecord r{"scan", {}, true};
    double g64 = 0, g32 = 0;
    for (std::size_t chunk : {4, 16, 64}) {
        PrismConfig cfg;
        cfg.d = 16;
        cfg.L = 2;
        cfg.chunk = chunk;
        for (std::uint64_t s = 0; s < 20; ++s) {
            g64 = std::max(g64, scan_equivalence_gap<double>(cfg, 256, o.seed * 1000 + s, o.threads));
            g32 = std::max(g32, scan_equivalence_gap<float>(cfg, 256, o.seed * 1000 + s, o.threads));
        }
    }
    r.metrics = {{"max_gap_f64", g64}, {"max_gap_f32", g32}};
    r.pass = g64 < 1e-9 && g32 < 1e-4;
    return r;
}

inline CheckRecord check_spectrum(const VerifyOptions& o) {
    CheckRecord r{"spectrum", {}, true};
    PrismConfig cfg;
    double lo = 1, hi = 0, gap = 0;
    std::size_t steps = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto tr = random_rollout(cfg, 1000, o.seed * 100 + s);
        const auto rep = spectrum_check(tr.pairs);
        r.pass = r.pass && rep.pass;
        lo = std::min(lo, rep.min_eig);
        hi = std::max(hi, rep.max_eig);
        gap = std::max(gap, rep.max_numeric_gap);
        steps += rep.steps;
    }
    r.metrics = {{"steps", static_cast<double>(steps)}, {"min_eig", lo}, {"max_eig", hi}, {"max_numeric_gap", gap}};
    return r;
}

inline CheckRecord check_rank(const VerifyOptions& o) {
    CheckRecord r{"rank", {}, true};
    PrismConfig cfg;
    std::size_t steps = 0, full = 0, over = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto tr = random_rollout(cfg, 1000, o.seed * 100 + 50 + s);
        const auto prof = rank_profile(tr.B);
        steps += prof.steps;
        for (auto& [rank, count] : prof.histogram) {
            if (rank == cfg.L) full += count;
            if (rank > cfg.L) over += count;
        }
    }
    const double frac = static_cast<double>(full) / static_cast<double>(steps);
    r.metrics = {{"steps", static_cast<double>(steps)}, {"frac_rank_L", frac}, {"steps_above_L", static_cast<double>(over)}};
    r.pass = over == 0 && frac >= 0.95;
    return r;
}

inline CheckRecord check_lipschitz(const VerifyOptions& o) {
    CheckRecord r{"lipschitz", {}, true};
    const double lphi = gelu_lipschitz_constant();
    const auto res = lipschitz_probe(100, 1.13, 16, o.seed);
    r.metrics = {{"gelu_grad_max", lphi}, {"probes", static_cast<double>(res.probes)},
                 {"violations", static_cast<double>(res.violations)}, {"worst_ratio", res.worst_ratio}};
    r.pass = lphi <= 1.13 && res.violations == 0;
    return r;
}

inline CheckRecord check_proxy(const VerifyOptions& o) {
    CheckRecord r{"proxy", {}, true};
    for (double g : {0.3, 0.5, 0.8}) {
        const auto res = proxy_error_experiment(g, {1, 2, 4, 8, 16}, 256, 200, 8, o.seed);
        bool ok = true;
        for (auto& row : res.rows) ok = ok && row.bound_ok;
        const double rel = std::abs(res.fitted_slope - std::log(g)) / std::abs(std::log(g));
        r.metrics.push_back({"slope_g" + format_g6(g), res.fitted_slope});
        r.metrics.push_back({"slope_relerr_g" + format_g6(g), rel});
        r.pass = r.pass && ok && rel <= 0.2;
    }
    return r;
}

inline CheckRecord check_noise_a(const VerifyOptions& o) {
    CheckRecord r{"noise_a", {}, true};
    NoiseExperimentConfig cfg;
    cfg.trials = o.noise_trials;
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    cfg.gammas = log_grid(1.0 / cfg.horizons.back(), 1.0, 32);
    for (int T : cfg.horizons) cfg.gammas.push_back(2.0 / T);
    std::sort(cfg.gammas.begin(), cfg.gammas.end());
    cfg.max_lag = cfg.horizons.back();
    const auto tab = simulate_a_noise(cfg);
    const auto env = tab.lag_envelope();
    const auto ln = fit_growth(tab.horizons, env, Regressor::LnT);
    const auto lin = fit_growth(tab.horizons, env, Regressor::T);
    const auto full_worst = tab.worst_case();

    NoiseExperimentConfig avg = cfg;
    avg.gammas = {0.02, 0.1, 0.5};
    avg.max_lag = 2048;
    avg.horizons = {64, 256, 1024, 2048};
    const auto atab = simulate_a_noise(avg);
    double emin = 1e300, emax = 0;
    for (std::size_t i = 0; i < avg.gammas.size(); ++i) {
        const double e = atab.lifetime_energy(i);
        emin = std::min(emin, e);
        emax = std::max(emax, e);
        r.metrics.push_back({"lifetime_energy_g" + format_g6(avg.gammas[i]), e});
    }
    r.metrics.insert(r.metrics.begin(), {{"ln_r2", ln.r2},
                                         {"ln_slope", ln.slope},
                                         {"ln_residual", ln.residual_norm},
                                         {"lin_r2", lin.r2},
                                         {"lin_residual", lin.residual_norm},
                                         {"full_worst_T64", full_worst.front()},
                                         {"full_worst_T4096", full_worst.back()}});
    r.metrics.push_back({"energy_ratio", emax / emin});
    r.pass = ln.r2 >= 0.9 && ln.slope > 0 && lin.residual_norm >= 1.25 * ln.residual_norm && emax / emin <= 3.0;
    return r;
}

inline CheckRecord check_noise_b(const VerifyOptions& o) {
    CheckRecord r{"noise_b", {}, true};
    NoiseExperimentConfig cfg;
    cfg.trials = o.noise_trials;
    cfg.seed = o.seed + 1;
    cfg.threads = o.threads;
    // lambda = exp(-gamma) >= 0.999
    cfg.gammas = log_grid(1e-5, -std::log(0.999), 8);
    const auto tab = simulate_b_noise(cfg);
    const auto worst = tab.worst_case();
    const auto lin = fit_growth(tab.horizons, worst, Regressor::T);
    const auto at999 = fit_growth(tab.horizons, tab.var.back(), Regressor::T);
    r.metrics = {{"worst_lin_r2", lin.r2},
                 {"worst_lin_slope", lin.slope},
                 {"sigma_b2", cfg.sigma_b * cfg.sigma_b},
                 {"lambda_0.999_lin_r2", at999.r2}};
    r.pass = lin.r2 >= 0.95 && lin.slope > 0;
    return r;
}

inline CheckRecord check_degeneracy(const VerifyOptions& o) {
    CheckRecord r{"degeneracy", {}, true};
    double cf = 0, best = 1e300;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto res = degeneracy_experiment(8, 256, 0.5, o.seed + s);
        cf = std::max(cf, res.closed_form_residual);
        best = std::min(best, res.best_delta_residual);
    }
    r.metrics = {{"closed_form_residual", cf}, {"best_delta_residual", best}};
    r.pass = cf < 1e-8 && cf <= best;
    return r;
}

inline CheckRecord check_ideal(const VerifyOptions& o) {
    CheckRecord r{"ideal", {}, true};
    const auto mism = ideal_identity_mismatches(8, 500, o.seed);
    r.metrics = {{"mismatched_entries", static_cast<double>(mism)}};
    r.pass = mism == 0;
    return r;
}

inline CheckRecord check_gap(const VerifyOptions& o) {
    CheckRecord r{"gap", {}, true};
    PrismConfig cfg;
    const auto tr = random_rollout(cfg, 128, o.seed * 7 + 3);
    const auto gap = approximation_gap(tr, ActivationSpec::tanh);
    double mx = 0;
    bool finite = true;
    for (double g : gap) {
        finite = finite && std::isfinite(g);
        mx = std::max(mx, g);
    }
    r.metrics = {{"steps", static_cast<double>(gap.size())}, {"gap_first", gap.front()}, {"gap_last", gap.back()}, {"gap_max", mx}};
    r.pass = finite && mx < 1e3;
    return r;
}

}  // namespace detail

inline const std::vector<std::string>& default_checks() {
    static const std::vector<std::string> names{"scan",     "spectrum", "rank",       "lipschitz", "proxy",
                                                "noise_a",  "noise_b",  "degeneracy", "ideal",     "gap"};
    return names;
}

// Runs the named checks in the given order. "forced_failure" is a fixture that always fails.
inline VerifyReport run_verify_suite(const std::vector<std::string>& selection, const VerifyOptions& opt = {}) {
    VerifyReport rep;
    for (auto& name : selection) {
        if (name == "scan") rep.records.push_back(detail::check_scan(opt));
        else if (name == "spectrum") rep.records.push_back(detail::check_spectrum(opt));
        else if (name == "rank") rep.records.push_back(detail::check_rank(opt));
        else if (name == "lipschitz") rep.records.push_back(detail::check_lipschitz(opt));
        else if (name == "proxy") rep.records.push_back(detail::check_proxy(opt));
        else if (name == "noise_a") rep.records.push_back(detail::check_noise_a(opt));
        else if (name == "noise_b") rep.records.push_back(detail::check_noise_b(opt));
        else if (name == "degeneracy") rep.records.push_back(detail::check_degeneracy(opt));
        else if (name == "ideal") rep.records.push_back(detail::check_ideal(opt));
        else if (name == "gap") rep.records.push_back(detail::check_gap(opt));
        else if (name == "forced_failure") rep.records.push_back({"forced_failure", {{"value", 1.0}}, false});
        else throw ConfigError("unknown verify check '" + name + "'");
    }
    return rep;
}

}  // namespace prism
