#pragma once

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include "prism/cell/prism_cell.hpp"
#include "prism/core/random.hpp"
#include "prism/harness/metrics.hpp"
#include "prism/models/baselines.hpp"

namespace prism {

struct BenchRow {
    std::string model;
    int N = 0;
    int batch = 0;
    double seconds_per_token = 0;
    double tokens_per_s = 0;
};

struct BenchOptions {
    std::vector<int> lengths{256, 1024, 4096};
    std::vector<std::string> models{"prism_serial", "prism_chunked", "transformer"};
    int batch = 4;
    int D = 16;
    int L = 2;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    // Each point is timed `repeats` times (after one warm-up) and the fastest run is kept.
    int repeats = 5;
};

inline const std::vector<std::string>& bench_model_names() {
    static const std::vector<std::string> names{"prism_serial", "prism_chunked", "transformer"};
    return names;
}

// Forward wall-clock of one mixer layer per (model, N). Inference mode, float32.
inline std::vector<BenchRow> run_bench(const BenchOptions& o) {
    for (auto& m : o.models)
        if (std::find(bench_model_names().begin(), bench_model_names().end(), m) == bench_model_names().end())
            throw ConfigError("unknown bench model '" + m + "'");
    for (std::size_t i = 0; i < o.lengths.size(); ++i)
        if (o.lengths[i] <= 0 || (i && o.lengths[i] <= o.lengths[i - 1]))
            throw ConfigError("bench lengths must be positive and ascending");
    if (o.batch <= 0 || o.repeats <= 0) throw ConfigError("bench batch and repeats must be positive");

    using T = float;
    NoGradGuard ng;
    const auto d = static_cast<std::size_t>(o.D);
    auto rng = make_rng(o.seed, 0x42656e63);
    PrismConfig pcfg;
    pcfg.d = d;
    pcfg.L = static_cast<std::size_t>(o.L);
    const auto pp = PrismParams<T>::init(pcfg, rng, false);
    const auto ap = AttentionParams<T>::init(d, 2, rng, false);

    std::vector<BenchRow> rows;
    for (auto& m : o.models)
        for (int N : o.lengths) {
            const auto n = static_cast<std::size_t>(N), B = static_cast<std::size_t>(o.batch);
            const auto x = Tensor<T>::randn({B, n, d}, rng, T(1));
            std::vector<Tensor<T>> xs;
            for (std::size_t b = 0; b < B; ++b)
                xs.push_back(Tensor<T>::from({n, d}, std::vector<T>(x.vec().begin() + static_cast<std::ptrdiff_t>(b * n * d),
                                                                    x.vec().begin() + static_cast<std::ptrdiff_t>((b + 1) * n * d))));
            auto once = [&] {
                T sink = 0;
                if (m == "prism_serial") {
                    sink += serial_forward(x, pp, pcfg).y[0];
                } else if (m == "prism_chunked") {
                    for (auto& xb : xs) sink += chunked_scan_forward(xb, pp, pcfg, static_cast<const Matrix<T>*>(nullptr), o.threads).y[0];
                } else {
                    sink += attention_forward(x, ap)[0];
                }
                return sink;
            };
            volatile T keep = once();
            double best = 1e300;
            for (int r = 0; r < o.repeats; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                keep = once();
                best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            }
            (void)keep;
            const double tokens = static_cast<double>(B * n);
            rows.push_back({m, N, o.batch, best / tokens, tokens / best});
        }
    return rows;
}

inline constexpr const char* kBenchHeader = "model,N,batch,seconds_per_token,tokens_per_s";

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string s = std::string(kBenchHeader) + "\n";
    for (auto& r : rows)
        s += r.model + "," + std::to_string(r.N) + "," + std::to_string(r.batch) + "," + g6(r.seconds_per_token) + "," +
             g6(r.tokens_per_s) + "\n";
    return s;
}

}  // namespace prism
