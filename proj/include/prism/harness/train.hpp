#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/core/optim.hpp"
#include "prism/core/random.hpp"
#include "prism/harness/config.hpp"
#include "prism/harness/metrics.hpp"
#include "prism/models/model.hpp"
#include "prism/tasks/tasks.hpp"

namespace prism {

// A batch flattened for the model. Sequences are cut after the last query position:
// every model here is causal, so later tokens cannot affect any scored logit.
struct PackedBatch {
    std::vector<int> tokens;
    std::size_t batch = 0, n = 0;
    std::vector<std::size_t> positions;
    std::vector<int> targets;
};

inline PackedBatch pack_batch(const std::vector<TaskSample>& samples, std::size_t begin, std::size_t end) {
    PackedBatch pb;
    pb.batch = end - begin;
    for (std::size_t i = begin; i < end; ++i)
        for (int q : samples[i].query_positions) pb.n = std::max(pb.n, static_cast<std::size_t>(q) + 1);
    pb.tokens.reserve(pb.batch * pb.n);
    for (std::size_t i = begin; i < end; ++i) {
        const auto& s = samples[i];
        pb.tokens.insert(pb.tokens.end(), s.tokens.begin(), s.tokens.begin() + static_cast<std::ptrdiff_t>(pb.n));
        for (std::size_t q = 0; q < s.query_positions.size(); ++q) {
            pb.positions.push_back((i - begin) * pb.n + static_cast<std::size_t>(s.query_positions[q]));
            pb.targets.push_back(s.targets[q]);
        }
    }
    return pb;
}

inline PackedBatch pack_batch(const std::vector<TaskSample>& samples) { return pack_batch(samples, 0, samples.size()); }

struct EvalResult {
    double loss = 0;
    double accuracy = 0;
    std::size_t queries = 0;
};

// Exact argmax match fraction over every query position, plus mean cross entropy.
template <class T>
EvalResult evaluate(const SequenceModel<T>& model, const std::vector<TaskSample>& samples, std::size_t chunk = 64) {
    NoGradGuard ng;
    EvalResult r;
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t b = 0; b < samples.size(); b += chunk) {
        const auto pb = pack_batch(samples, b, std::min(samples.size(), b + chunk));
        if (pb.positions.empty()) continue;
        const auto logits = model.logits_at(pb.tokens, pb.batch, pb.n, pb.positions);
        const std::size_t V = logits.dim(1);
        for (std::size_t p = 0; p < pb.positions.size(); ++p) {
            const T* row = logits.data().data() + p * V;
            const auto am = static_cast<int>(std::max_element(row, row + V) - row);
            hits += am == pb.targets[p];
            T mx = *std::max_element(row, row + V);
            double z = 0;
            for (std::size_t v = 0; v < V; ++v) z += std::exp(static_cast<double>(row[v] - mx));
            loss_sum += std::log(z) + static_cast<double>(mx) - static_cast<double>(row[pb.targets[p]]);
        }
        r.queries += pb.positions.size();
    }
    if (r.queries) {
        r.accuracy = static_cast<double>(hits) / static_cast<double>(r.queries);
        r.loss = loss_sum / static_cast<double>(r.queries);
    }
    return r;
}

inline std::string make_run_id(const std::string& model, const std::string& task, std::uint64_t seed) {
    return model + "_" + task + "_s" + std::to_string(seed);
}

inline TaskConfig task_config_for(const RunConfig& cfg, std::uint64_t seed) {
    TaskConfig tc;
    tc.N = cfg.N;
    tc.V = cfg.V;
    tc.seed = seed;
    return tc;
}

// Streams used by a run. Training batches and the held-out eval set never share a stream.
inline std::uint64_t train_batch_seed(std::uint64_t seed, int step) {
    return mix_seed(seed, 0x7452000000ULL + static_cast<std::uint64_t>(step));
}
inline std::uint64_t eval_set_seed(std::uint64_t seed) { return mix_seed(seed, 0x4576616cULL); }
inline std::uint64_t model_init_seed(std::uint64_t seed) { return mix_seed(seed, 0x496e6974ULL); }

struct TrainResult {
    MetricRecord final;
    std::vector<MetricRecord> history;
    std::string metrics_path;
    std::string snapshot_path;
};

template <class T>
nlohmann::json parameter_snapshot(const SequenceModel<T>& model) {
    nlohmann::json arr = nlohmann::json::array();
    for (auto& p : model.parameters()) arr.push_back({{"shape", p.shape()}, {"data", p.vec()}});
    return arr;
}

struct TrainOptions {
    std::string metrics_path;   // empty = do not write
    std::string snapshot_path;  // empty = do not write
};

// One (model, task, seed) run. Single threaded and deterministic given the config and seed.
template <class T>
TrainResult train_run(const RunConfig& cfg, ModelKind mk, TaskKind tk, std::uint64_t seed, const TrainOptions& opt = {}) {
    cfg.validate();
    const std::string model_s = model_name(mk), task_s = task_name(tk);
    const auto run_id = make_run_id(model_s, task_s, seed);
    const auto tc = task_config_for(cfg, seed);
    SequenceModel<T> model(mk, cfg.dims(), model_init_seed(seed));
    AdamOptions ao;
    ao.lr = cfg.lr;
    Adam<T> adam(model.parameters(), ao);
    const auto eval_set = generate_batch(tk, tc, static_cast<std::size_t>(cfg.eval_samples), eval_set_seed(seed));

    TrainResult res;
    res.metrics_path = opt.metrics_path;
    res.snapshot_path = opt.snapshot_path;
    if (!opt.metrics_path.empty()) std::filesystem::remove(opt.metrics_path);

    using clock = std::chrono::steady_clock;
    double train_seconds = 0;
    std::size_t tokens_since = 0;
    auto record = [&](int step, double loss) {
        const auto ev = evaluate(model, eval_set);
        MetricRecord m{run_id, model_s, task_s, seed, step, step == 0 ? ev.loss : loss, ev.accuracy, 0.0};
        if (cfg.timing && train_seconds > 0) m.tokens_per_s = static_cast<double>(tokens_since) / train_seconds;
        train_seconds = 0;
        tokens_since = 0;
        res.history.push_back(m);
        if (!opt.metrics_path.empty()) write_metrics({m}, opt.metrics_path);
    };

    double last_loss = 0;
    if (cfg.steps == 0) record(0, 0.0);
    for (int step = 1; step <= cfg.steps; ++step) {
        const auto t0 = clock::now();
        const auto samples = generate_batch(tk, tc, static_cast<std::size_t>(cfg.batch), train_batch_seed(seed, step));
        const auto pb = pack_batch(samples);
        Tensor<T> loss;
        try {
            loss = model.loss(pb.tokens, pb.batch, pb.n, pb.positions, pb.targets);
        } catch (const NumericError& e) {
            // the recurrence reports a sequence position; surface the training step instead
            clear_tape<T>();
            throw NumericError(std::string(e.what()) + " in run " + run_id, step);
        }
        last_loss = static_cast<double>(loss.item());
        if (!std::isfinite(last_loss)) {
            clear_tape<T>();
            throw NumericError("non-finite training loss in run " + run_id, step);
        }
        backward(loss);
        adam.step();
        train_seconds += std::chrono::duration<double>(clock::now() - t0).count();
        tokens_since += static_cast<std::size_t>(cfg.batch) * static_cast<std::size_t>(cfg.N);
        if (step % cfg.eval_every == 0 || step == cfg.steps) record(step, last_loss);
    }
    res.final = res.history.back();

    if (!opt.snapshot_path.empty()) {
        nlohmann::json snap{{"run_id", run_id},
                            {"model", model_s},
                            {"task", task_s},
                            {"seed", seed},
                            {"steps", cfg.steps},
                            {"precision", dtype_name(dtype_of<T>)},
                            {"parameters", parameter_snapshot(model)}};
        std::ofstream out(opt.snapshot_path);
        if (!out) throw std::runtime_error("cannot write snapshot '" + opt.snapshot_path + "'");
        out << snap.dump() << '\n';
    }
    return res;
}

inline TrainResult train_run_any(const RunConfig& cfg, ModelKind mk, TaskKind tk, std::uint64_t seed,
                                 const TrainOptions& opt = {}) {
    return parse_precision(cfg.precision) == Precision::f64 ? train_run<double>(cfg, mk, tk, seed, opt)
                                                            : train_run<float>(cfg, mk, tk, seed, opt);
}

}  // namespace prism
