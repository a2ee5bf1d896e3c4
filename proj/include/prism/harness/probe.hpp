#pragma once

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "prism/core/scan.hpp"
#include "prism/harness/config.hpp"
#include "prism/harness/metrics.hpp"
#include "prism/harness/train.hpp"

namespace prism {

struct Band {
    double lo = 0, hi = 1;
};

// Acceptance bands for the probing table. Cells without a band are reported but not judged.
inline std::optional<Band> probe_threshold(ModelKind m, TaskKind t) {
    using M = ModelKind;
    using K = TaskKind;
    if (m == M::PRISM) {
        if (t == K::Parity || t == K::LocalXOR) return Band{0.95, 1.0};
        if (t == K::Palindrome || t == K::MQAR) return Band{0.90, 1.0};
        if (t == K::ModuloAdd) return Band{0.30, 1.0};
    }
    if (m == M::LinearAttention && t == K::MQAR) return Band{0.90, 1.0};
    if ((m == M::LinearAttention || m == M::MoM) && (t == K::Parity || t == K::LocalXOR)) return Band{0.35, 0.65};
    return std::nullopt;
}

inline double median(std::vector<double> xs) {
    if (xs.empty()) throw DataError("median of an empty list");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

struct ProbeCell {
    TaskKind task;
    ModelKind model;
    std::vector<double> seed_accuracy;
    double median_accuracy = 0;
    std::optional<Band> band;

    std::optional<bool> pass() const {
        if (!band) return std::nullopt;
        return median_accuracy >= band->lo && median_accuracy <= band->hi;
    }
};

struct ProbeResult {
    std::vector<TaskKind> tasks;
    std::vector<ModelKind> models;
    std::vector<ProbeCell> cells;  // task-major, models in column order
    std::vector<MetricRecord> records;

    const ProbeCell& cell(TaskKind t, ModelKind m) const {
        for (auto& c : cells)
            if (c.task == t && c.model == m) return c;
        throw UsageError(std::string("no probe cell for ") + task_name(t) + "/" + model_name(m));
    }
};

// Columns follow the published table: Transformer, LA, MoM, PRISM.
inline std::vector<ModelKind> column_order(std::vector<ModelKind> ms) {
    auto rank = [](ModelKind m) {
        switch (m) {
            case ModelKind::Transformer: return 0;
            case ModelKind::LinearAttention: return 1;
            case ModelKind::MoM: return 2;
            case ModelKind::PRISM: return 3;
            default: return 4;
        }
    };
    std::stable_sort(ms.begin(), ms.end(), [&](ModelKind a, ModelKind b) { return rank(a) < rank(b); });
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    return ms;
}

// Rows follow the published table order.
inline std::vector<TaskKind> row_order(const std::vector<TaskKind>& ts) {
    std::vector<TaskKind> out;
    for (auto t : all_tasks())
        if (std::find(ts.begin(), ts.end(), t) != ts.end()) out.push_back(t);
    return out;
}

// Trains every (task, model, seed) of the sweep. Runs are independent; each writes its own
// metrics file under runs_dir (when non-empty) and results are merged in job order.
inline ProbeResult run_probe(const RunConfig& cfg, const std::string& runs_dir = "") {
    cfg.validate();
    ProbeResult res;
    res.tasks = row_order(cfg.task_list());
    std::vector<ModelKind> ms;
    for (auto& m : cfg.models) {
        const auto k = parse_model_kind(m);
        if (!is_trainable(k)) throw ConfigError(std::string("model ") + model_name(k) + " cannot be probed");
        ms.push_back(k);
    }
    res.models = column_order(ms);

    struct Job {
        TaskKind t;
        ModelKind m;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto t : res.tasks)
        for (auto m : res.models)
            for (auto s : cfg.seeds) jobs.push_back({t, m, s});

    if (!runs_dir.empty()) std::filesystem::create_directories(runs_dir);
    std::vector<TrainResult> out(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    parallel_for(jobs.size(), static_cast<unsigned>(cfg.threads), [&](std::size_t i) {
        try {
            const auto& j = jobs[i];
            TrainOptions opt;
            if (!runs_dir.empty()) {
                const auto id = make_run_id(model_name(j.m), task_name(j.t), j.seed);
                opt.metrics_path = runs_dir + "/" + id + ".csv";
            }
            out[i] = train_run_any(cfg, j.m, j.t, j.seed, opt);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::size_t i = 0;
    for (auto t : res.tasks)
        for (auto m : res.models) {
            ProbeCell c{t, m, {}, 0, probe_threshold(m, t)};
            for (std::size_t s = 0; s < cfg.seeds.size(); ++s, ++i) {
                c.seed_accuracy.push_back(out[i].final.accuracy);
                for (auto& r : out[i].history) res.records.push_back(r);
            }
            c.median_accuracy = median(c.seed_accuracy);
            res.cells.push_back(c);
        }
    return res;
}

inline std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

// Wide table: one row per task, one column per model, median accuracy.
inline std::string probe_table_csv(const ProbeResult& r) {
    std::string s = "task";
    for (auto m : r.models) s += std::string(",") + model_name(m);
    s += '\n';
    for (auto t : r.tasks) {
        s += task_name(t);
        for (auto m : r.models) s += "," + g6(r.cell(t, m).median_accuracy);
        s += '\n';
    }
    return s;
}

// Long form with per-seed values and the acceptance flag for banded cells.
inline std::string probe_flags_csv(const ProbeResult& r) {
    std::string s = "task,model,median_accuracy,seed_accuracies,band_lo,band_hi,flag\n";
    for (auto& c : r.cells) {
        std::string seeds;
        for (std::size_t i = 0; i < c.seed_accuracy.size(); ++i) seeds += (i ? ";" : "") + g6(c.seed_accuracy[i]);
        s += std::string(task_name(c.task)) + "," + model_name(c.model) + "," + g6(c.median_accuracy) + "," + seeds + ",";
        if (c.band)
            s += g6(c.band->lo) + "," + g6(c.band->hi) + "," + (*c.pass() ? "PASS" : "FAIL");
        else
            s += ",,-";
        s += '\n';
    }
    return s;
}

// Console rendering of the table; banded cells carry a + (inside) or ! (outside) mark.
inline std::string probe_table_text(const ProbeResult& r) {
    std::string s = "Task          ";
    for (auto m : r.models) {
        std::string h = model_name(m);
        h.resize(13, ' ');
        s += h;
    }
    s += '\n';
    for (auto t : r.tasks) {
        std::string row = task_name(t);
        row.resize(14, ' ');
        for (auto m : r.models) {
            const auto& c = r.cell(t, m);
            std::string v = fixed2(c.median_accuracy);
            if (c.pass()) v += *c.pass() ? " +" : " !";
            v.resize(13, ' ');
            row += v;
        }
        s += row + '\n';
    }
    return s;
}

}  // namespace prism
