#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/core/errors.hpp"
#include "prism/models/model.hpp"
#include "prism/tasks/tasks.hpp"

namespace prism {

enum class Precision { f32, f64 };

inline const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

// Everything a train / probe / bench run needs. Stored on disk as a flat JSON object.
struct RunConfig {
    std::string model = "PRISM";
    std::string task = "MQAR";
    std::vector<std::string> models{"Transformer", "LA", "MoM", "PRISM"};
    std::vector<std::string> tasks;  // empty = all nine
    int D = 16;
    int L = 2;
    int V = 64;
    int N = 128;
    int steps = 10000;
    int batch = 32;
    double lr = 1e-3;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string precision = "f32";
    std::string out = "prism_out";
    int eval_every = 1000;
    int eval_samples = 1024;
    // Wall-clock columns are nondeterministic; off keeps metric files byte-stable.
    bool timing = false;
    int threads = 1;
    int baseline_anchor = 0;
    std::vector<int> lengths{256, 1024, 4096};
    std::vector<std::string> bench_models{"prism_serial", "prism_chunked", "transformer"};
    int bench_batch = 4;

    void validate() const {
        auto positive = [](const char* k, long long v) {
            if (v <= 0) throw ConfigError(std::string("config key '") + k + "' must be positive");
        };
        positive("D", D);
        positive("L", L);
        positive("V", V);
        positive("N", N);
        positive("batch", batch);
        positive("eval_every", eval_every);
        positive("eval_samples", eval_samples);
        positive("threads", threads);
        positive("bench_batch", bench_batch);
        if (steps < 0) throw ConfigError("config key 'steps' must be non-negative");
        if (!(lr > 0)) throw ConfigError("config key 'lr' must be positive");
        if (baseline_anchor < 0) throw ConfigError("config key 'baseline_anchor' must be non-negative");
        if (seeds.empty()) throw ConfigError("config key 'seeds' must not be empty");
        parse_precision(precision);
        parse_model_kind(model);
        parse_task_kind(task);
        for (auto& m : models) parse_model_kind(m);
        for (auto& t : tasks) parse_task_kind(t);
        for (std::size_t i = 0; i < lengths.size(); ++i) {
            positive("lengths", lengths[i]);
            if (i && lengths[i] <= lengths[i - 1]) throw ConfigError("config key 'lengths' must be ascending");
        }
        if (out.empty()) throw ConfigError("config key 'out' must not be empty");
    }

    std::vector<TaskKind> task_list() const {
        if (tasks.empty()) return all_tasks();
        std::vector<TaskKind> ks;
        for (auto& t : tasks) ks.push_back(parse_task_kind(t));
        return ks;
    }

    ModelDims dims() const {
        ModelDims d;
        d.V = static_cast<std::size_t>(V);
        d.D = static_cast<std::size_t>(D);
        d.L = static_cast<std::size_t>(L);
        d.baseline_anchor = static_cast<std::size_t>(baseline_anchor);
        return d;
    }

    bool operator==(const RunConfig&) const = default;
};

#define PRISM_CONFIG_FIELDS(X)                                                                                        \
    X(model) X(task) X(models) X(tasks) X(D) X(L) X(V) X(N) X(steps) X(batch) X(lr) X(seeds) X(precision) X(out)      \
        X(eval_every) X(eval_samples) X(timing) X(threads) X(baseline_anchor) X(lengths) X(bench_models)             \
            X(bench_batch)

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
#define X(f) j[#f] = c.f;
    PRISM_CONFIG_FIELDS(X)
#undef X
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{
#define X(f) #f,
        PRISM_CONFIG_FIELDS(X)
#undef X
    };
    for (auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    RunConfig c;
#define X(f)                                                                                  \
    if (j.contains(#f)) {                                                                     \
        try {                                                                                 \
            j.at(#f).get_to(c.f);                                                             \
        } catch (const nlohmann::json::exception& e) {                                        \
            throw ConfigError(std::string("config key '" #f "' has the wrong type: ") + e.what()); \
        }                                                                                     \
    }
    PRISM_CONFIG_FIELDS(X)
#undef X
    c.validate();
    return c;
}

#undef PRISM_CONFIG_FIELDS

// Whitespace-only or empty text yields the defaults.
inline RunConfig parse_config(const std::string& text) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return RunConfig{};
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline void save_config(const RunConfig& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file '" + path + "'");
    out << config_to_json(c).dump(2) << '\n';
}

}  // namespace prism
