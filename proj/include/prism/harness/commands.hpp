#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "prism/harness/bench.hpp"
#include "prism/harness/config.hpp"
#include "prism/harness/metrics.hpp"
#include "prism/harness/probe.hpp"
#include "prism/harness/train.hpp"
#include "prism/verify/suite.hpp"

namespace prism {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitNumeric = 2, kExitVerify = 3 };

// --out beats PRISM_LAB_OUT, which beats the config file.
inline std::string resolve_out_dir(const RunConfig& cfg, const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    if (const char* env = std::getenv("PRISM_LAB_OUT"); env && *env) return env;
    return cfg.out;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

inline int cmd_train(const RunConfig& cfg, const std::string& out_dir, std::uint64_t seed, std::ostream& os) {
    std::filesystem::create_directories(out_dir);
    const auto mk = parse_model_kind(cfg.model);
    const auto tk = parse_task_kind(cfg.task);
    const auto id = make_run_id(model_name(mk), task_name(tk), seed);
    TrainOptions opt{out_dir + "/" + id + ".csv", out_dir + "/" + id + ".params.json"};
    const auto res = train_run_any(cfg, mk, tk, seed, opt);
    os << metric_line(res.final) << '\n';
    return kExitOk;
}

inline int cmd_probe(const RunConfig& cfg, const std::string& out_dir, std::ostream& os) {
    std::filesystem::create_directories(out_dir);
    const auto res = run_probe(cfg, out_dir + "/runs");
    const auto merged = out_dir + "/probe_metrics.csv";
    std::filesystem::remove(merged);
    write_metrics(res.records, merged);
    write_text(out_dir + "/probe_table.csv", probe_table_csv(res));
    write_text(out_dir + "/probe_flags.csv", probe_flags_csv(res));
    os << probe_table_text(res);
    return kExitOk;
}

inline int cmd_bench(const RunConfig& cfg, const std::string& out_dir, std::uint64_t seed, std::ostream& os) {
    std::filesystem::create_directories(out_dir);
    BenchOptions bo;
    bo.lengths = cfg.lengths;
    bo.models = cfg.bench_models;
    bo.batch = cfg.bench_batch;
    bo.D = cfg.D;
    bo.L = cfg.L;
    bo.seed = seed;
    bo.threads = static_cast<unsigned>(cfg.threads);
    const auto csv = bench_csv(run_bench(bo));
    write_text(out_dir + "/bench.csv", csv);
    os << csv;
    return kExitOk;
}

inline int cmd_verify(const std::vector<std::string>& selection, const VerifyOptions& vo, const std::string& out_dir,
                      std::ostream& os) {
    std::filesystem::create_directories(out_dir);
    const auto rep = run_verify_suite(selection.empty() ? default_checks() : selection, vo);
    const auto text = report_text(rep);
    write_text(out_dir + "/verify_report.txt", text);
    write_text(out_dir + "/verify_report.csv", report_csv(rep));
    os << text;
    return rep.pass() ? kExitOk : kExitVerify;
}

inline int cmd_gen(const RunConfig& cfg, std::size_t count, std::uint64_t seed, std::ostream& os) {
    const auto tk = parse_task_kind(cfg.task);
    for (auto& s : generate_batch(tk, task_config_for(cfg, seed), count, seed)) os << format_sample(s) << '\n';
    return kExitOk;
}

}  // namespace prism
