#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prism/harness/commands.hpp"

using namespace prism;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string precision;
    std::optional<int> threads;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON run config");
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--precision", c.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

RunConfig base_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (!c.precision.empty()) cfg.precision = c.precision;
    if (c.threads) cfg.threads = *c.threads;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prism_lab: train, probe, benchmark and verify PRISM sequence models"};
    app.require_subcommand(1);
    Common common;

    auto* train = app.add_subcommand("train", "train one model on one task");
    add_common(train, common);
    std::string model, task;
    std::optional<int> steps, batch;
    train->add_option("--model", model, "PRISM, LA, MoM or Transformer");
    train->add_option("--task", task, "probe task name");
    train->add_option("--steps", steps, "training steps");
    train->add_option("--batch", batch, "batch size");

    auto* probe = app.add_subcommand("probe", "run the probing sweep and print the accuracy table");
    add_common(probe, common);
    std::vector<std::string> models, tasks;
    probe->add_option("--models", models, "models to sweep")->delimiter(',');
    probe->add_option("--tasks", tasks, "tasks to sweep")->delimiter(',');
    probe->add_option("--steps", steps, "training steps");
    probe->add_option("--batch", batch, "batch size");

    auto* bench = app.add_subcommand("bench", "per-token forward time against sequence length");
    add_common(bench, common);
    std::vector<int> lengths;
    std::vector<std::string> bench_models;
    bench->add_option("--lengths", lengths, "ascending sequence lengths")->delimiter(',');
    bench->add_option("--models", bench_models, "prism_serial, prism_chunked, transformer")->delimiter(',');

    auto* verify = app.add_subcommand("verify", "run the numerical property suite");
    add_common(verify, common);
    std::vector<std::string> checks;
    std::optional<int> trials;
    verify->add_option("--check", checks, "check names (default: all)")->delimiter(',');
    verify->add_option("--trials", trials, "Monte Carlo trials for the noise checks");

    auto* gen = app.add_subcommand("gen", "print task samples, one per line");
    add_common(gen, common);
    std::size_t count = 4;
    std::optional<int> length;
    gen->add_option("--task", task, "probe task name");
    gen->add_option("--count", count, "number of samples");
    gen->add_option("--N", length, "sequence length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        auto cfg = base_config(common);
        const std::string out = resolve_out_dir(cfg, common.out);
        if (!model.empty()) cfg.model = model;
        if (!task.empty()) cfg.task = task;
        if (steps) cfg.steps = *steps;
        if (batch) cfg.batch = *batch;
        if (!models.empty()) cfg.models = models;
        if (!tasks.empty()) cfg.tasks = tasks;
        if (!lengths.empty()) cfg.lengths = lengths;
        if (!bench_models.empty()) cfg.bench_models = bench_models;
        if (length) cfg.N = *length;
        if (common.seed) cfg.seeds = {*common.seed};
        cfg.validate();
        const std::uint64_t seed = cfg.seeds.front();

        if (*train) return cmd_train(cfg, out, seed, std::cout);
        if (*probe) return cmd_probe(cfg, out, std::cout);
        if (*bench) return cmd_bench(cfg, out, seed, std::cout);
        if (*verify) {
            VerifyOptions vo;
            vo.seed = common.seed.value_or(1);
            vo.threads = static_cast<unsigned>(cfg.threads);
            if (trials) vo.noise_trials = *trials;
            return cmd_verify(checks, vo, out, std::cout);
        }
        if (*gen) return cmd_gen(cfg, count, seed, std::cout);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure";
        if (e.step() >= 0) std::cerr << " at step " << e.step();
        std::cerr << ": " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
