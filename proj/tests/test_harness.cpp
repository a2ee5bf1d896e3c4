#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "prism/harness/commands.hpp"

using namespace prism;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("prism_harness_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

RunConfig tiny_config() {
    RunConfig c;
    c.steps = 6;
    c.batch = 4;
    c.eval_every = 3;
    c.eval_samples = 32;
    c.N = 32;
    return c;
}

struct Proc {
    int code = -1;
    std::string out;
};

// Runs the CLI binary (path from PRISM_LAB_BIN) and captures stdout.
Proc run_cli(const std::string& args, const std::string& env = "") {
    const char* bin = std::getenv("PRISM_LAB_BIN");
    Proc p;
    if (!bin) return p;
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + bin + "\" " + args + " 2>/dev/null";
    FILE* f = ::popen(cmd.c_str(), "r");
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), f)) p.out.append(buf.data(), n);
    const int st = ::pclose(f);
    p.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return p;
}

#define REQUIRE_CLI() \
    if (!std::getenv("PRISM_LAB_BIN")) GTEST_SKIP() << "PRISM_LAB_BIN not set"

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
    auto dir = scratch("cfg_empty");
    spit(dir / "c.json", "");
    auto c = load_config((dir / "c.json").string());
    EXPECT_EQ(c, RunConfig{});
    EXPECT_EQ(c.D, 16);
    EXPECT_EQ(c.V, 64);
    EXPECT_EQ(c.N, 128);
    EXPECT_EQ(c.steps, 10000);
    EXPECT_EQ(c.L, 2);
    EXPECT_EQ(c.batch, 32);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    spit(dir / "w.json", " \n\t ");
    EXPECT_EQ(load_config((dir / "w.json").string()), RunConfig{});
}

TEST(Config, UnknownKeyIsNamed) {
    try {
        parse_config(R"({"D": 16, "hidden_size": 8})");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("hidden_size"), std::string::npos);
    }
}

TEST(Config, ConstraintViolationsAreNamed) {
    for (auto [text, key] : std::vector<std::pair<std::string, std::string>>{{R"({"D": 0})", "D"},
                                                                              {R"({"batch": -1})", "batch"},
                                                                              {R"({"seeds": []})", "seeds"},
                                                                              {R"({"lengths": [8, 4]})", "lengths"},
                                                                              {R"({"D": "x"})", "D"}}) {
        try {
            parse_config(text);
            FAIL() << text;
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find("'" + key + "'"), std::string::npos) << e.what();
        }
    }
    EXPECT_THROW(parse_config(R"({"model": "GRU"})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"precision": "f16"})"), ConfigError);
    EXPECT_THROW(parse_config("{not json"), ConfigError);
    EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/prism.json"), ConfigError);
}

TEST(Config, RoundTripPreservesEveryField) {
    auto dir = scratch("cfg_rt");
    RunConfig c;
    c.model = "MoM";
    c.task = "Parity";
    c.models = {"LA", "PRISM"};
    c.tasks = {"MUX"};
    c.D = 8;
    c.L = 3;
    c.V = 48;
    c.N = 64;
    c.steps = 7;
    c.batch = 5;
    c.lr = 3.5e-4;
    c.seeds = {9, 10};
    c.precision = "f64";
    c.out = "elsewhere";
    c.eval_every = 2;
    c.eval_samples = 11;
    c.timing = true;
    c.threads = 2;
    c.baseline_anchor = 4;
    c.lengths = {16, 32};
    c.bench_models = {"transformer"};
    c.bench_batch = 2;
    save_config(c, (dir / "c.json").string());
    EXPECT_EQ(load_config((dir / "c.json").string()), c);
}

TEST(Metrics, HeaderOnlyForNoRecords) {
    auto dir = scratch("met_empty");
    write_metrics({}, (dir / "m.csv").string());
    EXPECT_EQ(slurp(dir / "m.csv"), std::string(kMetricsHeader) + "\n");
    EXPECT_STREQ(kMetricsHeader, "run_id,model,task,seed,step,loss,accuracy,tokens_per_s");
}

TEST(Metrics, RoundTripAndAppend) {
    auto dir = scratch("met_rt");
    std::vector<MetricRecord> rs{{"PRISM_MQAR_s1", "PRISM", "MQAR", 1, 100, 2.5, 0.25, 0},
                                 {"LA_Parity_s3", "LA", "Parity", 3, 200, 0.693147, 0.5, 12345.6}};
    const auto path = (dir / "m.csv").string();
    write_metrics({rs[0]}, path);
    write_metrics({rs[1]}, path);
    EXPECT_EQ(read_metrics(path), rs);
    const auto text = slurp(path);
    EXPECT_EQ(text.find(kMetricsHeader), 0u);
    EXPECT_EQ(text.find(kMetricsHeader, 1), std::string::npos);
    EXPECT_NE(text.find(",0.693147,"), std::string::npos);
    EXPECT_EQ(g6(1.0 / 3.0), "0.333333");
}

TEST(Metrics, RejectsInvalidRecords) {
    auto dir = scratch("met_bad");
    const auto path = (dir / "m.csv").string();
    EXPECT_THROW(write_metrics({{"r", "m", "t", 1, 5, NAN, 0.5, 0}}, path), NumericError);
    EXPECT_THROW(write_metrics({{"r", "m", "t", 1, 5, 1.0, 1.5, 0}}, path), DataError);
    spit(dir / "bad.csv", "a,b\n");
    EXPECT_THROW(read_metrics((dir / "bad.csv").string()), DataError);
    spit(dir / "bad2.csv", std::string(kMetricsHeader) + "\nx,y,z,1,2,3\n");
    EXPECT_THROW(read_metrics((dir / "bad2.csv").string()), DataError);
}

TEST(Train, PackBatchCutsAfterLastQuery) {
    TaskConfig tc;
    tc.N = 32;
    auto samples = generate_batch(TaskKind::Parity, tc, 6, 3);
    auto pb = pack_batch(samples);
    int last = 0;
    for (auto& s : samples) last = std::max(last, s.query_positions.back());
    EXPECT_EQ(pb.n, static_cast<std::size_t>(last + 1));
    EXPECT_EQ(pb.tokens.size(), 6 * pb.n);
    ASSERT_EQ(pb.positions.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(pb.positions[i], i * pb.n + static_cast<std::size_t>(samples[i].query_positions[0]));
        EXPECT_EQ(pb.tokens[pb.positions[i]], samples[i].tokens[static_cast<std::size_t>(samples[i].query_positions[0])]);
    }
}

TEST(Train, AccuracyIsExactArgmaxFraction) {
    RunConfig cfg = tiny_config();
    SequenceModel<double> model(ModelKind::LinearAttention, cfg.dims(), 5);
    TaskConfig tc;
    tc.N = 32;
    auto samples = generate_batch(TaskKind::MQAR, tc, 10, 4);
    auto ev = evaluate(model, samples, 3);
    std::size_t hits = 0, total = 0;
    double loss = 0;
    NoGradGuard ng;
    for (auto& s : samples) {
        auto logits = model.forward(s.tokens, 1, s.tokens.size());
        for (std::size_t q = 0; q < s.query_positions.size(); ++q) {
            const double* row = logits.data().data() + static_cast<std::size_t>(s.query_positions[q]) * 64;
            hits += std::max_element(row, row + 64) - row == s.targets[q];
            double z = 0;
            for (int v = 0; v < 64; ++v) z += std::exp(row[v]);
            loss += std::log(z) - row[s.targets[q]];
            ++total;
        }
    }
    EXPECT_EQ(ev.queries, total);
    EXPECT_DOUBLE_EQ(ev.accuracy, static_cast<double>(hits) / static_cast<double>(total));
    EXPECT_NEAR(ev.loss, loss / static_cast<double>(total), 1e-9);
}

TEST(Train, LossIsMaskedToQueries) {
    // Only query positions are scored, and nothing after the last query reaches the loss.
    RunConfig cfg = tiny_config();
    TaskConfig a, b;
    a.N = b.N = 64;
    a.noise_seed = 1;
    b.noise_seed = 2;
    auto sa = generate_batch(TaskKind::MQAR, a, 4, 8), sb = generate_batch(TaskKind::MQAR, b, 4, 8);
    auto pa = pack_batch(sa), pbb = pack_batch(sb);
    EXPECT_EQ(pa.positions, pbb.positions);
    EXPECT_EQ(pa.targets, pbb.targets);
    for (auto k : {ModelKind::PRISM, ModelKind::LinearAttention, ModelKind::MoM, ModelKind::Transformer}) {
        SequenceModel<double> m(k, cfg.dims(), 6);
        NoGradGuard ng;
        const double full = m.loss(pa.tokens, pa.batch, pa.n, pa.positions, pa.targets).item();
        auto tail = sa;
        for (auto& s : tail)
            for (std::size_t t = pa.n; t < s.tokens.size(); ++t) s.tokens[t] = (s.tokens[t] + 5) % 16;
        auto pt = pack_batch(tail);
        EXPECT_EQ(full, m.loss(pt.tokens, pt.batch, pt.n, pt.positions, pt.targets).item()) << model_name(k);
        // same value from the logits at the query positions only
        auto logits = m.logits_at(pa.tokens, pa.batch, pa.n, pa.positions);
        double ce = 0;
        for (std::size_t p = 0; p < pa.positions.size(); ++p) {
            double z = 0;
            for (std::size_t v = 0; v < 64; ++v) z += std::exp(logits(p, v));
            ce += std::log(z) - logits(p, static_cast<std::size_t>(pa.targets[p]));
        }
        EXPECT_NEAR(full, ce / static_cast<double>(pa.positions.size()), 1e-10) << model_name(k);
    }
}

TEST(Train, DeterministicMetricBytes) {
    auto dir = scratch("train_det");
    RunConfig cfg = tiny_config();
    for (auto m : {ModelKind::PRISM, ModelKind::MoM}) {
        const auto a = (dir / "a.csv").string(), b = (dir / "b.csv").string();
        train_run<float>(cfg, m, TaskKind::MQAR, 2, {a, ""});
        train_run<float>(cfg, m, TaskKind::MQAR, 2, {b, ""});
        EXPECT_EQ(slurp(a), slurp(b)) << model_name(m);
        EXPECT_EQ(read_metrics(a).size(), 2u);
        auto c = train_run<float>(cfg, m, TaskKind::MQAR, 3);
        EXPECT_NE(c.final.loss, read_metrics(a).back().loss);
    }
}

TEST(Train, ZeroStepsEvaluatesInit) {
    RunConfig cfg = tiny_config();
    cfg.steps = 0;
    cfg.eval_samples = 256;
    auto r = train_run<float>(cfg, ModelKind::PRISM, TaskKind::MQAR, 1);
    ASSERT_EQ(r.history.size(), 1u);
    EXPECT_EQ(r.final.step, 0);
    EXPECT_LT(r.final.accuracy, 0.15);
    EXPECT_GT(r.final.loss, 2.0);
    EXPECT_EQ(r.final.run_id, "PRISM_MQAR_s1");
}

TEST(Train, SnapshotHoldsEveryParameter) {
    auto dir = scratch("snap");
    RunConfig cfg = tiny_config();
    cfg.steps = 1;
    train_run<float>(cfg, ModelKind::PRISM, TaskKind::Parity, 1, {"", (dir / "p.json").string()});
    auto j = nlohmann::json::parse(slurp(dir / "p.json"));
    std::size_t n = 0;
    for (auto& p : j["parameters"]) n += p["data"].size();
    EXPECT_EQ(n, 10272u);
    EXPECT_EQ(j["precision"], "float32");
}

TEST(Train, NonFiniteLossAbortsWithStep) {
    RunConfig cfg = tiny_config();
    cfg.lr = 1e30;
    cfg.steps = 30;
    cfg.eval_every = 100;
    for (auto m : {ModelKind::PRISM, ModelKind::LinearAttention}) {
        try {
            train_run<float>(cfg, m, TaskKind::MQAR, 1);
            FAIL() << model_name(m);
        } catch (const NumericError& e) {
            EXPECT_GE(e.step(), 1) << model_name(m);
        }
    }
}

TEST(Probe, BandsAndMedian) {
    EXPECT_EQ(median({3, 1, 2}), 2);
    EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
    EXPECT_THROW(median({}), DataError);
    EXPECT_DOUBLE_EQ(probe_threshold(ModelKind::PRISM, TaskKind::Parity)->lo, 0.95);
    EXPECT_DOUBLE_EQ(probe_threshold(ModelKind::PRISM, TaskKind::MQAR)->lo, 0.90);
    EXPECT_DOUBLE_EQ(probe_threshold(ModelKind::LinearAttention, TaskKind::MQAR)->lo, 0.90);
    EXPECT_DOUBLE_EQ(probe_threshold(ModelKind::MoM, TaskKind::LocalXOR)->hi, 0.65);
    EXPECT_FALSE(probe_threshold(ModelKind::Transformer, TaskKind::MQAR));
}

TEST(Probe, SingleCellAndShape) {
    RunConfig cfg = tiny_config();
    cfg.steps = 2;
    cfg.eval_every = 2;
    cfg.models = {"PRISM"};
    cfg.tasks = {"Parity"};
    cfg.seeds = {1};
    auto one = run_probe(cfg);
    ASSERT_EQ(one.cells.size(), 1u);
    const auto table = probe_table_csv(one);
    EXPECT_EQ(table.substr(0, 11), "task,PRISM\n");
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);

    cfg.models = {"PRISM", "Transformer", "LA"};
    cfg.tasks = {"MUX", "MQAR"};
    cfg.seeds = {1, 2, 3};
    auto r = run_probe(cfg);
    EXPECT_EQ(r.cells.size(), 6u);
    EXPECT_EQ(r.models, (std::vector<ModelKind>{ModelKind::Transformer, ModelKind::LinearAttention, ModelKind::PRISM}));
    EXPECT_EQ(r.tasks, (std::vector<TaskKind>{TaskKind::MQAR, TaskKind::MUX}));
    for (auto& c : r.cells) {
        EXPECT_EQ(c.seed_accuracy.size(), 3u);
        EXPECT_EQ(c.median_accuracy, median(c.seed_accuracy));
    }
    EXPECT_EQ(r.records.size(), 6u * 3u);
    const auto flags = probe_flags_csv(r);
    EXPECT_EQ(flags.find("task,model,median_accuracy,seed_accuracies,band_lo,band_hi,flag\n"), 0u);
    EXPECT_EQ(std::count(flags.begin(), flags.end(), '\n'), 7);
    EXPECT_NE(probe_table_text(r).find("MQAR"), std::string::npos);
    cfg.models = {"DeltaRule"};
    EXPECT_THROW(run_probe(cfg), ConfigError);
}

TEST(Probe, FullSweepShape) {
    RunConfig cfg = tiny_config();
    cfg.steps = 1;
    cfg.eval_every = 1;
    cfg.eval_samples = 4;
    cfg.seeds = {1};
    auto r = run_probe(cfg);
    EXPECT_EQ(r.tasks.size(), 9u);
    EXPECT_EQ(r.models.size(), 4u);
    EXPECT_EQ(r.cells.size(), 36u);
}

TEST(Bench, ShapeAndErrors) {
    BenchOptions o;
    o.models = {};
    EXPECT_EQ(bench_csv(run_bench(o)), std::string(kBenchHeader) + "\n");
    o.models = {"prism_chunked", "transformer"};
    o.lengths = {16, 32};
    o.repeats = 1;
    auto rows = run_bench(o);
    ASSERT_EQ(rows.size(), 4u);
    for (auto& r : rows) {
        EXPECT_GT(r.tokens_per_s, 0);
        EXPECT_NEAR(r.seconds_per_token * r.tokens_per_s, 1.0, 1e-9);
    }
    o.models = {"mamba"};
    EXPECT_THROW(run_bench(o), ConfigError);
    o.models = {"transformer"};
    o.lengths = {32, 16};
    EXPECT_THROW(run_bench(o), ConfigError);
}

TEST(Commands, OutputDirectoryPriority) {
    RunConfig cfg;
    cfg.out = "from_config";
    ::unsetenv("PRISM_LAB_OUT");
    EXPECT_EQ(resolve_out_dir(cfg, ""), "from_config");
    ::setenv("PRISM_LAB_OUT", "from_env", 1);
    EXPECT_EQ(resolve_out_dir(cfg, ""), "from_env");
    EXPECT_EQ(resolve_out_dir(cfg, "from_flag"), "from_flag");
    ::unsetenv("PRISM_LAB_OUT");
}

TEST(Commands, VerifyExitStatus) {
    auto dir = scratch("cmd_verify");
    std::ostringstream os;
    EXPECT_EQ(cmd_verify({"ideal"}, {}, dir.string(), os), kExitOk);
    EXPECT_EQ(cmd_verify({"ideal", "forced_failure"}, {}, dir.string(), os), kExitVerify);
    EXPECT_TRUE(fs::exists(dir / "verify_report.txt"));
    EXPECT_TRUE(fs::exists(dir / "verify_report.csv"));
}

TEST(Cli, ExitCodes) {
    REQUIRE_CLI();
    auto dir = scratch("cli");
    const auto out = " --out \"" + dir.string() + "\"";
    EXPECT_EQ(run_cli("--help").code, 0);
    EXPECT_EQ(run_cli("").code, 1);
    EXPECT_EQ(run_cli("frobnicate").code, 1);
    EXPECT_EQ(run_cli("train --model GRU" + out).code, 1);
    EXPECT_EQ(run_cli("train --config /nonexistent.json" + out).code, 1);
    EXPECT_EQ(run_cli("verify --check ideal" + out).code, 0);
    EXPECT_EQ(run_cli("verify --check ideal,forced_failure" + out).code, 3);
    spit(dir / "nan.json", R"({"lr": 1e30, "steps": 30, "batch": 4, "N": 32, "eval_samples": 8, "eval_every": 100})");
    EXPECT_EQ(run_cli("train --config \"" + (dir / "nan.json").string() + "\"" + out).code, 2);
}

TEST(Cli, TrainGenAndEnvOutput) {
    REQUIRE_CLI();
    auto dir = scratch("cli_train");
    auto r = run_cli("train --model LA --task Parity --steps 0 --seed 4 --out \"" + dir.string() + "\"");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("LA_Parity_s4,LA,Parity,4,0,", 0), 0u) << r.out;
    EXPECT_TRUE(fs::exists(dir / "LA_Parity_s4.csv"));
    EXPECT_TRUE(fs::exists(dir / "LA_Parity_s4.params.json"));

    auto envdir = scratch("cli_env");
    EXPECT_EQ(run_cli("verify --check ideal", "PRISM_LAB_OUT=\"" + envdir.string() + "\"").code, 0);
    EXPECT_TRUE(fs::exists(envdir / "verify_report.txt"));

    auto g = run_cli("gen --task MQAR --count 3 --N 16 --seed 2");
    EXPECT_EQ(g.code, 0);
    std::istringstream lines(g.out);
    std::string line;
    int n = 0;
    TaskConfig tc;
    tc.N = 16;
    tc.seed = 2;
    const auto expect = generate_batch(TaskKind::MQAR, tc, 3, 2);
    while (std::getline(lines, line)) EXPECT_EQ(parse_sample(line), expect[static_cast<std::size_t>(n++)]);
    EXPECT_EQ(n, 3);
}
