#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prism/core/errors.hpp"
#include "prism/core/random.hpp"

namespace prism {

struct VocabLayout {
    int V = 64;
    int noise_lo = 0, noise_hi = 16;
    int data_lo = 16, data_hi = 48;
    int control_lo = 48, control_hi = 64;
    // named control tokens
    int XOR = 0, ON = 0, OFF = 0, NUL = 0, SEL0 = 0, SEL1 = 0, CTX_A = 0, CTX_B = 0, QRY = 0, ASSIGN = 0;

    int data_size() const { return data_hi - data_lo; }
    int data(int i) const { return data_lo + i; }
    bool is_noise(int t) const { return t >= noise_lo && t < noise_hi; }
    bool is_data(int t) const { return t >= data_lo && t < data_hi; }
    bool is_control(int t) const { return t >= control_lo && t < control_hi; }

    std::vector<int> named() const { return {XOR, ON, OFF, NUL, SEL0, SEL1, CTX_A, CTX_B, QRY, ASSIGN}; }
};

// Fixed quarter / half / quarter split. The seed is accepted for interface symmetry;
// the layout does not depend on it.
inline VocabLayout vocab_partition(int V, std::uint64_t seed = 0) {
    (void)seed;
    if (V < 32) throw ConfigError("vocabulary size must be >= 32, got " + std::to_string(V));
    VocabLayout v;
    v.V = V;
    const int q = V / 4;
    v.noise_lo = 0;
    v.noise_hi = q;
    v.data_lo = q;
    v.data_hi = V - q;
    v.control_lo = V - q;
    v.control_hi = V;
    int c = v.control_lo;
    for (int* tok : {&v.XOR, &v.ON, &v.OFF, &v.NUL, &v.SEL0, &v.SEL1, &v.CTX_A, &v.CTX_B, &v.QRY, &v.ASSIGN}) *tok = c++;
    return v;
}

enum class TaskKind { MQAR, PolyRecall, VarTracking, LocalXOR, Parity, ModuloAdd, Palindrome, SilenceGate, MUX };

inline const std::vector<TaskKind>& all_tasks() {
    static const std::vector<TaskKind> k{TaskKind::MQAR,     TaskKind::PolyRecall, TaskKind::VarTracking,
                                         TaskKind::Parity,   TaskKind::LocalXOR,   TaskKind::ModuloAdd,
                                         TaskKind::Palindrome, TaskKind::MUX,      TaskKind::SilenceGate};
    return k;
}

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::MQAR: return "MQAR";
        case TaskKind::PolyRecall: return "PolyRecall";
        case TaskKind::VarTracking: return "VarTracking";
        case TaskKind::LocalXOR: return "LocalXOR";
        case TaskKind::Parity: return "Parity";
        case TaskKind::ModuloAdd: return "ModuloAdd";
        case TaskKind::Palindrome: return "Palindrome";
        case TaskKind::SilenceGate: return "SilenceGate";
        case TaskKind::MUX: return "MUX";
    }
    return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
    for (auto k : all_tasks())
        if (s == task_name(k)) return k;
    if (s == "XOR") return TaskKind::LocalXOR;
    if (s == "ModAdd") return TaskKind::ModuloAdd;
    if (s == "Silence") return TaskKind::SilenceGate;
    throw ConfigError("unknown task '" + s + "'");
}

struct TaskConfig {
    int N = 128;
    int V = 64;
    std::uint64_t seed = 0;
    int K = 4;         // MQAR pairs, SilenceGate triples
    int contexts = 2;  // PolyRecall
    int poly_keys = 2;
    int chain = 3;     // VarTracking
    int M = 10;        // ModuloAdd
    int bits = 3;      // Parity
    // Noise filler stream; defaults to seed. Changing it alters only non-payload positions.
    std::optional<std::uint64_t> noise_seed;
};

struct TaskSample {
    std::vector<int> tokens;
    std::vector<int> query_positions;
    std::vector<int> targets;

    bool operator==(const TaskSample&) const = default;
};

namespace detail {

class SampleBuilder {
   public:
    SampleBuilder(int n) : tokens_(static_cast<std::size_t>(n), -1) {}

    void put(int pos, int tok) {
        if (pos < 0 || pos >= static_cast<int>(tokens_.size()) || tokens_[static_cast<std::size_t>(pos)] != -1)
            throw ConfigError("task placement collided or overflowed the sequence");
        tokens_[static_cast<std::size_t>(pos)] = tok;
    }

    void query(int pos, int target) { queries_.push_back({pos, target}); }

    TaskSample finish(const VocabLayout& vl, Rng& noise) {
        TaskSample s;
        for (auto& t : tokens_)
            if (t == -1) t = uniform_int(noise, vl.noise_lo, vl.noise_hi - 1);
        s.tokens = tokens_;
        std::sort(queries_.begin(), queries_.end());
        for (auto& [p, t] : queries_) {
            s.query_positions.push_back(p);
            s.targets.push_back(t);
        }
        return s;
    }

   private:
    std::vector<int> tokens_;
    std::vector<std::pair<int, int>> queries_;
};

// Random non-overlapping starts for blocks of the given lengths inside [lo, hi), in order.
inline std::vector<int> place_blocks(Rng& rng, int lo, int hi, const std::vector<int>& lens) {
    const int total = std::accumulate(lens.begin(), lens.end(), 0);
    const int slack = hi - lo - total;
    if (slack < 0) throw ConfigError("task payload does not fit in the sequence length");
    std::vector<int> off(lens.size());
    for (auto& o : off) o = uniform_int(rng, 0, slack);
    std::sort(off.begin(), off.end());
    std::vector<int> starts(lens.size());
    int used = 0;
    for (std::size_t i = 0; i < lens.size(); ++i) {
        starts[i] = lo + off[i] + used;
        used += lens[i];
    }
    return starts;
}

// k distinct values from [0, n).
inline std::vector<int> distinct(Rng& rng, int n, int k) {
    if (k > n) throw ConfigError("not enough distinct data tokens for the requested task size");
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(uniform_int(rng, i, n - 1))]);
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

inline void check_cfg(const TaskConfig& c) {
    if (c.N < 4) throw ConfigError("task sequence length must be >= 4");
    if (c.K < 1 || c.contexts < 1 || c.poly_keys < 1 || c.chain < 1 || c.bits < 1 || c.M < 1)
        throw ConfigError("task parameters must be positive");
}

}  // namespace detail

inline TaskSample gen_mqar(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    const int K = cfg.K;
    if (4 * K > cfg.N) throw ConfigError("MQAR: " + std::to_string(K) + " pairs and queries overflow N=" + std::to_string(cfg.N));
    detail::SampleBuilder sb(cfg.N);
    const auto keys = detail::distinct(rng, vl.data_size(), K);
    std::vector<int> vals(static_cast<std::size_t>(K));
    for (auto& v : vals) v = uniform_int(rng, 0, vl.data_size() - 1);
    // pairs in the first half, queries in the second, query order shuffled
    const int half = std::max(2 * K, cfg.N / 2);
    const auto ps = detail::place_blocks(rng, 0, half, std::vector<int>(static_cast<std::size_t>(K), 2));
    const auto qs = detail::place_blocks(rng, half, cfg.N, std::vector<int>(static_cast<std::size_t>(K), 2));
    const auto order = detail::distinct(rng, K, K);
    for (int i = 0; i < K; ++i) {
        sb.put(ps[static_cast<std::size_t>(i)], vl.data(keys[static_cast<std::size_t>(i)]));
        sb.put(ps[static_cast<std::size_t>(i)] + 1, vl.data(vals[static_cast<std::size_t>(i)]));
        const auto j = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
        const int q = qs[static_cast<std::size_t>(i)];
        sb.put(q, vl.QRY);
        sb.put(q + 1, vl.data(keys[j]));
        sb.query(q + 1, vl.data(vals[j]));
    }
    return sb.finish(vl, noise);
}

inline TaskSample gen_poly_recall(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    const int C = cfg.contexts, K = cfg.poly_keys;
    if (C > 2) throw ConfigError("PolyRecall supports at most two contexts");
    const int ctx_tok[2] = {vl.CTX_A, vl.CTX_B};
    if (3 * C * K + 3 * K > cfg.N) throw ConfigError("PolyRecall payload overflows N");
    detail::SampleBuilder sb(cfg.N);
    const auto keys = detail::distinct(rng, vl.data_size(), K);
    // value[c][k]
    std::vector<std::vector<int>> vals(static_cast<std::size_t>(C), std::vector<int>(static_cast<std::size_t>(K)));
    for (auto& row : vals)
        for (auto& v : row) v = uniform_int(rng, 0, vl.data_size() - 1);
    const int half = std::max(3 * C * K, cfg.N / 2);
    const auto ps = detail::place_blocks(rng, 0, half, std::vector<int>(static_cast<std::size_t>(C * K), 3));
    const auto order = detail::distinct(rng, C * K, C * K);
    for (int i = 0; i < C * K; ++i) {
        const int id = order[static_cast<std::size_t>(i)];
        const int c = id / K, k = id % K;
        const int p = ps[static_cast<std::size_t>(i)];
        sb.put(p, ctx_tok[c]);
        sb.put(p + 1, vl.data(keys[static_cast<std::size_t>(k)]));
        sb.put(p + 2, vl.data(vals[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)]));
    }
    // one query per key, each under a randomly chosen context
    const auto qs = detail::place_blocks(rng, half, cfg.N, std::vector<int>(static_cast<std::size_t>(K), 3));
    for (int k = 0; k < K; ++k) {
        const int c = uniform_int(rng, 0, C - 1);
        const int q = qs[static_cast<std::size_t>(k)];
        sb.put(q, vl.QRY);
        sb.put(q + 1, ctx_tok[c]);
        sb.put(q + 2, vl.data(keys[static_cast<std::size_t>(k)]));
        sb.query(q + 2, vl.data(vals[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)]));
    }
    return sb.finish(vl, noise);
}

// Chain x1 = val, x2 = x1, ..., xc = x(c-1); query xc. Assignments are [var, ASSIGN, rhs].
inline TaskSample gen_var_tracking(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    const int c = cfg.chain;
    if (3 * c + 2 > cfg.N) throw ConfigError("VarTracking chain overflows N");
    detail::SampleBuilder sb(cfg.N);
    // c variable names plus one root value, all distinct
    const auto ids = detail::distinct(rng, vl.data_size(), c + 1);
    const int root = ids[static_cast<std::size_t>(c)];
    const auto ps = detail::place_blocks(rng, 0, cfg.N - 2, std::vector<int>(static_cast<std::size_t>(c), 3));
    for (int i = 0; i < c; ++i) {
        const int p = ps[static_cast<std::size_t>(i)];
        sb.put(p, vl.data(ids[static_cast<std::size_t>(i)]));
        sb.put(p + 1, vl.ASSIGN);
        sb.put(p + 2, vl.data(i == 0 ? root : ids[static_cast<std::size_t>(i - 1)]));
    }
    sb.put(cfg.N - 2, vl.QRY);
    sb.put(cfg.N - 1, vl.data(ids[static_cast<std::size_t>(c - 1)]));
    sb.query(cfg.N - 1, vl.data(root));
    return sb.finish(vl, noise);
}

namespace detail {

// Contiguous operand block followed by QRY; the prediction is read at QRY.
inline TaskSample logic_block(const TaskConfig& cfg, Rng& rng, Rng& noise, const std::vector<int>& operands,
                              int target) {
    const auto vl = vocab_partition(cfg.V);
    const int len = static_cast<int>(operands.size()) + 1;
    if (len > cfg.N) throw ConfigError("logic block longer than N");
    SampleBuilder sb(cfg.N);
    const int start = uniform_int(rng, 0, cfg.N - len);
    for (int i = 0; i < len - 1; ++i) sb.put(start + i, operands[static_cast<std::size_t>(i)]);
    sb.put(start + len - 1, vl.QRY);
    sb.query(start + len - 1, target);
    return sb.finish(vl, noise);
}

}  // namespace detail

// Label tokens: binary and arithmetic results use the first data tokens.
inline int label_token(const VocabLayout& vl, int value) { return vl.data(value); }

inline TaskSample gen_local_xor(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    const int a = uniform_int(rng, 0, vl.data_size() - 1);
    const int b = uniform_int(rng, 0, vl.data_size() - 1);
    const int y = (a % 2) != (b % 2) ? 1 : 0;
    return detail::logic_block(cfg, rng, noise, {vl.data(a), vl.data(b), vl.XOR}, label_token(vl, y));
}

inline TaskSample gen_parity(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    std::vector<int> ops;
    int s = 0;
    for (int i = 0; i < cfg.bits; ++i) {
        const int bit = uniform_int(rng, 0, 1);
        s += bit;
        ops.push_back(label_token(vl, bit));
    }
    return detail::logic_block(cfg, rng, noise, ops, label_token(vl, s % 2));
}

inline TaskSample gen_modulo_add(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    if (cfg.M > vl.data_size()) throw ConfigError("ModuloAdd modulus exceeds the data range");
    const int a = uniform_int(rng, 0, cfg.M - 1);
    const int b = uniform_int(rng, 0, cfg.M - 1);
    return detail::logic_block(cfg, rng, noise, {vl.data(a), vl.data(b)}, label_token(vl, (a + b) % cfg.M));
}

inline TaskSample gen_palindrome(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    const int n = vl.data_size();
    const int a = uniform_int(rng, 0, n - 1);
    const int b = uniform_int(rng, 0, n - 1);
    const bool same = uniform_int(rng, 0, 1) == 1;
    int c = a;
    if (!same) {
        c = uniform_int(rng, 0, n - 2);
        if (c >= a) ++c;
    }
    return detail::logic_block(cfg, rng, noise, {vl.data(a), vl.data(b), vl.data(c)}, label_token(vl, same ? 1 : 0));
}

inline TaskSample gen_silence_gate(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    const int K = cfg.K;
    if (5 * K > cfg.N) throw ConfigError("SilenceGate payload overflows N");
    detail::SampleBuilder sb(cfg.N);
    const auto keys = detail::distinct(rng, vl.data_size(), K);
    const int half = std::max(3 * K, cfg.N / 2);
    const auto ps = detail::place_blocks(rng, 0, half, std::vector<int>(static_cast<std::size_t>(K), 3));
    const auto qs = detail::place_blocks(rng, half, cfg.N, std::vector<int>(static_cast<std::size_t>(K), 2));
    const auto order = detail::distinct(rng, K, K);
    std::vector<int> answer(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) {
        const bool on = uniform_int(rng, 0, 1) == 1;
        const int v = uniform_int(rng, 0, vl.data_size() - 1);
        const int p = ps[static_cast<std::size_t>(i)];
        sb.put(p, on ? vl.ON : vl.OFF);
        sb.put(p + 1, vl.data(keys[static_cast<std::size_t>(i)]));
        sb.put(p + 2, vl.data(v));
        answer[static_cast<std::size_t>(i)] = on ? vl.data(v) : vl.NUL;
    }
    for (int i = 0; i < K; ++i) {
        const auto j = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
        const int q = qs[static_cast<std::size_t>(i)];
        sb.put(q, vl.QRY);
        sb.put(q + 1, vl.data(keys[j]));
        sb.query(q + 1, answer[j]);
    }
    return sb.finish(vl, noise);
}

inline TaskSample gen_mux(const TaskConfig& cfg, Rng& rng, Rng& noise) {
    detail::check_cfg(cfg);
    const auto vl = vocab_partition(cfg.V);
    const int sel = uniform_int(rng, 0, 1);
    const int c0 = uniform_int(rng, 0, vl.data_size() - 1);
    const int c1 = uniform_int(rng, 0, vl.data_size() - 1);
    return detail::logic_block(cfg, rng, noise, {sel ? vl.SEL1 : vl.SEL0, vl.data(c0), vl.data(c1)},
                               vl.data(sel ? c1 : c0));
}

inline TaskSample generate_sample(TaskKind kind, const TaskConfig& cfg, Rng& rng, Rng& noise) {
    switch (kind) {
        case TaskKind::MQAR: return gen_mqar(cfg, rng, noise);
        case TaskKind::PolyRecall: return gen_poly_recall(cfg, rng, noise);
        case TaskKind::VarTracking: return gen_var_tracking(cfg, rng, noise);
        case TaskKind::LocalXOR: return gen_local_xor(cfg, rng, noise);
        case TaskKind::Parity: return gen_parity(cfg, rng, noise);
        case TaskKind::ModuloAdd: return gen_modulo_add(cfg, rng, noise);
        case TaskKind::Palindrome: return gen_palindrome(cfg, rng, noise);
        case TaskKind::SilenceGate: return gen_silence_gate(cfg, rng, noise);
        case TaskKind::MUX: return gen_mux(cfg, rng, noise);
    }
    throw ConfigError("unknown task kind");
}

// Sample i draws its payload from stream (seed, 2i) and its noise from (noise_seed, 2i+1).
inline std::vector<TaskSample> generate_batch(TaskKind kind, const TaskConfig& cfg, std::size_t batch,
                                              std::uint64_t seed) {
    const std::uint64_t nseed = cfg.noise_seed.value_or(seed);
    std::vector<TaskSample> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        auto rng = make_rng(seed, 2 * i);
        auto noise = make_rng(nseed, 2 * i + 1);
        out.push_back(generate_sample(kind, cfg, rng, noise));
    }
    return out;
}

inline std::string join_ints(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(xs[i]);
    }
    return s;
}

// One line per sample: tokens<TAB>query_positions<TAB>targets, space separated ints.
inline std::string format_sample(const TaskSample& s) {
    return join_ints(s.tokens) + '\t' + join_ints(s.query_positions) + '\t' + join_ints(s.targets);
}

inline TaskSample parse_sample(const std::string& line, int V = 64) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    if (fields.size() != 3) throw DataError("sample line needs 3 tab separated fields, got " + std::to_string(fields.size()));
    auto ints = [](const std::string& f) {
        std::vector<int> v;
        std::istringstream is(f);
        std::string tok;
        while (is >> tok) {
            std::size_t used = 0;
            int x = 0;
            try {
                x = std::stoi(tok, &used);
            } catch (const std::exception&) {
                throw DataError("not an integer: '" + tok + "'");
            }
            if (used != tok.size()) throw DataError("not an integer: '" + tok + "'");
            v.push_back(x);
        }
        return v;
    };
    TaskSample s{ints(fields[0]), ints(fields[1]), ints(fields[2])};
    if (s.query_positions.size() != s.targets.size()) throw DataError("query and target counts differ");
    for (int t : s.tokens)
        if (t < 0 || t >= V) throw DataError("token " + std::to_string(t) + " outside vocabulary");
    for (int t : s.targets)
        if (t < 0 || t >= V) throw DataError("target " + std::to_string(t) + " outside vocabulary");
    for (std::size_t i = 0; i < s.query_positions.size(); ++i) {
        const int p = s.query_positions[i];
        if (p < 0 || p >= static_cast<int>(s.tokens.size())) throw DataError("query position out of range");
        if (i && p <= s.query_positions[i - 1]) throw DataError("query positions must be strictly increasing");
    }
    return s;
}

}  // namespace prism
