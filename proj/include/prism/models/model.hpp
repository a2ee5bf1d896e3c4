#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prism/cell/prism_cell.hpp"
#include "prism/core/errors.hpp"
#include "prism/core/ops.hpp"
#include "prism/core/random.hpp"
#include "prism/models/baselines.hpp"

namespace prism {

enum class ModelKind { PRISM, LinearAttention, MoM, Transformer, DeltaRule, IdealSolver };

inline const char* model_name(ModelKind k) {
    switch (k) {
        case ModelKind::PRISM: return "PRISM";
        case ModelKind::LinearAttention: return "LA";
        case ModelKind::MoM: return "MoM";
        case ModelKind::Transformer: return "Transformer";
        case ModelKind::DeltaRule: return "DeltaRule";
        case ModelKind::IdealSolver: return "IdealSolver";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "PRISM" || s == "prism") return ModelKind::PRISM;
    if (s == "LA" || s == "la" || s == "LinearAttention") return ModelKind::LinearAttention;
    if (s == "MoM" || s == "mom") return ModelKind::MoM;
    if (s == "Transformer" || s == "transformer" || s == "Trans") return ModelKind::Transformer;
    if (s == "DeltaRule") return ModelKind::DeltaRule;
    if (s == "IdealSolver") return ModelKind::IdealSolver;
    throw ConfigError("unknown model kind '" + s + "'");
}

inline bool is_trainable(ModelKind k) {
    return k == ModelKind::PRISM || k == ModelKind::LinearAttention || k == ModelKind::MoM ||
           k == ModelKind::Transformer;
}

struct ModelDims {
    std::size_t V = 64;
    std::size_t D = 16;
    std::size_t L = 2;
    std::size_t w = 4;
    std::size_t blocks = 2;
    std::size_t heads = 2;
    std::size_t experts = 4;
    // Width of a short-conv anchor in front of the LA / MoM mixers; 0 disables it.
    std::size_t baseline_anchor = 0;
    bool normalize_k = true;
};

template <class T>
class SequenceModel {
   public:
    SequenceModel(ModelKind kind, ModelDims dims, std::uint64_t seed) : kind_(kind), dims_(dims) {
        if (!is_trainable(kind))
            throw ConfigError(std::string("model kind ") + model_name(kind) + " is a verification oracle, not trainable");
        if (dims.V < 1 || dims.D < 1 || dims.blocks < 1) throw ConfigError("model dimensions must be positive");
        auto rng = make_rng(seed, 0x4d4f44);
        const std::size_t D = dims.D;
        embed_ = Tensor<T>::randn({dims.V, D}, rng, T(1), true);
        pcfg_.d = D;
        pcfg_.L = dims.L;
        pcfg_.w = dims.w;
        pcfg_.normalize_k = dims.normalize_k;
        for (std::size_t b = 0; b < dims.blocks; ++b) {
            blocks_.push_back(BlockParams<T>::init(D, rng));
            switch (kind) {
                case ModelKind::PRISM: prism_.push_back(PrismParams<T>::init(pcfg_, rng)); break;
                case ModelKind::LinearAttention:
                    la_.push_back(LinearAttentionParams<T>::init(D, rng, dims.baseline_anchor));
                    break;
                case ModelKind::MoM: mom_.push_back(MoMParams<T>::init(D, dims.experts, rng, dims.baseline_anchor)); break;
                case ModelKind::Transformer: attn_.push_back(AttentionParams<T>::init(D, dims.heads, rng)); break;
                default: break;
            }
        }
        lnf_g_ = Tensor<T>::full({D}, T(1), true);
        lnf_b_ = Tensor<T>::zeros({D}, true);
        head_ = Tensor<T>::randn({D, dims.V}, rng, T(1) / std::sqrt(static_cast<T>(D)), true);
    }

    ModelKind kind() const { return kind_; }
    const ModelDims& dims() const { return dims_; }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out{embed_};
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (auto& t : blocks_[b].parameters()) out.push_back(t);
            std::vector<Tensor<T>> mixer;
            if (kind_ == ModelKind::PRISM) mixer = prism_[b].parameters();
            if (kind_ == ModelKind::LinearAttention) mixer = la_[b].parameters();
            if (kind_ == ModelKind::MoM) mixer = mom_[b].parameters();
            if (kind_ == ModelKind::Transformer) mixer = attn_[b].parameters();
            for (auto& t : mixer) out.push_back(t);
        }
        out.push_back(lnf_g_);
        out.push_back(lnf_b_);
        out.push_back(head_);
        return out;
    }

    std::size_t num_parameters() const {
        std::size_t n = 0;
        for (auto& p : parameters()) n += p.numel();
        return n;
    }

    // Residual stream after the mixer blocks, [batch, N, D]. tokens is batch * N ids, row-major.
    Tensor<T> hidden(std::span<const int> tokens, std::size_t batch, std::size_t n) const {
        if (tokens.size() != batch * n) throw DimensionError("token buffer does not match batch x N");
        auto x = embedding(embed_, tokens, {batch, n});
        if (kind_ == ModelKind::Transformer) x = add(x, sinusoidal_positions<T>(n, dims_.D));
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            switch (kind_) {
                case ModelKind::PRISM: x = prism_block_forward(x, blocks_[b], prism_[b], pcfg_); break;
                case ModelKind::LinearAttention:
                    x = residual_block(x, blocks_[b], [&](const Tensor<T>& h) { return linear_attention_forward(h, la_[b]); });
                    break;
                case ModelKind::MoM:
                    x = residual_block(x, blocks_[b], [&](const Tensor<T>& h) { return mom_forward(h, mom_[b]); });
                    break;
                case ModelKind::Transformer: x = transformer_block_forward(x, blocks_[b], attn_[b]); break;
                default: break;
            }
        }
        return x;
    }

    Tensor<T> readout(const Tensor<T>& h) const { return matmul(layernorm(h, lnf_g_, lnf_b_), head_); }

    // Logits [batch, N, V].
    Tensor<T> forward(std::span<const int> tokens, std::size_t batch, std::size_t n) const {
        return readout(hidden(tokens, batch, n));
    }

    // Logits [P, V] at flat positions (b * N + t) only.
    Tensor<T> logits_at(std::span<const int> tokens, std::size_t batch, std::size_t n,
                        std::span<const std::size_t> positions) const {
        return readout(gather_rows(hidden(tokens, batch, n), positions));
    }

    // Mean cross entropy over the selected flat positions.
    Tensor<T> loss(std::span<const int> tokens, std::size_t batch, std::size_t n, std::span<const std::size_t> positions,
                   std::span<const int> targets) const {
        return softmax_cross_entropy(logits_at(tokens, batch, n, positions), targets);
    }

    const PrismConfig& prism_config() const { return pcfg_; }
    std::vector<PrismParams<T>>& prism_layers() { return prism_; }
    std::vector<BlockParams<T>>& block_layers() { return blocks_; }

   private:
    ModelKind kind_;
    ModelDims dims_;
    PrismConfig pcfg_;
    Tensor<T> embed_, lnf_g_, lnf_b_, head_;
    std::vector<BlockParams<T>> blocks_;
    std::vector<PrismParams<T>> prism_;
    std::vector<LinearAttentionParams<T>> la_;
    std::vector<MoMParams<T>> mom_;
    std::vector<AttentionParams<T>> attn_;
};

template <class T>
SequenceModel<T> build_model(ModelKind kind, const ModelDims& dims, std::uint64_t seed) {
    return SequenceModel<T>(kind, dims, seed);
}

}  // namespace prism
