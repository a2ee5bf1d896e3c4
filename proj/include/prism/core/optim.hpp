#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "prism/core/errors.hpp"
#include "prism/core/tensor.hpp"

namespace prism {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
class Adam {
   public:
    explicit Adam(std::vector<Tensor<T>> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
        for (auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    // Applies one bias-corrected update and clears the gradients.
    void step() {
        for (auto& p : params_)
            if (!p.has_grad()) throw UsageError("adam step on a parameter with no gradient; call backward first");
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto w = params_[i].data();
            auto g = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = static_cast<double>(g[k]);
                m[k] = opt_.beta1 * m[k] + (1.0 - opt_.beta1) * gk;
                v[k] = opt_.beta2 * v[k] + (1.0 - opt_.beta2) * gk * gk;
                const double mh = m[k] / bc1;
                const double vh = v[k] / bc2;
                w[k] = static_cast<T>(static_cast<double>(w[k]) - opt_.lr * mh / (std::sqrt(vh) + opt_.eps));
            }
            params_[i].clear_grad();
        }
    }

    std::int64_t steps() const { return t_; }
    const AdamOptions& options() const { return opt_; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
    const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

   private:
    std::vector<Tensor<T>> params_;
    AdamOptions opt_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace prism
