#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "prism/core/tensor.hpp"

namespace prism {

// Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|) with central differences.
// f must build a fresh graph from x on every call and return a scalar.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                         double h = 1e-5) {
    clear_tape<double>();
    x.set_requires_grad(true);
    x.clear_grad();
    auto loss = f(x);
    std::vector<double> g_ad(x.numel(), 0.0);
    if (loss.requires_grad()) {
        backward(loss);
        if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), g_ad.begin());
    }
    clear_tape<double>();
    x.clear_grad();

    double worst = 0.0;
    NoGradGuard guard;
    auto buf = x.data();
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const double orig = buf[i];
        buf[i] = orig + h;
        const double fp = f(x).item();
        buf[i] = orig - h;
        const double fm = f(x).item();
        buf[i] = orig;
        const double g_fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(g_ad[i] - g_fd) / std::max(1.0, std::abs(g_fd)));
    }
    return worst;
}

}  // namespace prism
