#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace prism {

// Runs body(i) for i in [0, n) on up to `threads` workers. Iterations must be independent.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    for (auto& t : pool) t.join();
}

// Work-efficient exclusive scan (up-sweep then down-sweep) for an associative,
// possibly non-commutative op. Left operands are always earlier in sequence.
// Returns out[i] = xs[0] op ... op xs[i-1], out[0] = identity.
template <class E, class Op>
std::vector<E> blelloch_exclusive_scan(const std::vector<E>& xs, const E& identity, Op op, unsigned threads = 1) {
    const std::size_t n = xs.size();
    if (n == 0) return {};
    std::size_t m = 1;
    while (m < n) m <<= 1;
    std::vector<E> tree(m, identity);
    std::copy(xs.begin(), xs.end(), tree.begin());

    for (std::size_t stride = 1; stride < m; stride <<= 1) {
        const std::size_t pairs = m / (2 * stride);
        parallel_for(pairs, threads, [&](std::size_t k) {
            const std::size_t right = (2 * k + 2) * stride - 1;
            const std::size_t left = right - stride;
            tree[right] = op(tree[left], tree[right]);
        });
    }
    tree[m - 1] = identity;
    for (std::size_t stride = m / 2; stride >= 1; stride >>= 1) {
        const std::size_t pairs = m / (2 * stride);
        parallel_for(pairs, threads, [&](std::size_t k) {
            const std::size_t right = (2 * k + 2) * stride - 1;
            const std::size_t left = right - stride;
            E carry = tree[left];
            tree[left] = tree[right];
            tree[right] = op(tree[right], carry);
        });
        if (stride == 1) break;
    }
    tree.resize(n);
    return tree;
}

template <class E, class Op>
std::vector<E> blelloch_inclusive_scan(const std::vector<E>& xs, const E& identity, Op op, unsigned threads = 1) {
    auto ex = blelloch_exclusive_scan(xs, identity, op, threads);
    for (std::size_t i = 0; i < xs.size(); ++i) ex[i] = op(ex[i], xs[i]);
    return ex;
}

}  // namespace prism
