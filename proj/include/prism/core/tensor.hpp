#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "prism/core/errors.hpp"

namespace prism {

enum class DType { float32, float64 };

template <class T>
inline constexpr DType dtype_of = std::is_same_v<T, float> ? DType::float32 : DType::float64;

inline const char* dtype_name(DType d) { return d == DType::float32 ? "float32" : "float64"; }

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    // Propagates this node's grad into its parents. Empty for leaves.
    std::function<void(Node&)> backward;
    std::vector<std::shared_ptr<Node>> parents;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

// Execution-ordered record of differentiable ops, one per thread and scalar type.
template <class T>
std::vector<NodePtr<T>>& tape() {
    thread_local std::vector<NodePtr<T>> nodes;
    return nodes;
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <class T>
class Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor supports float32 and float64");

   public:
    using value_type = T;

    Tensor() = default;

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1), bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(dist(rng)) * stddev;
        return from(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor eye(std::size_t n) {
        auto t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = T(1);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    DType dtype() const { return dtype_of<T>; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    const std::vector<T>& vec() const { return node_->data; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
    void clear_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    T item() const {
        if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    T& operator()(std::size_t i, std::size_t j) { return node_->data[i * node_->shape[1] + j]; }
    T operator()(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape[1] + j]; }
    T& operator[](std::size_t i) { return node_->data[i]; }
    T operator[](std::size_t i) const { return node_->data[i]; }

    Tensor detach() const { return from(shape(), node_->data, false); }

    const detail::NodePtr<T>& node() const { return node_; }

    explicit Tensor(detail::NodePtr<T> n) : node_(std::move(n)) {}

   private:
    detail::NodePtr<T> node_;
};

namespace detail {

// Builds an op result and, when any input is tracked, wires it into the tape.
template <class T, class Fn>
Tensor<T> make_op(Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                  Fn&& backward_fn) {
    auto out = Tensor<T>::from(std::move(shape), std::move(data));
    if (!grad_mode()) return out;
    bool track = false;
    for (auto* in : inputs) track = track || in->requires_grad();
    if (!track) return out;
    auto& n = *out.node();
    n.requires_grad = true;
    for (auto* in : inputs) n.parents.push_back(in->node());
    n.backward = std::forward<Fn>(backward_fn);
    tape<T>().push_back(out.node());
    return out;
}

template <class T>
Tensor<T> make_op_dynamic(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                          std::function<void(Node<T>&)> backward_fn) {
    auto out = Tensor<T>::from(std::move(shape), std::move(data));
    if (!grad_mode()) return out;
    bool track = false;
    for (auto& in : inputs) track = track || in.requires_grad();
    if (!track) return out;
    auto& n = *out.node();
    n.requires_grad = true;
    for (auto& in : inputs) n.parents.push_back(in.node());
    n.backward = std::move(backward_fn);
    tape<T>().push_back(out.node());
    return out;
}

template <class T>
inline T* grad_sink(const NodePtr<T>& n) {
    if (!n->requires_grad) return nullptr;
    n->ensure_grad();
    return n->grad.data();
}

}  // namespace detail

// Reverse-mode sweep over the recorded tape. The tape is consumed: a second
// call without a fresh forward pass throws.
template <class T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("backward requires a scalar loss");
    if (!loss.requires_grad()) throw UsageError("loss does not depend on any tensor requiring grad");
    auto& nodes = detail::tape<T>();
    const auto& target = loss.node();
    if (!target->backward) {
        target->ensure_grad();
        target->grad[0] += T(1);
        return;
    }
    auto it = std::find(nodes.rbegin(), nodes.rend(), target);
    if (it == nodes.rend()) throw UsageError("graph for this loss was already consumed");
    target->ensure_grad();
    target->grad[0] = T(1);
    for (; it != nodes.rend(); ++it) {
        auto& n = **it;
        if (!n.grad.empty() && n.backward) n.backward(n);
    }
    for (auto& n : nodes) {
        n->backward = nullptr;
        n->parents.clear();
    }
    nodes.clear();
}

// Drops any recorded but unconsumed graph on this thread.
template <class T>
void clear_tape() {
    auto& nodes = detail::tape<T>();
    for (auto& n : nodes) {
        n->backward = nullptr;
        n->parents.clear();
    }
    nodes.clear();
}

template <class T>
std::size_t tape_size() {
    return detail::tape<T>().size();
}

}  // namespace prism
