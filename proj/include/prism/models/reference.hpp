#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "prism/core/errors.hpp"
#include "prism/core/linalg.hpp"
#include "prism/core/ops.hpp"

namespace prism {

enum class ActivationSpec { identity, tanh, gelu };

inline const char* activation_name(ActivationSpec a) {
    switch (a) {
        case ActivationSpec::identity: return "identity";
        case ActivationSpec::tanh: return "tanh";
        case ActivationSpec::gelu: return "gelu";
    }
    return "?";
}

template <class T>
T activate(ActivationSpec a, T z) {
    switch (a) {
        case ActivationSpec::identity: return z;
        case ActivationSpec::tanh: return std::tanh(z);
        case ActivationSpec::gelu: return detail::gelu_scalar(z);
    }
    return z;
}

template <class T>
T activate_grad(ActivationSpec a, T z) {
    switch (a) {
        case ActivationSpec::identity: return T(1);
        case ActivationSpec::tanh: {
            const T t = std::tanh(z);
            return T(1) - t * t;
        }
        case ActivationSpec::gelu: return detail::gelu_grad_scalar(z);
    }
    return T(1);
}

template <class T>
void check_step_shapes(const Matrix<T>& S, const std::vector<T>& k, const std::vector<T>& v) {
    if (S.rows != v.size() || S.cols != k.size())
        throw DimensionError("state is " + std::to_string(S.rows) + "x" + std::to_string(S.cols) +
                             " but k, v have sizes " + std::to_string(k.size()) + ", " + std::to_string(v.size()));
}

// S + v k^T
template <class T>
Matrix<T> linear_attention_step(Matrix<T> S, const std::vector<T>& k, const std::vector<T>& v) {
    check_step_shapes(S, k, v);
    for (std::size_t i = 0; i < S.rows; ++i)
        for (std::size_t j = 0; j < S.cols; ++j) S(i, j) += v[i] * k[j];
    return S;
}

// S + beta (v - S k) k^T
template <class T>
Matrix<T> delta_rule_step(Matrix<T> S, const std::vector<T>& k, const std::vector<T>& v, T beta) {
    check_step_shapes(S, k, v);
    const auto z = matvec(S, k);
    for (std::size_t i = 0; i < S.rows; ++i) {
        const T c = beta * (v[i] - z[i]);
        for (std::size_t j = 0; j < S.cols; ++j) S(i, j) += c * k[j];
    }
    return S;
}

// S + beta (sigma'(S k) * (v - sigma(S k))) k^T. State dependent, so inherently serial.
template <class T>
Matrix<T> ideal_solver_step(Matrix<T> S, const std::vector<T>& k, const std::vector<T>& v, ActivationSpec sigma,
                            T beta) {
    check_step_shapes(S, k, v);
    const auto z = matvec(S, k);
    for (std::size_t i = 0; i < S.rows; ++i) {
        const T g = activate_grad(sigma, z[i]) * (v[i] - activate(sigma, z[i]));
        const T c = beta * g;
        for (std::size_t j = 0; j < S.cols; ++j) S(i, j) += c * k[j];
    }
    return S;
}

// S* = W_v W_k^{-1}; maps every key W_k x exactly onto its value W_v x.
template <class T>
Matrix<T> degenerate_closed_form(const Matrix<T>& Wk, const Matrix<T>& Wv) {
    return Wv * matrix_inverse(Wk);
}

}  // namespace prism
