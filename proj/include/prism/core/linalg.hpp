#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "prism/core/errors.hpp"
#include "prism/core/tensor.hpp"

namespace prism {

// Plain row-major dense matrix for the non-differentiable paths (scan, verification).
template <class T>
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<T> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), a(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    static Matrix from_tensor(const Tensor<T>& t) {
        if (t.rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(t.shape()));
        Matrix m(t.dim(0), t.dim(1));
        std::copy(t.data().begin(), t.data().end(), m.a.begin());
        return m;
    }

    Tensor<T> to_tensor() const { return Tensor<T>::from({rows, cols}, a); }

    T& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    T operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    Matrix transpose() const {
        Matrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }
};

template <class T>
Matrix<T> operator*(const Matrix<T>& x, const Matrix<T>& y) {
    if (x.cols != y.rows) throw DimensionError("matrix product dimensions disagree");
    Matrix<T> z(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t p = 0; p < x.cols; ++p) {
            const T v = x(i, p);
            if (v == T(0)) continue;
            const T* yr = y.a.data() + p * y.cols;
            T* zr = z.a.data() + i * z.cols;
            for (std::size_t j = 0; j < y.cols; ++j) zr[j] += v * yr[j];
        }
    return z;
}

template <class T>
Matrix<T> operator+(Matrix<T> x, const Matrix<T>& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw DimensionError("matrix sum dimensions disagree");
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += y.a[i];
    return x;
}

template <class T>
Matrix<T> operator-(Matrix<T> x, const Matrix<T>& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw DimensionError("matrix difference dimensions disagree");
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] -= y.a[i];
    return x;
}

template <class T>
std::vector<T> matvec(const Matrix<T>& m, const std::vector<T>& x) {
    if (m.cols != x.size()) throw DimensionError("matvec dimensions disagree");
    std::vector<T> y(m.rows, T(0));
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) y[i] += m(i, j) * x[j];
    return y;
}

template <class T>
T frobenius(const Matrix<T>& m) {
    T s = 0;
    for (T v : m.a) s += v * v;
    return std::sqrt(s);
}

template <class T>
T max_abs_diff(const Matrix<T>& x, const Matrix<T>& y) {
    T d = 0;
    for (std::size_t i = 0; i < x.a.size(); ++i) d = std::max(d, std::abs(x.a[i] - y.a[i]));
    return d;
}

template <class T>
struct SVD {
    Matrix<T> U, V;
    std::vector<T> sigma;  // non-increasing
};

// One-sided Jacobi: orthogonalize the columns of a working copy, accumulating
// the right rotations in V. Column norms become the singular values.
template <class T>
SVD<T> jacobi_svd(const Matrix<T>& m, int max_sweeps = 60) {
    const std::size_t r = m.rows, n = m.cols;
    Matrix<T> W = m;
    Matrix<T> V = Matrix<T>::identity(n);
    const T tol = std::numeric_limits<T>::epsilon() * T(r);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                T alpha = 0, beta = 0, gamma = 0;
                for (std::size_t i = 0; i < r; ++i) {
                    alpha += W(i, p) * W(i, p);
                    beta += W(i, q) * W(i, q);
                    gamma += W(i, p) * W(i, q);
                }
                if (gamma == T(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const T zeta = (beta - alpha) / (T(2) * gamma);
                const T t = (zeta >= T(0) ? T(1) : T(-1)) / (std::abs(zeta) + std::sqrt(T(1) + zeta * zeta));
                const T c = T(1) / std::sqrt(T(1) + t * t);
                const T s = c * t;
                for (std::size_t i = 0; i < r; ++i) {
                    const T wp = W(i, p), wq = W(i, q);
                    W(i, p) = c * wp - s * wq;
                    W(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const T vp = V(i, p), vq = V(i, q);
                    V(i, p) = c * vp - s * vq;
                    V(i, q) = s * vp + c * vq;
                }
            }
        if (!rotated) break;
    }
    std::vector<T> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t i = 0; i < r; ++i) s += W(i, j) * W(i, j);
        norms[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return norms[x] > norms[y]; });
    SVD<T> out;
    out.U = Matrix<T>(r, n);
    out.V = Matrix<T>(n, n);
    out.sigma.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.sigma[k] = norms[j];
        for (std::size_t i = 0; i < r; ++i) out.U(i, k) = norms[j] > T(0) ? W(i, j) / norms[j] : T(0);
        for (std::size_t i = 0; i < n; ++i) out.V(i, k) = V(i, j);
    }
    return out;
}

template <class T>
std::vector<T> singular_values(const Matrix<T>& m) {
    return jacobi_svd(m).sigma;
}

template <class T>
Tensor<T> singular_values(const Tensor<T>& m) {
    auto s = singular_values(Matrix<T>::from_tensor(m));
    const std::size_t n = s.size();
    return Tensor<T>::from({n}, std::move(s));
}

// Count of singular values above rel_tol * sigma_max.
template <class T>
std::size_t numerical_rank(const Matrix<T>& m, T rel_tol = T(1e-8)) {
    const auto s = singular_values(m);
    if (s.empty() || s[0] == T(0)) return 0;
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](T v) { return v > rel_tol * s[0]; }));
}

template <class T>
T condition_number(const Matrix<T>& m) {
    const auto s = singular_values(m);
    if (s.empty()) return T(0);
    if (s.back() == T(0)) return std::numeric_limits<T>::infinity();
    return s.front() / s.back();
}

// Cyclic Jacobi eigensolver for symmetric matrices; eigenvalues ascending.
template <class T>
std::vector<T> symmetric_eigenvalues(Matrix<T> m, int max_sweeps = 100) {
    const std::size_t n = m.rows;
    if (m.cols != n) throw DimensionError("eigenvalues need a square matrix");
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        T off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
        if (off < std::numeric_limits<T>::min()) break;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (m(p, q) == T(0)) continue;
                const T theta = (m(q, q) - m(p, p)) / (T(2) * m(p, q));
                const T t = (theta >= T(0) ? T(1) : T(-1)) / (std::abs(theta) + std::sqrt(theta * theta + T(1)));
                const T c = T(1) / std::sqrt(t * t + T(1));
                const T s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const T mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const T mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
            }
    }
    std::vector<T> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

// Gauss-Jordan with partial pivoting. Rejects matrices with condition >= max_condition.
template <class T>
Matrix<T> matrix_inverse(const Matrix<T>& m, T max_condition = T(1e10)) {
    const std::size_t n = m.rows;
    if (m.cols != n) throw DimensionError("inverse needs a square matrix");
    const T cond = condition_number(m);
    if (!(cond < max_condition)) throw SingularityError(static_cast<double>(cond));
    Matrix<T> a = m;
    Matrix<T> inv = Matrix<T>::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t i = col + 1; i < n; ++i)
            if (std::abs(a(i, col)) > std::abs(a(piv, col))) piv = i;
        if (a(piv, col) == T(0)) throw SingularityError(std::numeric_limits<double>::infinity());
        if (piv != col)
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(piv, j), a(col, j));
                std::swap(inv(piv, j), inv(col, j));
            }
        const T d = a(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            a(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (i == col) continue;
            const T f = a(i, col);
            if (f == T(0)) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a(i, j) -= f * a(col, j);
                inv(i, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

template <class T>
Tensor<T> matrix_inverse(const Tensor<T>& m) {
    return matrix_inverse(Matrix<T>::from_tensor(m)).to_tensor();
}

}  // namespace prism
