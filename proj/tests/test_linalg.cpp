#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <numeric>

#include "prism/core/linalg.hpp"
#include "prism/core/random.hpp"
#include "prism/core/scan.hpp"

using namespace prism;
using Md = Matrix<double>;

namespace {

Md random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    std::normal_distribution<double> n(0, 1);
    Md m(r, c);
    for (auto& v : m.a) v = n(rng);
    return m;
}

Eigen::MatrixXd to_eigen(const Md& m) {
    Eigen::MatrixXd e(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
    return e;
}

}  // namespace

TEST(Svd, IdentityIsAllOnes) {
    auto s = singular_values(Md::identity(3));
    ASSERT_EQ(s.size(), 3u);
    for (double v : s) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Svd, RankOneOuter) {
    auto rng = make_rng(1);
    auto u = random_matrix(5, 1, rng), w = random_matrix(1, 5, rng);
    auto s = singular_values(u * w);
    EXPECT_EQ(std::count_if(s.begin(), s.end(), [&](double v) { return v > 1e-10 * s[0]; }), 1);
    EXPECT_EQ(numerical_rank(u * w), 1u);
}

TEST(Svd, MatchesEigenOfGram) {
    auto rng = make_rng(2);
    for (std::size_t d : {3u, 8u, 16u, 64u}) {
        auto m = random_matrix(d, d, rng);
        auto s = singular_values(m);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(m).transpose() * to_eigen(m));
        auto ev = es.eigenvalues();  // ascending
        for (std::size_t i = 0; i < d; ++i) {
            const double oracle = std::sqrt(std::max(0.0, ev(static_cast<Eigen::Index>(d - 1 - i))));
            EXPECT_NEAR(s[i], oracle, 1e-9 * std::max(1.0, oracle)) << "d=" << d << " i=" << i;
        }
        for (std::size_t i = 1; i < d; ++i) EXPECT_GE(s[i - 1], s[i]);
    }
}

TEST(Svd, Reconstruction) {
    auto rng = make_rng(3);
    for (std::size_t d : {4u, 16u, 64u}) {
        auto m = random_matrix(d, d, rng);
        auto svd = jacobi_svd(m);
        Md sig(d, d);
        for (std::size_t i = 0; i < d; ++i) sig(i, i) = svd.sigma[i];
        auto rec = svd.U * sig * svd.V.transpose();
        EXPECT_LT(frobenius(rec - m) / frobenius(m), 1e-10) << d;
    }
}

TEST(Svd, AgreesWithEigenJacobi) {
    auto rng = make_rng(4);
    auto m = random_matrix(12, 12, rng);
    Eigen::JacobiSVD<Eigen::MatrixXd> es(to_eigen(m));
    auto s = singular_values(m);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(s[i], es.singularValues()(static_cast<Eigen::Index>(i)), 1e-10);
}

TEST(Svd, WeylMonotonicity) {
    auto rng = make_rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_matrix(8, 8, rng), b = random_matrix(8, 8, rng);
        EXPECT_LE(singular_values(a + b)[0], singular_values(a)[0] + singular_values(b)[0] + 1e-12);
    }
}

TEST(Inverse, IdentityAndDiagonal) {
    auto i = matrix_inverse(Md::identity(4));
    EXPECT_EQ(max_abs_diff(i, Md::identity(4)), 0.0);
    Md d(2, 2);
    d(0, 0) = 2;
    d(1, 1) = 4;
    auto di = matrix_inverse(d);
    EXPECT_DOUBLE_EQ(di(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(di(1, 1), 0.25);
    EXPECT_EQ(di(0, 1), 0.0);
}

TEST(Inverse, ProductWithOriginal) {
    auto rng = make_rng(6);
    auto m = random_matrix(8, 8, rng) + Md::identity(8);
    ASSERT_LT(condition_number(m), 1e4);
    auto inv = matrix_inverse(m);
    EXPECT_LT(frobenius(m * inv - Md::identity(8)), 1e-8);
    const Eigen::MatrixXd oracle = to_eigen(m).inverse();
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(inv(r, c), oracle(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)), 1e-10);
}

TEST(Inverse, SingularRaisesWithConditionEstimate) {
    Md m(3, 3);
    m(0, 0) = 1;
    m(1, 1) = 1;
    m(2, 2) = 1e-12;
    try {
        matrix_inverse(m);
        FAIL() << "expected SingularityError";
    } catch (const SingularityError& e) {
        EXPECT_GT(e.condition_estimate(), 1e10);
    }
    EXPECT_THROW(matrix_inverse(Md(3, 3)), SingularityError);
    EXPECT_THROW(matrix_inverse(Md(2, 3)), DimensionError);
}

TEST(Eigen, SymmetricAgainstEigenSolver) {
    auto rng = make_rng(7);
    auto a = random_matrix(10, 10, rng);
    auto s = a + a.transpose();
    auto ev = symmetric_eigenvalues(s);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(s));
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(ev[i], es.eigenvalues()(static_cast<Eigen::Index>(i)), 1e-10);
}

TEST(Matrix, ProductAgainstEigen) {
    auto rng = make_rng(8);
    auto a = random_matrix(5, 7, rng), b = random_matrix(7, 3, rng);
    auto c = a * b;
    const Eigen::MatrixXd oracle = to_eigen(a) * to_eigen(b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(c(i, j), oracle(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 1e-12);
    EXPECT_THROW(a * a, DimensionError);
}

TEST(Scan, ExclusiveMatchesSequentialForNonCommutativeOp) {
    // 2x2 matrix products: associative, not commutative
    auto rng = make_rng(9);
    for (std::size_t n : {1u, 2u, 3u, 7u, 8u, 13u, 64u}) {
        std::vector<Md> xs;
        for (std::size_t i = 0; i < n; ++i) xs.push_back(random_matrix(2, 2, rng));
        auto op = [](const Md& a, const Md& b) { return a * b; };
        for (unsigned threads : {1u, 3u}) {
            auto ex = blelloch_exclusive_scan(xs, Md::identity(2), op, threads);
            auto in = blelloch_inclusive_scan(xs, Md::identity(2), op, threads);
            Md acc = Md::identity(2);
            for (std::size_t i = 0; i < n; ++i) {
                EXPECT_LT(max_abs_diff(ex[i], acc), 1e-9 * std::max(1.0, frobenius(acc)));
                acc = acc * xs[i];
                EXPECT_LT(max_abs_diff(in[i], acc), 1e-9 * std::max(1.0, frobenius(acc)));
            }
        }
    }
    EXPECT_TRUE(blelloch_exclusive_scan(std::vector<Md>{}, Md::identity(2), [](const Md& a, const Md& b) { return a * b; }).empty());
}

TEST(Scan, IntegerPrefixSum) {
    std::vector<long> xs(100);
    std::iota(xs.begin(), xs.end(), 1);
    auto ex = blelloch_exclusive_scan(xs, 0L, std::plus<long>{});
    for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(ex[i], static_cast<long>(i * (i + 1) / 2));
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
    for (int h : hits) EXPECT_EQ(h, 1);
}
