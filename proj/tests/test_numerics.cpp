// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <thread>

#include <gtest/gtest.h>

#include "pmod/fd.hpp"
#include "pmod/halfrange.hpp"
#include "pmod/matrix.hpp"
#include "pmod/ops.hpp"
#include "pmod/rng.hpp"

namespace pmod {
namespace {

TEST(Matrix, LayoutAndAccessors) {
    Matrix m = Matrix::from({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_EQ(m.cols(), 3u);
    EXPECT_DOUBLE_EQ(m(1, 2), 6.0);
    // Row-major storage: row(1) spans the second triple.
    auto r = m.row(1);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_DOUBLE_EQ(r[0], 4.0);
    EXPECT_DOUBLE_EQ(m.data()[5], 6.0);
}

TEST(Matrix, ArithmeticOps) {
    Matrix a = Matrix::from({{1.0, 2.0}, {3.0, 4.0}});
    Matrix b = Matrix::from({{10.0, 20.0}, {30.0, 40.0}});
    a.axpy(0.5, b);
    EXPECT_DOUBLE_EQ(a(0, 0), 6.0);
    EXPECT_DOUBLE_EQ(a(1, 1), 24.0);
    a *= 2.0;
    EXPECT_DOUBLE_EQ(a(0, 1), 24.0);
    a -= b;
    EXPECT_DOUBLE_EQ(a(1, 0), 6.0);
    EXPECT_TRUE(a.all_finite());
    a(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(a.all_finite());
}

TEST(Matmul, IdentityAndHandOracle) {
    Matrix i2 = Matrix::from({{1.0, 0.0}, {0.0, 1.0}});
    Matrix p = matmul(i2, i2);
    EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(p(0, 1), 0.0);

    Matrix a = Matrix::from({{1.0, 2.0}, {3.0, 4.0}});
    Matrix ones = Matrix::from({{1.0}, {1.0}});
    Matrix r = matmul(a, ones);
    EXPECT_DOUBLE_EQ(r(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(r(1, 0), 7.0);

    Matrix z(2, 2);
    Matrix rz = matmul(z, a);
    EXPECT_DOUBLE_EQ(rz(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(rz(1, 1), 0.0);
}

TEST(Matmul, DimensionMismatchThrows) {
    Matrix a(2, 3), b(2, 3);
    EXPECT_THROW(matmul(a, b), std::invalid_argument);
}

TEST(Matmul, AssociativityOnRandomDoubles) {
    Rng rng(11);
    Matrix a(8, 8), b(8, 8), c(8, 8);
    rng.fill_normal(a, 1.0);
    rng.fill_normal(b, 1.0);
    rng.fill_normal(c, 1.0);
    Matrix left = matmul(matmul(a, b), c);
    Matrix right = matmul(a, matmul(b, c));
    for (size_t i = 0; i < 8; ++i)
        for (size_t j = 0; j < 8; ++j)
            EXPECT_NEAR(left(i, j), right(i, j), 1e-9);
}

TEST(Matmul, CountsMultiplyAccumulates) {
    Matrix a(2, 3), b(3, 4);
    macs::reset();
    matmul(a, b);
    EXPECT_EQ(macs::value(), 24u);
    double x[3] = {1.0, 2.0, 3.0};
    macs::reset();
    dot_counted(std::span<const double>(x, 3), std::span<const double>(x, 3));
    EXPECT_EQ(macs::value(), 3u);
}

TEST(Matmul, MacCounterIsPerThread) {
    macs::reset();
    matmul(Matrix(2, 2), Matrix(2, 2));
    uint64_t other = 1;
    std::thread t([&] { other = macs::value(); });
    t.join();
    EXPECT_EQ(other, 0u);
    EXPECT_EQ(macs::value(), 8u);
}

TEST(Softmax, SymmetryAndStability) {
    Matrix a = Matrix::from({{0.0, 0.0}});
    Matrix s = softmax_rows(a);
    EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(s(0, 1), 0.5);

    Matrix big = Matrix::from({{1000.0, 0.0}});
    Matrix sb = softmax_rows(big);
    EXPECT_TRUE(sb.all_finite());
    EXPECT_NEAR(sb(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(sb(0, 1), 0.0, 1e-12);
}

TEST(Softmax, ReferenceOracle) {
    Matrix a = Matrix::from({{1.0, 2.0, 3.0}});
    Matrix s = softmax_rows(a);
    // Independent exp/sum reference.
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(s(0, 0), std::exp(1.0) / z, 1e-15);
    EXPECT_NEAR(s(0, 1), std::exp(2.0) / z, 1e-15);
    EXPECT_NEAR(s(0, 2), std::exp(3.0) / z, 1e-15);
    EXPECT_NEAR(s(0, 0), 0.09003057, 1e-8);
    EXPECT_NEAR(s(0, 1), 0.24472847, 1e-8);
    EXPECT_NEAR(s(0, 2), 0.66524096, 1e-8);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(3);
    Matrix a(4, 7);
    rng.fill_normal(a, 2.0);
    Matrix s = softmax_rows(a);
    for (size_t i = 0; i < a.rows(); ++i) {
        double sum = 0.0;
        for (size_t j = 0; j < a.cols(); ++j)
            sum += s(i, j);
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    Matrix shifted = a;
    for (size_t j = 0; j < a.cols(); ++j)
        shifted(2, j) += 11.5;
    Matrix s2 = softmax_rows(shifted);
    for (size_t j = 0; j < a.cols(); ++j)
        EXPECT_NEAR(s2(2, j), s(2, j), 1e-12);
}

TEST(RmsNorm, PinnedValues) {
    const double eps = 0.0;
    std::vector<double> gain = {1.0, 1.0};
    std::vector<double> x = {0.0, 0.0};
    std::vector<double> out(2);
    rmsnorm_row(x, gain, 1e-30, out);
    EXPECT_NEAR(out[0], 0.0, 1e-12);

    x = {3.0, 4.0};
    rmsnorm_row(x, gain, eps, out);
    const double inv = 1.0 / std::sqrt(12.5);
    EXPECT_NEAR(out[0], 3.0 * inv, 1e-15);
    EXPECT_NEAR(out[1], 4.0 * inv, 1e-15);
    EXPECT_NEAR(out[0], 0.848528137, 1e-9);
    EXPECT_NEAR(out[1], 1.131370850, 1e-9);

    // Constant rows map to signed ones as eps vanishes.
    std::vector<double> xc = {-2.5, -2.5};
    rmsnorm_row(xc, gain, 1e-30, out);
    EXPECT_NEAR(out[0], -1.0, 1e-12);
    EXPECT_NEAR(out[1], -1.0, 1e-12);
}

TEST(RmsNorm, BackwardMatchesFiniteDifferences) {
    Rng rng(5);
    const size_t n = 6;
    Matrix x(1, n), gain(1, n), dout(1, n);
    rng.fill_normal(x, 1.0);
    rng.fill_normal(gain, 0.5);
    for (size_t j = 0; j < n; ++j)
        gain(0, j) += 1.0;
    rng.fill_normal(dout, 1.0);
    const double eps = 1e-6;

    auto loss = [&](const Matrix& xm) {
        std::vector<double> out(n);
        rmsnorm_row(xm.row(0), gain.row(0), eps, out);
        double l = 0.0;
        for (size_t j = 0; j < n; ++j)
            l += out[j] * dout(0, j);
        return l;
    };
    Matrix fd = fd_grad(loss, x, 1e-5);

    std::vector<double> out(n);
    const double inv = rmsnorm_row(x.row(0), gain.row(0), eps, out);
    std::vector<double> dx(n, 0.0), dgain(n, 0.0);
    rmsnorm_row_backward(x.row(0), gain.row(0), inv, dout.row(0), dx, dgain);
    for (size_t j = 0; j < n; ++j)
        EXPECT_NEAR(dx[j], fd(0, j), 1e-7) << "component " << j;
}

TEST(Silu, PinnedValuesAndGradient) {
    EXPECT_DOUBLE_EQ(silu(0.0), 0.0);
    EXPECT_NEAR(silu(30.0), 30.0, 1e-11);  // asymptote
    EXPECT_NEAR(silu(1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(silu(1.0), 0.731059, 1e-6);

    for (double x : {-2.0, -0.5, 0.0, 0.7, 3.0}) {
        const double h = 1e-6;
        const double fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
        EXPECT_NEAR(silu_grad(x), fd, 1e-8) << "at " << x;
    }
}

TEST(FiniteDifferences, SimpleFunctionals) {
    Matrix at = Matrix::from({{1.0, 2.0}});
    auto sum = [](const Matrix& m) {
        double s = 0.0;
        for (size_t j = 0; j < m.cols(); ++j)
            s += m(0, j);
        return s;
    };
    Matrix g1 = fd_grad(sum, at, 1e-5);
    EXPECT_NEAR(g1(0, 0), 1.0, 1e-9);
    EXPECT_NEAR(g1(0, 1), 1.0, 1e-9);

    auto sumsq = [](const Matrix& m) {
        double s = 0.0;
        for (size_t j = 0; j < m.cols(); ++j)
            s += m(0, j) * m(0, j);
        return s;
    };
    Matrix g2 = fd_grad(sumsq, at, 1e-5);
    EXPECT_NEAR(g2(0, 0), 2.0, 1e-8);
    EXPECT_NEAR(g2(0, 1), 4.0, 1e-8);
    EXPECT_THROW(fd_grad(sumsq, at, 0.0), std::invalid_argument);
}

TEST(CosPi, QuadrantExactness) {
    EXPECT_DOUBLE_EQ(cos_pi(0.0), 1.0);
    EXPECT_DOUBLE_EQ(cos_pi(0.5), 0.0);
    EXPECT_DOUBLE_EQ(cos_pi(1.0), -1.0);
    EXPECT_DOUBLE_EQ(cos_pi(1.5), 0.0);
    EXPECT_NEAR(cos_pi(1.0 / 3.0), 0.5, 1e-15);
}

TEST(Rng, DeterministicStreams) {
    Rng a(123), b(123);
    for (int i = 0; i < 16; ++i)
        EXPECT_EQ(a.next_u64(), b.next_u64());
    // mix is a pure function: the generator stream is unaffected.
    Rng c(123);
    for (int i = 0; i < 16; ++i)
        c.next_u64();
    (void)Rng::mix(123, 7);
    EXPECT_EQ(a.next_u64(), c.next_u64());
    EXPECT_NE(Rng::mix(123, 7), Rng::mix(123, 8));
    EXPECT_EQ(Rng::mix(123, 7), Rng::mix(123, 7));
}

TEST(Rng, UniformRangeAndNormalMoments) {
    Rng rng(9);
    double mean = 0.0, var = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        mean += x;
        var += x * x;
    }
    mean /= n;
    var = var / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(var, 1.0, 0.05);
    for (int i = 0; i < 100; ++i)
        EXPECT_LT(rng.uniform_below(7), 7u);
}

TEST(HalfRange, RepeatedScaling) {
    // Factor 2 from magnitude 1: 2^16 = 65536 first exceeds 65504.
    std::vector<double> twos(32, 2.0);
    ScalingSimResult r = simulate_repeated_scaling(1.0, twos, true);
    EXPECT_TRUE(r.overflowed);
    EXPECT_EQ(r.overflow_layer, 16u);

    // Factor 1.2 stays comfortably inside through 32 layers.
    std::vector<double> mild(32, 1.2);
    ScalingSimResult s = simulate_repeated_scaling(1.0, mild, true);
    EXPECT_FALSE(s.overflowed);
    EXPECT_NEAR(s.final_magnitude, std::pow(1.2, 32), 1e-9);
    EXPECT_NEAR(s.final_magnitude, 341.8, 0.1);

    // 64-bit mode never trips the range check.
    ScalingSimResult f = simulate_repeated_scaling(1.0, twos, false);
    EXPECT_FALSE(f.overflowed);
    EXPECT_DOUBLE_EQ(f.final_magnitude, 4294967296.0);
}

}  // namespace
}  // namespace pmod
