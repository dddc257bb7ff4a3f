// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "pmod/matrix.hpp"

namespace pmod {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double silu(double x) { return x * sigmoid(x); }

// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// In-place softmax with max subtraction.
inline void softmax_inplace(std::span<double> v) {
    double mx = v[0];
    for (double x : v)
        mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v)
        x /= sum;
}

inline Matrix softmax_rows(const Matrix& a) {
    Matrix out = a;
    for (size_t i = 0; i < out.rows(); ++i)
        softmax_inplace(out.row(i));
    return out;
}

// out = gain * x / sqrt(mean(x^2) + eps). Returns the inverse rms factor,
// which the backward pass reuses.
inline double rmsnorm_row(std::span<const double> x, std::span<const double> gain, double eps,
                          std::span<double> out) {
    if (x.size() != gain.size() || x.size() != out.size())
        throw std::invalid_argument("rmsnorm_row: length mismatch");
    if (!(eps >= 0.0))
        throw std::invalid_argument("rmsnorm_row: eps must be >= 0");
    double ms = 0.0;
    for (double v : x)
        ms += v * v;
    ms /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (size_t i = 0; i < x.size(); ++i)
        out[i] = x[i] * inv * gain[i];
    return inv;
}

// Gradients of rmsnorm_row. dx and dgain are accumulated into.
inline void rmsnorm_row_backward(std::span<const double> x, std::span<const double> gain,
                                 double inv, std::span<const double> dout, std::span<double> dx,
                                 std::span<double> dgain) {
    const size_t n = x.size();
    double proj = 0.0;  // sum_j dout_j * gain_j * x_j
    for (size_t j = 0; j < n; ++j)
        proj += dout[j] * gain[j] * x[j];
    const double c = inv * inv * inv * proj / static_cast<double>(n);
    for (size_t j = 0; j < n; ++j) {
        dx[j] += dout[j] * gain[j] * inv - c * x[j];
        dgain[j] += dout[j] * x[j] * inv;
    }
}

// cos(pi * x) with exact values at half-integers, so quarter-period points of
// schedule arithmetic come out exact.
inline double cos_pi(double x) {
    x = std::fabs(x);
    double r = std::fmod(x, 2.0);
    double sign = 1.0;
    if (r > 1.0) {
        r = 2.0 - r;
    }
    if (r > 0.5) {
        r = 1.0 - r;
        sign = -1.0;
    }
    if (r == 0.5)
        return 0.0;
    if (r == 0.0)
        return sign;
    return sign * std::cos(3.14159265358979323846264338328 * r);
}

}  // namespace pmod
