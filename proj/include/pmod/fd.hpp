// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <stdexcept>

#include "pmod/matrix.hpp"

namespace pmod {

// Central-difference gradient of a scalar function of a matrix:
// (f(x + h e) - f(x - h e)) / (2h) per entry.
inline Matrix fd_grad(const std::function<double(const Matrix&)>& f, const Matrix& at, double h) {
    if (!(h > 0.0))
        throw std::invalid_argument("fd_grad: h must be positive");
    Matrix g(at.rows(), at.cols());
    Matrix x = at;
    for (size_t i = 0; i < at.rows(); ++i) {
        for (size_t j = 0; j < at.cols(); ++j) {
            const double orig = x(i, j);
            x(i, j) = orig + h;
            const double fp = f(x);
            x(i, j) = orig - h;
            const double fm = f(x);
            x(i, j) = orig;
            g(i, j) = (fp - fm) / (2.0 * h);
        }
    }
    return g;
}

// Norm-based relative error between an analytic gradient and a reference.
inline double grad_rel_error(const Matrix& analytic, const Matrix& reference) {
    if (!analytic.same_shape(reference))
        throw std::invalid_argument("grad_rel_error: shape mismatch");
    double diff = 0.0, na = 0.0, nr = 0.0;
    for (size_t i = 0; i < analytic.rows(); ++i)
        for (size_t j = 0; j < analytic.cols(); ++j) {
            const double d = analytic(i, j) - reference(i, j);
            diff += d * d;
            na += analytic(i, j) * analytic(i, j);
            nr += reference(i, j) * reference(i, j);
        }
    const double denom = std::sqrt(na) + std::sqrt(nr);
    if (denom == 0.0)
        return 0.0;
    return std::sqrt(diff) / denom;
}

}  // namespace pmod
