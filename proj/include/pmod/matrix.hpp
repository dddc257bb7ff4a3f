// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmod {

// Running count of multiply-accumulate operations performed by matmul and
// the attention dot products. Thread-local so concurrent runs do not race.
namespace macs {

inline uint64_t& counter() {
    thread_local uint64_t value = 0;
    return value;
}

inline void reset() { counter() = 0; }
inline uint64_t value() { return counter(); }
inline void add(uint64_t n) { counter() += n; }

}  // namespace macs

// Dense row-major matrix of doubles. Value semantics throughout.
class Matrix {
public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols) : m_rows(rows), m_cols(cols), m_data(rows * cols, 0.0) {}

    static Matrix from(std::initializer_list<std::initializer_list<double>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        size_t i = 0;
        for (const auto& r : rows) {
            if (r.size() != m.m_cols)
                throw std::invalid_argument("Matrix::from: ragged rows");
            size_t j = 0;
            for (double v : r)
                m(i, j++) = v;
            ++i;
        }
        return m;
    }

    size_t rows() const { return m_rows; }
    size_t cols() const { return m_cols; }
    size_t size() const { return m_data.size(); }

    double& operator()(size_t r, size_t c) { return m_data[r * m_cols + c]; }
    double operator()(size_t r, size_t c) const { return m_data[r * m_cols + c]; }

    double* data() { return m_data.data(); }
    const double* data() const { return m_data.data(); }

    std::span<double> row(size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    bool same_shape(const Matrix& o) const { return m_rows == o.m_rows && m_cols == o.m_cols; }

    void fill(double v) { m_data.assign(m_data.size(), v); }

    Matrix& operator+=(const Matrix& o) {
        check_shape(o, "operator+=");
        for (size_t i = 0; i < m_data.size(); ++i)
            m_data[i] += o.m_data[i];
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        check_shape(o, "operator-=");
        for (size_t i = 0; i < m_data.size(); ++i)
            m_data[i] -= o.m_data[i];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : m_data)
            v *= s;
        return *this;
    }

    // this += s * o
    void axpy(double s, const Matrix& o) {
        check_shape(o, "axpy");
        for (size_t i = 0; i < m_data.size(); ++i)
            m_data[i] += s * o.m_data[i];
    }

    bool all_finite() const;

private:
    void check_shape(const Matrix& o, const char* op) const {
        if (!same_shape(o))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    size_t m_rows = 0;
    size_t m_cols = 0;
    std::vector<double> m_data;
};

inline bool Matrix::all_finite() const {
    for (double v : m_data)
        if (!std::isfinite(v))
            return false;
    return true;
}

// Standard product with deterministic accumulation: for each output element the
// inner sum runs over k in ascending order (i-k-j loop keeps that order while
// staying cache friendly).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions do not match");
    Matrix c(a.rows(), b.cols());
    const size_t n = b.cols();
    for (size_t i = 0; i < a.rows(); ++i) {
        double* crow = c.data() + i * n;
        for (size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* brow = b.data() + k * n;
            for (size_t j = 0; j < n; ++j)
                crow[j] += aik * brow[j];
        }
    }
    macs::add(static_cast<uint64_t>(a.rows()) * a.cols() * b.cols());
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < a.cols(); ++j)
            t(j, i) = a(i, j);
    return t;
}

// Counted dot product used by the attention inner loops.
inline double dot_counted(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    macs::add(a.size());
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

}  // namespace pmod
