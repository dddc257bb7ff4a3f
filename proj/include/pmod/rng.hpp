// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

#include "pmod/matrix.hpp"

namespace pmod {

// SplitMix64 generator. Integer state transitions only, so identical seeds
// yield identical streams on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : m_state(seed) {}

    uint64_t next_u64() {
        m_state += 0x9E3779B97F4A7C15ull;
        uint64_t z = m_state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t uniform_below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; pairs consumed deterministically.
    double normal() {
        if (m_have_spare) {
            m_have_spare = false;
            return m_spare;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        m_spare = r * std::sin(t);
        m_have_spare = true;
        return r * std::cos(t);
    }

    void fill_normal(Matrix& m, double stddev) {
        for (size_t i = 0; i < m.rows(); ++i)
            for (size_t j = 0; j < m.cols(); ++j)
                m(i, j) = stddev * normal();
    }

    // Derive an independent seed from this generator's seed and a tag.
    // Pure function of (seed, tag); does not advance this stream.
    static uint64_t mix(uint64_t seed, uint64_t tag) {
        uint64_t z = seed ^ (0x9E3779B97F4A7C15ull * (tag + 1));
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

private:
    uint64_t m_state;
    double m_spare = 0.0;
    bool m_have_spare = false;
};

}  // namespace pmod
