// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace pmod {

// Largest finite value representable in IEEE binary16. Core math stays in
// doubles; this range check only serves the overflow demonstrations.
inline constexpr double kHalfRangeMax = 65504.0;

inline bool exceeds_half_range(double x) { return std::fabs(x) > kHalfRangeMax; }

struct ScalingSimResult {
    bool overflowed = false;
    size_t overflow_layer = 0;   // 1-based; 0 when stable
    double final_magnitude = 0.0;
};

// Repeatedly scales a magnitude by per-layer factors and reports the first
// layer at which the value leaves the binary16 range. In 64-bit mode the
// range check is skipped and only the final magnitude is of interest.
inline ScalingSimResult simulate_repeated_scaling(double start_magnitude,
                                                  const std::vector<double>& factors,
                                                  bool half_range = true) {
    ScalingSimResult res;
    double m = start_magnitude;
    for (size_t l = 0; l < factors.size(); ++l) {
        m *= factors[l];
        if (half_range && exceeds_half_range(m)) {
            res.overflowed = true;
            res.overflow_layer = l + 1;
            res.final_magnitude = m;
            return res;
        }
    }
    res.final_magnitude = m;
    return res;
}

}  // namespace pmod
