// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmod/ops.hpp"

namespace pmod {

// Number of vision tokens a layer with retention ratio r keeps out of n.
inline size_t tokens_retained(size_t n, double r) {
    if (n == 0)
        throw std::invalid_argument("tokens_retained: no vision tokens");
    if (!(r > 0.0 && r <= 1.0))
        throw std::invalid_argument("tokens_retained: ratio must be in (0, 1]");
    const size_t k = static_cast<size_t>(std::floor(static_cast<double>(n) * r));
    return std::max<size_t>(1, std::min(n, k));
}

enum class ScheduleVariant { Cosine, Linear, Stepped, Interleaved, Constant };

inline const char* to_string(ScheduleVariant v) {
    switch (v) {
    case ScheduleVariant::Cosine: return "cosine";
    case ScheduleVariant::Linear: return "linear";
    case ScheduleVariant::Stepped: return "stepped";
    case ScheduleVariant::Interleaved: return "interleaved";
    case ScheduleVariant::Constant: return "constant";
    }
    return "?";
}

inline ScheduleVariant schedule_variant_from_string(const std::string& s) {
    if (s == "cosine") return ScheduleVariant::Cosine;
    if (s == "linear") return ScheduleVariant::Linear;
    if (s == "stepped") return ScheduleVariant::Stepped;
    if (s == "interleaved") return ScheduleVariant::Interleaved;
    if (s == "constant") return ScheduleVariant::Constant;
    throw std::invalid_argument("unknown schedule variant: " + s);
}

struct ScheduleConfig {
    ScheduleVariant variant = ScheduleVariant::Cosine;
    size_t n_layers = 0;

    // Cosine parameters. min/max thresholds also clamp the linear variant.
    double beta = 0.5;
    double min_ratio = 0.0;   // 0 disables the lower clamp
    double max_ratio = 1.0;

    // Variant-specific parameters.
    double constant_ratio = 0.5;
    double interleave_low = 0.1;
    std::vector<double> step_levels;  // one level per (near-)equal layer group
    double linear_start = 1.0;
    double linear_end = 0.1;

    void validate() const {
        if (n_layers < 1)
            throw std::invalid_argument("schedule: n_layers must be >= 1");
        switch (variant) {
        case ScheduleVariant::Cosine:
            if (!(beta > 0.0 && beta <= 1.0))
                throw std::invalid_argument("schedule: beta must be in (0, 1]");
            [[fallthrough]];
        case ScheduleVariant::Linear:
            if (!(min_ratio >= 0.0 && min_ratio <= max_ratio && max_ratio <= 1.0))
                throw std::invalid_argument("schedule: need 0 <= min_ratio <= max_ratio <= 1");
            break;
        case ScheduleVariant::Constant:
            if (!(constant_ratio > 0.0 && constant_ratio <= 1.0))
                throw std::invalid_argument("schedule: constant_ratio must be in (0, 1]");
            break;
        case ScheduleVariant::Interleaved:
            if (!(interleave_low > 0.0 && interleave_low <= 1.0))
                throw std::invalid_argument("schedule: interleave_low must be in (0, 1]");
            break;
        case ScheduleVariant::Stepped:
            if (step_levels.empty())
                throw std::invalid_argument("schedule: stepped variant needs step_levels");
            for (size_t i = 0; i < step_levels.size(); ++i) {
                if (!(step_levels[i] > 0.0 && step_levels[i] <= 1.0))
                    throw std::invalid_argument("schedule: step level out of (0, 1]");
                if (i > 0 && step_levels[i] > step_levels[i - 1])
                    throw std::invalid_argument("schedule: step levels must be non-increasing");
            }
            break;
        }
        if (variant == ScheduleVariant::Linear && !(linear_start >= linear_end))
            throw std::invalid_argument("schedule: linear variant must be non-increasing");
    }
};

// Per-layer ratios, 1-based layer indexing. raw holds the generator value
// before clamping, clamped the deployed ratio. clamped == 1 means the layer
// runs as a vanilla transformer layer with no token selection.
struct RatioSchedule {
    ScheduleConfig config;
    std::vector<double> raw;
    std::vector<double> clamped;

    size_t n_layers() const { return clamped.size(); }
    double ratio(size_t layer_1based) const { return clamped.at(layer_1based - 1); }
};

// Raw shifted-cosine ratio: half-cosine over the depth plus the shift factor.
inline double prd_ratio(const ScheduleConfig& cfg, size_t layer_1based) {
    if (cfg.variant != ScheduleVariant::Cosine)
        throw std::invalid_argument("prd_ratio: cosine variant only");
    if (layer_1based < 1 || layer_1based > cfg.n_layers)
        throw std::out_of_range("prd_ratio: layer index out of range");
    const double x = static_cast<double>(layer_1based) / static_cast<double>(cfg.n_layers);
    return 0.5 * cos_pi(x) + cfg.beta;
}

// Threshold rule: at or above the max threshold the layer becomes vanilla
// (ratio 1); at or below the min threshold the ratio is pinned to min.
inline double clamp_ratio(const ScheduleConfig& cfg, double r) {
    if (r >= cfg.max_ratio)
        return 1.0;
    if (r <= cfg.min_ratio)
        return cfg.min_ratio;
    return r;
}

inline size_t step_levels_group(const ScheduleConfig& cfg, size_t layer_1based) {
    const size_t groups = cfg.step_levels.size();
    const size_t base = cfg.n_layers / groups;
    const size_t extra = cfg.n_layers % groups;  // first `extra` groups get one more layer
    size_t idx = layer_1based - 1;
    for (size_t g = 0; g < groups; ++g) {
        const size_t len = base + (g < extra ? 1 : 0);
        if (idx < len)
            return g;
        idx -= len;
    }
    return groups - 1;
}

inline RatioSchedule build_schedule(const ScheduleConfig& cfg) {
    cfg.validate();
    RatioSchedule s;
    s.config = cfg;
    s.raw.resize(cfg.n_layers);
    s.clamped.resize(cfg.n_layers);
    const size_t L = cfg.n_layers;
    for (size_t l = 1; l <= L; ++l) {
        double r = 0.0;
        switch (cfg.variant) {
        case ScheduleVariant::Cosine:
            r = prd_ratio(cfg, l);
            break;
        case ScheduleVariant::Linear:
            r = (L == 1) ? cfg.linear_start
                         : cfg.linear_start + (cfg.linear_end - cfg.linear_start) *
                                                  static_cast<double>(l - 1) /
                                                  static_cast<double>(L - 1);
            break;
        case ScheduleVariant::Stepped: {
            // Near-equal groups; remainder layers go to the earlier groups.
            const size_t g = step_levels_group(cfg, l);
            r = cfg.step_levels[g];
            break;
        }
        case ScheduleVariant::Interleaved:
            r = (l % 2 == 1) ? 1.0 : cfg.interleave_low;
            break;
        case ScheduleVariant::Constant:
            r = cfg.constant_ratio;
            break;
        }
        s.raw[l - 1] = r;
        const bool clamps = cfg.variant == ScheduleVariant::Cosine ||
                            cfg.variant == ScheduleVariant::Linear;
        s.clamped[l - 1] = clamps ? clamp_ratio(cfg, r) : r;
    }
    return s;
}

inline double mean_retention(const RatioSchedule& s) {
    double sum = 0.0;
    for (double r : s.clamped)
        sum += r;
    return sum / static_cast<double>(s.clamped.size());
}

// Mean of the raw generator values, before clamping. For the cosine variant
// this equals beta - 1/(2L) identically.
inline double mean_raw_retention(const RatioSchedule& s) {
    double sum = 0.0;
    for (double r : s.raw)
        sum += r;
    return sum / static_cast<double>(s.raw.size());
}

struct ThresholdSearchResult {
    ScheduleConfig config;
    double achieved_mean = 0.0;
    bool within_tolerance = false;
};

// Grid search over (min_ratio, max_ratio) on a 0.01 grid for the cosine
// schedule whose clamped mean retention comes closest to target_mean.
inline ThresholdSearchResult search_thresholds(double target_mean, double beta, size_t n_layers,
                                               double tolerance = 0.005) {
    ScheduleConfig cfg;
    cfg.variant = ScheduleVariant::Cosine;
    cfg.beta = beta;
    cfg.n_layers = n_layers;

    ThresholdSearchResult best;
    double best_err = 1e30;
    for (int mini = 0; mini <= 100; ++mini) {
        for (int maxi = mini; maxi <= 100; ++maxi) {
            cfg.min_ratio = 0.01 * mini;
            cfg.max_ratio = 0.01 * maxi;
            double sum = 0.0;
            for (size_t l = 1; l <= n_layers; ++l)
                sum += clamp_ratio(cfg, prd_ratio(cfg, l));
            const double mean = sum / static_cast<double>(n_layers);
            const double err = std::fabs(mean - target_mean);
            if (err < best_err) {
                best_err = err;
                best.config = cfg;
                best.achieved_mean = mean;
            }
        }
    }
    best.within_tolerance = best_err <= tolerance;
    return best;
}

inline std::string schedule_to_csv(const RatioSchedule& s) {
    std::ostringstream os;
    os << "# schema: schedule.v1\n";
    os << "layer,raw_ratio,clamped_ratio\n";
    os.precision(17);
    for (size_t l = 0; l < s.n_layers(); ++l)
        os << (l + 1) << ',' << s.raw[l] << ',' << s.clamped[l] << '\n';
    return os.str();
}

}  // namespace pmod
