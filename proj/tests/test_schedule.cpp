// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "pmod/schedule.hpp"

namespace pmod {
namespace {

ScheduleConfig cosine_cfg(size_t n_layers, double beta, double min_r, double max_r) {
    ScheduleConfig c;
    c.variant = ScheduleVariant::Cosine;
    c.n_layers = n_layers;
    c.beta = beta;
    c.min_ratio = min_r;
    c.max_ratio = max_r;
    return c;
}

TEST(TokensRetained, FloorWithUnitMinimum) {
    EXPECT_EQ(tokens_retained(64, 0.5), 32u);
    EXPECT_EQ(tokens_retained(64, 0.1), 6u);
    EXPECT_EQ(tokens_retained(10, 0.35), 3u);
    EXPECT_EQ(tokens_retained(64, 0.005), 1u);  // floor hits 0, floor is raised to 1
    EXPECT_EQ(tokens_retained(5, 1.0), 5u);
    EXPECT_EQ(tokens_retained(1, 0.01), 1u);
    EXPECT_THROW(tokens_retained(0, 0.5), std::invalid_argument);
    EXPECT_THROW(tokens_retained(8, 0.0), std::invalid_argument);
    EXPECT_THROW(tokens_retained(8, 1.5), std::invalid_argument);
}

TEST(VariantNames, RoundTrip) {
    for (ScheduleVariant v : {ScheduleVariant::Cosine, ScheduleVariant::Linear,
                              ScheduleVariant::Stepped, ScheduleVariant::Interleaved,
                              ScheduleVariant::Constant})
        EXPECT_EQ(schedule_variant_from_string(to_string(v)), v);
    EXPECT_THROW(schedule_variant_from_string("cubic"), std::invalid_argument);
}

TEST(PrdRatio, MidpointAndEndpointsExact) {
    ScheduleConfig c = cosine_cfg(32, 0.5, 0.0, 1.0);
    EXPECT_DOUBLE_EQ(prd_ratio(c, 16), 0.5);  // exact: the half-cosine term vanishes
    EXPECT_DOUBLE_EQ(prd_ratio(c, 32), 0.0);
    EXPECT_THROW(prd_ratio(c, 0), std::out_of_range);
    EXPECT_THROW(prd_ratio(c, 33), std::out_of_range);
    ScheduleConfig lin = c;
    lin.variant = ScheduleVariant::Linear;
    EXPECT_THROW(prd_ratio(lin, 1), std::invalid_argument);
}

TEST(PrdRatio, RawMeanClosedForm) {
    // Sum of cos(pi*l/L) over l=1..L telescopes to -1, so the raw mean is
    // beta - 1/(2L) for every beta and depth.
    for (size_t L : {8u, 16u, 32u, 33u}) {
        for (double beta : {0.3, 0.4, 0.5, 1.0}) {
            RatioSchedule s = build_schedule(cosine_cfg(L, beta, 0.0, 1.0));
            EXPECT_NEAR(mean_raw_retention(s), beta - 1.0 / (2.0 * L), 1e-12)
                << "L=" << L << " beta=" << beta;
        }
    }
    RatioSchedule s32 = build_schedule(cosine_cfg(32, 0.5, 0.0, 1.0));
    EXPECT_NEAR(mean_raw_retention(s32), 0.484375, 1e-12);
}

TEST(ClampRatio, ThresholdRule) {
    ScheduleConfig c = cosine_cfg(8, 0.5, 0.2, 0.8);
    EXPECT_DOUBLE_EQ(clamp_ratio(c, 0.9), 1.0);
    EXPECT_DOUBLE_EQ(clamp_ratio(c, 0.8), 1.0);  // at the max threshold: vanilla layer
    EXPECT_DOUBLE_EQ(clamp_ratio(c, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(clamp_ratio(c, 0.2), 0.2);
    EXPECT_DOUBLE_EQ(clamp_ratio(c, 0.05), 0.2);
}

TEST(BuildSchedule, ToyCosineLadder) {
    RatioSchedule s = build_schedule(cosine_cfg(8, 0.5, 0.1, 0.9));
    ASSERT_EQ(s.n_layers(), 8u);
    const double expected[8] = {1.0,
                                0.8535533905932737,
                                0.6913417161825449,
                                0.5,
                                0.3086582838174551,
                                0.1464466094067263,
                                0.1,
                                0.1};
    for (size_t l = 1; l <= 8; ++l)
        EXPECT_NEAR(s.ratio(l), expected[l - 1], 1e-15) << "layer " << l;
    // Raw values are preserved beside the clamped ones.
    EXPECT_NEAR(s.raw[0], 0.9619397662556434, 1e-15);
    EXPECT_NEAR(s.raw[7], 0.0, 1e-15);
    EXPECT_NEAR(mean_retention(s), 0.4625, 1e-12);
}

TEST(BuildSchedule, CosineClampedMonotoneNonIncreasing) {
    for (double beta : {0.3, 0.5, 0.7}) {
        for (double minr : {0.0, 0.1, 0.25}) {
            for (double maxr : {0.6, 0.9, 1.0}) {
                if (minr > maxr)
                    continue;
                RatioSchedule s = build_schedule(cosine_cfg(16, beta, minr, maxr));
                for (size_t l = 2; l <= 16; ++l)
                    EXPECT_LE(s.ratio(l), s.ratio(l - 1))
                        << "beta=" << beta << " min=" << minr << " max=" << maxr;
            }
        }
    }
}

TEST(BuildSchedule, LinearEndpointsAndSpacing) {
    ScheduleConfig c;
    c.variant = ScheduleVariant::Linear;
    c.n_layers = 8;
    c.min_ratio = 0.0;
    c.max_ratio = 1.0;
    c.linear_start = 0.98;
    c.linear_end = 0.1;
    RatioSchedule s = build_schedule(c);
    EXPECT_NEAR(s.ratio(1), 0.98, 1e-15);
    EXPECT_NEAR(s.ratio(8), 0.1, 1e-15);
    const double step = (0.1 - 0.98) / 7.0;
    for (size_t l = 2; l <= 8; ++l)
        EXPECT_NEAR(s.ratio(l) - s.ratio(l - 1), step, 1e-12);
}

TEST(BuildSchedule, InterleavedAlternates) {
    ScheduleConfig c;
    c.variant = ScheduleVariant::Interleaved;
    c.n_layers = 8;
    c.interleave_low = 0.08;
    RatioSchedule s = build_schedule(c);
    for (size_t l = 1; l <= 8; ++l)
        EXPECT_DOUBLE_EQ(s.ratio(l), (l % 2 == 1) ? 1.0 : 0.08) << "layer " << l;
}

TEST(BuildSchedule, SteppedGroupsNearEqualSplit) {
    ScheduleConfig c;
    c.variant = ScheduleVariant::Stepped;
    c.n_layers = 8;
    c.step_levels = {0.9, 0.5, 0.1};
    // 8 layers over 3 groups: sizes 3, 3, 2 (remainder goes to earlier groups).
    EXPECT_EQ(step_levels_group(c, 1), 0u);
    EXPECT_EQ(step_levels_group(c, 3), 0u);
    EXPECT_EQ(step_levels_group(c, 4), 1u);
    EXPECT_EQ(step_levels_group(c, 6), 1u);
    EXPECT_EQ(step_levels_group(c, 7), 2u);
    EXPECT_EQ(step_levels_group(c, 8), 2u);
    RatioSchedule s = build_schedule(c);
    EXPECT_DOUBLE_EQ(s.ratio(1), 0.9);
    EXPECT_DOUBLE_EQ(s.ratio(4), 0.5);
    EXPECT_DOUBLE_EQ(s.ratio(8), 0.1);
}

TEST(BuildSchedule, ConstantFillsAllLayers) {
    ScheduleConfig c;
    c.variant = ScheduleVariant::Constant;
    c.n_layers = 5;
    c.constant_ratio = 0.54;
    RatioSchedule s = build_schedule(c);
    for (size_t l = 1; l <= 5; ++l)
        EXPECT_DOUBLE_EQ(s.ratio(l), 0.54);
    EXPECT_NEAR(mean_retention(s), 0.54, 1e-15);
}

TEST(ScheduleConfig, ValidationRejectsBadInputs) {
    EXPECT_THROW(build_schedule(cosine_cfg(0, 0.5, 0.0, 1.0)), std::invalid_argument);
    EXPECT_THROW(build_schedule(cosine_cfg(8, 0.0, 0.0, 1.0)), std::invalid_argument);
    EXPECT_THROW(build_schedule(cosine_cfg(8, 0.5, 0.7, 0.3)), std::invalid_argument);
    EXPECT_THROW(build_schedule(cosine_cfg(8, 0.5, 0.0, 1.5)), std::invalid_argument);

    ScheduleConfig c;
    c.n_layers = 8;
    c.variant = ScheduleVariant::Constant;
    c.constant_ratio = 0.0;
    EXPECT_THROW(build_schedule(c), std::invalid_argument);

    c.variant = ScheduleVariant::Interleaved;
    c.interleave_low = -0.1;
    EXPECT_THROW(build_schedule(c), std::invalid_argument);

    c.variant = ScheduleVariant::Stepped;
    c.step_levels = {};
    EXPECT_THROW(build_schedule(c), std::invalid_argument);
    c.step_levels = {0.5, 0.9};  // increasing
    EXPECT_THROW(build_schedule(c), std::invalid_argument);
    c.step_levels = {1.2, 0.5};
    EXPECT_THROW(build_schedule(c), std::invalid_argument);

    c.variant = ScheduleVariant::Linear;
    c.min_ratio = 0.0;
    c.max_ratio = 1.0;
    c.linear_start = 0.2;
    c.linear_end = 0.8;  // increasing over depth
    EXPECT_THROW(build_schedule(c), std::invalid_argument);
}

TEST(SearchThresholds, KvRetentionTargets) {
    // Depth-32 targets and the clamp configs the 0.01 grid search lands on.
    struct Case {
        double beta, target, min_r, max_r, mean;
    };
    const Case cases[] = {
        {0.3, 0.423, 0.12, 0.66, 0.422987},
        {0.4, 0.475, 0.10, 0.68, 0.475000},
        {0.5, 0.537, 0.23, 0.97, 0.536990},
    };
    for (const Case& kc : cases) {
        ThresholdSearchResult r = search_thresholds(kc.target, kc.beta, 32);
        EXPECT_TRUE(r.within_tolerance) << "beta=" << kc.beta;
        EXPECT_NEAR(r.config.min_ratio, kc.min_r, 1e-12) << "beta=" << kc.beta;
        EXPECT_NEAR(r.config.max_ratio, kc.max_r, 1e-12) << "beta=" << kc.beta;
        EXPECT_NEAR(r.achieved_mean, kc.mean, 1e-6) << "beta=" << kc.beta;
        EXPECT_NEAR(r.achieved_mean, kc.target, 0.005) << "beta=" << kc.beta;
    }
}

TEST(SearchThresholds, ToyDepthTarget) {
    ThresholdSearchResult r = search_thresholds(0.54, 0.5, 8, 0.01);
    EXPECT_TRUE(r.within_tolerance);
    EXPECT_NEAR(r.config.min_ratio, 0.17, 1e-12);
    EXPECT_NEAR(r.config.max_ratio, 0.51, 1e-12);
    EXPECT_NEAR(r.achieved_mean, 0.5398322854771819, 1e-9);
    EXPECT_NEAR(r.achieved_mean, 0.54, 0.01);
}

TEST(ScheduleCsv, SchemaHeaderAndRows) {
    RatioSchedule s = build_schedule(cosine_cfg(8, 0.5, 0.1, 0.9));
    std::istringstream in(schedule_to_csv(s));
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "# schema: schedule.v1");
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "layer,raw_ratio,clamped_ratio");
    size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty())
            ++rows;
    EXPECT_EQ(rows, 8u);
    std::istringstream again(schedule_to_csv(s));
    std::getline(again, line);
    std::getline(again, line);
    std::getline(again, line);
    EXPECT_EQ(line.substr(0, 2), "1,");
    EXPECT_NE(line.find(",1"), std::string::npos);  // clamped layer-1 ratio is 1
}

}  // namespace
}  // namespace pmod
