// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "pmod/costmodel.hpp"

namespace pmod {
namespace {

ModelConfig tiny_cfg() {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_ff = 8;
    c.vocab_size = 10;
    c.max_seq = 64;
    return c;
}

RatioSchedule constant_schedule(size_t n_layers, double r) {
    ScheduleConfig c;
    c.variant = ScheduleVariant::Constant;
    c.n_layers = n_layers;
    c.constant_ratio = r;
    return build_schedule(c);
}

TEST(AttnPairs, CausalCounting) {
    EXPECT_EQ(attn_pairs(1, 1), 1u);
    EXPECT_EQ(attn_pairs(1, 10), 10u);
    EXPECT_EQ(attn_pairs(3, 5), 12u);  // rows see 3, 4, 5 entries
    EXPECT_EQ(attn_pairs(4, 4), 10u);  // full causal triangle
    EXPECT_THROW(attn_pairs(5, 4), std::invalid_argument);
}

TEST(LayerMacs, HandComputedTinyLayer) {
    ModelConfig c = tiny_cfg();
    // qkvo 4*2*16 = 128, attention 2*4*pairs(2,2) = 24, mlp 3*2*4*8 = 192.
    EXPECT_EQ(layer_macs(c, 2, 2, 0), 344u);
    EXPECT_EQ(layer_macs(c, 2, 2, 5), 364u);  // + 5 router dots of width 4
    EXPECT_EQ(layer_macs(c, 0, 0, 5), 20u);   // router-only pass
    EXPECT_EQ(layer_macs(c, 0, 0, 0), 0u);
}

TEST(LayerFlops, HandComputedTinyLayer) {
    ModelConfig c = tiny_cfg();
    // 2*344 macs + 16*t*d + 6*heads*pairs + 6*t*f = 688 + 128 + 36 + 96.
    EXPECT_DOUBLE_EQ(layer_flops(c, 2, 2, 0), 948.0);
    // Router-only: 2*router*d + router*(2+d).
    EXPECT_DOUBLE_EQ(layer_flops(c, 0, 0, 5), 70.0);
    // Router adds 2*d MACs-worth plus (2+d) elementwise per token.
    EXPECT_DOUBLE_EQ(layer_flops(c, 2, 2, 3) - layer_flops(c, 2, 2, 0), 3.0 * (2.0 * 4 + 2 + 4));
}

TEST(ModelCost, VanillaScheduleIsTheBaseline) {
    ModelConfig c = tiny_cfg();
    c.n_layers = 3;
    WorkloadSpec w;
    w.n_vision = 16;
    w.n_text_prompt = 4;
    w.n_decode = 2;
    CostReport rep = model_cost(c, constant_schedule(3, 1.0), w);
    EXPECT_DOUBLE_EQ(rep.ratio_vs_baseline_flops, 1.0);
    EXPECT_DOUBLE_EQ(rep.ratio_vs_baseline_kv, 1.0);
    EXPECT_DOUBLE_EQ(rep.ratio_vs_baseline_kv_vision, 1.0);
    ASSERT_EQ(rep.per_layer_flops.size(), 3u);
    EXPECT_DOUBLE_EQ(rep.per_layer_flops[0], rep.per_layer_flops[2]);
    // Prefill 20 tokens + 2 decoded, cached K and V, d=4, 2 bytes each.
    EXPECT_EQ(rep.per_layer_kv_entries[0], 22u);
    EXPECT_DOUBLE_EQ(rep.total_kv_bytes, 3.0 * 22.0 * 2.0 * 4.0 * 2.0);
}

TEST(ModelCost, RoutedLayersAreCheaper) {
    ModelConfig c = tiny_cfg();
    c.n_layers = 4;
    WorkloadSpec w;
    w.n_vision = 32;
    w.n_text_prompt = 4;
    w.n_decode = 4;
    CostReport rep = model_cost(c, constant_schedule(4, 0.5), w);
    EXPECT_LT(rep.ratio_vs_baseline_flops, 1.0);
    EXPECT_LT(rep.ratio_vs_baseline_kv, 1.0);
    // Exactly half the vision entries survive at r = 0.5 with n_vision = 32.
    EXPECT_DOUBLE_EQ(rep.ratio_vs_baseline_kv_vision, 0.5);
    EXPECT_EQ(rep.per_layer_kv_entries[0], 16u + 4u + 4u);
}

TEST(ModelCost, TextOnlyWorkloadHasNoRouting) {
    ModelConfig c = tiny_cfg();
    WorkloadSpec w;
    w.n_vision = 0;
    w.n_text_prompt = 3;
    w.n_decode = 2;
    CostReport rep = model_cost(c, constant_schedule(1, 0.25), w);
    EXPECT_DOUBLE_EQ(rep.ratio_vs_baseline_flops, 1.0);
    EXPECT_DOUBLE_EQ(rep.ratio_vs_baseline_kv_vision, 1.0);
    EXPECT_EQ(rep.per_layer_kv_entries[0], 5u);
    EXPECT_DOUBLE_EQ(rep.total_kv_bytes, 5.0 * 2.0 * 4.0 * 2.0);
}

TEST(ModelCost, RejectsMismatchedInputs) {
    ModelConfig c = tiny_cfg();
    WorkloadSpec w;
    w.n_vision = 8;
    EXPECT_THROW(model_cost(c, constant_schedule(2, 0.5), w), std::invalid_argument);
    WorkloadSpec bad = w;
    bad.kv_bytes_per_element = 0.0;
    EXPECT_THROW(model_cost(c, constant_schedule(1, 0.5), bad), std::invalid_argument);
}

TEST(KvRatio, FloorAwareRetention) {
    EXPECT_DOUBLE_EQ(kv_ratio(constant_schedule(4, 0.5), 64), 0.5);
    // floor(64*0.1) = 6 kept of 64.
    EXPECT_DOUBLE_EQ(kv_ratio(constant_schedule(2, 0.1), 64), 6.0 / 64.0);
    // Unit minimum bites for tiny caches.
    EXPECT_DOUBLE_EQ(kv_ratio(constant_schedule(1, 0.1), 4), 0.25);
    EXPECT_THROW(kv_ratio(constant_schedule(1, 0.5), 0), std::invalid_argument);
}

TEST(Presets, BaselineTeraFlops) {
    CostReport rep = model_cost(model_7b(), constant_schedule(32, 1.0), workload_7b());
    EXPECT_NEAR(rep.total_flops / 1e12, 40.2103, 0.001);
    // Within 5% of the 39.46 TFLOPs reference for this workload class.
    EXPECT_LT(std::fabs(rep.total_flops - 39.46e12) / 39.46e12, 0.05);
}

TEST(Presets, RetentionScheduleSavings) {
    ThresholdSearchResult sr = search_thresholds(0.537, 0.5, 32);
    ASSERT_TRUE(sr.within_tolerance);
    RatioSchedule sched = build_schedule(sr.config);
    CostReport rep = model_cost(model_7b(), sched, workload_7b());
    EXPECT_NEAR(rep.ratio_vs_baseline_flops, 0.5352, 1e-3);
    EXPECT_GE(rep.ratio_vs_baseline_flops, 0.53);
    EXPECT_LE(rep.ratio_vs_baseline_flops, 0.59);
    EXPECT_NEAR(rep.ratio_vs_baseline_kv, 0.5445, 1e-3);
    EXPECT_NEAR(rep.ratio_vs_baseline_kv_vision, 0.5369, 1e-3);
}

TEST(CostCsv, SchemaHeaderAndTableSummary) {
    ModelConfig c = tiny_cfg();
    c.n_layers = 2;
    WorkloadSpec w;
    w.n_vision = 8;
    w.n_text_prompt = 2;
    CostReport rep = model_cost(c, constant_schedule(2, 0.5), w);

    std::istringstream in(cost_report_to_csv(rep));
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "# schema: costreport.v1");
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "layer,flops,kv_entries");
    size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty())
            ++rows;
    EXPECT_EQ(rows, 2u);

    const std::string table = cost_report_table(rep);
    EXPECT_NE(table.find("total_flops"), std::string::npos);
    EXPECT_NE(table.find("flops_ratio"), std::string::npos);
    EXPECT_NE(table.find("kv_ratio_combined"), std::string::npos);
    EXPECT_NE(table.find("kv_ratio_vision_only"), std::string::npos);
}

}  // namespace
}  // namespace pmod
