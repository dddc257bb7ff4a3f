// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmod/model.hpp"
#include "pmod/schedule.hpp"

namespace pmod {

// Inference workload: a vision-token prefix and text prompt are prefilled,
// then n_decode tokens are generated one at a time.
struct WorkloadSpec {
    size_t n_vision = 0;
    size_t n_text_prompt = 0;
    size_t n_decode = 0;
    double kv_bytes_per_element = 2.0;  // half-precision cache by default

    void validate() const {
        if (kv_bytes_per_element <= 0.0)
            throw std::invalid_argument("WorkloadSpec: kv_bytes_per_element must be positive");
    }
};

// Causal score/value pair count for t new tokens whose last token sees
// kv_visible entries: earlier tokens see one entry fewer each.
inline uint64_t attn_pairs(uint64_t t, uint64_t kv_visible) {
    if (kv_visible < t)
        throw std::invalid_argument("attn_pairs: kv_visible must cover the new tokens");
    return t * kv_visible - t * (t - 1) / 2;
}

// Multiply-accumulate count of one transformer layer processing t tokens
// whose attention sees kv_visible entries, plus an optional router pass over
// router_inputs tokens. Mirrors the instrumented kernels exactly:
//   q/k/v/o projections  4*t*d^2
//   attention scores     d * attn_pairs
//   attention values     d * attn_pairs
//   gated MLP            3*t*d*d_ff
//   router dot products  router_inputs*d
inline uint64_t layer_macs(const ModelConfig& cfg, uint64_t t, uint64_t kv_visible,
                           uint64_t router_inputs = 0) {
    const uint64_t d = cfg.d_model, f = cfg.d_ff;
    if (t == 0)
        return router_inputs * d;
    const uint64_t pairs = attn_pairs(t, kv_visible);
    return 4 * t * d * d + 2 * d * pairs + 3 * t * d * f + router_inputs * d;
}

// FLOPs of the same layer: 2 per multiply-accumulate, plus element-wise work
// at fixed documented costs — rmsnorm 4/elem twice per token, rotary 3/elem
// on q and k, softmax 5 + scale 1 per score entry, silu 5 + gate product 1
// per MLP hidden elem, residual adds 2/elem, router tanh+bias 2 and one
// reweighting multiply per element of each routed token row.
inline double layer_flops(const ModelConfig& cfg, uint64_t t, uint64_t kv_visible,
                          uint64_t router_inputs = 0) {
    const double d = static_cast<double>(cfg.d_model);
    const double f = static_cast<double>(cfg.d_ff);
    const double td = static_cast<double>(t) * d;
    const double pairs = (t == 0) ? 0.0 : static_cast<double>(attn_pairs(t, kv_visible));
    const double heads = static_cast<double>(cfg.n_heads);
    const double router = static_cast<double>(router_inputs);
    const double macs = static_cast<double>(layer_macs(cfg, t, kv_visible, router_inputs));
    return 2.0 * macs + 16.0 * td + 6.0 * heads * pairs + 6.0 * static_cast<double>(t) * f +
           router * (2.0 + d);
}

struct CostReport {
    std::vector<double> per_layer_flops;
    double total_flops = 0.0;
    std::vector<uint64_t> per_layer_kv_entries;
    double total_kv_bytes = 0.0;
    double ratio_vs_baseline_flops = 1.0;
    double ratio_vs_baseline_kv = 1.0;         // all cached tokens
    double ratio_vs_baseline_kv_vision = 1.0;  // vision entries only
};

namespace detail {

struct PhaseTotals {
    std::vector<double> flops;
    std::vector<uint64_t> kv_entries;
    double total_flops = 0.0;
    uint64_t total_kv = 0;
    uint64_t vision_kv = 0;
};

// One full run (prefill + decode) for a fixed per-layer retention.
inline PhaseTotals accumulate_cost(const ModelConfig& cfg, const std::vector<double>& ratios,
                                   const WorkloadSpec& w) {
    PhaseTotals acc;
    acc.flops.assign(cfg.n_layers, 0.0);
    acc.kv_entries.assign(cfg.n_layers, 0);
    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const double r = ratios[l];
        const bool routed = r < 1.0 && w.n_vision > 0;
        const uint64_t k = (w.n_vision == 0) ? 0
                           : routed            ? tokens_retained(w.n_vision, r)
                                               : w.n_vision;
        const uint64_t t_prefill = k + w.n_text_prompt;
        const uint64_t router_inputs = routed ? w.n_vision : 0;
        double fl = layer_flops(cfg, t_prefill, t_prefill, router_inputs);
        for (uint64_t s = 0; s < w.n_decode; ++s)
            fl += layer_flops(cfg, 1, t_prefill + s + 1, 0);
        acc.flops[l] = fl;
        acc.total_flops += fl;
        acc.kv_entries[l] = t_prefill + w.n_decode;
        acc.total_kv += acc.kv_entries[l];
        acc.vision_kv += k;
    }
    return acc;
}

}  // namespace detail

// Full analytic cost of running the workload under the given retention
// schedule, with ratios against the schedule-free baseline. Layers whose
// clamped ratio is exactly 1 run as vanilla layers (no router cost).
inline CostReport model_cost(const ModelConfig& cfg, const RatioSchedule& sched,
                             const WorkloadSpec& w) {
    cfg.validate();
    w.validate();
    if (sched.n_layers() != cfg.n_layers)
        throw std::invalid_argument("model_cost: schedule/config length mismatch");

    std::vector<double> ratios(cfg.n_layers), ones(cfg.n_layers, 1.0);
    for (size_t l = 0; l < cfg.n_layers; ++l)
        ratios[l] = sched.ratio(l + 1);

    const detail::PhaseTotals run = detail::accumulate_cost(cfg, ratios, w);
    const detail::PhaseTotals base = detail::accumulate_cost(cfg, ones, w);

    CostReport rep;
    rep.per_layer_flops = run.flops;
    rep.total_flops = run.total_flops;
    rep.per_layer_kv_entries = run.kv_entries;
    rep.total_kv_bytes = static_cast<double>(run.total_kv) * 2.0 *
                         static_cast<double>(cfg.d_model) * w.kv_bytes_per_element;
    rep.ratio_vs_baseline_flops = run.total_flops / base.total_flops;
    rep.ratio_vs_baseline_kv =
        static_cast<double>(run.total_kv) / static_cast<double>(base.total_kv);
    rep.ratio_vs_baseline_kv_vision =
        (base.vision_kv == 0) ? 1.0
                              : static_cast<double>(run.vision_kv) /
                                    static_cast<double>(base.vision_kv);
    return rep;
}

// Vision-cache retention of a schedule: sum of per-layer retained counts over
// the dense count. Equals mean retention up to the floor/minimum rounding.
inline double kv_ratio(const RatioSchedule& sched, size_t n_vision) {
    if (n_vision == 0)
        throw std::invalid_argument("kv_ratio: n_vision must be >= 1");
    uint64_t kept = 0;
    for (size_t l = 1; l <= sched.n_layers(); ++l)
        kept += tokens_retained(n_vision, sched.ratio(l));
    return static_cast<double>(kept) /
           static_cast<double>(sched.n_layers() * n_vision);
}

// 7B-class decoder preset used by the cost reports.
inline ModelConfig model_7b() {
    ModelConfig c;
    c.n_layers = 32;
    c.d_model = 4096;
    c.n_heads = 32;
    c.d_ff = 11008;
    c.vocab_size = 32000;
    c.max_seq = 4096;
    return c;
}

inline WorkloadSpec workload_7b() {
    WorkloadSpec w;
    w.n_vision = 2880;
    w.n_text_prompt = 32;
    w.n_decode = 16;
    w.kv_bytes_per_element = 2.0;
    return w;
}

inline std::string cost_report_to_csv(const CostReport& rep) {
    std::ostringstream os;
    os.precision(17);
    os << "# schema: costreport.v1\n";
    os << "layer,flops,kv_entries\n";
    for (size_t l = 0; l < rep.per_layer_flops.size(); ++l)
        os << (l + 1) << ',' << rep.per_layer_flops[l] << ',' << rep.per_layer_kv_entries[l]
           << '\n';
    return os.str();
}

inline std::string cost_report_table(const CostReport& rep) {
    std::ostringstream os;
    os.precision(6);
    os << "layer   flops           kv_entries\n";
    for (size_t l = 0; l < rep.per_layer_flops.size(); ++l) {
        os.width(5);
        os << (l + 1) << "   ";
        os.width(12);
        os << rep.per_layer_flops[l] << "    " << rep.per_layer_kv_entries[l] << '\n';
    }
    os << "total_flops            " << rep.total_flops << '\n';
    os << "total_flops_tera       " << rep.total_flops / 1e12 << '\n';
    os << "total_kv_bytes         " << rep.total_kv_bytes << '\n';
    os << "flops_ratio            " << rep.ratio_vs_baseline_flops << '\n';
    os << "kv_ratio_combined      " << rep.ratio_vs_baseline_kv << '\n';
    os << "kv_ratio_vision_only   " << rep.ratio_vs_baseline_kv_vision << '\n';
    return os.str();
}

}  // namespace pmod
