// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmod/costmodel.hpp"
#include "pmod/net.hpp"
#include "pmod/schedule.hpp"
#include "pmod/synth.hpp"
#include "pmod/train.hpp"

namespace pmod {

// Mean retention at which the ablation rows are compared. Every row's
// schedule must land within kMatchedTolerance of it. The interleaved
// schedule fixes the attainable floor: alternating full layers with low
// ratio r gives (1 + r)/2, so with r = 0.08 the common target is 0.54.
inline constexpr double kAblationRetention = 0.54;
inline constexpr double kMatchedTolerance = 0.01;

struct AblationRow {
    std::string label;
    double accuracy = 0.0;
    double router_auc = -1.0;  // deep-group mean; -1 when no deep layer routes
    double mean_retention = 0.0;
    double flops_ratio = 1.0;
};

// Layer index groups (0-based) splitting the stack into shallow / middle /
// deep. Near-equal sizes, remainder to the earlier groups (same partition
// rule as the stepped schedule): 8 layers split 3/3/2.
inline std::vector<std::vector<size_t>> layer_groups(size_t n_layers) {
    if (n_layers < 3)
        throw std::invalid_argument("layer_groups: need at least 3 layers");
    const size_t base = n_layers / 3, extra = n_layers % 3;
    std::vector<std::vector<size_t>> groups(3);
    size_t next = 0;
    for (size_t g = 0; g < 3; ++g) {
        const size_t len = base + (g < extra ? 1 : 0);
        for (size_t i = 0; i < len; ++i)
            groups[g].push_back(next++);
    }
    return groups;
}

namespace detail {

inline double deep_group_auc(const EvalResult& ev, size_t n_layers) {
    const std::vector<size_t> deep = layer_groups(n_layers)[2];
    double sum = 0.0;
    size_t count = 0;
    for (size_t l : deep)
        if (ev.layer_auc[l] >= 0.0) {
            sum += ev.layer_auc[l];
            ++count;
        }
    return count == 0 ? -1.0 : sum / static_cast<double>(count);
}

inline WorkloadSpec task_workload(const SynthTask& task) {
    WorkloadSpec w;
    w.n_vision = task.n_vision;
    w.n_text_prompt = 1;
    w.n_decode = 0;
    return w;
}

}  // namespace detail

// One training run of an ablation table: a labeled schedule/mode pair.
struct AblationSpec {
    std::string label;
    RatioSchedule sched;
    ReweightMode mode = ReweightMode::TanhNormStr;
};

// Runs one ablation row: train at the spec's schedule/mode, evaluate, and
// attach the deep-group router AUC and the analytic FLOPs ratio.
inline AblationRow run_ablation(const AblationSpec& spec, const ModelConfig& cfg,
                                const SynthTask& task, const TrainConfig& tc) {
    const double mean = mean_retention(spec.sched);
    if (std::fabs(mean - kAblationRetention) > kMatchedTolerance)
        throw std::logic_error("ablation: schedule '" + spec.label +
                               "' misses the matched retention");
    const PmodConfig pc = PmodConfig::from_schedule(spec.sched, spec.mode);
    TrainResult tr = train(init_params_for_run(cfg, tc.seed), pc, task, tc);
    if (tr.diverged)
        throw std::runtime_error("ablation: training diverged for '" + spec.label + "'");
    const EvalResult ev = evaluate(tr.params, pc, task, tc.eval_samples);
    AblationRow row;
    row.label = spec.label;
    row.accuracy = ev.accuracy;
    row.router_auc = detail::deep_group_auc(ev, cfg.n_layers);
    row.mean_retention = mean;
    row.flops_ratio =
        model_cost(cfg, spec.sched, detail::task_workload(task)).ratio_vs_baseline_flops;
    return row;
}

// The five schedule shapes compared in the schedule ablation, all tuned to
// the matched mean retention.
inline RatioSchedule ablation_schedule(const std::string& name, size_t n_layers) {
    ScheduleConfig sc;
    sc.n_layers = n_layers;
    if (name == "constant") {
        sc.variant = ScheduleVariant::Constant;
        sc.constant_ratio = kAblationRetention;
    } else if (name == "interleaved") {
        sc.variant = ScheduleVariant::Interleaved;
        sc.interleave_low = 2.0 * kAblationRetention - 1.0;  // (1 + low)/2 = target
    } else if (name == "stepped") {
        // (3*0.9 + 3*b + 2*0.1) / 8 = target  ->  b = (8*target - 2.9) / 3
        sc.variant = ScheduleVariant::Stepped;
        sc.step_levels = {0.9, (8.0 * kAblationRetention - 2.9) / 3.0, 0.1};
        if (n_layers != 8)
            throw std::invalid_argument("ablation_schedule: stepped levels tuned for 8 layers");
    } else if (name == "linear") {
        // Affine ramp: mean is the endpoint midpoint for any layer count.
        sc.variant = ScheduleVariant::Linear;
        sc.linear_start = 0.98;
        sc.linear_end = 2.0 * kAblationRetention - sc.linear_start;
        sc.min_ratio = 0.0;
        sc.max_ratio = 1.0;
    } else if (name == "cosine") {
        const ThresholdSearchResult r =
            search_thresholds(kAblationRetention, 0.5, n_layers, kMatchedTolerance);
        if (!r.within_tolerance)
            throw std::runtime_error("ablation_schedule: cosine search failed");
        sc = r.config;
    } else {
        throw std::invalid_argument("ablation_schedule: unknown name " + name);
    }
    return build_schedule(sc);
}

// Reweighting ablation: the three reweighting modes on the constant matched
// schedule, plus the full method (TanhNormStr on the decaying cosine), all at
// the same mean retention and step budget.
inline std::vector<AblationSpec> reweight_ablation_specs(size_t n_layers) {
    const RatioSchedule constant = ablation_schedule("constant", n_layers);
    const RatioSchedule cosine = ablation_schedule("cosine", n_layers);
    return {{"vanilla_mod", constant, ReweightMode::VanillaMod},
            {"tanh_norm", constant, ReweightMode::TanhNorm},
            {"tanh_norm_str", constant, ReweightMode::TanhNormStr},
            {"tanh_norm_str_prd", cosine, ReweightMode::TanhNormStr}};
}

// Schedule ablation: five retention shapes at matched mean retention, all
// trained with the full reweighting mode.
inline std::vector<AblationSpec> schedule_ablation_specs(size_t n_layers) {
    std::vector<AblationSpec> specs;
    for (const char* name : {"constant", "interleaved", "stepped", "linear", "cosine"})
        specs.push_back({name, ablation_schedule(name, n_layers), ReweightMode::TanhNormStr});
    return specs;
}

inline std::vector<AblationRow> run_ablation_specs(const std::vector<AblationSpec>& specs,
                                                   const ModelConfig& cfg,
                                                   const SynthTask& task,
                                                   const TrainConfig& tc) {
    std::vector<AblationRow> rows;
    rows.reserve(specs.size());
    for (const AblationSpec& spec : specs)
        rows.push_back(run_ablation(spec, cfg, task, tc));
    return rows;
}

inline std::vector<AblationRow> run_reweight_ablation(const ModelConfig& cfg,
                                                      const SynthTask& task,
                                                      const TrainConfig& tc) {
    return run_ablation_specs(reweight_ablation_specs(cfg.n_layers), cfg, task, tc);
}

inline std::vector<AblationRow> run_schedule_ablation(const ModelConfig& cfg,
                                                      const SynthTask& task,
                                                      const TrainConfig& tc) {
    return run_ablation_specs(schedule_ablation_specs(cfg.n_layers), cfg, task, tc);
}

inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "# schema: ablation.v1\n";
    os << "label,accuracy,router_auc,mean_retention,flops_ratio\n";
    for (const AblationRow& r : rows)
        os << r.label << ',' << r.accuracy << ',' << r.router_auc << ',' << r.mean_retention
           << ',' << r.flops_ratio << '\n';
    return os.str();
}

struct ProbePoint {
    std::string group;  // "shallow" | "middle" | "deep"
    double ratio = 0.0;
    double accuracy = 0.0;
    double mean_kl = 0.0;
};

inline const char* group_name(size_t g) {
    static const char* names[3] = {"shallow", "middle", "deep"};
    return names[g];
}

// Layer-group redundancy probe: train-time retention stays fixed; at
// inference, one group at a time is swept to a lower ratio and the logit
// distribution shift against the unmodified model is measured on the same
// samples. No retraining.
inline std::vector<ProbePoint> probe_layer_groups(const Params& params, const PmodConfig& pc,
                                                  const SynthTask& task,
                                                  const std::vector<double>& probe_ratios,
                                                  size_t n_samples,
                                                  uint64_t sample_base = kEvalSampleBase) {
    const ModelConfig& cfg = params.cfg;
    const TaskCodes codes = TaskCodes::make(task, cfg);
    const std::vector<std::vector<size_t>> groups = layer_groups(cfg.n_layers);

    std::vector<SynthSample> samples;
    samples.reserve(n_samples);
    for (size_t s = 0; s < n_samples; ++s)
        samples.push_back(gen_sample(task, cfg, codes, sample_base + s));

    std::vector<Matrix> base_logits;
    base_logits.reserve(n_samples);
    for (const SynthSample& s : samples) {
        NetActs acts;
        base_logits.push_back(net_forward(params, pc, s.seq, acts, /*check_finite=*/false));
    }

    std::vector<ProbePoint> points;
    for (size_t g = 0; g < 3; ++g) {
        for (double r : probe_ratios) {
            PmodConfig probe = pc;
            for (size_t l : groups[g])
                probe.layers[l] = LayerSpec{r < 1.0, r};
            ProbePoint pt;
            pt.group = group_name(g);
            pt.ratio = r;
            double kl = 0.0;
            size_t correct = 0;
            for (size_t i = 0; i < n_samples; ++i) {
                NetActs acts;
                const Matrix logits =
                    net_forward(params, probe, samples[i].seq, acts, /*check_finite=*/false);
                kl += mean_answer_kl(base_logits[i], logits, {samples[i].query_row});
                if (argmax_token(logits.row(samples[i].query_row)) == samples[i].label)
                    ++correct;
            }
            pt.mean_kl = kl / static_cast<double>(n_samples);
            pt.accuracy = static_cast<double>(correct) / static_cast<double>(n_samples);
            points.push_back(pt);
        }
    }
    return points;
}

inline std::string probe_to_csv(const std::vector<ProbePoint>& points) {
    std::ostringstream os;
    os.precision(17);
    os << "# schema: probe.v1\n";
    os << "group,ratio,accuracy,mean_kl\n";
    for (const ProbePoint& p : points)
        os << p.group << ',' << p.ratio << ',' << p.accuracy << ',' << p.mean_kl << '\n';
    return os.str();
}

struct TraceRecord {
    int sample_id = 0;
    size_t layer = 0;  // 1-based
    size_t token_index = 0;
    bool selected = false;
    double normalized_weight = 0.0;
};

// Per-token routing decisions of every selective layer on the given samples;
// one record per (sample, routing layer, vision token).
inline std::vector<TraceRecord> emit_trace(const Params& params, const PmodConfig& pc,
                                           const std::vector<SynthSample>& samples) {
    std::vector<TraceRecord> records;
    for (const SynthSample& s : samples) {
        NetActs acts;
        net_forward(params, pc, s.seq, acts, /*check_finite=*/false);
        for (size_t l = 0; l < params.cfg.n_layers; ++l) {
            if (!acts.layers[l].used_mod || !acts.layers[l].mod.routed)
                continue;
            const RouterState& rs = acts.layers[l].mod.router;
            std::vector<char> sel(rs.raw_weights.size(), 0);
            for (size_t idx : rs.selected)
                sel[idx] = 1;
            for (size_t i = 0; i < rs.raw_weights.size(); ++i) {
                TraceRecord rec;
                rec.sample_id = s.seq.batch_id;
                rec.layer = l + 1;
                rec.token_index = i;
                rec.selected = sel[i] != 0;
                rec.normalized_weight = rs.normalized[i];
                records.push_back(rec);
            }
        }
    }
    return records;
}

inline std::string trace_to_csv(const std::vector<TraceRecord>& records) {
    std::ostringstream os;
    os.precision(17);
    os << "# schema: trace.v1\n";
    os << "sample,layer,token_index,selected,normalized_weight\n";
    for (const TraceRecord& r : records)
        os << r.sample_id << ',' << r.layer << ',' << r.token_index << ',' << (r.selected ? 1 : 0)
           << ',' << r.normalized_weight << '\n';
    return os.str();
}

}  // namespace pmod
