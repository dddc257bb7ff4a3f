// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "pmod/checkpoint.hpp"
#include "pmod/config.hpp"
#include "pmod/costmodel.hpp"
#include "pmod/experiments.hpp"
#include "pmod/halfrange.hpp"
#include "pmod/schedule.hpp"
#include "pmod/train.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_override;
    int64_t seed_override = -1;
    bool parallel = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "run configuration file");
    if (config_required) c->required();
    cmd->add_option("--out", opts.out_override, "output directory (overrides config)");
    cmd->add_option("--seed", opts.seed_override, "seed (overrides config)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_flag("--parallel", opts.parallel, "run independent training runs in threads");
}

pmod::RunConfig load_run(const CommonOpts& opts) {
    pmod::RunConfig rc = pmod::load_config_file(opts.config_path);
    if (!opts.out_override.empty()) rc.out_dir = opts.out_override;
    if (opts.seed_override >= 0) {
        rc.seed = static_cast<uint64_t>(opts.seed_override);
        rc.task.seed = rc.seed;
        rc.train.seed = rc.seed;
    }
    return rc;
}

std::string out_path(const pmod::RunConfig& rc, const std::string& name) {
    std::filesystem::create_directories(rc.out_dir);
    return (std::filesystem::path(rc.out_dir) / name).string();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << content;
    if (!out)
        throw std::runtime_error("short write to " + path);
    std::printf("wrote %s\n", path.c_str());
}

int cmd_schedule(const CommonOpts& opts) {
    const pmod::RunConfig rc = load_run(opts);
    const pmod::RatioSchedule s = pmod::build_schedule(rc.tied_schedule());
    write_file(out_path(rc, "schedule.csv"), pmod::schedule_to_csv(s));
    std::printf("schedule %s layers=%zu\n", pmod::to_string(s.config.variant), s.n_layers());
    std::printf("mean retention %.6f\n", pmod::mean_retention(s));
    return 0;
}

int cmd_cost(const CommonOpts& opts) {
    const pmod::RunConfig rc = load_run(opts);
    const pmod::RatioSchedule s = pmod::build_schedule(rc.tied_schedule());
    const pmod::CostReport rep = pmod::model_cost(rc.model, s, rc.workload);
    std::fputs(pmod::cost_report_table(rep).c_str(), stdout);
    write_file(out_path(rc, "cost.csv"), pmod::cost_report_to_csv(rep));
    return 0;
}

std::string loss_curve_csv(const pmod::TrainResult& tr) {
    std::ostringstream os;
    os.precision(17);
    os << "# schema: loss.v1\n";
    os << "step,loss\n";
    for (size_t i = 0; i < tr.loss_curve.size(); ++i)
        os << i << ',' << tr.loss_curve[i] << '\n';
    return os.str();
}

// Trains the configured model from the run seed. Shared by train/probe/trace
// so every artifact of one config+seed pair comes from the same weights.
pmod::TrainResult train_from_config(const pmod::RunConfig& rc) {
    pmod::TrainResult tr = pmod::train(pmod::init_params_for_run(rc.model, rc.seed), rc.pmod(),
                                       rc.task, rc.train);
    if (tr.diverged)
        throw std::runtime_error("training diverged at step " + std::to_string(tr.steps_run));
    return tr;
}

int cmd_train(const CommonOpts& opts) {
    const pmod::RunConfig rc = load_run(opts);
    const pmod::TrainResult tr = train_from_config(rc);
    pmod::save_checkpoint(out_path(rc, "model.ckpt"), tr.params);
    std::printf("wrote %s\n", out_path(rc, "model.ckpt").c_str());
    write_file(out_path(rc, "loss.csv"), loss_curve_csv(tr));
    const pmod::EvalResult ev =
        pmod::evaluate(tr.params, rc.pmod(), rc.task, rc.train.eval_samples);
    if (!tr.loss_curve.empty())
        std::printf("final loss %.6f\n", tr.loss_curve.back());
    std::printf("accuracy %.4f over %zu samples\n", ev.accuracy, rc.train.eval_samples);
    return 0;
}

int cmd_ablate(const CommonOpts& opts) {
    const pmod::RunConfig rc = load_run(opts);
    std::vector<pmod::AblationSpec> specs = pmod::reweight_ablation_specs(rc.model.n_layers);
    for (pmod::AblationSpec& s : pmod::schedule_ablation_specs(rc.model.n_layers))
        specs.push_back(std::move(s));

    std::vector<pmod::AblationRow> rows(specs.size());
    if (opts.parallel) {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(specs.size());
        workers.reserve(specs.size());
        for (size_t i = 0; i < specs.size(); ++i)
            workers.emplace_back([&, i] {
                try {
                    rows[i] = pmod::run_ablation(specs[i], rc.model, rc.task, rc.train);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            });
        for (std::thread& w : workers) w.join();
        for (const std::exception_ptr& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (size_t i = 0; i < specs.size(); ++i)
            rows[i] = pmod::run_ablation(specs[i], rc.model, rc.task, rc.train);
    }

    write_file(out_path(rc, "ablation.csv"), pmod::ablation_to_csv(rows));
    for (const pmod::AblationRow& r : rows)
        std::printf("%-18s accuracy %.4f auc %.4f retention %.4f flops %.4f\n", r.label.c_str(),
                    r.accuracy, r.router_auc, r.mean_retention, r.flops_ratio);
    return 0;
}

int cmd_probe(const CommonOpts& opts) {
    const pmod::RunConfig rc = load_run(opts);
    const pmod::TrainResult tr = train_from_config(rc);
    const std::vector<pmod::ProbePoint> points = pmod::probe_layer_groups(
        tr.params, rc.pmod(), rc.task, {0.5, 0.3, 0.1}, rc.train.eval_samples);
    write_file(out_path(rc, "probe.csv"), pmod::probe_to_csv(points));
    for (const pmod::ProbePoint& p : points)
        std::printf("%-8s ratio %.2f accuracy %.4f mean_kl %.6f\n", p.group.c_str(), p.ratio,
                    p.accuracy, p.mean_kl);
    return 0;
}

int cmd_trace(const CommonOpts& opts) {
    constexpr size_t kTraceSamples = 8;
    const pmod::RunConfig rc = load_run(opts);
    const pmod::TrainResult tr = train_from_config(rc);
    const pmod::TaskCodes codes = pmod::TaskCodes::make(rc.task, rc.model);
    const std::vector<pmod::SynthSample> samples =
        pmod::gen_batch(rc.task, rc.model, codes, pmod::kEvalSampleBase, kTraceSamples);
    const std::vector<pmod::TraceRecord> records =
        pmod::emit_trace(tr.params, rc.pmod(), samples);
    write_file(out_path(rc, "trace.csv"), pmod::trace_to_csv(records));
    std::printf("%zu records over %zu samples\n", records.size(), kTraceSamples);
    return 0;
}

int cmd_overflow_demo() {
    const size_t layers = 32;
    struct Scenario {
        const char* name;
        double factor;
    };
    // Worst-case per-layer growth of a residual reweighted by (1 + w):
    // unnormalized weights admit factor 2 per layer already at w = 1, the
    // tanh bound at alpha = 1 admits the same, and alpha = 0.2 caps growth
    // at 1.2 per layer.
    const Scenario scenarios[] = {
        {"no-normalization (factor 2)", 2.0},
        {"tanh alpha=1.0 worst case (factor 2)", 2.0},
        {"tanh alpha=0.2 worst case (factor 1.2)", 1.2},
    };
    for (const Scenario& sc : scenarios) {
        const std::vector<double> factors(layers, sc.factor);
        const pmod::ScalingSimResult half = pmod::simulate_repeated_scaling(1.0, factors, true);
        const pmod::ScalingSimResult full = pmod::simulate_repeated_scaling(1.0, factors, false);
        if (half.overflowed)
            std::printf("%-38s 16-bit: overflow at layer %zu; 64-bit final %.6g\n", sc.name,
                        half.overflow_layer, full.final_magnitude);
        else
            std::printf("%-38s 16-bit: stable through %zu layers, final %.6g\n", sc.name, layers,
                        half.final_magnitude);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture-of-depths token routing: schedules, cost model, training harness"};
    app.require_subcommand(1);

    CommonOpts schedule_opts, cost_opts, train_opts, ablate_opts, probe_opts, trace_opts;
    auto* sched = app.add_subcommand("schedule", "emit per-layer retention ratios");
    add_common(sched, schedule_opts);
    auto* cost = app.add_subcommand("cost", "analytic FLOPs and KV-cache report");
    add_common(cost, cost_opts);
    auto* train = app.add_subcommand("train", "train the configured model");
    add_common(train, train_opts);
    auto* ablate = app.add_subcommand("ablate", "reweighting and schedule ablation tables");
    add_common(ablate, ablate_opts);
    auto* probe = app.add_subcommand("probe", "layer-group sensitivity probe");
    add_common(probe, probe_opts);
    auto* trace = app.add_subcommand("trace", "per-token routing decisions");
    add_common(trace, trace_opts);
    auto* overflow = app.add_subcommand("overflow-demo", "16-bit range growth simulation");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sched->parsed()) return cmd_schedule(schedule_opts);
        if (cost->parsed()) return cmd_cost(cost_opts);
        if (train->parsed()) return cmd_train(train_opts);
        if (ablate->parsed()) return cmd_ablate(ablate_opts);
        if (probe->parsed()) return cmd_probe(probe_opts);
        if (trace->parsed()) return cmd_trace(trace_opts);
        if (overflow->parsed()) return cmd_overflow_demo();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
