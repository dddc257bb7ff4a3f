// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmod/model.hpp"
#include "pmod/net.hpp"
#include "pmod/rng.hpp"
#include "pmod/synth.hpp"

namespace pmod {

struct TrainConfig {
    size_t steps = 400;
    size_t batch = 32;
    double lr = 0.05;
    double momentum = 0.9;
    size_t eval_samples = 256;
    uint64_t seed = 1;

    void validate() const {
        if (batch < 1)
            throw std::invalid_argument("TrainConfig: batch must be >= 1");
        if (lr <= 0.0 || momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("TrainConfig: bad lr/momentum");
    }

    // Step-size policy: full lr for the first half of the run, then linear
    // decay to a tenth of it. The circuit forms at full step size and the
    // decay settles it instead of bouncing around the optimum.
    double lr_at(size_t step) const {
        const size_t s0 = steps / 2;
        if (step < s0 || steps == s0)
            return lr;
        const double frac =
            static_cast<double>(step - s0) / static_cast<double>(steps - s0);
        return lr * (1.0 - 0.9 * frac);
    }
};

struct TrainResult {
    Params params;
    std::vector<double> loss_curve;  // one mean loss per step
    bool diverged = false;
    size_t steps_run = 0;
};

// Evaluation samples draw from an index range disjoint from training
// (training consumes indices from 0 upward, one batch per step).
inline constexpr uint64_t kEvalSampleBase = uint64_t{1} << 32;

// Parameter draw for a training run. The run seed is mixed with a fixed tag
// so the init stream stays decorrelated from the task's sample stream, which
// consumes the raw seed.
inline Params init_params_for_run(const ModelConfig& cfg, uint64_t run_seed) {
    return Params::init(cfg, Rng::mix(run_seed, 0x496e6974));
}

// Momentum-SGD training on freshly generated task samples. Deterministic in
// (model seed inside `params`, task seed, TrainConfig). Divergence (non-finite
// loss) stops the run and is reported, not thrown.
inline TrainResult train(Params params, const PmodConfig& pc, const SynthTask& task,
                         const TrainConfig& tc) {
    tc.validate();
    const ModelConfig& cfg = params.cfg;
    task.validate(cfg);
    pc.validate(cfg);
    const TaskCodes codes = TaskCodes::make(task, cfg);

    TrainResult res;
    Params grads = Params::zeros(cfg);
    Params vel = Params::zeros(cfg);
    const double inv_batch = 1.0 / static_cast<double>(tc.batch);

    // Tensors of all three parameter sets align by traversal order.
    std::vector<Matrix*> p_t, g_t, v_t;
    params.for_each_tensor([&](const std::string&, Matrix& m) { p_t.push_back(&m); });
    grads.for_each_tensor([&](const std::string&, Matrix& m) { g_t.push_back(&m); });
    vel.for_each_tensor([&](const std::string&, Matrix& m) { v_t.push_back(&m); });

    for (size_t step = 0; step < tc.steps; ++step) {
        double step_loss = 0.0;
        for (size_t b = 0; b < tc.batch; ++b) {
            const SynthSample s =
                gen_sample(task, cfg, codes, static_cast<uint64_t>(step) * tc.batch + b);
            NetActs acts;
            const Matrix logits = net_forward(params, pc, s.seq, acts, /*check_finite=*/false);
            LossResult ls = cross_entropy_answers(logits, {s.query_row}, {s.label});
            step_loss += ls.loss * inv_batch;
            ls.dlogits *= inv_batch;
            net_backward(params, acts, ls.dlogits, grads);
        }
        res.loss_curve.push_back(step_loss);
        res.steps_run = step + 1;
        if (!std::isfinite(step_loss)) {
            res.diverged = true;
            break;
        }
        const double lr = tc.lr_at(step);
        for (size_t t = 0; t < p_t.size(); ++t) {
            (*v_t[t]) *= tc.momentum;
            v_t[t]->axpy(-lr, *g_t[t]);
            (*p_t[t]) += *v_t[t];
            g_t[t]->fill(0.0);
        }
    }
    res.params = std::move(params);
    return res;
}

// Area under the ROC curve via the rank statistic, average ranks on ties.
inline double auc_score(const std::vector<double>& positives,
                        const std::vector<double>& negatives) {
    if (positives.empty() || negatives.empty())
        throw std::invalid_argument("auc_score: both classes must be non-empty");
    struct Entry {
        double score;
        bool pos;
    };
    std::vector<Entry> all;
    all.reserve(positives.size() + negatives.size());
    for (double s : positives)
        all.push_back({s, true});
    for (double s : negatives)
        all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score)
            ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (size_t t = i; t < j; ++t)
            if (all[t].pos)
                rank_sum_pos += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(positives.size());
    const double nn = static_cast<double>(negatives.size());
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

struct EvalResult {
    double accuracy = 0.0;
    // Signal-vs-noise separation of raw router weights, per layer; -1 for
    // layers that do not route.
    std::vector<double> layer_auc;
};

inline EvalResult evaluate(const Params& params, const PmodConfig& pc, const SynthTask& task,
                           size_t n_samples, uint64_t sample_base = kEvalSampleBase) {
    const ModelConfig& cfg = params.cfg;
    const TaskCodes codes = TaskCodes::make(task, cfg);
    EvalResult res;
    std::vector<std::vector<double>> sig(cfg.n_layers), noi(cfg.n_layers);
    size_t correct = 0;
    for (size_t s = 0; s < n_samples; ++s) {
        const SynthSample sample = gen_sample(task, cfg, codes, sample_base + s);
        NetActs acts;
        const Matrix logits = net_forward(params, pc, sample.seq, acts, /*check_finite=*/false);
        if (argmax_token(logits.row(sample.query_row)) == sample.label)
            ++correct;
        for (size_t l = 0; l < cfg.n_layers; ++l) {
            if (!acts.layers[l].used_mod || !acts.layers[l].mod.routed)
                continue;
            const RouterState& rs = acts.layers[l].mod.router;
            for (size_t i = 0; i < rs.raw_weights.size(); ++i)
                (sample.is_signal[i] ? sig[l] : noi[l]).push_back(rs.raw_weights[i]);
        }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(n_samples);
    res.layer_auc.assign(cfg.n_layers, -1.0);
    for (size_t l = 0; l < cfg.n_layers; ++l)
        if (!sig[l].empty() && !noi[l].empty())
            res.layer_auc[l] = auc_score(sig[l], noi[l]);
    return res;
}

// Mean KL divergence KL(p || q) between answer-row softmax distributions of
// two logit matrices over the same samples.
inline double mean_answer_kl(const Matrix& logits_p, const Matrix& logits_q,
                             const std::vector<size_t>& answer_rows) {
    if (!logits_p.same_shape(logits_q))
        throw std::invalid_argument("mean_answer_kl: shape mismatch");
    if (answer_rows.empty())
        throw std::invalid_argument("mean_answer_kl: no answer rows");
    double total = 0.0;
    for (size_t r : answer_rows) {
        std::span<const double> pr = logits_p.row(r), qr = logits_q.row(r);
        double pmax = pr[0], qmax = qr[0];
        for (double v : pr)
            pmax = std::max(pmax, v);
        for (double v : qr)
            qmax = std::max(qmax, v);
        double psum = 0.0, qsum = 0.0;
        for (size_t j = 0; j < pr.size(); ++j) {
            psum += std::exp(pr[j] - pmax);
            qsum += std::exp(qr[j] - qmax);
        }
        const double plse = pmax + std::log(psum), qlse = qmax + std::log(qsum);
        double kl = 0.0;
        for (size_t j = 0; j < pr.size(); ++j) {
            const double logp = pr[j] - plse;
            kl += std::exp(logp) * (logp - (qr[j] - qlse));
        }
        total += kl;
    }
    return total / static_cast<double>(answer_rows.size());
}

}  // namespace pmod
