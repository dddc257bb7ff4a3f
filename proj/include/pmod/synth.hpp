// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pmod/matrix.hpp"
#include "pmod/model.hpp"
#include "pmod/rng.hpp"

namespace pmod {

// Key-value retrieval over a noisy vision prefix. Each sample plants
// n_signal "signal" tokens — a key code in the first half of the embedding,
// a value code in the second half, plus a shared marker direction — among
// isotropic noise tokens, followed by one text query token naming a planted
// key. The queried pair is echoed on n_repeat signal tokens (the remaining
// signal tokens carry distinct distractor pairs), which keeps the retrieval
// gradient first-order so plain SGD can find the circuit. The label is the
// queried value's token id; signal and noise are linearly separable through
// the marker.
struct SynthTask {
    size_t n_vision = 64;
    size_t n_signal = 8;
    size_t n_repeat = 4;  // copies of the queried pair among the signal tokens
    size_t n_keys = 16;
    double noise_scale = 1.0;  // multiplier on the norm-matched noise stddev
    uint64_t seed = 1;

    // Distinct planted pairs per sample: the queried one plus the distractors.
    size_t n_distinct() const { return n_signal - n_repeat + 1; }

    void validate(const ModelConfig& cfg) const {
        if (n_signal < 1 || n_signal > n_vision)
            throw std::invalid_argument("SynthTask: need 1 <= n_signal <= n_vision");
        if (n_repeat < 1 || n_repeat > n_signal)
            throw std::invalid_argument("SynthTask: need 1 <= n_repeat <= n_signal");
        if (n_keys < n_distinct())
            throw std::invalid_argument("SynthTask: need n_keys >= n_signal - n_repeat + 1");
        if (noise_scale <= 0.0)
            throw std::invalid_argument("SynthTask: noise_scale must be positive");
        if (cfg.d_model % 2 != 0)
            throw std::invalid_argument("SynthTask: d_model must be even");
        if (cfg.vocab_size < 2 || cfg.vocab_size < n_distinct())
            throw std::invalid_argument("SynthTask: vocab_size must cover the distinct pairs");
        // Codes are orthonormal within each embedding half, and the two
        // marker directions share the key half with the key codes.
        if (task_half_dims(cfg) < n_keys + 2)
            throw std::invalid_argument("SynthTask: d_model/2 must be >= n_keys + 2");
        if (task_half_dims(cfg) < cfg.vocab_size)
            throw std::invalid_argument("SynthTask: d_model/2 must be >= vocab_size");
    }

    static size_t task_half_dims(const ModelConfig& cfg) { return cfg.d_model / 2; }
};

// Fixed per-task codebooks, derived deterministically from the task seed.
// Key codes plus the two marker directions form an orthonormal family in the
// first d/2 coordinates; value codes are orthonormal in the last d/2. The
// exact orthogonality makes the lookup oracle deterministic and keeps code
// cross-talk out of the training signal.
struct TaskCodes {
    Matrix key_codes;    // n_keys x d, support on the first d/2 coordinates
    Matrix value_codes;  // vocab x d, support on the last d/2 coordinates
    std::vector<double> marker;  // added to every signal token (key half)
    std::vector<double> query_marker;

    // Random orthonormal rows via Gram-Schmidt with re-orthogonalization.
    static std::vector<std::vector<double>> orthonormal_rows(Rng& rng, size_t count,
                                                             size_t dim) {
        std::vector<std::vector<double>> rows;
        rows.reserve(count);
        while (rows.size() < count) {
            std::vector<double> v(dim);
            for (double& x : v) x = rng.normal();
            for (int pass = 0; pass < 2; ++pass)
                for (const auto& b : rows) {
                    double dot = 0.0;
                    for (size_t c = 0; c < dim; ++c) dot += v[c] * b[c];
                    for (size_t c = 0; c < dim; ++c) v[c] -= dot * b[c];
                }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            if (norm < 1e-12) continue;  // degenerate draw, retry
            norm = 1.0 / std::sqrt(norm);
            for (double& x : v) x *= norm;
            rows.push_back(std::move(v));
        }
        return rows;
    }

    static TaskCodes make(const SynthTask& task, const ModelConfig& cfg) {
        task.validate(cfg);
        const size_t d = cfg.d_model, half = d / 2;
        TaskCodes tc;
        Rng rng(Rng::mix(task.seed, 0x436f6465));

        auto key_half = orthonormal_rows(rng, task.n_keys + 2, half);
        tc.key_codes = Matrix(task.n_keys, d);
        for (size_t k = 0; k < task.n_keys; ++k)
            for (size_t c = 0; c < half; ++c)
                tc.key_codes(k, c) = key_half[k][c];
        tc.marker.assign(d, 0.0);
        tc.query_marker.assign(d, 0.0);
        for (size_t c = 0; c < half; ++c) {
            tc.marker[c] = key_half[task.n_keys][c];
            tc.query_marker[c] = key_half[task.n_keys + 1][c];
        }

        auto value_half = orthonormal_rows(rng, cfg.vocab_size, half);
        tc.value_codes = Matrix(cfg.vocab_size, d);
        for (size_t v = 0; v < cfg.vocab_size; ++v)
            for (size_t c = 0; c < half; ++c)
                tc.value_codes(v, half + c) = value_half[v][c];
        return tc;
    }
};

struct SynthSample {
    TokenSequence seq;               // n_vision + 1 tokens, query last
    int label = 0;                   // value token id of the queried key
    std::vector<char> is_signal;     // per vision token
    std::vector<int> planted_key;    // -1 for noise tokens
    size_t query_row = 0;            // answer row (the text token)
};

// One sample, deterministic in (task seed, codebooks, sample index).
inline SynthSample gen_sample(const SynthTask& task, const ModelConfig& cfg,
                              const TaskCodes& codes, uint64_t sample_index) {
    const size_t d = cfg.d_model;
    Rng rng(Rng::mix(Rng::mix(task.seed, 0x53616d70), sample_index));

    // Planted pairs: n_distinct distinct keys with distinct values; keys[0]
    // is the queried pair, echoed on n_repeat signal tokens.
    const size_t n_distinct = task.n_distinct();
    std::vector<size_t> keys(task.n_keys);
    std::iota(keys.begin(), keys.end(), size_t{0});
    for (size_t i = 0; i < n_distinct; ++i) {
        const size_t j = i + rng.uniform_below(task.n_keys - i);
        std::swap(keys[i], keys[j]);
    }
    std::vector<int> values(cfg.vocab_size);
    std::iota(values.begin(), values.end(), 0);
    for (size_t i = 0; i < n_distinct; ++i) {
        const size_t j = i + rng.uniform_below(cfg.vocab_size - i);
        std::swap(values[i], values[j]);
    }

    // Pair index per signal token: n_repeat echoes of pair 0, one token for
    // each distractor pair, in shuffled order.
    std::vector<size_t> pair_of(task.n_signal, 0);
    for (size_t i = task.n_repeat; i < task.n_signal; ++i)
        pair_of[i] = 1 + (i - task.n_repeat);
    for (size_t i = 0; i + 1 < task.n_signal; ++i) {
        const size_t j = i + rng.uniform_below(task.n_signal - i);
        std::swap(pair_of[i], pair_of[j]);
    }

    // Signal slots: n_signal distinct positions in the vision prefix.
    std::vector<size_t> slots(task.n_vision);
    std::iota(slots.begin(), slots.end(), size_t{0});
    for (size_t i = 0; i < task.n_signal; ++i) {
        const size_t j = i + rng.uniform_below(task.n_vision - i);
        std::swap(slots[i], slots[j]);
    }

    SynthSample s;
    s.is_signal.assign(task.n_vision, 0);
    s.planted_key.assign(task.n_vision, -1);
    Matrix emb(task.n_vision + 1, d);

    // Norm-matched noise: a signal token is key + value + marker, three
    // roughly unit-norm parts, so sigma^2 = 3/d matches expected norms.
    const double noise_std = task.noise_scale * std::sqrt(3.0 / static_cast<double>(d));
    for (size_t i = 0; i < task.n_vision; ++i)
        for (size_t c = 0; c < d; ++c)
            emb(i, c) = rng.normal() * noise_std;

    for (size_t i = 0; i < task.n_signal; ++i) {
        const size_t row = slots[i];
        const size_t pair = pair_of[i];
        s.is_signal[row] = 1;
        s.planted_key[row] = static_cast<int>(keys[pair]);
        for (size_t c = 0; c < d; ++c)
            emb(row, c) = codes.key_codes(keys[pair], c) +
                          codes.value_codes(static_cast<size_t>(values[pair]), c) +
                          codes.marker[c];
    }

    // Query: text token carrying the key code of the echoed pair.
    s.label = values[0];
    s.query_row = task.n_vision;
    for (size_t c = 0; c < d; ++c)
        emb(s.query_row, c) = codes.query_marker[c] + codes.key_codes(keys[0], c);

    s.seq = TokenSequence::make(std::move(emb), task.n_vision,
                                static_cast<int>(sample_index));
    return s;
}

inline std::vector<SynthSample> gen_batch(const SynthTask& task, const ModelConfig& cfg,
                                          const TaskCodes& codes, uint64_t first_index,
                                          size_t count) {
    std::vector<SynthSample> batch;
    batch.reserve(count);
    for (size_t i = 0; i < count; ++i)
        batch.push_back(gen_sample(task, cfg, codes, first_index + i));
    return batch;
}

// Reference solver: nearest key code for the query, nearest signal token for
// that key, nearest value code on that token. Validates that every query is
// answerable from the sample alone.
inline int lookup_oracle(const SynthSample& s, const ModelConfig& cfg, const TaskCodes& codes,
                         size_t n_keys) {
    const size_t d = cfg.d_model, half = d / 2;
    std::span<const double> q = s.seq.embeddings.row(s.query_row);

    // Which key does the query name?
    size_t best_key = 0;
    double best_dot = -1e300;
    for (size_t k = 0; k < n_keys; ++k) {
        double acc = 0.0;
        for (size_t c = 0; c < half; ++c)
            acc += q[c] * codes.key_codes(k, c);
        if (acc > best_dot) {
            best_dot = acc;
            best_key = k;
        }
    }
    // Which signal token matches that key best?
    size_t best_row = 0;
    best_dot = -1e300;
    for (size_t i = 0; i < s.seq.n_vision; ++i) {
        if (!s.is_signal[i]) continue;
        double acc = 0.0;
        for (size_t c = 0; c < half; ++c)
            acc += s.seq.embeddings(i, c) * codes.key_codes(best_key, c);
        if (acc > best_dot) {
            best_dot = acc;
            best_row = i;
        }
    }
    // Decode its value half.
    int best_val = 0;
    best_dot = -1e300;
    for (size_t v = 0; v < cfg.vocab_size; ++v) {
        double acc = 0.0;
        for (size_t c = half; c < d; ++c)
            acc += s.seq.embeddings(best_row, c) * codes.value_codes(v, c);
        if (acc > best_dot) {
            best_dot = acc;
            best_val = static_cast<int>(v);
        }
    }
    return best_val;
}

}  // namespace pmod
