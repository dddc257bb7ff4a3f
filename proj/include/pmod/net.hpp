// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pmod/matrix.hpp"
#include "pmod/mod_layer.hpp"
#include "pmod/model.hpp"
#include "pmod/ops.hpp"
#include "pmod/schedule.hpp"

namespace pmod {

struct LayerSpec {
    bool use_mod = false;
    double ratio = 1.0;  // retention ratio when use_mod
};

// Which layers select tokens and at what retention, plus the reweighting mode.
struct PmodConfig {
    ReweightMode mode = ReweightMode::TanhNormStr;
    double alpha = kDefaultTanhAlpha;
    std::vector<LayerSpec> layers;

    static PmodConfig vanilla(size_t n_layers) {
        PmodConfig pc;
        pc.layers.assign(n_layers, LayerSpec{});
        return pc;
    }

    // A clamped ratio of exactly 1 turns the layer back into a vanilla layer:
    // no routing, no reweighting, no router cost.
    static PmodConfig from_schedule(const RatioSchedule& sched,
                                    ReweightMode mode = ReweightMode::TanhNormStr,
                                    double alpha = kDefaultTanhAlpha) {
        PmodConfig pc;
        pc.mode = mode;
        pc.alpha = alpha;
        pc.layers.resize(sched.n_layers());
        for (size_t l = 0; l < sched.n_layers(); ++l) {
            const double r = sched.ratio(l + 1);
            pc.layers[l] = LayerSpec{r < 1.0, r};
        }
        return pc;
    }

    // Every layer routes, even at ratio 1 (all tokens selected but still
    // reweighted). Used by identity and equivalence checks.
    static PmodConfig forced(size_t n_layers, double ratio,
                             ReweightMode mode = ReweightMode::TanhNormStr,
                             double alpha = kDefaultTanhAlpha) {
        PmodConfig pc;
        pc.mode = mode;
        pc.alpha = alpha;
        pc.layers.assign(n_layers, LayerSpec{true, ratio});
        return pc;
    }

    void validate(const ModelConfig& cfg) const {
        if (layers.size() != cfg.n_layers)
            throw std::invalid_argument("PmodConfig: layer count mismatch");
        for (const auto& l : layers)
            if (l.ratio <= 0.0 || l.ratio > 1.0)
                throw std::invalid_argument("PmodConfig: ratio must lie in (0, 1]");
        if (alpha <= 0.0)
            throw std::invalid_argument("PmodConfig: alpha must be positive");
    }
};

struct NetLayerRecord {
    bool used_mod = false;
    ModLayerActs mod;
    LayerActs plain;
    uint64_t macs = 0;  // multiply-accumulate ops observed in this layer's forward
};

struct NetActs {
    size_t n_vision = 0;
    std::vector<size_t> positions;
    std::vector<NetLayerRecord> layers;
    Matrix stack_out;       // n x d, after the last block
    Matrix final_norm_out;  // n x d
    std::vector<double> final_norm_inv;
    Matrix logits;          // n x vocab
    uint64_t total_macs = 0;
};

// Full-network forward: embedding rows are taken as given in `seq`, then the
// layer stack (selective or vanilla per PmodConfig), final rmsnorm, LM head.
// Records per-layer multiply-accumulate counts from the instrumented kernels.
inline Matrix net_forward(const Params& p, const PmodConfig& pc, const TokenSequence& seq,
                          NetActs& acts, bool check_finite = true) {
    const ModelConfig& cfg = p.cfg;
    pc.validate(cfg);
    seq.validate();
    if (seq.length() > cfg.max_seq)
        throw std::invalid_argument("net_forward: sequence exceeds max_seq");
    if (check_finite && !p.all_finite())
        throw std::domain_error("net_forward: non-finite parameter detected");

    const size_t n = seq.length();
    acts.n_vision = seq.n_vision;
    acts.positions = seq.positions;
    acts.layers.assign(cfg.n_layers, NetLayerRecord{});

    const uint64_t macs_start = macs::value();
    Matrix x = seq.embeddings;
    for (size_t l = 0; l < cfg.n_layers; ++l) {
        NetLayerRecord& rec = acts.layers[l];
        rec.used_mod = pc.layers[l].use_mod;
        const uint64_t before = macs::value();
        if (rec.used_mod) {
            x = mod_layer_forward(p.layers[l], p.router_w[l], p.router_b[l], cfg, x,
                                  seq.positions, seq.n_vision, pc.layers[l].ratio, pc.mode,
                                  pc.alpha, rec.mod);
        } else {
            x = transformer_layer_forward(p.layers[l], cfg, x, seq.positions, rec.plain);
        }
        rec.macs = macs::value() - before;
    }

    acts.stack_out = x;
    acts.final_norm_out = Matrix(n, cfg.d_model);
    acts.final_norm_inv.resize(n);
    for (size_t i = 0; i < n; ++i)
        acts.final_norm_inv[i] = rmsnorm_row(x.row(i), p.final_norm_gain.row(0), kNormEps,
                                             acts.final_norm_out.row(i));
    acts.total_macs = macs::value() - macs_start;
    acts.logits = matmul(acts.final_norm_out, p.w_lm);
    return acts.logits;
}

// Exact gradients of net_forward w.r.t. every parameter, accumulated into
// `grads` (a zero-initialized Params of the same config). Embeddings are task
// inputs, not parameters, so their gradient is returned for inspection.
inline Matrix net_backward(const Params& p, const NetActs& acts, const Matrix& dlogits,
                           Params& grads) {
    const ModelConfig& cfg = p.cfg;
    if (dlogits.rows() != acts.logits.rows() || dlogits.cols() != acts.logits.cols())
        throw std::invalid_argument("net_backward: upstream shape mismatch");
    const size_t n = dlogits.rows();

    grads.w_lm += matmul(transpose(acts.final_norm_out), dlogits);
    Matrix d_final = matmul(dlogits, transpose(p.w_lm));

    Matrix dx(n, cfg.d_model);
    for (size_t i = 0; i < n; ++i)
        rmsnorm_row_backward(acts.stack_out.row(i), p.final_norm_gain.row(0),
                             acts.final_norm_inv[i], d_final.row(i), dx.row(i),
                             grads.final_norm_gain.row(0));

    for (size_t l = cfg.n_layers; l-- > 0;) {
        const NetLayerRecord& rec = acts.layers[l];
        if (rec.used_mod) {
            dx = mod_layer_backward(p.layers[l], p.router_w[l], cfg, rec.mod, dx,
                                    grads.layers[l], grads.router_w[l], grads.router_b[l]);
        } else {
            dx = transformer_layer_backward(p.layers[l], cfg, rec.plain, dx, grads.layers[l]);
        }
    }
    return dx;
}

struct LossResult {
    double loss = 0.0;
    Matrix dlogits;  // same shape as logits; zero outside answer rows
};

// Mean cross-entropy over designated answer rows only.
inline LossResult cross_entropy_answers(const Matrix& logits,
                                        const std::vector<size_t>& answer_rows,
                                        const std::vector<int>& targets) {
    if (answer_rows.empty() || answer_rows.size() != targets.size())
        throw std::invalid_argument("cross_entropy_answers: rows/targets mismatch");
    LossResult res;
    res.dlogits = Matrix(logits.rows(), logits.cols());
    const double inv_n = 1.0 / static_cast<double>(answer_rows.size());
    for (size_t a = 0; a < answer_rows.size(); ++a) {
        const size_t r = answer_rows[a];
        const int t = targets[a];
        if (r >= logits.rows() || t < 0 || static_cast<size_t>(t) >= logits.cols())
            throw std::invalid_argument("cross_entropy_answers: index out of range");
        std::span<const double> row = logits.row(r);
        double mx = row[0];
        for (double v : row)
            mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : row)
            sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        res.loss += (lse - row[t]) * inv_n;
        std::span<double> drow = res.dlogits.row(r);
        for (size_t j = 0; j < row.size(); ++j)
            drow[j] += (std::exp(row[j] - lse) - (static_cast<size_t>(t) == j ? 1.0 : 0.0)) * inv_n;
    }
    return res;
}

// Per-layer key/value rows for decoding. A selective layer holds only the
// tokens it processed (selected vision plus all text); a vanilla layer holds
// every token. Rows are stored flat, d doubles per entry.
struct KvCache {
    ModelConfig cfg;
    struct LayerStore {
        std::vector<double> k, v;
        std::vector<size_t> positions;
        size_t entries = 0;
    };
    std::vector<LayerStore> layers;

    explicit KvCache(const ModelConfig& c) : cfg(c), layers(c.n_layers) {}

    size_t total_entries() const {
        size_t t = 0;
        for (const auto& l : layers)
            t += l.entries;
        return t;
    }

    void append(size_t layer, std::span<const double> k_row, std::span<const double> v_row,
                size_t position) {
        LayerStore& s = layers[layer];
        s.k.insert(s.k.end(), k_row.begin(), k_row.end());
        s.v.insert(s.v.end(), v_row.begin(), v_row.end());
        s.positions.push_back(position);
        s.entries += 1;
    }
};

// Run the full forward on the prompt and harvest each layer's processed
// rows into a cache. Returns the prompt logits.
inline Matrix prefill(const Params& p, const PmodConfig& pc, const TokenSequence& seq,
                      KvCache& cache, NetActs& acts) {
    if (cache.cfg.n_layers != p.cfg.n_layers || cache.cfg.d_model != p.cfg.d_model)
        throw std::invalid_argument("prefill: cache/config mismatch");
    if (cache.total_entries() != 0)
        throw std::invalid_argument("prefill: cache not empty");
    Matrix logits = net_forward(p, pc, seq, acts);
    for (size_t l = 0; l < p.cfg.n_layers; ++l) {
        const NetLayerRecord& rec = acts.layers[l];
        const LayerActs& inner = rec.used_mod ? rec.mod.inner : rec.plain;
        for (size_t j = 0; j < inner.k_rot.rows(); ++j)
            cache.append(l, inner.k_rot.row(j), inner.v.row(j), inner.positions[j]);
    }
    return logits;
}

namespace detail {

// out[j] += sum_k x[k] * w(k, j), accumulating k-ascending exactly like the
// matmul kernel, so single-row decoding reproduces full-forward bits.
inline void row_matmul(std::span<const double> x, const Matrix& w, std::span<double> out) {
    if (x.size() != w.rows() || out.size() != w.cols())
        throw std::invalid_argument("row_matmul: shape mismatch");
    for (size_t k = 0; k < x.size(); ++k) {
        const double a = x[k];
        const double* wrow = w.data() + k * w.cols();
        for (size_t j = 0; j < out.size(); ++j)
            out[j] += a * wrow[j];
    }
    macs::add(static_cast<uint64_t>(x.size()) * w.cols());
}

}  // namespace detail

// Advance decoding by one text token: the token passes through every layer
// (text is never dropped), attends over each layer's cached entries plus
// itself, and appends its key/value to every layer. Returns the next-token
// logits row (1 x vocab).
inline Matrix decode_step(const Params& p, const PmodConfig& pc, KvCache& cache,
                          std::span<const double> x_row, size_t position) {
    const ModelConfig& cfg = p.cfg;
    pc.validate(cfg);
    if (cache.layers.size() != cfg.n_layers)
        throw std::invalid_argument("decode_step: cache/config mismatch");
    if (x_row.size() != cfg.d_model)
        throw std::invalid_argument("decode_step: embedding width mismatch");
    const size_t d = cfg.d_model, dh = cfg.head_dim(), nh = cfg.n_heads;

    std::vector<double> x(x_row.begin(), x_row.end());
    std::vector<double> normed(d), q(d), k(d), v(d), mix(d), proj(d);
    std::vector<double> gate(cfg.d_ff), up(cfg.d_ff), act(cfg.d_ff);
    std::vector<double> scores;

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& lp = p.layers[l];
        KvCache::LayerStore& store = cache.layers[l];

        rmsnorm_row(x, lp.attn_norm_gain.row(0), kNormEps, normed);
        std::fill(q.begin(), q.end(), 0.0);
        std::fill(k.begin(), k.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        detail::row_matmul(normed, lp.wq, q);
        detail::row_matmul(normed, lp.wk, k);
        detail::row_matmul(normed, lp.wv, v);
        detail::rope_rotate_row(q, position, nh, dh, false);
        detail::rope_rotate_row(k, position, nh, dh, false);
        cache.append(l, k, v, position);

        const size_t rows = store.entries;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::fill(mix.begin(), mix.end(), 0.0);
        for (size_t h = 0; h < nh; ++h) {
            const size_t off = h * dh;
            scores.resize(rows);
            std::span<const double> qh(q.data() + off, dh);
            for (size_t m = 0; m < rows; ++m) {
                std::span<const double> km(store.k.data() + m * d + off, dh);
                scores[m] = dot_counted(qh, km) * scale;
            }
            softmax_inplace(scores);
            double* orow = mix.data() + off;
            for (size_t m = 0; m < rows; ++m) {
                const double* vm = store.v.data() + m * d + off;
                for (size_t j = 0; j < dh; ++j)
                    orow[j] += scores[m] * vm[j];
            }
            macs::add(static_cast<uint64_t>(rows) * dh);
        }
        std::fill(proj.begin(), proj.end(), 0.0);
        detail::row_matmul(mix, lp.wo, proj);
        for (size_t c = 0; c < d; ++c)
            x[c] += proj[c];

        rmsnorm_row(x, lp.mlp_norm_gain.row(0), kNormEps, normed);
        std::fill(gate.begin(), gate.end(), 0.0);
        std::fill(up.begin(), up.end(), 0.0);
        detail::row_matmul(normed, lp.w_gate, gate);
        detail::row_matmul(normed, lp.w_up, up);
        for (size_t j = 0; j < cfg.d_ff; ++j)
            act[j] = silu(gate[j]) * up[j];
        std::fill(proj.begin(), proj.end(), 0.0);
        detail::row_matmul(act, lp.w_down, proj);
        for (size_t c = 0; c < d; ++c)
            x[c] += proj[c];
    }

    rmsnorm_row(x, p.final_norm_gain.row(0), kNormEps, normed);
    Matrix logits(1, cfg.vocab_size);
    detail::row_matmul(normed, p.w_lm, logits.row(0));
    return logits;
}

inline int argmax_token(std::span<const double> logits_row) {
    size_t best = 0;
    for (size_t j = 1; j < logits_row.size(); ++j)
        if (logits_row[j] > logits_row[best])
            best = j;  // strict >: ties keep the lowest token id
    return static_cast<int>(best);
}

// Greedy decoding with the KV cache: prefill the prompt, then repeatedly
// embed the argmax token and run single-token steps.
inline std::vector<int> greedy_decode(const Params& p, const PmodConfig& pc,
                                      const TokenSequence& prompt, size_t n_steps) {
    KvCache cache(p.cfg);
    NetActs acts;
    Matrix logits = prefill(p, pc, prompt, cache, acts);
    std::vector<int> out;
    if (n_steps == 0)
        return out;
    size_t position = prompt.positions.back() + 1;
    int tok = argmax_token(logits.row(logits.rows() - 1));
    out.push_back(tok);
    for (size_t s = 1; s < n_steps; ++s) {
        Matrix step = decode_step(p, pc, cache, p.tok_embed.row(static_cast<size_t>(tok)),
                                  position);
        ++position;
        tok = argmax_token(step.row(0));
        out.push_back(tok);
    }
    return out;
}

}  // namespace pmod
