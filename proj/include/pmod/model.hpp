// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmod/matrix.hpp"
#include "pmod/ops.hpp"
#include "pmod/rng.hpp"

namespace pmod {

inline constexpr double kNormEps = 1e-6;

struct ModelConfig {
    size_t n_layers = 0;
    size_t d_model = 0;
    size_t n_heads = 0;
    size_t d_ff = 0;
    size_t vocab_size = 0;
    size_t max_seq = 0;

    size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 ||
            max_seq < 1)
            throw std::invalid_argument("ModelConfig: all counts must be >= 1");
        if (d_model % n_heads != 0)
            throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    }
};

// A batch element: embedded tokens with a vision prefix and text suffix.
// Positions are the original sequence indices; a gathered subsequence keeps
// them, so rotary encoding sees the original layout.
struct TokenSequence {
    Matrix embeddings;              // n x d
    size_t n_vision = 0;            // tokens [0, n_vision) are vision
    std::vector<size_t> positions;  // strictly increasing
    int batch_id = 0;

    size_t length() const { return embeddings.rows(); }
    size_t n_text() const { return length() - n_vision; }

    static TokenSequence make(Matrix embeddings, size_t n_vision, int batch_id = 0) {
        TokenSequence s;
        s.n_vision = n_vision;
        s.positions.resize(embeddings.rows());
        for (size_t i = 0; i < s.positions.size(); ++i)
            s.positions[i] = i;
        s.embeddings = std::move(embeddings);
        s.batch_id = batch_id;
        s.validate();
        return s;
    }

    void validate() const {
        if (n_vision > length())
            throw std::invalid_argument("TokenSequence: vision prefix longer than sequence");
        if (positions.size() != length())
            throw std::invalid_argument("TokenSequence: positions length mismatch");
        for (size_t i = 1; i < positions.size(); ++i)
            if (positions[i] <= positions[i - 1])
                throw std::invalid_argument("TokenSequence: positions must be strictly increasing");
    }
};

struct LayerParams {
    Matrix attn_norm_gain;  // 1 x d
    Matrix wq, wk, wv, wo;  // d x d
    Matrix mlp_norm_gain;   // 1 x d
    Matrix w_gate, w_up;    // d x f
    Matrix w_down;          // f x d
};

// Full parameter set. Router predictors exist for every layer so the tensor
// layout does not depend on which layers apply token selection; unused
// predictors stay zero.
struct Params {
    ModelConfig cfg;
    std::vector<LayerParams> layers;
    std::vector<Matrix> router_w;  // d x 1 per layer
    std::vector<Matrix> router_b;  // 1 x 1 per layer
    Matrix final_norm_gain;        // 1 x d
    Matrix w_lm;                   // d x vocab
    Matrix tok_embed;              // vocab x d, embeds generated tokens during decoding

    static Params zeros(const ModelConfig& cfg) {
        cfg.validate();
        Params p;
        p.cfg = cfg;
        const size_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
        p.layers.resize(cfg.n_layers);
        for (auto& l : p.layers) {
            l.attn_norm_gain = Matrix(1, d);
            l.wq = Matrix(d, d);
            l.wk = Matrix(d, d);
            l.wv = Matrix(d, d);
            l.wo = Matrix(d, d);
            l.mlp_norm_gain = Matrix(1, d);
            l.w_gate = Matrix(d, f);
            l.w_up = Matrix(d, f);
            l.w_down = Matrix(f, d);
        }
        p.router_w.assign(cfg.n_layers, Matrix(d, 1));
        p.router_b.assign(cfg.n_layers, Matrix(1, 1));
        p.final_norm_gain = Matrix(1, d);
        p.w_lm = Matrix(d, v);
        p.tok_embed = Matrix(v, d);
        return p;
    }

    // Random initialization: unit norm gains, 1/sqrt(fan_in) weights,
    // zero router predictors so inserted selection layers start as identity.
    static Params init(const ModelConfig& cfg, uint64_t seed) {
        Params p = zeros(cfg);
        Rng rng(seed);
        const double d_in = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        const double f_in = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));
        // Projections back into the residual stream are shrunk by
        // 1/sqrt(2L) so the stream's variance stays near the token scale at
        // depth; without it the deeper stacks train noticeably slower.
        const double resid =
            1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
        for (auto& l : p.layers) {
            l.attn_norm_gain.fill(1.0);
            l.mlp_norm_gain.fill(1.0);
            rng.fill_normal(l.wq, d_in);
            rng.fill_normal(l.wk, d_in);
            rng.fill_normal(l.wv, d_in);
            rng.fill_normal(l.wo, d_in * resid);
            rng.fill_normal(l.w_gate, d_in);
            rng.fill_normal(l.w_up, d_in);
            rng.fill_normal(l.w_down, f_in * resid);
        }
        p.final_norm_gain.fill(1.0);
        rng.fill_normal(p.w_lm, d_in);
        rng.fill_normal(p.tok_embed, d_in);
        return p;
    }

    // Visits every tensor in a fixed order; the checkpoint format, the
    // optimizer and the gradient checks all iterate through here.
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string pfx = "layers." + std::to_string(i) + ".";
            fn(pfx + "attn_norm_gain", layers[i].attn_norm_gain);
            fn(pfx + "wq", layers[i].wq);
            fn(pfx + "wk", layers[i].wk);
            fn(pfx + "wv", layers[i].wv);
            fn(pfx + "wo", layers[i].wo);
            fn(pfx + "mlp_norm_gain", layers[i].mlp_norm_gain);
            fn(pfx + "w_gate", layers[i].w_gate);
            fn(pfx + "w_up", layers[i].w_up);
            fn(pfx + "w_down", layers[i].w_down);
            fn(pfx + "router_w", router_w[i]);
            fn(pfx + "router_b", router_b[i]);
        }
        fn("final_norm_gain", final_norm_gain);
        fn("w_lm", w_lm);
        fn("tok_embed", tok_embed);
    }

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        const_cast<Params*>(this)->for_each_tensor(
            [&](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
    }

    bool all_finite() const {
        bool ok = true;
        for_each_tensor([&](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
        return ok;
    }
};

namespace detail {

inline void rope_rotate_row(std::span<double> qk, size_t pos, size_t n_heads, size_t head_dim,
                            bool inverse) {
    const size_t half = head_dim / 2;
    for (size_t h = 0; h < n_heads; ++h) {
        double* base = qk.data() + h * head_dim;
        for (size_t j = 0; j < half; ++j) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
            double angle = static_cast<double>(pos) * freq;
            if (inverse)
                angle = -angle;
            const double c = std::cos(angle), s = std::sin(angle);
            const double a = base[2 * j], b = base[2 * j + 1];
            base[2 * j] = a * c - b * s;
            base[2 * j + 1] = a * s + b * c;
        }
    }
}

}  // namespace detail

// Saved intermediates of one transformer layer forward over one (sub)sequence.
struct LayerActs {
    Matrix input;                       // n x d
    Matrix attn_norm_out;               // n x d
    std::vector<double> attn_norm_inv;  // per row
    Matrix q_rot, k_rot, v;             // n x d, q/k after rotary encoding
    std::vector<Matrix> attn;           // per head: n x n row-causal probabilities
    Matrix attn_mix;                    // n x d, pre output-projection
    Matrix resid_mid;                   // n x d, input + attention branch
    Matrix mlp_norm_out;                // n x d
    std::vector<double> mlp_norm_inv;
    Matrix gate_pre, up;                // n x f
    Matrix mlp_act;                     // n x f, silu(gate) * up
    Matrix out;                         // n x d
    std::vector<size_t> positions;
};

// One pre-norm transformer layer over a (sub)sequence: causal attention with
// rotary positions, then a silu-gated MLP. Attention is evaluated row by row
// against keys at or before the query, so the multiply-accumulate count
// matches the analytic cost model exactly.
inline Matrix transformer_layer_forward(const LayerParams& lp, const ModelConfig& cfg,
                                        const Matrix& x, const std::vector<size_t>& positions,
                                        LayerActs& acts) {
    const size_t n = x.rows(), d = cfg.d_model, dh = cfg.head_dim(), nh = cfg.n_heads;
    acts.input = x;
    acts.positions = positions;

    acts.attn_norm_out = Matrix(n, d);
    acts.attn_norm_inv.resize(n);
    for (size_t i = 0; i < n; ++i)
        acts.attn_norm_inv[i] = rmsnorm_row(x.row(i), lp.attn_norm_gain.row(0), kNormEps,
                                            acts.attn_norm_out.row(i));

    acts.q_rot = matmul(acts.attn_norm_out, lp.wq);
    acts.k_rot = matmul(acts.attn_norm_out, lp.wk);
    acts.v = matmul(acts.attn_norm_out, lp.wv);
    for (size_t i = 0; i < n; ++i) {
        detail::rope_rotate_row(acts.q_rot.row(i), positions[i], nh, dh, false);
        detail::rope_rotate_row(acts.k_rot.row(i), positions[i], nh, dh, false);
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    acts.attn.assign(nh, Matrix(n, n));
    acts.attn_mix = Matrix(n, d);
    std::vector<double> scores;
    for (size_t h = 0; h < nh; ++h) {
        Matrix& probs = acts.attn[h];
        const size_t off = h * dh;
        for (size_t i = 0; i < n; ++i) {
            scores.resize(i + 1);
            std::span<const double> qi(acts.q_rot.row(i).data() + off, dh);
            for (size_t m = 0; m <= i; ++m) {
                std::span<const double> km(acts.k_rot.row(m).data() + off, dh);
                scores[m] = dot_counted(qi, km) * scale;
            }
            softmax_inplace(scores);
            double* orow = acts.attn_mix.row(i).data() + off;
            for (size_t m = 0; m <= i; ++m) {
                probs(i, m) = scores[m];
                const double* vm = acts.v.row(m).data() + off;
                for (size_t j = 0; j < dh; ++j)
                    orow[j] += scores[m] * vm[j];
            }
            macs::add(static_cast<uint64_t>(i + 1) * dh);
        }
    }

    Matrix attn_proj = matmul(acts.attn_mix, lp.wo);
    acts.resid_mid = x;
    acts.resid_mid += attn_proj;

    acts.mlp_norm_out = Matrix(n, d);
    acts.mlp_norm_inv.resize(n);
    for (size_t i = 0; i < n; ++i)
        acts.mlp_norm_inv[i] = rmsnorm_row(acts.resid_mid.row(i), lp.mlp_norm_gain.row(0),
                                           kNormEps, acts.mlp_norm_out.row(i));

    acts.gate_pre = matmul(acts.mlp_norm_out, lp.w_gate);
    acts.up = matmul(acts.mlp_norm_out, lp.w_up);
    acts.mlp_act = Matrix(n, cfg.d_ff);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < cfg.d_ff; ++j)
            acts.mlp_act(i, j) = silu(acts.gate_pre(i, j)) * acts.up(i, j);

    Matrix mlp_out = matmul(acts.mlp_act, lp.w_down);
    acts.out = acts.resid_mid;
    acts.out += mlp_out;
    return acts.out;
}

// Exact gradients of transformer_layer_forward. Accumulates parameter
// gradients into `grads` (same tensor shapes as the layer parameters) and
// returns the gradient w.r.t. the layer input.
inline Matrix transformer_layer_backward(const LayerParams& lp, const ModelConfig& cfg,
                                         const LayerActs& acts, const Matrix& dout,
                                         LayerParams& grads) {
    const size_t n = acts.input.rows(), d = cfg.d_model, dh = cfg.head_dim(), nh = cfg.n_heads;
    if (!dout.same_shape(acts.out))
        throw std::invalid_argument("transformer_layer_backward: upstream shape mismatch");

    // MLP branch.
    Matrix d_mlp_act = matmul(dout, transpose(lp.w_down));
    {
        Matrix gw = matmul(transpose(acts.mlp_act), dout);
        grads.w_down += gw;
    }
    Matrix d_gate_pre(n, cfg.d_ff), d_up(n, cfg.d_ff);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < cfg.d_ff; ++j) {
            const double g = acts.gate_pre(i, j);
            d_gate_pre(i, j) = d_mlp_act(i, j) * acts.up(i, j) * silu_grad(g);
            d_up(i, j) = d_mlp_act(i, j) * silu(g);
        }
    Matrix d_mlp_norm = matmul(d_gate_pre, transpose(lp.w_gate));
    d_mlp_norm += matmul(d_up, transpose(lp.w_up));
    grads.w_gate += matmul(transpose(acts.mlp_norm_out), d_gate_pre);
    grads.w_up += matmul(transpose(acts.mlp_norm_out), d_up);

    Matrix d_resid_mid = dout;  // residual path around the MLP
    for (size_t i = 0; i < n; ++i)
        rmsnorm_row_backward(acts.resid_mid.row(i), lp.mlp_norm_gain.row(0),
                             acts.mlp_norm_inv[i], d_mlp_norm.row(i), d_resid_mid.row(i),
                             grads.mlp_norm_gain.row(0));

    // Attention branch.
    Matrix d_attn_mix = matmul(d_resid_mid, transpose(lp.wo));
    grads.wo += matmul(transpose(acts.attn_mix), d_resid_mid);

    Matrix dq(n, d), dk(n, d), dv(n, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dprobs;
    for (size_t h = 0; h < nh; ++h) {
        const Matrix& probs = acts.attn[h];
        const size_t off = h * dh;
        for (size_t i = 0; i < n; ++i) {
            const double* doi = d_attn_mix.row(i).data() + off;
            dprobs.resize(i + 1);
            double inner = 0.0;
            for (size_t m = 0; m <= i; ++m) {
                const double* vm = acts.v.row(m).data() + off;
                double s = 0.0;
                for (size_t j = 0; j < dh; ++j)
                    s += doi[j] * vm[j];
                dprobs[m] = s;
                inner += probs(i, m) * s;
                double* dvm = dv.row(m).data() + off;
                const double p = probs(i, m);
                for (size_t j = 0; j < dh; ++j)
                    dvm[j] += p * doi[j];
            }
            double* dqi = dq.row(i).data() + off;
            const double* qi = acts.q_rot.row(i).data() + off;
            for (size_t m = 0; m <= i; ++m) {
                const double ds = probs(i, m) * (dprobs[m] - inner) * scale;
                const double* km = acts.k_rot.row(m).data() + off;
                double* dkm = dk.row(m).data() + off;
                for (size_t j = 0; j < dh; ++j) {
                    dqi[j] += ds * km[j];
                    dkm[j] += ds * qi[j];
                }
            }
        }
    }

    // Rotary encoding is an orthonormal rotation per position; its adjoint is
    // the inverse rotation.
    for (size_t i = 0; i < n; ++i) {
        detail::rope_rotate_row(dq.row(i), acts.positions[i], nh, dh, true);
        detail::rope_rotate_row(dk.row(i), acts.positions[i], nh, dh, true);
    }

    Matrix d_attn_norm = matmul(dq, transpose(lp.wq));
    d_attn_norm += matmul(dk, transpose(lp.wk));
    d_attn_norm += matmul(dv, transpose(lp.wv));
    grads.wq += matmul(transpose(acts.attn_norm_out), dq);
    grads.wk += matmul(transpose(acts.attn_norm_out), dk);
    grads.wv += matmul(transpose(acts.attn_norm_out), dv);

    Matrix dx = d_resid_mid;  // residual path around attention
    for (size_t i = 0; i < n; ++i)
        rmsnorm_row_backward(acts.input.row(i), lp.attn_norm_gain.row(0), acts.attn_norm_inv[i],
                             d_attn_norm.row(i), dx.row(i), grads.attn_norm_gain.row(0));
    return dx;
}

}  // namespace pmod
