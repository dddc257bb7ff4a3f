// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmod/matrix.hpp"
#include "pmod/model.hpp"
#include "pmod/schedule.hpp"

namespace pmod {

// How router weights modulate token states around a selective layer.
//  - VanillaMod:    selected tokens scaled by (1 + w), skipped pass through.
//  - TanhNorm:      selected tokens scaled by (1 + alpha*tanh(w)).
//  - TanhNormStr:   TanhNorm plus symmetric reweighting of skipped tokens,
//                   so every routed token carries a gradient path to the router.
enum class ReweightMode { VanillaMod, TanhNorm, TanhNormStr };

inline std::string to_string(ReweightMode m) {
    switch (m) {
        case ReweightMode::VanillaMod: return "vanilla_mod";
        case ReweightMode::TanhNorm: return "tanh_norm";
        case ReweightMode::TanhNormStr: return "tanh_norm_str";
    }
    throw std::invalid_argument("to_string: bad ReweightMode");
}

inline ReweightMode reweight_mode_from_string(const std::string& s) {
    if (s == "vanilla_mod") return ReweightMode::VanillaMod;
    if (s == "tanh_norm") return ReweightMode::TanhNorm;
    if (s == "tanh_norm_str") return ReweightMode::TanhNormStr;
    throw std::invalid_argument("unknown reweight mode: " + s);
}

inline constexpr double kDefaultTanhAlpha = 0.2;

// alpha * tanh(w): maps an unbounded router weight into (-alpha, alpha),
// keeping the scale factor 1 + alpha*tanh(w) close to one.
inline double tanh_norm(double alpha, double w) {
    if (alpha <= 0.0)
        throw std::invalid_argument("tanh_norm: alpha must be positive");
    return alpha * std::tanh(w);
}

inline double tanh_norm_grad(double alpha, double w) {
    const double t = std::tanh(w);
    return alpha * (1.0 - t * t);
}

// Indices of the k largest weights, ties broken toward the lower index,
// returned in ascending index order.
inline std::vector<size_t> select_topk(const std::vector<double>& weights, size_t k) {
    if (k < 1 || k > weights.size())
        throw std::invalid_argument("select_topk: k out of range");
    std::vector<size_t> idx(weights.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return weights[a] > weights[b]; });
    std::vector<size_t> sel(idx.begin(), idx.begin() + k);
    std::sort(sel.begin(), sel.end());
    return sel;
}

struct RouterState {
    std::vector<double> raw_weights;  // one per vision token
    std::vector<double> normalized;   // reweighting factors minus one
    std::vector<size_t> selected;     // ascending vision indices
    std::vector<size_t> skipped;      // ascending complement
    double threshold = 0.0;           // k-th largest raw weight
    size_t k = 0;
};

// Raw router weights for the vision prefix: w_i = x_i . wp + bp.
inline std::vector<double> predict_weights(const Matrix& x, size_t n_vision,
                                           const Matrix& router_w, const Matrix& router_b) {
    if (router_w.rows() != x.cols() || router_w.cols() != 1)
        throw std::invalid_argument("predict_weights: router weight shape mismatch");
    std::vector<double> w(n_vision);
    std::span<const double> wp(router_w.data(), router_w.rows());
    for (size_t i = 0; i < n_vision; ++i)
        w[i] = dot_counted(x.row(i), wp) + router_b(0, 0);
    return w;
}

inline RouterState route_tokens(const Matrix& x, size_t n_vision, const Matrix& router_w,
                                const Matrix& router_b, double ratio, ReweightMode mode,
                                double alpha) {
    RouterState rs;
    rs.raw_weights = predict_weights(x, n_vision, router_w, router_b);
    rs.k = tokens_retained(n_vision, ratio);
    rs.selected = select_topk(rs.raw_weights, rs.k);

    std::vector<char> is_sel(n_vision, 0);
    for (size_t s : rs.selected)
        is_sel[s] = 1;
    for (size_t i = 0; i < n_vision; ++i)
        if (!is_sel[i])
            rs.skipped.push_back(i);

    rs.threshold = rs.raw_weights[rs.selected[0]];
    for (size_t s : rs.selected)
        rs.threshold = std::min(rs.threshold, rs.raw_weights[s]);

    rs.normalized.resize(n_vision);
    for (size_t i = 0; i < n_vision; ++i)
        rs.normalized[i] = (mode == ReweightMode::VanillaMod) ? rs.raw_weights[i]
                                                              : tanh_norm(alpha, rs.raw_weights[i]);
    return rs;
}

struct ModLayerActs {
    Matrix input;                  // n x d, full sequence entering the layer
    RouterState router;
    std::vector<size_t> gathered;  // original indices fed to the inner layer
    LayerActs inner;
    Matrix out;                    // n x d
    ReweightMode mode = ReweightMode::TanhNormStr;
    double alpha = kDefaultTanhAlpha;
    bool routed = false;           // false when no vision tokens were present
};

// Selective transformer layer: route the vision prefix, run the layer on the
// retained tokens plus all text tokens (original order and positions kept),
// then scatter back with the mode's reweighting. Text tokens always pass
// through the layer unreweighted.
inline Matrix mod_layer_forward(const LayerParams& lp, const Matrix& router_w,
                                const Matrix& router_b, const ModelConfig& cfg, const Matrix& x,
                                const std::vector<size_t>& positions, size_t n_vision,
                                double ratio, ReweightMode mode, double alpha,
                                ModLayerActs& acts) {
    const size_t n = x.rows(), d = cfg.d_model;
    if (positions.size() != n)
        throw std::invalid_argument("mod_layer_forward: positions length mismatch");
    if (n_vision > n)
        throw std::invalid_argument("mod_layer_forward: vision prefix longer than sequence");
    acts.input = x;
    acts.mode = mode;
    acts.alpha = alpha;

    acts.gathered.clear();
    if (n_vision > 0) {
        acts.router = route_tokens(x, n_vision, router_w, router_b, ratio, mode, alpha);
        acts.routed = true;
        acts.gathered = acts.router.selected;
    } else {
        acts.router = RouterState{};
        acts.routed = false;
    }
    for (size_t i = n_vision; i < n; ++i)
        acts.gathered.push_back(i);

    Matrix gathered_x(acts.gathered.size(), d);
    std::vector<size_t> gathered_pos(acts.gathered.size());
    for (size_t j = 0; j < acts.gathered.size(); ++j) {
        const size_t g = acts.gathered[j];
        std::copy_n(x.row(g).data(), d, gathered_x.row(j).data());
        gathered_pos[j] = positions[g];
    }

    Matrix t_out = transformer_layer_forward(lp, cfg, gathered_x, gathered_pos, acts.inner);

    acts.out = Matrix(n, d);
    for (size_t j = 0; j < acts.gathered.size(); ++j) {
        const size_t g = acts.gathered[j];
        const double scale = (g < n_vision) ? 1.0 + acts.router.normalized[g] : 1.0;
        const double* src = t_out.row(j).data();
        double* dst = acts.out.row(g).data();
        for (size_t c = 0; c < d; ++c)
            dst[c] = scale * src[c];
    }
    if (acts.routed) {
        for (size_t s : acts.router.skipped) {
            const double scale =
                (mode == ReweightMode::TanhNormStr) ? 1.0 + acts.router.normalized[s] : 1.0;
            const double* src = x.row(s).data();
            double* dst = acts.out.row(s).data();
            for (size_t c = 0; c < d; ++c)
                dst[c] = scale * src[c];
        }
    }
    return acts.out;
}

// Exact gradients of mod_layer_forward. The top-k selection itself is a hard
// decision and carries no gradient; gradients reach the router only through
// the reweighting factors. Accumulates into `grads`, `d_router_w`,
// `d_router_b`; returns the gradient w.r.t. the full-layer input.
inline Matrix mod_layer_backward(const LayerParams& lp, const Matrix& router_w,
                                 const ModelConfig& cfg, const ModLayerActs& acts,
                                 const Matrix& dout, LayerParams& grads, Matrix& d_router_w,
                                 Matrix& d_router_b) {
    const size_t n = acts.input.rows(), d = cfg.d_model;
    const size_t n_vision = acts.routed ? acts.router.raw_weights.size() : 0;
    if (!dout.same_shape(acts.out))
        throw std::invalid_argument("mod_layer_backward: upstream shape mismatch");

    Matrix dx(n, d);
    std::vector<double> d_norm(n_vision, 0.0);

    Matrix d_t_out(acts.gathered.size(), d);
    for (size_t j = 0; j < acts.gathered.size(); ++j) {
        const size_t g = acts.gathered[j];
        const double* do_row = dout.row(g).data();
        double* dst = d_t_out.row(j).data();
        if (g < n_vision) {
            const double scale = 1.0 + acts.router.normalized[g];
            double acc = 0.0;
            const double* t_row = acts.inner.out.row(j).data();
            for (size_t c = 0; c < d; ++c) {
                dst[c] = scale * do_row[c];
                acc += t_row[c] * do_row[c];
            }
            d_norm[g] = acc;
        } else {
            std::copy_n(do_row, d, dst);
        }
    }

    if (acts.routed) {
        for (size_t s : acts.router.skipped) {
            const double* do_row = dout.row(s).data();
            double* dst = dx.row(s).data();
            if (acts.mode == ReweightMode::TanhNormStr) {
                const double scale = 1.0 + acts.router.normalized[s];
                double acc = 0.0;
                const double* x_row = acts.input.row(s).data();
                for (size_t c = 0; c < d; ++c) {
                    dst[c] += scale * do_row[c];
                    acc += x_row[c] * do_row[c];
                }
                d_norm[s] = acc;
            } else {
                for (size_t c = 0; c < d; ++c)
                    dst[c] += do_row[c];
            }
        }
    }

    Matrix d_gathered = transformer_layer_backward(lp, cfg, acts.inner, d_t_out, grads);
    for (size_t j = 0; j < acts.gathered.size(); ++j) {
        const size_t g = acts.gathered[j];
        double* dst = dx.row(g).data();
        const double* src = d_gathered.row(j).data();
        for (size_t c = 0; c < d; ++c)
            dst[c] += src[c];
    }

    // Router chain: d_norm -> raw weight -> predictor parameters and inputs.
    for (size_t i = 0; i < n_vision; ++i) {
        if (d_norm[i] == 0.0)
            continue;
        const double dw = (acts.mode == ReweightMode::VanillaMod)
                              ? d_norm[i]
                              : d_norm[i] * tanh_norm_grad(acts.alpha, acts.router.raw_weights[i]);
        const double* x_row = acts.input.row(i).data();
        double* dst = dx.row(i).data();
        for (size_t c = 0; c < d; ++c) {
            d_router_w(c, 0) += dw * x_row[c];
            dst[c] += dw * router_w(c, 0);
        }
        d_router_b(0, 0) += dw;
    }
    return dx;
}

}  // namespace pmod
