// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmod/costmodel.hpp"
#include "pmod/mod_layer.hpp"
#include "pmod/model.hpp"
#include "pmod/schedule.hpp"
#include "pmod/synth.hpp"
#include "pmod/train.hpp"

namespace pmod {

// Parsed run description. One top-level seed feeds every random draw; the
// schedule always covers model.n_layers layers; mode "none" disables token
// routing entirely (dense baseline). The task is validated against the model
// only by the commands that actually generate samples, so large presets can
// still drive the pure cost/schedule arithmetic.
struct RunConfig {
    ModelConfig model{8, 64, 4, 128, 32, 256};
    ScheduleConfig schedule;
    bool dense = false;  // mode = none
    ReweightMode mode = ReweightMode::TanhNormStr;
    double alpha = kDefaultTanhAlpha;
    SynthTask task;
    TrainConfig train;
    WorkloadSpec workload{64, 1, 0, 2.0};
    uint64_t seed = 1;
    std::string out_dir = "out";

    void validate() const {
        model.validate();
        ScheduleConfig sched = schedule;
        sched.n_layers = model.n_layers;
        sched.validate();
        if (!dense && alpha <= 0.0)
            throw std::invalid_argument("config: alpha must be positive");
        train.validate();
        workload.validate();
    }

    // Schedule tied to the model depth.
    ScheduleConfig tied_schedule() const {
        ScheduleConfig s = schedule;
        s.n_layers = model.n_layers;
        return s;
    }

    PmodConfig pmod() const {
        if (dense)
            return PmodConfig::vanilla(model.n_layers);
        return PmodConfig::from_schedule(build_schedule(tied_schedule()), mode, alpha);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline double parse_double(const std::string& key, const std::string& v) {
    size_t idx = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &idx);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": " + v);
    }
    if (idx != v.size())
        throw std::invalid_argument("config: trailing junk for " + key + ": " + v);
    return x;
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
    if (!v.empty() && v[0] == '-')
        throw std::invalid_argument("config: " + key + " must be non-negative");
    size_t idx = 0;
    uint64_t x = 0;
    try {
        x = std::stoull(v, &idx);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
    if (idx != v.size())
        throw std::invalid_argument("config: trailing junk for " + key + ": " + v);
    return x;
}

inline size_t parse_count(const std::string& key, const std::string& v) {
    return static_cast<size_t>(parse_u64(key, v));
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw std::invalid_argument("config: empty list item for " + key);
        out.push_back(parse_double(key, item));
    }
    if (out.empty())
        throw std::invalid_argument("config: empty list for " + key);
    return out;
}

}  // namespace detail

// Flat INI-style text: [section] headers, key = value lines, '#' comments.
// Unknown sections or keys are errors, so stale configs fail loudly.
inline RunConfig parse_config(const std::string& text) {
    using detail::parse_count;
    using detail::parse_double;
    using detail::parse_double_list;
    using detail::parse_u64;
    using detail::trim;

    RunConfig rc;
    std::string section;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config: bad section header at line " +
                                            std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "schedule" && section != "pmod" &&
                section != "task" && section != "train" && section != "workload" &&
                section != "run")
                throw std::invalid_argument("config: unknown section [" + section + "]");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value at line " +
                                        std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument("config: empty key or value at line " +
                                        std::to_string(lineno));
        const std::string qual = section + "." + key;

        if (section == "model") {
            if (key == "n_layers") rc.model.n_layers = parse_count(qual, val);
            else if (key == "d_model") rc.model.d_model = parse_count(qual, val);
            else if (key == "n_heads") rc.model.n_heads = parse_count(qual, val);
            else if (key == "d_ff") rc.model.d_ff = parse_count(qual, val);
            else if (key == "vocab_size") rc.model.vocab_size = parse_count(qual, val);
            else if (key == "max_seq") rc.model.max_seq = parse_count(qual, val);
            else throw std::invalid_argument("config: unknown key " + qual);
        } else if (section == "schedule") {
            if (key == "kind") rc.schedule.variant = schedule_variant_from_string(val);
            else if (key == "beta") rc.schedule.beta = parse_double(qual, val);
            else if (key == "min_ratio") rc.schedule.min_ratio = parse_double(qual, val);
            else if (key == "max_ratio") rc.schedule.max_ratio = parse_double(qual, val);
            else if (key == "constant_ratio") rc.schedule.constant_ratio = parse_double(qual, val);
            else if (key == "interleave_low") rc.schedule.interleave_low = parse_double(qual, val);
            else if (key == "step_levels") rc.schedule.step_levels = parse_double_list(qual, val);
            else if (key == "linear_start") rc.schedule.linear_start = parse_double(qual, val);
            else if (key == "linear_end") rc.schedule.linear_end = parse_double(qual, val);
            else throw std::invalid_argument("config: unknown key " + qual);
        } else if (section == "pmod") {
            if (key == "mode") {
                if (val == "none") rc.dense = true;
                else { rc.dense = false; rc.mode = reweight_mode_from_string(val); }
            } else if (key == "alpha") rc.alpha = parse_double(qual, val);
            else throw std::invalid_argument("config: unknown key " + qual);
        } else if (section == "task") {
            if (key == "n_vision") rc.task.n_vision = parse_count(qual, val);
            else if (key == "n_signal") rc.task.n_signal = parse_count(qual, val);
            else if (key == "n_repeat") rc.task.n_repeat = parse_count(qual, val);
            else if (key == "n_keys") rc.task.n_keys = parse_count(qual, val);
            else if (key == "noise_scale") rc.task.noise_scale = parse_double(qual, val);
            else throw std::invalid_argument("config: unknown key " + qual);
        } else if (section == "train") {
            if (key == "steps") rc.train.steps = parse_count(qual, val);
            else if (key == "batch") rc.train.batch = parse_count(qual, val);
            else if (key == "lr") rc.train.lr = parse_double(qual, val);
            else if (key == "momentum") rc.train.momentum = parse_double(qual, val);
            else if (key == "eval_samples") rc.train.eval_samples = parse_count(qual, val);
            else throw std::invalid_argument("config: unknown key " + qual);
        } else if (section == "workload") {
            if (key == "n_vision") rc.workload.n_vision = parse_count(qual, val);
            else if (key == "n_text_prompt") rc.workload.n_text_prompt = parse_count(qual, val);
            else if (key == "n_decode") rc.workload.n_decode = parse_count(qual, val);
            else if (key == "kv_bytes_per_element")
                rc.workload.kv_bytes_per_element = parse_double(qual, val);
            else throw std::invalid_argument("config: unknown key " + qual);
        } else if (section == "run") {
            if (key == "seed") rc.seed = parse_u64(qual, val);
            else if (key == "out_dir") rc.out_dir = val;
            else throw std::invalid_argument("config: unknown key " + qual);
        } else {
            throw std::invalid_argument("config: key outside any section at line " +
                                        std::to_string(lineno));
        }
    }

    // Single top-level seed feeds the task and the trainer.
    rc.task.seed = rc.seed;
    rc.train.seed = rc.seed;
    rc.validate();
    return rc;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

}  // namespace pmod
