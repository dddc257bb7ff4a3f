// Copyright (C) 2026 pmod contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "pmod/model.hpp"

namespace pmod {

// Parameter checkpoint, format "PMODCK01":
//   magic            8 bytes  "PMODCK01"
//   model config     6 x u64  (n_layers, d_model, n_heads, d_ff, vocab_size, max_seq)
//   tensor count     u64
//   per tensor:      u32 name length, name bytes, u64 rows, u64 cols,
//                    rows*cols f64 payload
// All integers and floats little-endian. Tensors appear in the fixed
// traversal order of Params::for_each_tensor.
inline constexpr char kCheckpointMagic[8] = {'P', 'M', 'O', 'D', 'C', 'K', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is)
        throw std::runtime_error("checkpoint: truncated header");
    return v;
}

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is)
        throw std::runtime_error("checkpoint: truncated header");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Params& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const ModelConfig& c = params.cfg;
    for (uint64_t v : {c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_seq})
        detail::write_u64(os, v);

    uint64_t count = 0;
    params.for_each_tensor([&](const std::string&, const Matrix&) { ++count; });
    detail::write_u64(os, count);

    params.for_each_tensor([&](const std::string& name, const Matrix& m) {
        detail::write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(os, m.rows());
        detail::write_u64(os, m.cols());
        os.write(reinterpret_cast<const char*>(m.data()),
                 static_cast<std::streamsize>(m.rows() * m.cols() * sizeof(double)));
    });
    if (!os)
        throw std::runtime_error("checkpoint: write failed: " + path);
}

inline Params load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic: " + path);

    ModelConfig cfg;
    cfg.n_layers = detail::read_u64(is);
    cfg.d_model = detail::read_u64(is);
    cfg.n_heads = detail::read_u64(is);
    cfg.d_ff = detail::read_u64(is);
    cfg.vocab_size = detail::read_u64(is);
    cfg.max_seq = detail::read_u64(is);
    cfg.validate();

    Params params = Params::zeros(cfg);
    uint64_t expected = 0;
    params.for_each_tensor([&](const std::string&, const Matrix&) { ++expected; });
    const uint64_t count = detail::read_u64(is);
    if (count != expected)
        throw std::runtime_error("checkpoint: tensor count mismatch");

    params.for_each_tensor([&](const std::string& name, Matrix& m) {
        const uint32_t len = detail::read_u32(is);
        std::string stored(len, '\0');
        is.read(stored.data(), len);
        const uint64_t rows = detail::read_u64(is);
        const uint64_t cols = detail::read_u64(is);
        if (!is || stored != name || rows != m.rows() || cols != m.cols())
            throw std::runtime_error("checkpoint: tensor mismatch at " + name);
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(rows * cols * sizeof(double)));
        if (!is)
            throw std::runtime_error("checkpoint: truncated payload at " + name);
    });
    return params;
}

}  // namespace pmod
