#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "khwm/core/adam.hpp"
#include "khwm/core/errors.hpp"
#include "khwm/core/hyper.hpp"
#include "khwm/core/params.hpp"
#include "khwm/core/rng.hpp"

namespace khwm {

// Versioned binary checkpoint. Raw little-endian doubles, so the round trip
// is bit-exact. Layout:
//   magic "KHWMCKP1"
//   u32 json metadata length, metadata (hyperparams + free-form refs)
//   u32 store count; per store: owner, param count, (name, rows, cols, data)
//   u32 adam state count; per state: key, step, paired (m, v) arrays
struct Checkpoint {
    HyperParams hyper;
    std::map<std::string, std::string> refs;  // e.g. upstream checkpoint hashes
    std::vector<ParameterStore> stores;
    std::map<std::string, AdamState> opt_states;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: truncated u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_i64(std::ostream& os, std::int64_t v) {
    for (int i = 0; i < 8; ++i) {
        unsigned char b = static_cast<unsigned char>(v >> (8 * i));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
}

inline std::int64_t read_i64(std::istream& is) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        unsigned char b;
        is.read(reinterpret_cast<char*>(&b), 1);
        if (!is) throw IoError("checkpoint: truncated i64");
        v |= static_cast<std::uint64_t>(b) << (8 * i);
    }
    return static_cast<std::int64_t>(v);
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("checkpoint: truncated string");
    return s;
}

inline void write_matrix(std::ostream& os, const MatX& m) {
    write_i64(os, m.rows());
    write_i64(os, m.cols());
    // Eigen default storage is column-major; dump in that order.
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

inline MatX read_matrix(std::istream& is) {
    const Index rows = read_i64(is);
    const Index cols = read_i64(is);
    if (rows < 0 || cols < 0) throw IoError("checkpoint: negative matrix dims");
    MatX m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!is) throw IoError("checkpoint: truncated matrix data");
    return m;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write("KHWMCKP1", 8);
    nlohmann::json meta;
    meta["hyper"] = ckpt.hyper;
    meta["refs"] = ckpt.refs;
    detail::write_string(os, meta.dump());
    detail::write_u32(os, static_cast<std::uint32_t>(ckpt.stores.size()));
    for (const auto& store : ckpt.stores) {
        detail::write_u32(os, static_cast<std::uint32_t>(store.owner()));
        detail::write_u32(os, static_cast<std::uint32_t>(store.count()));
        for (std::size_t i = 0; i < store.count(); ++i) {
            detail::write_string(os, store.name(i));
            detail::write_matrix(os, store.value(i));
        }
    }
    detail::write_u32(os, static_cast<std::uint32_t>(ckpt.opt_states.size()));
    for (const auto& [key, state] : ckpt.opt_states) {
        detail::write_string(os, key);
        detail::write_i64(os, state.step);
        detail::write_u32(os, static_cast<std::uint32_t>(state.m.size()));
        for (std::size_t i = 0; i < state.m.size(); ++i) {
            detail::write_matrix(os, state.m[i]);
            detail::write_matrix(os, state.v[i]);
        }
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "KHWMCKP1", 8) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    Checkpoint ckpt;
    nlohmann::json meta = nlohmann::json::parse(detail::read_string(is));
    ckpt.hyper = meta.at("hyper").get<HyperParams>();
    ckpt.refs = meta.at("refs").get<std::map<std::string, std::string>>();
    const std::uint32_t n_stores = detail::read_u32(is);
    for (std::uint32_t s = 0; s < n_stores; ++s) {
        ParameterStore store(static_cast<Owner>(detail::read_u32(is)));
        const std::uint32_t n_params = detail::read_u32(is);
        for (std::uint32_t i = 0; i < n_params; ++i) {
            std::string name = detail::read_string(is);
            store.add(name, detail::read_matrix(is));
        }
        ckpt.stores.push_back(std::move(store));
    }
    const std::uint32_t n_states = detail::read_u32(is);
    for (std::uint32_t s = 0; s < n_states; ++s) {
        std::string key = detail::read_string(is);
        AdamState state;
        state.step = detail::read_i64(is);
        const std::uint32_t n = detail::read_u32(is);
        for (std::uint32_t i = 0; i < n; ++i) {
            state.m.push_back(detail::read_matrix(is));
            state.v.push_back(detail::read_matrix(is));
        }
        ckpt.opt_states[key] = std::move(state);
    }
    return ckpt;
}

// Identity hash of a file's bytes; world-model/policy checkpoints use it to
// pin the frozen encoder they were trained against.
inline std::string file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot hash missing file: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
        if (is.eof()) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

}  // namespace khwm
