#pragma once

// Dataset file layout (all integers and floats little-endian):
//
//   "MGDS"  u32 version(=1)  u64 task_count
//   per task:        u64 n_support  u64 n_query  then n_support+n_query realizations
//   per realization: u32 K  u32 Nt  str channel_id  f64 noise_power
//                    K x f64 weights
//                    K*K*Nt x (f64 re, f64 im)   ordered (j, k, antenna)
//                    u8 has_positions [K x (f64 x, f64 y) tx, K x (f64 x, f64 y) rx]
//
// where str = u32 length + bytes.

#include <filesystem>
#include <string>
#include <vector>

#include "metagate/channels/realization.hpp"
#include "metagate/core/errors.hpp"
#include "metagate/core/io.hpp"

namespace metagate::channels {

inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_realization(io::ByteWriter& w, const ChannelRealization& ch) {
    w.u32(static_cast<std::uint32_t>(ch.K));
    w.u32(static_cast<std::uint32_t>(ch.Nt));
    w.str(ch.channel_id);
    w.f64(ch.noise_power);
    for (double x : ch.weights) w.f64(x);
    for (const auto& z : ch.H) {
        w.f64(z.real());
        w.f64(z.imag());
    }
    w.u8(ch.positions ? 1 : 0);
    if (ch.positions) {
        for (const auto& p : ch.positions->tx) {
            w.f64(p[0]);
            w.f64(p[1]);
        }
        for (const auto& p : ch.positions->rx) {
            w.f64(p[0]);
            w.f64(p[1]);
        }
    }
}

inline ChannelRealization read_realization(io::ByteReader& r) {
    ChannelRealization ch;
    ch.K = r.u32();
    ch.Nt = r.u32();
    ch.channel_id = r.str();
    ch.noise_power = r.f64();
    ch.weights.resize(ch.K);
    for (auto& x : ch.weights) x = r.f64();
    ch.H.resize(ch.K * ch.K * ch.Nt);
    for (auto& z : ch.H) {
        const double re = r.f64();
        const double im = r.f64();
        z = {re, im};
    }
    if (r.u8()) {
        Positions p;
        p.tx.resize(ch.K);
        p.rx.resize(ch.K);
        for (auto& q : p.tx) q = {r.f64(), r.f64()};
        for (auto& q : p.rx) q = {r.f64(), r.f64()};
        ch.positions = std::move(p);
    }
    ch.validate();
    return ch;
}

inline std::string serialize_tasks(const std::vector<Task>& tasks) {
    io::ByteWriter w;
    w.raw("MGDS");
    w.u32(kDatasetVersion);
    w.u64(tasks.size());
    for (const auto& t : tasks) {
        w.u64(t.support.size());
        w.u64(t.query.size());
        for (const auto& ch : t.support) write_realization(w, ch);
        for (const auto& ch : t.query) write_realization(w, ch);
    }
    return w.bytes();
}

inline std::vector<Task> deserialize_tasks(std::string_view bytes) {
    io::ByteReader r(bytes);
    if (r.raw(4) != "MGDS") throw DataError("not a metagate dataset (bad magic)");
    if (const auto v = r.u32(); v != kDatasetVersion)
        throw DataError("unsupported dataset version " + std::to_string(v));
    std::vector<Task> tasks(r.u64());
    for (auto& t : tasks) {
        const auto ns = r.u64();
        const auto nq = r.u64();
        for (std::uint64_t i = 0; i < ns; ++i) t.support.push_back(read_realization(r));
        for (std::uint64_t i = 0; i < nq; ++i) t.query.push_back(read_realization(r));
    }
    if (!r.done()) throw DataError("trailing bytes after dataset");
    return tasks;
}

inline void save_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks) {
    io::write_atomic(path, serialize_tasks(tasks));
}

inline std::vector<Task> load_tasks(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("missing dataset: " + path.string());
    return deserialize_tasks(io::read_file(path));
}

}  // namespace metagate::channels
