#pragma once

// Checkpoint layout (little-endian):
//   "MGCK" u32 version(=1)
//   str architecture (JSON text)  str config_hash  u64 seed  u64 tasks_consumed
//   params theta, params phi
// params = u32 segment_count, per segment (str name, u32 rank, rank x u64 dims), u64 n, n x f64

#include <filesystem>
#include <memory>
#include <string>

#include "metagate/core/errors.hpp"
#include "metagate/core/io.hpp"
#include "metagate/core/params.hpp"

namespace metagate::training {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string architecture;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::uint64_t tasks_consumed = 0;
    ParamVector theta;
    ParamVector phi;
};

namespace detail {

inline void write_params(io::ByteWriter& w, const ParamVector& p) {
    const auto& segs = p.layout().segments();
    w.u32(static_cast<std::uint32_t>(segs.size()));
    for (const auto& s : segs) {
        w.str(s.name);
        w.u32(static_cast<std::uint32_t>(s.shape.size()));
        for (auto d : s.shape) w.u64(d);
    }
    w.u64(p.size());
    for (double v : p.values()) w.f64(v);
}

/// Reads values and checks the stored layout against `expected`.
inline ParamVector read_params(io::ByteReader& r, const std::shared_ptr<const ParamLayout>& expected) {
    ParamLayout stored;
    const auto nseg = r.u32();
    for (std::uint32_t i = 0; i < nseg; ++i) {
        auto name = r.str();
        std::vector<std::size_t> shape(r.u32());
        for (auto& d : shape) d = r.u64();
        stored.add(std::move(name), std::move(shape));
    }
    if (!(stored == *expected)) throw DataError("checkpoint: parameter layout does not match the architecture");
    std::vector<double> v(r.u64());
    for (auto& x : v) x = r.f64();
    return ParamVector(expected, std::move(v));
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
    io::ByteWriter w;
    w.raw("MGCK");
    w.u32(kCheckpointVersion);
    w.str(c.architecture);
    w.str(c.config_hash);
    w.u64(c.seed);
    w.u64(c.tasks_consumed);
    detail::write_params(w, c.theta);
    detail::write_params(w, c.phi);
    return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes, const std::shared_ptr<const ParamLayout>& inner,
                                         const std::shared_ptr<const ParamLayout>& outer) {
    io::ByteReader r(bytes);
    if (r.raw(4) != "MGCK") throw DataError("checkpoint: bad magic");
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(v));
    Checkpoint c;
    c.architecture = r.str();
    c.config_hash = r.str();
    c.seed = r.u64();
    c.tasks_consumed = r.u64();
    c.theta = detail::read_params(r, inner);
    c.phi = detail::read_params(r, outer);
    if (!r.done()) throw DataError("checkpoint: trailing bytes");
    return c;
}

}  // namespace metagate::training
