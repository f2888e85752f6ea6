#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "metagate/core/errors.hpp"
#include "metagate/core/params.hpp"
#include "metagate/training/meta.hpp"

namespace metagate::metrics {

using training::EvalRecord;

struct Trajectory {
    std::vector<double> start;
    std::vector<double> end;
    std::size_t steps = 1;
};

/// Cosine of the angle between the two adaptation directions end - start.
inline double cds(const Trajectory& a, const Trajectory& b) {
    require(a.start.size() == b.start.size() && a.start.size() == a.end.size() && b.start.size() == b.end.size(),
            "cds: trajectories have different dimensionality");
    require(a.steps >= 1 && b.steps >= 1, "cds: trajectories need at least one step");
    const auto da = vec::sub(a.end, a.start), db = vec::sub(b.end, b.start);
    const double na = vec::norm(da), nb = vec::norm(db);
    if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateTrajectory("cds: zero-length displacement");
    double c = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) c += (da[i] / na) * (db[i] / nb);
    return std::clamp(c, -1.0, 1.0);
}

/// Population variance of per-channel mean normalized rate.
inline double variance_report(const std::vector<EvalRecord>& records, const std::vector<std::string>& channels) {
    require(channels.size() >= 2, "variance_report: need at least two channels");
    std::vector<double> means;
    for (const auto& c : channels) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& r : records)
            if (r.channel_id == c) {
                s += r.normalized_rate;
                ++n;
            }
        if (n == 0) throw DataError("variance_report: no records for channel '" + c + "'");
        means.push_back(s / static_cast<double>(n));
    }
    double mu = 0.0;
    for (double m : means) mu += m;
    mu /= static_cast<double>(means.size());
    double v = 0.0;
    for (double m : means) v += (m - mu) * (m - mu);
    return v / static_cast<double>(means.size());
}

/// M[i][j] = normalized rate on channel j after episode i, for j <= i.
struct ContinuityMatrix {
    std::vector<std::string> channels;       // column order = episode order
    std::vector<std::vector<double>> cells;  // lower triangle only

    [[nodiscard]] std::size_t size() const { return channels.size(); }
    [[nodiscard]] double at(std::size_t i, std::size_t j) const {
        require(j <= i && i < cells.size(), "ContinuityMatrix: cell outside the lower triangle");
        return cells[i][j];
    }
    /// Full square grid with `sentinel` above the diagonal (1 for GNN plots, 0.5 for CNN).
    [[nodiscard]] std::vector<std::vector<double>> dense(double sentinel) const {
        std::vector<std::vector<double>> out(size(), std::vector<double>(size(), sentinel));
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = 0; j <= i; ++j) out[i][j] = cells[i][j];
        return out;
    }
};

/// Builds the matrix from one method's online-test records. Channel j is the
/// channel first seen in episode j; each episode must cover all earlier ones.
inline ContinuityMatrix continuity_matrix(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw DataError("continuity_matrix: no records");
    std::size_t episodes = 0;
    for (const auto& r : records) episodes = std::max(episodes, r.episode + 1);
    ContinuityMatrix m;
    m.cells.assign(episodes, {});
    std::vector<std::map<std::string, double>> by_ep(episodes);
    for (const auto& r : records) {
        if (r.method != records.front().method) throw DataError("continuity_matrix: records mix methods");
        if (!by_ep[r.episode].emplace(r.channel_id, r.normalized_rate).second)
            throw DataError("continuity_matrix: duplicate cell for episode " + std::to_string(r.episode));
    }
    for (std::size_t i = 0; i < episodes; ++i) {
        std::string fresh;
        for (const auto& [c, v] : by_ep[i]) {
            bool known = false;
            for (const auto& k : m.channels) known = known || k == c;
            if (!known) {
                if (!fresh.empty()) throw DataError("continuity_matrix: episode introduces two channels");
                fresh = c;
            }
        }
        if (fresh.empty()) throw DataError("continuity_matrix: episode " + std::to_string(i) + " has no new channel");
        m.channels.push_back(fresh);
        if (by_ep[i].size() != i + 1)
            throw DataError("continuity_matrix: incomplete triangle at episode " + std::to_string(i));
        for (std::size_t j = 0; j <= i; ++j) m.cells[i].push_back(by_ep[i].at(m.channels[j]));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Exports. CSV schema version 1:
//   # schema=1 config_hash=<hex> seed=<n>
//   method,episode,channel_id,step,raw_rate,wmmse_rate,normalized_rate,seed

inline constexpr int kCsvSchema = 1;

inline std::string fmt(double x) {
    std::ostringstream s;
    s << std::setprecision(17) << x;
    return s.str();
}

inline std::string records_csv(const std::vector<EvalRecord>& recs, const std::string& config_hash,
                               std::uint64_t seed) {
    std::ostringstream s;
    s << "# schema=" << kCsvSchema << " config_hash=" << config_hash << " seed=" << seed << "\n";
    s << "method,episode,channel_id,step,raw_rate,wmmse_rate,normalized_rate,seed\n";
    for (const auto& r : recs)
        s << r.method << ',' << r.episode << ',' << r.channel_id << ',' << r.step << ',' << fmt(r.raw_rate) << ','
          << fmt(r.wmmse_rate) << ',' << fmt(r.normalized_rate) << ',' << r.seed << '\n';
    return s.str();
}

struct CsvFile {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<EvalRecord> records;
};

inline CsvFile parse_records_csv(const std::string& text) {
    CsvFile f;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("# schema=", 0) != 0) throw DataError("records csv: missing header");
    {
        std::istringstream h(line.substr(2));
        std::string kv;
        while (h >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            const auto k = kv.substr(0, eq), v = kv.substr(eq + 1);
            if (k == "config_hash") f.config_hash = v;
            else if (k == "seed") f.seed = std::stoull(v);
            else if (k == "schema" && std::stoi(v) != kCsvSchema) throw DataError("records csv: unsupported schema " + v);
        }
    }
    if (!std::getline(in, line)) throw DataError("records csv: missing column row");
    std::size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> c;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) c.push_back(cell);
        if (c.size() != 8) throw DataError("records csv: line " + std::to_string(lineno) + " has wrong column count");
        try {
            f.records.push_back({c[0], std::stoull(c[1]), c[2], std::stoull(c[3]), std::stod(c[4]), std::stod(c[5]),
                                 std::stod(c[6]), std::stoull(c[7])});
        } catch (const std::logic_error&) {
            throw DataError("records csv: line " + std::to_string(lineno) + " is malformed");
        }
    }
    return f;
}

inline nlohmann::json to_json(const ContinuityMatrix& m, double sentinel) {
    return {{"channels", m.channels}, {"matrix", m.dense(sentinel)}, {"sentinel", sentinel}};
}

inline nlohmann::json to_json(const EvalRecord& r) {
    return {{"method", r.method},       {"episode", r.episode},       {"channel_id", r.channel_id},
            {"step", r.step},           {"raw_rate", r.raw_rate},     {"wmmse_rate", r.wmmse_rate},
            {"normalized_rate", r.normalized_rate}, {"seed", r.seed}};
}

}  // namespace metagate::metrics
