#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "metagate/channels/realization.hpp"
#include "metagate/core/errors.hpp"

namespace metagate::channels {

enum class Family { channel1, channel2, channel3, rayleigh, rician, geometric, nakagami };

inline std::string_view to_string(Family f) {
    switch (f) {
        case Family::channel1: return "channel1";
        case Family::channel2: return "channel2";
        case Family::channel3: return "channel3";
        case Family::rayleigh: return "rayleigh";
        case Family::rician: return "rician";
        case Family::geometric: return "geometric";
        case Family::nakagami: return "nakagami";
    }
    return "unknown";
}

inline Family family_from_string(std::string_view s) {
    for (Family f : {Family::channel1, Family::channel2, Family::channel3, Family::rayleigh, Family::rician,
                     Family::geometric, Family::nakagami})
        if (to_string(f) == s) return f;
    throw ConfigError("unknown channel family '" + std::string(s) + "'");
}

/// Large-scale fading applied to channel1..3, rayleigh and rician.
enum class PathLoss {
    none,          // unit gain; only family-specific shadowing applies
    log_distance,  // PL(dB) = slope * log10(d) + intercept, d in meters
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

struct ChannelModelConfig {
    Family family = Family::channel1;
    std::string id;  // channel tag carried by realizations; defaults to the family name
    std::size_t K = 10;
    std::size_t Nt = 8;
    double area = 1000.0;  // R, meters
    double d_min = 2.0;
    double d_max = 65.0;
    double k_factor = 0.0;  // Rician epsilon, linear
    double shadow_std_db = 0.0;
    double nakagami_m_lo = 1.0;
    double nakagami_m_hi = 1.0;
    double nakagami_omega = 1.0;
    double noise_power = 0.1;  // -10 dB
    double weight = 1.0;
    PathLoss path_loss = PathLoss::none;
    double pl_slope = 36.7;
    double pl_intercept = 22.7;

    [[nodiscard]] std::string tag() const { return id.empty() ? std::string(to_string(family)) : id; }

    void validate() const {
        if (K < 1 || Nt < 1) throw ConfigError("channel config: K and Nt must be >= 1");
        if (!(d_min < d_max) || !(d_max <= area))
            throw ConfigError("channel config: need d_min < d_max <= area");
        if (d_min < 0.0) throw ConfigError("channel config: d_min must be non-negative");
        if (k_factor < 0.0) throw ConfigError("channel config: K-factor must be >= 0");
        if (shadow_std_db < 0.0) throw ConfigError("channel config: shadowing std must be >= 0");
        if (!(noise_power > 0.0)) throw ConfigError("channel config: noise power must be positive");
        if (!(weight > 0.0)) throw ConfigError("channel config: weights must be positive");
        if (family == Family::nakagami) {
            if (!(nakagami_m_lo >= 0.5 && nakagami_m_lo <= nakagami_m_hi && nakagami_m_hi <= 2.0))
                throw ConfigError("channel config: nakagami m-range must lie within [0.5, 2]");
            if (!(nakagami_omega > 0.0)) throw ConfigError("channel config: nakagami omega must be positive");
        }
    }
};

/// Family presets. channel2 uses the 3 dB K-factor, channel3 the 8 dB shadowing.
inline ChannelModelConfig preset(Family f, std::size_t K, std::size_t Nt) {
    ChannelModelConfig c;
    c.family = f;
    c.K = K;
    c.Nt = Nt;
    switch (f) {
        case Family::channel2: c.k_factor = db_to_linear(3.0); break;
        case Family::channel3: c.shadow_std_db = 8.0; break;
        case Family::rician: c.k_factor = db_to_linear(3.0); break;
        case Family::geometric:
            c.area = 10.0;
            c.d_min = 1.0;
            c.d_max = 5.0;
            break;
        case Family::nakagami:
            c.nakagami_m_lo = 0.5;
            c.nakagami_m_hi = 2.0;
            break;
        default: break;
    }
    return c;
}

/// Counter-based seed splitting: independent stream per (seed, a, b).
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

/// |h|^2 = |r|^2 / (1 + d^2) for geometric fading.
inline double geometric_gain(cd r, double d) { return std::norm(r) / (1.0 + d * d); }

/// Uniform linear array response, element i phase exp(j*pi*i*sin(beta)), magnitude 1/sqrt(n).
inline std::vector<cd> ula_response(std::size_t n, double beta) {
    std::vector<cd> a(n);
    const double mag = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        a[i] = std::polar(mag, std::numbers::pi * static_cast<double>(i) * std::sin(beta));
    return a;
}

inline double path_loss_amplitude(const ChannelModelConfig& c, double d) {
    if (c.path_loss == PathLoss::none) return 1.0;
    const double pl_db = c.pl_slope * std::log10(std::max(d, 1e-3)) + c.pl_intercept;
    return std::pow(10.0, -pl_db / 20.0);
}

/// Draws one realization. A pure function of (config, seed).
///
/// Draw order is fixed: positions, NLoS coefficients, then family extras
/// (LoS angles, shadowing, Nakagami envelopes). Rician with K-factor 0 thus
/// reproduces the Rayleigh draw for the same seed.
inline ChannelRealization gen_channel(const ChannelModelConfig& c, std::uint64_t seed) {
    c.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;

    ChannelRealization ch(c.K, c.Nt, c.noise_power, c.tag());
    std::fill(ch.weights.begin(), ch.weights.end(), c.weight);

    Positions pos;
    pos.tx.resize(c.K);
    pos.rx.resize(c.K);
    for (std::size_t k = 0; k < c.K; ++k) {
        pos.tx[k] = {unit(rng) * c.area, unit(rng) * c.area};
        const double d = c.d_min + unit(rng) * (c.d_max - c.d_min);
        const double ang = unit(rng) * two_pi;
        pos.rx[k] = {pos.tx[k][0] + d * std::cos(ang), pos.tx[k][1] + d * std::sin(ang)};
    }

    const std::size_t links = c.K * c.K;
    const std::size_t n = links * c.Nt;
    std::vector<cd> nlos(n);
    if (c.family == Family::channel2) {
        for (auto& z : nlos) {
            const double re = (1.0 + normal(rng)) / 2.0;
            const double im = (1.0 + normal(rng)) / 2.0;
            z = {re, im};
        }
    } else if (c.family != Family::nakagami) {
        const double s = 1.0 / std::sqrt(2.0);
        for (auto& z : nlos) {
            const double re = normal(rng) * s;
            const double im = normal(rng) * s;
            z = {re, im};
        }
    }

    switch (c.family) {
        case Family::channel1:
        case Family::channel2:
        case Family::channel3:
        case Family::rayleigh:
        case Family::rician: {
            double eps = 0.0;
            if (c.family == Family::channel2 || c.family == Family::rician) eps = c.k_factor;
            const double shadow = c.shadow_std_db;
            const double a_los = std::sqrt(eps / (eps + 1.0));
            const double a_nlos = std::sqrt(1.0 / (eps + 1.0));
            for (std::size_t j = 0; j < c.K; ++j)
                for (std::size_t k = 0; k < c.K; ++k) {
                    const std::size_t link = j * c.K + k;
                    std::vector<cd> los(c.Nt, cd{});
                    if (c.family == Family::channel2 || c.family == Family::rician) {
                        const double bt = unit(rng) * two_pi;
                        const double br = unit(rng) * two_pi;
                        // Single receive antenna: alpha_r(beta_r) = 1.
                        const cd ar = std::conj(ula_response(1, br)[0]);
                        los = ula_response(c.Nt, bt);
                        for (auto& z : los) z *= ar;
                    }
                    double L = path_loss_amplitude(c, pos.distance(j, k));
                    if (shadow > 0.0) L *= std::pow(10.0, shadow * normal(rng) / 20.0);
                    auto h = ch.h(j, k);
                    for (std::size_t i = 0; i < c.Nt; ++i)
                        h[i] = L * (a_los * los[i] + a_nlos * nlos[link * c.Nt + i]);
                }
            break;
        }
        case Family::geometric: {
            for (std::size_t j = 0; j < c.K; ++j)
                for (std::size_t k = 0; k < c.K; ++k) {
                    const double d = pos.distance(j, k);
                    auto h = ch.h(j, k);
                    for (std::size_t i = 0; i < c.Nt; ++i)
                        h[i] = nlos[(j * c.K + k) * c.Nt + i] / std::sqrt(1.0 + d * d);
                }
            break;
        }
        case Family::nakagami: {
            const double m = c.nakagami_m_lo + unit(rng) * (c.nakagami_m_hi - c.nakagami_m_lo);
            std::gamma_distribution<double> gamma(m, c.nakagami_omega / m);
            for (auto& z : ch.H) {
                const double env = std::sqrt(gamma(rng));
                z = std::polar(env, unit(rng) * two_pi);
            }
            break;
        }
    }
    ch.positions = std::move(pos);
    return ch;
}

}  // namespace metagate::channels
