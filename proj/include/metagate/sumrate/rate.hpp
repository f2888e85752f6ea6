#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "metagate/channels/realization.hpp"
#include "metagate/core/errors.hpp"

namespace metagate::sumrate {

using channels::cd;
using channels::ChannelRealization;

/// K x Nt complex transmit weights; row k is v_k.
struct Beamformer {
    std::size_t K = 0;
    std::size_t Nt = 0;
    std::vector<cd> V;

    Beamformer() = default;
    Beamformer(std::size_t k, std::size_t nt) : K(k), Nt(nt), V(k * nt) {}

    [[nodiscard]] cd& at(std::size_t k, std::size_t i) { return V[k * Nt + i]; }
    [[nodiscard]] const cd& at(std::size_t k, std::size_t i) const { return V[k * Nt + i]; }

    [[nodiscard]] double power(std::size_t k) const {
        double p = 0.0;
        for (std::size_t i = 0; i < Nt; ++i) p += std::norm(at(k, i));
        return p;
    }
    [[nodiscard]] bool feasible(double p_max, double tol = 1e-9) const {
        for (std::size_t k = 0; k < K; ++k)
            if (power(k) > p_max + tol) return false;
        return true;
    }
};

struct RateReport {
    std::vector<double> per_user_sinr;
    std::vector<double> per_user_rate;  // bits/s/Hz
    double weighted_sum_rate = 0.0;
};

/// h^H v
inline cd inner(std::span<const cd> h, std::span<const cd> v) {
    cd s{};
    for (std::size_t i = 0; i < h.size(); ++i) s += std::conj(h[i]) * v[i];
    return s;
}

inline std::span<const cd> row(const Beamformer& b, std::size_t k) { return {b.V.data() + k * b.Nt, b.Nt}; }

inline RateReport evaluate_rate(const ChannelRealization& ch, const Beamformer& V) {
    require(V.K == ch.K && V.Nt == ch.Nt && V.V.size() == ch.K * ch.Nt,
            "evaluate_rate: beamformer shape does not match channel");
    RateReport r;
    r.per_user_sinr.resize(ch.K);
    r.per_user_rate.resize(ch.K);
    for (std::size_t k = 0; k < ch.K; ++k) {
        double interference = 0.0;
        for (std::size_t j = 0; j < ch.K; ++j)
            if (j != k) interference += std::norm(inner(ch.h(j, k), row(V, j)));
        const double signal = std::norm(inner(ch.h(k, k), row(V, k)));
        r.per_user_sinr[k] = signal / (interference + ch.noise_power);
        r.per_user_rate[k] = std::log2(1.0 + r.per_user_sinr[k]);
        r.weighted_sum_rate += ch.weights[k] * r.per_user_rate[k];
    }
    return r;
}

/// Full-power maximum-ratio transmission: v_k = sqrt(P) h_kk / ||h_kk||.
inline Beamformer mrt(const ChannelRealization& ch, double p_max) {
    Beamformer b(ch.K, ch.Nt);
    for (std::size_t k = 0; k < ch.K; ++k) {
        auto h = ch.h(k, k);
        double n = 0.0;
        for (const auto& z : h) n += std::norm(z);
        n = std::sqrt(n);
        for (std::size_t i = 0; i < ch.Nt; ++i) b.at(k, i) = n > 0 ? std::sqrt(p_max) * h[i] / n : cd{};
    }
    return b;
}

}  // namespace metagate::sumrate
