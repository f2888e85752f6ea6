#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metagate/core/errors.hpp"

namespace metagate::channels {

using cd = std::complex<double>;

struct Positions {
    std::vector<std::array<double, 2>> tx;  // K transmitters, meters
    std::vector<std::array<double, 2>> rx;  // K receivers, meters

    [[nodiscard]] double distance(std::size_t j, std::size_t k) const {
        return std::hypot(tx[j][0] - rx[k][0], tx[j][1] - rx[k][1]);
    }

    friend bool operator==(const Positions&, const Positions&) = default;
};

/// One CSI draw. H is stored as K x K x Nt with H[j][k] = h_jk, the channel
/// from transmitter j to receiver k.
struct ChannelRealization {
    std::size_t K = 0;
    std::size_t Nt = 0;
    std::vector<cd> H;
    std::vector<double> weights;
    double noise_power = 1.0;
    std::string channel_id;
    std::optional<Positions> positions;

    ChannelRealization() = default;
    ChannelRealization(std::size_t k, std::size_t nt, double noise, std::string id)
        : K(k), Nt(nt), H(k * k * nt), weights(k, 1.0), noise_power(noise), channel_id(std::move(id)) {}

    [[nodiscard]] std::span<const cd> h(std::size_t j, std::size_t k) const {
        return {H.data() + (j * K + k) * Nt, Nt};
    }
    [[nodiscard]] std::span<cd> h(std::size_t j, std::size_t k) { return {H.data() + (j * K + k) * Nt, Nt}; }

    void validate() const {
        require(K >= 1 && Nt >= 1, "ChannelRealization: K and Nt must be positive");
        require(H.size() == K * K * Nt, "ChannelRealization: H has wrong size");
        require(weights.size() == K, "ChannelRealization: weights must have K entries");
        require(noise_power > 0.0, "ChannelRealization: noise power must be positive");
        for (double w : weights) require(w > 0.0, "ChannelRealization: weights must be positive");
        for (const auto& z : H)
            require(std::isfinite(z.real()) && std::isfinite(z.imag()), "ChannelRealization: non-finite entry");
    }

    friend bool operator==(const ChannelRealization&, const ChannelRealization&) = default;
};

/// Support/query split of realizations.
struct Task {
    std::vector<ChannelRealization> support;
    std::vector<ChannelRealization> query;
};

}  // namespace metagate::channels
