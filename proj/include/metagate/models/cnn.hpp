#pragma once

// Meta-gating CNN for single-antenna power control. Both branches read the
// K x K channel-magnitude grid, run conv+ReLU layers, one max-pool and one
// dense layer to K outputs; the gated output sigmoid(u ⊙ û) scales P_max.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "metagate/channels/realization.hpp"
#include "metagate/core/autodiff.hpp"
#include "metagate/core/params.hpp"
#include "metagate/models/rate_loss.hpp"
#include "metagate/sumrate/rate.hpp"

namespace metagate::models {

/// grid[j][k] = |h_jk|; with phase input, channel 0 = Re h_jk and channel 1 = Im h_jk.
struct PixelGrid {
    std::size_t K = 0;
    std::size_t channels = 1;
    std::vector<double> data;  // channels x K x K
};

inline PixelGrid grid_from_channel(const ChannelRealization& ch, bool with_phase = false) {
    if (ch.Nt != 1) throw ConfigError("CNN power control requires Nt == 1");
    PixelGrid g;
    g.K = ch.K;
    g.channels = with_phase ? 2 : 1;
    g.data.assign(g.channels * ch.K * ch.K, 0.0);
    for (std::size_t j = 0; j < ch.K; ++j)
        for (std::size_t k = 0; k < ch.K; ++k) {
            const auto h = ch.h(j, k)[0];
            if (with_phase) {
                g.data[j * ch.K + k] = h.real();
                g.data[ch.K * ch.K + j * ch.K + k] = h.imag();
            } else {
                g.data[j * ch.K + k] = std::abs(h);
            }
        }
    return g;
}

struct CnnArchitecture {
    std::size_t K = 10;
    std::vector<std::size_t> inner_channels{4, 8};
    std::vector<std::size_t> outer_channels{6, 8};
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t pool = 2;
    std::size_t pool_stride = 2;
    bool phase_input = false;

    [[nodiscard]] std::size_t in_channels() const { return phase_input ? 2 : 1; }

    /// Spatial side after the conv stack and pooling; throws if it collapses.
    [[nodiscard]] std::size_t pooled_side(std::size_t layers) const {
        long s = static_cast<long>(K);
        for (std::size_t l = 0; l < layers; ++l) {
            s = (s + 2 * static_cast<long>(padding) - static_cast<long>(kernel)) / static_cast<long>(stride) + 1;
            if (s < 1) throw ConfigError("CNN: feature map vanishes at conv layer " + std::to_string(l));
        }
        if (s < static_cast<long>(pool)) throw ConfigError("CNN: feature map smaller than pooling window");
        return static_cast<std::size_t>((s - static_cast<long>(pool)) / static_cast<long>(pool_stride) + 1);
    }

    void validate() const {
        if (K < 1 || inner_channels.empty() || outer_channels.empty())
            throw ConfigError("CNN: empty architecture");
        if (kernel < 1 || stride < 1 || pool < 1 || pool_stride < 1) throw ConfigError("CNN: zero kernel/stride");
        (void)pooled_side(inner_channels.size());
        (void)pooled_side(outer_channels.size());
    }
};

class CnnModel {
public:
    CnnModel(CnnArchitecture arch, double p_max, GateMode gate = GateMode::gated)
        : arch_(std::move(arch)), p_max_(p_max), gate_(gate) {
        arch_.validate();
        require(p_max > 0.0, "CnnModel: P_max must be positive");
        inner_ = std::make_shared<ParamLayout>(branch_layout(arch_.inner_channels));
        outer_ = std::make_shared<ParamLayout>(branch_layout(arch_.outer_channels));
    }

    [[nodiscard]] const CnnArchitecture& arch() const { return arch_; }
    [[nodiscard]] double p_max() const { return p_max_; }
    [[nodiscard]] GateMode gate() const { return gate_; }
    [[nodiscard]] CnnModel with_gate(GateMode g) const {
        CnnModel m = *this;
        m.gate_ = g;
        return m;
    }
    [[nodiscard]] CnnModel with_p_max(double p) const {
        require(p > 0.0, "CnnModel: P_max must be positive");
        CnnModel m = *this;
        m.p_max_ = p;
        return m;
    }
    [[nodiscard]] const std::shared_ptr<ParamLayout>& inner_layout() const { return inner_; }
    [[nodiscard]] const std::shared_ptr<ParamLayout>& outer_layout() const { return outer_; }
    [[nodiscard]] ParamVector init_inner(std::uint64_t seed) const { return ParamVector::init_uniform(inner_, seed); }
    [[nodiscard]] ParamVector init_outer(std::uint64_t seed) const { return ParamVector::init_uniform(outer_, seed); }

    /// Transmit powers on the tape, 1 x K, each in (0, P_max).
    template <class T>
    ad::Var<T> powers(ad::Tape<T>& tape, const PixelGrid& g, ad::Var<T> theta, ad::Var<T> phi) const {
        if (g.K != arch_.K || g.channels != arch_.in_channels())
            throw ContractViolation("CnnModel: grid shape does not match architecture");
        auto u = branch(tape, g, ParamView<T>(*inner_, theta), arch_.inner_channels);
        ad::Var<T> z = u;
        if (gate_ == GateMode::gated) {
            auto uh = branch(tape, g, ParamView<T>(*outer_, phi), arch_.outer_channels);
            if (uh.shape() != u.shape()) throw ContractViolation("gating: inner and outer output widths differ");
            z = ad::mul(u, uh);
        } else if (gate_ == GateMode::zeros) {
            z = ad::mul(u, tape.constant(Tensor<T>(u.shape(), T(0))));
        }
        return ad::scale(ad::sigmoid(z), p_max_);
    }

    /// Raw inner-branch FC output before gating, 1 x K.
    template <class T>
    ad::Var<T> inner_output(ad::Tape<T>& tape, const PixelGrid& g, ad::Var<T> theta) const {
        return branch(tape, g, ParamView<T>(*inner_, theta), arch_.inner_channels);
    }

    template <class T>
    ad::Var<T> loss(ad::Tape<T>& tape, const ChannelRealization& ch, ad::Var<T> theta, ad::Var<T> phi) const {
        return neg_sum_rate_powers(tape, powers(tape, grid_from_channel(ch, arch_.phase_input), theta, phi), ch);
    }

    [[nodiscard]] std::vector<double> forward_powers(const PixelGrid& g, const ParamVector& theta,
                                                     const ParamVector& phi) const {
        ad::Tape<double> tape;
        auto p = powers(tape, g, tape.constant(theta.as_tensor()), tape.constant(phi.as_tensor()));
        return p.value().data();
    }

    /// Real scalar beamformer v_k = sqrt(p_k).
    [[nodiscard]] sumrate::Beamformer forward(const ChannelRealization& ch, const ParamVector& theta,
                                              const ParamVector& phi) const {
        const auto p = forward_powers(grid_from_channel(ch, arch_.phase_input), theta, phi);
        sumrate::Beamformer b(ch.K, 1);
        for (std::size_t k = 0; k < ch.K; ++k) b.at(k, 0) = std::sqrt(p[k]);
        return b;
    }

private:
    [[nodiscard]] ParamLayout branch_layout(const std::vector<std::size_t>& chans) const {
        ParamLayout layout;
        std::size_t cin = arch_.in_channels();
        const std::size_t kk = arch_.kernel * arch_.kernel;
        for (std::size_t l = 0; l < chans.size(); ++l) {
            const std::string p = "conv" + std::to_string(l);
            layout.add(p + ".w", {chans[l], cin, arch_.kernel, arch_.kernel}, cin * kk);
            layout.add(p + ".b", {chans[l]}, cin * kk);
            cin = chans[l];
        }
        const std::size_t side = arch_.pooled_side(chans.size());
        const std::size_t flat = cin * side * side;
        layout.add("fc.w", {flat, arch_.K}, flat);
        layout.add("fc.b", {arch_.K}, flat);
        return layout;
    }

    template <class T>
    ad::Var<T> branch(ad::Tape<T>& tape, const PixelGrid& g, const ParamView<T>& p,
                      const std::vector<std::size_t>& chans) const {
        std::vector<T> pix(g.data.begin(), g.data.end());
        ad::Var<T> x = tape.constant(Tensor<T>({g.channels, g.K, g.K}, std::move(pix)));
        for (std::size_t l = 0; l < chans.size(); ++l) {
            const std::string q = "conv" + std::to_string(l);
            x = ad::relu(ad::conv2d(x, p[q + ".w"], p[q + ".b"], arch_.stride, arch_.padding));
        }
        x = ad::maxpool2d(x, arch_.pool, arch_.pool_stride);
        x = ad::reshape(x, {1, x.value().size()});
        return ad::add_bias(ad::matmul(x, p["fc.w"]), p["fc.b"]);
    }

    CnnArchitecture arch_;
    double p_max_;
    GateMode gate_;
    std::shared_ptr<ParamLayout> inner_;
    std::shared_ptr<ParamLayout> outer_;
};

}  // namespace metagate::models
