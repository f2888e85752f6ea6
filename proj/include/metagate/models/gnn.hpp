#pragma once

// Meta-gating message-passing GNN for multi-antenna beamforming.
//
// Each layer of each branch computes, per node k,
//   m_jk = MLP_msg([x_j, alpha_jk])           for every neighbour j != k
//   x_k  = MLP_upd([x_k, max_j m_jk])
// The final inner and outer states (width 2Nt) are multiplied elementwise and
// projected by sigma(y) = y / max(||y||_2, 1), then scaled by sqrt(P_max).

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

using channels::cd;

/// Graph view of a realization: node k = transceiver pair k.
struct GraphSample {
    std::size_t K = 0;
    std::size_t Nt = 0;
    std::vector<cd> Z;      // K x (Nt+2): [h_kk, w_k, sigma^2]
    std::vector<cd> alpha;  // K x K x Nt: alpha[j][k] = h_jk for j != k, zero vector on the diagonal

    [[nodiscard]] std::size_t num_edges() const { return K * (K - 1); }
    [[nodiscard]] const cd& z(std::size_t k, std::size_t c) const { return Z[k * (Nt + 2) + c]; }
    [[nodiscard]] const cd& a(std::size_t j, std::size_t k, std::size_t i) const {
        return alpha[(j * K + k) * Nt + i];
    }
};

inline GraphSample graph_from_channel(const ChannelRealization& ch) {
    GraphSample g;
    g.K = ch.K;
    g.Nt = ch.Nt;
    g.Z.resize(ch.K * (ch.Nt + 2));
    g.alpha.assign(ch.K * ch.K * ch.Nt, cd{});
    for (std::size_t k = 0; k < ch.K; ++k) {
        auto h = ch.h(k, k);
        for (std::size_t i = 0; i < ch.Nt; ++i) g.Z[k * (ch.Nt + 2) + i] = h[i];
        g.Z[k * (ch.Nt + 2) + ch.Nt] = ch.weights[k];
        g.Z[k * (ch.Nt + 2) + ch.Nt + 1] = ch.noise_power;
    }
    for (std::size_t j = 0; j < ch.K; ++j)
        for (std::size_t k = 0; k < ch.K; ++k) {
            if (j == k) continue;
            auto h = ch.h(j, k);
            for (std::size_t i = 0; i < ch.Nt; ++i) g.alpha[(j * ch.K + k) * ch.Nt + i] = h[i];
        }
    return g;
}

struct GnnArchitecture {
    std::size_t Nt = 8;
    std::size_t inner_layers = 2;
    std::size_t outer_layers = 3;
    std::vector<std::size_t> msg_hidden{64, 64};  // MLP1 / MLP3 widths after the input
    std::vector<std::size_t> upd_hidden{32};      // MLP2 / MLP4 hidden widths; output is 2Nt

    [[nodiscard]] std::size_t node_in() const { return 2 * Nt + 2; }
    [[nodiscard]] std::size_t edge_in() const { return 2 * Nt; }
    [[nodiscard]] std::size_t out_width() const { return 2 * Nt; }

    void validate() const {
        require(Nt >= 1 && inner_layers >= 1 && outer_layers >= 1, "GnnArchitecture: empty network");
        require(!msg_hidden.empty(), "GnnArchitecture: message MLP needs at least one layer");
    }
};

namespace detail {

inline void add_mlp(ParamLayout& layout, const std::string& prefix, std::size_t in,
                    const std::vector<std::size_t>& widths) {
    std::size_t prev = in;
    for (std::size_t l = 0; l < widths.size(); ++l) {
        const std::string p = prefix + ".l" + std::to_string(l);
        layout.add(p + ".w", {prev, widths[l]}, prev);
        layout.add(p + ".b", {widths[l]}, prev);
        prev = widths[l];
    }
}

/// Dense layers; ReLU after every layer except (optionally) the last.
template <class T>
ad::Var<T> run_mlp(ad::Var<T> x, const ParamView<T>& p, const std::string& prefix, std::size_t depth,
                   bool relu_last) {
    for (std::size_t l = 0; l < depth; ++l) {
        const std::string q = prefix + ".l" + std::to_string(l);
        x = ad::add_bias(ad::matmul(x, p[q + ".w"]), p[q + ".b"]);
        if (l + 1 < depth || relu_last) x = ad::relu(x);
    }
    return x;
}

}  // namespace detail

class GnnModel {
public:
    GnnModel(GnnArchitecture arch, double p_max, GateMode gate = GateMode::gated)
        : arch_(std::move(arch)), p_max_(p_max), gate_(gate) {
        arch_.validate();
        require(p_max > 0.0, "GnnModel: P_max must be positive");
        inner_ = std::make_shared<ParamLayout>(branch_layout(arch_.inner_layers));
        outer_ = std::make_shared<ParamLayout>(branch_layout(arch_.outer_layers));
    }

    [[nodiscard]] const GnnArchitecture& arch() const { return arch_; }
    [[nodiscard]] double p_max() const { return p_max_; }
    [[nodiscard]] GateMode gate() const { return gate_; }
    [[nodiscard]] GnnModel with_gate(GateMode g) const {
        GnnModel m = *this;
        m.gate_ = g;
        return m;
    }
    [[nodiscard]] GnnModel with_p_max(double p) const {
        GnnModel m = *this;
        require(p > 0.0, "GnnModel: P_max must be positive");
        m.p_max_ = p;
        return m;
    }
    [[nodiscard]] const std::shared_ptr<ParamLayout>& inner_layout() const { return inner_; }
    [[nodiscard]] const std::shared_ptr<ParamLayout>& outer_layout() const { return outer_; }

    [[nodiscard]] ParamVector init_inner(std::uint64_t seed) const { return ParamVector::init_uniform(inner_, seed); }
    [[nodiscard]] ParamVector init_outer(std::uint64_t seed) const { return ParamVector::init_uniform(outer_, seed); }

    /// Projected transmit weights on the tape: K x 2Nt, row k = sqrt(P)[Re v_k, Im v_k].
    template <class T>
    ad::Var<T> beamformer(ad::Tape<T>& tape, const GraphSample& g, ad::Var<T> theta, ad::Var<T> phi) const {
        require(g.Nt == arch_.Nt, "GnnModel: antenna count does not match architecture");
        auto x_in = branch(tape, g, ParamView<T>(*inner_, theta), arch_.inner_layers);
        ad::Var<T> y = x_in;
        if (gate_ == GateMode::gated) {
            auto x_out = branch(tape, g, ParamView<T>(*outer_, phi), arch_.outer_layers);
            if (x_out.shape() != x_in.shape())
                throw ContractViolation("gating: inner and outer output widths differ");
            y = ad::mul(x_in, x_out);
        } else if (gate_ == GateMode::zeros) {
            y = ad::mul(x_in, tape.constant(Tensor<T>(x_in.shape(), T(0))));
        }
        auto denom = ad::maximum(ad::row_norm2(y), 1.0);
        return ad::scale(ad::div_rows(y, denom), std::sqrt(p_max_));
    }

    /// Raw inner-branch output before gating and projection, K x 2Nt.
    template <class T>
    ad::Var<T> inner_output(ad::Tape<T>& tape, const GraphSample& g, ad::Var<T> theta) const {
        return branch(tape, g, ParamView<T>(*inner_, theta), arch_.inner_layers);
    }

    template <class T>
    ad::Var<T> loss(ad::Tape<T>& tape, const ChannelRealization& ch, ad::Var<T> theta, ad::Var<T> phi) const {
        return neg_sum_rate(tape, beamformer(tape, graph_from_channel(ch), theta, phi), ch);
    }

    [[nodiscard]] sumrate::Beamformer forward(const GraphSample& g, const ParamVector& theta,
                                              const ParamVector& phi) const {
        ad::Tape<double> tape;
        auto V = beamformer(tape, g, tape.constant(theta.as_tensor()), tape.constant(phi.as_tensor()));
        sumrate::Beamformer b(g.K, g.Nt);
        for (std::size_t k = 0; k < g.K; ++k)
            for (std::size_t i = 0; i < g.Nt; ++i)
                b.at(k, i) = {V.value().at(k, i), V.value().at(k, g.Nt + i)};
        return b;
    }
    [[nodiscard]] sumrate::Beamformer forward(const ChannelRealization& ch, const ParamVector& theta,
                                              const ParamVector& phi) const {
        return forward(graph_from_channel(ch), theta, phi);
    }

private:
    [[nodiscard]] ParamLayout branch_layout(std::size_t layers) const {
        ParamLayout layout;
        std::size_t d = arch_.node_in();
        std::vector<std::size_t> upd = arch_.upd_hidden;
        upd.push_back(arch_.out_width());
        for (std::size_t n = 0; n < layers; ++n) {
            const std::string p = "layer" + std::to_string(n);
            detail::add_mlp(layout, p + ".msg", d + arch_.edge_in(), arch_.msg_hidden);
            detail::add_mlp(layout, p + ".upd", d + arch_.msg_hidden.back(), upd);
            d = arch_.out_width();
        }
        return layout;
    }

    template <class T>
    ad::Var<T> branch(ad::Tape<T>& tape, const GraphSample& g, const ParamView<T>& p, std::size_t layers) const {
        const std::size_t K = g.K, Nt = g.Nt;
        Tensor<T> nodes = Tensor<T>::matrix(K, 2 * Nt + 2);
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t i = 0; i < Nt; ++i) {
                nodes.at(k, i) = T(g.z(k, i).real());
                nodes.at(k, Nt + i) = T(g.z(k, i).imag());
            }
            nodes.at(k, 2 * Nt) = T(g.z(k, Nt).real());
            nodes.at(k, 2 * Nt + 1) = T(g.z(k, Nt + 1).real());
        }
        // Edges grouped by destination k, sources j ascending.
        const std::size_t E = g.num_edges();
        Tensor<T> edges = Tensor<T>::matrix(E, 2 * Nt);
        std::vector<std::size_t> src, dst;
        src.reserve(E);
        dst.reserve(E);
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < K; ++j) {
                if (j == k) continue;
                const std::size_t e = src.size();
                for (std::size_t i = 0; i < Nt; ++i) {
                    edges.at(e, i) = T(g.a(j, k, i).real());
                    edges.at(e, Nt + i) = T(g.a(j, k, i).imag());
                }
                src.push_back(j);
                dst.push_back(k);
            }
        ad::Var<T> x = tape.constant(std::move(nodes));
        const ad::Var<T> a = tape.constant(std::move(edges));
        const std::size_t msg_depth = arch_.msg_hidden.size();
        const std::size_t upd_depth = arch_.upd_hidden.size() + 1;
        for (std::size_t n = 0; n < layers; ++n) {
            const std::string q = "layer" + std::to_string(n);
            auto msg_in = ad::concat_cols<T>({ad::gather_rows(x, src), a});
            auto msg = detail::run_mlp(msg_in, p, q + ".msg", msg_depth, true);
            auto agg = ad::segment_max(msg, dst, K);
            x = detail::run_mlp(ad::concat_cols<T>({x, agg}), p, q + ".upd", upd_depth, false);
        }
        return x;
    }

    GnnArchitecture arch_;
    double p_max_;
    GateMode gate_;
    std::shared_ptr<ParamLayout> inner_;
    std::shared_ptr<ParamLayout> outer_;
};

}  // namespace metagate::models
