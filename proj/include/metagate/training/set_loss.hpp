#pragma once

// Mean loss over a set of realizations plus its gradients with respect to
// the inner (theta) and outer (phi) parameter vectors. Works for any model
// exposing `loss<T>(tape, ch, theta_var, phi_var)`.

#include <span>
#include <vector>

#include "metagate/channels/realization.hpp"
#include "metagate/core/autodiff.hpp"
#include "metagate/core/params.hpp"

namespace metagate::training {

using channels::ChannelRealization;

struct SetGrad {
    double loss = 0.0;
    ParamVector g_theta;
    ParamVector g_phi;
};

template <class Model>
double set_loss(const Model& model, std::span<const ChannelRealization> samples, const ParamVector& theta,
                const ParamVector& phi) {
    require(!samples.empty(), "set_loss: empty sample set");
    double total = 0.0;
    for (const auto& ch : samples) {
        ad::Tape<double> tape;
        auto t = tape.constant(theta.as_tensor());
        auto p = tape.constant(phi.as_tensor());
        total += model.loss(tape, ch, t, p).value()[0];
    }
    return total / static_cast<double>(samples.size());
}

/// Loss and gradients of the set mean. Gradients not requested come back as zeros.
template <class Model>
SetGrad set_grad(const Model& model, std::span<const ChannelRealization> samples, const ParamVector& theta,
                 const ParamVector& phi, bool want_theta = true, bool want_phi = true) {
    require(!samples.empty(), "set_grad: empty sample set");
    SetGrad out{0.0, theta.zeros_like(), phi.zeros_like()};
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (const auto& ch : samples) {
        ad::Tape<double> tape;
        auto t = want_theta ? tape.variable(theta.as_tensor()) : tape.constant(theta.as_tensor());
        auto p = want_phi ? tape.variable(phi.as_tensor()) : tape.constant(phi.as_tensor());
        auto loss = model.loss(tape, ch, t, p);
        out.loss += loss.value()[0] * inv;
        if (!want_theta && !want_phi) continue;
        std::vector<ad::Var<double>> wrt{t, p};
        auto g = tape.gradient(loss, std::span<const ad::Var<double>>(wrt));
        if (want_theta) vec::axpy(inv, g[0].data(), out.g_theta.values());
        if (want_phi) vec::axpy(inv, g[1].data(), out.g_phi.values());
    }
    return out;
}

/// Per-sample gradients with respect to both parameter vectors, concatenated (theta first).
template <class Model>
std::vector<double> sample_grad_joint(const Model& model, const ChannelRealization& ch, const ParamVector& theta,
                                      const ParamVector& phi) {
    ad::Tape<double> tape;
    auto t = tape.variable(theta.as_tensor());
    auto p = tape.variable(phi.as_tensor());
    auto loss = model.loss(tape, ch, t, p);
    std::vector<ad::Var<double>> wrt{t, p};
    auto g = tape.gradient(loss, std::span<const ad::Var<double>>(wrt));
    std::vector<double> out = std::move(g[0].data());
    out.insert(out.end(), g[1].data().begin(), g[1].data().end());
    return out;
}

struct Hvp {
    std::vector<double> theta_theta;  // H_{theta theta} a
    std::vector<double> phi_theta;    // H_{phi theta} a
};

/// Exact Hessian-vector products of the set-mean loss in direction `a` on
/// theta, via a reverse sweep over dual numbers.
template <class Model>
Hvp set_hvp(const Model& model, std::span<const ChannelRealization> samples, const ParamVector& theta,
            const ParamVector& phi, const std::vector<double>& a) {
    require(!samples.empty(), "set_hvp: empty sample set");
    require(a.size() == theta.size(), "set_hvp: direction length mismatch");
    using D = Dual<double>;
    Hvp out{std::vector<double>(theta.size(), 0.0), std::vector<double>(phi.size(), 0.0)};
    const double inv = 1.0 / static_cast<double>(samples.size());
    const std::vector<double> zero(phi.size(), 0.0);
    for (const auto& ch : samples) {
        ad::Tape<D> tape;
        auto t = tape.variable(lift<D>(theta.values(), a));
        auto p = tape.variable(lift<D>(phi.values(), zero));
        auto loss = model.loss(tape, ch, t, p);
        std::vector<ad::Var<D>> wrt{t, p};
        auto g = tape.gradient(loss, std::span<const ad::Var<D>>(wrt));
        for (std::size_t i = 0; i < out.theta_theta.size(); ++i) out.theta_theta[i] += inv * g[0][i].d;
        for (std::size_t i = 0; i < out.phi_theta.size(); ++i) out.phi_theta[i] += inv * g[1][i].d;
    }
    return out;
}

}  // namespace metagate::training
