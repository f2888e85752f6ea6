#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "metagate/core/errors.hpp"
#include "metagate/core/params.hpp"

namespace metagate {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step_count = 0;
    AdamConfig cfg;

    AdamState() = default;
    explicit AdamState(std::size_t n, AdamConfig c = {}) : m(n, 0.0), v(n, 0.0), cfg(c) {}
};

/// One bias-corrected Adam step. Inputs are not modified.
inline std::pair<ParamVector, AdamState> adam_step(const ParamVector& params, const ParamVector& grads,
                                                   const AdamState& state, double lr) {
    require(lr > 0.0, "adam_step: learning rate must be positive");
    require(grads.size() == params.size() && state.m.size() == params.size() &&
                state.v.size() == params.size(),
            "adam_step: dimension mismatch between params, grads and state");
    AdamState next = state;
    next.step_count += 1;
    const auto& c = state.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(next.step_count));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(next.step_count));
    std::vector<double> out = params.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double g = grads[i];
        next.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        next.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        const double mhat = next.m[i] / bc1;
        const double vhat = next.v[i] / bc2;
        out[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    return {params.with_values(std::move(out)), std::move(next)};
}

enum class OptimizerKind { adam, sgd };

/// Stateful wrapper used by the training loops: Adam or plain SGD.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, std::size_t n, double lr, AdamConfig cfg = {})
        : kind_(kind), lr_(lr), adam_(n, cfg) {
        require(lr > 0.0, "Optimizer: learning rate must be positive");
    }

    [[nodiscard]] ParamVector step(const ParamVector& params, const ParamVector& grads) {
        if (kind_ == OptimizerKind::sgd) {
            require(grads.size() == params.size(), "sgd step: dimension mismatch");
            std::vector<double> out = params.values();
            vec::axpy(-lr_, grads.values(), out);
            return params.with_values(std::move(out));
        }
        auto [p, s] = adam_step(params, grads, adam_, lr_);
        adam_ = std::move(s);
        return p;
    }

    [[nodiscard]] OptimizerKind kind() const { return kind_; }
    [[nodiscard]] double lr() const { return lr_; }

private:
    OptimizerKind kind_;
    double lr_;
    AdamState adam_;
};

}  // namespace metagate
