#pragma once

// Dual-loop meta-training and sequential online testing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "metagate/channels/generators.hpp"
#include "metagate/channels/realization.hpp"
#include "metagate/core/errors.hpp"
#include "metagate/core/optim.hpp"
#include "metagate/core/params.hpp"
#include "metagate/sumrate/wmmse.hpp"
#include "metagate/training/set_loss.hpp"

namespace metagate::training {

using channels::Task;

enum class MetaGradMode { first_order, unrolled };

struct TrainConfig {
    double outer_lr = 1e-4;
    double inner_lr = 1e-3;
    std::size_t batch = 5;
    std::size_t inner_steps = 2;
    std::size_t epochs = 200;
    OptimizerKind inner_opt = OptimizerKind::adam;
    MetaGradMode mode = MetaGradMode::first_order;
    bool update_theta = true;  // first-order meta update of the inner initialization
    AdamConfig adam;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(outer_lr > 0.0) || !(inner_lr > 0.0)) throw ConfigError("train: learning rates must be positive");
        if (batch < 1) throw ConfigError("train: batch size must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (mode == MetaGradMode::unrolled && inner_opt != OptimizerKind::sgd)
            throw ConfigError("train: unrolled meta-gradients require the sgd inner optimizer");
    }
};

struct TestConfig {
    std::size_t adapt_samples = 2;  // N_a
    std::size_t adapt_steps = 10;   // J_q
    double inner_lr = 1e-3;
    OptimizerKind inner_opt = OptimizerKind::adam;
    AdamConfig adam;
    std::uint64_t seed = 0;
};

struct EvalRecord {
    std::string method;
    std::size_t episode = 0;  // adaptation episode i
    std::string channel_id;   // channel evaluated
    std::size_t step = 0;     // adaptation steps taken
    double raw_rate = 0.0;
    double wmmse_rate = 0.0;
    double normalized_rate = 0.0;
    std::uint64_t seed = 0;
};

/// J steps on theta with phi frozen; the loss is the support-set mean.
template <class Model>
ParamVector inner_adapt(const Model& model, const ParamVector& theta, const ParamVector& phi,
                        std::span<const ChannelRealization> support, std::size_t steps, double lr,
                        OptimizerKind kind = OptimizerKind::adam, AdamConfig adam = {}) {
    require(!support.empty(), "inner_adapt: empty support set");
    ParamVector t = theta;
    if (steps == 0) return t;
    Optimizer opt(kind, t.size(), lr, adam);
    for (std::size_t j = 0; j < steps; ++j) {
        auto g = set_grad(model, support, t, phi, true, false);
        t = opt.step(t, g.g_theta);
    }
    return t;
}

struct MetaResult {
    ParamVector theta;
    ParamVector phi;
    std::vector<double> curve;  // mean query loss per epoch
    std::uint64_t tasks_consumed = 0;
};

/// Snapshot text attached to the error raised when the meta loss goes non-finite.
inline std::string nan_snapshot(std::size_t epoch, std::size_t task, const ParamVector& theta,
                                const ParamVector& phi) {
    auto stats = [](const ParamVector& p) {
        double mx = 0.0;
        std::size_t bad = 0;
        for (double v : p.values()) {
            if (!std::isfinite(v)) ++bad;
            else mx = std::max(mx, std::abs(v));
        }
        std::ostringstream s;
        s << "n=" << p.size() << " max|.|=" << mx << " nonfinite=" << bad;
        return s.str();
    };
    std::ostringstream s;
    s << "meta loss not finite at epoch " << epoch << ", task " << task << "; theta{" << stats(theta) << "} phi{"
      << stats(phi) << "}";
    return s.str();
}

/// Meta-gradients of one task's query loss after inner adaptation.
/// first_order: theta_J is treated as constant in (theta, phi).
/// unrolled: SGD inner steps are differentiated exactly through Hessian-vector products.
template <class Model>
SetGrad task_meta_grad(const Model& model, const Task& task, const ParamVector& theta, const ParamVector& phi,
                       const TrainConfig& cfg) {
    std::span<const ChannelRealization> S(task.support), Q(task.query);
    if (cfg.mode == MetaGradMode::first_order) {
        auto thetaJ = inner_adapt(model, theta, phi, S, cfg.inner_steps, cfg.inner_lr, cfg.inner_opt, cfg.adam);
        return set_grad(model, Q, thetaJ, phi, cfg.update_theta, true);
    }
    std::vector<ParamVector> traj{theta};
    for (std::size_t j = 0; j < cfg.inner_steps; ++j) {
        auto g = set_grad(model, S, traj.back(), phi, true, false);
        std::vector<double> next = traj.back().values();
        vec::axpy(-cfg.inner_lr, g.g_theta.values(), next);
        traj.push_back(theta.with_values(std::move(next)));
    }
    SetGrad out = set_grad(model, Q, traj.back(), phi, true, true);
    std::vector<double> a = out.g_theta.values();
    for (std::size_t j = cfg.inner_steps; j-- > 0;) {
        auto h = set_hvp(model, S, traj[j], phi, a);
        vec::axpy(-cfg.inner_lr, h.phi_theta, out.g_phi.values());
        vec::axpy(-cfg.inner_lr, h.theta_theta, a);
    }
    out.g_theta = theta.with_values(cfg.update_theta ? std::move(a) : std::vector<double>(theta.size(), 0.0));
    return out;
}

template <class Model>
MetaResult meta_train(const std::vector<Task>& tasks, const Model& model, const ParamVector& theta0,
                      const ParamVector& phi0, const TrainConfig& cfg,
                      const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (tasks.empty()) throw ContractViolation("meta_train: no tasks");
    cfg.validate();
    MetaResult r{theta0, phi0, {}, 0};
    Optimizer opt_theta(OptimizerKind::adam, theta0.size(), cfg.outer_lr, cfg.adam);
    Optimizer opt_phi(OptimizerKind::adam, phi0.size(), cfg.outer_lr, cfg.adam);
    std::mt19937_64 rng(channels::split_seed(cfg.seed, 0x7A5C));
    std::vector<std::size_t> order(tasks.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t B = std::min(cfg.batch, tasks.size());
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        // B distinct tasks per epoch.
        for (std::size_t i = 0; i < B; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        ParamVector gt = r.theta.zeros_like(), gp = r.phi.zeros_like();
        double meta_loss = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            SetGrad g;
            try {
                g = task_meta_grad(model, tasks[order[b]], r.theta, r.phi, cfg);
            } catch (const NumericError& err) {
                throw NumericError(err.primitive_name, std::string(err.what()) + "; " +
                                                           nan_snapshot(e, order[b], r.theta, r.phi));
            }
            if (!std::isfinite(g.loss))
                throw NumericError("meta_loss", nan_snapshot(e, order[b], r.theta, r.phi));
            meta_loss += g.loss;
            vec::axpy(1.0 / static_cast<double>(B), g.g_theta.values(), gt.values());
            vec::axpy(1.0 / static_cast<double>(B), g.g_phi.values(), gp.values());
        }
        r.tasks_consumed += B;
        r.phi = opt_phi.step(r.phi, gp);
        if (cfg.update_theta) r.theta = opt_theta.step(r.theta, gt);
        r.curve.push_back(meta_loss / static_cast<double>(B));
        if (on_epoch) on_epoch(e, r.curve.back());
    }
    return r;
}

/// Per-sample WMMSE rates used for normalization, cached per stream episode.
class WmmseOracle {
public:
    WmmseOracle(double p_max, std::size_t iters = 100, std::uint64_t seed = 0, std::size_t threads = 1)
        : p_max_(p_max), iters_(iters), seed_(seed), threads_(std::max<std::size_t>(1, threads)) {}

    [[nodiscard]] double p_max() const { return p_max_; }

    /// rates[e][i] for query sample i of episode e.
    [[nodiscard]] std::vector<std::vector<double>> query_rates(const std::vector<Task>& stream) const {
        std::vector<std::vector<double>> out(stream.size());
        for (std::size_t e = 0; e < stream.size(); ++e) out[e] = rates(stream[e].query, e);
        return out;
    }
    [[nodiscard]] std::vector<double> rates(std::span<const ChannelRealization> samples, std::uint64_t tag) const {
        std::vector<double> r(samples.size());
        // Each sample has its own seed, so the split across threads does not change results.
        auto work = [&](std::size_t first, std::size_t stride) {
            for (std::size_t i = first; i < samples.size(); i += stride)
                r[i] = sumrate::wmmse_solve(samples[i], p_max_, iters_, channels::split_seed(seed_, tag, i))
                           .report.weighted_sum_rate;
        };
        if (threads_ == 1) {
            work(0, 1);
            return r;
        }
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads_; ++t) pool.emplace_back(work, t, threads_);
        for (auto& th : pool) th.join();
        return r;
    }

private:
    double p_max_;
    std::size_t iters_;
    std::uint64_t seed_;
    std::size_t threads_;
};

struct RateSummary {
    double raw = 0.0;
    double wmmse = 0.0;
    double normalized = 0.0;
};

/// Mean raw rate, mean WMMSE rate, and mean per-sample ratio.
template <class Model>
RateSummary evaluate_set(const Model& model, std::span<const ChannelRealization> samples,
                         const std::vector<double>& wmmse, const ParamVector& theta, const ParamVector& phi) {
    require(samples.size() == wmmse.size() && !samples.empty(), "evaluate_set: oracle/sample mismatch");
    RateSummary s;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto V = model.forward(samples[i], theta, phi);
        require(V.feasible(model.p_max()), "power constraint violated by model output");
        const double r = sumrate::evaluate_rate(samples[i], V).weighted_sum_rate;
        s.raw += r;
        s.wmmse += wmmse[i];
        s.normalized += wmmse[i] > 0.0 ? r / wmmse[i] : 0.0;
    }
    const double n = static_cast<double>(samples.size());
    s.raw /= n;
    s.wmmse /= n;
    s.normalized /= n;
    return s;
}

/// N_a support indices drawn once per episode.
inline std::vector<std::size_t> pick_adaptation(std::size_t support_size, std::size_t n, std::uint64_t seed,
                                                std::size_t episode) {
    require(n >= 1 && n <= support_size, "adaptation sample count exceeds the support set");
    std::vector<std::size_t> idx(support_size);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(channels::split_seed(seed, 0xADA9, episode));
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, support_size - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
    return idx;
}

inline std::vector<ChannelRealization> select(const std::vector<ChannelRealization>& from,
                                              const std::vector<std::size_t>& idx) {
    std::vector<ChannelRealization> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(from[i]);
    return out;
}

/// Sequential test: per episode, adapt theta on N_a support samples for J_q
/// steps (phi frozen, theta carried across episodes) and evaluate on the query
/// sets of every episode seen so far.
template <class Model>
std::vector<EvalRecord> online_test(const Model& model, const ParamVector& theta_star, const ParamVector& phi_star,
                                    const std::vector<Task>& stream, const TestConfig& cfg,
                                    const std::vector<std::vector<double>>& wmmse, const std::string& method,
                                    ParamVector* theta_out = nullptr) {
    require(wmmse.size() == stream.size(), "online_test: oracle does not cover the stream");
    std::vector<EvalRecord> recs;
    ParamVector theta = theta_star;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto idx = pick_adaptation(stream[i].support.size(), cfg.adapt_samples, cfg.seed, i);
        const auto S = select(stream[i].support, idx);
        theta = inner_adapt(model, theta, phi_star, std::span<const ChannelRealization>(S), cfg.adapt_steps,
                            cfg.inner_lr, cfg.inner_opt, cfg.adam);
        for (std::size_t j = 0; j <= i; ++j) {
            auto s = evaluate_set(model, std::span<const ChannelRealization>(stream[j].query), wmmse[j], theta,
                                  phi_star);
            recs.push_back({method, i, stream[j].query.front().channel_id, cfg.adapt_steps, s.raw, s.wmmse,
                            s.normalized, cfg.seed});
        }
    }
    if (theta_out) *theta_out = theta;
    return recs;
}

/// Held-out query rate on each channel after 0..max(steps) adaptation steps
/// from the same initialization, recorded at the listed step counts.
template <class Model>
std::vector<EvalRecord> adaptation_curve(const Model& model, const ParamVector& theta_star,
                                         const ParamVector& phi_star, const std::vector<Task>& stream,
                                         const TestConfig& cfg, const std::vector<std::vector<double>>& wmmse,
                                         std::vector<std::size_t> steps, const std::string& method) {
    require(!steps.empty(), "adaptation_curve: no step counts");
    std::sort(steps.begin(), steps.end());
    std::vector<EvalRecord> recs;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto idx = pick_adaptation(stream[i].support.size(), cfg.adapt_samples, cfg.seed, i);
        const auto S = select(stream[i].support, idx);
        std::span<const ChannelRealization> Sp(S), Q(stream[i].query);
        ParamVector theta = theta_star;
        Optimizer opt(cfg.inner_opt, theta.size(), cfg.inner_lr, cfg.adam);
        std::size_t taken = 0;
        for (auto target : steps) {
            for (; taken < target; ++taken) theta = opt.step(theta, set_grad(model, Sp, theta, phi_star, true, false).g_theta);
            auto s = evaluate_set(model, Q, wmmse[i], theta, phi_star);
            recs.push_back({method, i, stream[i].query.front().channel_id, target, s.raw, s.wmmse, s.normalized,
                            cfg.seed});
        }
    }
    return recs;
}

}  // namespace metagate::training
