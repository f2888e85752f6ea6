#pragma once

// Comparison methods. Joint, mismatch, TL and EWC train the gated network as
// one model over the combined (theta, phi) parameters; wogate reuses the meta
// procedure with the outer output pinned to ones.

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metagate/channels/generators.hpp"
#include "metagate/core/errors.hpp"
#include "metagate/core/optim.hpp"
#include "metagate/core/params.hpp"
#include "metagate/training/meta.hpp"
#include "metagate/training/set_loss.hpp"

namespace metagate::baselines {

using channels::ChannelRealization;
using channels::Task;
using training::EvalRecord;
using training::TestConfig;

enum class Kind { joint, mismatch, tl, ewc, wogate };

inline std::string_view to_string(Kind k) {
    switch (k) {
        case Kind::joint: return "joint";
        case Kind::mismatch: return "mismatch";
        case Kind::tl: return "tl";
        case Kind::ewc: return "ewc";
        case Kind::wogate: return "wogate";
    }
    return "unknown";
}

inline Kind kind_from_string(std::string_view s) {
    for (Kind k : {Kind::joint, Kind::mismatch, Kind::tl, Kind::ewc, Kind::wogate})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown baseline kind '" + std::string(s) + "'");
}

struct BaselineSpec {
    Kind kind = Kind::joint;
    std::string mismatch_channel = "channel3";
    std::string tl_pretrain_channel = "channel1";
    double ewc_weight = 1e4;         // w_p
    std::size_t fisher_samples = 0;  // 0 = whole support set of the finished episode

    void validate() const {
        if (!(ewc_weight >= 0.0)) throw ConfigError("baseline: EWC weight must be >= 0");
    }
};

/// Joint (theta, phi) pair handled as one network.
struct JointParams {
    ParamVector theta;
    ParamVector phi;

    [[nodiscard]] std::vector<double> flat() const {
        std::vector<double> v = theta.values();
        v.insert(v.end(), phi.values().begin(), phi.values().end());
        return v;
    }
    [[nodiscard]] JointParams with_flat(const std::vector<double>& v) const {
        require(v.size() == theta.size() + phi.size(), "JointParams: length mismatch");
        return {theta.with_values({v.begin(), v.begin() + static_cast<long>(theta.size())}),
                phi.with_values({v.begin() + static_cast<long>(theta.size()), v.end()})};
    }
};

/// Diagonal empirical Fisher: mean over samples of squared per-sample loss gradients.
template <class Model>
std::vector<double> fisher_diag(const Model& model, const JointParams& p, std::span<const ChannelRealization> samples) {
    require(!samples.empty(), "fisher_diag: no samples");
    std::vector<double> F(p.theta.size() + p.phi.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (const auto& ch : samples) {
        const auto g = training::sample_grad_joint(model, ch, p.theta, p.phi);
        for (std::size_t i = 0; i < F.size(); ++i) F[i] += inv * g[i] * g[i];
    }
    return F;
}

struct EwcAnchor {
    std::vector<double> params;
    std::vector<double> fisher;
};

/// (w_p / 2) sum_a sum_i F_a,i (x_i - anchor_a,i)^2
inline double ewc_penalty(const std::vector<double>& x, const std::vector<EwcAnchor>& anchors, double w_p) {
    double s = 0.0;
    for (const auto& a : anchors)
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - a.params[i];
            s += a.fisher[i] * d * d;
        }
    return 0.5 * w_p * s;
}

inline void add_ewc_grad(const std::vector<double>& x, const std::vector<EwcAnchor>& anchors, double w_p,
                         std::vector<double>& g) {
    for (const auto& a : anchors)
        for (std::size_t i = 0; i < x.size(); ++i) g[i] += w_p * a.fisher[i] * (x[i] - a.params[i]);
}

/// Loss and gradient over the combined parameters, with optional EWC penalty.
template <class Model>
std::pair<double, std::vector<double>> joint_grad(const Model& model, const JointParams& p,
                                                  std::span<const ChannelRealization> samples,
                                                  const std::vector<EwcAnchor>& anchors = {}, double w_p = 0.0) {
    auto g = training::set_grad(model, samples, p.theta, p.phi, true, true);
    JointParams gp{g.g_theta, g.g_phi};
    std::vector<double> flat = gp.flat();
    double loss = g.loss;
    if (!anchors.empty() && w_p > 0.0) {
        const auto x = p.flat();
        add_ewc_grad(x, anchors, w_p, flat);
        loss += ewc_penalty(x, anchors, w_p);
    }
    return {loss, std::move(flat)};
}

struct JointTrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 200;
    std::size_t batch_samples = 85;  // matches B x (support + query) of the meta procedure
    AdamConfig adam;
    std::uint64_t seed = 0;
};

/// Single-loop unsupervised training on a pooled sample set.
template <class Model>
JointParams train_joint(const Model& model, const std::vector<ChannelRealization>& pool, JointParams p,
                        const JointTrainConfig& cfg, std::vector<double>* curve = nullptr) {
    if (pool.empty()) throw ContractViolation("train_joint: empty training pool");
    const std::size_t n = p.theta.size() + p.phi.size();
    Optimizer opt(OptimizerKind::adam, n, cfg.lr, cfg.adam);
    ParamVector flat(std::make_shared<ParamLayout>(ParamLayout().add("all", {n})), p.flat());
    std::mt19937_64 rng(channels::split_seed(cfg.seed, 0x10E7));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t bs = std::min(cfg.batch_samples, pool.size());
    std::vector<ChannelRealization> batch;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        for (std::size_t i = 0; i < bs; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        batch.clear();
        for (std::size_t i = 0; i < bs; ++i) batch.push_back(pool[order[i]]);
        auto [loss, g] = joint_grad(model, p, std::span<const ChannelRealization>(batch));
        if (!std::isfinite(loss)) throw NumericError("joint_loss", "training loss not finite at epoch " + std::to_string(e));
        if (curve) curve->push_back(loss);
        flat = opt.step(flat, flat.with_values(std::move(g)));
        p = p.with_flat(flat.values());
    }
    return p;
}

/// Fine-tunes the combined parameters on `support` with the test-time optimizer.
template <class Model>
JointParams finetune_joint(const Model& model, JointParams p, std::span<const ChannelRealization> support,
                           const TestConfig& cfg, const std::vector<EwcAnchor>& anchors = {}, double w_p = 0.0) {
    if (cfg.adapt_steps == 0) return p;
    const std::size_t n = p.theta.size() + p.phi.size();
    Optimizer opt(cfg.inner_opt, n, cfg.inner_lr, cfg.adam);
    ParamVector flat(std::make_shared<ParamLayout>(ParamLayout().add("all", {n})), p.flat());
    for (std::size_t j = 0; j < cfg.adapt_steps; ++j) {
        auto [loss, g] = joint_grad(model, p, support, anchors, w_p);
        flat = opt.step(flat, flat.with_values(std::move(g)));
        p = p.with_flat(flat.values());
    }
    return p;
}

struct SequentialResult {
    std::vector<EvalRecord> records;
    std::vector<JointParams> after_episode;   // parameters after each episode
    std::vector<std::vector<double>> fisher;  // Fisher computed at the end of each episode (EWC only)
};

/// Evaluates a fixed model on every seen episode after each episode (no adaptation).
template <class Model>
std::vector<EvalRecord> evaluate_static(const Model& model, const JointParams& p, const std::vector<Task>& stream,
                                        const std::vector<std::vector<double>>& wmmse, const std::string& method,
                                        std::uint64_t seed) {
    std::vector<EvalRecord> recs;
    for (std::size_t i = 0; i < stream.size(); ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            auto s = training::evaluate_set(model, std::span<const ChannelRealization>(stream[j].query), wmmse[j],
                                            p.theta, p.phi);
            recs.push_back({method, i, stream[j].query.front().channel_id, 0, s.raw, s.wmmse, s.normalized, seed});
        }
    return recs;
}

/// TL-style sequential fine-tuning over the stream; with w_p > 0 this is EWC,
/// anchoring every finished episode.
template <class Model>
SequentialResult run_sequential(const Model& model, JointParams p, const std::vector<Task>& stream,
                                const TestConfig& cfg, const std::vector<std::vector<double>>& wmmse,
                                const std::string& method, double w_p = 0.0, std::size_t fisher_samples = 0) {
    require(wmmse.size() == stream.size(), "run_sequential: oracle does not cover the stream");
    SequentialResult r;
    std::vector<EwcAnchor> anchors;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto idx = training::pick_adaptation(stream[i].support.size(), cfg.adapt_samples, cfg.seed, i);
        const auto S = training::select(stream[i].support, idx);
        p = finetune_joint(model, p, std::span<const ChannelRealization>(S), cfg, anchors, w_p);
        r.after_episode.push_back(p);
        for (std::size_t j = 0; j <= i; ++j) {
            auto s = training::evaluate_set(model, std::span<const ChannelRealization>(stream[j].query), wmmse[j],
                                            p.theta, p.phi);
            r.records.push_back({method, i, stream[j].query.front().channel_id, cfg.adapt_steps, s.raw, s.wmmse,
                                 s.normalized, cfg.seed});
        }
        if (w_p > 0.0) {
            const auto& sup = stream[i].support;
            const std::size_t m = fisher_samples == 0 ? sup.size() : std::min(fisher_samples, sup.size());
            auto F = fisher_diag(model, p, std::span<const ChannelRealization>(sup.data(), m));
            anchors.push_back({p.flat(), F});
            r.fisher.push_back(std::move(F));
        }
    }
    return r;
}

/// Sum over consecutive episodes of the Fisher-weighted step length
/// sqrt(sum_i F_{e-1,i} (x_e - x_{e-1})_i^2).
inline double fisher_displacement(const SequentialResult& r) {
    double total = 0.0;
    for (std::size_t e = 1; e < r.after_episode.size(); ++e) {
        require(e - 1 < r.fisher.size(), "fisher_displacement: missing Fisher for episode");
        const auto a = r.after_episode[e - 1].flat(), b = r.after_episode[e].flat();
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += r.fisher[e - 1][i] * (b[i] - a[i]) * (b[i] - a[i]);
        total += std::sqrt(s);
    }
    return total;
}

}  // namespace metagate::baselines
