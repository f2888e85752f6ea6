#pragma once

// Experiment stages shared by the command-line runner and the acceptance
// checks: data generation, proposed-method training and testing, baselines,
// sweeps, and the Nakagami seen/unseen protocol.

#include <cstdint>
#include <iomanip>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "metagate/baselines/baselines.hpp"
#include "metagate/channels/generators.hpp"
#include "metagate/channels/tasks.hpp"
#include "metagate/experiment/config.hpp"
#include "metagate/metrics/metrics.hpp"
#include "metagate/models/cnn.hpp"
#include "metagate/models/gnn.hpp"
#include "metagate/training/meta.hpp"

namespace metagate::experiment {

using channels::ChannelRealization;
using channels::Task;
using training::EvalRecord;

using AnyModel = std::variant<models::GnnModel, models::CnnModel>;

inline AnyModel make_model(const ExperimentConfig& c, models::GateMode gate = models::GateMode::gated) {
    if (c.scenario == Scenario::gnn_beamforming) {
        auto a = c.gnn;
        a.Nt = c.Nt;
        return models::GnnModel(a, c.p_max, gate);
    }
    auto a = c.cnn;
    a.K = c.K;
    return models::CnnModel(a, c.p_max, gate);
}

inline std::string architecture_json(const ExperimentConfig& c) {
    auto j = to_json(c);
    return json{{"scenario", j["scenario"]}, {"system", j["system"]},
                {"arch", c.scenario == Scenario::gnn_beamforming ? j["gnn"] : j["cnn"]}}
        .dump();
}

/// Sentinel used above the diagonal when exporting continuity matrices.
inline double continuity_sentinel(const ExperimentConfig& c) {
    return c.scenario == Scenario::gnn_beamforming ? 1.0 : 0.5;
}

// Seed streams, one per stage, so stages can run independently.
namespace seeds {
inline std::uint64_t train_data(std::uint64_t s) { return channels::split_seed(s, 11); }
inline std::uint64_t test_data(std::uint64_t s) { return channels::split_seed(s, 12); }
inline std::uint64_t single_channel_data(std::uint64_t s) { return channels::split_seed(s, 13); }
inline std::uint64_t init_inner(std::uint64_t s) { return channels::split_seed(s, 21); }
inline std::uint64_t init_outer(std::uint64_t s) { return channels::split_seed(s, 22); }
inline std::uint64_t oracle(std::uint64_t s) { return channels::split_seed(s, 31); }
inline std::uint64_t nakagami(std::uint64_t s) { return channels::split_seed(s, 41); }
}  // namespace seeds

struct Datasets {
    std::vector<Task> train;
    std::vector<Task> test;
};

inline Datasets generate_data(const ExperimentConfig& c, std::uint64_t seed) {
    return {channels::build_tasks(c.channels_of(c.data.train_channels), c.data.num_tasks, c.data.support_size,
                                  c.data.query_size, seeds::train_data(seed)),
            channels::build_test_stream(c.channels_of(c.data.test_channels), c.data.test_samples_per_channel,
                                        c.data.support_frac, seeds::test_data(seed))};
}

/// Training pool drawn from a single named channel (mismatch and TL pretraining).
inline std::vector<ChannelRealization> single_channel_pool(const ExperimentConfig& c, const std::string& name,
                                                           std::uint64_t seed) {
    ChannelSpec spec{name};
    bool found = false;
    for (const auto& lists : {&c.data.test_channels, &c.data.train_channels})
        for (const auto& s : *lists)
            if (!found && (s.id == name || (s.id.empty() && s.family == name))) {
                spec = s;
                found = true;
            }
    const auto cfg = c.channel(spec);
    return channels::flatten(channels::build_tasks({cfg}, c.data.num_tasks, c.data.support_size, c.data.query_size,
                                                   channels::split_seed(seeds::single_channel_data(seed),
                                                                        io::fnv1a(name))));
}

inline std::vector<std::vector<double>> oracle_rates(const ExperimentConfig& c, const std::vector<Task>& stream,
                                                     std::uint64_t seed, std::size_t threads = 1) {
    return training::WmmseOracle(c.p_max, c.wmmse_iters, seeds::oracle(seed), threads).query_rates(stream);
}

struct Trained {
    ParamVector theta;
    ParamVector phi;
    std::vector<double> curve;
    std::uint64_t tasks_consumed = 0;
};

template <class Model>
Trained train_proposed(const Model& model, const ExperimentConfig& c, const std::vector<Task>& tasks,
                       std::uint64_t seed) {
    auto t = c.train;
    t.seed = seed;
    auto r = training::meta_train(tasks, model, model.init_inner(seeds::init_inner(seed)),
                                  model.init_outer(seeds::init_outer(seed)), t);
    return {r.theta, r.phi, r.curve, r.tasks_consumed};
}

template <class Model>
std::vector<EvalRecord> test_proposed(const Model& model, const Trained& tr, const ExperimentConfig& c,
                                      const std::vector<Task>& stream, const std::vector<std::vector<double>>& wmmse,
                                      std::uint64_t seed, const std::string& method = "proposed") {
    auto t = c.test;
    t.seed = seed;
    return training::online_test(model, tr.theta, tr.phi, stream, t, wmmse, method);
}

inline baselines::JointTrainConfig joint_config(const ExperimentConfig& c, std::uint64_t seed) {
    baselines::JointTrainConfig j;
    j.lr = c.baselines.lr;
    j.epochs = c.train.epochs;
    j.batch_samples = c.train.batch * (c.data.support_size + c.data.query_size);
    j.adam = c.train.adam;
    j.seed = seed;
    return j;
}

struct BaselineOutcome {
    std::vector<EvalRecord> records;
    baselines::SequentialResult sequential;  // filled for tl / ewc
};

template <class Model>
baselines::JointParams initial_joint(const Model& model, std::uint64_t seed) {
    return {model.init_inner(seeds::init_inner(seed)), model.init_outer(seeds::init_outer(seed))};
}

/// Pretrained single-channel model used as the TL/EWC starting point.
template <class Model>
baselines::JointParams pretrain_tl(const Model& model, const ExperimentConfig& c, std::uint64_t seed) {
    return baselines::train_joint(model, single_channel_pool(c, c.baselines.tl_pretrain_channel, seed),
                                  initial_joint(model, seed), joint_config(c, seed));
}

template <class Model>
BaselineOutcome run_baseline(baselines::Kind kind, const Model& model, const ExperimentConfig& c, const Datasets& d,
                             const std::vector<std::vector<double>>& wmmse, std::uint64_t seed,
                             std::optional<double> ewc_weight = std::nullopt,
                             const baselines::JointParams* pretrained = nullptr) {
    using baselines::Kind;
    BaselineOutcome out;
    auto test = c.test;
    test.seed = seed;
    const std::string name(baselines::to_string(kind));
    switch (kind) {
        case Kind::joint: {
            auto p = baselines::train_joint(model, channels::flatten(d.train), initial_joint(model, seed),
                                            joint_config(c, seed));
            out.records = baselines::evaluate_static(model, p, d.test, wmmse, name, seed);
            break;
        }
        case Kind::mismatch: {
            auto p = baselines::train_joint(model, single_channel_pool(c, c.baselines.mismatch_channel, seed),
                                            initial_joint(model, seed), joint_config(c, seed));
            out.records = baselines::evaluate_static(model, p, d.test, wmmse, name, seed);
            break;
        }
        case Kind::tl:
        case Kind::ewc: {
            auto p = pretrained ? *pretrained : pretrain_tl(model, c, seed);
            const double wp = kind == Kind::tl ? 0.0 : ewc_weight.value_or(c.baselines.ewc_weight);
            out.sequential =
                baselines::run_sequential(model, p, d.test, test, wmmse, name, wp, c.baselines.fisher_samples);
            out.records = out.sequential.records;
            break;
        }
        case Kind::wogate: {
            const Model ablated = model.with_gate(models::GateMode::ones);
            auto tr = train_proposed(ablated, c, d.train, seed);
            out.records = test_proposed(ablated, tr, c, d.test, wmmse, seed, name);
            break;
        }
    }
    return out;
}

/// Mean of the diagonal cells M[i][i] for i >= from.
inline double diagonal_mean(const metrics::ContinuityMatrix& m, std::size_t from = 0) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = from; i < m.size(); ++i, ++n) s += m.at(i, i);
    require(n > 0, "diagonal_mean: empty range");
    return s / static_cast<double>(n);
}

/// Per-channel rates on the diagonal (each channel right after its own episode).
inline std::vector<EvalRecord> diagonal_records(const std::vector<EvalRecord>& recs) {
    auto m = metrics::continuity_matrix(recs);
    std::vector<EvalRecord> out;
    for (const auto& r : recs)
        if (r.episode < m.size() && m.channels[r.episode] == r.channel_id) out.push_back(r);
    return out;
}

/// Pairwise CDS between test channels: each channel's trajectory runs J_q
/// adaptation steps from the learned theta on its N_a support samples.
struct CdsTable {
    std::vector<std::string> channels;
    std::vector<std::vector<double>> value;
};

template <class Model>
CdsTable cds_table(const Model& model, const Trained& tr, const ExperimentConfig& c, const std::vector<Task>& stream,
                   std::uint64_t seed) {
    CdsTable t;
    std::vector<metrics::Trajectory> traj;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto idx = training::pick_adaptation(stream[i].support.size(), c.test.adapt_samples, seed, i);
        const auto S = training::select(stream[i].support, idx);
        auto end = training::inner_adapt(model, tr.theta, tr.phi, std::span<const ChannelRealization>(S),
                                         c.test.adapt_steps, c.test.inner_lr, c.test.inner_opt, c.test.adam);
        t.channels.push_back(stream[i].query.front().channel_id);
        traj.push_back({tr.theta.values(), end.values(), c.test.adapt_steps});
    }
    t.value.assign(traj.size(), std::vector<double>(traj.size(), 0.0));
    for (std::size_t i = 0; i < traj.size(); ++i)
        for (std::size_t j = 0; j < traj.size(); ++j) t.value[i][j] = metrics::cds(traj[i], traj[j]);
    return t;
}

// ---------------------------------------------------------------------------
// Nakagami seen/unseen protocol

struct NakagamiSetup {
    std::vector<double> seen_m;
    std::vector<double> unseen_m;
    ExperimentConfig cfg;  // train on seen values, test on seen_tested + unseen
};

inline std::string m_tag(double m) {
    std::ostringstream s;
    s << "nakagami_m" << std::fixed << std::setprecision(3) << m;
    return s.str();
}

inline NakagamiSetup nakagami_setup(const ExperimentConfig& base, std::uint64_t seed) {
    NakagamiSetup s;
    s.cfg = base;
    std::mt19937_64 rng(seeds::nakagami(seed));
    std::uniform_real_distribution<double> u(base.nakagami.m_lo, base.nakagami.m_hi);
    for (std::size_t i = 0; i < base.nakagami.seen; ++i) s.seen_m.push_back(u(rng));
    for (std::size_t i = 0; i < base.nakagami.unseen; ++i) s.unseen_m.push_back(u(rng));
    auto spec = [&](double m) {
        ChannelSpec c{"nakagami", m_tag(m)};
        c.m_lo = m;
        c.m_hi = m;
        c.omega = base.nakagami.omega;
        return c;
    };
    s.cfg.data.train_channels.clear();
    s.cfg.data.test_channels.clear();
    for (double m : s.seen_m) s.cfg.data.train_channels.push_back(spec(m));
    for (std::size_t i = 0; i < std::min(base.nakagami.seen_tested, s.seen_m.size()); ++i)
        s.cfg.data.test_channels.push_back(spec(s.seen_m[i]));
    for (double m : s.unseen_m) s.cfg.data.test_channels.push_back(spec(m));
    return s;
}

struct NakagamiOutcome {
    NakagamiSetup setup;
    std::vector<EvalRecord> proposed;  // online-test records
    std::vector<EvalRecord> joint;     // static evaluation records
    double proposed_unseen = 0.0;      // mean diagonal normalized rate on unseen channels
    double joint_unseen = 0.0;
    double proposed_seen = 0.0;
    double joint_seen = 0.0;
};

template <class Model>
NakagamiOutcome run_nakagami(const Model& model, const ExperimentConfig& base, std::uint64_t seed,
                             std::size_t threads = 1) {
    NakagamiOutcome o{nakagami_setup(base, seed), {}, {}, 0, 0, 0, 0};
    const auto& c = o.setup.cfg;
    const auto d = generate_data(c, seed);
    const auto wmmse = oracle_rates(c, d.test, seed, threads);
    const auto tr = train_proposed(model, c, d.train, seed);
    o.proposed = test_proposed(model, tr, c, d.test, wmmse, seed);
    o.joint = run_baseline(baselines::Kind::joint, model, c, d, wmmse, seed).records;
    const auto dp = diagonal_records(o.proposed), dj = diagonal_records(o.joint);
    const std::size_t n_seen = c.data.test_channels.size() - o.setup.unseen_m.size();
    std::size_t ns = 0, nu = 0;
    for (std::size_t i = 0; i < dp.size(); ++i) {
        const bool unseen = dp[i].episode >= n_seen;
        (unseen ? o.proposed_unseen : o.proposed_seen) += dp[i].normalized_rate;
        (unseen ? o.joint_unseen : o.joint_seen) += dj[i].normalized_rate;
        (unseen ? nu : ns) += 1;
    }
    if (nu) {
        o.proposed_unseen /= static_cast<double>(nu);
        o.joint_unseen /= static_cast<double>(nu);
    }
    if (ns) {
        o.proposed_seen /= static_cast<double>(ns);
        o.joint_seen /= static_cast<double>(ns);
    }
    return o;
}

}  // namespace metagate::experiment
