#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "metagate/channels/generators.hpp"
#include "metagate/channels/realization.hpp"
#include "metagate/core/errors.hpp"

namespace metagate::channels {

/// Meta-training tasks. Every sample (support or query) picks its family
/// uniformly at random among `configs`; sample i of the whole dataset is drawn
/// from split_seed(seed, i), so generation is order-independent.
inline std::vector<Task> build_tasks(const std::vector<ChannelModelConfig>& configs, std::size_t num_tasks,
                                     std::size_t support_size, std::size_t query_size, std::uint64_t seed) {
    if (configs.empty()) throw ConfigError("build_tasks: no channel configs given");
    if (num_tasks == 0 || support_size == 0 || query_size == 0)
        throw ConfigError("build_tasks: task count, support and query sizes must be positive");
    for (const auto& c : configs) c.validate();

    std::mt19937_64 pick(split_seed(seed, 0xF00D));
    std::uniform_int_distribution<std::size_t> which(0, configs.size() - 1);
    std::vector<Task> tasks(num_tasks);
    std::uint64_t index = 0;
    for (auto& t : tasks) {
        t.support.reserve(support_size);
        t.query.reserve(query_size);
        for (std::size_t s = 0; s < support_size; ++s)
            t.support.push_back(gen_channel(configs[which(pick)], split_seed(seed, 1, index++)));
        for (std::size_t q = 0; q < query_size; ++q)
            t.query.push_back(gen_channel(configs[which(pick)], split_seed(seed, 1, index++)));
    }
    return tasks;
}

inline std::size_t support_count(std::size_t samples, double support_frac) {
    if (!(support_frac > 0.0 && support_frac < 1.0))
        throw ConfigError("support fraction must lie strictly between 0 and 1");
    const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(samples) * support_frac));
    if (n == 0 || n >= samples)
        throw ConfigError("support fraction leaves an empty support or query set");
    return n;
}

/// Episodic test stream: one Task per config, in the given order.
inline std::vector<Task> build_test_stream(const std::vector<ChannelModelConfig>& configs,
                                           std::size_t samples_per_channel, double support_frac,
                                           std::uint64_t seed) {
    if (configs.empty()) throw ConfigError("build_test_stream: no channel configs given");
    const std::size_t n_support = support_count(samples_per_channel, support_frac);
    std::vector<Task> stream;
    stream.reserve(configs.size());
    for (std::size_t e = 0; e < configs.size(); ++e) {
        configs[e].validate();
        Task t;
        for (std::size_t i = 0; i < samples_per_channel; ++i) {
            auto ch = gen_channel(configs[e], split_seed(seed, 2 + e, i));
            (i < n_support ? t.support : t.query).push_back(std::move(ch));
        }
        stream.push_back(std::move(t));
    }
    return stream;
}

/// All realizations of a task list, support first within each task.
inline std::vector<ChannelRealization> flatten(const std::vector<Task>& tasks) {
    std::vector<ChannelRealization> out;
    for (const auto& t : tasks) {
        out.insert(out.end(), t.support.begin(), t.support.end());
        out.insert(out.end(), t.query.begin(), t.query.end());
    }
    return out;
}

}  // namespace metagate::channels
