#pragma once

// Helpers shared by the unit tests: random channels and a central-difference
// gradient that only calls the forward loss.

#include <cmath>
#include <functional>
#include <vector>

#include "metagate/channels/generators.hpp"

namespace testing_support {

using metagate::channels::ChannelRealization;

inline ChannelRealization random_channel(std::size_t K, std::size_t Nt, std::uint64_t seed,
                                         metagate::channels::Family f = metagate::channels::Family::channel1) {
    return metagate::channels::gen_channel(metagate::channels::preset(f, K, Nt), seed);
}

inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

/// ||a - b|| / max(||b||, floor)
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

}  // namespace testing_support
