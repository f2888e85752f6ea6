#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "metagate/sumrate/rate.hpp"
#include "metagate/sumrate/wmmse.hpp"
#include "support.hpp"

using namespace metagate;
using namespace metagate::sumrate;
using testing_support::random_channel;

namespace {

/// Independent evaluator: explicit real/imag loops, no shared helpers.
double brute_rate(const channels::ChannelRealization& ch, const Beamformer& V) {
    double total = 0.0;
    for (std::size_t k = 0; k < ch.K; ++k) {
        double sig = 0.0, intf = 0.0;
        for (std::size_t j = 0; j < ch.K; ++j) {
            double re = 0.0, im = 0.0;
            for (std::size_t i = 0; i < ch.Nt; ++i) {
                const double hr = ch.H[(j * ch.K + k) * ch.Nt + i].real();
                const double hi = ch.H[(j * ch.K + k) * ch.Nt + i].imag();
                const double vr = V.V[j * ch.Nt + i].real(), vi = V.V[j * ch.Nt + i].imag();
                // conj(h) * v
                re += hr * vr + hi * vi;
                im += hr * vi - hi * vr;
            }
            (j == k ? sig : intf) += re * re + im * im;
        }
        total += ch.weights[k] * std::log(1.0 + sig / (intf + ch.noise_power)) / std::log(2.0);
    }
    return total;
}

}  // namespace

TEST(Rate, SingleUserOneBit) {
    channels::ChannelRealization ch(1, 3, 1.0, "t");
    ch.h(0, 0)[0] = 1.0;
    Beamformer V(1, 3);
    V.at(0, 0) = 1.0;
    const auto r = evaluate_rate(ch, V);
    EXPECT_DOUBLE_EQ(r.per_user_sinr[0], 1.0);
    EXPECT_DOUBLE_EQ(r.weighted_sum_rate, 1.0);
}

TEST(Rate, MatchesBruteForceEvaluator) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto ch = random_channel(3, 2, s);
        ch.weights = {0.5, 1.0, 2.0};
        const auto V = random_full_power(3, 2, 0.7, s + 100);
        EXPECT_NEAR(evaluate_rate(ch, V).weighted_sum_rate, brute_rate(ch, V), 1e-12);
    }
}

TEST(Rate, NoInterferenceWhenOthersSilent) {
    const auto ch = random_channel(3, 2, 1);
    auto V = random_full_power(3, 2, 1.0, 2);
    for (std::size_t i = 0; i < 2; ++i) V.at(1, i) = V.at(2, i) = 0.0;
    const auto r = evaluate_rate(ch, V);
    EXPECT_NEAR(r.per_user_sinr[0], std::norm(inner(ch.h(0, 0), row(V, 0))) / ch.noise_power, 1e-12);
}

TEST(Rate, ScaleConsistent) {
    const auto ch = random_channel(4, 2, 3);
    const auto V = random_full_power(4, 2, 1.0, 4);
    auto scaled = ch;
    const channels::cd c{0.3, -1.7};
    for (auto& z : scaled.H) z *= c;
    scaled.noise_power *= std::norm(c);
    const auto a = evaluate_rate(ch, V), b = evaluate_rate(scaled, V);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.per_user_sinr[k], b.per_user_sinr[k], 1e-10);
}

TEST(Rate, MonotoneInDesiredSignal) {
    const auto ch = random_channel(3, 1, 5);
    auto V = random_full_power(3, 1, 1.0, 6);
    const double before = evaluate_rate(ch, V).per_user_rate[0];
    auto louder = ch;
    louder.h(0, 0)[0] *= 1.5;
    EXPECT_GE(evaluate_rate(louder, V).per_user_rate[0], before);
}

TEST(Wmmse, SingleUserClosedForm) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto ch = random_channel(1, 4, s);
        const double p_max = 0.5 + static_cast<double>(s % 4) * 0.5;
        double hn = 0.0;
        for (const auto& z : ch.h(0, 0)) hn += std::norm(z);
        const auto r = wmmse_solve(ch, p_max, 100, s);
        EXPECT_NEAR(r.report.weighted_sum_rate, std::log2(1.0 + p_max * hn / ch.noise_power), 1e-6);
    }
}

TEST(Wmmse, ObjectiveNonDecreasing) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto ch = random_channel(4, 2, 1000 + s);
        const auto r = wmmse_solve(ch, 1.0, 100, s);
        ASSERT_EQ(r.trace.size(), 101u);
        for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_GE(r.trace[i], r.trace[i - 1] - 1e-9);
    }
}

TEST(Wmmse, OutputFeasible) {
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto ch = random_channel(5, 3, 2000 + s, channels::Family::channel3);
        EXPECT_TRUE(wmmse_solve(ch, 0.8, 50, s).V.feasible(0.8));
    }
}

TEST(Wmmse, NotWorseThanItsFullPowerStart) {
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto ch = random_channel(4, 2, 3000 + s);
        const auto r = wmmse_solve(ch, 1.0, 100, s);
        EXPECT_GE(r.report.weighted_sum_rate, r.trace.front() - 1e-9);
    }
}

TEST(Wmmse, NotWorseThanMrtFromMrtStart) {
    // Started from MRT instead of a random point, ascent keeps the MRT rate as a floor.
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto ch = random_channel(4, 2, 4000 + s);
        const auto m = mrt(ch, 1.0);
        const auto r = wmmse_solve(ch, 1.0, 100, m);
        EXPECT_GE(r.report.weighted_sum_rate, evaluate_rate(ch, m).weighted_sum_rate - 1e-9);
    }
}

TEST(Wmmse, Deterministic) {
    const auto ch = random_channel(4, 2, 5);
    EXPECT_EQ(wmmse_solve(ch, 1.0, 30, 9).V.V, wmmse_solve(ch, 1.0, 30, 9).V.V);
}
