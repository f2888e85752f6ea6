#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "metagate/channels/dataset_io.hpp"
#include "metagate/channels/generators.hpp"
#include "metagate/channels/tasks.hpp"

using namespace metagate;
using namespace metagate::channels;

TEST(Channels, Channel1UnitPowerMonteCarlo) {
    // 100k coefficients: K=10, Nt=1 gives 100 per draw, 1000 draws
    auto c = preset(Family::channel1, 10, 1);
    double s = 0.0;
    std::size_t n = 0;
    for (std::uint64_t i = 0; i < 1000; ++i)
        for (const auto& z : gen_channel(c, split_seed(5, i)).H) s += std::norm(z), ++n;
    EXPECT_EQ(n, 100000u);
    EXPECT_NEAR(s / static_cast<double>(n), 1.0, 0.02);
}

TEST(Channels, NakagamiShapeOneIsRayleigh) {
    auto c = preset(Family::nakagami, 10, 10);
    c.nakagami_m_lo = c.nakagami_m_hi = 1.0;
    c.nakagami_omega = 1.0;
    std::vector<double> env;
    for (std::uint64_t i = 0; i < 1000; ++i)
        for (const auto& z : gen_channel(c, split_seed(6, i)).H) env.push_back(std::abs(z));
    std::sort(env.begin(), env.end());
    // Rayleigh with scale 1/sqrt(2): F(r) = 1 - exp(-r^2)
    double ks = 0.0;
    const double n = static_cast<double>(env.size());
    for (std::size_t i = 0; i < env.size(); ++i) {
        const double F = 1.0 - std::exp(-env[i] * env[i]);
        ks = std::max({ks, std::abs(F - static_cast<double>(i) / n), std::abs(F - static_cast<double>(i + 1) / n)});
    }
    EXPECT_LE(ks, 0.01);
}

TEST(Channels, IndependentRayleighSamplerAgreesWithNakagami) {
    // Second oracle: envelopes from an independent complex-Gaussian sampler.
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(2.0));
    std::vector<double> ref(100000);
    for (auto& r : ref) r = std::hypot(nd(rng), nd(rng));
    auto c = preset(Family::nakagami, 10, 10);
    c.nakagami_m_lo = c.nakagami_m_hi = 1.0;
    std::vector<double> env;
    for (std::uint64_t i = 0; i < 1000; ++i)
        for (const auto& z : gen_channel(c, split_seed(7, i)).H) env.push_back(std::abs(z));
    std::sort(env.begin(), env.end());
    std::sort(ref.begin(), ref.end());
    // two-sample KS, critical value at alpha=0.001 is about 1.95*sqrt(2/n) = 0.0087
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < env.size() && j < ref.size()) {
        if (env[i] <= ref[j]) ++i;
        else ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / env.size() - static_cast<double>(j) / ref.size()));
    }
    EXPECT_LE(d, 0.0087);
}

TEST(Channels, Channel2MomentsMatchDefinition) {
    // h_i = a_los * l_i + a_nlos * n_i with |l_i|^2 = 1/Nt, E n_i = (1+j)/2, E|n_i|^2 = 1.
    // l_i = exp(j pi i sin b) / sqrt(Nt) for uniform b, so E conj(l_i) = J0(pi i) / sqrt(Nt) and
    // E|h_i|^2 = a_los^2 / Nt + a_nlos^2 + a_los a_nlos J0(pi i) / sqrt(Nt).
    const std::size_t Nt = 4, K = 8;
    auto c = preset(Family::channel2, K, Nt);
    std::vector<double> s(Nt, 0.0);
    std::size_t draws = 0;
    for (std::uint64_t i = 0; i < 400; ++i) {
        const auto ch = gen_channel(c, split_seed(8, i));
        for (std::size_t l = 0; l < K * K; ++l, ++draws)
            for (std::size_t a = 0; a < Nt; ++a) s[a] += std::norm(ch.H[l * Nt + a]);
    }
    const double eps = db_to_linear(3.0), al = std::sqrt(eps / (eps + 1)), an = std::sqrt(1 / (eps + 1));
    for (std::size_t a = 0; a < Nt; ++a) {
        const double expect = al * al / Nt + an * an + al * an * std::cyl_bessel_j(0.0, std::numbers::pi * a) / std::sqrt(Nt);
        EXPECT_NEAR(s[a] / static_cast<double>(draws), expect, 4.0 * 1.2 / std::sqrt(static_cast<double>(draws))) << a;
    }
}

TEST(Channels, Channel3ShadowingSpreadsLinkGainInDb) {
    auto c = preset(Family::channel3, 10, 1);
    std::vector<double> db;
    for (std::uint64_t i = 0; i < 500; ++i)
        for (const auto& z : gen_channel(c, split_seed(9, i)).H) db.push_back(10 * std::log10(std::norm(z)));
    double mu = 0.0, var = 0.0;
    for (double x : db) mu += x;
    mu /= static_cast<double>(db.size());
    for (double x : db) var += (x - mu) * (x - mu);
    var /= static_cast<double>(db.size());
    // Rayleigh power in dB has std 5.57 dB; independent 8 dB shadowing adds in quadrature.
    EXPECT_NEAR(std::sqrt(var), std::sqrt(64.0 + 5.57 * 5.57), 0.3);
}

TEST(Channels, GeometricGainFormula) { EXPECT_DOUBLE_EQ(geometric_gain({1.0, 0.0}, 1.0), 0.5); }

TEST(Channels, RicianZeroKFactorEqualsNlosDraw) {
    auto ric = preset(Family::rician, 4, 2), ray = preset(Family::rayleigh, 4, 2);
    ric.k_factor = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) EXPECT_EQ(gen_channel(ric, s).H, gen_channel(ray, s).H);
}

TEST(Channels, GeometryWithinBounds) {
    auto c = preset(Family::channel1, 10, 2);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto ch = gen_channel(c, s);
        ASSERT_TRUE(ch.positions.has_value());
        for (std::size_t k = 0; k < c.K; ++k) {
            EXPECT_GE(ch.positions->tx[k][0], 0.0);
            EXPECT_LE(ch.positions->tx[k][0], c.area);
            EXPECT_GE(ch.positions->tx[k][1], 0.0);
            EXPECT_LE(ch.positions->tx[k][1], c.area);
            const double d = ch.positions->distance(k, k);
            EXPECT_GE(d, c.d_min - 1e-9);
            EXPECT_LE(d, c.d_max + 1e-9);
        }
    }
}

TEST(Channels, PathLossOptionScalesGain) {
    auto c = preset(Family::channel1, 3, 1);
    c.path_loss = PathLoss::log_distance;
    EXPECT_NEAR(20 * std::log10(path_loss_amplitude(c, 10.0)), -(36.7 + 22.7), 1e-9);
}

TEST(Channels, DeterministicUnderSeed) {
    auto c = preset(Family::channel2, 5, 3);
    EXPECT_EQ(gen_channel(c, 42), gen_channel(c, 42));
    EXPECT_NE(gen_channel(c, 42).H, gen_channel(c, 43).H);
}

TEST(Channels, UnknownFamilyIsConfigError) { EXPECT_THROW((void)family_from_string("channel9"), ConfigError); }

TEST(Tasks, SampleCountMatchesTaskShape) {
    const auto t = build_tasks({preset(Family::channel1, 3, 2), preset(Family::channel2, 3, 2)}, 600, 2, 15, 1);
    EXPECT_EQ(flatten(t).size(), 10200u);
    const auto one = build_tasks({preset(Family::channel1, 3, 2)}, 1, 1, 1, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_NE(one[0].support[0].H, one[0].query[0].H);
}

TEST(Tasks, MixesFamiliesUniformly) {
    const auto t = build_tasks(
        {preset(Family::channel1, 2, 1), preset(Family::channel2, 2, 1), preset(Family::channel3, 2, 1)}, 300, 2, 15, 3);
    std::map<std::string, std::size_t> n;
    for (const auto& ch : flatten(t)) ++n[ch.channel_id];
    ASSERT_EQ(n.size(), 3u);
    for (const auto& [id, cnt] : n) EXPECT_NEAR(static_cast<double>(cnt) / 5100.0, 1.0 / 3.0, 0.03) << id;
}

TEST(Tasks, EmptyConfigsAreConfigErrors) {
    EXPECT_THROW((void)build_tasks({}, 1, 1, 1, 0), ConfigError);
    EXPECT_THROW((void)build_test_stream({}, 10, 0.2, 0), ConfigError);
}

TEST(Tasks, TestStreamSplitAndOrder) {
    const auto s = build_test_stream(
        {preset(Family::channel3, 3, 2), preset(Family::channel1, 3, 2), preset(Family::channel2, 3, 2)}, 500, 0.2, 4);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(s[0].support.size(), 100u);
    EXPECT_EQ(s[0].query.size(), 400u);
    EXPECT_EQ(s[0].query[0].channel_id, "channel3");
    EXPECT_EQ(s[1].query[0].channel_id, "channel1");
    EXPECT_EQ(s[2].query[0].channel_id, "channel2");
    EXPECT_THROW((void)build_test_stream({preset(Family::channel1, 3, 2)}, 2, 0.1, 4), ConfigError);
}

TEST(DatasetIo, RoundTripIsByteIdentical) {
    const auto t = build_tasks({preset(Family::channel1, 3, 2), preset(Family::channel3, 3, 2)}, 5, 2, 3, 11);
    const auto bytes = serialize_tasks(t);
    const auto back = deserialize_tasks(bytes);
    ASSERT_EQ(back.size(), t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(back[i].support, t[i].support);
        EXPECT_EQ(back[i].query, t[i].query);
    }
    EXPECT_EQ(serialize_tasks(back), bytes);
    EXPECT_EQ(serialize_tasks(build_tasks({preset(Family::channel1, 3, 2), preset(Family::channel3, 3, 2)}, 5, 2, 3, 11)),
              bytes);
}

TEST(DatasetIo, CorruptInputIsDataError) {
    const auto bytes = serialize_tasks(build_tasks({preset(Family::channel1, 2, 1)}, 2, 1, 1, 0));
    EXPECT_THROW((void)deserialize_tasks(bytes.substr(0, bytes.size() / 2)), DataError);
    EXPECT_THROW((void)deserialize_tasks("XXXX" + bytes.substr(4)), DataError);
    EXPECT_THROW((void)load_tasks("/nonexistent/path/train.bin"), DataError);
}
