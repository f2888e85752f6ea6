#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "metagate/metrics/metrics.hpp"

using namespace metagate;
using namespace metagate::metrics;
using training::EvalRecord;

namespace {

EvalRecord rec(std::size_t ep, const std::string& ch, double v, const std::string& method = "proposed") {
    return {method, ep, ch, 10, v * 3.0, 3.0, v, 1};
}

std::vector<EvalRecord> triangle(std::size_t n) {
    const std::vector<std::string> ids{"channel1", "channel2", "channel3"};
    std::vector<EvalRecord> out;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) out.push_back(rec(i, ids[j], 0.1 * static_cast<double>(i * 3 + j)));
    return out;
}

}  // namespace

TEST(Cds, BoundedSymmetricAndScaleInvariant) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 1000; ++t) {
        Trajectory a, b;
        for (int i = 0; i < 7; ++i) {
            a.start.push_back(nd(rng));
            a.end.push_back(nd(rng));
            b.start.push_back(nd(rng));
            b.end.push_back(nd(rng));
        }
        const double c = cds(a, b);
        EXPECT_GE(c, -1.0);
        EXPECT_LE(c, 1.0);
        EXPECT_DOUBLE_EQ(c, cds(b, a));
        // Stretching a displacement leaves the direction unchanged.
        Trajectory a2 = a;
        for (std::size_t i = 0; i < 7; ++i) a2.end[i] = a.start[i] + 4.5 * (a.end[i] - a.start[i]);
        EXPECT_NEAR(cds(a2, b), c, 1e-12);
    }
}

TEST(Cds, ExtremesAndDegenerate) {
    Trajectory a{{0, 0}, {1, 2}}, same{{5, 5}, {6, 7}}, opposite{{0, 0}, {-1, -2}}, still{{3, 3}, {3, 3}};
    EXPECT_NEAR(cds(a, same), 1.0, 1e-15);
    EXPECT_NEAR(cds(a, opposite), -1.0, 1e-15);
    EXPECT_THROW((void)cds(a, still), DegenerateTrajectory);
}

TEST(Variance, TwoChannelExample) {
    const std::vector<EvalRecord> r{rec(0, "a", 0.9), rec(1, "b", 1.0)};
    EXPECT_NEAR(variance_report(r, {"a", "b"}), 0.0025, 1e-15);
}

TEST(Variance, OrderInvariantAndAveragesPerChannel) {
    std::vector<EvalRecord> r{rec(0, "a", 0.8), rec(1, "a", 1.0), rec(1, "b", 0.5), rec(2, "c", 0.2)};
    const double v = variance_report(r, {"a", "b", "c"});
    // channel means 0.9, 0.5, 0.2
    const double mu = (0.9 + 0.5 + 0.2) / 3;
    EXPECT_NEAR(v, ((0.9 - mu) * (0.9 - mu) + (0.5 - mu) * (0.5 - mu) + (0.2 - mu) * (0.2 - mu)) / 3, 1e-15);
    std::reverse(r.begin(), r.end());
    EXPECT_NEAR(variance_report(r, {"c", "a", "b"}), v, 1e-15);
    EXPECT_THROW((void)variance_report(r, {"a", "zzz"}), DataError);
    EXPECT_THROW((void)variance_report(r, {"a"}), ContractViolation);
}

TEST(Continuity, SingleEpisode) {
    const auto m = continuity_matrix({rec(0, "channel2", 0.7)});
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m.channels[0], "channel2");
    EXPECT_EQ(m.at(0, 0), 0.7);
}

TEST(Continuity, ThreeEpisodeTriangle) {
    auto recs = triangle(3);
    std::shuffle(recs.begin(), recs.end(), std::mt19937_64(3));
    const auto m = continuity_matrix(recs);
    ASSERT_EQ(m.size(), 3u);
    EXPECT_EQ(m.channels, (std::vector<std::string>{"channel1", "channel2", "channel3"}));
    std::size_t cells = 0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j <= i; ++j, ++cells) EXPECT_NEAR(m.at(i, j), 0.1 * static_cast<double>(i * 3 + j), 1e-15);
    EXPECT_EQ(cells, 6u);
    const auto d = m.dense(1.0);
    EXPECT_EQ(d[0][1], 1.0);
    EXPECT_EQ(d[1][2], 1.0);
    EXPECT_EQ(m.dense(0.5)[0][2], 0.5);
    EXPECT_THROW((void)m.at(0, 1), ContractViolation);
}

TEST(Continuity, IncompleteOrInconsistentInputRejected) {
    auto recs = triangle(3);
    recs.erase(recs.begin() + 4);  // drop (2, channel2)
    EXPECT_THROW((void)continuity_matrix(recs), DataError);
    EXPECT_THROW((void)continuity_matrix({}), DataError);
    auto mixed = triangle(2);
    mixed[1].method = "joint";
    EXPECT_THROW((void)continuity_matrix(mixed), DataError);
    auto dup = triangle(2);
    dup.push_back(dup.back());
    EXPECT_THROW((void)continuity_matrix(dup), DataError);
}

TEST(Csv, RoundTripIsExact) {
    auto recs = triangle(3);
    recs[2].raw_rate = 1.0 / 3.0;
    recs[4].normalized_rate = 0.1 + 0.2;
    const auto text = records_csv(recs, "deadbeef", 42);
    const auto f = parse_records_csv(text);
    EXPECT_EQ(f.config_hash, "deadbeef");
    EXPECT_EQ(f.seed, 42u);
    ASSERT_EQ(f.records.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(f.records[i].channel_id, recs[i].channel_id);
        EXPECT_EQ(f.records[i].raw_rate, recs[i].raw_rate);
        EXPECT_EQ(f.records[i].normalized_rate, recs[i].normalized_rate);
        EXPECT_EQ(f.records[i].episode, recs[i].episode);
    }
    EXPECT_EQ(records_csv(f.records, f.config_hash, f.seed), text);
}

TEST(Csv, MalformedInputIsDataError) {
    EXPECT_THROW((void)parse_records_csv(""), DataError);
    EXPECT_THROW((void)parse_records_csv("method,episode\n"), DataError);
    auto text = records_csv(triangle(1), "x", 1);
    EXPECT_THROW((void)parse_records_csv(text + "proposed,notanumber,channel1,1,1,1,1,1\n"), DataError);
}
