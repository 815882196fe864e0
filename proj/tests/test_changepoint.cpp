#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mktsom/changepoint.hpp"
#include "mktsom/synthgen.hpp"
#include "oracles.hpp"

using namespace mktsom;

namespace {

std::vector<double> step_series(std::uint64_t seed, std::size_t n, std::size_t at, double jump, double sigma) {
    Rng r(seed);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = (i >= at ? jump : 0.0) + sigma * r.normal();
    return x;
}

void expect_tiles(const IntervalSet& s, std::size_t first, std::size_t last) {
    ASSERT_FALSE(s.intervals.empty());
    EXPECT_EQ(s.intervals.front().start, first);
    EXPECT_EQ(s.intervals.back().end, last);
    for (std::size_t i = 0; i < s.intervals.size(); ++i) {
        EXPECT_LT(s.intervals[i].start, s.intervals[i].end);
        if (i) {
            EXPECT_EQ(s.intervals[i].start, s.intervals[i - 1].end);
        }
    }
}

}  // namespace

TEST(Cusum, ConstantSeriesNoAlarms) {
    std::vector<double> x(300, 4.2);
    for (double h : {0.1, 1.0, 5.0})
        for (double k : {0.0, 0.5}) EXPECT_TRUE(cusum_detect(x, {h, k}).indices.empty());
}

TEST(Cusum, LinearRampNoAlarms) {
    std::vector<double> x(300);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
    EXPECT_TRUE(cusum_detect(x, {1.0, 0.0}).indices.empty());
}

TEST(Cusum, SingleStepLocatedOver100Seeds) {
    // The jump is one difference of about 6 standardized units, so a low
    // noise draw can leave it just under threshold + drift; a few misses are
    // expected, false alarms are not.
    int exact = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto x = step_series(seed, 200, 100, 1.0, 0.1);
        auto cps = cusum_detect(x, {5.0, 0.5});
        ASSERT_LE(cps.indices.size(), 1u) << "seed " << seed;
        for (auto i : cps.indices) {
            EXPECT_GE(i, 100u);
            EXPECT_LE(i, 105u);
        }
        exact += cps.indices.size() == 1;
    }
    EXPECT_GE(exact, 95);
}

TEST(Cusum, DriftAbsorbsAlternatingSpikes) {
    std::vector<double> x{0.0};
    for (int i = 0; i < 200; ++i) x.push_back(x.back() + (i % 2 ? -10.0 : 10.0));
    // standardized increments are +-1; drift 1.5 swallows them
    EXPECT_TRUE(cusum_detect(x, {1.0, 1.5}).indices.empty());
}

TEST(Cusum, MatchesReferenceImplementation) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto s = stepped_drift_series(seed, 400, 3);
        for (double h : {1.0, 2.5, 5.0})
            for (double k : {0.0, 0.25, 1.0}) EXPECT_EQ(cusum_detect(s.values, {h, k}).indices, oracle::cusum(s.values, h, k));
    }
}

TEST(Cusum, AlarmCountMonotoneInThreshold) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto x = random_walk(seed, 520);
        std::size_t prev = SIZE_MAX;
        for (double h : {0.5, 1.0, 2.0, 4.0, 8.0}) {
            const auto n = cusum_detect(x, {h, 0.0}).indices.size();
            EXPECT_LE(n, prev);
            prev = n;
        }
    }
}

TEST(Cusum, BadParamsRejected) {
    std::vector<double> x(10, 1.0);
    EXPECT_THROW(cusum_detect(x, {0.0, 0.0}), ValidationError);
    EXPECT_THROW(cusum_detect(x, {1.0, -0.1}), ValidationError);
    EXPECT_THROW(cusum_detect(std::vector<double>{1.0}, {1.0, 0.0}), ValidationError);
}

TEST(Tune, PicksGridPointWithMostAlarms) {
    CusumGrid g{{1.0, 5.0}, {0.0, 0.5}};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto x = stepped_drift_series(seed, 300, 2).values;
        std::size_t best = 0;
        CusumParams want{};
        for (double h : g.thresholds)
            for (double k : g.drifts) {
                auto n = oracle::cusum(x, h, k).size();
                if (n > best) best = n, want = {h, k};
            }
        EXPECT_EQ(tune_hypersensitive(x, g, 2), want);
    }
}

TEST(Tune, ConstantSeriesFails) {
    std::vector<double> x(100, 1.0);
    EXPECT_THROW(tune_hypersensitive(x, {}, 2), TuningError);
    EXPECT_THROW(segment(x, TargetSize::medium), TuningError);
}

TEST(Tune, SinglePointGrid) {
    auto x = random_walk(3, 300);
    CusumGrid g{{2.0}, {0.25}};
    ASSERT_GE(cusum_detect(x, {2.0, 0.25}).indices.size(), 2u);
    EXPECT_EQ(tune_hypersensitive(x, g, 2), (CusumParams{2.0, 0.25}));
}

TEST(Consolidate, TargetLengthIntervalsUnchanged) {
    auto x = random_walk(4, 521);
    ChangePointSet cps;
    for (std::size_t i = 0; i <= 520; i += 52) cps.indices.push_back(i);
    auto s = consolidate(x, cps, TargetSize::medium);
    ASSERT_EQ(s.intervals.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(s.intervals[i], (Interval{52 * i, 52 * (i + 1)}));
}

TEST(Consolidate, RampOfSixPointPiecesMergesToSixty) {
    std::vector<double> x(61);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
    ChangePointSet cps;
    for (std::size_t i = 0; i <= 60; i += 6) cps.indices.push_back(i);
    auto s = consolidate(x, cps, TargetSize::medium);
    ASSERT_EQ(s.intervals.size(), 1u);
    EXPECT_EQ(s.intervals[0], (Interval{0, 60}));
}

TEST(Consolidate, OutputTilesInputSpan) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto x = random_walk(seed, 520);
        auto cps = cusum_detect(x, {1.0, 0.0});
        cps.indices.insert(cps.indices.begin(), 0);
        if (cps.indices.back() != 519) cps.indices.push_back(519);
        for (auto t : {TargetSize::small, TargetSize::medium, TargetSize::large}) {
            auto s = consolidate(x, cps, t);
            expect_tiles(s, 0, 519);
            // every output boundary is an input boundary
            for (const auto& iv : s.intervals)
                EXPECT_TRUE(std::binary_search(cps.indices.begin(), cps.indices.end(), iv.start));
        }
    }
}

TEST(Consolidate, RejectsUnorderedBoundaries) {
    std::vector<double> x(100, 0.0);
    ChangePointSet cps{{0, 50, 40, 99}, {}};
    EXPECT_THROW(consolidate(x, cps, TargetSize::small), ValidationError);
    ChangePointSet one{{0}, {}};
    EXPECT_THROW(consolidate(x, one, TargetSize::small), ValidationError);
}

TEST(Segment, MeanLengthNearTarget) {
    for (auto t : {TargetSize::small, TargetSize::medium, TargetSize::large}) {
        double worst = 0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            auto x = random_walk(1000 + seed, 520);
            auto s = segment(x, t);
            expect_tiles(s, 0, 519);
            worst = std::max(worst, std::abs(s.mean_length() - weeks(t)) / weeks(t));
        }
        EXPECT_LE(worst, 0.2) << to_string(t);
    }
}

TEST(Segment, RecoversSteppedDrifts) {
    std::size_t hit = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto s = stepped_drift_series(seed, 520, 4);
        auto set = segment(s.values, TargetSize::medium);
        for (auto c : s.changes) {
            ++total;
            for (const auto& iv : set.intervals)
                if (iv.start + 5 >= c && iv.start <= c + 5) {
                    ++hit;
                    break;
                }
        }
    }
    EXPECT_GE(static_cast<double>(hit) / total, 0.8);
}

TEST(Segment, SmallerTargetGivesAtLeastAsManyIntervals) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto x = random_walk(seed, 520);
        auto small = segment(x, TargetSize::small).intervals.size();
        auto medium = segment(x, TargetSize::medium).intervals.size();
        auto large = segment(x, TargetSize::large).intervals.size();
        EXPECT_GE(small, medium);
        EXPECT_GE(medium, large);
    }
}

TEST(Target, ParseAndWeeks) {
    EXPECT_EQ(weeks(*parse_target("small")), 25u);
    EXPECT_EQ(weeks(*parse_target("medium")), 52u);
    EXPECT_EQ(weeks(*parse_target("156")), 156u);
    EXPECT_FALSE(parse_target("huge"));
}
