#include <gtest/gtest.h>

#include <cmath>

#include "mktsom/labeling.hpp"
#include "mktsom/synthgen.hpp"
#include "oracles.hpp"

using namespace mktsom;

namespace {

// Company with flat market and a given weekly excess drift.
CompanyDataset drift_company(std::size_t weeks, double drift, double noise, std::uint64_t seed) {
    Rng r(seed);
    CompanyDataset c;
    c.ticker = "T";
    const Date start{std::chrono::year{2005} / 1 / 3};
    double ls = 0.0, lm = 0.0;
    for (std::size_t t = 0; t < weeks; ++t) {
        if (t) {
            const double m = 0.001 + 0.01 * r.normal();
            lm += m;
            ls += m + drift + noise * r.normal();
        }
        c.stock.points.push_back({start + std::chrono::weeks{t}, std::exp(ls)});
        c.market.points.push_back({start + std::chrono::weeks{t}, std::exp(lm)});
    }
    for (std::size_t q = 0; q * 13 < weeks; ++q) c.records.push_back({"T", start + std::chrono::weeks{13 * q}, {double(q)}});
    return align_and_log(c);
}

}  // namespace

TEST(MinSampleSize, ReferenceCases) {
    PowerSpec s;
    EXPECT_EQ(min_sample_size(s, 1.0, 0.1), 26u);
    EXPECT_EQ(min_sample_size(s, 1.10, 0.2), 125u);
    EXPECT_EQ(min_sample_size(s, 1.0, 1e-9), 2u);
    EXPECT_EQ(min_sample_size(s, 1.0, 0.0), 2u);
}

TEST(MinSampleSize, DirectFormula) {
    PowerSpec s;
    Rng r(1);
    for (int i = 0; i < 500; ++i) {
        const double mr = r.uniform(0.5, 2.0), sigma = r.uniform(0.01, 0.5);
        const double tau = std::log((0.05 + mr) / mr);
        const double n = std::ceil(std::pow(2.48 * sigma / tau, 2));
        EXPECT_EQ(min_sample_size(s, mr, sigma), std::max<std::size_t>(2, static_cast<std::size_t>(n)));
    }
}

TEST(MinSampleSize, MonotoneInSigma) {
    PowerSpec s;
    std::size_t prev = 0;
    for (double sigma = 0.01; sigma < 1.0; sigma += 0.01) {
        auto n = min_sample_size(s, 1.0, sigma);
        EXPECT_GE(n, prev);
        prev = n;
    }
}

TEST(MinSampleSize, DomainErrors) {
    PowerSpec s;
    EXPECT_THROW(min_sample_size(s, 0.0, 0.1), DomainError);
    EXPECT_THROW(min_sample_size(s, 1.0, -0.1), DomainError);
    s.min_annual_return = 0.0;
    EXPECT_THROW(min_sample_size(s, 1.0, 0.1), DomainError);
}

TEST(PowerSpec, FromLevelsRoundsToTwoDecimals) {
    auto s = PowerSpec::from_levels(0.05, 0.80);
    EXPECT_DOUBLE_EQ(s.z_alpha, 1.64);
    EXPECT_DOUBLE_EQ(s.z_beta, 0.84);
    EXPECT_THROW(PowerSpec::from_levels(0.0, 0.8), ValidationError);
    EXPECT_THROW(PowerSpec::from_levels(0.05, 1.0), ValidationError);
}

TEST(LabelInterval, IdenticalReturnsLabelZero) {
    ReturnPair p;
    Rng r(2);
    for (int i = 0; i < 60; ++i) p.stock_returns.push_back(r.normal(0, 0.02));
    p.market_returns = p.stock_returns;
    auto l = label_interval(p, {});
    EXPECT_EQ(l.label, 0);
    ASSERT_TRUE(l.p_value);
    EXPECT_NEAR(*l.p_value, 0.5, 1e-12);
}

TEST(LabelInterval, ConstantOutperformanceLabelsOne) {
    Rng r(3);
    ReturnPair p;
    for (int i = 0; i < 104; ++i) {
        const double m = r.normal(0.001, 0.01);
        p.market_returns.push_back(m);
        p.stock_returns.push_back(m + 0.01 + r.normal(0, 0.001));
    }
    auto l = label_interval(p, {});
    EXPECT_NE(l.method, TestMethod::skipped);
    EXPECT_EQ(l.label, 1);
}

TEST(LabelInterval, ShortIntervalSkipped) {
    // diffs with sample sd 0.1 and M_R = 1 need 26 weeks
    ReturnPair p;
    for (int i = 0; i < 10; ++i) {
        p.market_returns.push_back(0.0);
        p.stock_returns.push_back(i % 2 ? 0.1 : -0.1);
    }
    auto l = label_interval(p, {});
    EXPECT_GT(l.min_samples, 10u);
    EXPECT_EQ(l.method, TestMethod::skipped);
    EXPECT_FALSE(l.p_value);
}

TEST(LabelInterval, MethodFollowsNormality) {
    Rng r(4);
    ReturnPair normal, skewed;
    for (int i = 0; i < 200; ++i) {
        normal.market_returns.push_back(0);
        normal.stock_returns.push_back(r.normal(0, 0.01));
        skewed.market_returns.push_back(0);
        skewed.stock_returns.push_back(r.exponential(100.0));
    }
    EXPECT_EQ(label_interval(normal, {}).method, TestMethod::welch_t);
    EXPECT_EQ(label_interval(skewed, {}).method, TestMethod::mann_whitney);
}

TEST(LabelInterval, NullLabelRateNearAlpha) {
    Rng r(5);
    int ones = 0, done = 0;
    for (int t = 0; t < 1000; ++t) {
        ReturnPair p;
        for (int i = 0; i < 80; ++i) {
            p.market_returns.push_back(r.normal(0.001, 0.02));
            p.stock_returns.push_back(r.normal(0.001, 0.02));
        }
        auto l = label_interval(p, {});
        if (l.method == TestMethod::skipped) continue;
        ++done;
        ones += l.label;
    }
    ASSERT_GT(done, 900);
    EXPECT_NEAR(static_cast<double>(ones) / done, 0.05, 0.02);
}

TEST(MakeReturnPair, DifferencesAndGross) {
    std::vector<double> s{0, 0.1, 0.3, 0.2}, m{0, 0.0, 0.1, 0.1};
    auto p = make_return_pair(s, m, {1, 3});
    ASSERT_EQ(p.stock_returns.size(), 2u);
    EXPECT_NEAR(p.stock_returns[0], 0.2, 1e-15);
    EXPECT_NEAR(p.stock_returns[1], -0.1, 1e-15);
    EXPECT_NEAR(p.market_gross, std::exp(0.1), 1e-15);
    EXPECT_THROW(make_return_pair(s, m, {2, 2}), ValidationError);
    EXPECT_THROW(make_return_pair(s, m, {0, 4}), ValidationError);
}

TEST(SlidingWindow, StartsUnderStrictGuard) {
    EXPECT_EQ(window_starts(0, 10, 8, 1), (std::vector<std::size_t>{0, 1}));
    EXPECT_TRUE(window_starts(0, 8, 8, 1).empty());
    EXPECT_EQ(window_starts(5, 30, 10, 4), (std::vector<std::size_t>{5, 9, 13, 17}));
}

TEST(SlidingWindow, DisabledGivesOnePerLabeledInterval) {
    auto c = drift_company(260, 0.0, 0.02, 6);
    IntervalSet set;
    for (std::size_t i = 0; i + 52 <= 259; i += 52) set.intervals.push_back({i, i + 52});
    auto v = sliding_window_labels(c, set, {}, {});
    std::size_t expect = 0;
    for (const auto& iv : set.intervals) {
        auto l = label_interval(make_return_pair(c.log_stock, c.log_market, iv), {}, iv);
        expect += l.method != TestMethod::skipped;
    }
    EXPECT_EQ(v.size(), expect);
    for (const auto& lv : v) {
        EXPECT_EQ(lv.start_date, c.date_at(lv.interval.start));
        EXPECT_EQ(lv.features.size(), 1u);
    }
}

TEST(SlidingWindow, EnabledEmitsNestedSuffixes) {
    auto c = drift_company(200, 0.005, 0.02, 7);
    IntervalSet set;
    set.intervals.push_back({0, 100});
    auto v = sliding_window_labels(c, set, {}, {true, 10});
    ASSERT_FALSE(v.empty());
    for (std::size_t i = 0; i < v.size(); ++i) {
        EXPECT_EQ(v[i].interval.start, 10 * i);
        EXPECT_EQ(v[i].interval.end, 100u);
        EXPECT_GT(v[i].interval.length(), v[i].min_samples);
    }
}

TEST(SynthTruth, BruteForceLabelerAgrees) {
    // independent labeler: one-sided z test on the mean weekly excess return
    SynthSpec spec;
    spec.n_companies = 20;
    auto out = generate(spec);
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < out.companies.size(); ++i) {
        const auto& c = out.companies[i];
        for (const auto& ti : out.truth[i].intervals) {
            std::vector<double> d;
            for (std::size_t k = ti.interval.start + 1; k <= ti.interval.end; ++k)
                d.push_back((c.log_stock[k] - c.log_stock[k - 1]) - (c.log_market[k] - c.log_market[k - 1]));
            double m = 0, s = 0;
            for (double x : d) m += x;
            m /= d.size();
            for (double x : d) s += (x - m) * (x - m);
            s = std::sqrt(s / (d.size() - 1));
            const int label = m / (s / std::sqrt(double(d.size()))) > 1.6448536269514722;
            agree += label == ti.label;
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(agree) / total, 0.95);
}
