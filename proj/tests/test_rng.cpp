#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "mktsom/rng.hpp"

using mktsom::Rng;

TEST(Rng, SameSeedSameStream) {
    Rng a(7), b(7);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(Rng, DifferentSeedsDiverge) {
    Rng a(1), b(2);
    int same = 0;
    for (int i = 0; i < 100; ++i) same += a() == b();
    EXPECT_EQ(same, 0);
}

TEST(Rng, DeriveSeedSeparatesTags) {
    std::set<std::uint64_t> seen;
    for (const char* tag : {"ext", "som", "market", "company", ""}) seen.insert(mktsom::derive_seed(42, tag));
    EXPECT_EQ(seen.size(), 5u);
    EXPECT_EQ(mktsom::derive_seed(42, "som"), mktsom::derive_seed(42, "som"));
    EXPECT_NE(mktsom::derive_seed(42, "som"), mktsom::derive_seed(43, "som"));
}

TEST(Rng, UniformInUnitInterval) {
    Rng r(3);
    double lo = 1, hi = 0, sum = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    EXPECT_GE(lo, 0.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_NEAR(sum / n, 0.5, 4 * std::sqrt(1.0 / 12 / n));
}

TEST(Rng, IndexCoversRangeEvenly) {
    Rng r(11);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        auto k = r.index(7);
        ASSERT_LT(k, 7u);
        ++counts[k];
    }
    // chi-square with 6 dof; 99.9% quantile is 22.46
    double chi = 0;
    for (int c : counts) chi += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
    EXPECT_LT(chi, 22.46);
    EXPECT_EQ(r.index(1), 0u);
    EXPECT_EQ(r.index(0), 0u);
}

TEST(Rng, NormalMoments) {
    Rng r(5);
    const int n = 200000;
    double s = 0, s2 = 0, s3 = 0;
    for (int i = 0; i < n; ++i) {
        double z = r.normal();
        s += z;
        s2 += z * z;
        s3 += z * z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.015);
    EXPECT_NEAR(s3 / n, 0.0, 0.03);
}

TEST(Rng, ExponentialMean) {
    Rng r(9);
    double s = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) s += r.exponential(2.0);
    EXPECT_NEAR(s / n, 0.5, 0.01);
}
