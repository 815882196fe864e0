#include <gtest/gtest.h>

#include <cmath>

#include "mktsom/fwc.hpp"
#include "oracles.hpp"

using namespace mktsom;

namespace {

VoteGrid votes(std::size_t rows, std::size_t cols) {
    return {rows, cols, std::vector<std::size_t>(rows * cols, 0), std::vector<std::size_t>(rows * cols, 0)};
}

SomGrid line_grid(std::size_t n) {
    SomGrid g;
    g.rows = 1;
    g.cols = n;
    g.dim = 1;
    for (std::size_t i = 0; i < n; ++i) g.codebook.push_back(static_cast<double>(i));
    return g;
}

}  // namespace

TEST(Votes, OneRowOneVote) {
    auto g = line_grid(5);
    auto m = make_matrix(1, 1, {3.1});
    std::vector<int> l{1};
    auto v = accumulate_votes(g, m, l);
    for (std::size_t u = 0; u < 5; ++u) {
        EXPECT_EQ(v.good[u], u == 3 ? 1u : 0u);
        EXPECT_EQ(v.bad[u], 0u);
    }
}

TEST(Votes, IdenticalRowsShareUnit) {
    auto g = line_grid(5);
    auto m = make_matrix(2, 1, {1.2, 1.2});
    std::vector<int> l{0, 1};
    auto v = accumulate_votes(g, m, l);
    EXPECT_EQ(v.good[1], 1u);
    EXPECT_EQ(v.bad[1], 1u);
}

TEST(Votes, Conservation) {
    Rng r(1);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 1 + r.index(500);
        std::vector<double> x(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = r.uniform(-2, 12), l[i] = r.uniform() < 0.3;
        auto v = accumulate_votes(line_grid(10), make_matrix(n, 1, x), l);
        EXPECT_EQ(v.total(), n);
    }
}

TEST(Votes, BadLabelRejected) {
    std::vector<int> l{2};
    EXPECT_THROW(accumulate_votes(line_grid(2), make_matrix(1, 1, {0}), l), ValidationError);
}

TEST(Fractional, Definitions) {
    auto v = votes(1, 4);
    v.good = {3, 1, 23, 0};
    v.bad = {1, 0, 0, 5};
    auto s = fractional_weighted(v);
    EXPECT_DOUBLE_EQ(s[0], 2.25);
    EXPECT_DOUBLE_EQ(s[1], 1.0);
    EXPECT_DOUBLE_EQ(s[2], 23.0);
    EXPECT_DOUBLE_EQ(s[3], 0.0);
    EXPECT_GT(s[2], s[1]);
    auto lit = fractional_weighted(v, WeightMode::literal_ratio);
    EXPECT_DOUBLE_EQ(lit[0], 9.0);
    EXPECT_DOUBLE_EQ(lit[2], 23.0 * 23.0);
}

TEST(Fractional, StrictlyIncreasingInGood) {
    for (std::size_t b = 0; b < 10; ++b) {
        double prev = -1;
        for (std::size_t g = 0; g < 30; ++g) {
            auto v = votes(1, 1);
            v.good[0] = g;
            v.bad[0] = b;
            double s = fractional_weighted(v)[0];
            if (g + b > 0) {
                EXPECT_GT(s, prev);
            }
            prev = s;
        }
    }
}

TEST(Kernel, IdentityAndNormalization) {
    auto k1 = gaussian_kernel(1, 0.7);
    EXPECT_EQ(k1.weights, std::vector<double>{1.0});
    for (std::size_t size : {3u, 5u, 7u, 9u})
        for (double sigma : {0.3, 1.0, 2.5}) {
            auto k = gaussian_kernel(size, sigma);
            double s = 0;
            for (double w : k.weights) s += w;
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    EXPECT_THROW(gaussian_kernel(4, 1.0), ValidationError);
    EXPECT_THROW(gaussian_kernel(3, 0.0), ValidationError);
}

TEST(Kernel, CenterOfFiveByFive) {
    double z = 0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) z += std::exp(-(dx * dx + dy * dy) / 2.0);
    auto k = gaussian_kernel(5, 1.0);
    EXPECT_NEAR(k.at(2, 2), 1.0 / z, 1e-15);
    EXPECT_NEAR(k.at(2, 2), 0.1621, 1e-4);
}

TEST(Convolve, ConstantGridPreserved) {
    std::vector<double> s(12 * 9, 3.7);
    auto out = convolve(s, 12, 9, gaussian_kernel(5, 1.3));
    for (double v : out.scores) EXPECT_NEAR(v, 3.7, 1e-12);
}

TEST(Convolve, InteriorSpikeReproducesKernel) {
    std::vector<double> s(11 * 11, 0.0);
    s[5 * 11 + 5] = 1.0;
    auto k = gaussian_kernel(5, 1.0);
    auto out = convolve(s, 11, 11, k);
    for (std::size_t r = 0; r < 11; ++r)
        for (std::size_t c = 0; c < 11; ++c) {
            const bool in = r >= 3 && r <= 7 && c >= 3 && c <= 7;
            EXPECT_NEAR(out.at(r, c), in ? k.at(r - 3, c - 3) : 0.0, 1e-15);
        }
}

TEST(Convolve, IdentityKernelAndNonNegative) {
    Rng r(2);
    std::vector<double> s(8 * 6);
    for (auto& x : s) x = r.uniform(0, 5);
    EXPECT_EQ(convolve(s, 8, 6, gaussian_kernel(1, 1.0)).scores, s);
    for (double v : convolve(s, 8, 6, gaussian_kernel(5, 2.0)).scores) EXPECT_GE(v, 0.0);
    EXPECT_THROW(convolve(s, 8, 6, gaussian_kernel(7, 1.0)), ValidationError);
}

TEST(Rank, AllZeroScoresOrderByTicker) {
    auto g = line_grid(4);
    FwcMatrix f{1, 4, std::vector<double>(4, 0.0)};
    auto m = make_matrix(3, 1, {0, 1, 2});
    std::vector<RowTag> tags{{"C", {}}, {"A", {}}, {"B", {}}};
    auto r = rank_vectors(f, g, m, tags, 10);
    ASSERT_EQ(r.entries.size(), 3u);
    EXPECT_EQ(r.entries[0].ticker, "A");
    EXPECT_EQ(r.entries[1].ticker, "B");
    EXPECT_EQ(r.entries[2].ticker, "C");
}

TEST(Rank, SingleRowAndTruncation) {
    auto g = line_grid(4);
    FwcMatrix f{1, 4, {0.1, 0.4, 0.3, 0.2}};
    std::vector<RowTag> one{{"X", {}}};
    auto r1 = rank_vectors(f, g, make_matrix(1, 1, {2}), one, 5);
    ASSERT_EQ(r1.entries.size(), 1u);
    EXPECT_DOUBLE_EQ(r1.entries[0].score, 0.3);
    std::vector<RowTag> tags{{"a", {}}, {"b", {}}, {"c", {}}, {"d", {}}};
    auto r = rank_vectors(f, g, make_matrix(4, 1, {0, 1, 2, 3}), tags, 2);
    ASSERT_EQ(r.entries.size(), 2u);
    EXPECT_EQ(r.entries[0].ticker, "b");
    EXPECT_EQ(r.entries[1].ticker, "c");
    EXPECT_THROW(rank_vectors(f, g, make_matrix(1, 1, {2}), tags, 2), ValidationError);
}

TEST(Rank, RowPermutationInvariant) {
    Rng r(3);
    auto g = line_grid(20);
    std::vector<double> sc(20);
    for (auto& x : sc) x = std::floor(r.uniform(0, 4));  // plenty of ties
    FwcMatrix f{1, 20, sc};
    std::vector<double> x;
    std::vector<RowTag> tags;
    for (int i = 0; i < 60; ++i) {
        x.push_back(r.uniform(0, 19));
        tags.push_back({"T" + std::to_string(r.index(10)), Date{std::chrono::days{static_cast<int>(r.index(5))}}});
    }
    auto a = rank_vectors(f, g, make_matrix(60, 1, x), tags, 60);
    std::reverse(x.begin(), x.end());
    std::reverse(tags.begin(), tags.end());
    auto b = rank_vectors(f, g, make_matrix(60, 1, x), tags, 60);
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        EXPECT_EQ(a.entries[i].ticker, b.entries[i].ticker);
        EXPECT_EQ(a.entries[i].date, b.entries[i].date);
        EXPECT_EQ(a.entries[i].unit, b.entries[i].unit);
    }
}
