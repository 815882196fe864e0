#include <gtest/gtest.h>

#include <cmath>

#include "mktsom/featsel.hpp"
#include "oracles.hpp"

using namespace mktsom;

namespace {

const double nan_ = std::nan("");

FeatureMatrix gaussian(Rng& r, std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = r.normal();
    return make_matrix(rows, cols, std::move(v));
}

// Rows of N(0, diag(ev)) rotated by a fixed orthonormal basis.
FeatureMatrix rotated(Rng& r, std::size_t rows, const std::vector<double>& ev) {
    const double s = 1 / std::sqrt(2.0), t = 1 / std::sqrt(3.0), u = 1 / std::sqrt(6.0);
    const double q[3][3] = {{t, s, u}, {t, -s, u}, {t, 0, -2 * u}};
    std::vector<double> v;
    for (std::size_t i = 0; i < rows; ++i) {
        double z[3];
        for (int k = 0; k < 3; ++k) z[k] = std::sqrt(ev[k]) * r.normal();
        for (int j = 0; j < 3; ++j) v.push_back(q[j][0] * z[0] + q[j][1] * z[1] + q[j][2] * z[2]);
    }
    return make_matrix(rows, 3, std::move(v));
}

}  // namespace

TEST(Clean, TwoPercentMissingDropped) {
    Rng r(1);
    auto m = gaussian(r, 100, 3);
    m.at(3, 1) = nan_;
    m.at(50, 1) = nan_;
    m.at(7, 2) = nan_;
    auto [out, rep] = clean_features(m, 0.01);
    EXPECT_EQ(out.cols, 2u);
    ASSERT_EQ(rep.dropped_cols.size(), 1u);
    EXPECT_EQ(rep.dropped_cols[0].first, "f1");
    EXPECT_DOUBLE_EQ(rep.dropped_cols[0].second, 0.02);
    EXPECT_EQ(rep.imputed_cells, 1u);
}

TEST(Clean, FiniteMatrixUnchanged) {
    Rng r(2);
    auto m = gaussian(r, 20, 4);
    auto [out, rep] = clean_features(m, 0.0);
    EXPECT_EQ(out.values, m.values);
    EXPECT_EQ(rep.imputed_cells, 0u);
}

TEST(Clean, MedianImputation) {
    auto m = make_matrix(3, 1, {1, nan_, 3});
    auto [out, rep] = clean_features(m, 0.5);
    EXPECT_EQ(out.column(0), (std::vector<double>{1, 2, 3}));
    auto inf = make_matrix(3, 1, {1, INFINITY, 5});
    EXPECT_EQ(clean_features(inf, 0.5).first.column(0), (std::vector<double>{1, 3, 5}));
    auto fresh = apply_clean(make_matrix(2, 1, {nan_, 9}), rep);
    EXPECT_EQ(fresh.column(0), (std::vector<double>{2, 9}));
}

TEST(Clean, NothingToImputeFrom) {
    auto m = make_matrix(2, 1, {nan_, nan_});
    EXPECT_THROW(clean_features(m, 1.0), ImputationError);
    EXPECT_THROW(clean_features(m, 1.5), ValidationError);
}

TEST(ZScore, ClosedForm) {
    auto [z, sc] = zscore_normalize(make_matrix(3, 1, {1, 2, 3}));
    EXPECT_NEAR(z.at(0, 0), -1.224744871391589, 1e-12);
    EXPECT_NEAR(z.at(1, 0), 0.0, 1e-15);
    EXPECT_NEAR(z.at(2, 0), 1.224744871391589, 1e-12);
    EXPECT_FALSE(sc[0].constant);
}

TEST(ZScore, ConstantColumnZerosAndFlagged) {
    auto [z, sc] = zscore_normalize(make_matrix(3, 2, {5, 1, 5, 2, 5, 3}));
    EXPECT_EQ(z.column(0), (std::vector<double>{0, 0, 0}));
    EXPECT_TRUE(sc[0].constant);
}

TEST(ZScore, Idempotent) {
    Rng r(3);
    auto [z, _] = zscore_normalize(gaussian(r, 50, 3));
    auto [z2, __] = zscore_normalize(z);
    for (std::size_t i = 0; i < z.values.size(); ++i) EXPECT_NEAR(z.values[i], z2.values[i], 1e-9);
}

TEST(Pca, PointsOnALine) {
    std::vector<double> v;
    for (int i = 0; i < 20; ++i) v.push_back(i), v.push_back(3.0 * i - 2);
    auto p = pca_fit(make_matrix(20, 2, v), 2);
    EXPECT_NEAR(p.explained_variance_ratio[0], 1.0, 1e-9);
    EXPECT_NEAR(p.components[0][1] / p.components[0][0], 3.0, 1e-9);
    EXPECT_GT(p.components[0][1], 0);
    EXPECT_NEAR(reconstruction_error(make_matrix(20, 2, v), p, 1), 0.0, 1e-18);
}

TEST(Pca, AnalyticEigenvalues) {
    Rng r(4);
    auto m = rotated(r, 10000, {9, 1, 0.1});
    auto p = pca_fit(m, 3);
    EXPECT_NEAR(p.explained_variance_ratio[0] / (9 / 10.1), 1.0, 0.02);
    EXPECT_NEAR(p.eigenvalues[1], 1.0, 0.05);
    double sum = 0;
    for (double x : p.explained_variance_ratio) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    // leading direction is (1,1,1)/sqrt(3)
    for (double c : p.components[0]) EXPECT_NEAR(c, 1 / std::sqrt(3.0), 0.01);
}

TEST(Pca, IsotropicRatiosEqual) {
    Rng r(5);
    auto p = pca_fit(gaussian(r, 20000, 4), 4);
    for (double x : p.explained_variance_ratio) EXPECT_NEAR(x, 0.25, 0.02);
}

TEST(Pca, ZeroVariance) {
    EXPECT_THROW(pca_fit(make_matrix(3, 2, {1, 1, 1, 1, 1, 1}), 1), DomainError);
    EXPECT_THROW(pca_fit(make_matrix(1, 2, {1, 2}), 1), ValidationError);
}

TEST(Ext, PlantedFeatureRankedFirst) {
    int first = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng r(seed);
        auto m = gaussian(r, 400, 10);
        const std::size_t j = seed % 10;
        auto col = m.column(j);
        auto med = stats::median(col);
        std::vector<int> labels;
        for (double x : col) labels.push_back(x > med);
        auto rk = ext_importance(m, labels, 50, seed);
        first += rk.order[0] == j;
    }
    EXPECT_GE(first, 29);
}

TEST(Ext, NullScoresFlat) {
    double ratio = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng r(100 + seed);
        auto m = gaussian(r, 300, 8);
        std::vector<int> labels;
        for (std::size_t i = 0; i < 300; ++i) labels.push_back(r.uniform() < 0.5);
        auto rk = ext_importance(m, labels, 50, seed);
        ratio += *std::max_element(rk.scores.begin(), rk.scores.end()) /
                 *std::min_element(rk.scores.begin(), rk.scores.end());
    }
    EXPECT_LT(ratio / 10, 3.0);
}

TEST(Ext, SingleFeatureScoresOne) {
    Rng r(6);
    auto m = gaussian(r, 50, 1);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 50; ++i) labels.push_back(m.at(i, 0) > 0);
    auto rk = ext_importance(m, labels, 10, 1);
    EXPECT_DOUBLE_EQ(rk.scores[0], 1.0);
}

TEST(Ext, ScoresSumToOneAndDeterministic) {
    Rng r(7);
    auto m = gaussian(r, 200, 6);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 200; ++i) labels.push_back(m.at(i, 2) + 0.5 * m.at(i, 4) > 0);
    ExtOptions a;
    a.n_trees = 40;
    a.seed = 9;
    a.threads = 1;
    ExtOptions b = a;
    b.threads = 4;
    auto ra = ext_importance(m, labels, a), rb = ext_importance(m, labels, b);
    EXPECT_EQ(ra.scores, rb.scores);
    double s = 0;
    for (double x : ra.scores) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Ext, ColumnPermutationPermutesScores) {
    Rng r(8);
    auto m = gaussian(r, 150, 5);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 150; ++i) labels.push_back(m.at(i, 1) > 0.2);
    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto p = select_columns(m, perm);
    auto rm = ext_importance(m, labels, 30, 5), rp = ext_importance(p, labels, 30, 5);
    for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(rp.scores[k], rm.scores[perm[k]]);
}

TEST(Ext, NeedsBothClasses) {
    Rng r(9);
    auto m = gaussian(r, 10, 2);
    std::vector<int> ones(10, 1);
    EXPECT_THROW(ext_importance(m, ones, 5, 1), ValidationError);
}

TEST(SelectTopK, Shapes) {
    Rng r(10);
    auto m = gaussian(r, 30, 81);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 30; ++i) labels.push_back(m.at(i, 40) > 0);
    auto rk = ext_importance(m, labels, 20, 3);
    EXPECT_EQ(select_top_k(rk, m, 25).cols, 25u);
    auto one = select_top_k(rk, m, 1);
    EXPECT_EQ(one.col_names[0], m.col_names[rk.order[0]]);
    auto all = select_top_k(rk, m, 81);
    EXPECT_EQ(all.values, m.values);
    EXPECT_EQ(all.col_names, m.col_names);
    EXPECT_THROW(select_top_k(rk, m, 82), ValidationError);
}
