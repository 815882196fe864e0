#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "mktsom/error.hpp"

namespace mktsom::stats {

inline double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Unbiased (n-1) sample variance; 0 for fewer than two values.
inline double variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1);
}

inline double stddev(std::span<const double> x) { return std::sqrt(variance(x)); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>{}, p);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Normality
// ---------------------------------------------------------------------------

enum class Normality { normal, non_normal, too_small };

inline const char* to_string(Normality n) {
    switch (n) {
        case Normality::normal: return "normal";
        case Normality::non_normal: return "non_normal";
        case Normality::too_small: return "too_small";
    }
    return "?";
}

inline constexpr std::size_t kMinNormalitySample = 8;
inline constexpr double kAndersonDarlingCritical5 = 0.752;

// Anderson-Darling A^2 with mean and variance estimated from the sample,
// including the small-sample factor (1 + 0.75/n + 2.25/n^2).
inline double anderson_darling_adjusted(std::span<const double> sample) {
    const std::size_t n = sample.size();
    std::vector<double> z(sample.begin(), sample.end());
    std::sort(z.begin(), z.end());
    const double m = mean(z);
    const double sd = stddev(z);
    if (!(sd > 0.0)) return std::numeric_limits<double>::infinity();
    for (double& v : z) v = (v - m) / sd;
    // log Phi and log(1 - Phi) straight from erfc to keep the tails finite.
    auto log_cdf = [](double x) { return std::log(0.5 * std::erfc(-x / std::sqrt(2.0))); };
    auto log_sf = [](double x) { return std::log(0.5 * std::erfc(x / std::sqrt(2.0))); };
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += static_cast<double>(2 * i + 1) * (log_cdf(z[i]) + log_sf(z[n - 1 - i]));
    }
    const double dn = static_cast<double>(n);
    const double a2 = -dn - s / dn;
    return a2 * (1.0 + 0.75 / dn + 2.25 / (dn * dn));
}

inline Normality normality_check(std::span<const double> sample) {
    if (sample.size() < kMinNormalitySample) return Normality::too_small;
    return anderson_darling_adjusted(sample) > kAndersonDarlingCritical5 ? Normality::non_normal : Normality::normal;
}

// ---------------------------------------------------------------------------
// Welch t-test
// ---------------------------------------------------------------------------

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 0.5;
};

// One-tailed Welch test, alternative mean(x) > mean(y).
inline WelchResult welch_test(std::span<const double> x, std::span<const double> y) {
    if (x.size() < 2 || y.size() < 2) throw ValidationError("Welch test needs at least 2 values per sample");
    const double nx = static_cast<double>(x.size());
    const double ny = static_cast<double>(y.size());
    const double mx = mean(x), my = mean(y);
    const double vx = variance(x) / nx;
    const double vy = variance(y) / ny;
    const double se2 = vx + vy;
    WelchResult r;
    if (!(se2 > 0.0)) {
        r.t = 0.0;
        r.df = nx + ny - 2.0;
        r.p_value = mx == my ? 0.5 : (mx > my ? 0.0 : 1.0);
        return r;
    }
    r.t = (mx - my) / std::sqrt(se2);
    r.df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    const boost::math::students_t_distribution<double> dist(r.df);
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
    return r;
}

inline double welch_one_tailed(std::span<const double> x, std::span<const double> y) {
    return welch_test(x, y).p_value;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMannWhitneyExactMax = 16;

struct MannWhitneyResult {
    double u = 0.0;  // U statistic of x
    bool exact = false;
    double p_value = 0.5;
};

// Number of rank arrangements giving each U value for sample sizes (m, n),
// indexed by U in [0, m*n]. Uses f(u; m, n) = f(u - n; m - 1, n) + f(u; m, n - 1).
inline std::vector<double> mann_whitney_counts(std::size_t m, std::size_t n) {
    std::vector<std::vector<std::vector<double>>> f(m + 1, std::vector<std::vector<double>>(n + 1));
    for (std::size_t i = 0; i <= m; ++i) {
        for (std::size_t j = 0; j <= n; ++j) {
            auto& cur = f[i][j];
            cur.assign(i * j + 1, 0.0);
            if (i == 0 || j == 0) {
                cur[0] = 1.0;
                continue;
            }
            const auto& a = f[i - 1][j];
            const auto& b = f[i][j - 1];
            for (std::size_t u = 0; u < cur.size(); ++u) {
                double c = 0.0;
                if (u >= j && u - j < a.size()) c += a[u - j];
                if (u < b.size()) c += b[u];
                cur[u] = c;
            }
        }
    }
    return f[m][n];
}

// One-tailed test, alternative: x stochastically greater than y. Midranks
// for ties; exact null distribution for small tie-free samples, otherwise the
// normal approximation with continuity and tie correction.
inline MannWhitneyResult mann_whitney_test(std::span<const double> x, std::span<const double> y) {
    if (x.empty() || y.empty()) throw ValidationError("Mann-Whitney test needs non-empty samples");
    const std::size_t nx = x.size(), ny = y.size(), n = nx + ny;
    std::vector<std::pair<double, std::size_t>> all;
    all.reserve(n);
    for (std::size_t i = 0; i < nx; ++i) all.emplace_back(x[i], i);
    for (std::size_t i = 0; i < ny; ++i) all.emplace_back(y[i], nx + i);
    std::sort(all.begin(), all.end());

    std::vector<double> rank(n);
    double tie_term = 0.0;
    bool ties = false;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && all[j + 1].first == all[i].first) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[all[k].second] = mid;
        const double t = static_cast<double>(j - i + 1);
        if (t > 1) {
            ties = true;
            tie_term += t * t * t - t;
        }
        i = j + 1;
    }
    double rx = 0.0;
    for (std::size_t i = 0; i < nx; ++i) rx += rank[i];
    MannWhitneyResult r;
    const double dnx = static_cast<double>(nx), dny = static_cast<double>(ny), dn = static_cast<double>(n);
    r.u = rx - dnx * (dnx + 1.0) / 2.0;

    if (!ties && n <= kMannWhitneyExactMax) {
        r.exact = true;
        const auto counts = mann_whitney_counts(nx, ny);
        const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
        const auto u_obs = static_cast<std::size_t>(std::llround(r.u));
        double upper = 0.0;
        for (std::size_t u = u_obs; u < counts.size(); ++u) upper += counts[u];
        r.p_value = upper / total;
        return r;
    }
    const double mu = dnx * dny / 2.0;
    const double var = dnx * dny / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
    if (!(var > 0.0)) {
        r.p_value = 0.5;  // every value tied
        return r;
    }
    // Continuity correction pulls U toward the mean but never past it, so a
    // sample compared with itself gets exactly 0.5.
    const double dev = r.u - mu;
    const double z = std::copysign(std::max(0.0, std::abs(dev) - 0.5), dev) / std::sqrt(var);
    r.p_value = 0.5 * std::erfc(z / std::sqrt(2.0));
    return r;
}

inline double mann_whitney_one_tailed(std::span<const double> x, std::span<const double> y) {
    return mann_whitney_test(x, y).p_value;
}

// ---------------------------------------------------------------------------
// QQ data
// ---------------------------------------------------------------------------

struct QQPoint {
    double theoretical;
    double sample;
};

// Sorted sample against standard normal quantiles at (i - 0.5) / n.
inline std::vector<QQPoint> qq_normal(std::span<const double> sample) {
    std::vector<double> s(sample.begin(), sample.end());
    std::sort(s.begin(), s.end());
    std::vector<QQPoint> out;
    out.reserve(s.size());
    const double n = static_cast<double>(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        out.push_back({normal_quantile((static_cast<double>(i) + 0.5) / n), s[i]});
    return out;
}

}  // namespace mktsom::stats
