#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mktsom/changepoint.hpp"
#include "mktsom/error.hpp"
#include "mktsom/ingest.hpp"
#include "mktsom/stats.hpp"

namespace mktsom {

// Power requirement for labeling an interval. The z constants default to the
// two-decimal values 1.64 and 0.84 (one-sided 5% level, 80% power).
struct PowerSpec {
    double min_annual_return = 0.05;
    double power = 0.80;
    double alpha = 0.05;
    double z_alpha = 1.64;
    double z_beta = 0.84;

    // z constants from the normal quantiles, rounded to two decimals.
    static PowerSpec from_levels(double alpha, double power, double min_annual_return = 0.05) {
        if (!(alpha > 0.0 && alpha < 1.0) || !(power > 0.0 && power < 1.0))
            throw ValidationError("alpha and power must lie in (0, 1)");
        auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
        PowerSpec s;
        s.alpha = alpha;
        s.power = power;
        s.min_annual_return = min_annual_return;
        s.z_alpha = round2(stats::normal_quantile(1.0 - alpha));
        s.z_beta = round2(stats::normal_quantile(power));
        return s;
    }

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0) || !(power > 0.0 && power < 1.0))
            throw ValidationError("alpha and power must lie in (0, 1)");
    }
};

// Smallest sample size n with n > ((z_alpha + z_beta) * sigma / tau)^2, where
// tau = ln((min_annual_return + M_R) / M_R) is the log-return gap to detect.
// Never below 2.
inline std::size_t min_sample_size(const PowerSpec& spec, double market_gross_return, double sigma) {
    if (!(market_gross_return > 0.0)) throw DomainError("market gross return must be positive");
    if (!(sigma >= 0.0)) throw DomainError("sigma must be non-negative");
    const double tau = std::log((spec.min_annual_return + market_gross_return) / market_gross_return);
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("effect size tau must be positive");
    const double root = (spec.z_alpha + spec.z_beta) * sigma / tau;
    const double n = std::ceil(root * root);
    if (!(n < 1e15)) throw DomainError("required sample size overflows");
    return std::max<std::size_t>(2, static_cast<std::size_t>(n));
}

// Weekly log returns of stock and market over one interval.
struct ReturnPair {
    std::vector<double> stock_returns;
    std::vector<double> market_returns;
    double stock_gross = 1.0;   // S(end) / S(start)
    double market_gross = 1.0;  // M(end) / M(start)
};

inline ReturnPair make_return_pair(std::span<const double> log_stock, std::span<const double> log_market,
                                   Interval iv) {
    if (iv.end <= iv.start || iv.end >= log_stock.size() || log_stock.size() != log_market.size())
        throw ValidationError("interval outside the aligned series");
    ReturnPair p;
    p.stock_returns.reserve(iv.length());
    p.market_returns.reserve(iv.length());
    for (std::size_t i = iv.start + 1; i <= iv.end; ++i) {
        p.stock_returns.push_back(log_stock[i] - log_stock[i - 1]);
        p.market_returns.push_back(log_market[i] - log_market[i - 1]);
    }
    p.stock_gross = std::exp(log_stock[iv.end] - log_stock[iv.start]);
    p.market_gross = std::exp(log_market[iv.end] - log_market[iv.start]);
    return p;
}

enum class TestMethod { welch_t, mann_whitney, skipped };

inline const char* to_string(TestMethod m) {
    switch (m) {
        case TestMethod::welch_t: return "welch_t";
        case TestMethod::mann_whitney: return "mann_whitney";
        case TestMethod::skipped: return "skipped";
    }
    return "?";
}

inline std::optional<TestMethod> parse_method(std::string_view s) {
    if (s == "welch_t") return TestMethod::welch_t;
    if (s == "mann_whitney") return TestMethod::mann_whitney;
    if (s == "skipped") return TestMethod::skipped;
    return std::nullopt;
}

struct IntervalLabel {
    Interval interval;
    int label = 0;
    TestMethod method = TestMethod::skipped;
    std::optional<double> p_value;
    std::size_t min_samples = 0;
};

// Labels one interval. Too few weekly returns for the required power skips
// it; otherwise the paired differences pick the test (Welch when they look
// normal, Mann-Whitney otherwise) and the label is 1 iff p < alpha.
inline IntervalLabel label_interval(const ReturnPair& pair, const PowerSpec& spec, Interval iv = {}) {
    spec.validate();
    if (pair.stock_returns.size() != pair.market_returns.size())
        throw ValidationError("stock and market return samples differ in length");
    IntervalLabel out;
    out.interval = iv;
    const std::size_t n = pair.stock_returns.size();
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = pair.stock_returns[i] - pair.market_returns[i];
    out.min_samples = min_sample_size(spec, pair.market_gross, stats::stddev(diff));
    if (n < out.min_samples) return out;

    if (stats::normality_check(diff) == stats::Normality::normal) {
        out.method = TestMethod::welch_t;
        out.p_value = stats::welch_one_tailed(pair.stock_returns, pair.market_returns);
    } else {
        out.method = TestMethod::mann_whitney;
        out.p_value = stats::mann_whitney_one_tailed(pair.stock_returns, pair.market_returns);
    }
    out.label = *out.p_value < spec.alpha ? 1 : 0;
    return out;
}

struct SlidingWindow {
    bool enabled = false;
    std::size_t stride = 1;
};

// Sub-interval starts a, a+stride, ... kept while (b - start) > n_min.
inline std::vector<std::size_t> window_starts(std::size_t a, std::size_t b, std::size_t n_min, std::size_t stride) {
    std::vector<std::size_t> out;
    if (stride == 0) stride = 1;
    for (std::size_t s = a; s < b && b - s > n_min; s += stride) out.push_back(s);
    return out;
}

struct LabeledVector {
    std::string ticker;
    std::vector<double> features;
    int label = 0;
    Interval interval;
    Date start_date;
    Date end_date;
    TestMethod method = TestMethod::skipped;
    std::optional<double> p_value;
    std::size_t min_samples = 0;
};

// Labels every interval of a company and attaches the feature record in
// force at each labeled start. With the sliding window enabled, later starts
// inside an interval are labeled too for as long as the remaining length
// exceeds its own minimum sample size. Starts without a prior record are
// dropped.
inline std::vector<LabeledVector> sliding_window_labels(const CompanyDataset& company, const IntervalSet& intervals,
                                                        const PowerSpec& spec, SlidingWindow window = {}) {
    std::vector<LabeledVector> out;
    const std::size_t n = company.log_stock.size();
    auto emit = [&](const IntervalLabel& lab) {
        const Date start = company.date_at(lab.interval.start);
        const FeatureRecord* rec = record_at(company.records, start);
        if (!rec) return;
        LabeledVector v;
        v.ticker = company.ticker;
        v.features = rec->values;
        v.label = lab.label;
        v.interval = lab.interval;
        v.start_date = start;
        v.end_date = company.date_at(lab.interval.end);
        v.method = lab.method;
        v.p_value = lab.p_value;
        v.min_samples = lab.min_samples;
        out.push_back(std::move(v));
    };

    for (const auto& iv : intervals.intervals) {
        if (iv.end >= n || iv.end <= iv.start) throw ValidationError(company.ticker + ": interval outside series");
        if (!window.enabled) {
            const auto lab = label_interval(make_return_pair(company.log_stock, company.log_market, iv), spec, iv);
            if (lab.method != TestMethod::skipped) emit(lab);
            continue;
        }
        const std::size_t stride = window.stride == 0 ? 1 : window.stride;
        for (std::size_t s = iv.start; s < iv.end; s += stride) {
            const Interval sub{s, iv.end};
            const auto lab = label_interval(make_return_pair(company.log_stock, company.log_market, sub), spec, sub);
            if (!(sub.length() > lab.min_samples)) break;
            emit(lab);
        }
    }
    return out;
}

}  // namespace mktsom
