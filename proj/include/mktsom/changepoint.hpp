#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mktsom/error.hpp"

namespace mktsom {

// Threshold and drift are in units of the sample standard deviation of the
// first-differenced series.
struct CusumParams {
    double threshold = 1.0;
    double drift = 0.0;

    friend bool operator==(const CusumParams&, const CusumParams&) = default;
};

struct ChangePointSet {
    std::vector<std::size_t> indices;  // strictly increasing series indices
    CusumParams params;
};

struct Interval {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - start; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct IntervalSet {
    std::vector<Interval> intervals;
    std::size_t target_len = 0;

    std::size_t span_start() const { return intervals.empty() ? 0 : intervals.front().start; }
    std::size_t span_end() const { return intervals.empty() ? 0 : intervals.back().end; }
    double mean_length() const {
        if (intervals.empty()) return 0.0;
        return static_cast<double>(span_end() - span_start()) / static_cast<double>(intervals.size());
    }
};

// Interval targets in weeks.
enum class TargetSize : std::size_t { small = 25, medium = 52, large = 156 };

inline std::size_t weeks(TargetSize t) noexcept { return static_cast<std::size_t>(t); }

inline std::optional<TargetSize> parse_target(const std::string& s) {
    if (s == "small" || s == "25") return TargetSize::small;
    if (s == "medium" || s == "52") return TargetSize::medium;
    if (s == "large" || s == "156") return TargetSize::large;
    return std::nullopt;
}

inline const char* to_string(TargetSize t) {
    switch (t) {
        case TargetSize::small: return "small";
        case TargetSize::medium: return "medium";
        case TargetSize::large: return "large";
    }
    return "medium";
}

struct CusumGrid {
    std::vector<double> thresholds{1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> drifts{0.0, 0.25, 0.5, 1.0};
};

struct ConsolidateOptions {
    double band = 0.2;                // tolerance around the target, as a fraction
    std::size_t slope_window = 10;    // differences on each side of a boundary
    double salience_cutoff = 5.0;     // slope-change statistic that pins a boundary
    double max_span_factor = 3.0;     // longest merged interval considered, in targets
};

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

// Two-sided CUSUM over standardized first differences. Index i alarms when
// either running sum exceeds the threshold after adding z_i = (x_i - x_{i-1})
// standardized; both sums reset after an alarm.
inline ChangePointSet cusum_detect(std::span<const double> series, CusumParams params) {
    if (!(params.threshold > 0.0) || !(params.drift >= 0.0))
        throw ValidationError("CUSUM threshold must be > 0 and drift >= 0");
    if (series.size() < 2) throw ValidationError("CUSUM needs a series of length >= 2");

    ChangePointSet out{{}, params};
    const std::size_t nd = series.size() - 1;
    if (nd < 2) return out;
    std::vector<double> d(nd);
    for (std::size_t i = 0; i < nd; ++i) d[i] = series[i + 1] - series[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(nd);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(nd - 1));
    if (!(sd > 0.0) || !std::isfinite(sd)) return out;
    // Differences that are pure rounding noise around a constant.
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) return out;

    double gp = 0.0, gn = 0.0;
    for (std::size_t k = 0; k < nd; ++k) {
        const double z = (d[k] - mean) / sd;
        gp = std::max(0.0, gp + z - params.drift);
        gn = std::max(0.0, gn - z - params.drift);
        if (gp > params.threshold || gn > params.threshold) {
            out.indices.push_back(k + 1);
            gp = 0.0;
            gn = 0.0;
        }
    }
    return out;
}

// Exhaustive search over the grid for the most alarms that still reaches
// `min_segments`. Ties go to the smaller threshold, then the smaller drift.
inline CusumParams tune_hypersensitive(std::span<const double> series, const CusumGrid& grid,
                                       std::size_t min_segments) {
    if (grid.thresholds.empty() || grid.drifts.empty()) throw ValidationError("CUSUM grid must be non-empty");
    if (min_segments < 2) throw ValidationError("min_segments must be at least 2");

    std::optional<CusumParams> best;
    std::size_t best_count = 0;
    std::size_t best_seen = 0;
    for (double t : grid.thresholds) {
        for (double d : grid.drifts) {
            const CusumParams p{t, d};
            const std::size_t count = cusum_detect(series, p).indices.size();
            best_seen = std::max(best_seen, count);
            if (count < min_segments) continue;
            const bool better = !best || count > best_count ||
                                (count == best_count &&
                                 (t < best->threshold || (t == best->threshold && d < best->drift)));
            if (better) {
                best = p;
                best_count = count;
            }
        }
    }
    if (!best) throw TuningError("no CUSUM grid point reaches " + std::to_string(min_segments) + " change points",
                                 best_seen);
    return *best;
}

// ---------------------------------------------------------------------------
// Consolidation
// ---------------------------------------------------------------------------

namespace detail {

inline int slope_sign(std::span<const double> series, const Interval& iv) {
    const double delta = series[iv.end] - series[iv.start];
    return (delta > 0.0) - (delta < 0.0);
}

// Noise scale of the differences that ignores piecewise-constant drift:
// MAD of second differences, rescaled to a normal standard deviation.
inline double robust_difference_sd(std::span<const double> series) {
    if (series.size() < 4) return 0.0;
    std::vector<double> dd;
    dd.reserve(series.size() - 2);
    for (std::size_t i = 2; i < series.size(); ++i)
        dd.push_back((series[i] - series[i - 1]) - (series[i - 1] - series[i - 2]));
    auto median = [](std::vector<double> v) {
        const std::size_t mid = v.size() / 2;
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
        double m = v[mid];
        if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
        return m;
    };
    const double med = median(dd);
    for (double& v : dd) v = std::abs(v - med);
    return 1.4826 * median(std::move(dd)) / std::sqrt(2.0);
}

// Two-sample statistic for a change in mean difference (local slope) at
// boundary b, using up to `w` differences on each side.
inline double slope_change_stat(std::span<const double> series, std::size_t b, std::size_t w, double sd) {
    if (!(sd > 0.0) || b < 2 || b + 2 >= series.size()) return 0.0;
    const std::size_t lo = b > w ? b - w + 1 : 1;
    const std::size_t hi = std::min(series.size() - 1, b + w);
    const double nl = static_cast<double>(b - lo + 1);
    const double nr = static_cast<double>(hi - b);
    if (nl < 2 || nr < 2) return 0.0;
    const double mean_l = (series[b] - series[lo - 1]) / nl;
    const double mean_r = (series[hi] - series[b]) / nr;
    return std::abs(mean_r - mean_l) / (sd * std::sqrt(1.0 / nl + 1.0 / nr));
}

// Interior boundaries whose slope-change statistic clears the cutoff and is
// the largest among boundaries within one window.
inline std::vector<bool> salient_boundaries(std::span<const double> series, std::span<const std::size_t> bounds,
                                            const ConsolidateOptions& opt) {
    std::vector<bool> out(bounds.size(), false);
    if (bounds.size() < 3) return out;
    const double sd = robust_difference_sd(series);
    std::vector<double> stat(bounds.size(), 0.0);
    for (std::size_t i = 1; i + 1 < bounds.size(); ++i)
        stat[i] = slope_change_stat(series, bounds[i], opt.slope_window, sd);
    for (std::size_t i = 1; i + 1 < bounds.size(); ++i) {
        if (stat[i] < opt.salience_cutoff) continue;
        bool peak = true;
        for (std::size_t j = 1; j + 1 < bounds.size() && peak; ++j) {
            if (j == i) continue;
            const std::size_t gap = bounds[i] > bounds[j] ? bounds[i] - bounds[j] : bounds[j] - bounds[i];
            if (gap > opt.slope_window) continue;
            if (stat[j] > stat[i] || (stat[j] == stat[i] && j < i)) peak = false;
        }
        out[i] = peak;
    }
    return out;
}

}  // namespace detail

// Merges adjacent change-point intervals toward the target length.
//
// First pass (direction): left to right, an interval absorbs its successor
// when both head the same way, the merged length stays within the upper band
// and the shared boundary is not a salient slope change.
//
// Second pass (size): picks the subset of the remaining boundaries that
// minimizes the summed squared relative deviation from the target length.
// Salient boundaries are always kept. Intervals are only ever merged.
inline IntervalSet consolidate(std::span<const double> series, const ChangePointSet& cps, TargetSize target,
                               const ConsolidateOptions& opt = {}) {
    const auto& idx = cps.indices;
    if (idx.size() < 2) throw ValidationError("consolidation needs at least 2 change points");
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= series.size() || (i && idx[i] <= idx[i - 1]))
            throw ValidationError("change points must be strictly increasing and within the series");
    }
    const double tgt = static_cast<double>(weeks(target));
    const double upper = tgt * (1.0 + opt.band);
    const std::vector<bool> salient = detail::salient_boundaries(series, idx, opt);

    // Direction pass.
    std::vector<std::size_t> bounds{idx.front()};
    std::vector<bool> pinned{false};
    Interval cur{idx[0], idx[1]};
    for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        const Interval next{idx[k], idx[k + 1]};
        const bool same_way = detail::slope_sign(series, cur) == detail::slope_sign(series, next);
        const bool fits = static_cast<double>(next.end - cur.start) <= upper;
        if (same_way && fits && !salient[k]) {
            cur.end = next.end;
        } else {
            bounds.push_back(cur.end);
            pinned.push_back(salient[k]);
            cur = next;
        }
    }
    bounds.push_back(cur.end);
    pinned.push_back(false);

    // Size pass: shortest path over boundaries.
    const std::size_t m = bounds.size();
    const double cap = opt.max_span_factor * tgt;
    std::vector<double> cost(m, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> prev(m, 0);
    cost[0] = 0.0;
    for (std::size_t j = 1; j < m; ++j) {
        for (std::size_t i = j; i-- > 0;) {
            const double len = static_cast<double>(bounds[j] - bounds[i]);
            if (i + 1 < j && len > cap) break;
            const double dev = (len - tgt) / tgt;
            const double c = cost[i] + dev * dev;
            if (c < cost[j]) {
                cost[j] = c;
                prev[j] = i;
            }
            if (pinned[i]) break;
        }
    }
    std::vector<std::size_t> chosen;
    for (std::size_t j = m - 1;; j = prev[j]) {
        chosen.push_back(j);
        if (j == 0) break;
    }
    std::reverse(chosen.begin(), chosen.end());

    IntervalSet out;
    out.target_len = weeks(target);
    for (std::size_t k = 1; k < chosen.size(); ++k) out.intervals.push_back({bounds[chosen[k - 1]], bounds[chosen[k]]});
    return out;
}

// Hypersensitive tuning, detection, then consolidation. The series endpoints
// are added as boundaries so the intervals cover the whole series.
inline IntervalSet segment(std::span<const double> series, TargetSize target, const CusumGrid& grid = {},
                           std::optional<std::size_t> min_segments = std::nullopt,
                           const ConsolidateOptions& opt = {}) {
    if (series.size() < 2) throw ValidationError("segmentation needs a series of length >= 2");
    const std::size_t span = series.size() - 1;
    const std::size_t tw = weeks(target);
    const std::size_t wanted = min_segments.value_or(std::max<std::size_t>(2, (span + tw - 1) / tw));
    const CusumParams params = tune_hypersensitive(series, grid, wanted);
    ChangePointSet cps = cusum_detect(series, params);
    std::vector<std::size_t> bounds;
    bounds.reserve(cps.indices.size() + 2);
    bounds.push_back(0);
    for (std::size_t i : cps.indices) {
        if (i > bounds.back() && i < span) bounds.push_back(i);
    }
    bounds.push_back(span);
    cps.indices = std::move(bounds);
    return consolidate(series, cps, target, opt);
}

}  // namespace mktsom
