#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mktsom/changepoint.hpp"
#include "mktsom/csv.hpp"
#include "mktsom/date.hpp"
#include "mktsom/error.hpp"
#include "mktsom/ingest.hpp"
#include "mktsom/rng.hpp"

namespace mktsom {

struct InjectedChange {
    std::size_t index = 0;     // increments after this index use the new drift
    double drift_shift = 0.0;  // change in weekly excess log drift
};

struct SynthSpec {
    std::uint64_t seed = 42;
    std::size_t n_companies = 30;
    std::size_t weeks = 520;
    Date start = Date{std::chrono::year{2005} / 1 / 3};
    std::string market_ticker = "MARKET";
    std::string ticker_prefix = "SYN";

    double market_drift = 0.0015;
    double market_sigma = 0.01;
    double noise_sigma = 0.02;   // idiosyncratic weekly log noise
    double good_drift = 0.01;    // weekly excess drift in a good regime
    double bad_drift = -0.005;   // weekly excess drift in a bad regime

    // Explicit per-company changes; when empty, `changes_per_company` regime
    // flips are placed at jittered even spacing.
    std::vector<std::vector<InjectedChange>> change_points;
    std::size_t changes_per_company = 6;

    std::size_t raw_features = 20;
    std::size_t planted_feature = 2;    // sign follows regime goodness
    std::size_t key_ratio_count = 2;    // leading columns, never missing
    std::size_t sparse_features = 2;    // trailing columns, mostly missing
    double missing_rate = 0.004;        // scattered gaps in ordinary columns
    double sparse_missing_rate = 0.6;
    std::size_t short_companies = 0;    // companies truncated to `short_quarters` records
    std::size_t short_quarters = 20;

    void validate() const {
        if (weeks < 16) throw ValidationError("synthetic series needs at least 16 weeks");
        if (!(noise_sigma > 0.0) || !(market_sigma > 0.0)) throw ValidationError("noise sigma must be positive");
        if (raw_features < 1 || planted_feature >= raw_features) throw ValidationError("planted feature out of range");
        if (key_ratio_count + sparse_features > raw_features) throw ValidationError("too few raw features");
        if (planted_feature < key_ratio_count || planted_feature >= raw_features - sparse_features)
            throw ValidationError("planted feature must be an ordinary column");
        if (!change_points.empty() && change_points.size() != n_companies)
            throw ValidationError("explicit change points must be given for every company");
        for (const auto& list : change_points) {
            for (std::size_t i = 0; i < list.size(); ++i) {
                if (list[i].index == 0 || list[i].index >= weeks - 1 || (i && list[i].index <= list[i - 1].index))
                    throw ValidationError("change indices must be strictly increasing inside the series");
            }
        }
    }

    // Weekly log drift equivalent to a 5% annual excess return.
    static double five_percent_weekly() { return std::log(1.05) / 52.0; }
};

struct TrueChange {
    std::size_t index = 0;
    double drift_shift = 0.0;
    bool recoverable = true;
};

struct TrueInterval {
    Interval interval;
    double excess_drift = 0.0;
    int label = 0;  // 1 iff the regime's excess drift reaches the 5% weekly equivalent
};

struct CompanyTruth {
    std::string ticker;
    std::vector<TrueChange> changes;
    std::vector<TrueInterval> intervals;
};

struct SynthOutput {
    std::vector<CompanyDataset> companies;  // aligned, logs filled
    PriceSeries market;
    std::vector<std::string> feature_names;
    std::vector<CompanyTruth> truth;
};

namespace detail {

inline std::string synth_ticker(const SynthSpec& s, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return s.ticker_prefix + buf;
}

}  // namespace detail

// Piecewise-drift random walks around one shared market series, quarterly
// fundamentals with a planted regime-sign feature, and the ground truth.
inline SynthOutput generate(const SynthSpec& spec) {
    spec.validate();
    SynthOutput out;
    for (std::size_t f = 0; f < spec.raw_features; ++f) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "f%03zu", f);
        out.feature_names.emplace_back(buf);
    }

    Rng market_rng(derive_seed(spec.seed, "market"));
    out.market.ticker = spec.market_ticker;
    out.market.kind = SeriesKind::market;
    std::vector<double> log_market(spec.weeks);
    log_market[0] = std::log(100.0);
    for (std::size_t t = 1; t < spec.weeks; ++t)
        log_market[t] = log_market[t - 1] + spec.market_drift + spec.market_sigma * market_rng.normal();
    for (std::size_t t = 0; t < spec.weeks; ++t)
        out.market.points.push_back({spec.start + std::chrono::weeks{t}, std::exp(log_market[t])});

    const double good_cut = SynthSpec::five_percent_weekly();
    for (std::size_t i = 0; i < spec.n_companies; ++i) {
        Rng rng(hash_combine(derive_seed(spec.seed, "company"), i));
        CompanyTruth truth;
        truth.ticker = detail::synth_ticker(spec, i);

        // Regime schedule.
        bool good = rng.uniform() < 0.5;
        double drift = good ? spec.good_drift : spec.bad_drift;
        std::vector<InjectedChange> changes;
        if (!spec.change_points.empty()) {
            changes = spec.change_points[i];
        } else if (spec.changes_per_company > 0) {
            const double step = static_cast<double>(spec.weeks) / static_cast<double>(spec.changes_per_company + 1);
            for (std::size_t k = 1; k <= spec.changes_per_company; ++k) {
                const double jitter = rng.uniform(-0.25, 0.25) * step;
                auto idx = static_cast<std::size_t>(std::llround(step * static_cast<double>(k) + jitter));
                idx = std::clamp<std::size_t>(idx, 1, spec.weeks - 2);
                if (!changes.empty() && idx <= changes.back().index) continue;
                changes.push_back({idx, 0.0});
            }
            bool g = good;
            double d = drift;
            for (auto& c : changes) {
                g = !g;
                const double nd = g ? spec.good_drift : spec.bad_drift;
                c.drift_shift = nd - d;
                d = nd;
            }
        }

        std::vector<double> excess(spec.weeks, drift);  // drift of the increment ending at t
        {
            std::size_t next = 0;
            double d = drift;
            for (std::size_t t = 1; t < spec.weeks; ++t) {
                while (next < changes.size() && changes[next].index < t) d += changes[next++].drift_shift;
                excess[t] = d;
            }
        }
        std::size_t prev = 0;
        for (const auto& c : changes) {
            truth.changes.push_back({c.index, c.drift_shift, c.drift_shift != 0.0});
            truth.intervals.push_back({{prev, c.index}, excess[prev + 1], excess[prev + 1] >= good_cut ? 1 : 0});
            prev = c.index;
        }
        truth.intervals.push_back({{prev, spec.weeks - 1}, excess[prev + 1], excess[prev + 1] >= good_cut ? 1 : 0});

        CompanyDataset c;
        c.ticker = truth.ticker;
        c.stock.ticker = truth.ticker;
        c.stock.kind = SeriesKind::stock;
        double log_s = std::log(20.0) + 0.3 * rng.normal();
        for (std::size_t t = 0; t < spec.weeks; ++t) {
            if (t > 0) log_s += (log_market[t] - log_market[t - 1]) + excess[t] + spec.noise_sigma * rng.normal();
            c.stock.points.push_back({spec.start + std::chrono::weeks{t}, std::exp(log_s)});
        }
        c.market = out.market;

        // Quarterly fundamentals, one record every 13 weeks from the first week.
        std::size_t quarters = (spec.weeks - 1) / 13 + 1;
        if (i < spec.short_companies) quarters = std::min(quarters, spec.short_quarters);
        for (std::size_t q = 0; q < quarters; ++q) {
            const std::size_t t = q * 13;
            FeatureRecord rec;
            rec.ticker = c.ticker;
            rec.quarter_end = spec.start + std::chrono::weeks{t};
            rec.values.resize(spec.raw_features);
            // The planted feature reads the regime one quarter ahead, so the
            // record in force at an interval start tends to describe it.
            const double regime = excess[std::min(t + 13, spec.weeks - 1)] >= good_cut ? 1.0 : -1.0;
            for (std::size_t f = 0; f < spec.raw_features; ++f) {
                double v;
                if (f < spec.key_ratio_count) {
                    v = std::exp(2.5 + 0.4 * rng.normal());
                } else if (f == spec.planted_feature) {
                    v = regime * (0.5 + std::abs(0.5 * rng.normal()));
                } else {
                    v = rng.normal();
                    const bool sparse = f >= spec.raw_features - spec.sparse_features;
                    if (rng.uniform() < (sparse ? spec.sparse_missing_rate : spec.missing_rate)) v = csv::kMissing;
                }
                rec.values[f] = v;
            }
            c.records.push_back(std::move(rec));
        }
        out.companies.push_back(align_and_log(std::move(c)));
        out.truth.push_back(std::move(truth));
    }
    return out;
}

// Writes prices/<ticker>.csv (plus the market file), fundamentals.csv and
// the ground truth in the formats ingest reads.
inline void write_fixture(const SynthOutput& s, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "prices");
    csv::write_file(dir / "prices" / (s.market.ticker + ".csv"), prices_to_csv(s.market));
    std::vector<FeatureRecord> all;
    for (const auto& c : s.companies) {
        csv::write_file(dir / "prices" / (c.ticker + ".csv"), prices_to_csv(c.stock));
        all.insert(all.end(), c.records.begin(), c.records.end());
    }
    csv::write_file(dir / "fundamentals.csv", fundamentals_to_csv(s.feature_names, all));

    std::string changes = "ticker,index,drift_shift,recoverable\n";
    std::string intervals = "ticker,start_idx,end_idx,excess_drift,label\n";
    for (const auto& t : s.truth) {
        for (const auto& c : t.changes)
            changes += t.ticker + "," + std::to_string(c.index) + "," + csv::fmt(c.drift_shift) + "," +
                       (c.recoverable ? "1" : "0") + "\n";
        for (const auto& iv : t.intervals)
            intervals += t.ticker + "," + std::to_string(iv.interval.start) + "," + std::to_string(iv.interval.end) +
                         "," + csv::fmt(iv.excess_drift) + "," + std::to_string(iv.label) + "\n";
    }
    csv::write_file(dir / "truth_changes.csv", changes);
    csv::write_file(dir / "truth_intervals.csv", intervals);
}

// ---------------------------------------------------------------------------
// Single-series fixtures for detector checks
// ---------------------------------------------------------------------------

struct SteppedSeries {
    std::vector<double> values;
    std::vector<std::size_t> changes;
};

// Random walk with noise sigma whose drift jumps by [min_shift, max_shift]
// sigmas at `n_shifts` jittered, evenly spaced indices. Drift stays within
// +-max_shift sigmas.
inline SteppedSeries stepped_drift_series(std::uint64_t seed, std::size_t length, std::size_t n_shifts,
                                          double sigma = 1.0, double min_shift = 5.0, double max_shift = 8.0) {
    Rng rng(seed);
    SteppedSeries s;
    const double step = static_cast<double>(length) / static_cast<double>(n_shifts + 1);
    for (std::size_t k = 1; k <= n_shifts; ++k)
        s.changes.push_back(static_cast<std::size_t>(std::llround(step * static_cast<double>(k) + rng.uniform(-0.2, 0.2) * step)));
    double drift = rng.uniform(-2.0, 2.0) * sigma;
    std::size_t next = 0;
    s.values.resize(length);
    s.values[0] = 0.0;
    for (std::size_t t = 1; t < length; ++t) {
        while (next < s.changes.size() && s.changes[next] < t) {
            const double mag = rng.uniform(min_shift, max_shift) * sigma;
            double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            if (std::abs(drift + sign * mag) > max_shift * sigma) sign = -sign;
            drift += sign * mag;
            ++next;
        }
        s.values[t] = s.values[t - 1] + drift + sigma * rng.normal();
    }
    return s;
}

inline std::vector<double> random_walk(std::uint64_t seed, std::size_t length, double sigma = 1.0) {
    Rng rng(seed);
    std::vector<double> v(length, 0.0);
    for (std::size_t t = 1; t < length; ++t) v[t] = v[t - 1] + sigma * rng.normal();
    return v;
}

}  // namespace mktsom
