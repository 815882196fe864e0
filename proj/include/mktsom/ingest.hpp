#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mktsom/csv.hpp"
#include "mktsom/date.hpp"
#include "mktsom/error.hpp"

namespace mktsom {

enum class SeriesKind { stock, market };

struct PricePoint {
    Date date;
    double price;
};

struct PriceSeries {
    std::string ticker;
    SeriesKind kind = SeriesKind::stock;
    std::vector<PricePoint> points;

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
};

// Quarterly fundamentals. Missing entries are NaN, never zero.
struct FeatureRecord {
    std::string ticker;
    Date quarter_end;
    std::vector<double> values;
};

struct CompanyDataset {
    std::string ticker;
    PriceSeries stock;
    PriceSeries market;
    std::vector<FeatureRecord> records;
    std::vector<double> log_stock;
    std::vector<double> log_market;

    Date date_at(std::size_t i) const { return stock.points.at(i).date; }
};

enum class DropReason { too_short, missing_prices, missing_key_ratios };

inline const char* to_string(DropReason r) {
    switch (r) {
        case DropReason::too_short: return "too_short";
        case DropReason::missing_prices: return "missing_prices";
        case DropReason::missing_key_ratios: return "missing_key_ratios";
    }
    return "unknown";
}

struct InclusionReport {
    std::vector<std::string> kept;
    std::vector<std::pair<std::string, DropReason>> dropped;
};

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

// Sorts and validates a series: positive prices, at least two points, no
// duplicate dates.
inline void validate_series(PriceSeries& s, const std::string& source) {
    std::stable_sort(s.points.begin(), s.points.end(),
                     [](const PricePoint& a, const PricePoint& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < s.points.size(); ++i) {
        if (s.points[i].date == s.points[i - 1].date)
            throw ValidationError(source + ": duplicate date " + format_date(s.points[i].date));
    }
    if (s.points.size() < 2) throw ValidationError(source + ": price series needs at least 2 points");
}

// Price CSV: header `date,price`, one row per observation.
inline PriceSeries load_prices(const std::filesystem::path& path, SeriesKind kind) {
    const std::string src = path.string();
    const auto lines = csv::read_lines(path);
    if (lines.empty()) throw ParseError(src, 1, "empty file");
    const auto header = csv::split(lines.front().text);
    if (header.size() != 2 || header[0] != "date" || header[1] != "price")
        throw ParseError(src, lines.front().number, "expected header 'date,price'");

    PriceSeries s;
    s.ticker = path.stem().string();
    s.kind = kind;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& line = lines[i];
        const auto cells = csv::split(line.text);
        if (cells.size() != 2) throw ParseError(src, line.number, "expected 2 fields");
        const auto date = parse_date(cells[0]);
        if (!date) throw ParseError(src, line.number, "bad date '" + std::string(cells[0]) + "'");
        const auto price = csv::parse_double(cells[1]);
        if (!price) throw ParseError(src, line.number, "bad price '" + std::string(cells[1]) + "'");
        if (!(*price > 0.0) || !std::isfinite(*price))
            throw ValidationError(src + ":" + std::to_string(line.number) + ": price must be positive and finite");
        s.points.push_back({*date, *price});
    }
    validate_series(s, src);
    return s;
}

inline std::string prices_to_csv(const PriceSeries& s) {
    std::string out = "date,price\n";
    for (const auto& p : s.points) out += format_date(p.date) + "," + csv::fmt(p.price) + "\n";
    return out;
}

// Keeps the last observation of each ISO week. Weekly input passes through.
inline PriceSeries downsample_weekly(const PriceSeries& s) {
    PriceSeries out{s.ticker, s.kind, {}};
    for (const auto& p : s.points) {
        if (!out.points.empty() && week_start(out.points.back().date) == week_start(p.date))
            out.points.back() = p;
        else
            out.points.push_back(p);
    }
    return out;
}

struct Fundamentals {
    std::vector<std::string> feature_names;
    std::map<std::string, std::vector<FeatureRecord>> by_ticker;
};

// Fundamentals CSV: `ticker,quarter_end,f000,...`; empty or NaN means missing.
inline Fundamentals load_fundamentals(const std::filesystem::path& path) {
    const std::string src = path.string();
    const auto lines = csv::read_lines(path);
    if (lines.empty()) throw ParseError(src, 1, "empty file");
    const auto header = csv::split(lines.front().text);
    if (header.size() < 3 || header[0] != "ticker" || header[1] != "quarter_end")
        throw ParseError(src, lines.front().number, "expected header 'ticker,quarter_end,<features...>'");

    Fundamentals f;
    for (std::size_t i = 2; i < header.size(); ++i) f.feature_names.emplace_back(header[i]);
    const std::size_t width = header.size();
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& line = lines[i];
        const auto cells = csv::split(line.text);
        if (cells.size() != width)
            throw ParseError(src, line.number,
                             "expected " + std::to_string(width) + " fields, got " + std::to_string(cells.size()));
        FeatureRecord rec;
        rec.ticker = std::string(cells[0]);
        if (rec.ticker.empty()) throw ParseError(src, line.number, "empty ticker");
        const auto date = parse_date(cells[1]);
        if (!date) throw ParseError(src, line.number, "bad date '" + std::string(cells[1]) + "'");
        rec.quarter_end = *date;
        rec.values.reserve(width - 2);
        for (std::size_t c = 2; c < width; ++c) {
            bool ok = true;
            const auto v = csv::parse_cell(cells[c], ok);
            if (!ok) throw ParseError(src, line.number, "bad value '" + std::string(cells[c]) + "'");
            rec.values.push_back(*v);
        }
        f.by_ticker[rec.ticker].push_back(std::move(rec));
    }
    for (auto& [ticker, recs] : f.by_ticker) {
        std::stable_sort(recs.begin(), recs.end(),
                         [](const FeatureRecord& a, const FeatureRecord& b) { return a.quarter_end < b.quarter_end; });
        for (std::size_t i = 1; i < recs.size(); ++i) {
            if (recs[i].quarter_end == recs[i - 1].quarter_end)
                throw ValidationError(src + ": duplicate quarter " + format_date(recs[i].quarter_end) + " for " + ticker);
        }
    }
    return f;
}

inline std::string fundamentals_to_csv(const std::vector<std::string>& names,
                                       const std::vector<FeatureRecord>& records) {
    std::string out = "ticker,quarter_end";
    for (const auto& n : names) out += "," + n;
    out += '\n';
    for (const auto& r : records) {
        out += r.ticker + "," + format_date(r.quarter_end);
        for (double v : r.values) {
            out += ',';
            if (!csv::is_missing(v)) out += csv::fmt(v);
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inclusion and alignment
// ---------------------------------------------------------------------------

namespace detail {

// True when the series has an observation at or before `from`, one at or
// after `to`, and no gap wider than `max_gap` in between.
inline bool covers(const PriceSeries& s, Date from, Date to, std::chrono::days max_gap) {
    if (s.points.size() < 2) return false;
    if (s.points.front().date > from || s.points.back().date < to) return false;
    for (std::size_t i = 1; i < s.points.size(); ++i) {
        if (s.points[i].date <= from || s.points[i - 1].date >= to) continue;
        if (s.points[i].date - s.points[i - 1].date > max_gap) return false;
    }
    return true;
}

}  // namespace detail

// Filters companies: enough quarterly records, key ratios present in every
// kept record, and prices covering the span of the records. Records missing a
// key ratio are removed before the length check is repeated.
inline std::pair<std::vector<CompanyDataset>, InclusionReport> apply_inclusion_rules(
    std::vector<CompanyDataset> companies, std::size_t min_quarters, std::span<const std::size_t> key_ratio_indices) {
    if (min_quarters < 1) throw ValidationError("min_quarters must be at least 1");
    std::vector<CompanyDataset> kept;
    InclusionReport report;
    constexpr std::chrono::days kMaxGap{14};

    for (auto& c : companies) {
        if (c.records.size() < min_quarters) {
            report.dropped.emplace_back(c.ticker, DropReason::too_short);
            continue;
        }
        for (const auto& r : c.records) {
            for (std::size_t k : key_ratio_indices) {
                if (k >= r.values.size())
                    throw ValidationError("key ratio index " + std::to_string(k) + " out of range for " + c.ticker);
            }
        }
        std::erase_if(c.records, [&](const FeatureRecord& r) {
            return std::any_of(key_ratio_indices.begin(), key_ratio_indices.end(),
                               [&](std::size_t k) { return !std::isfinite(r.values[k]); });
        });
        if (c.records.size() < min_quarters) {
            report.dropped.emplace_back(c.ticker, DropReason::missing_key_ratios);
            continue;
        }
        const Date from = c.records.front().quarter_end;
        const Date to = c.records.back().quarter_end;
        if (!detail::covers(c.stock, from, to, kMaxGap) || !detail::covers(c.market, from, to, kMaxGap)) {
            report.dropped.emplace_back(c.ticker, DropReason::missing_prices);
            continue;
        }
        report.kept.push_back(c.ticker);
        kept.push_back(std::move(c));
    }
    return {std::move(kept), std::move(report)};
}

inline std::string inclusion_report_to_csv(const InclusionReport& r) {
    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& t : r.kept) rows.emplace_back(t, "kept,");
    for (const auto& [t, why] : r.dropped) rows.emplace_back(t, std::string("dropped,") + to_string(why));
    std::sort(rows.begin(), rows.end());
    std::string out = "ticker,status,reason\n";
    for (const auto& [t, rest] : rows) out += t + "," + rest + "\n";
    return out;
}

// Restricts stock and market to the dates they share and fills the log
// series. Idempotent.
inline CompanyDataset align_and_log(CompanyDataset c) {
    if (c.stock.empty() || c.market.empty()) throw AlignmentError(c.ticker + ": empty price series");
    std::vector<PricePoint> s, m;
    std::size_t i = 0, j = 0;
    while (i < c.stock.points.size() && j < c.market.points.size()) {
        const auto& a = c.stock.points[i];
        const auto& b = c.market.points[j];
        if (a.date < b.date) {
            ++i;
        } else if (b.date < a.date) {
            ++j;
        } else {
            s.push_back(a);
            m.push_back(b);
            ++i;
            ++j;
        }
    }
    if (s.empty()) throw AlignmentError(c.ticker + ": stock and market series share no dates");
    c.stock.points = std::move(s);
    c.market.points = std::move(m);
    c.log_stock.resize(c.stock.points.size());
    c.log_market.resize(c.market.points.size());
    for (std::size_t k = 0; k < c.stock.points.size(); ++k) {
        c.log_stock[k] = std::log(c.stock.points[k].price);
        c.log_market[k] = std::log(c.market.points[k].price);
    }
    return c;
}

// Most recent record with quarter_end <= t, or null.
inline const FeatureRecord* record_at(const std::vector<FeatureRecord>& records, Date t) {
    auto it = std::upper_bound(records.begin(), records.end(), t,
                               [](Date d, const FeatureRecord& r) { return d < r.quarter_end; });
    if (it == records.begin()) return nullptr;
    return &*std::prev(it);
}

// Loads every `<ticker>.csv` in `prices_dir` (except the market file) and
// joins it with its fundamentals. Tickers without fundamentals get no records.
inline std::vector<CompanyDataset> load_companies(const std::filesystem::path& prices_dir,
                                                  const std::string& market_ticker, const Fundamentals& fundamentals) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(prices_dir)) throw ArtifactError("prices directory not found: " + prices_dir.string());
    const fs::path market_path = prices_dir / (market_ticker + ".csv");
    if (!fs::exists(market_path)) throw ArtifactError("market series not found: " + market_path.string());
    const PriceSeries market = downsample_weekly(load_prices(market_path, SeriesKind::market));

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(prices_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv" && e.path() != market_path) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());

    std::vector<CompanyDataset> out;
    std::set<std::string> seen;
    for (const auto& f : files) {
        CompanyDataset c;
        c.stock = downsample_weekly(load_prices(f, SeriesKind::stock));
        c.ticker = c.stock.ticker;
        c.market = market;
        c.market.ticker = market_ticker;
        if (auto it = fundamentals.by_ticker.find(c.ticker); it != fundamentals.by_ticker.end()) c.records = it->second;
        seen.insert(c.ticker);
        out.push_back(std::move(c));
    }
    // Fundamentals without a price file still have to show up in the report.
    for (const auto& [ticker, recs] : fundamentals.by_ticker) {
        if (seen.count(ticker)) continue;
        CompanyDataset c;
        c.ticker = ticker;
        c.stock.ticker = ticker;
        c.market = market;
        c.records = recs;
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.ticker < b.ticker; });
    return out;
}

}  // namespace mktsom
