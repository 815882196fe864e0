#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mktsom/csv.hpp"
#include "mktsom/date.hpp"
#include "mktsom/error.hpp"
#include "mktsom/featsel.hpp"
#include "mktsom/som.hpp"

namespace mktsom {

// Good and bad label counts of the training rows landing on each unit.
struct VoteGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> good;
    std::vector<std::size_t> bad;

    std::size_t total() const {
        return std::accumulate(good.begin(), good.end(), std::size_t{0}) +
               std::accumulate(bad.begin(), bad.end(), std::size_t{0});
    }
};

inline VoteGrid accumulate_votes(const SomGrid& grid, const FeatureMatrix& data, std::span<const int> labels,
                                 unsigned threads = 0) {
    if (labels.size() != data.rows) throw ValidationError("label count does not match rows");
    VoteGrid v{grid.rows, grid.cols, std::vector<std::size_t>(grid.units(), 0),
               std::vector<std::size_t>(grid.units(), 0)};
    const auto hits = bmu_all(grid, data, threads);
    for (std::size_t r = 0; r < data.rows; ++r) {
        if (labels[r] == 1)
            ++v.good[hits[r].unit];
        else if (labels[r] == 0)
            ++v.bad[hits[r].unit];
        else
            throw ValidationError("labels must be 0 or 1");
    }
    return v;
}

enum class WeightMode {
    good_count,     // g * g / (g + b)
    literal_ratio,  // g * g / b, with b = 0 read as b = 1
};

inline const char* to_string(WeightMode m) { return m == WeightMode::good_count ? "good_count" : "literal_ratio"; }

// Per-unit score: the good-vote fraction weighted by the good-vote count.
// Units without votes score 0.
inline std::vector<double> fractional_weighted(const VoteGrid& v, WeightMode mode = WeightMode::good_count) {
    std::vector<double> out(v.good.size(), 0.0);
    for (std::size_t u = 0; u < out.size(); ++u) {
        const double g = static_cast<double>(v.good[u]);
        const double b = static_cast<double>(v.bad[u]);
        if (g + b == 0.0) continue;
        out[u] = mode == WeightMode::good_count ? g * (g / (g + b)) : g * (g / std::max(b, 1.0));
    }
    return out;
}

struct Kernel {
    std::size_t size = 1;
    std::vector<double> weights;  // size x size, row-major

    double at(std::size_t r, std::size_t c) const { return weights[r * size + c]; }
};

// Discrete 2-D Gaussian at integer offsets, normalized to sum 1.
inline Kernel gaussian_kernel(std::size_t size, double sigma) {
    if (size < 1 || size % 2 == 0) throw ValidationError("kernel size must be odd and >= 1");
    if (!(sigma > 0.0)) throw ValidationError("kernel sigma must be positive");
    Kernel k{size, std::vector<double>(size * size)};
    const double half = static_cast<double>(size / 2);
    double total = 0.0;
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            const double dy = static_cast<double>(r) - half, dx = static_cast<double>(c) - half;
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k.weights[r * size + c] = w;
            total += w;
        }
    }
    for (double& w : k.weights) w /= total;
    return k;
}

struct FwcMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> scores;
    std::size_t kernel_size = 1;
    double kernel_sigma = 1.0;

    double at(std::size_t r, std::size_t c) const { return scores[r * cols + c]; }
    double at(std::size_t unit) const { return scores[unit]; }
};

// Same-size 2-D convolution with edge-replicate padding.
inline FwcMatrix convolve(std::span<const double> scores, std::size_t rows, std::size_t cols, const Kernel& k,
                          double sigma = 0.0) {
    if (scores.size() != rows * cols) throw ValidationError("score grid size mismatch");
    if (k.size > rows || k.size > cols) throw ValidationError("kernel larger than the grid");
    FwcMatrix out{rows, cols, std::vector<double>(rows * cols, 0.0), k.size, sigma};
    const auto half = static_cast<std::ptrdiff_t>(k.size / 2);
    const auto R = static_cast<std::ptrdiff_t>(rows), C = static_cast<std::ptrdiff_t>(cols);
    for (std::ptrdiff_t r = 0; r < R; ++r) {
        for (std::ptrdiff_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t i = -half; i <= half; ++i) {
                const std::ptrdiff_t rr = std::clamp(r + i, std::ptrdiff_t{0}, R - 1);
                for (std::ptrdiff_t j = -half; j <= half; ++j) {
                    const std::ptrdiff_t cc = std::clamp(c + j, std::ptrdiff_t{0}, C - 1);
                    s += k.at(static_cast<std::size_t>(i + half), static_cast<std::size_t>(j + half)) *
                         scores[static_cast<std::size_t>(rr * C + cc)];
                }
            }
            out.scores[static_cast<std::size_t>(r * C + c)] = s;
        }
    }
    return out;
}

struct FwcOptions {
    std::size_t kernel_size = 5;
    double kernel_sigma = 1.0;
    WeightMode weight = WeightMode::good_count;
};

inline FwcMatrix build_fwc(const VoteGrid& votes, const FwcOptions& opt = {}) {
    const auto fw = fractional_weighted(votes, opt.weight);
    return convolve(fw, votes.rows, votes.cols, gaussian_kernel(opt.kernel_size, opt.kernel_sigma), opt.kernel_sigma);
}

struct RankedEntry {
    std::string ticker;
    Date date{};
    std::size_t unit = 0;
    double score = 0.0;
};

struct RankedResult {
    std::vector<RankedEntry> entries;  // scores non-increasing
};

// Scores each test row by the FWC value at its BMU and returns the top n.
// Equal scores order by ticker, then date, then unit.
inline RankedResult rank_vectors(const FwcMatrix& fwc, const SomGrid& grid, const FeatureMatrix& test,
                                 std::span<const RowTag> provenance, std::size_t n, unsigned threads = 0) {
    if (provenance.size() != test.rows) throw ValidationError("provenance length does not match test rows");
    if (fwc.rows != grid.rows || fwc.cols != grid.cols) throw ValidationError("FWC matrix does not match the map");
    RankedResult out;
    if (test.rows == 0) return out;
    const auto hits = bmu_all(grid, test, threads);
    out.entries.reserve(test.rows);
    for (std::size_t r = 0; r < test.rows; ++r)
        out.entries.push_back({provenance[r].ticker, provenance[r].date, hits[r].unit, fwc.at(hits[r].unit)});
    std::sort(out.entries.begin(), out.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.ticker != b.ticker) return a.ticker < b.ticker;
        if (a.date != b.date) return a.date < b.date;
        return a.unit < b.unit;
    });
    if (out.entries.size() > n) out.entries.resize(n);
    return out;
}

inline std::string ranking_to_csv(const RankedResult& r, std::size_t grid_cols) {
    std::string out = "rank,ticker,date,unit_row,unit_col,score\n";
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
        const auto& e = r.entries[i];
        out += std::to_string(i + 1) + "," + e.ticker + "," + format_date(e.date) + "," +
               std::to_string(e.unit / grid_cols) + "," + std::to_string(e.unit % grid_cols) + "," + csv::fmt(e.score) +
               "\n";
    }
    return out;
}

}  // namespace mktsom
