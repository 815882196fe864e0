#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mktsom/csv.hpp"
#include "mktsom/error.hpp"
#include "mktsom/featsel.hpp"
#include "mktsom/rng.hpp"

namespace mktsom {

// Rectangular lattice of codebook vectors, unit-major: unit u = r * cols + c
// occupies codebook[u * dim, (u + 1) * dim).
struct SomGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t dim = 0;
    std::vector<double> codebook;
    std::size_t trained_epochs = 0;
    std::uint64_t seed = 0;

    std::size_t units() const noexcept { return rows * cols; }
    std::span<const double> unit(std::size_t u) const { return {codebook.data() + u * dim, dim}; }
    std::span<double> unit(std::size_t u) { return {codebook.data() + u * dim, dim}; }

    friend bool operator==(const SomGrid&, const SomGrid&) = default;
};

enum class SomInit { random_sample, pca_plane };

struct TrainConfig {
    std::size_t epochs = 20;
    double radius_start = 0.0;  // 0: max(rows, cols) / 4
    double radius_end = 1.0;
    std::uint64_t seed = 0;
    SomInit init = SomInit::random_sample;
    unsigned threads = 0;  // 0: hardware concurrency

    double start_radius(const SomGrid& g) const {
        return radius_start > 0.0 ? radius_start : std::max(1.0, static_cast<double>(std::max(g.rows, g.cols)) / 4.0);
    }
};

struct Bmu {
    std::size_t unit = 0;
    double distance = 0.0;
};

namespace detail {

inline unsigned thread_count(unsigned requested, std::size_t work) {
    unsigned t = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(t, work / 256 + 1)));
}

template <class Fn>
void parallel_chunks(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned k = 0; k < threads; ++k) {
        const std::size_t b = k * chunk, e = std::min(n, b + chunk);
        if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

// Picks the minimum of per-unit squared sums, rescaled for missing entries.
inline Bmu pick_bmu(std::span<const double> acc, std::size_t present, std::size_t dim) {
    const double scale = present == dim ? 1.0 : static_cast<double>(dim) / static_cast<double>(present);
    std::size_t best = 0;
    double best_d = acc[0] * scale;
    for (std::size_t u = 1; u < acc.size(); ++u) {
        const double d = acc[u] * scale;
        if (d < best_d) {
            best_d = d;
            best = u;
        }
    }
    return {best, std::sqrt(best_d)};
}

}  // namespace detail

// Masked Euclidean distance: squared differences over present entries,
// scaled by dim / present. Ties go to the lowest row-major unit.
inline Bmu bmu(const SomGrid& grid, std::span<const double> v) {
    if (v.size() != grid.dim) throw ValidationError("vector dimension does not match the map");
    if (grid.units() == 0) throw ValidationError("empty map");
    std::size_t present = 0;
    for (double x : v) present += !std::isnan(x);
    if (present == 0) throw ValidationError("cannot match an all-missing vector");
    std::vector<double> acc(grid.units(), 0.0);
    for (std::size_t u = 0; u < grid.units(); ++u) {
        const auto w = grid.unit(u);
        double s = 0.0;
        for (std::size_t d = 0; d < grid.dim; ++d) {
            if (std::isnan(v[d])) continue;
            const double diff = v[d] - w[d];
            s += diff * diff;
        }
        acc[u] = s;
    }
    return detail::pick_bmu(acc, present, grid.dim);
}

// BMU of every row. Same arithmetic as bmu(), laid out dimension-major over
// units so the inner loop vectorizes.
inline std::vector<Bmu> bmu_all(const SomGrid& grid, const FeatureMatrix& data, unsigned threads = 0) {
    if (data.cols != grid.dim) throw ValidationError("data dimension does not match the map");
    const std::size_t U = grid.units(), D = grid.dim;
    if (U == 0) throw ValidationError("empty map");
    std::vector<double> wt(D * U);
    for (std::size_t u = 0; u < U; ++u)
        for (std::size_t d = 0; d < D; ++d) wt[d * U + u] = grid.codebook[u * D + d];

    std::vector<Bmu> out(data.rows);
    detail::parallel_chunks(data.rows, detail::thread_count(threads, data.rows), [&](std::size_t b, std::size_t e) {
        std::vector<double> acc(U);
        for (std::size_t r = b; r < e; ++r) {
            const auto v = data.row(r);
            std::fill(acc.begin(), acc.end(), 0.0);
            std::size_t present = 0;
            for (std::size_t d = 0; d < D; ++d) {
                const double x = v[d];
                if (std::isnan(x)) continue;
                ++present;
                const double* w = wt.data() + d * U;
                for (std::size_t u = 0; u < U; ++u) {
                    const double diff = x - w[u];
                    acc[u] += diff * diff;
                }
            }
            if (present == 0) {
                out[r] = {std::numeric_limits<std::size_t>::max(), 0.0};
                continue;
            }
            out[r] = detail::pick_bmu(acc, present, D);
        }
    });
    for (std::size_t r = 0; r < data.rows; ++r)
        if (out[r].unit == std::numeric_limits<std::size_t>::max())
            throw ValidationError("row " + std::to_string(r) + " has no present values");
    return out;
}

inline double quantization_error(const SomGrid& grid, const FeatureMatrix& data, unsigned threads = 0) {
    if (data.rows == 0) return 0.0;
    const auto hits = bmu_all(grid, data, threads);
    double s = 0.0;
    for (const auto& h : hits) s += h.distance;
    return s / static_cast<double>(data.rows);
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> present_column_means(const FeatureMatrix& data) {
    std::vector<double> mean(data.cols, 0.0);
    for (std::size_t c = 0; c < data.cols; ++c) {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < data.rows; ++r) {
            if (!std::isnan(data.at(r, c))) {
                s += data.at(r, c);
                ++n;
            }
        }
        mean[c] = n ? s / static_cast<double>(n) : 0.0;
    }
    return mean;
}

}  // namespace detail

// random_sample: each unit copies a row drawn with replacement (missing cells
// take the column mean). pca_plane: units spread linearly over [-1, 1] times
// one standard deviation along the first two principal components, rows
// following the first and columns the second.
inline SomGrid init_codebook(const FeatureMatrix& data, std::size_t rows, std::size_t cols, const TrainConfig& cfg) {
    if (data.rows < 1) throw ValidationError("cannot initialize a map from empty data");
    if (rows < 1 || cols < 1) throw ValidationError("map needs at least one row and column");
    SomGrid g;
    g.rows = rows;
    g.cols = cols;
    g.dim = data.cols;
    g.seed = cfg.seed;
    g.codebook.resize(g.units() * g.dim);
    const auto means = detail::present_column_means(data);

    if (cfg.init == SomInit::random_sample) {
        Rng rng(cfg.seed);
        for (std::size_t u = 0; u < g.units(); ++u) {
            const auto src = data.row(rng.index(data.rows));
            auto dst = g.unit(u);
            for (std::size_t d = 0; d < g.dim; ++d) dst[d] = std::isnan(src[d]) ? means[d] : src[d];
        }
        return g;
    }

    FeatureMatrix filled = data;
    for (std::size_t r = 0; r < filled.rows; ++r)
        for (std::size_t c = 0; c < filled.cols; ++c)
            if (std::isnan(filled.at(r, c))) filled.at(r, c) = means[c];
    const PcaResult pca = pca_fit(filled, 2);
    auto axis = [](std::size_t i, std::size_t n) {
        return n > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    };
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            auto w = g.unit(r * cols + c);
            for (std::size_t d = 0; d < g.dim; ++d) w[d] = pca.mean[d];
            const double coef[2] = {axis(r, rows), axis(c, cols)};
            for (std::size_t j = 0; j < pca.components.size() && j < 2; ++j) {
                const double s = coef[j] * std::sqrt(pca.eigenvalues[j]);
                for (std::size_t d = 0; d < g.dim; ++d) w[d] += s * pca.components[j][d];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch training
// ---------------------------------------------------------------------------

namespace detail {

// Lexicographic order on row values with NaN after every number.
inline bool row_less(std::span<const double> a, std::span<const double> b) {
    for (std::size_t d = 0; d < a.size(); ++d) {
        const bool na = std::isnan(a[d]), nb = std::isnan(b[d]);
        if (na != nb) return nb;
        if (na) continue;
        if (a[d] != b[d]) return a[d] < b[d];
    }
    return false;
}

}  // namespace detail

// Batch SOM. Each epoch assigns every row to its BMU, then replaces every
// unit by the neighborhood-weighted mean of the data, with weights
// exp(-lattice_dist^2 / (2 r^2)) and r falling linearly from radius_start to
// radius_end. Missing cells drop out of both numerator and denominator.
// Rows are summed per BMU in sorted order so the result does not depend on
// data row order. If `qe_history` is given it receives the quantization
// error after each epoch. The untrained codebook is left out: a sampled init
// sits on data rows, so its error is not comparable with a smoothed map.
inline SomGrid batch_train(SomGrid grid, const FeatureMatrix& data, const TrainConfig& cfg,
                           std::vector<double>* qe_history = nullptr) {
    if (data.rows == 0) throw ValidationError("cannot train on empty data");
    if (data.cols != grid.dim) throw ValidationError("data dimension does not match the map");
    if (!(cfg.radius_end > 0.0)) throw ValidationError("radius_end must be positive");
    if (cfg.radius_start > 0.0 && cfg.radius_start < cfg.radius_end)
        throw ValidationError("radius_start must not be below radius_end");
    const std::size_t U = grid.units(), D = grid.dim;
    const double r0 = cfg.start_radius(grid);
    const double r1 = std::min(cfg.radius_end, r0);
    if (qe_history) qe_history->clear();

    std::vector<Bmu> hits;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        hits = bmu_all(grid, data, cfg.threads);
        if (qe_history && e > 0) {
            double s = 0.0;
            for (const auto& h : hits) s += h.distance;
            qe_history->push_back(s / static_cast<double>(data.rows));
        }

        std::vector<std::vector<std::size_t>> members(U);
        for (std::size_t r = 0; r < data.rows; ++r) members[hits[r].unit].push_back(r);
        std::vector<std::size_t> hit_units;
        std::vector<double> sum(U * D, 0.0), cnt(U * D, 0.0);
        for (std::size_t b = 0; b < U; ++b) {
            auto& rows = members[b];
            if (rows.empty()) continue;
            hit_units.push_back(b);
            std::sort(rows.begin(), rows.end(),
                      [&](std::size_t x, std::size_t y) { return detail::row_less(data.row(x), data.row(y)); });
            for (std::size_t r : rows) {
                const auto v = data.row(r);
                for (std::size_t d = 0; d < D; ++d) {
                    if (std::isnan(v[d])) continue;
                    sum[b * D + d] += v[d];
                    cnt[b * D + d] += 1.0;
                }
            }
        }

        const double radius = cfg.epochs > 1 ? r0 + (r1 - r0) * static_cast<double>(e) / static_cast<double>(cfg.epochs - 1) : r0;
        const double inv = 1.0 / (2.0 * radius * radius);
        std::vector<double> hrow(grid.rows), hcol(grid.cols);
        for (std::size_t k = 0; k < grid.rows; ++k) hrow[k] = std::exp(-static_cast<double>(k * k) * inv);
        for (std::size_t k = 0; k < grid.cols; ++k) hcol[k] = std::exp(-static_cast<double>(k * k) * inv);

        std::vector<double> next = grid.codebook;
        detail::parallel_chunks(U, detail::thread_count(cfg.threads, U * hit_units.size()),
                                [&](std::size_t ub, std::size_t ue) {
            std::vector<double> num(D), den(D);
            for (std::size_t u = ub; u < ue; ++u) {
                const std::size_t ur = u / grid.cols, uc = u % grid.cols;
                std::fill(num.begin(), num.end(), 0.0);
                std::fill(den.begin(), den.end(), 0.0);
                for (std::size_t b : hit_units) {
                    const std::size_t br = b / grid.cols, bc = b % grid.cols;
                    const double h = hrow[ur > br ? ur - br : br - ur] * hcol[uc > bc ? uc - bc : bc - uc];
                    if (h == 0.0) continue;
                    for (std::size_t d = 0; d < D; ++d) {
                        num[d] += h * sum[b * D + d];
                        den[d] += h * cnt[b * D + d];
                    }
                }
                for (std::size_t d = 0; d < D; ++d)
                    if (den[d] > 0.0) next[u * D + d] = num[d] / den[d];
            }
        });
        grid.codebook = std::move(next);
        ++grid.trained_epochs;
    }
    if (qe_history) qe_history->push_back(quantization_error(grid, data, cfg.threads));
    return grid;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct Umatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline double unit_distance(const SomGrid& g, std::size_t a, std::size_t b) {
    const auto wa = g.unit(a), wb = g.unit(b);
    double s = 0.0;
    for (std::size_t d = 0; d < g.dim; ++d) s += (wa[d] - wb[d]) * (wa[d] - wb[d]);
    return std::sqrt(s);
}

// Mean distance from each unit to its 4-connected lattice neighbors.
inline Umatrix umatrix(const SomGrid& g) {
    Umatrix m{g.rows, g.cols, std::vector<double>(g.units(), 0.0)};
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
            const std::size_t u = r * g.cols + c;
            double s = 0.0;
            int n = 0;
            if (r > 0) s += unit_distance(g, u, u - g.cols), ++n;
            if (r + 1 < g.rows) s += unit_distance(g, u, u + g.cols), ++n;
            if (c > 0) s += unit_distance(g, u, u - 1), ++n;
            if (c + 1 < g.cols) s += unit_distance(g, u, u + 1), ++n;
            m.values[u] = n ? s / n : 0.0;
        }
    }
    return m;
}

// Per-unit mean training label; NaN where no row lands.
struct LabeledComponentPlane {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<std::size_t> hits;
};

inline LabeledComponentPlane project_labels(const SomGrid& g, const FeatureMatrix& data, std::span<const int> labels,
                                            unsigned threads = 0) {
    if (labels.size() != data.rows) throw ValidationError("label count does not match rows");
    LabeledComponentPlane p{g.rows, g.cols, std::vector<double>(g.units(), 0.0), std::vector<std::size_t>(g.units(), 0)};
    const auto hits = bmu_all(g, data, threads);
    for (std::size_t r = 0; r < data.rows; ++r) {
        p.values[hits[r].unit] += labels[r];
        ++p.hits[hits[r].unit];
    }
    for (std::size_t u = 0; u < g.units(); ++u)
        p.values[u] = p.hits[u] ? p.values[u] / static_cast<double>(p.hits[u]) : std::nan("");
    return p;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline constexpr char kSomMagic[8] = {'M', 'K', 'T', 'S', 'O', 'M', '0', '1'};
inline constexpr std::size_t kSomHeaderBytes = 8 + 5 * 8;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

}  // namespace detail

// Header: magic "MKTSOM01", then rows, cols, dim, epochs, seed as
// little-endian u64; body: row-major codebook as little-endian IEEE doubles.
inline std::string serialize_codebook(const SomGrid& g) {
    std::string out(kSomMagic, sizeof kSomMagic);
    detail::put_u64(out, g.rows);
    detail::put_u64(out, g.cols);
    detail::put_u64(out, g.dim);
    detail::put_u64(out, g.trained_epochs);
    detail::put_u64(out, g.seed);
    for (double v : g.codebook) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline SomGrid deserialize_codebook(const std::string& bytes, const std::string& source = "codebook") {
    if (bytes.size() < kSomHeaderBytes || std::memcmp(bytes.data(), kSomMagic, sizeof kSomMagic) != 0)
        throw ArtifactError(source + ": not a codebook file");
    SomGrid g;
    g.rows = detail::get_u64(bytes, 8);
    g.cols = detail::get_u64(bytes, 16);
    g.dim = detail::get_u64(bytes, 24);
    g.trained_epochs = detail::get_u64(bytes, 32);
    g.seed = detail::get_u64(bytes, 40);
    if (g.rows == 0 || g.cols == 0 || g.dim == 0 || g.rows > (1u << 20) || g.cols > (1u << 20) || g.dim > (1u << 20))
        throw ArtifactError(source + ": implausible codebook shape");
    const std::size_t n = g.rows * g.cols * g.dim;
    if (bytes.size() != kSomHeaderBytes + 8 * n) throw ArtifactError(source + ": codebook size does not match header");
    g.codebook.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        g.codebook[i] = std::bit_cast<double>(detail::get_u64(bytes, kSomHeaderBytes + 8 * i));
        if (!std::isfinite(g.codebook[i])) throw ArtifactError(source + ": non-finite codebook value");
    }
    return g;
}

inline void save_codebook(const SomGrid& g, const std::filesystem::path& path) {
    csv::write_file(path, serialize_codebook(g));
}

inline SomGrid load_codebook(const std::filesystem::path& path) {
    return deserialize_codebook(csv::slurp(path), path.string());
}

// `row,col,<feature names...>` per unit.
inline std::string codebook_to_csv(const SomGrid& g, const std::vector<std::string>& names) {
    std::string out = "row,col";
    for (std::size_t d = 0; d < g.dim; ++d) out += "," + (d < names.size() ? names[d] : "w" + std::to_string(d));
    out += '\n';
    for (std::size_t u = 0; u < g.units(); ++u) {
        out += std::to_string(u / g.cols) + "," + std::to_string(u % g.cols);
        for (double v : g.unit(u)) out += "," + csv::fmt(v);
        out += '\n';
    }
    return out;
}

}  // namespace mktsom
