#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mktsom/csv.hpp"
#include "mktsom/date.hpp"
#include "mktsom/error.hpp"
#include "mktsom/rng.hpp"
#include "mktsom/stats.hpp"

namespace mktsom {

struct RowTag {
    std::string ticker;
    Date date{};

    friend bool operator==(const RowTag&, const RowTag&) = default;
};

// Row-major matrix of feature values; NaN marks a missing cell.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<std::string> col_names;
    std::vector<RowTag> provenance;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }

    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
        return out;
    }

    void validate() const {
        if (values.size() != rows * cols) throw ValidationError("feature matrix size mismatch");
        if (col_names.size() != cols) throw ValidationError("feature matrix needs one name per column");
        if (provenance.size() != rows) throw ValidationError("feature matrix needs one provenance tag per row");
    }
};

// Matrix with generated column names (f0, f1, ...) and blank provenance.
inline FeatureMatrix make_matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    FeatureMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.values = std::move(values);
    if (m.values.size() != rows * cols) throw ValidationError("value count does not match shape");
    for (std::size_t c = 0; c < cols; ++c) m.col_names.push_back("f" + std::to_string(c));
    m.provenance.resize(rows);
    return m;
}

inline FeatureMatrix select_columns(const FeatureMatrix& m, std::span<const std::size_t> cols) {
    FeatureMatrix out;
    out.rows = m.rows;
    out.cols = cols.size();
    out.provenance = m.provenance;
    for (std::size_t c : cols) {
        if (c >= m.cols) throw ValidationError("column index out of range");
        out.col_names.push_back(m.col_names[c]);
    }
    out.values.resize(out.rows * out.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t k = 0; k < cols.size(); ++k) out.at(r, k) = m.at(r, cols[k]);
    return out;
}

inline FeatureMatrix select_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    FeatureMatrix out;
    out.rows = rows.size();
    out.cols = m.cols;
    out.col_names = m.col_names;
    out.values.reserve(out.rows * out.cols);
    for (std::size_t r : rows) {
        if (r >= m.rows) throw ValidationError("row index out of range");
        const auto src = m.row(r);
        out.values.insert(out.values.end(), src.begin(), src.end());
        out.provenance.push_back(m.provenance[r]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Missing data
// ---------------------------------------------------------------------------

struct CleanReport {
    std::vector<std::pair<std::string, double>> dropped_cols;  // name, missing fraction
    std::size_t imputed_cells = 0;
    std::vector<std::size_t> kept_cols;  // indices into the input matrix
    std::vector<double> medians;         // per kept column, used for imputation
};

// Drops columns whose non-finite fraction exceeds the threshold and fills
// the remaining gaps with the column median.
inline std::pair<FeatureMatrix, CleanReport> clean_features(const FeatureMatrix& m, double max_missing_fraction) {
    if (!(max_missing_fraction >= 0.0 && max_missing_fraction <= 1.0))
        throw ValidationError("max_missing_fraction must lie in [0, 1]");
    CleanReport rep;
    for (std::size_t c = 0; c < m.cols; ++c) {
        std::size_t bad = 0;
        for (std::size_t r = 0; r < m.rows; ++r) bad += !std::isfinite(m.at(r, c));
        const double frac = m.rows ? static_cast<double>(bad) / static_cast<double>(m.rows) : 0.0;
        if (frac > max_missing_fraction)
            rep.dropped_cols.emplace_back(m.col_names[c], frac);
        else
            rep.kept_cols.push_back(c);
    }
    FeatureMatrix out = select_columns(m, rep.kept_cols);
    for (std::size_t k = 0; k < out.cols; ++k) {
        std::vector<double> present;
        for (std::size_t r = 0; r < out.rows; ++r)
            if (std::isfinite(out.at(r, k))) present.push_back(out.at(r, k));
        if (present.size() == out.rows) {
            rep.medians.push_back(out.rows ? stats::median(present) : 0.0);
            continue;
        }
        if (present.empty()) throw ImputationError("column '" + out.col_names[k] + "' has no values to impute from");
        const double med = stats::median(std::move(present));
        rep.medians.push_back(med);
        for (std::size_t r = 0; r < out.rows; ++r) {
            if (!std::isfinite(out.at(r, k))) {
                out.at(r, k) = med;
                ++rep.imputed_cells;
            }
        }
    }
    return {std::move(out), std::move(rep)};
}

// Applies a fitted cleaning (column subset plus medians) to other rows.
inline FeatureMatrix apply_clean(const FeatureMatrix& m, const CleanReport& rep) {
    FeatureMatrix out = select_columns(m, rep.kept_cols);
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t k = 0; k < out.cols; ++k)
            if (!std::isfinite(out.at(r, k))) out.at(r, k) = rep.medians[k];
    return out;
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

struct ColumnScale {
    double mean = 0.0;
    double stddev = 1.0;  // population
    bool constant = false;
};

inline FeatureMatrix apply_zscore(FeatureMatrix m, std::span<const ColumnScale> scales) {
    if (scales.size() != m.cols) throw ValidationError("scale count does not match columns");
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            double& v = m.at(r, c);
            if (!std::isfinite(v)) continue;
            v = scales[c].constant ? 0.0 : (v - scales[c].mean) / scales[c].stddev;
        }
    }
    return m;
}

// Population z-scores per column. Zero-variance columns become zeros and are
// flagged.
inline std::pair<FeatureMatrix, std::vector<ColumnScale>> zscore_normalize(const FeatureMatrix& m) {
    std::vector<ColumnScale> scales(m.cols);
    for (std::size_t c = 0; c < m.cols; ++c) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < m.rows; ++r) {
            if (std::isfinite(m.at(r, c))) {
                sum += m.at(r, c);
                ++n;
            }
        }
        auto& s = scales[c];
        s.mean = n ? sum / static_cast<double>(n) : 0.0;
        double ss = 0.0;
        for (std::size_t r = 0; r < m.rows; ++r)
            if (std::isfinite(m.at(r, c))) ss += (m.at(r, c) - s.mean) * (m.at(r, c) - s.mean);
        s.stddev = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
        s.constant = !(s.stddev > 1e-12 * std::max(1.0, std::abs(s.mean)));
        if (s.constant) s.stddev = 1.0;
    }
    return {apply_zscore(m, scales), scales};
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaResult {
    std::vector<double> mean;                     // per column
    std::vector<std::vector<double>> components;  // k unit vectors, by decreasing variance
    std::vector<double> eigenvalues;              // all columns, descending, clamped at 0
    std::vector<double> explained_variance_ratio; // all columns, sums to 1
};

// Eigen-decomposition of the sample covariance of the (finite) matrix. The
// caller standardizes first if it wants correlation-scale PCA. k larger than
// the rank yields trailing zero ratios.
inline PcaResult pca_fit(const FeatureMatrix& m, std::size_t k) {
    if (m.rows < 2 || m.cols == 0) throw ValidationError("PCA needs at least 2 rows and 1 column");
    k = std::min(k, m.cols);
    Eigen::MatrixXd x(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) {
            const double v = m.at(r, c);
            if (!std::isfinite(v)) throw ValidationError("PCA input must be finite");
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    const Eigen::RowVectorXd mu = x.colwise().mean();
    x.rowwise() -= mu;
    const Eigen::MatrixXd cov = (x.adjoint() * x) / static_cast<double>(m.rows - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw DomainError("covariance eigen-decomposition failed");

    PcaResult out;
    out.mean.assign(mu.data(), mu.data() + mu.size());
    const auto d = static_cast<Eigen::Index>(m.cols);
    double total = 0.0;
    for (Eigen::Index i = d - 1; i >= 0; --i) {
        const double ev = std::max(0.0, eig.eigenvalues()(i));
        out.eigenvalues.push_back(ev);
        total += ev;
    }
    if (!(total > 0.0)) throw DomainError("PCA input has zero total variance");
    for (double ev : out.eigenvalues) out.explained_variance_ratio.push_back(ev / total);
    for (std::size_t j = 0; j < k; ++j) {
        const Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - static_cast<Eigen::Index>(j));
        // Sign convention: largest-magnitude entry positive.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        const double sign = v(arg) < 0.0 ? -1.0 : 1.0;
        std::vector<double> comp(m.cols);
        for (Eigen::Index c = 0; c < d; ++c) comp[static_cast<std::size_t>(c)] = sign * v(c);
        out.components.push_back(std::move(comp));
    }
    return out;
}

// Mean squared residual after projecting onto the first k components.
inline double reconstruction_error(const FeatureMatrix& m, const PcaResult& pca, std::size_t k) {
    k = std::min(k, pca.components.size());
    double total = 0.0;
    std::vector<double> centered(m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) centered[c] = m.at(r, c) - pca.mean[c];
        std::vector<double> recon(m.cols, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            const auto& comp = pca.components[j];
            const double score = std::inner_product(centered.begin(), centered.end(), comp.begin(), 0.0);
            for (std::size_t c = 0; c < m.cols; ++c) recon[c] += score * comp[c];
        }
        for (std::size_t c = 0; c < m.cols; ++c) total += (centered[c] - recon[c]) * (centered[c] - recon[c]);
    }
    return total / static_cast<double>(m.rows);
}

// ---------------------------------------------------------------------------
// Extra-trees importance
// ---------------------------------------------------------------------------

struct ImportanceRanking {
    std::vector<double> scores;      // per column, non-negative, sum 1
    std::vector<std::size_t> order;  // columns by descending score, ties by index
};

struct ExtOptions {
    std::size_t n_trees = 100;
    std::size_t max_features = 0;  // 0: floor(sqrt(cols))
    std::size_t min_samples_split = 2;
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0: hardware concurrency
};

namespace detail {

// Random draws are keyed by column name rather than position, so permuting
// columns permutes the importances exactly.
inline std::vector<std::uint64_t> column_keys(const std::vector<std::string>& names) {
    std::vector<std::uint64_t> keys(names.size());
    std::map<std::string, std::uint64_t> seen;
    for (std::size_t c = 0; c < names.size(); ++c) keys[c] = hash_combine(fnv1a(names[c]), seen[names[c]]++);
    return keys;
}

inline double gini_weighted(std::size_t n, std::size_t pos) {
    if (n == 0) return 0.0;
    const double p = static_cast<double>(pos) / static_cast<double>(n);
    return static_cast<double>(n) * 2.0 * p * (1.0 - p);
}

inline std::vector<double> grow_extra_tree(const FeatureMatrix& m, std::span<const int> labels,
                                           std::span<const std::uint64_t> keys, std::size_t max_features,
                                           std::size_t min_split, std::uint64_t tree_seed) {
    const std::size_t d = m.cols;
    std::vector<double> imp(d, 0.0);
    const double total_n = static_cast<double>(m.rows);

    struct Node {
        std::vector<std::size_t> idx;
        std::uint64_t id;
    };
    std::vector<Node> stack;
    {
        Node root{std::vector<std::size_t>(m.rows), tree_seed};
        std::iota(root.idx.begin(), root.idx.end(), std::size_t{0});
        stack.push_back(std::move(root));
    }
    std::vector<std::pair<std::uint64_t, std::size_t>> priority(d);
    while (!stack.empty()) {
        Node node = std::move(stack.back());
        stack.pop_back();
        const std::size_t n = node.idx.size();
        std::size_t pos = 0;
        for (std::size_t i : node.idx) pos += labels[i] == 1;
        if (n < min_split || pos == 0 || pos == n) continue;

        for (std::size_t f = 0; f < d; ++f) priority[f] = {hash_combine(node.id, keys[f]), f};
        std::sort(priority.begin(), priority.end(), [&](const auto& a, const auto& b) {
            return a.first != b.first ? a.first < b.first : keys[a.second] < keys[b.second];
        });

        const double parent = gini_weighted(n, pos);
        double best_gain = -1.0;
        std::size_t best_f = 0;
        double best_thr = 0.0;
        std::size_t tried = 0;
        for (const auto& [prio, f] : priority) {
            if (tried == max_features) break;
            double lo = m.at(node.idx[0], f), hi = lo;
            for (std::size_t i : node.idx) {
                lo = std::min(lo, m.at(i, f));
                hi = std::max(hi, m.at(i, f));
            }
            if (!(hi > lo)) continue;
            ++tried;
            const double thr = lo + to_unit(splitmix64(prio)) * (hi - lo);
            std::size_t nl = 0, pl = 0;
            for (std::size_t i : node.idx) {
                if (m.at(i, f) <= thr) {
                    ++nl;
                    pl += labels[i] == 1;
                }
            }
            const double gain = parent - gini_weighted(nl, pl) - gini_weighted(n - nl, pos - pl);
            if (gain > best_gain) {
                best_gain = gain;
                best_f = f;
                best_thr = thr;
            }
        }
        if (tried == 0) continue;
        imp[best_f] += std::max(0.0, best_gain) / total_n;
        Node left{{}, hash_combine(node.id, 1)}, right{{}, hash_combine(node.id, 2)};
        for (std::size_t i : node.idx) (m.at(i, best_f) <= best_thr ? left.idx : right.idx).push_back(i);
        stack.push_back(std::move(right));
        stack.push_back(std::move(left));
    }
    return imp;
}

// Sum in a fixed column order so the total does not depend on column layout.
inline double canonical_sum(std::span<const double> v, std::span<const std::size_t> order) {
    double s = 0.0;
    for (std::size_t c : order) s += v[c];
    return s;
}

}  // namespace detail

// Impurity-based importance from an ensemble of extremely randomized trees:
// at each node a random subset of features is drawn, each gets one uniform
// random threshold in its node range, and the best Gini split is kept. Per
// tree importances are normalized, averaged in tree order and renormalized.
inline ImportanceRanking ext_importance(const FeatureMatrix& m, std::span<const int> labels, const ExtOptions& opt) {
    m.validate();
    if (labels.size() != m.rows) throw ValidationError("label count does not match rows");
    if (opt.n_trees < 1) throw ValidationError("n_trees must be at least 1");
    if (m.cols == 0) throw ValidationError("no features to rank");
    std::size_t pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
        pos += l == 1;
    }
    if (pos == 0 || pos == m.rows) throw ValidationError("feature ranking needs both label classes");
    for (double v : m.values)
        if (!std::isfinite(v)) throw ValidationError("feature ranking input must be finite");

    const auto keys = detail::column_keys(m.col_names);
    std::vector<std::size_t> canon(m.cols);
    std::iota(canon.begin(), canon.end(), std::size_t{0});
    std::sort(canon.begin(), canon.end(), [&](std::size_t a, std::size_t b) {
        return keys[a] != keys[b] ? keys[a] < keys[b] : m.col_names[a] < m.col_names[b];
    });
    const std::size_t max_features =
        opt.max_features ? opt.max_features
                         : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(m.cols))));

    std::vector<std::vector<double>> per_tree(opt.n_trees);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            auto imp = detail::grow_extra_tree(m, labels, keys, max_features, opt.min_samples_split,
                                               hash_combine(opt.seed, t));
            const double s = detail::canonical_sum(imp, canon);
            if (s > 0.0)
                for (double& v : imp) v /= s;
            per_tree[t] = std::move(imp);
        }
    };
    unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, opt.n_trees));
    if (threads <= 1) {
        work(0, opt.n_trees);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (opt.n_trees + threads - 1) / threads;
        for (unsigned k = 0; k < threads; ++k) {
            const std::size_t b = k * chunk, e = std::min(opt.n_trees, b + chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }

    ImportanceRanking out;
    out.scores.assign(m.cols, 0.0);
    for (const auto& imp : per_tree)
        for (std::size_t c = 0; c < m.cols; ++c) out.scores[c] += imp[c];
    const double total = detail::canonical_sum(out.scores, canon);
    for (double& s : out.scores) s = total > 0.0 ? s / total : 1.0 / static_cast<double>(m.cols);
    out.order.resize(m.cols);
    std::iota(out.order.begin(), out.order.end(), std::size_t{0});
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
    return out;
}

inline ImportanceRanking ext_importance(const FeatureMatrix& m, std::span<const int> labels, std::size_t n_trees,
                                        std::uint64_t seed) {
    ExtOptions opt;
    opt.n_trees = n_trees;
    opt.seed = seed;
    return ext_importance(m, labels, opt);
}

// Keeps the k highest-ranked columns in their original order.
inline FeatureMatrix select_top_k(const ImportanceRanking& r, const FeatureMatrix& m, std::size_t k) {
    if (k > m.cols || r.order.size() != m.cols) throw ValidationError("k exceeds the number of ranked features");
    std::vector<std::size_t> keep(r.order.begin(), r.order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(keep.begin(), keep.end());
    return select_columns(m, keep);
}

}  // namespace mktsom
