#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mktsom/changepoint.hpp"
#include "mktsom/csv.hpp"
#include "mktsom/date.hpp"
#include "mktsom/error.hpp"
#include "mktsom/featsel.hpp"
#include "mktsom/fwc.hpp"
#include "mktsom/ingest.hpp"
#include "mktsom/labeling.hpp"
#include "mktsom/rng.hpp"
#include "mktsom/som.hpp"
#include "mktsom/stats.hpp"

namespace mktsom {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// Every recognised key with its default, in file order.
inline const std::vector<std::pair<std::string, std::string>>& config_defaults() {
    static const std::vector<std::pair<std::string, std::string>> d{
        {"seed", "42"},
        {"threads", "0"},
        {"split_date", "2013-01-01"},
        {"paths.prices", "data/fixture/prices"},
        {"paths.fundamentals", "data/fixture/fundamentals.csv"},
        {"paths.output", "out"},
        {"paths.market_ticker", "MARKET"},
        {"ingest.min_quarters", "36"},
        {"ingest.key_ratios", "0,1"},
        {"segment.target", "medium"},
        {"segment.thresholds", "1,2,3,4,5"},
        {"segment.drifts", "0,0.25,0.5,1"},
        {"labeling.alpha", "0.05"},
        {"labeling.power", "0.80"},
        {"labeling.min_annual_return", "0.05"},
        {"labeling.sliding_window", "false"},
        {"labeling.stride", "1"},
        {"select.max_missing", "0.01"},
        {"select.k", "25"},
        {"select.trees", "100"},
        {"som.rows", "50"},
        {"som.cols", "50"},
        {"som.epochs", "20"},
        {"som.init", "random_sample"},
        {"som.radius_start", "0"},
        {"som.radius_end", "1"},
        {"fwc.kernel_size", "5"},
        {"fwc.sigma", "1.0"},
        {"fwc.weight", "good_count"},
        {"rank.top_n", "10"},
    };
    return d;
}

inline bool is_config_key(const std::string& key) {
    const auto& d = config_defaults();
    return std::any_of(d.begin(), d.end(), [&](const auto& kv) { return kv.first == key; });
}

using ConfigEntries = std::map<std::string, std::string>;

inline ConfigEntries default_entries() {
    ConfigEntries e;
    for (const auto& [k, v] : config_defaults()) e[k] = v;
    return e;
}

// `key = value` lines; `[section]` headers prefix later keys with `section.`;
// `#` starts a comment.
inline void parse_config_text(std::string_view text, const std::string& source, ConfigEntries& into) {
    std::string section;
    std::size_t number = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++number;
        std::string_view line = raw;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = csv::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(source, number, "unterminated section header");
            section = std::string(csv::trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(source, number, "expected 'key = value'");
        std::string key(csv::trim(line.substr(0, eq)));
        const std::string value(csv::trim(line.substr(eq + 1)));
        if (key.empty()) throw ParseError(source, number, "empty key");
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        if (!is_config_key(key)) throw ParseError(source, number, "unknown key '" + key + "'");
        into[key] = value;
    }
}

inline void apply_override(ConfigEntries& e, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ValidationError("override must look like key=value: " + std::string(assignment));
    const std::string key(csv::trim(assignment.substr(0, eq)));
    if (!is_config_key(key)) throw ValidationError("unknown config key '" + key + "'");
    e[key] = std::string(csv::trim(assignment.substr(eq + 1)));
}

inline std::string config_to_text(const ConfigEntries& e) {
    std::string out;
    std::string section;
    for (const auto& [key, _] : config_defaults()) {
        const auto dot = key.find('.');
        const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
        if (sec != section) {
            out += "\n[" + sec + "]\n";
            section = sec;
        }
        out += (dot == std::string::npos ? key : key.substr(dot + 1)) + " = " + e.at(key) + "\n";
    }
    return out;
}

struct PipelineConfig {
    std::uint64_t seed = 42;
    unsigned threads = 0;
    Date split_date{};
    fs::path prices_dir;
    fs::path fundamentals;
    fs::path output_dir;
    std::string market_ticker;
    std::size_t min_quarters = 36;
    std::vector<std::size_t> key_ratios;
    TargetSize target = TargetSize::medium;
    CusumGrid grid;
    PowerSpec power;
    SlidingWindow window;
    double max_missing = 0.01;
    std::size_t feature_k = 25;
    std::size_t ext_trees = 100;
    std::size_t som_rows = 50;
    std::size_t som_cols = 50;
    TrainConfig som;
    FwcOptions fwc;
    std::size_t top_n = 10;
    ConfigEntries entries;

    std::uint64_t ext_seed() const { return derive_seed(seed, "ext"); }
    std::uint64_t som_seed() const { return derive_seed(seed, "som"); }
};

namespace detail {

inline std::string cfg_value(const ConfigEntries& e, const std::string& key) {
    auto it = e.find(key);
    if (it == e.end()) throw ValidationError("missing config key '" + key + "'");
    return it->second;
}

inline double cfg_real(const ConfigEntries& e, const std::string& key) {
    const auto v = csv::parse_double(cfg_value(e, key));
    if (!v || !std::isfinite(*v)) throw ValidationError(key + ": expected a number");
    return *v;
}

inline std::size_t cfg_count(const ConfigEntries& e, const std::string& key, bool allow_zero = false) {
    const auto v = csv::parse_int(cfg_value(e, key));
    if (!v || *v < 0 || (!allow_zero && *v == 0))
        throw ValidationError(key + (allow_zero ? ": expected a non-negative integer" : ": expected a positive integer"));
    return static_cast<std::size_t>(*v);
}

inline bool cfg_bool(const ConfigEntries& e, const std::string& key) {
    const auto v = cfg_value(e, key);
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ValidationError(key + ": expected true or false");
}

inline std::vector<double> cfg_reals(const ConfigEntries& e, const std::string& key) {
    std::vector<double> out;
    for (auto cell : csv::split(cfg_value(e, key))) {
        const auto v = csv::parse_double(cell);
        if (!v || !std::isfinite(*v)) throw ValidationError(key + ": bad list entry '" + std::string(cell) + "'");
        out.push_back(*v);
    }
    if (out.empty()) throw ValidationError(key + ": empty list");
    return out;
}

}  // namespace detail

inline PipelineConfig build_config(const ConfigEntries& e) {
    using namespace detail;
    PipelineConfig c;
    c.entries = e;
    const auto seed = csv::parse_int(cfg_value(e, "seed"));
    if (!seed || *seed < 0) throw ValidationError("seed: expected a non-negative integer");
    c.seed = static_cast<std::uint64_t>(*seed);
    c.threads = static_cast<unsigned>(cfg_count(e, "threads", true));
    const auto split = parse_date(cfg_value(e, "split_date"));
    if (!split) throw ValidationError("split_date: expected YYYY-MM-DD");
    c.split_date = *split;
    c.prices_dir = cfg_value(e, "paths.prices");
    c.fundamentals = cfg_value(e, "paths.fundamentals");
    c.output_dir = cfg_value(e, "paths.output");
    c.market_ticker = cfg_value(e, "paths.market_ticker");
    if (c.market_ticker.empty()) throw ValidationError("paths.market_ticker must not be empty");

    c.min_quarters = cfg_count(e, "ingest.min_quarters");
    for (double v : cfg_reals(e, "ingest.key_ratios")) {
        if (v < 0 || v != std::floor(v)) throw ValidationError("ingest.key_ratios: expected column indices");
        c.key_ratios.push_back(static_cast<std::size_t>(v));
    }

    const auto target = parse_target(cfg_value(e, "segment.target"));
    if (!target) throw ValidationError("segment.target: expected small, medium or large");
    c.target = *target;
    c.grid.thresholds = cfg_reals(e, "segment.thresholds");
    c.grid.drifts = cfg_reals(e, "segment.drifts");
    for (double t : c.grid.thresholds)
        if (!(t > 0.0)) throw ValidationError("segment.thresholds must be positive");
    for (double d : c.grid.drifts)
        if (d < 0.0) throw ValidationError("segment.drifts must be non-negative");

    c.power = PowerSpec::from_levels(cfg_real(e, "labeling.alpha"), cfg_real(e, "labeling.power"),
                                     cfg_real(e, "labeling.min_annual_return"));
    if (!(c.power.min_annual_return > 0.0)) throw ValidationError("labeling.min_annual_return must be positive");
    c.window.enabled = cfg_bool(e, "labeling.sliding_window");
    c.window.stride = cfg_count(e, "labeling.stride");

    c.max_missing = cfg_real(e, "select.max_missing");
    if (!(c.max_missing >= 0.0 && c.max_missing <= 1.0)) throw ValidationError("select.max_missing must lie in [0, 1]");
    c.feature_k = cfg_count(e, "select.k");
    c.ext_trees = cfg_count(e, "select.trees");

    c.som_rows = cfg_count(e, "som.rows");
    c.som_cols = cfg_count(e, "som.cols");
    c.som.epochs = cfg_count(e, "som.epochs");
    const auto init = cfg_value(e, "som.init");
    if (init == "random_sample")
        c.som.init = SomInit::random_sample;
    else if (init == "pca_plane")
        c.som.init = SomInit::pca_plane;
    else
        throw ValidationError("som.init: expected random_sample or pca_plane");
    c.som.radius_start = cfg_real(e, "som.radius_start");
    c.som.radius_end = cfg_real(e, "som.radius_end");
    if (c.som.radius_start < 0.0 || !(c.som.radius_end > 0.0)) throw ValidationError("som radii must be positive");
    c.som.seed = c.som_seed();
    c.som.threads = c.threads;

    c.fwc.kernel_size = cfg_count(e, "fwc.kernel_size");
    c.fwc.kernel_sigma = cfg_real(e, "fwc.sigma");
    if (c.fwc.kernel_size % 2 == 0) throw ValidationError("fwc.kernel_size must be odd");
    if (!(c.fwc.kernel_sigma > 0.0)) throw ValidationError("fwc.sigma must be positive");
    const auto weight = cfg_value(e, "fwc.weight");
    if (weight == "good_count")
        c.fwc.weight = WeightMode::good_count;
    else if (weight == "literal_ratio")
        c.fwc.weight = WeightMode::literal_ratio;
    else
        throw ValidationError("fwc.weight: expected good_count or literal_ratio");
    c.top_n = cfg_count(e, "rank.top_n");
    return c;
}

inline PipelineConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    ConfigEntries e = default_entries();
    if (file) {
        if (!fs::exists(*file)) throw ValidationError("config file not found: " + file->string());
        parse_config_text(csv::slurp(*file), file->string(), e);
    }
    for (const auto& o : overrides) apply_override(e, o);
    return build_config(e);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace artifact {
inline constexpr const char* inclusion = "inclusion_report.csv";
inline constexpr const char* segments = "segments.csv";
inline constexpr const char* labeled = "labeled.csv";
inline constexpr const char* clean_report = "clean_report.csv";
inline constexpr const char* features = "features.csv";
inline constexpr const char* pca = "pca.csv";
inline constexpr const char* selected = "selected.csv";
inline constexpr const char* codebook = "codebook.som";
inline constexpr const char* codebook_csv = "codebook.csv";
inline constexpr const char* umatrix = "umatrix.csv";
inline constexpr const char* lcp = "lcp.csv";
inline constexpr const char* qe = "qe.csv";
inline constexpr const char* votes = "votes.csv";
inline constexpr const char* fwc = "fwc.csv";
inline constexpr const char* ranking = "ranking.csv";
inline constexpr const char* manifest = "manifest.json";
}  // namespace artifact

// Names the subcommand that writes each artifact, for missing-file errors.
inline std::string producing_stage(const std::string& name) {
    static const std::map<std::string, std::string> m{
        {artifact::inclusion, "ingest"},  {artifact::segments, "segment"},  {artifact::labeled, "label"},
        {artifact::clean_report, "select"}, {artifact::features, "select"}, {artifact::pca, "select"},
        {artifact::selected, "select"},   {artifact::codebook, "train"},    {artifact::codebook_csv, "train"},
        {artifact::umatrix, "train"},     {artifact::lcp, "train"},         {artifact::qe, "train"},
        {artifact::votes, "rank"},        {artifact::fwc, "rank"},          {artifact::ranking, "rank"},
        {artifact::manifest, "run"},
    };
    auto it = m.find(name);
    return it == m.end() ? "run" : it->second;
}

inline fs::path require_artifact(const fs::path& path) {
    if (!fs::exists(path)) {
        const auto stage = producing_stage(path.filename().string());
        throw ArtifactError("missing artifact " + path.string() + " (produced by the '" + stage + "' stage)");
    }
    return path;
}

namespace detail {

inline std::vector<std::string> header_of(const std::vector<csv::Line>& lines, const fs::path& path) {
    if (lines.empty()) throw ArtifactError(path.string() + ": empty artifact");
    std::vector<std::string> out;
    for (auto c : csv::split(lines.front().text)) out.emplace_back(c);
    return out;
}

inline void expect_prefix(const std::vector<std::string>& header, const std::vector<std::string>& want,
                          const fs::path& path) {
    if (header.size() < want.size() || !std::equal(want.begin(), want.end(), header.begin())) {
        std::string w;
        for (const auto& s : want) w += (w.empty() ? "" : ",") + s;
        throw ArtifactError(path.string() + ": header must start with '" + w + "'");
    }
}

inline std::size_t parse_index(std::string_view s, const fs::path& path, std::size_t line) {
    const auto v = csv::parse_int(s);
    if (!v || *v < 0) throw ParseError(path.string(), line, "bad index '" + std::string(s) + "'");
    return static_cast<std::size_t>(*v);
}

inline Date parse_date_cell(std::string_view s, const fs::path& path, std::size_t line) {
    const auto d = parse_date(s);
    if (!d) throw ParseError(path.string(), line, "bad date '" + std::string(s) + "'");
    return *d;
}

}  // namespace detail

// segments.csv: ticker,start_date,end_date,start_idx,end_idx
struct SegmentRow {
    std::string ticker;
    Date start_date{};
    Date end_date{};
    Interval interval;
};

inline std::string segments_to_csv(const std::vector<SegmentRow>& rows) {
    std::string out = "ticker,start_date,end_date,start_idx,end_idx\n";
    for (const auto& r : rows)
        out += r.ticker + "," + format_date(r.start_date) + "," + format_date(r.end_date) + "," +
               std::to_string(r.interval.start) + "," + std::to_string(r.interval.end) + "\n";
    return out;
}

inline std::vector<SegmentRow> read_segments(const fs::path& path) {
    const auto lines = csv::read_lines(require_artifact(path));
    const auto header = detail::header_of(lines, path);
    detail::expect_prefix(header, {"ticker", "start_date", "end_date", "start_idx", "end_idx"}, path);
    std::vector<SegmentRow> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = csv::split(lines[i].text);
        if (cells.size() != 5) throw ParseError(path.string(), lines[i].number, "expected 5 fields");
        SegmentRow r;
        r.ticker = std::string(cells[0]);
        r.start_date = detail::parse_date_cell(cells[1], path, lines[i].number);
        r.end_date = detail::parse_date_cell(cells[2], path, lines[i].number);
        r.interval.start = detail::parse_index(cells[3], path, lines[i].number);
        r.interval.end = detail::parse_index(cells[4], path, lines[i].number);
        if (r.interval.end <= r.interval.start) throw ParseError(path.string(), lines[i].number, "empty interval");
        out.push_back(std::move(r));
    }
    return out;
}

// labeled.csv and selected.csv share one schema:
// ticker,start_date,end_date,start_idx,end_idx,label,method,p_value,min_samples,<features...>
struct LabeledTable {
    std::vector<std::string> feature_names;
    std::vector<LabeledVector> rows;

    FeatureMatrix matrix() const {
        FeatureMatrix m;
        m.rows = rows.size();
        m.cols = feature_names.size();
        m.col_names = feature_names;
        m.values.reserve(m.rows * m.cols);
        for (const auto& r : rows) {
            m.values.insert(m.values.end(), r.features.begin(), r.features.end());
            m.provenance.push_back({r.ticker, r.start_date});
        }
        return m;
    }

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r.label);
        return out;
    }
};

inline const std::vector<std::string>& labeled_columns() {
    static const std::vector<std::string> c{"ticker", "start_date", "end_date", "start_idx", "end_idx",
                                            "label",  "method",     "p_value",  "min_samples"};
    return c;
}

inline std::string labeled_to_csv(const LabeledTable& t) {
    std::string out;
    for (const auto& c : labeled_columns()) out += (out.empty() ? "" : ",") + c;
    for (const auto& f : t.feature_names) out += "," + f;
    out += "\n";
    for (const auto& r : t.rows) {
        if (r.features.size() != t.feature_names.size()) throw ValidationError(r.ticker + ": feature width mismatch");
        out += r.ticker + "," + format_date(r.start_date) + "," + format_date(r.end_date) + "," +
               std::to_string(r.interval.start) + "," + std::to_string(r.interval.end) + "," +
               std::to_string(r.label) + "," + to_string(r.method) + "," +
               (r.p_value ? csv::fmt(*r.p_value) : std::string()) + "," + std::to_string(r.min_samples);
        for (double v : r.features) out += "," + (csv::is_missing(v) ? std::string() : csv::fmt(v));
        out += "\n";
    }
    return out;
}

inline LabeledTable read_labeled(const fs::path& path) {
    const auto lines = csv::read_lines(require_artifact(path));
    const auto header = detail::header_of(lines, path);
    detail::expect_prefix(header, labeled_columns(), path);
    const std::size_t fixed = labeled_columns().size();
    LabeledTable t;
    t.feature_names.assign(header.begin() + static_cast<std::ptrdiff_t>(fixed), header.end());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t ln = lines[i].number;
        const auto cells = csv::split(lines[i].text);
        if (cells.size() != header.size())
            throw ParseError(path.string(), ln,
                             "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
        LabeledVector r;
        r.ticker = std::string(cells[0]);
        r.start_date = detail::parse_date_cell(cells[1], path, ln);
        r.end_date = detail::parse_date_cell(cells[2], path, ln);
        r.interval = {detail::parse_index(cells[3], path, ln), detail::parse_index(cells[4], path, ln)};
        if (cells[5] != "0" && cells[5] != "1") throw ParseError(path.string(), ln, "label must be 0 or 1");
        r.label = cells[5] == "1" ? 1 : 0;
        const auto method = parse_method(cells[6]);
        if (!method) throw ParseError(path.string(), ln, "unknown test method '" + std::string(cells[6]) + "'");
        r.method = *method;
        if (!csv::trim(cells[7]).empty()) {
            const auto p = csv::parse_double(cells[7]);
            if (!p || *p < 0.0 || *p > 1.0) throw ParseError(path.string(), ln, "p_value must lie in [0, 1]");
            r.p_value = *p;
        }
        r.min_samples = detail::parse_index(cells[8], path, ln);
        for (std::size_t c = fixed; c < cells.size(); ++c) {
            bool ok = true;
            const auto v = csv::parse_cell(cells[c], ok);
            if (!ok) throw ParseError(path.string(), ln, "bad number '" + std::string(cells[c]) + "'");
            r.features.push_back(v ? *v : csv::kMissing);
        }
        t.rows.push_back(std::move(r));
    }
    return t;
}

// pca.csv: component,eigenvalue,explained_variance_ratio,cumulative_ratio
inline std::string pca_to_csv(const PcaResult& p) {
    std::string out = "component,eigenvalue,explained_variance_ratio,cumulative_ratio\n";
    double cum = 0.0;
    for (std::size_t i = 0; i < p.eigenvalues.size(); ++i) {
        cum += p.explained_variance_ratio[i];
        out += std::to_string(i + 1) + "," + csv::fmt(p.eigenvalues[i]) + "," +
               csv::fmt(p.explained_variance_ratio[i]) + "," + csv::fmt(cum) + "\n";
    }
    return out;
}

inline std::vector<double> read_pca_ratios(const fs::path& path) {
    const auto lines = csv::read_lines(require_artifact(path));
    detail::expect_prefix(detail::header_of(lines, path), {"component", "eigenvalue", "explained_variance_ratio"}, path);
    std::vector<double> out;
    double sum = 0.0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = csv::split(lines[i].text);
        if (cells.size() != 4) throw ParseError(path.string(), lines[i].number, "expected 4 fields");
        const auto v = csv::parse_double(cells[2]);
        if (!v || *v < 0.0) throw ParseError(path.string(), lines[i].number, "bad ratio");
        out.push_back(*v);
        sum += *v;
    }
    if (out.empty() || std::abs(sum - 1.0) > 1e-9) throw ArtifactError(path.string() + ": ratios do not sum to 1");
    return out;
}

// Header-less rows x cols grid; every cell a number (NaN allowed when told).
inline csv::Grid read_grid_artifact(const fs::path& path, bool allow_nan = false) {
    const auto g = csv::read_grid(require_artifact(path));
    if (g.rows == 0 || g.cols == 0) throw ArtifactError(path.string() + ": empty grid");
    for (double v : g.values)
        if (!(allow_nan && std::isnan(v)) && !std::isfinite(v)) throw ArtifactError(path.string() + ": non-finite cell");
    return g;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string content_hash(const fs::path& path) { return hex64(fnv1a(csv::slurp(path))); }

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

// Runs fn; a library error leaving it gets the stage name in front and is
// re-thrown as is.
template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (Error& e) {
        if (std::string_view(e.what()).rfind("[", 0) != 0) e.prefix("[" + stage + "] ");
        throw;
    } catch (const std::exception& e) {
        throw Error("[" + stage + "] " + e.what(), 3);
    }
}

struct Log {
    std::ostream* out = nullptr;
    template <class... Args>
    void operator()(const Args&... args) const {
        if (!out) return;
        ((*out) << ... << args) << '\n';
    }
};

inline fs::path out_path(const PipelineConfig& c, const char* name) { return c.output_dir / name; }

// Loads, filters and aligns the companies; writes the inclusion report.
inline std::vector<CompanyDataset> stage_ingest(const PipelineConfig& c, const Log& log = {}) {
    return run_stage("ingest", [&] {
        if (!fs::exists(c.fundamentals))
            throw ArtifactError("fundamentals file not found: " + c.fundamentals.string());
        const Fundamentals f = load_fundamentals(c.fundamentals);
        for (std::size_t k : c.key_ratios)
            if (k >= f.feature_names.size())
                throw ValidationError("key ratio index " + std::to_string(k) + " out of range");
        auto companies = load_companies(c.prices_dir, c.market_ticker, f);
        auto [kept, report] = apply_inclusion_rules(std::move(companies), c.min_quarters, c.key_ratios);
        csv::write_file(out_path(c, artifact::inclusion), inclusion_report_to_csv(report));
        std::vector<CompanyDataset> aligned;
        aligned.reserve(kept.size());
        for (auto& k : kept) aligned.push_back(align_and_log(std::move(k)));
        log("ingest: kept ", report.kept.size(), ", dropped ", report.dropped.size());
        if (aligned.empty()) throw ValidationError("no company passed the inclusion rules");
        return aligned;
    });
}

inline std::vector<SegmentRow> stage_segment(const PipelineConfig& c, const std::vector<CompanyDataset>& companies,
                                             const Log& log = {}) {
    return run_stage("segment", [&] {
        std::vector<SegmentRow> rows;
        std::size_t skipped = 0;
        for (const auto& co : companies) {
            IntervalSet set;
            try {
                set = segment(co.log_stock, c.target, c.grid);
            } catch (const TuningError& e) {
                log("segment: ", co.ticker, " skipped: ", e.what());
                ++skipped;
                continue;
            }
            for (const auto& iv : set.intervals)
                rows.push_back({co.ticker, co.date_at(iv.start), co.date_at(iv.end), iv});
        }
        csv::write_file(out_path(c, artifact::segments), segments_to_csv(rows));
        log("segment: ", rows.size(), " intervals over ", companies.size() - skipped, " companies");
        return rows;
    });
}

inline LabeledTable stage_label(const PipelineConfig& c, const std::vector<CompanyDataset>& companies,
                                const std::vector<SegmentRow>& segments, const std::vector<std::string>& feature_names,
                                const Log& log = {}) {
    return run_stage("label", [&] {
        std::map<std::string, const CompanyDataset*> by_ticker;
        for (const auto& co : companies) by_ticker[co.ticker] = &co;
        std::map<std::string, IntervalSet> sets;
        for (const auto& s : segments) {
            auto it = by_ticker.find(s.ticker);
            if (it == by_ticker.end()) throw ArtifactError("segments.csv names unknown ticker " + s.ticker);
            const auto& co = *it->second;
            if (s.interval.end >= co.log_stock.size() || co.date_at(s.interval.start) != s.start_date ||
                co.date_at(s.interval.end) != s.end_date)
                throw ArtifactError("segments.csv does not match the price data for " + s.ticker);
            sets[s.ticker].intervals.push_back(s.interval);
        }
        LabeledTable t;
        t.feature_names = feature_names;
        for (const auto& [ticker, set] : sets) {
            auto rows = sliding_window_labels(*by_ticker[ticker], set, c.power, c.window);
            for (auto& r : rows) t.rows.push_back(std::move(r));
        }
        csv::write_file(out_path(c, artifact::labeled), labeled_to_csv(t));
        const auto good = std::count_if(t.rows.begin(), t.rows.end(), [](const auto& r) { return r.label == 1; });
        log("label: ", t.rows.size(), " vectors, ", good, " labeled good");
        return t;
    });
}

struct SplitRows {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Training rows start strictly before the split date, test rows at or after.
inline SplitRows split_rows(const LabeledTable& t, Date split) {
    SplitRows s;
    for (std::size_t i = 0; i < t.rows.size(); ++i) (t.rows[i].start_date < split ? s.train : s.test).push_back(i);
    return s;
}

struct SelectResult {
    LabeledTable selected;  // normalized selected features, all rows
    ImportanceRanking ranking;
    std::vector<std::string> ranked_names;
    PcaResult pca;
    CleanReport clean;
};

inline SelectResult stage_select(const PipelineConfig& c, const LabeledTable& labeled, const Log& log = {}) {
    return run_stage("select", [&] {
        const auto split = split_rows(labeled, c.split_date);
        if (split.train.empty()) throw ValidationError("empty training set: no vector starts before split_date");
        if (split.test.empty()) throw ValidationError("empty test set: no vector starts at or after split_date");

        const FeatureMatrix all = labeled.matrix();
        const FeatureMatrix raw_train = select_rows(all, split.train);
        auto [clean_train, clean] = clean_features(raw_train, c.max_missing);
        if (clean_train.cols == 0) throw ValidationError("every feature exceeded the missing-data threshold");
        auto [train, scales] = zscore_normalize(clean_train);
        const FeatureMatrix everything = apply_zscore(apply_clean(all, clean), scales);

        std::vector<int> train_labels;
        for (std::size_t i : split.train) train_labels.push_back(labeled.rows[i].label);
        ExtOptions ext;
        ext.n_trees = c.ext_trees;
        ext.seed = c.ext_seed();
        ext.threads = c.threads;
        SelectResult out;
        out.ranking = ext_importance(train, train_labels, ext);
        out.pca = pca_fit(train, train.cols);
        out.clean = clean;

        std::size_t k = c.feature_k;
        if (k > train.cols) {
            log("select: k=", k, " exceeds the ", train.cols, " usable features; keeping all");
            k = train.cols;
        }
        const FeatureMatrix chosen = select_top_k(out.ranking, everything, k);

        std::string feat = "rank,feature,importance,selected\n";
        for (std::size_t i = 0; i < out.ranking.order.size(); ++i) {
            const std::size_t col = out.ranking.order[i];
            out.ranked_names.push_back(train.col_names[col]);
            feat += std::to_string(i + 1) + "," + train.col_names[col] + "," + csv::fmt(out.ranking.scores[col]) + "," +
                    (i < k ? "1" : "0") + "\n";
        }
        std::string rep = "feature,missing_fraction,status,median\n";
        {
            std::size_t kept_pos = 0;
            for (std::size_t col = 0; col < raw_train.cols; ++col) {
                std::size_t bad = 0;
                for (std::size_t r = 0; r < raw_train.rows; ++r) bad += !std::isfinite(raw_train.at(r, col));
                const double frac = static_cast<double>(bad) / static_cast<double>(raw_train.rows);
                const bool kept = kept_pos < clean.kept_cols.size() && clean.kept_cols[kept_pos] == col;
                rep += raw_train.col_names[col] + "," + csv::fmt(frac) + "," + (kept ? "kept," : "dropped,") +
                       (kept ? csv::fmt(clean.medians[kept_pos]) : std::string()) + "\n";
                kept_pos += kept;
            }
        }

        out.selected.feature_names = chosen.col_names;
        out.selected.rows = labeled.rows;
        for (std::size_t r = 0; r < chosen.rows; ++r) {
            const auto row = chosen.row(r);
            out.selected.rows[r].features.assign(row.begin(), row.end());
        }
        csv::write_file(out_path(c, artifact::features), feat);
        csv::write_file(out_path(c, artifact::clean_report), rep);
        csv::write_file(out_path(c, artifact::pca), pca_to_csv(out.pca));
        csv::write_file(out_path(c, artifact::selected), labeled_to_csv(out.selected));
        log("select: ", split.train.size(), " train / ", split.test.size(), " test rows, ", k, " features, ",
            clean.dropped_cols.size(), " columns dropped, ", clean.imputed_cells, " cells imputed");
        return out;
    });
}

struct TrainResult {
    SomGrid grid;
    std::vector<double> qe_history;
};

inline TrainResult stage_train(const PipelineConfig& c, const LabeledTable& selected, const Log& log = {}) {
    return run_stage("train", [&] {
        const auto split = split_rows(selected, c.split_date);
        if (split.train.empty()) throw ValidationError("empty training set: no vector starts before split_date");
        const FeatureMatrix data = select_rows(selected.matrix(), split.train);
        std::vector<int> labels;
        for (std::size_t i : split.train) labels.push_back(selected.rows[i].label);

        TrainResult out;
        out.grid = batch_train(init_codebook(data, c.som_rows, c.som_cols, c.som), data, c.som, &out.qe_history);
        save_codebook(out.grid, out_path(c, artifact::codebook));
        csv::write_file(out_path(c, artifact::codebook_csv), codebook_to_csv(out.grid, selected.feature_names));
        const auto um = umatrix(out.grid);
        csv::write_file(out_path(c, artifact::umatrix), csv::grid_to_csv(um.values, um.rows, um.cols));
        const auto lcp = project_labels(out.grid, data, labels, c.threads);
        csv::write_file(out_path(c, artifact::lcp), csv::grid_to_csv(lcp.values, lcp.rows, lcp.cols));
        std::string qe = "epoch,quantization_error\n";
        for (std::size_t e = 0; e < out.qe_history.size(); ++e)
            qe += std::to_string(e + 1) + "," + csv::fmt(out.qe_history[e]) + "\n";
        csv::write_file(out_path(c, artifact::qe), qe);
        log("train: ", c.som_rows, "x", c.som_cols, " map, ", c.som.epochs, " epochs, final QE ",
            out.qe_history.empty() ? 0.0 : out.qe_history.back());
        return out;
    });
}

struct RankResult {
    VoteGrid votes;
    FwcMatrix fwc;
    RankedResult ranking;
};

inline RankResult stage_rank(const PipelineConfig& c, const SomGrid& grid, const LabeledTable& selected,
                             const Log& log = {}) {
    return run_stage("rank", [&] {
        if (grid.dim != selected.feature_names.size())
            throw ArtifactError("codebook dimension " + std::to_string(grid.dim) + " does not match " +
                                std::to_string(selected.feature_names.size()) + " selected features");
        const auto split = split_rows(selected, c.split_date);
        if (split.train.empty()) throw ValidationError("empty training set: no vector starts before split_date");
        if (split.test.empty()) throw ValidationError("empty test set: no vector starts at or after split_date");
        const FeatureMatrix all = selected.matrix();
        const FeatureMatrix train = select_rows(all, split.train);
        const FeatureMatrix test = select_rows(all, split.test);
        std::vector<int> labels;
        for (std::size_t i : split.train) labels.push_back(selected.rows[i].label);

        RankResult out;
        out.votes = accumulate_votes(grid, train, labels, c.threads);
        out.fwc = build_fwc(out.votes, c.fwc);
        out.ranking = rank_vectors(out.fwc, grid, test, test.provenance, c.top_n, c.threads);

        std::string votes = "unit_row,unit_col,good,bad\n";
        for (std::size_t u = 0; u < grid.units(); ++u)
            votes += std::to_string(u / grid.cols) + "," + std::to_string(u % grid.cols) + "," +
                     std::to_string(out.votes.good[u]) + "," + std::to_string(out.votes.bad[u]) + "\n";
        csv::write_file(out_path(c, artifact::votes), votes);
        csv::write_file(out_path(c, artifact::fwc), csv::grid_to_csv(out.fwc.scores, out.fwc.rows, out.fwc.cols));
        csv::write_file(out_path(c, artifact::ranking), ranking_to_csv(out.ranking, grid.cols));
        log("rank: ", test.rows, " test vectors, top ", out.ranking.entries.size(), " written");
        return out;
    });
}

inline std::vector<std::string> fundamentals_header(const PipelineConfig& c) {
    return run_stage("ingest", [&] { return load_fundamentals(c.fundamentals).feature_names; });
}

// Config (without paths or thread count), derived seeds and the hash of every
// artifact; the manifest hash covers all of it.
inline nlohmann::json build_manifest(const PipelineConfig& c) {
    nlohmann::json j;
    for (const auto& [k, v] : c.entries)
        if (k.rfind("paths.", 0) != 0 && k != "threads") j["config"][k] = v;
    j["seeds"]["root"] = c.seed;
    j["seeds"]["ext"] = hex64(c.ext_seed());
    j["seeds"]["som"] = hex64(c.som_seed());
    for (const char* name : {artifact::inclusion, artifact::segments, artifact::labeled, artifact::clean_report,
                             artifact::features, artifact::pca, artifact::selected, artifact::codebook,
                             artifact::codebook_csv, artifact::umatrix, artifact::lcp, artifact::qe, artifact::votes,
                             artifact::fwc, artifact::ranking})
        j["artifacts"][name] = content_hash(require_artifact(out_path(c, name)));
    j["manifest_hash"] = hex64(fnv1a(j.dump()));
    return j;
}

struct RunSummary {
    std::string manifest_hash;
    std::size_t labeled_vectors = 0;
    std::size_t ranked = 0;
};

inline RunSummary run_pipeline(const PipelineConfig& c, const Log& log = {}) {
    fs::create_directories(c.output_dir);
    const auto companies = stage_ingest(c, log);
    const auto names = fundamentals_header(c);
    const auto segs = stage_segment(c, companies, log);
    const auto labeled = stage_label(c, companies, segs, names, log);
    const auto sel = stage_select(c, labeled, log);
    const auto trained = stage_train(c, sel.selected, log);
    const auto ranked = stage_rank(c, trained.grid, sel.selected, log);
    const auto manifest = run_stage("run", [&] { return build_manifest(c); });
    csv::write_file(out_path(c, artifact::manifest), manifest.dump(2) + "\n");
    log("run: manifest ", manifest["manifest_hash"].get<std::string>());
    return {manifest["manifest_hash"].get<std::string>(), labeled.rows.size(), ranked.ranking.entries.size()};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

enum class ReportKind { umat, lcp, fwc, qq, pca };

inline std::optional<ReportKind> parse_report_kind(std::string_view s) {
    if (s == "umat") return ReportKind::umat;
    if (s == "lcp") return ReportKind::lcp;
    if (s == "fwc") return ReportKind::fwc;
    if (s == "qq") return ReportKind::qq;
    if (s == "pca") return ReportKind::pca;
    return std::nullopt;
}

// Sample for the QQ report: a `date,price` file gives weekly log returns, a
// one-column file with any header gives its values.
inline std::vector<double> qq_sample(const fs::path& path) {
    if (!fs::exists(path)) throw ArtifactError("QQ input not found: " + path.string());
    const auto lines = csv::read_lines(path);
    const auto header = detail::header_of(lines, path);
    std::vector<double> out;
    if (header.size() == 2 && header[0] == "date" && header[1] == "price") {
        const auto s = downsample_weekly(load_prices(path, SeriesKind::stock));
        for (std::size_t i = 1; i < s.points.size(); ++i)
            out.push_back(std::log(s.points[i].price) - std::log(s.points[i - 1].price));
        return out;
    }
    if (header.size() != 1) throw ParseError(path.string(), lines.front().number, "expected one column or date,price");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto v = csv::parse_double(lines[i].text);
        if (!v || !std::isfinite(*v)) throw ParseError(path.string(), lines[i].number, "bad number");
        out.push_back(*v);
    }
    return out;
}

inline std::string qq_to_csv(std::span<const double> sample) {
    std::string out = "theoretical,sample\n";
    for (const auto& p : stats::qq_normal(sample)) out += csv::fmt(p.theoretical) + "," + csv::fmt(p.sample) + "\n";
    return out;
}

struct ReportInputs {
    fs::path dir;                 // pipeline output directory
    std::optional<fs::path> input;  // QQ sample, or an explicit artifact
    std::optional<Date> split_date;
};

inline std::string report(ReportKind kind, const ReportInputs& in) {
    return run_stage("report", [&]() -> std::string {
        switch (kind) {
            case ReportKind::umat: {
                const auto g = load_codebook(require_artifact(in.input.value_or(in.dir / artifact::codebook)));
                const auto um = umatrix(g);
                return csv::grid_to_csv(um.values, um.rows, um.cols);
            }
            case ReportKind::lcp: {
                const auto g = load_codebook(require_artifact(in.dir / artifact::codebook));
                const auto sel = read_labeled(in.dir / artifact::selected);
                const auto split = split_rows(sel, in.split_date.value_or(Date{std::chrono::year{2013} / 1 / 1}));
                const FeatureMatrix data = select_rows(sel.matrix(), split.train);
                std::vector<int> labels;
                for (std::size_t i : split.train) labels.push_back(sel.rows[i].label);
                if (g.dim != data.cols) throw ArtifactError("codebook does not match selected.csv");
                const auto p = project_labels(g, data, labels);
                return csv::grid_to_csv(p.values, p.rows, p.cols);
            }
            case ReportKind::fwc: {
                const auto g = read_grid_artifact(in.input.value_or(in.dir / artifact::fwc));
                return csv::grid_to_csv(g.values, g.rows, g.cols);
            }
            case ReportKind::qq: {
                if (!in.input) throw ValidationError("qq report needs an input series");
                return qq_to_csv(qq_sample(*in.input));
            }
            case ReportKind::pca: {
                const auto ratios = read_pca_ratios(in.input.value_or(in.dir / artifact::pca));
                std::string out = "component,explained_variance_ratio\n";
                for (std::size_t i = 0; i < ratios.size(); ++i)
                    out += std::to_string(i + 1) + "," + csv::fmt(ratios[i]) + "\n";
                return out;
            }
        }
        return {};
    });
}

}  // namespace mktsom
