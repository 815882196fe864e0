#include <chrono>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mktsom/pipeline.hpp"
#include "mktsom/synthgen.hpp"

using namespace mktsom;

namespace {

struct CommonOpts {
    std::string config;
    std::vector<std::string> sets;
    bool quiet = false;
};

void add_common(CLI::App* sub, CommonOpts& o) {
    sub->add_option("-c,--config", o.config, "config file (key = value, [section] headers)");
    sub->add_option("--set", o.sets, "override a config key, key=value (repeatable)");
    sub->add_flag("-q,--quiet", o.quiet, "no progress lines on stderr");
    sub->allow_extras();
}

// `--section.key=value` extras become overrides too; anything else is a
// usage error.
std::vector<std::string> overrides_from(const CLI::App* sub, const CommonOpts& o) {
    std::vector<std::string> out = o.sets;
    for (const auto& extra : sub->remaining()) {
        if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos)
            throw CLI::ExtrasError({extra});
        out.push_back(extra.substr(2));
    }
    return out;
}

PipelineConfig config_for(const CLI::App* sub, const CommonOpts& o, std::vector<std::string> extra = {}) {
    auto ov = overrides_from(sub, o);
    ov.insert(ov.end(), extra.begin(), extra.end());
    auto cfg = load_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config), ov);
    fs::create_directories(cfg.output_dir);
    return cfg;
}

Log logger(const CommonOpts& o) { return Log{o.quiet ? nullptr : &std::cerr}; }

std::vector<InjectedChange> parse_changes(const std::string& text) {
    std::vector<InjectedChange> out;
    if (text == "none" || text.empty()) return out;
    for (auto item : csv::split(text)) {
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) throw ValidationError("change point must be index:shift, got " + std::string(item));
        const auto idx = csv::parse_int(item.substr(0, colon));
        const auto shift = csv::parse_double(item.substr(colon + 1));
        if (!idx || *idx < 0 || !shift) throw ValidationError("bad change point '" + std::string(item) + "'");
        out.push_back({static_cast<std::size_t>(*idx), *shift});
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mktsom: interval labeling, SOM training and FWC ranking over price and fundamentals data"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a seeded synthetic fixture");
    SynthSpec spec;
    std::string synth_out = "data/fixture";
    std::string start_text = "2005-01-03";
    std::vector<std::string> change_text;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--seed", spec.seed);
    synth->add_option("--companies", spec.n_companies)->check(CLI::PositiveNumber);
    synth->add_option("--weeks", spec.weeks);
    synth->add_option("--start", start_text, "first weekly date, YYYY-MM-DD");
    synth->add_option("--market-ticker", spec.market_ticker);
    synth->add_option("--prefix", spec.ticker_prefix);
    synth->add_option("--market-drift", spec.market_drift);
    synth->add_option("--market-sigma", spec.market_sigma);
    synth->add_option("--noise-sigma", spec.noise_sigma);
    synth->add_option("--good-drift", spec.good_drift);
    synth->add_option("--bad-drift", spec.bad_drift);
    synth->add_option("--changes", spec.changes_per_company, "regime flips per company when no explicit list");
    synth->add_option("--change-points", change_text,
                      "per-company list 'idx:shift,idx:shift' or 'none', one per company in order");
    synth->add_option("--raw-features", spec.raw_features);
    synth->add_option("--planted-feature", spec.planted_feature);
    synth->add_option("--key-ratios", spec.key_ratio_count);
    synth->add_option("--sparse-features", spec.sparse_features);
    synth->add_option("--missing-rate", spec.missing_rate);
    synth->add_option("--sparse-missing-rate", spec.sparse_missing_rate);
    synth->add_option("--short-companies", spec.short_companies);
    synth->add_option("--short-quarters", spec.short_quarters);

    CommonOpts common;
    auto* ingest = app.add_subcommand("ingest", "load, filter and align; write the inclusion report");
    add_common(ingest, common);

    auto* seg = app.add_subcommand("segment", "CUSUM segmentation into target-sized intervals");
    add_common(seg, common);
    std::string target, thresholds, drifts;
    seg->add_option("--target", target, "small, medium or large");
    seg->add_option("--thresholds", thresholds, "comma list of CUSUM thresholds");
    seg->add_option("--drifts", drifts, "comma list of CUSUM drifts");

    auto* label = app.add_subcommand("label", "label intervals and attach fundamentals");
    add_common(label, common);
    auto* select = app.add_subcommand("select", "clean, normalize and rank features");
    add_common(select, common);
    auto* train = app.add_subcommand("train", "train the self-organizing map");
    add_common(train, common);
    auto* rank = app.add_subcommand("rank", "votes, FWC matrix and test ranking");
    add_common(rank, common);
    auto* run = app.add_subcommand("run", "full pipeline");
    add_common(run, common);

    auto* rep = app.add_subcommand("report", "emit diagnostic data as CSV");
    add_common(rep, common);
    std::string kind_text, rep_input, rep_out;
    rep->add_option("kind", kind_text, "umat, lcp, fwc, qq or pca")->required();
    rep->add_option("--input", rep_input, "explicit input (QQ series or artifact path)");
    rep->add_option("-o,--out", rep_out, "write to file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            const auto start = parse_date(start_text);
            if (!start) throw ValidationError("--start: expected YYYY-MM-DD");
            spec.start = *start;
            for (const auto& t : change_text) spec.change_points.push_back(parse_changes(t));
            const auto out = generate(spec);
            write_fixture(out, synth_out);
            std::cerr << "synth: " << out.companies.size() << " companies written to " << synth_out << "\n";
            return 0;
        }

        const Log log = logger(common);
        if (ingest->parsed()) {
            stage_ingest(config_for(ingest, common), log);
        } else if (seg->parsed()) {
            std::vector<std::string> extra;
            if (!target.empty()) extra.push_back("segment.target=" + target);
            if (!thresholds.empty()) extra.push_back("segment.thresholds=" + thresholds);
            if (!drifts.empty()) extra.push_back("segment.drifts=" + drifts);
            const auto cfg = config_for(seg, common, extra);
            stage_segment(cfg, stage_ingest(cfg, log), log);
        } else if (label->parsed()) {
            const auto cfg = config_for(label, common);
            const auto companies = stage_ingest(cfg, log);
            const auto segs = run_stage("label", [&] { return read_segments(out_path(cfg, artifact::segments)); });
            stage_label(cfg, companies, segs, fundamentals_header(cfg), log);
        } else if (select->parsed()) {
            const auto cfg = config_for(select, common);
            stage_select(cfg, run_stage("select", [&] { return read_labeled(out_path(cfg, artifact::labeled)); }), log);
        } else if (train->parsed()) {
            const auto cfg = config_for(train, common);
            stage_train(cfg, run_stage("train", [&] { return read_labeled(out_path(cfg, artifact::selected)); }), log);
        } else if (rank->parsed()) {
            const auto cfg = config_for(rank, common);
            const auto grid = run_stage("rank", [&] { return load_codebook(require_artifact(out_path(cfg, artifact::codebook))); });
            const auto sel = run_stage("rank", [&] { return read_labeled(out_path(cfg, artifact::selected)); });
            stage_rank(cfg, grid, sel, log);
        } else if (run->parsed()) {
            const auto cfg = config_for(run, common);
            const auto t0 = std::chrono::steady_clock::now();
            const auto s = run_pipeline(cfg, log);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cout << "manifest_hash " << s.manifest_hash << "\n";
            log("run: ", s.labeled_vectors, " labeled vectors, ", s.ranked, " ranked, ", secs, " s");
        } else if (rep->parsed()) {
            const auto kind = parse_report_kind(kind_text);
            if (!kind) {
                std::cerr << "unknown report kind '" << kind_text << "'\n";
                return 1;
            }
            const auto cfg = load_config(common.config.empty() ? std::nullopt : std::optional<fs::path>(common.config),
                                         overrides_from(rep, common));
            ReportInputs in{cfg.output_dir, rep_input.empty() ? std::nullopt : std::optional<fs::path>(rep_input),
                            cfg.split_date};
            const std::string text = report(*kind, in);
            if (rep_out.empty())
                std::cout << text;
            else
                csv::write_file(rep_out, text);
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
