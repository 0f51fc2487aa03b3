#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "esnuq/experiment.hpp"
#include "esnuq/time_series.hpp"

namespace {

using namespace esnuq;

void write_series_csv(const TimeSeries& series, const std::string& path,
                      const std::string& header) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("[io] cannot write " + path);
    if (!header.empty()) out << header << '\n';
    for (double v : series.values) out << v << '\n';
}

nlohmann::json read_json(const std::string& path, const char* stage) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("[" + std::string(stage) + "] cannot read " +
                                 path);
    try {
        return nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw std::runtime_error("[" + std::string(stage) + "] " + e.what());
    }
}

void print_aggregate(const std::string& name, const MetricAggregate& a) {
    std::printf("%-10s mse %.6g  cal %.6g (raw %.6g)  width95 %.6g  "
                "coverage95 %.4f  mcrps %.6g  train %.3fs +- %.3fs\n",
                name.c_str(), a.mean.mse, a.mean.cal, a.raw_mean.cal,
                a.mean.width95, a.mean.coverage95, a.mean.mcrps,
                a.train_seconds_mean, a.train_seconds_sd);
}

int cmd_synth(std::size_t length, int period, double trend, double noise,
              std::uint64_t seed, const std::string& out,
              const std::string& name) {
    const TimeSeries series = synth_seasonal(length, period, trend, noise, seed);
    write_series_csv(series, out, name);
    std::printf("wrote %zu values to %s\n", series.size(), out.c_str());
    return 0;
}

int cmd_ingest(const std::string& path, const std::string& column, bool header,
               const std::vector<std::string>& exclude, const std::string& out) {
    TimeSeries series = load_csv(path, column, header);
    std::vector<ExclusionRange> ranges;
    for (const std::string& spec : exclude) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error(
                "[ingest] exclusion must look like begin:end, got " + spec);
        ranges.push_back({std::stoull(spec.substr(0, colon)),
                          std::stoull(spec.substr(colon + 1))});
    }
    if (!ranges.empty()) series = apply_exclusions(series, ranges);
    double mean = 0.0, lo = series.values.front(), hi = lo;
    for (double v : series.values) {
        mean += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    mean /= static_cast<double>(series.size());
    double var = 0.0;
    for (double v : series.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(series.size());
    std::printf("%s: %zu values, mean %.6g, std %.6g, min %.6g, max %.6g\n",
                series.name.empty() ? path.c_str() : series.name.c_str(),
                series.size(), mean, std::sqrt(var), lo, hi);
    if (!out.empty()) {
        write_series_csv(series, out, series.name);
        std::printf("wrote cleaned series to %s\n", out.c_str());
    }
    return 0;
}

int cmd_run(const std::string& config_path, std::int64_t seed_override,
            const std::string& out) {
    ExperimentConfig cfg = load_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    RunArtifacts artifacts;
    const RunReport report = run_experiment(cfg, &artifacts);
    print_aggregate(to_string(cfg.method), report.aggregate);
    if (!out.empty()) {
        write_run_outputs(report, artifacts, out);
        std::printf("wrote metrics.json, timing.json and CSVs to %s\n",
                    out.c_str());
    }
    return 0;
}

int cmd_grid(const std::string& config_path, const std::string& grid_path,
             std::int64_t seed_override, const std::string& out) {
    ExperimentConfig base = load_config(config_path);
    if (seed_override >= 0) base.seed = static_cast<std::uint64_t>(seed_override);
    const GridSpec grid = parse_grid(read_json(grid_path, "grid"));
    std::printf("grid: %zu candidates\n", grid.size());
    const GridResult result = grid_search(grid, base);
    std::printf("%-5s %-12s %-12s %-10s\n", "rank", "val_mse", "val_cal",
                "params");
    for (std::size_t i = 0; i < result.leaderboard.size(); ++i) {
        const GridEntry& e = result.leaderboard[i];
        std::printf("%-5zu %-12.6g %-12.6g %-10zu\n", i + 1, e.val_mse,
                    e.val_cal, e.n_params);
    }
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        nlohmann::json rows = nlohmann::json::array();
        for (const GridEntry& e : result.leaderboard)
            rows.push_back({{"config", config_to_json(e.config)},
                            {"val_mse", e.val_mse},
                            {"val_cal", e.val_cal},
                            {"n_params", e.n_params}});
        std::ofstream lb(out + "/leaderboard.json");
        lb << nlohmann::json{{"leaderboard", rows}}.dump(2) << '\n';
        std::ofstream best(out + "/best_config.json");
        best << config_to_json(result.best).dump(2) << '\n';
        std::printf("wrote leaderboard.json and best_config.json to %s\n",
                    out.c_str());
    }
    return 0;
}

int cmd_compare(const std::string& config_path,
                const std::vector<std::string>& only,
                std::int64_t seed_override, const std::string& out) {
    nlohmann::json doc = read_json(config_path, "config");
    if (!doc.contains("methods") || !doc.at("methods").is_object())
        throw std::runtime_error(
            "[config] compare needs a top-level \"methods\" object mapping "
            "method names to hyperparameters");
    nlohmann::json shared = doc;
    shared.erase("methods");
    shared.erase("method");
    shared.erase("hyper");
    std::vector<ExperimentConfig> cfgs;
    for (const auto& [name, hyper] : doc.at("methods").items()) {
        if (!only.empty() &&
            std::find(only.begin(), only.end(), name) == only.end())
            continue;
        nlohmann::json one = shared;
        one["method"] = name;
        if (!hyper.is_null() && !hyper.empty()) one["hyper"] = hyper;
        ExperimentConfig cfg = parse_config(one);
        if (seed_override >= 0)
            cfg.seed = static_cast<std::uint64_t>(seed_override);
        cfgs.push_back(std::move(cfg));
    }
    if (cfgs.empty())
        throw std::runtime_error("[config] no methods selected for comparison");
    const Comparison comparison = compare_methods(cfgs);
    for (const RunReport& r : comparison.rows)
        print_aggregate(to_string(r.config.method), r.aggregate);
    if (!out.empty()) {
        write_comparison_outputs(comparison, out);
        std::printf("wrote comparison.json/.csv and per-method outputs to %s\n",
                    out.c_str());
    }
    return 0;
}

int cmd_report(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string comparison = dir + "/comparison.json";
    const std::string metrics = dir + "/metrics.json";
    if (fs::exists(comparison)) {
        const nlohmann::json doc = read_json(comparison, "report");
        for (const auto& row : doc.at("rows")) {
            const auto& agg = row.at("report").at("aggregate");
            const auto& mean = agg.at("final_mean");
            const auto& raw = agg.at("raw_mean");
            const auto& timing = row.at("timing");
            std::printf("%-10s mse %.6g  cal %.6g (raw %.6g)  width95 %.6g  "
                        "coverage95 %.4f  mcrps %.6g  train %.3fs\n",
                        row.at("method").get<std::string>().c_str(),
                        mean.at("mse").get<double>(), mean.at("cal").get<double>(),
                        raw.at("cal").get<double>(),
                        mean.at("width95").get<double>(),
                        mean.at("coverage95").get<double>(),
                        mean.at("mcrps").get<double>(),
                        timing.at("mean").get<double>());
        }
        return 0;
    }
    if (fs::exists(metrics)) {
        const nlohmann::json doc = read_json(metrics, "report");
        const nlohmann::json timing = read_json(dir + "/timing.json", "report");
        const auto& mean = doc.at("aggregate").at("final_mean");
        const auto& sd = doc.at("aggregate").at("final_sd");
        std::printf("method %s over %zu run(s)\n",
                    doc.at("config").at("method").get<std::string>().c_str(),
                    doc.at("runs").size());
        for (const char* key : {"mse", "cal", "width95", "coverage95", "mcrps"})
            std::printf("  %-10s %.6g +- %.6g\n", key,
                        mean.at(key).get<double>(), sd.at(key).get<double>());
        std::printf("  %-10s %.3fs +- %.3fs\n", "train",
                    timing.at("mean").get<double>(),
                    timing.at("sd").get<double>());
        return 0;
    }
    throw std::runtime_error("[report] no metrics.json or comparison.json in " +
                             dir);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reservoir forecasting with uncertainty: experiment runner"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic seasonal CSV");
    std::size_t length = 2000;
    int period = 7;
    double trend = 0.0, noise = 0.3;
    std::uint64_t synth_seed = 0;
    std::string synth_out = "synthetic.csv", synth_name = "synthetic";
    synth->add_option("--length", length, "series length");
    synth->add_option("--period", period, "seasonal period");
    synth->add_option("--trend", trend, "linear trend per step");
    synth->add_option("--noise", noise, "noise standard deviation");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output CSV path");
    synth->add_option("--name", synth_name, "header/series name");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate and summarize a CSV column");
    std::string in_path, in_column = "0", in_out;
    bool in_header = false;
    std::vector<std::string> in_exclude;
    ingest->add_option("--path", in_path, "CSV path")->required();
    ingest->add_option("--column", in_column, "column index or name");
    ingest->add_flag("--header", in_header, "first row is a header");
    ingest->add_option("--exclude", in_exclude,
                       "index ranges begin:end to drop (repeatable)");
    ingest->add_option("--out", in_out, "write the cleaned series here");

    // run / grid / compare / report
    auto* run = app.add_subcommand("run", "run one experiment config");
    std::string run_config, run_out;
    std::int64_t run_seed_cli = -1;
    run->add_option("--config", run_config, "experiment JSON")->required();
    run->add_option("--seed", run_seed_cli, "master seed override");
    run->add_option("--out", run_out, "output directory");

    auto* grid = app.add_subcommand("grid", "grid-search hyperparameters");
    std::string grid_config, grid_grid, grid_out;
    std::int64_t grid_seed_cli = -1;
    grid->add_option("--config", grid_config, "base experiment JSON")->required();
    grid->add_option("--grid", grid_grid, "grid JSON")->required();
    grid->add_option("--seed", grid_seed_cli, "master seed override");
    grid->add_option("--out", grid_out, "output directory");

    auto* compare = app.add_subcommand("compare", "run several methods on one study");
    std::string cmp_config, cmp_out;
    std::vector<std::string> cmp_only;
    std::int64_t cmp_seed_cli = -1;
    compare->add_option("--config", cmp_config, "study JSON with a methods object")
        ->required();
    compare->add_option("--methods", cmp_only,
                        "subset of methods to run (default: all listed)");
    compare->add_option("--seed", cmp_seed_cli, "master seed override");
    compare->add_option("--out", cmp_out, "output directory");

    auto* report = app.add_subcommand("report", "summarize a results directory");
    std::string report_dir;
    report->add_option("--dir", report_dir, "directory with metrics/comparison JSON")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(length, period, trend, noise, synth_seed, synth_out,
                             synth_name);
        if (ingest->parsed())
            return cmd_ingest(in_path, in_column, in_header, in_exclude, in_out);
        if (run->parsed()) return cmd_run(run_config, run_seed_cli, run_out);
        if (grid->parsed())
            return cmd_grid(grid_config, grid_grid, grid_seed_cli, grid_out);
        if (compare->parsed())
            return cmd_compare(cmp_config, cmp_only, cmp_seed_cli, cmp_out);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
    return 0;
}
