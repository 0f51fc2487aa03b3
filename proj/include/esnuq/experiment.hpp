#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "esnuq/calibration.hpp"
#include "esnuq/forecast.hpp"
#include "esnuq/metrics.hpp"
#include "esnuq/mlp.hpp"
#include "esnuq/reservoir.hpp"
#include "esnuq/time_series.hpp"
#include "esnuq/variational.hpp"

namespace esnuq {

/** Where the series comes from: a generated seasonal signal or a CSV column. */
struct DatasetSpec {
    enum class Kind { synthetic, csv };
    Kind kind = Kind::synthetic;

    // synthetic
    std::size_t length = 2000;
    int period = 7;
    double trend = 0.0;
    double noise_std = 0.3;

    // csv
    std::string path;
    std::string column = "0";
    bool has_header = false;
    std::vector<ExclusionRange> exclude;

    void validate() const;
    bool operator==(const DatasetSpec&) const = default;
};

enum class Method { qr, dropout, vi, mcmc, mcmc_pca, ssvs };

Method method_from_string(const std::string& name);
std::string to_string(Method m);

/**
 * Method hyperparameters with desk-scale defaults.  Which fields a method
 * accepts is checked by ExperimentConfig::validate(): the readout shape
 * (layers/units/activation) belongs to the network-based methods, the
 * learning rate to the gradient-trained ones (qr, dropout, vi), the keep
 * probability to dropout alone, the prior to the Bayesian ones, and the
 * sampler budget (warmup/samples/leapfrog) to the chain-based ones.
 */
struct MethodHyper {
    int layers = 1;             // hidden layers; 0 = linear readout
    int units = 64;             // first hidden width; deeper layers halve
    Activation activation = Activation::tanh;
    double learning_rate = 1e-3;
    int steps = 2000;           // optimizer budget (qr, dropout, vi)
    int batch_size = 0;         // 0 = full batch (qr, dropout)
    double dropout_p = 0.9;     // keep probability
    PriorSpec prior = PriorSpec::gaussian(0.0, 1.0);
    int rank = -1;              // vi covariance rank; -1 = round(sqrt(N))
    int warmup = 500;           // chain warmup iterations
    int samples = 1000;         // kept chain draws
    int leapfrog = 32;          // integrator steps per proposal
    int m_samples = 500;        // predictive ensemble size
    int pca_dim = 0;            // reduced state width; 0 = auto at 99% variance
};

/**
 * Hidden widths start at `units` and halve per extra layer (minimum 1).
 * Output width is 1 for scalar readouts and the level count for the
 * multi-head quantile readout.
 */
MlpSpec readout_spec(int input_dim, const MethodHyper& hyper, int output_dim);

/** One experiment: dataset, preprocessing, reservoir, method, and budget. */
struct ExperimentConfig {
    DatasetSpec dataset;
    SeasonalSpec seasonal{7, 1};
    SplitSpec split;
    ReservoirConfig reservoir;  // reservoir.seed is derived from `seed`
    int washout = 100;
    Method method = Method::qr;
    MethodHyper hyper;
    std::vector<double> levels; // empty = the default 42-level grid
    int n_runs = 1;
    std::uint64_t seed = 0;

    /** Keys that were present in the parsed document, for applicability checks. */
    std::vector<std::string> hyper_keys;

    void validate() const;
};

ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/**
 * Seed derivation, all through derive_seed(master, stream):
 *   stream 1: synthetic dataset noise
 *   stream 2: reservoir wiring
 *   stream 100 + r: run r; within a run, sub-streams
 *     1 = training / chain, 2 = calibration-split prediction,
 *     3 = test-split prediction.
 */
std::uint64_t run_seed(std::uint64_t master, int run_index);

struct RunMetrics {
    MetricsReport final;   // after recalibration (identical to raw for qr)
    MetricsReport raw;     // before recalibration
    double train_seconds = 0.0;
};

struct MetricAggregate {
    MetricsReport mean;
    MetricsReport sd; // sample standard deviation; zero when n_runs == 1
    MetricsReport raw_mean; // before recalibration
    MetricsReport raw_sd;
    double train_seconds_mean = 0.0;
    double train_seconds_sd = 0.0;
};

struct RunReport {
    ExperimentConfig config;
    std::vector<RunMetrics> runs;
    MetricAggregate aggregate;
};

/** Plot-ready leftovers from the first run of a report. */
struct RunArtifacts {
    QuantileForecast test_quantiles; // final forecast, original scale
    CalibrationCurve curve_before;   // test-split reliability, pre-map
    CalibrationCurve curve_after;    // test-split reliability, post-map
    std::vector<double> test_truths; // original scale
};

/**
 * The full pipeline, n_runs times: ingest, normalize on train statistics,
 * seasonally difference, run the reservoir, optionally reduce the states,
 * train the method on the train split (timed), fit the recalibration map on
 * the calibration split (skipped for qr), and score the test split in the
 * original scale.  Deterministic in (config, seed).  Errors carry a
 * [stage] tag.
 */
RunReport run_experiment(const ExperimentConfig& cfg,
                         RunArtifacts* artifacts = nullptr);

/** Lists of candidate values; an empty list keeps the base config's value. */
struct GridSpec {
    std::vector<int> layers;
    std::vector<int> units;
    std::vector<Activation> activations;
    std::vector<double> learning_rates;
    std::vector<double> dropout_ps;
    std::vector<PriorSpec> priors;

    std::size_t size() const; // cartesian product of the non-empty lists
};

GridSpec parse_grid(const nlohmann::json& doc);

struct GridEntry {
    ExperimentConfig config;
    double val_mse = 0.0;      // median MSE on the calibration split
    double val_cal = 0.0;      // calibration error on the same split
    std::size_t n_params = 0;  // trained parameter count (tie-break)
};

struct GridResult {
    std::vector<GridEntry> leaderboard; // sorted: mse, then n_params, then cal
    ExperimentConfig best;
};

/**
 * Every candidate trained once and scored on the calibration split; ranked
 * by MSE with ties broken by fewer parameters, then lower calibration
 * error.  Throws if every candidate fails.
 */
GridResult grid_search(const GridSpec& grid, const ExperimentConfig& base);

struct Comparison {
    std::vector<RunReport> rows;          // one per method, input order
    std::vector<RunArtifacts> artifacts;  // aligned with rows
};

/**
 * One report per config.  All configs must share the dataset, seasonal
 * setup, split, reservoir shape and master seed, so every method sees the
 * same reservoir and the same data.
 */
Comparison compare_methods(const std::vector<ExperimentConfig>& cfgs);

// --- serialization ---

/** Deterministic metric document: config echo, per-run and aggregate
 *  metrics, no wall times (those go to the timing document). */
nlohmann::json report_to_json(const RunReport& report);
/** Wall times only: per-run training seconds and their mean/sd. */
nlohmann::json timing_to_json(const RunReport& report);

/** metrics.json + timing.json + quantile and calibration-curve CSVs. */
void write_run_outputs(const RunReport& report, const RunArtifacts& artifacts,
                       const std::string& out_dir);
void write_comparison_outputs(const Comparison& comparison,
                              const std::string& out_dir);

} // namespace esnuq
