#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace esnuq {

/**
 * Univariate time series in dataset units. Values are guaranteed finite
 * after successful ingestion; `step` is metadata (duration per sample).
 */
struct TimeSeries {
    std::vector<double> values;
    std::chrono::duration<double> step{3600.0};
    std::string name;

    std::size_t size() const { return values.size(); }
};

/**
 * Normalization statistics, always fit on the training split only.
 * `fitted_on` records which split produced them so downstream stages can
 * assert there was no leakage.
 */
struct NormStats {
    double mean = 0.0;
    double std = 1.0; // strictly positive
    std::string fitted_on = "train";
};

/** Seasonal lag s and forecast horizon h, in samples. Requires h <= s. */
struct SeasonalSpec {
    int s = 1;
    int h = 1;

    SeasonalSpec() = default;
    SeasonalSpec(int lag, int horizon);
};

/** Contiguous train/calibration/test fractions; must sum to 1. */
struct SplitSpec {
    double train_frac = 0.70;
    double cal_frac = 0.15;
    double test_frac = 0.15;

    void validate() const;
};

struct SplitSizes {
    std::size_t train = 0, cal = 0, test = 0;
};

/** Half-open index range [begin, end) to drop at ingestion. */
struct ExclusionRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const ExclusionRange&) const = default;
};

// --- ingestion ---

/**
 * Load one numeric column from a CSV file. `column` is either a 0-based
 * index or, when `has_header` is true, a column name. Malformed cells are
 * reported with their 1-based row number.
 */
TimeSeries load_csv(const std::string& path, const std::string& column,
                    bool has_header);

/** Drop the given index ranges (must be in-bounds, non-overlapping). */
TimeSeries apply_exclusions(const TimeSeries& series,
                            const std::vector<ExclusionRange>& ranges);

// --- normalization ---

NormStats fit_normalizer(const TimeSeries& train, double std_tolerance = 1e-12);
TimeSeries apply_normalizer(const TimeSeries& series, const NormStats& stats);
TimeSeries invert_normalizer(const TimeSeries& series, const NormStats& stats);

// --- seasonal differencing ---

/** out[t] = x[t+s] - x[t]; output index t corresponds to original index t+s. */
TimeSeries seasonal_difference(const TimeSeries& series, const SeasonalSpec& spec);

/**
 * Inverse of seasonal_difference: rebuilds the full series from the
 * differenced one and the first s original values.
 */
TimeSeries seasonal_undifference(const TimeSeries& diff,
                                 const std::vector<double>& head,
                                 const SeasonalSpec& spec);

// --- splitting ---

/**
 * Split sizes under the documented rounding rule: train = floor(n * train_frac),
 * the remainder is divided by the cal:test ratio with floor on cal so the
 * extra sample goes to test.
 */
SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

/** Contiguous, ordered split; concatenation equals the input. */
std::array<TimeSeries, 3> split(const TimeSeries& series, const SplitSpec& spec);

// --- synthesis ---

/**
 * Deterministic synthetic seasonal series: unit-amplitude sinusoid of the
 * given period plus a linear trend plus Gaussian noise.
 */
TimeSeries synth_seasonal(std::size_t length, int period, double trend,
                          double noise_std, std::uint64_t seed);

} // namespace esnuq
