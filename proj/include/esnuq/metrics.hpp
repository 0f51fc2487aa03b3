#pragma once

#include <Eigen/Dense>
#include <vector>

#include "esnuq/forecast.hpp"

namespace esnuq {

/** Nominal levels τ_i against observed frequencies τ̃_i = P̂(y ≤ q_{τ_i}). */
struct CalibrationCurve {
    std::vector<double> taus;
    std::vector<double> observed;
    std::size_t count = 0; // number of time steps behind the frequencies
};

/**
 * Observed frequency per level: the fraction of steps whose truth lies at or
 * below that level's forecast quantile (ties count as covered).
 */
CalibrationCurve calibration_curve(const QuantileForecast& forecast,
                                   const std::vector<double>& truths);

/** Weighted squared gap Σ w_i (τ_i − τ̃_i)²; empty weights mean all ones. */
double calibration_error(const CalibrationCurve& curve,
                         const std::vector<double>& weights = {});

/**
 * Exact CRPS of the step CDF through the quantile vector: F = 0 below the
 * first quantile, τ_i between consecutive quantiles, 1 above the last; the
 * squared gap to the Heaviside at the truth is integrated segment by
 * segment. Bounded tails make the integral finite.
 */
double crps(const Eigen::VectorXd& quantiles, const QuantileLevels& levels,
            double truth);

/** Mean CRPS over all time steps. */
double mcrps(const QuantileForecast& forecast, const std::vector<double>& truths);

struct IntervalMetrics {
    double width = 0.0;
    double coverage = 0.0;
};

/**
 * Mean width of, and fraction of truths inside, the closed interval between
 * the `lo` and `hi` quantiles (default the central 95% band).
 */
IntervalMetrics interval_metrics(const QuantileForecast& forecast,
                                 const std::vector<double>& truths,
                                 double lo = 0.025, double hi = 0.975);

/** Mean squared error of the median forecast. */
double mse_median(const QuantileForecast& forecast,
                  const std::vector<double>& truths);

struct MetricsReport {
    double mse = 0.0;
    double cal = 0.0;
    double width95 = 0.0;
    double coverage95 = 0.0;
    double mcrps = 0.0;
    double wall_seconds = 0.0; // filled by the harness, not by compute_metrics

    void validate() const;
};

/** All forecast-quality metrics in one pass (wall_seconds left at zero). */
MetricsReport compute_metrics(const QuantileForecast& forecast,
                              const std::vector<double>& truths);

} // namespace esnuq
