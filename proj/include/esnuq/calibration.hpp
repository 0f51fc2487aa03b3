#pragma once

#include <string>
#include <vector>

#include "esnuq/forecast.hpp"
#include "esnuq/metrics.hpp"

namespace esnuq {

/**
 * Monotone piecewise-linear map μ: [0,1] → [0,1], fit by isotonic regression
 * of observed frequencies against nominal levels, endpoints pinned to (0,0)
 * and (1,1). `fitted_on` records which split the curve came from so the
 * harness can assert there was no test leakage.
 */
struct CalibrationMap {
    std::vector<double> knots_x;
    std::vector<double> knots_y;
    std::string fitted_on = "cal";

    double map(double tau) const;
    /** Generalized inverse: the smallest τ with μ(τ) ≥ alpha. */
    double inverse(double alpha) const;
};

/** Pool-adjacent-violators isotonic fit of the curve, endpoints pinned. */
CalibrationMap fit_recalibrator(const CalibrationCurve& curve,
                                const std::string& fitted_on = "cal");

/**
 * Recalibrate an ensemble-backed forecast: each requested level α is served
 * by the ensemble quantile at level μ⁻¹(α). Quantile-backed forecasts (the
 * direct quantile-regression output) are rejected — their discontinuous CDF
 * is not recalibrated.
 */
QuantileForecast apply_recalibrator(const CalibrationMap& map,
                                    const PredictiveDistribution& forecast);

} // namespace esnuq
