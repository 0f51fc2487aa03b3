#pragma once

#include <Eigen/Dense>
#include <string>
#include <variant>
#include <vector>

#include "esnuq/time_series.hpp"

namespace esnuq {

/**
 * Ordered quantile levels τ in (0,1), strictly increasing. The default grid
 * has K=42 levels and contains 0.025, 0.5 and 0.975 (the levels the interval
 * and point metrics read).
 */
struct QuantileLevels {
    std::vector<double> taus;

    QuantileLevels() = default;
    explicit QuantileLevels(std::vector<double> t);

    std::size_t size() const { return taus.size(); }

    /**
     * 42 levels: 0.005, 0.01, 0.025, then 0.05..0.95 in steps of 0.025,
     * then 0.975, 0.99. Built from integer thousandths so the values are
     * exactly representable expressions, identical across platforms.
     */
    static QuantileLevels default_grid();

    /** Index of the level equal to tau (within 1e-12), or throws. */
    std::size_t index_of(double tau) const;
    bool contains(double tau) const;
};

/** Sample-based forecast: row t holds M draws for time step t. */
struct EnsembleForecast {
    Eigen::MatrixXd samples; // T x M
    std::string source;      // which sampler produced it: dropout | vi | hmc | ssvs
};

/** Quantile-based forecast: row t holds the K per-level quantiles, non-decreasing. */
struct QuantileForecast {
    QuantileLevels levels;
    Eigen::MatrixXd q; // T x K
};

/**
 * Per-time-step forecast uncertainty: either an ensemble of samples
 * (dropout / VI / HMC / SSVS) or a quantile vector (quantile regression).
 */
struct PredictiveDistribution {
    std::variant<EnsembleForecast, QuantileForecast> value;
    QuantileLevels levels; // levels used when reducing to quantiles

    bool is_ensemble() const {
        return std::holds_alternative<EnsembleForecast>(value);
    }
    std::size_t steps() const;

    /** y -> scale*y + shift applied to every sample/quantile (scale > 0). */
    void affine(double scale, double shift);

    /** Adds shifts[t] to every sample/quantile of step t. */
    void shift_per_step(const std::vector<double>& shifts);

    /** Reduce to quantiles at the stored levels (sorts ensembles per step). */
    QuantileForecast to_quantiles() const;
};

/**
 * Empirical quantile of an ascending-sorted sample vector by linear
 * interpolation of order statistics at position τ·(M−1).
 */
double empirical_quantile_sorted(const Eigen::VectorXd& sorted, double tau);

/** Per-step empirical quantiles of an ensemble; requires M >= 2. */
QuantileForecast extract_quantiles(const EnsembleForecast& ensemble,
                                   const QuantileLevels& levels);

/**
 * Undo seasonal differencing on a forecast. Forecast step t predicts the
 * differenced series at index first_target_index + t; the reconstructed
 * value adds the already-observed base value history[first_target_index + t]
 * (a known constant per step, so interval widths are unchanged). `history`
 * must be the un-differenced series in the same scale as the forecast.
 */
PredictiveDistribution reconstruct_forecast(const PredictiveDistribution& diff_forecast,
                                            const TimeSeries& history,
                                            const SeasonalSpec& spec,
                                            std::size_t first_target_index);

/** One row per time step, one column per level, header row naming levels. */
void export_quantile_csv(const QuantileForecast& forecast, const std::string& path);

/** Debug export of raw samples: T rows, M columns. */
void export_ensemble_csv(const EnsembleForecast& ensemble, const std::string& path);

} // namespace esnuq
