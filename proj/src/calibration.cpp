#include "esnuq/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace esnuq {

double CalibrationMap::map(double tau) const {
    if (knots_x.size() < 2 || knots_x.size() != knots_y.size())
        throw std::logic_error("calibration map has no knots");
    if (tau <= knots_x.front()) return knots_y.front();
    if (tau >= knots_x.back()) return knots_y.back();
    const auto it = std::upper_bound(knots_x.begin(), knots_x.end(), tau);
    const auto j = static_cast<std::size_t>(it - knots_x.begin());
    const double x0 = knots_x[j - 1], x1 = knots_x[j];
    const double y0 = knots_y[j - 1], y1 = knots_y[j];
    if (x1 == x0) return y0;
    return y0 + (y1 - y0) * (tau - x0) / (x1 - x0);
}

double CalibrationMap::inverse(double alpha) const {
    if (knots_x.size() < 2 || knots_x.size() != knots_y.size())
        throw std::logic_error("calibration map has no knots");
    if (alpha <= knots_y.front()) return knots_x.front();
    if (alpha > knots_y.back()) return knots_x.back();
    for (std::size_t j = 1; j < knots_x.size(); ++j) {
        if (knots_y[j] >= alpha) {
            const double y0 = knots_y[j - 1], y1 = knots_y[j];
            if (y1 == y0) return knots_x[j]; // flat segment ending at alpha
            // first point inside the rising segment reaching alpha
            const double x0 = knots_x[j - 1], x1 = knots_x[j];
            return x0 + (x1 - x0) * (alpha - y0) / (y1 - y0);
        }
    }
    return knots_x.back();
}

CalibrationMap fit_recalibrator(const CalibrationCurve& curve,
                                const std::string& fitted_on) {
    const std::size_t k = curve.taus.size();
    if (k == 0) throw std::invalid_argument("empty calibration curve");
    if (curve.observed.size() != k)
        throw std::invalid_argument("malformed calibration curve");
    for (std::size_t i = 1; i < k; ++i)
        if (!(curve.taus[i] > curve.taus[i - 1]))
            throw std::invalid_argument("levels must be strictly increasing");

    // Pool adjacent violators: merge neighbouring blocks until the block
    // means are non-decreasing; each point then takes its block mean.
    struct Block {
        double sum;
        double weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    blocks.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        blocks.push_back({curve.observed[i], 1.0, 1});
        while (blocks.size() > 1) {
            const Block& b = blocks.back();
            const Block& a = blocks[blocks.size() - 2];
            if (a.sum / a.weight <= b.sum / b.weight) break;
            Block merged{a.sum + b.sum, a.weight + b.weight, a.count + b.count};
            blocks.pop_back();
            blocks.back() = merged;
        }
    }

    CalibrationMap out;
    out.fitted_on = fitted_on;
    out.knots_x.reserve(k + 2);
    out.knots_y.reserve(k + 2);
    out.knots_x.push_back(0.0);
    out.knots_y.push_back(0.0);
    std::size_t idx = 0;
    for (const Block& b : blocks) {
        const double fit = std::clamp(b.sum / b.weight, 0.0, 1.0);
        for (std::size_t j = 0; j < b.count; ++j) {
            out.knots_x.push_back(curve.taus[idx++]);
            out.knots_y.push_back(fit);
        }
    }
    out.knots_x.push_back(1.0);
    out.knots_y.push_back(1.0);
    return out;
}

QuantileForecast apply_recalibrator(const CalibrationMap& map,
                                    const PredictiveDistribution& forecast) {
    if (!forecast.is_ensemble())
        throw std::invalid_argument(
            "recalibration needs a sample-backed forecast; direct quantile "
            "output is never recalibrated");
    const auto& ens = std::get<EnsembleForecast>(forecast.value);
    if (ens.samples.cols() < 2)
        throw std::invalid_argument("need at least 2 samples per step");

    QuantileForecast out;
    out.levels = forecast.levels;
    out.q.resize(ens.samples.rows(),
                 static_cast<Eigen::Index>(forecast.levels.size()));
    std::vector<double> remapped(forecast.levels.size());
    for (std::size_t i = 0; i < forecast.levels.size(); ++i)
        remapped[i] = map.inverse(forecast.levels.taus[i]);

    Eigen::VectorXd row(ens.samples.cols());
    for (Eigen::Index t = 0; t < ens.samples.rows(); ++t) {
        row = ens.samples.row(t);
        std::sort(row.data(), row.data() + row.size());
        for (std::size_t i = 0; i < remapped.size(); ++i)
            out.q(t, static_cast<Eigen::Index>(i)) =
                empirical_quantile_sorted(row, remapped[i]);
    }
    // Remapped levels are monotone in the originals, so rows stay sorted.
    return out;
}

} // namespace esnuq
