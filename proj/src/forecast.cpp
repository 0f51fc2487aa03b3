#include "esnuq/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace esnuq {

QuantileLevels::QuantileLevels(std::vector<double> t) : taus(std::move(t)) {
    if (taus.empty()) throw std::invalid_argument("quantile levels must be non-empty");
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (!(taus[i] > 0.0 && taus[i] < 1.0))
            throw std::invalid_argument("quantile levels must lie strictly in (0,1)");
        if (i > 0 && !(taus[i] > taus[i - 1]))
            throw std::invalid_argument("quantile levels must be strictly increasing");
    }
}

QuantileLevels QuantileLevels::default_grid() {
    std::vector<int> thousandths = {5, 10, 25};
    for (int k = 50; k <= 950; k += 25) thousandths.push_back(k);
    thousandths.push_back(975);
    thousandths.push_back(990);
    std::vector<double> taus;
    taus.reserve(thousandths.size());
    for (int k : thousandths) taus.push_back(static_cast<double>(k) / 1000.0);
    return QuantileLevels(std::move(taus));
}

std::size_t QuantileLevels::index_of(double tau) const {
    for (std::size_t i = 0; i < taus.size(); ++i)
        if (std::abs(taus[i] - tau) < 1e-12) return i;
    throw std::invalid_argument("quantile level " + std::to_string(tau) +
                                " not present in the level grid");
}

bool QuantileLevels::contains(double tau) const {
    for (double t : taus)
        if (std::abs(t - tau) < 1e-12) return true;
    return false;
}

std::size_t PredictiveDistribution::steps() const {
    if (is_ensemble())
        return static_cast<std::size_t>(std::get<EnsembleForecast>(value).samples.rows());
    return static_cast<std::size_t>(std::get<QuantileForecast>(value).q.rows());
}

void PredictiveDistribution::affine(double scale, double shift) {
    if (!(scale > 0.0))
        throw std::invalid_argument("affine transform of a forecast needs scale > 0");
    if (is_ensemble()) {
        auto& e = std::get<EnsembleForecast>(value);
        e.samples = (e.samples.array() * scale + shift).matrix();
    } else {
        auto& qf = std::get<QuantileForecast>(value);
        // Order is preserved because the map is increasing.
        qf.q = (qf.q.array() * scale + shift).matrix();
    }
}

void PredictiveDistribution::shift_per_step(const std::vector<double>& shifts) {
    if (shifts.size() != steps())
        throw std::invalid_argument("per-step shift length does not match forecast length");
    if (is_ensemble()) {
        auto& e = std::get<EnsembleForecast>(value);
        for (Eigen::Index t = 0; t < e.samples.rows(); ++t)
            e.samples.row(t).array() += shifts[static_cast<std::size_t>(t)];
    } else {
        auto& qf = std::get<QuantileForecast>(value);
        for (Eigen::Index t = 0; t < qf.q.rows(); ++t)
            qf.q.row(t).array() += shifts[static_cast<std::size_t>(t)];
    }
}

QuantileForecast PredictiveDistribution::to_quantiles() const {
    if (is_ensemble())
        return extract_quantiles(std::get<EnsembleForecast>(value), levels);
    const auto& qf = std::get<QuantileForecast>(value);
    if (qf.levels.taus != levels.taus)
        throw std::invalid_argument(
            "stored quantile forecast does not carry the requested levels");
    return qf;
}

double empirical_quantile_sorted(const Eigen::VectorXd& sorted, double tau) {
    const Eigen::Index m = sorted.size();
    if (m < 1) throw std::invalid_argument("empty sample vector");
    if (m == 1) return sorted[0];
    if (!(tau >= 0.0 && tau <= 1.0))
        throw std::invalid_argument("quantile level outside [0,1]");
    const double pos = tau * static_cast<double>(m - 1);
    const auto lo = static_cast<Eigen::Index>(std::floor(pos));
    if (lo >= m - 1) return sorted[m - 1];
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

QuantileForecast extract_quantiles(const EnsembleForecast& ensemble,
                                   const QuantileLevels& levels) {
    const Eigen::Index t_steps = ensemble.samples.rows();
    const Eigen::Index m = ensemble.samples.cols();
    if (m < 2)
        throw std::invalid_argument("need at least 2 samples per step to extract quantiles");
    QuantileForecast out;
    out.levels = levels;
    out.q.resize(t_steps, static_cast<Eigen::Index>(levels.size()));
    Eigen::VectorXd row(m);
    for (Eigen::Index t = 0; t < t_steps; ++t) {
        row = ensemble.samples.row(t);
        std::sort(row.data(), row.data() + row.size());
        for (std::size_t k = 0; k < levels.size(); ++k)
            out.q(t, static_cast<Eigen::Index>(k)) =
                empirical_quantile_sorted(row, levels.taus[k]);
    }
    return out;
}

PredictiveDistribution reconstruct_forecast(const PredictiveDistribution& diff_forecast,
                                            const TimeSeries& history,
                                            const SeasonalSpec& spec,
                                            std::size_t first_target_index) {
    if (spec.h > spec.s)
        throw std::invalid_argument(
            "reconstruction requires horizon <= seasonal lag: the base value must "
            "already be observed");
    const std::size_t t_steps = diff_forecast.steps();
    if (first_target_index + t_steps > history.size())
        throw std::invalid_argument(
            "history too short to supply the base values for reconstruction");
    std::vector<double> shifts(t_steps);
    for (std::size_t t = 0; t < t_steps; ++t)
        shifts[t] = history.values[first_target_index + t];
    PredictiveDistribution out = diff_forecast;
    out.shift_per_step(shifts);
    return out;
}

void export_quantile_csv(const QuantileForecast& forecast, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t k = 0; k < forecast.levels.size(); ++k) {
        if (k) out << ',';
        out << "tau_" << forecast.levels.taus[k];
    }
    out << '\n';
    for (Eigen::Index t = 0; t < forecast.q.rows(); ++t) {
        for (Eigen::Index k = 0; k < forecast.q.cols(); ++k) {
            if (k) out << ',';
            out << forecast.q(t, k);
        }
        out << '\n';
    }
}

void export_ensemble_csv(const EnsembleForecast& ensemble, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (Eigen::Index t = 0; t < ensemble.samples.rows(); ++t) {
        for (Eigen::Index j = 0; j < ensemble.samples.cols(); ++j) {
            if (j) out << ',';
            out << ensemble.samples(t, j);
        }
        out << '\n';
    }
}

} // namespace esnuq
