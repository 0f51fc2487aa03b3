#include "esnuq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace esnuq {

namespace {

void check_alignment(const QuantileForecast& forecast,
                     const std::vector<double>& truths) {
    if (static_cast<std::size_t>(forecast.q.rows()) != truths.size())
        throw std::invalid_argument("forecast and truth lengths differ");
    if (truths.empty()) throw std::invalid_argument("need at least one time step");
    if (forecast.q.cols() != static_cast<Eigen::Index>(forecast.levels.size()))
        throw std::invalid_argument("forecast column count does not match levels");
}

} // namespace

CalibrationCurve calibration_curve(const QuantileForecast& forecast,
                                   const std::vector<double>& truths) {
    check_alignment(forecast, truths);
    const auto t_steps = static_cast<Eigen::Index>(truths.size());
    CalibrationCurve curve;
    curve.taus = forecast.levels.taus;
    curve.count = truths.size();
    curve.observed.resize(forecast.levels.size());
    for (std::size_t i = 0; i < forecast.levels.size(); ++i) {
        Eigen::Index hits = 0;
        for (Eigen::Index t = 0; t < t_steps; ++t)
            if (truths[static_cast<std::size_t>(t)] <=
                forecast.q(t, static_cast<Eigen::Index>(i)))
                ++hits;
        curve.observed[i] = static_cast<double>(hits) / static_cast<double>(t_steps);
    }
    return curve;
}

double calibration_error(const CalibrationCurve& curve,
                         const std::vector<double>& weights) {
    if (curve.taus.size() != curve.observed.size())
        throw std::invalid_argument("malformed calibration curve");
    if (!weights.empty() && weights.size() != curve.taus.size())
        throw std::invalid_argument("need one weight per level");
    double total = 0.0;
    for (std::size_t i = 0; i < curve.taus.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (w < 0.0) throw std::invalid_argument("weights must be non-negative");
        const double gap = curve.taus[i] - curve.observed[i];
        total += w * gap * gap;
    }
    return total;
}

double crps(const Eigen::VectorXd& quantiles, const QuantileLevels& levels,
            double truth) {
    const Eigen::Index k = quantiles.size();
    if (k != static_cast<Eigen::Index>(levels.size()))
        throw std::invalid_argument("quantile vector does not match levels");
    if (k < 1) throw std::invalid_argument("need at least one quantile");
    for (Eigen::Index i = 1; i < k; ++i)
        if (quantiles[i] < quantiles[i - 1])
            throw std::invalid_argument("crossing quantiles");

    std::vector<double> edges(quantiles.data(), quantiles.data() + k);
    edges.push_back(truth);
    std::sort(edges.begin(), edges.end());

    double total = 0.0;
    for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
        const double a = edges[j], b = edges[j + 1];
        if (!(b > a)) continue;
        const double mid = 0.5 * (a + b);
        double f;
        if (mid < quantiles[0]) {
            f = 0.0;
        } else if (mid >= quantiles[k - 1]) {
            f = 1.0;
        } else {
            // last level whose quantile lies at or below the midpoint
            Eigen::Index i = 0;
            while (i + 1 < k && quantiles[i + 1] <= mid) ++i;
            f = levels.taus[static_cast<std::size_t>(i)];
        }
        const double theta = mid >= truth ? 1.0 : 0.0;
        total += (b - a) * (f - theta) * (f - theta);
    }
    return total;
}

double mcrps(const QuantileForecast& forecast, const std::vector<double>& truths) {
    check_alignment(forecast, truths);
    double total = 0.0;
    for (Eigen::Index t = 0; t < forecast.q.rows(); ++t)
        total += crps(forecast.q.row(t), forecast.levels,
                      truths[static_cast<std::size_t>(t)]);
    return total / static_cast<double>(truths.size());
}

IntervalMetrics interval_metrics(const QuantileForecast& forecast,
                                 const std::vector<double>& truths, double lo,
                                 double hi) {
    check_alignment(forecast, truths);
    const auto li = static_cast<Eigen::Index>(forecast.levels.index_of(lo));
    const auto hi_i = static_cast<Eigen::Index>(forecast.levels.index_of(hi));
    IntervalMetrics out;
    Eigen::Index inside = 0;
    for (Eigen::Index t = 0; t < forecast.q.rows(); ++t) {
        out.width += forecast.q(t, hi_i) - forecast.q(t, li);
        const double y = truths[static_cast<std::size_t>(t)];
        if (y >= forecast.q(t, li) && y <= forecast.q(t, hi_i)) ++inside;
    }
    out.width /= static_cast<double>(truths.size());
    out.coverage = static_cast<double>(inside) / static_cast<double>(truths.size());
    return out;
}

double mse_median(const QuantileForecast& forecast,
                  const std::vector<double>& truths) {
    check_alignment(forecast, truths);
    const auto med = static_cast<Eigen::Index>(forecast.levels.index_of(0.5));
    double total = 0.0;
    for (Eigen::Index t = 0; t < forecast.q.rows(); ++t) {
        const double r = truths[static_cast<std::size_t>(t)] - forecast.q(t, med);
        total += r * r;
    }
    return total / static_cast<double>(truths.size());
}

void MetricsReport::validate() const {
    for (double v : {mse, cal, width95, coverage95, mcrps, wall_seconds})
        if (!std::isfinite(v))
            throw std::runtime_error("non-finite metric value");
    if (coverage95 < 0.0 || coverage95 > 1.0)
        throw std::runtime_error("coverage outside [0,1]");
}

MetricsReport compute_metrics(const QuantileForecast& forecast,
                              const std::vector<double>& truths) {
    MetricsReport report;
    report.mse = mse_median(forecast, truths);
    report.cal = calibration_error(calibration_curve(forecast, truths));
    const IntervalMetrics band = interval_metrics(forecast, truths);
    report.width95 = band.width;
    report.coverage95 = band.coverage;
    report.mcrps = mcrps(forecast, truths);
    report.validate();
    return report;
}

} // namespace esnuq
