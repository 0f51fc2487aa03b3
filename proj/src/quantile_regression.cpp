#include "esnuq/quantile_regression.hpp"

#include <algorithm>
#include <stdexcept>

#include "esnuq/rng.hpp"

namespace esnuq {

double pinball_loss(double r, double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("quantile level must lie strictly in (0,1)");
    return tau * std::max(r, 0.0) + (1.0 - tau) * std::max(-r, 0.0);
}

QrTrainResult train_qr(const MlpSpec& spec, const Eigen::MatrixXd& x,
                       const Eigen::VectorXd& y, const QuantileLevels& levels,
                       const OptimizerConfig& opt) {
    spec.validate();
    if (spec.widths.back() != static_cast<int>(levels.size()))
        throw std::invalid_argument(
            "output width must equal the number of quantile levels");
    const Mlp start = init_mlp(spec, derive_seed(opt.seed, 0x71));
    TrainResult fit =
        train_deterministic(start, x, y, PinballLoss{levels}, opt);
    return QrTrainResult{QrModel{std::move(fit.model), levels},
                         std::move(fit.loss_trace)};
}

QuantileForecast predict_quantiles(const QrModel& model,
                                   const Eigen::MatrixXd& states) {
    QuantileForecast out;
    out.levels = model.levels;
    out.q = forward_batch(model.mlp, states);
    for (Eigen::Index t = 0; t < out.q.rows(); ++t) {
        Eigen::VectorXd row = out.q.row(t);
        std::sort(row.data(), row.data() + row.size());
        out.q.row(t) = row;
    }
    return out;
}

} // namespace esnuq
