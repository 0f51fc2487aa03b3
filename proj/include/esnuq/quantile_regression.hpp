#pragma once

#include <Eigen/Dense>

#include "esnuq/forecast.hpp"
#include "esnuq/mlp.hpp"

namespace esnuq {

/** Check loss ρ_τ(r) = τ·max(r,0) + (1−τ)·max(−r,0). */
double pinball_loss(double r, double tau);

/** One shared network whose K output heads estimate the K quantile levels. */
struct QrModel {
    Mlp mlp;
    QuantileLevels levels;
};

struct QrTrainResult {
    QrModel model;
    std::vector<double> loss_trace;
};

/**
 * Train the multi-head readout on the mean over batch and heads of the
 * per-level check loss. The network's output width must equal the number of
 * levels. Deterministic in opt.seed (which also derives the weight init).
 */
QrTrainResult train_qr(const MlpSpec& spec, const Eigen::MatrixXd& x,
                       const Eigen::VectorXd& y, const QuantileLevels& levels,
                       const OptimizerConfig& opt);

/**
 * Per-state quantile vector: raw head outputs, then an ascending sort per
 * time step so emitted quantiles never cross.
 */
QuantileForecast predict_quantiles(const QrModel& model,
                                   const Eigen::MatrixXd& states);

} // namespace esnuq
