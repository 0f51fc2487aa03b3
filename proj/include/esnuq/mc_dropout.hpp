#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "esnuq/forecast.hpp"
#include "esnuq/mlp.hpp"

namespace esnuq {

/**
 * Build a sampling-based forecast from a dropout-trained scalar readout:
 * M stochastic forward passes per state, each with its own fresh Bernoulli
 * mask (inverted 1/p scaling applied). Deterministic in `seed`.
 */
EnsembleForecast predict_mc_dropout(const Mlp& mlp, const Eigen::MatrixXd& states,
                                    double keep_prob, int m_samples,
                                    std::uint64_t seed);

} // namespace esnuq
