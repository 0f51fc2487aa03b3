#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "esnuq/time_series.hpp"

namespace esnuq {

struct ReservoirConfig {
    int n_units = 500;           // N
    int input_dim = 1;           // K
    double spectral_radius = 0.9; // strictly below 1
    double density = 0.1;         // fraction of nonzero recurrent weights
    double input_scale = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/**
 * Fixed random recurrent network: dense input weights drawn uniform on
 * [-input_scale, input_scale], sparse recurrent weights drawn uniform on
 * [-1,1], kept with probability `density`, then rescaled so the spectral
 * radius equals the configured value.
 */
struct Reservoir {
    Eigen::MatrixXd w_in; // N x K
    Eigen::MatrixXd w;    // N x N
    ReservoirConfig config;
};

/** Row t is the state s_t; the first `washout_dropped` states were discarded. */
struct StateSequence {
    Eigen::MatrixXd states; // T x N
    int washout_dropped = 0;

    Eigen::Index size() const { return states.rows(); }
    Eigen::Index width() const { return states.cols(); }
};

/** Principal components of a state cloud, variances in descending order. */
struct PcaModel {
    Eigen::VectorXd mean;       // N
    Eigen::MatrixXd components; // N x d, orthonormal columns
    Eigen::VectorXd explained;  // d, non-increasing
};

/**
 * Dominant eigenvalue modulus by block orthogonal iteration (block size 8,
 * deterministic start). Random recurrent matrices routinely have a complex
 * dominant pair, which defeats single-vector power iteration; a small block
 * with a projected eigensolve handles that case at the same asymptotic cost.
 */
double spectral_radius_estimate(const Eigen::MatrixXd& a, int max_iter = 1000,
                                double tol = 1e-9);

Reservoir init_reservoir(const ReservoirConfig& config);

/**
 * Drive the reservoir over the input: s_t = tanh(w_in * x_t + w * s_{t-1}),
 * starting from `initial_state` (zero by default), dropping the first
 * `washout` states.
 */
StateSequence run(const Reservoir& reservoir, const TimeSeries& input, int washout);
StateSequence run(const Reservoir& reservoir, const TimeSeries& input, int washout,
                  const Eigen::VectorXd& initial_state);

PcaModel pca_fit(const StateSequence& states, int d);
StateSequence pca_transform(const PcaModel& model, const StateSequence& states);

/** Smallest d whose components explain at least `variance_fraction` of the total. */
int pca_auto_dim(const StateSequence& states, double variance_fraction = 0.99);

/** Supervised pairs: row k of x is state k, y[k] is the target h steps ahead. */
struct SupervisedSet {
    Eigen::MatrixXd x; // n x N
    Eigen::VectorXd y; // n
};

SupervisedSet make_supervised(const StateSequence& states, const TimeSeries& targets,
                              int h);

/** Debug export: one row per time step. */
void export_states_csv(const StateSequence& states, const std::string& path);

} // namespace esnuq
