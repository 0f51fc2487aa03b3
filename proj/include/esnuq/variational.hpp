#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "esnuq/forecast.hpp"
#include "esnuq/mlp.hpp"
#include "esnuq/rng.hpp"

namespace esnuq {

/**
 * Weight prior for the Bayesian readouts.  Gaussian priors are parameterized
 * by mean and variance; uniform priors by their support bounds.
 */
struct PriorSpec {
    enum class Kind { gaussian, uniform };
    Kind kind = Kind::gaussian;
    double mean = 0.0;     // gaussian only
    double variance = 1.0; // gaussian only
    double lower = 0.0;    // uniform only
    double upper = 1.0;    // uniform only

    void validate() const;
    static PriorSpec gaussian(double mean, double variance);
    static PriorSpec uniform(double lower, double upper);
    /** Accepts "normal(m,v)" and "uniform(lo,hi)". */
    static PriorSpec parse(const std::string& text);
    std::string to_string() const;
};

/**
 * Gaussian over the flat readout parameters with covariance C*C^T + Psi,
 * where Psi is diagonal and positive by construction: each entry is
 * softplus(diag_raw) + 1e-8, so unconstrained gradient steps cannot leave
 * the SPD cone.  factor with zero columns (rank 0) or all-zero entries
 * reduces the family to an independent-coordinate Gaussian.
 */
struct LowRankGaussian {
    Eigen::VectorXd mean;     // N
    Eigen::MatrixXd factor;   // N x r
    Eigen::VectorXd diag_raw; // N, unconstrained

    Eigen::Index dim() const { return mean.size(); }
    Eigen::Index rank() const { return factor.cols(); }
    Eigen::VectorXd psi() const;
    void validate() const;
};

/**
 * One draw: mean + factor*phi + sqrt(Psi)*zeta with phi, zeta standard
 * normal.  The rank-r normals are consumed first, then the N diagonal ones.
 */
Eigen::VectorXd vi_sample(const LowRankGaussian& q, Rng& rng);

/**
 * Readout plus observation model: predictions get independent Gaussian noise
 * with variance noise_variance.  The noise variance is a learned scalar
 * (log-parameterized) kept inside its (0, noise_upper) support by clipping,
 * or held fixed when learn_noise is false.
 */
struct LikelihoodModel {
    MlpSpec readout;
    PriorSpec prior;
    double noise_upper = 10.0;
    bool learn_noise = true;
    double fixed_noise_variance = 1.0; // used when !learn_noise

    void validate() const;
};

struct ElboResult {
    double value = 0.0;
    Eigen::VectorXd grad_mean;
    Eigen::MatrixXd grad_factor;
    Eigen::VectorXd grad_diag_raw;
    double grad_log_noise = 0.0;
};

/**
 * Monte Carlo evidence bound: reparameterized expected log-likelihood over
 * n_mc draws minus the divergence from the prior.  Gaussian priors use the
 * closed-form divergence (determinant-lemma log-det, rank-r inversion);
 * uniform priors use the relaxed bound  E[loglik] + entropy(q) - N*log(width)
 * and refuse to evaluate once the variational mean leaves the support.
 * Gradients cover (mean, factor, diag_raw, log noise).
 */
ElboResult elbo(const LowRankGaussian& q, double log_noise,
                const LikelihoodModel& model, const Eigen::MatrixXd& x,
                const Eigen::VectorXd& y, int n_mc, Rng& rng);

struct ViConfig {
    int rank = -1; // -1: round(sqrt(N))
    int steps = 2000;
    double learning_rate = 1e-2;
    int n_mc = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ViResult {
    LowRankGaussian q;
    double log_noise = 0.0;
    std::vector<double> elbo_trace;
    int noise_clips = 0; // times the noise variance hit its support bound
};

/** Adam ascent on the evidence bound; deterministic in the seed. */
ViResult fit_vi(const LikelihoodModel& model, const Eigen::MatrixXd& x,
                const Eigen::VectorXd& y, const ViConfig& cfg);

/**
 * M readout draws pushed through the network, each with fresh observation
 * noise; draw j uses the substream derive_seed(seed, j).
 */
EnsembleForecast posterior_predict_vi(const LowRankGaussian& q,
                                      const LikelihoodModel& model,
                                      double log_noise,
                                      const Eigen::MatrixXd& states,
                                      int m_samples, std::uint64_t seed);

/** Flat binary dump of (mean, factor, diag_raw, log noise) + JSON sidecar. */
void save_vi(const ViResult& fit, const LikelihoodModel& model,
             const std::string& params_path, const std::string& spec_path);
ViResult load_vi(const std::string& params_path, const std::string& spec_path,
                 LikelihoodModel* model_out = nullptr);

} // namespace esnuq
