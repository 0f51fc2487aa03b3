#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "esnuq/forecast.hpp"
#include "esnuq/mlp.hpp"
#include "esnuq/rng.hpp"
#include "esnuq/variational.hpp" // PriorSpec, LikelihoodModel

namespace esnuq {

/**
 * An unnormalized log density over an unconstrained vector, with its
 * gradient.  Targets built over constrained parameters fold the
 * change-of-variable terms into value and gradient.
 */
struct LogDensity {
    Eigen::Index dim = 0;
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
};

struct HmcConfig {
    double step_size = 0.0; // <= 0: find a reasonable initial value
    int leapfrog_steps = 32;
    int warmup = 500;
    int samples = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Chain {
    Eigen::MatrixXd samples; // kept draws x dim
    double acceptance_rate = 0.0;
    Eigen::VectorXd ess; // per dimension
    double wall_seconds = 0.0;
    double step_size = 0.0; // adapted value used for the kept phase
    int divergences = 0;    // non-finite proposals, auto-rejected
};

/**
 * Half-kick / drift / half-kick with unit mass, L steps.  Throws if a
 * gradient goes non-finite (the sampler itself uses a no-throw variant
 * that turns the same condition into a rejection).
 */
void leapfrog(Eigen::VectorXd& q, Eigen::VectorXd& p, double step_size,
              int n_steps, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad);

struct StepResult {
    Eigen::VectorXd q;
    bool accepted = false;
    bool divergent = false;
    double delta_h = 0.0;
};

/** One proposal: fresh momentum, leapfrog, Metropolis test min(1, e^{-dH}). */
StepResult hmc_step(const Eigen::VectorXd& q, const LogDensity& target,
                    double step_size, int leapfrog_steps, Rng& rng);

/**
 * Warmup adapts the step size by dual averaging toward 0.8 acceptance
 * (leapfrog count stays fixed); the kept phase records every draw.
 * Aborts if no warmup proposal is ever accepted.  Wall time covers the
 * whole run.
 */
Chain run_chain(const LogDensity& target, const Eigen::VectorXd& init,
                const HmcConfig& cfg);

/**
 * Sampling-efficiency estimate from the initial positive sequence of
 * paired autocovariances, capped at the series length.
 */
double effective_sample_size(const Eigen::VectorXd& series);

/**
 * Posterior over readout weights (+ log observation variance when the noise
 * is learned).  Gaussian weight priors live on the line as-is; uniform
 * priors are reached through a scaled logistic map with its Jacobian.  The
 * observation variance is sampled on the log scale against a flat prior on
 * (0, noise_upper); beyond the bound the density is -infinity and proposals
 * crossing it are rejected.
 */
struct ReadoutTarget {
    LogDensity density;
    LikelihoodModel model;
    Eigen::Index n_params = 0; // readout parameters (excludes the noise coord)

    /** Constrained readout parameters from an unconstrained draw. */
    Eigen::VectorXd decode_params(const Eigen::VectorXd& draw) const;
    /** Observation variance from an unconstrained draw. */
    double decode_noise(const Eigen::VectorXd& draw) const;
};

ReadoutTarget build_readout_target(const Eigen::MatrixXd& states,
                                   const Eigen::VectorXd& targets,
                                   const LikelihoodModel& model);

/**
 * Sparse linear-readout posterior: coefficients with per-coordinate and
 * global shrinkage scales (both half-Cauchy, sampled on the log scale) and
 * a (0,10)-uniform noise scale reached through a scaled logistic map.
 * Layout: [beta (D), log lambda (D), log tau, logit-scaled sigma].
 */
struct SsvsTarget {
    LogDensity density;
    Eigen::Index n_beta = 0;

    Eigen::VectorXd decode_beta(const Eigen::VectorXd& draw) const;
    Eigen::VectorXd decode_lambda(const Eigen::VectorXd& draw) const;
    double decode_tau(const Eigen::VectorXd& draw) const;
    double decode_sigma(const Eigen::VectorXd& draw) const;
};

SsvsTarget build_ssvs_target(const Eigen::MatrixXd& states,
                             const Eigen::VectorXd& targets);

/**
 * Push kept draws through the readout with fresh observation noise per
 * draw; M columns subsample the chain evenly when M differs from the kept
 * count.  Draw j uses the substream derive_seed(seed, j).
 */
EnsembleForecast posterior_predict_chain(const Chain& chain,
                                         const ReadoutTarget& target,
                                         const Eigen::MatrixXd& states,
                                         int m_samples, std::uint64_t seed);

/** Same, for the sparse linear readout (prediction s^T beta). */
EnsembleForecast posterior_predict_ssvs(const Chain& chain,
                                        const SsvsTarget& target,
                                        const Eigen::MatrixXd& states,
                                        int m_samples, std::uint64_t seed);

/** Binary sample matrix + JSON diagnostics (acceptance, ess, wall, config). */
void save_chain(const Chain& chain, const HmcConfig& cfg,
                const std::string& samples_path, const std::string& meta_path);
Chain load_chain(const std::string& samples_path, const std::string& meta_path);

} // namespace esnuq
