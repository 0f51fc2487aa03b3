#include "esnuq/mc_dropout.hpp"

#include <stdexcept>

#include "esnuq/rng.hpp"

namespace esnuq {

EnsembleForecast predict_mc_dropout(const Mlp& mlp, const Eigen::MatrixXd& states,
                                    double keep_prob, int m_samples,
                                    std::uint64_t seed) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
        throw std::invalid_argument("keep probability must lie in (0,1]");
    if (m_samples < 1) throw std::invalid_argument("need at least one sample");
    if (mlp.spec.widths.back() != 1)
        throw std::invalid_argument("dropout sampling expects a scalar readout");

    EnsembleForecast out;
    out.source = "dropout";
    out.samples.resize(states.rows(), m_samples);
    for (int j = 0; j < m_samples; ++j) {
        // One mask row per state: every (state, sample) pair gets its own mask.
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
        const DropoutMasks masks =
            sample_masks(mlp.spec, keep_prob, rng, states.rows());
        out.samples.col(j) = forward_batch(mlp, states, &masks).col(0);
    }
    return out;
}

} // namespace esnuq
