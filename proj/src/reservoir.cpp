#include "esnuq/reservoir.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "esnuq/rng.hpp"

namespace esnuq {

void ReservoirConfig::validate() const {
    if (n_units < 1) throw std::invalid_argument("reservoir needs at least one unit");
    if (input_dim < 1) throw std::invalid_argument("input dimension must be >= 1");
    if (!(spectral_radius > 0.0 && spectral_radius < 1.0))
        throw std::invalid_argument("spectral radius must lie in (0,1)");
    if (!(density > 0.0 && density <= 1.0))
        throw std::invalid_argument("density must lie in (0,1]");
    if (!(input_scale > 0.0))
        throw std::invalid_argument("input scale must be positive");
}

double spectral_radius_estimate(const Eigen::MatrixXd& a, int max_iter, double tol) {
    const Eigen::Index n = a.rows();
    if (n != a.cols()) throw std::invalid_argument("matrix must be square");
    if (n == 0) throw std::invalid_argument("empty matrix");
    if (n == 1) return std::abs(a(0, 0));

    const Eigen::Index b = std::min<Eigen::Index>(8, n);
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, b);
    double rho_prev = -1.0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::MatrixXd z = a * q;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
        q = qr.householderQ() * Eigen::MatrixXd::Identity(n, b);
        // Ritz values of the projected block give the dominant moduli.
        Eigen::MatrixXd small = q.transpose() * (a * q);
        Eigen::EigenSolver<Eigen::MatrixXd> es(small, /*computeEigenvectors=*/false);
        const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
        if (rho_prev >= 0.0 && std::abs(rho - rho_prev) <= tol * std::max(1.0, rho))
            return rho;
        rho_prev = rho;
    }
    return rho_prev;
}

Reservoir init_reservoir(const ReservoirConfig& config) {
    config.validate();
    const Eigen::Index n = config.n_units;
    const Eigen::Index k = config.input_dim;

    Rng rng = make_rng(config.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    Reservoir res;
    res.config = config;
    res.w_in.resize(n, k);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
            res.w_in(i, j) = config.input_scale * unit(rng);

    res.w.resize(n, n);
    bool any_nonzero = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double value = unit(rng);
            const bool keep = coin(rng) < config.density;
            res.w(i, j) = keep ? value : 0.0;
            any_nonzero = any_nonzero || (keep && value != 0.0);
        }
    }
    if (!any_nonzero)
        throw std::runtime_error(
            "recurrent matrix is all zero after sparsification; increase density "
            "or reservoir size");

    const double rho = spectral_radius_estimate(res.w);
    if (!(rho > 1e-12))
        throw std::runtime_error(
            "recurrent matrix has (numerically) zero spectral radius; cannot "
            "rescale to the requested value");
    res.w *= config.spectral_radius / rho;
    return res;
}

StateSequence run(const Reservoir& reservoir, const TimeSeries& input, int washout) {
    return run(reservoir, input, washout,
               Eigen::VectorXd::Zero(reservoir.config.n_units));
}

StateSequence run(const Reservoir& reservoir, const TimeSeries& input, int washout,
                  const Eigen::VectorXd& initial_state) {
    if (reservoir.config.input_dim != 1)
        throw std::invalid_argument("time-series driving requires a 1-dimensional input");
    if (washout < 0) throw std::invalid_argument("washout must be non-negative");
    const auto t_total = static_cast<Eigen::Index>(input.size());
    if (t_total <= washout)
        throw std::invalid_argument("input must be longer than the washout");
    const Eigen::Index n = reservoir.config.n_units;
    if (initial_state.size() != n)
        throw std::invalid_argument("initial state has wrong dimension");

    StateSequence out;
    out.washout_dropped = washout;
    out.states.resize(t_total - washout, n);
    Eigen::VectorXd s = initial_state;
    for (Eigen::Index t = 0; t < t_total; ++t) {
        s = (reservoir.w_in.col(0) * input.values[static_cast<std::size_t>(t)] +
             reservoir.w * s)
                .array()
                .tanh();
        if (t >= washout) out.states.row(t - washout) = s;
    }
    return out;
}

namespace {

// Eigen-decomposition of the sample covariance of the states, eigenvalues
// in descending order.
void state_covariance_eig(const StateSequence& states, Eigen::VectorXd* mean,
                          Eigen::VectorXd* eigenvalues, Eigen::MatrixXd* eigenvectors) {
    const Eigen::Index t = states.size();
    if (t < 2) throw std::invalid_argument("need at least 2 states for PCA");
    *mean = states.states.colwise().mean();
    Eigen::MatrixXd centered = states.states.rowwise() - mean->transpose();
    Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(t - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("covariance eigendecomposition failed");
    // Eigen returns ascending order; flip to descending.
    *eigenvalues = es.eigenvalues().reverse();
    *eigenvectors = es.eigenvectors().rowwise().reverse();
}

} // namespace

PcaModel pca_fit(const StateSequence& states, int d) {
    const Eigen::Index n = states.width();
    if (d < 1 || d > n) throw std::invalid_argument("PCA dimension out of range");
    Eigen::VectorXd mean, eigenvalues;
    Eigen::MatrixXd eigenvectors;
    state_covariance_eig(states, &mean, &eigenvalues, &eigenvectors);
    PcaModel model;
    model.mean = mean;
    model.components = eigenvectors.leftCols(d);
    model.explained = eigenvalues.head(d);
    return model;
}

StateSequence pca_transform(const PcaModel& model, const StateSequence& states) {
    if (states.width() != model.mean.size())
        throw std::invalid_argument("state width does not match PCA model");
    StateSequence out;
    out.washout_dropped = states.washout_dropped;
    out.states =
        (states.states.rowwise() - model.mean.transpose()) * model.components;
    return out;
}

int pca_auto_dim(const StateSequence& states, double variance_fraction) {
    if (!(variance_fraction > 0.0 && variance_fraction <= 1.0))
        throw std::invalid_argument("variance fraction must lie in (0,1]");
    Eigen::VectorXd mean, eigenvalues;
    Eigen::MatrixXd eigenvectors;
    state_covariance_eig(states, &mean, &eigenvalues, &eigenvectors);
    const double total = eigenvalues.sum();
    if (!(total > 0.0)) return 1;
    double cum = 0.0;
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
        cum += eigenvalues[i];
        if (cum / total >= variance_fraction) return static_cast<int>(i + 1);
    }
    return static_cast<int>(eigenvalues.size());
}

SupervisedSet make_supervised(const StateSequence& states, const TimeSeries& targets,
                              int h) {
    if (h < 1) throw std::invalid_argument("forecast horizon must be >= 1");
    const auto usable = std::min<Eigen::Index>(
        states.size(), static_cast<Eigen::Index>(targets.size()));
    if (usable <= h)
        throw std::invalid_argument("horizon leaves no usable supervised pairs");
    const Eigen::Index n_pairs = usable - h;
    SupervisedSet out;
    out.x = states.states.topRows(n_pairs);
    out.y.resize(n_pairs);
    for (Eigen::Index k = 0; k < n_pairs; ++k)
        out.y[k] = targets.values[static_cast<std::size_t>(k + h)];
    return out;
}

void export_states_csv(const StateSequence& states, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (Eigen::Index t = 0; t < states.size(); ++t) {
        for (Eigen::Index j = 0; j < states.width(); ++j) {
            if (j) out << ',';
            out << states.states(t, j);
        }
        out << '\n';
    }
}

} // namespace esnuq
