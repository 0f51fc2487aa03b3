#include "esnuq/variational.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace esnuq {

namespace {

constexpr double kPsiFloor = 1e-8;

double softplus(double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

double sigmoid(double v) {
    return v > 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

struct Draw {
    Eigen::VectorXd r;    // parameter draw
    Eigen::VectorXd phi;  // rank-space normals
    Eigen::VectorXd zeta; // coordinate-space normals
};

// Rank-space normals first, then coordinate-space ones; vi_sample and the
// ELBO estimator must consume the stream identically.
Draw draw_params(const LowRankGaussian& q, const Eigen::VectorXd& psi, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Draw d;
    d.phi.resize(q.rank());
    for (Eigen::Index i = 0; i < d.phi.size(); ++i) d.phi[i] = gauss(rng);
    d.zeta.resize(q.dim());
    for (Eigen::Index i = 0; i < d.zeta.size(); ++i) d.zeta[i] = gauss(rng);
    d.r = q.mean + psi.cwiseSqrt().cwiseProduct(d.zeta);
    if (q.rank() > 0) d.r += q.factor * d.phi;
    return d;
}

struct CovarianceTerms {
    double logdet = 0.0;             // log det (CC^T + Psi)
    Eigen::VectorXd inv_diag;        // diag of (CC^T + Psi)^{-1}
    Eigen::MatrixXd inv_times_factor; // (CC^T + Psi)^{-1} C
};

// Rank-r identities: log det = sum log Psi + log det(I_r + C^T Psi^{-1} C),
// inverse via the Woodbury form, never materializing an N x N matrix.
CovarianceTerms covariance_terms(const LowRankGaussian& q,
                                 const Eigen::VectorXd& psi) {
    CovarianceTerms out;
    const Eigen::VectorXd inv_psi = psi.cwiseInverse();
    out.logdet = psi.array().log().sum();
    if (q.rank() == 0) {
        out.inv_diag = inv_psi;
        out.inv_times_factor.resize(q.dim(), 0);
        return out;
    }
    const Eigen::MatrixXd psi_inv_c = inv_psi.asDiagonal() * q.factor;
    Eigen::MatrixXd small = Eigen::MatrixXd::Identity(q.rank(), q.rank());
    small.noalias() += q.factor.transpose() * psi_inv_c;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(small);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("low-rank covariance factorization failed");
    out.logdet += ldlt.vectorD().array().log().sum();
    out.inv_times_factor =
        ldlt.solve(psi_inv_c.transpose()).transpose(); // Psi^{-1} C A^{-1}
    out.inv_diag =
        inv_psi - psi_inv_c.cwiseProduct(out.inv_times_factor).rowwise().sum();
    return out;
}

} // namespace

void PriorSpec::validate() const {
    if (kind == Kind::gaussian) {
        if (!(variance > 0.0)) throw std::invalid_argument("prior variance must be positive");
    } else {
        if (!(upper > lower)) throw std::invalid_argument("prior support must be non-empty");
    }
}

PriorSpec PriorSpec::gaussian(double mean, double variance) {
    PriorSpec p;
    p.kind = Kind::gaussian;
    p.mean = mean;
    p.variance = variance;
    p.validate();
    return p;
}

PriorSpec PriorSpec::uniform(double lower, double upper) {
    PriorSpec p;
    p.kind = Kind::uniform;
    p.lower = lower;
    p.upper = upper;
    p.validate();
    return p;
}

PriorSpec PriorSpec::parse(const std::string& text) {
    double a = 0.0, b = 0.0;
    if (std::sscanf(text.c_str(), "normal(%lf,%lf)", &a, &b) == 2)
        return gaussian(a, b);
    if (std::sscanf(text.c_str(), "uniform(%lf,%lf)", &a, &b) == 2)
        return uniform(a, b);
    throw std::invalid_argument("cannot parse prior '" + text +
                                "'; expected normal(m,v) or uniform(lo,hi)");
}

std::string PriorSpec::to_string() const {
    char buf[64];
    if (kind == Kind::gaussian)
        std::snprintf(buf, sizeof buf, "normal(%g,%g)", mean, variance);
    else
        std::snprintf(buf, sizeof buf, "uniform(%g,%g)", lower, upper);
    return buf;
}

Eigen::VectorXd LowRankGaussian::psi() const {
    Eigen::VectorXd out(diag_raw.size());
    for (Eigen::Index i = 0; i < out.size(); ++i)
        out[i] = softplus(diag_raw[i]) + kPsiFloor;
    return out;
}

void LowRankGaussian::validate() const {
    if (mean.size() == 0) throw std::invalid_argument("empty variational mean");
    if (diag_raw.size() != mean.size())
        throw std::invalid_argument("diagonal size does not match the mean");
    if (factor.size() > 0 && factor.rows() != mean.size())
        throw std::invalid_argument("factor rows do not match the mean");
}

Eigen::VectorXd vi_sample(const LowRankGaussian& q, Rng& rng) {
    return draw_params(q, q.psi(), rng).r;
}

void LikelihoodModel::validate() const {
    readout.validate();
    if (readout.widths.back() != 1)
        throw std::invalid_argument("Bayesian readouts need a scalar output");
    prior.validate();
    if (!(noise_upper > 0.0))
        throw std::invalid_argument("observation-noise upper bound must be positive");
    if (!learn_noise && !(fixed_noise_variance > 0.0))
        throw std::invalid_argument("fixed observation noise must be positive");
}

void ViConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("need at least one step");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (n_mc < 1) throw std::invalid_argument("n_mc must be at least 1");
}

ElboResult elbo(const LowRankGaussian& q, double log_noise,
                const LikelihoodModel& model, const Eigen::MatrixXd& x,
                const Eigen::VectorXd& y, int n_mc, Rng& rng) {
    model.validate();
    q.validate();
    if (n_mc < 1) throw std::invalid_argument("n_mc must be at least 1");
    if (x.rows() != y.size()) throw std::invalid_argument("state/target row mismatch");
    const Eigen::Index n = q.dim();
    if (static_cast<std::size_t>(n) != param_count(model.readout))
        throw std::invalid_argument("variational dimension does not match the readout");

    const double noise =
        model.learn_noise ? std::exp(log_noise) : model.fixed_noise_variance;
    const double t_rows = static_cast<double>(x.rows());
    const Eigen::VectorXd psi = q.psi();
    Eigen::VectorXd dpsi(n); // softplus'(d) = sigmoid(d)
    for (Eigen::Index i = 0; i < n; ++i) dpsi[i] = sigmoid(q.diag_raw[i]);

    ElboResult out;
    out.grad_mean = Eigen::VectorXd::Zero(n);
    out.grad_factor = Eigen::MatrixXd::Zero(n, q.rank());
    out.grad_diag_raw = Eigen::VectorXd::Zero(n);

    // Reparameterized expected log-likelihood (zero rows: no data term).
    double mean_loglik = 0.0, mean_mse = 0.0;
    Mlp net{model.readout, Eigen::VectorXd()};
    if (x.rows() > 0) {
        for (int k = 0; k < n_mc; ++k) {
            const Draw d = draw_params(q, psi, rng);
            net.params = d.r;
            double mse = 0.0;
            const Eigen::VectorXd g_mse = gradient(net, x, y, MseLoss{}, nullptr, &mse);
            mean_mse += mse;
            mean_loglik += -0.5 * t_rows * std::log(2.0 * std::numbers::pi * noise) -
                           t_rows * mse / (2.0 * noise);
            const Eigen::VectorXd g = -t_rows / (2.0 * noise) * g_mse; // dloglik/dR
            out.grad_mean += g;
            if (q.rank() > 0) out.grad_factor += g * d.phi.transpose();
            out.grad_diag_raw += g.cwiseProduct(d.zeta)
                                     .cwiseProduct(dpsi)
                                     .cwiseQuotient(2.0 * psi.cwiseSqrt());
        }
        mean_loglik /= n_mc;
        mean_mse /= n_mc;
        out.grad_mean /= n_mc;
        out.grad_factor /= n_mc;
        out.grad_diag_raw /= n_mc;
    }
    out.value = mean_loglik;
    if (model.learn_noise) {
        out.grad_log_noise = -0.5 * t_rows + t_rows * mean_mse / (2.0 * noise);
        out.value += -std::log(model.noise_upper); // flat noise prior inside support
    }

    const CovarianceTerms cov = covariance_terms(q, psi);
    if (model.prior.kind == PriorSpec::Kind::gaussian) {
        const double vp = model.prior.variance;
        const double trace = psi.sum() + q.factor.squaredNorm();
        const Eigen::VectorXd centered =
            (q.mean.array() - model.prior.mean).matrix();
        const double kl = 0.5 * (trace / vp + centered.squaredNorm() / vp -
                                 static_cast<double>(n) +
                                 static_cast<double>(n) * std::log(vp) - cov.logdet);
        out.value -= kl;
        out.grad_mean -= centered / vp;
        if (q.rank() > 0)
            out.grad_factor -= q.factor / vp - cov.inv_times_factor;
        const Eigen::VectorXd kl_dpsi =
            0.5 * (Eigen::VectorXd::Constant(n, 1.0 / vp) - cov.inv_diag);
        out.grad_diag_raw -= kl_dpsi.cwiseProduct(dpsi);
    } else {
        for (Eigen::Index i = 0; i < n; ++i)
            if (q.mean[i] < model.prior.lower || q.mean[i] > model.prior.upper)
                throw std::runtime_error(
                    "variational mean left the uniform prior support at coordinate " +
                    std::to_string(i));
        const double width = model.prior.upper - model.prior.lower;
        const double entropy =
            0.5 * (static_cast<double>(n) *
                       std::log(2.0 * std::numbers::pi * std::numbers::e) +
                   cov.logdet);
        out.value += entropy - static_cast<double>(n) * std::log(width);
        if (q.rank() > 0) out.grad_factor += cov.inv_times_factor;
        out.grad_diag_raw += (0.5 * cov.inv_diag).cwiseProduct(dpsi);
    }
    return out;
}

ViResult fit_vi(const LikelihoodModel& model, const Eigen::MatrixXd& x,
                const Eigen::VectorXd& y, const ViConfig& cfg) {
    model.validate();
    cfg.validate();
    const Eigen::Index n = static_cast<Eigen::Index>(param_count(model.readout));
    const Eigen::Index r =
        cfg.rank < 0
            ? static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n))))
            : cfg.rank;

    Rng rng = make_rng(derive_seed(cfg.seed, 0xB1));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    ViResult fit;
    fit.q.mean.resize(n);
    const bool uniform = model.prior.kind == PriorSpec::Kind::uniform;
    const double center =
        uniform ? 0.5 * (model.prior.lower + model.prior.upper) : model.prior.mean;
    const double jitter =
        uniform ? 0.05 * (model.prior.upper - model.prior.lower) : 0.05;
    for (Eigen::Index i = 0; i < n; ++i) fit.q.mean[i] = center + jitter * unit(rng);
    fit.q.factor = Eigen::MatrixXd::Zero(n, r);
    fit.q.diag_raw =
        Eigen::VectorXd::Constant(n, std::log(std::expm1(1e-2 - kPsiFloor)));
    fit.log_noise = model.learn_noise
                        ? std::log(std::min(0.1, 0.5 * model.noise_upper))
                        : std::log(model.fixed_noise_variance);

    const Eigen::Index total = n + n * r + n + 1;
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(total);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(total);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double log_noise_cap = std::log(model.noise_upper) - 1e-9;

    fit.elbo_trace.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        const ElboResult e =
            elbo(fit.q, fit.log_noise, model, x, y, cfg.n_mc, rng);
        if (!std::isfinite(e.value))
            throw std::runtime_error("variational fit diverged: non-finite bound at step " +
                                     std::to_string(step));
        fit.elbo_trace.push_back(e.value);

        Eigen::VectorXd grad(total);
        grad.segment(0, n) = e.grad_mean;
        if (r > 0)
            grad.segment(n, n * r) =
                Eigen::Map<const Eigen::VectorXd>(e.grad_factor.data(), n * r);
        grad.segment(n + n * r, n) = e.grad_diag_raw;
        grad[total - 1] = model.learn_noise ? e.grad_log_noise : 0.0;

        m1 = b1 * m1 + (1.0 - b1) * grad;
        m2 = b2 * m2 + (1.0 - b2) * grad.cwiseProduct(grad);
        const double corr1 = 1.0 - std::pow(b1, step + 1);
        const double corr2 = 1.0 - std::pow(b2, step + 1);
        const Eigen::VectorXd denom =
            (m2 / corr2).cwiseSqrt() + Eigen::VectorXd::Constant(total, eps);
        const Eigen::VectorXd update =
            (cfg.learning_rate / corr1) * m1.cwiseQuotient(denom);

        fit.q.mean += update.segment(0, n);
        if (r > 0)
            fit.q.factor +=
                Eigen::Map<const Eigen::MatrixXd>(update.segment(n, n * r).data(), n, r);
        fit.q.diag_raw += update.segment(n + n * r, n);
        if (model.learn_noise) {
            fit.log_noise += update[total - 1];
            if (fit.log_noise > log_noise_cap) {
                fit.log_noise = log_noise_cap;
                ++fit.noise_clips;
            }
        }
    }
    return fit;
}

EnsembleForecast posterior_predict_vi(const LowRankGaussian& q,
                                      const LikelihoodModel& model,
                                      double log_noise,
                                      const Eigen::MatrixXd& states,
                                      int m_samples, std::uint64_t seed) {
    model.validate();
    q.validate();
    if (m_samples < 1) throw std::invalid_argument("need at least one draw");
    const double noise =
        model.learn_noise ? std::exp(log_noise) : model.fixed_noise_variance;
    const double sd = std::sqrt(noise);

    EnsembleForecast out;
    out.samples.resize(states.rows(), m_samples);
    out.source = "vi";
    Mlp net{model.readout, Eigen::VectorXd()};
    for (int j = 0; j < m_samples; ++j) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
        net.params = vi_sample(q, rng);
        Eigen::VectorXd pred = forward_batch(net, states).col(0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Eigen::Index t = 0; t < pred.size(); ++t) pred[t] += sd * gauss(rng);
        out.samples.col(j) = pred;
    }
    return out;
}

void save_vi(const ViResult& fit, const LikelihoodModel& model,
             const std::string& params_path, const std::string& spec_path) {
    std::ofstream bin(params_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + params_path);
    auto dump = [&bin](const double* data, std::size_t count) {
        bin.write(reinterpret_cast<const char*>(data),
                  static_cast<std::streamsize>(sizeof(double) * count));
    };
    dump(fit.q.mean.data(), static_cast<std::size_t>(fit.q.mean.size()));
    dump(fit.q.factor.data(), static_cast<std::size_t>(fit.q.factor.size()));
    dump(fit.q.diag_raw.data(), static_cast<std::size_t>(fit.q.diag_raw.size()));
    dump(&fit.log_noise, 1);

    nlohmann::json spec;
    spec["dim"] = fit.q.dim();
    spec["rank"] = fit.q.rank();
    spec["prior"] = model.prior.to_string();
    spec["noise_upper"] = model.noise_upper;
    spec["learn_noise"] = model.learn_noise;
    spec["fixed_noise_variance"] = model.fixed_noise_variance;
    spec["widths"] = model.readout.widths;
    spec["activation"] = to_string(model.readout.activation);
    spec["noise_clips"] = fit.noise_clips;
    std::ofstream js(spec_path);
    if (!js) throw std::runtime_error("cannot write " + spec_path);
    js << spec.dump(2) << '\n';
}

ViResult load_vi(const std::string& params_path, const std::string& spec_path,
                 LikelihoodModel* model_out) {
    std::ifstream js(spec_path);
    if (!js) throw std::runtime_error("cannot read " + spec_path);
    nlohmann::json spec = nlohmann::json::parse(js);
    const Eigen::Index n = spec.at("dim").get<Eigen::Index>();
    const Eigen::Index r = spec.at("rank").get<Eigen::Index>();

    ViResult fit;
    fit.q.mean.resize(n);
    fit.q.factor.resize(n, r);
    fit.q.diag_raw.resize(n);
    fit.noise_clips = spec.at("noise_clips").get<int>();
    std::ifstream bin(params_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot read " + params_path);
    auto slurp = [&bin, &params_path](double* data, std::size_t count) {
        bin.read(reinterpret_cast<char*>(data),
                 static_cast<std::streamsize>(sizeof(double) * count));
        if (static_cast<std::size_t>(bin.gcount()) != sizeof(double) * count)
            throw std::runtime_error(params_path + " is shorter than its sidecar requires");
    };
    slurp(fit.q.mean.data(), static_cast<std::size_t>(n));
    slurp(fit.q.factor.data(), static_cast<std::size_t>(n * r));
    slurp(fit.q.diag_raw.data(), static_cast<std::size_t>(n));
    slurp(&fit.log_noise, 1);

    if (model_out) {
        model_out->readout.widths = spec.at("widths").get<std::vector<int>>();
        model_out->readout.activation =
            activation_from_string(spec.at("activation").get<std::string>());
        model_out->prior = PriorSpec::parse(spec.at("prior").get<std::string>());
        model_out->noise_upper = spec.at("noise_upper").get<double>();
        model_out->learn_noise = spec.at("learn_noise").get<bool>();
        model_out->fixed_noise_variance = spec.at("fixed_noise_variance").get<double>();
        model_out->validate();
    }
    return fit;
}

} // namespace esnuq
