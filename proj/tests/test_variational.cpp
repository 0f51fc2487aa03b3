#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

#include "esnuq/variational.hpp"

using namespace esnuq;

namespace {

double softplus_inv(double v) { return std::log(std::expm1(v)); }

LowRankGaussian make_q(const Eigen::VectorXd& mean, const Eigen::MatrixXd& factor,
                       const Eigen::VectorXd& psi_target) {
    LowRankGaussian q;
    q.mean = mean;
    q.factor = factor;
    q.diag_raw.resize(psi_target.size());
    for (Eigen::Index i = 0; i < psi_target.size(); ++i)
        q.diag_raw[i] = softplus_inv(psi_target[i] - 1e-8);
    return q;
}

// Dense-matrix divergence between N(mu_q, cov_q) and N(mu_p, vp*I),
// evaluated with full matrices — the production path never forms cov_q.
double dense_gaussian_kl(const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& cov_q,
                         double prior_mean, double vp) {
    const Eigen::Index n = mu_q.size();
    const double logdet_q =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov_q)
            .eigenvalues()
            .array()
            .log()
            .sum();
    const Eigen::VectorXd diff =
        (mu_q.array() - prior_mean).matrix();
    return 0.5 * (cov_q.trace() / vp + diff.squaredNorm() / vp -
                  static_cast<double>(n) + static_cast<double>(n) * std::log(vp) -
                  logdet_q);
}

struct ConjugateMean {
    Eigen::MatrixXd x;   // zeros: the readout y = w*0 + b reduces to b + noise
    Eigen::VectorXd y;
    double noise = 2.0;  // observation variance, known
    double post_mean_b = 0.0, post_var_b = 0.0, log_evidence = 0.0;
};

// Observations y_t = b + eps with known noise variance and standard-normal
// prior on (w, b).  Everything below is the classic closed form.
ConjugateMean conjugate_mean_problem(int t_rows, double true_b, std::uint64_t seed) {
    ConjugateMean p;
    p.x = Eigen::MatrixXd::Zero(t_rows, 1);
    p.y.resize(t_rows);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int t = 0; t < t_rows; ++t)
        p.y[t] = true_b + std::sqrt(p.noise) * gauss(rng);

    const double t_d = static_cast<double>(t_rows);
    const double precision = t_d / p.noise + 1.0;
    p.post_var_b = 1.0 / precision;
    p.post_mean_b = (p.y.sum() / p.noise) / precision;

    // log evidence of y ~ N(0, noise*I + 1 1^T) via Sherman–Morrison
    const double det = std::pow(p.noise, t_d - 1.0) * (p.noise + t_d);
    const double sum_y = p.y.sum();
    const double quad =
        (p.y.squaredNorm() - sum_y * sum_y / (p.noise + t_d)) / p.noise;
    p.log_evidence = -0.5 * t_d * std::log(2.0 * std::numbers::pi) -
                     0.5 * std::log(det) - 0.5 * quad;
    return p;
}

LikelihoodModel scalar_bias_model(double fixed_noise) {
    LikelihoodModel model;
    model.readout.widths = {1, 1};
    model.prior = PriorSpec::gaussian(0.0, 1.0);
    model.learn_noise = false;
    model.fixed_noise_variance = fixed_noise;
    return model;
}

} // namespace

TEST_CASE("sampling from the low-rank family") {
    SUBCASE("tiny diagonal collapses samples onto the mean") {
        Eigen::VectorXd mean(3);
        mean << 1.0, -2.0, 0.5;
        LowRankGaussian q;
        q.mean = mean;
        q.factor = Eigen::MatrixXd::Zero(3, 2);
        q.diag_raw = Eigen::VectorXd::Constant(3, -40.0); // Psi at its 1e-8 floor
        Rng rng = make_rng(1);
        for (int k = 0; k < 100; ++k) {
            const Eigen::VectorXd s = vi_sample(q, rng);
            CHECK((s - mean).cwiseAbs().maxCoeff() < 1e-3);
        }
    }
    SUBCASE("empirical covariance matches factor*factor^T + diagonal") {
        Eigen::VectorXd mean(4);
        mean << 0.3, -0.1, 0.8, 0.0;
        // Rows chosen so every entry of factor*factor^T + Psi is large next
        // to its ~1/sqrt(M) sampling error at the 5% tolerance below.
        Eigen::MatrixXd factor(4, 2);
        factor << 1.2, 0.3, 1.0, -0.4, 0.8, 0.5, 1.1, 0.2;
        const Eigen::VectorXd psi = Eigen::VectorXd::Constant(4, 0.5);
        const LowRankGaussian q = make_q(mean, factor, psi);
        const Eigen::MatrixXd truth =
            factor * factor.transpose() +
            Eigen::MatrixXd(psi.asDiagonal());

        const int m = 100000;
        Eigen::MatrixXd draws(m, 4);
        Rng rng = make_rng(2);
        for (int k = 0; k < m; ++k) draws.row(k) = vi_sample(q, rng).transpose();
        const Eigen::RowVectorXd emp_mean = draws.colwise().mean();
        const Eigen::MatrixXd centered = draws.rowwise() - emp_mean;
        const Eigen::MatrixXd emp_cov =
            centered.transpose() * centered / static_cast<double>(m - 1);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(std::abs(emp_cov(i, j) - truth(i, j)) <
                      0.05 * std::abs(truth(i, j)));
    }
    SUBCASE("zero factor gives independent coordinates") {
        const Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
        const LowRankGaussian q =
            make_q(mean, Eigen::MatrixXd::Zero(4, 2), Eigen::VectorXd::Ones(4));
        const int m = 100000;
        Eigen::MatrixXd draws(m, 4);
        Rng rng = make_rng(3);
        for (int k = 0; k < m; ++k) draws.row(k) = vi_sample(q, rng).transpose();
        const Eigen::MatrixXd centered =
            draws.rowwise() - draws.colwise().mean().eval();
        const Eigen::MatrixXd emp_cov =
            centered.transpose() * centered / static_cast<double>(m - 1);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (i != j) CHECK(std::abs(emp_cov(i, j)) < 0.02);
    }
}

TEST_CASE("evidence bound at zero data isolates the divergence term") {
    SUBCASE("family equal to the prior diverges by zero") {
        LikelihoodModel model = scalar_bias_model(1.0);
        const LowRankGaussian q = make_q(Eigen::VectorXd::Zero(2),
                                         Eigen::MatrixXd::Zero(2, 2),
                                         Eigen::VectorXd::Ones(2));
        Rng rng = make_rng(4);
        const ElboResult e = elbo(q, 0.0, model, Eigen::MatrixXd::Zero(0, 1),
                                  Eigen::VectorXd(), 5, rng);
        CHECK(std::abs(e.value) < 1e-10);
    }
    SUBCASE("closed-form divergence matches a dense computation") {
        Rng rng = make_rng(5);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        for (int n = 2; n <= 5; ++n) {
            LikelihoodModel model;
            model.readout.widths = {n - 1, 1}; // n-1 weights + 1 bias = n params
            model.prior = PriorSpec::gaussian(0.3, 2.5);
            model.learn_noise = false;
            model.fixed_noise_variance = 1.0;

            Eigen::VectorXd mean(n), psi(n);
            Eigen::MatrixXd factor(n, 2);
            for (int i = 0; i < n; ++i) {
                mean[i] = unit(rng);
                psi[i] = 0.3 + 0.5 * std::abs(unit(rng));
                factor(i, 0) = unit(rng);
                factor(i, 1) = unit(rng);
            }
            const LowRankGaussian q = make_q(mean, factor, psi);
            Rng erng = make_rng(6);
            const ElboResult e =
                elbo(q, 0.0, model, Eigen::MatrixXd::Zero(0, n - 1),
                     Eigen::VectorXd(), 1, erng);
            const Eigen::MatrixXd cov =
                factor * factor.transpose() + Eigen::MatrixXd(q.psi().asDiagonal());
            const double dense = dense_gaussian_kl(mean, cov, 0.3, 2.5);
            CHECK(std::abs(-e.value - dense) < 1e-8);
        }
    }
}

TEST_CASE("evidence bound value on a conjugate model") {
    const ConjugateMean p = conjugate_mean_problem(40, 2.0, 7);
    const LikelihoodModel model = scalar_bias_model(p.noise);
    // params are [w, b]; the exact posterior is diagonal: w keeps its prior
    Eigen::VectorXd mean(2), psi(2);
    mean << 0.0, p.post_mean_b;
    psi << 1.0, p.post_var_b;
    const LowRankGaussian q = make_q(mean, Eigen::MatrixXd::Zero(2, 0), psi);

    const int reps = 20, n_mc = 50;
    std::vector<double> estimates;
    for (int rep = 0; rep < reps; ++rep) {
        Rng rng = make_rng(derive_seed(8, static_cast<std::uint64_t>(rep)));
        estimates.push_back(elbo(q, 0.0, model, p.x, p.y, n_mc, rng).value);
    }
    double mean_est = 0.0;
    for (double v : estimates) mean_est += v;
    mean_est /= reps;
    double var = 0.0;
    for (double v : estimates) var += (v - mean_est) * (v - mean_est);
    const double se = std::sqrt(var / (reps - 1) / reps);
    CHECK(std::abs(mean_est - p.log_evidence) < 3.0 * std::max(se, 1e-12));
}

TEST_CASE("evidence bound gradients match common-random-number differences") {
    LikelihoodModel model;
    model.readout.widths = {2, 4, 1};
    model.learn_noise = true;
    model.noise_upper = 10.0;

    Rng setup = make_rng(9);
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    const int n = static_cast<int>(param_count(model.readout));
    Eigen::MatrixXd x(10, 2);
    Eigen::VectorXd y(10);
    for (int t = 0; t < 10; ++t) {
        x(t, 0) = unit(setup);
        x(t, 1) = unit(setup);
        y[t] = unit(setup);
    }
    Eigen::VectorXd mean(n), psi(n);
    Eigen::MatrixXd factor(n, 3);
    for (int i = 0; i < n; ++i) {
        mean[i] = unit(setup);
        psi[i] = 0.2 + std::abs(unit(setup));
        for (int j = 0; j < 3; ++j) factor(i, j) = unit(setup);
    }
    const double log_noise = std::log(0.7);

    auto eval = [&](const LowRankGaussian& q, double ln) {
        Rng rng = make_rng(10); // identical draws on every call
        return elbo(q, ln, model, x, y, 3, rng);
    };

    for (PriorSpec prior :
         {PriorSpec::gaussian(0.0, 1.0), PriorSpec::uniform(-5.0, 5.0)}) {
        model.prior = prior;
        CAPTURE(prior.to_string());
        const LowRankGaussian q = make_q(mean, factor, psi);
        const ElboResult at = eval(q, log_noise);
        const double h = 1e-6;

        double max_rel = 0.0;
        auto track = [&](double analytic, double lo, double hi) {
            const double fd = (hi - lo) / (2.0 * h);
            max_rel = std::max(max_rel, std::abs(fd - analytic) /
                                            std::max(1e-6, std::abs(analytic)));
        };
        for (int i = 0; i < n; ++i) {
            LowRankGaussian qp = q, qm = q;
            qp.mean[i] += h;
            qm.mean[i] -= h;
            track(at.grad_mean[i], eval(qm, log_noise).value, eval(qp, log_noise).value);
        }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 3; ++j) {
                LowRankGaussian qp = q, qm = q;
                qp.factor(i, j) += h;
                qm.factor(i, j) -= h;
                track(at.grad_factor(i, j), eval(qm, log_noise).value,
                      eval(qp, log_noise).value);
            }
        for (int i = 0; i < n; ++i) {
            LowRankGaussian qp = q, qm = q;
            qp.diag_raw[i] += h;
            qm.diag_raw[i] -= h;
            track(at.grad_diag_raw[i], eval(qm, log_noise).value,
                  eval(qp, log_noise).value);
        }
        track(at.grad_log_noise, eval(q, log_noise - h).value,
              eval(q, log_noise + h).value);
        CHECK(max_rel < 1e-5);
    }
}

TEST_CASE("reparameterized expectation gradient of a quadratic") {
    // E[f(R)] with f(R) = R^T B R + a^T R has mean-gradient 2 B mu + a.
    Eigen::MatrixXd b(3, 3);
    b << 1.0, 0.2, -0.1, 0.2, 0.8, 0.3, -0.1, 0.3, 1.2;
    Eigen::VectorXd a(3);
    a << 0.5, -1.0, 0.25;
    Eigen::VectorXd mean(3);
    mean << 0.4, -0.2, 1.0;
    Eigen::MatrixXd factor(3, 1);
    factor << 0.6, -0.3, 0.2;
    const LowRankGaussian q = make_q(mean, factor, Eigen::VectorXd::Constant(3, 0.4));

    const int m = 20000;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(3);
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(3, m);
    Rng rng = make_rng(11);
    for (int k = 0; k < m; ++k) {
        const Eigen::VectorXd r = vi_sample(q, rng);
        const Eigen::VectorXd g = 2.0 * b * r + a;
        acc += g;
        sq.col(k) = g;
    }
    const Eigen::VectorXd mc = acc / m;
    const Eigen::VectorXd closed = 2.0 * b * mean + a;
    for (int i = 0; i < 3; ++i) {
        double var = 0.0;
        for (int k = 0; k < m; ++k) var += (sq(i, k) - mc[i]) * (sq(i, k) - mc[i]);
        const double se = std::sqrt(var / (m - 1) / m);
        CHECK(std::abs(mc[i] - closed[i]) < 3.0 * std::max(se, 1e-12));
    }
}

TEST_CASE("zero factor reproduces an independent diagonal implementation") {
    const ConjugateMean p = conjugate_mean_problem(15, 1.0, 12);
    const LikelihoodModel model = scalar_bias_model(p.noise);
    Eigen::VectorXd mean(2), psi(2);
    mean << 0.2, 0.7;
    psi << 0.6, 0.3;
    const LowRankGaussian q = make_q(mean, Eigen::MatrixXd::Zero(2, 2), psi);

    const std::uint64_t seed = 13;
    Rng rng = make_rng(seed);
    const double produced = elbo(q, 0.0, model, p.x, p.y, 4, rng).value;

    // Diagonal reference: consume the stream exactly as the production draw
    // does (rank normals first, then coordinate normals), then use the
    // textbook diagonal-Gaussian divergence.
    Rng ref_rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double loglik = 0.0;
    const Eigen::VectorXd psi_actual = q.psi();
    for (int k = 0; k < 4; ++k) {
        gauss(ref_rng);
        gauss(ref_rng); // two unused rank-space normals
        Eigen::VectorXd r(2);
        for (int i = 0; i < 2; ++i)
            r[i] = mean[i] + std::sqrt(psi_actual[i]) * gauss(ref_rng);
        Mlp net{model.readout, r};
        const Eigen::VectorXd pred = forward_batch(net, p.x).col(0);
        loglik += -0.5 * p.y.size() * std::log(2.0 * std::numbers::pi * p.noise) -
                  (p.y - pred).squaredNorm() / (2.0 * p.noise);
    }
    loglik /= 4.0;
    double kl = 0.0;
    for (int i = 0; i < 2; ++i)
        kl += 0.5 * (psi_actual[i] + mean[i] * mean[i] - 1.0 -
                     std::log(psi_actual[i]));
    CHECK(produced == doctest::Approx(loglik - kl).epsilon(1e-12));
}

TEST_CASE("fitting the conjugate model") {
    const ConjugateMean p = conjugate_mean_problem(40, 2.0, 14);
    const LikelihoodModel model = scalar_bias_model(p.noise);
    ViConfig cfg;
    cfg.rank = 0;
    cfg.steps = 6000;
    cfg.learning_rate = 0.005;
    cfg.n_mc = 8;
    cfg.seed = 15;
    const ViResult fit = fit_vi(model, p.x, p.y, cfg);
    const Eigen::VectorXd psi = fit.q.psi();

    SUBCASE("posterior moments for the active coordinate") {
        CHECK(std::abs(fit.q.mean[1] - p.post_mean_b) < 0.02 * std::abs(p.post_mean_b));
        CHECK(std::abs(psi[1] - p.post_var_b) < 0.10 * p.post_var_b);
    }
    SUBCASE("coordinate without likelihood signal keeps its prior") {
        CHECK(std::abs(fit.q.mean[0]) < 0.05);
        CHECK(std::abs(psi[0] - 1.0) < 0.10);
    }
    SUBCASE("smoothed bound trace is non-decreasing") {
        // Window means must not drop by more than their own pooled sampling
        // error — a genuine downward trend dwarfs plateau noise.
        const int window = 200;
        const std::vector<double>& tr = fit.elbo_trace;
        REQUIRE(static_cast<int>(tr.size()) == cfg.steps);
        auto window_stats = [&](std::size_t start, double* mean, double* var) {
            double m = 0.0;
            for (int k = 0; k < window; ++k) m += tr[start + k];
            m /= window;
            double v = 0.0;
            for (int k = 0; k < window; ++k)
                v += (tr[start + k] - m) * (tr[start + k] - m);
            *mean = m;
            *var = v / (window - 1);
        };
        for (std::size_t start = 0; start + 2 * window <= tr.size();
             start += window) {
            double ma, va, mb, vb;
            window_stats(start, &ma, &va);
            window_stats(start + window, &mb, &vb);
            const double slack = 6.0 * std::sqrt((va + vb) / window);
            CHECK(mb >= ma - slack);
        }
    }
    SUBCASE("same seed, same fit") {
        const ViResult again = fit_vi(model, p.x, p.y, cfg);
        CHECK((again.q.mean - fit.q.mean).cwiseAbs().maxCoeff() == 0.0);
        CHECK((again.q.diag_raw - fit.q.diag_raw).cwiseAbs().maxCoeff() == 0.0);
        CHECK(again.log_noise == fit.log_noise);
        REQUIRE(again.elbo_trace.size() == fit.elbo_trace.size());
        for (std::size_t i = 0; i < fit.elbo_trace.size(); ++i)
            CHECK(again.elbo_trace[i] == fit.elbo_trace[i]);
    }
}

TEST_CASE("learned observation noise recovers the generating noise") {
    // y = 0.8*s + noise(0.3); the fitted noise variance should approach 0.3.
    Rng rng = make_rng(16);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int t_rows = 400;
    Eigen::MatrixXd x(t_rows, 1);
    Eigen::VectorXd y(t_rows);
    for (int t = 0; t < t_rows; ++t) {
        x(t, 0) = gauss(rng);
        y[t] = 0.8 * x(t, 0) + std::sqrt(0.3) * gauss(rng);
    }
    LikelihoodModel model;
    model.readout.widths = {1, 1};
    model.prior = PriorSpec::gaussian(0.0, 10.0);
    model.learn_noise = true;
    model.noise_upper = 10.0;
    ViConfig cfg;
    cfg.rank = 0;
    cfg.steps = 4000;
    cfg.learning_rate = 0.01;
    cfg.n_mc = 4;
    cfg.seed = 17;
    const ViResult fit = fit_vi(model, x, y, cfg);
    CHECK(std::exp(fit.log_noise) == doctest::Approx(0.3).epsilon(0.25));
    CHECK(fit.q.mean[0] == doctest::Approx(0.8).epsilon(0.1));
}

TEST_CASE("uniform prior handling") {
    LikelihoodModel model = scalar_bias_model(1.0);
    model.prior = PriorSpec::uniform(0.0, 1.0);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 1);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(4, 0.5);

    SUBCASE("means outside the support are refused") {
        Eigen::VectorXd mean(2), psi(2);
        mean << 1.5, 0.5;
        psi << 0.01, 0.01;
        const LowRankGaussian q = make_q(mean, Eigen::MatrixXd::Zero(2, 0), psi);
        Rng rng = make_rng(18);
        CHECK_THROWS(elbo(q, 0.0, model, x, y, 1, rng));
    }
    SUBCASE("interior means evaluate and fit") {
        ViConfig cfg;
        cfg.rank = 0;
        cfg.steps = 500;
        cfg.learning_rate = 0.005;
        cfg.seed = 19;
        const ViResult fit = fit_vi(model, x, y, cfg);
        CHECK(std::isfinite(fit.elbo_trace.back()));
        CHECK(fit.q.mean[1] > 0.0);
        CHECK(fit.q.mean[1] < 1.0);
    }
}

TEST_CASE("posterior predictive ensembles") {
    LikelihoodModel model;
    model.readout.widths = {1, 3, 1};
    model.learn_noise = false;
    model.fixed_noise_variance = 1e-16;
    const int n = static_cast<int>(param_count(model.readout));

    Rng setup = make_rng(20);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Eigen::VectorXd params(n);
    for (int i = 0; i < n; ++i) params[i] = unit(setup);
    LowRankGaussian q;
    q.mean = params;
    q.factor = Eigen::MatrixXd::Zero(n, 0);
    q.diag_raw = Eigen::VectorXd::Constant(n, -40.0);

    Eigen::MatrixXd states(7, 1);
    for (int t = 0; t < 7; ++t) states(t, 0) = 0.3 * t - 1.0;

    SUBCASE("point-mass posterior with vanishing noise collapses") {
        const EnsembleForecast ens =
            posterior_predict_vi(q, model, 0.0, states, 64, 21);
        CHECK(ens.samples.rows() == 7);
        CHECK(ens.samples.cols() == 64);
        CHECK(ens.source == "vi");
        const Eigen::VectorXd direct =
            forward_batch(Mlp{model.readout, params}, states).col(0);
        for (int j = 0; j < 64; ++j)
            CHECK((ens.samples.col(j) - direct).cwiseAbs().maxCoeff() < 1e-2);
    }
    SUBCASE("observation noise is a variance floor") {
        model.fixed_noise_variance = 0.49;
        const int m = 4000;
        const EnsembleForecast ens =
            posterior_predict_vi(q, model, 0.0, states, m, 22);
        for (int t = 0; t < 7; ++t) {
            const double row_mean = ens.samples.row(t).mean();
            const double var =
                (ens.samples.row(t).array() - row_mean).square().sum() / (m - 1);
            const double mc_err = 0.49 * std::sqrt(2.0 / (m - 1));
            CHECK(var >= 0.49 - 3.0 * mc_err);
        }
    }
}

TEST_CASE("fit save and load round trip") {
    const ConjugateMean p = conjugate_mean_problem(20, 1.0, 23);
    LikelihoodModel model = scalar_bias_model(p.noise);
    ViConfig cfg;
    cfg.steps = 200;
    cfg.seed = 24;
    const ViResult fit = fit_vi(model, p.x, p.y, cfg);

    const auto dir = std::filesystem::temp_directory_path();
    const std::string params = (dir / "vi_params.bin").string();
    const std::string spec = (dir / "vi_spec.json").string();
    save_vi(fit, model, params, spec);
    LikelihoodModel loaded_model;
    const ViResult loaded = load_vi(params, spec, &loaded_model);

    CHECK((loaded.q.mean - fit.q.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.q.factor - fit.q.factor).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.q.diag_raw - fit.q.diag_raw).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded.log_noise == fit.log_noise);
    CHECK(loaded_model.readout.widths == model.readout.widths);
    CHECK(loaded_model.prior.to_string() == model.prior.to_string());
    std::filesystem::remove(params);
    std::filesystem::remove(spec);
}

TEST_CASE("prior parsing") {
    const PriorSpec g = PriorSpec::parse("normal(0,10)");
    CHECK(g.kind == PriorSpec::Kind::gaussian);
    CHECK(g.variance == doctest::Approx(10.0));
    const PriorSpec u = PriorSpec::parse("uniform(0,1)");
    CHECK(u.kind == PriorSpec::Kind::uniform);
    CHECK(u.upper == doctest::Approx(1.0));
    CHECK_THROWS(PriorSpec::parse("cauchy(0,1)"));
    CHECK_THROWS(PriorSpec::uniform(1.0, 1.0));
    CHECK_THROWS(PriorSpec::gaussian(0.0, -1.0));
    CHECK(PriorSpec::parse(g.to_string()).variance == doctest::Approx(10.0));
}
