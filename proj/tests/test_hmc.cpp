#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <vector>

#include "esnuq/hmc.hpp"
#include "esnuq/mlp.hpp"
#include "esnuq/rng.hpp"
#include "esnuq/variational.hpp"

using namespace esnuq;

namespace {

double std_normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// Smooth non-quadratic coupled 2-D density used by the integrator tests.
LogDensity coupled_quartic() {
    LogDensity d;
    d.dim = 2;
    d.value = [](const Eigen::VectorXd& q) {
        return -0.25 * std::pow(q[0], 4) - 0.5 * q[1] * q[1] -
               0.5 * std::sin(q[0]) * q[1];
    };
    d.gradient = [](const Eigen::VectorXd& q) {
        Eigen::VectorXd g(2);
        g[0] = -std::pow(q[0], 3) - 0.5 * std::cos(q[0]) * q[1];
        g[1] = -q[1] - 0.5 * std::sin(q[0]);
        return g;
    };
    return d;
}

LogDensity standard_normal(Eigen::Index dim) {
    LogDensity d;
    d.dim = dim;
    d.value = [](const Eigen::VectorXd& q) { return -0.5 * q.squaredNorm(); };
    d.gradient = [](const Eigen::VectorXd& q) { return Eigen::VectorXd(-q); };
    return d;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols,
                              std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = gauss(rng);
    return m;
}

// Central-difference gradient of a log density.
Eigen::VectorXd fd_gradient(const LogDensity& d, const Eigen::VectorXd& x,
                            double h) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd hi = x, lo = x;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (d.value(hi) - d.value(lo)) / (2.0 * h);
    }
    return g;
}

void check_gradient_matches(const LogDensity& d, const Eigen::VectorXd& x) {
    const Eigen::VectorXd an = d.gradient(x);
    const Eigen::VectorXd fd = fd_gradient(d, x, 1e-6);
    REQUIRE(an.allFinite());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double rel =
            std::abs(an[i] - fd[i]) / std::max(1e-6, std::abs(an[i]));
        CHECK(rel < 1e-5);
    }
}

} // namespace

TEST_CASE("leapfrog retraces its path when momentum is negated") {
    const LogDensity d = coupled_quartic();
    Eigen::VectorXd q0(2), p0(2);
    q0 << 0.7, -1.2;
    p0 << 0.3, 0.9;
    Eigen::VectorXd q = q0, p = p0;
    leapfrog(q, p, 0.05, 50, d.gradient);
    p = -p;
    leapfrog(q, p, 0.05, 50, d.gradient);
    p = -p;
    CHECK((q - q0).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((p - p0).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("leapfrog nearly conserves energy at small step sizes") {
    const LogDensity d = standard_normal(1);
    Eigen::VectorXd q(1), p(1);
    q << 1.1;
    p << 0.4;
    const double h0 = -d.value(q) + 0.5 * p.squaredNorm();
    leapfrog(q, p, 0.01, 100, d.gradient);
    const double h1 = -d.value(q) + 0.5 * p.squaredNorm();
    CHECK(std::abs(h1 - h0) < 1e-4);
}

TEST_CASE("leapfrog step-size zero is the identity and bad counts throw") {
    const LogDensity d = coupled_quartic();
    Eigen::VectorXd q(2), p(2);
    q << 0.4, -0.2;
    p << 1.0, 0.5;
    const Eigen::VectorXd q0 = q, p0 = p;
    leapfrog(q, p, 0.0, 1, d.gradient);
    CHECK(q == q0);
    CHECK(p == p0);
    CHECK_THROWS_AS(leapfrog(q, p, 0.1, 0, d.gradient), std::invalid_argument);
}

TEST_CASE("leapfrog preserves phase-space volume") {
    const LogDensity d = coupled_quartic();
    Eigen::VectorXd z0(4);
    z0 << 0.5, -0.8, 0.6, 0.2; // (q, p)
    auto flow = [&](const Eigen::VectorXd& z) {
        Eigen::VectorXd q = z.head(2), p = z.tail(2);
        leapfrog(q, p, 0.1, 3, d.gradient);
        Eigen::VectorXd out(4);
        out << q, p;
        return out;
    };
    const double h = 1e-5;
    Eigen::MatrixXd jac(4, 4);
    for (int j = 0; j < 4; ++j) {
        Eigen::VectorXd hi = z0, lo = z0;
        hi[j] += h;
        lo[j] -= h;
        jac.col(j) = (flow(hi) - flow(lo)) / (2.0 * h);
    }
    CHECK(std::abs(jac.determinant() - 1.0) < 1e-6);
}

TEST_CASE("leapfrog throws when a gradient goes non-finite") {
    Eigen::VectorXd q(1), p(1);
    q << 0.0;
    p << 1.0;
    auto bad = [](const Eigen::VectorXd&) {
        return Eigen::VectorXd::Constant(1, std::nan("")).eval();
    };
    CHECK_THROWS_AS(leapfrog(q, p, 0.1, 3, bad), std::runtime_error);
}

TEST_CASE("proposals that lower the energy are always accepted") {
    const LogDensity d = standard_normal(2);
    Rng rng = make_rng(404);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(2);
    int downhill = 0, uphill = 0;
    for (int i = 0; i < 300; ++i) {
        const StepResult step = hmc_step(q, d, 0.9, 8, rng);
        if (step.delta_h <= 0.0) {
            CHECK(step.accepted);
            ++downhill;
        } else {
            ++uphill;
        }
        q = step.q;
    }
    CHECK(downhill > 20);
    CHECK(uphill > 20);
}

TEST_CASE("oversized steps are almost never accepted") {
    const LogDensity d = standard_normal(1);
    Rng rng = make_rng(11);
    Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 0.5);
    int accepts = 0;
    for (int i = 0; i < 500; ++i) {
        const StepResult step = hmc_step(q, d, 10.0, 10, rng);
        if (step.accepted) ++accepts;
        q = step.q;
    }
    CHECK(accepts < 50);
}

TEST_CASE("a fixed-step walk matches anisotropic Gaussian moments") {
    LogDensity d;
    d.dim = 2;
    // N((1, -2), diag(2, 0.5))
    d.value = [](const Eigen::VectorXd& q) {
        return -0.25 * (q[0] - 1.0) * (q[0] - 1.0) - (q[1] + 2.0) * (q[1] + 2.0);
    };
    d.gradient = [](const Eigen::VectorXd& q) {
        Eigen::VectorXd g(2);
        g[0] = -0.5 * (q[0] - 1.0);
        g[1] = -2.0 * (q[1] + 2.0);
        return g;
    };
    Rng rng = make_rng(2718);
    Eigen::VectorXd q(2);
    q << 1.0, -2.0;
    for (int i = 0; i < 500; ++i) q = hmc_step(q, d, 0.25, 20, rng).q;
    const int kept = 5000;
    Eigen::MatrixXd draws(kept, 2);
    for (int i = 0; i < kept; ++i) {
        q = hmc_step(q, d, 0.25, 20, rng).q;
        draws.row(i) = q.transpose();
    }
    const Eigen::Vector2d target_mean(1.0, -2.0);
    const Eigen::Vector2d target_sd(std::sqrt(2.0), std::sqrt(0.5));
    for (int j = 0; j < 2; ++j) {
        const double ess = effective_sample_size(draws.col(j));
        CHECK(ess > 100.0);
        const double tol = 3.0 * target_sd[j] / std::sqrt(ess);
        CHECK(std::abs(draws.col(j).mean() - target_mean[j]) < tol);
    }
}

TEST_CASE("run_chain recovers the conjugate linear-regression posterior") {
    const Eigen::Index t_rows = 60;
    const Eigen::MatrixXd x = random_matrix(t_rows, 3, 515);
    Eigen::VectorXd true_w(3);
    true_w << 1.5, -2.0, 0.7;
    const double true_b = 0.4;
    const double noise = 0.5;
    Rng rng = make_rng(516);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd y = x * true_w + Eigen::VectorXd::Constant(t_rows, true_b);
    for (Eigen::Index t = 0; t < t_rows; ++t) y[t] += std::sqrt(noise) * gauss(rng);

    LikelihoodModel model;
    model.readout.widths = {3, 1};
    model.prior = PriorSpec::gaussian(0.0, 1.0);
    model.learn_noise = false;
    model.fixed_noise_variance = noise;
    const ReadoutTarget target = build_readout_target(x, y, model);
    REQUIRE(target.density.dim == 4);

    // Conjugate posterior over [w, b] under the N(0, I) prior.
    Eigen::MatrixXd design(t_rows, 4);
    design << x, Eigen::VectorXd::Ones(t_rows);
    const Eigen::MatrixXd precision =
        design.transpose() * design / noise + Eigen::MatrixXd::Identity(4, 4);
    const Eigen::VectorXd post_mean =
        precision.ldlt().solve(design.transpose() * y / noise);
    const Eigen::VectorXd post_sd =
        precision.inverse().diagonal().array().sqrt();

    HmcConfig cfg;
    cfg.warmup = 500;
    cfg.samples = 2000;
    cfg.seed = 99;
    const Chain chain = run_chain(target.density, Eigen::VectorXd::Zero(4), cfg);
    CHECK(chain.step_size > 0.0);
    CHECK(chain.wall_seconds > 0.0);
    CHECK(chain.acceptance_rate > 0.3);
    for (int j = 0; j < 4; ++j) {
        CHECK(chain.ess[j] > 100.0);
        const double tol = 3.0 * post_sd[j] / std::sqrt(chain.ess[j]);
        CHECK(std::abs(chain.samples.col(j).mean() - post_mean[j]) < tol);
    }
}

TEST_CASE("identical configurations give identical chains") {
    const LogDensity d = standard_normal(2);
    HmcConfig cfg;
    cfg.warmup = 50;
    cfg.samples = 100;
    cfg.seed = 31;
    const Eigen::VectorXd init = Eigen::VectorXd::Zero(2);
    const Chain a = run_chain(d, init, cfg);
    const Chain b = run_chain(d, init, cfg);
    CHECK(a.samples == b.samples);
    CHECK(a.step_size == b.step_size);
    CHECK(a.acceptance_rate == b.acceptance_rate);
    CHECK(a.ess == b.ess);
}

TEST_CASE("warmup adaptation lands in the acceptance window") {
    const LogDensity d = standard_normal(2);
    HmcConfig cfg;
    cfg.warmup = 500;
    cfg.samples = 1000;
    cfg.seed = 77;
    const Chain chain = run_chain(d, Eigen::VectorXd::Zero(2), cfg);
    CHECK(chain.acceptance_rate >= 0.6);
    CHECK(chain.acceptance_rate <= 0.95);
    CHECK(chain.divergences == 0);
}

TEST_CASE("a hopeless step size aborts with a tuning hint") {
    const LogDensity d = standard_normal(1);
    HmcConfig cfg;
    cfg.step_size = 1e8;
    cfg.warmup = 5;
    cfg.samples = 10;
    cfg.seed = 5;
    CHECK_THROWS_WITH_AS(run_chain(d, Eigen::VectorXd::Zero(1), cfg),
                         doctest::Contains("warmup"), std::runtime_error);
}

TEST_CASE("run_chain rejects bad inputs") {
    const LogDensity d = standard_normal(2);
    HmcConfig cfg;
    CHECK_THROWS_AS(run_chain(d, Eigen::VectorXd::Zero(3), cfg),
                    std::invalid_argument);
    HmcConfig bad = cfg;
    bad.samples = 0;
    CHECK_THROWS_AS(run_chain(d, Eigen::VectorXd::Zero(2), bad),
                    std::invalid_argument);
    bad = cfg;
    bad.leapfrog_steps = 0;
    CHECK_THROWS_AS(run_chain(d, Eigen::VectorXd::Zero(2), bad),
                    std::invalid_argument);
}

TEST_CASE("kept samples pass a Kolmogorov-Smirnov check against the target") {
    const LogDensity d = standard_normal(1);
    HmcConfig cfg;
    cfg.leapfrog_steps = 16;
    cfg.warmup = 500;
    cfg.samples = 50000;
    cfg.seed = 4242;
    const Chain chain = run_chain(d, Eigen::VectorXd::Zero(1), cfg);
    std::vector<double> xs(chain.samples.col(0).data(),
                           chain.samples.col(0).data() + cfg.samples);
    std::sort(xs.begin(), xs.end());
    double dn = 0.0;
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = std_normal_cdf(xs[i]);
        dn = std::max(dn, std::abs((i + 1.0) / n - f));
        dn = std::max(dn, std::abs(f - i / n));
    }
    // Correlated draws: scale by the effective rather than the nominal count.
    const double stat = dn * std::sqrt(chain.ess[0]);
    CHECK(chain.ess[0] > 1000.0);
    CHECK(stat <= 1.628); // 1% critical value of the Kolmogorov distribution
}

TEST_CASE("effective sample size tracks known autocorrelation") {
    const Eigen::Index n = 20000;
    Rng rng = make_rng(9001);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Eigen::VectorXd white(n);
    for (Eigen::Index t = 0; t < n; ++t) white[t] = gauss(rng);
    const double ess_white = effective_sample_size(white);
    CHECK(ess_white > 0.9 * n);
    CHECK(ess_white <= static_cast<double>(n));

    // AR(1) with coefficient 0.6: integrated autocorrelation time 4.
    Eigen::VectorXd ar(n);
    ar[0] = gauss(rng);
    const double rho = 0.6;
    const double innov = std::sqrt(1.0 - rho * rho);
    for (Eigen::Index t = 1; t < n; ++t) ar[t] = rho * ar[t - 1] + innov * gauss(rng);
    const double ess_ar = effective_sample_size(ar);
    CHECK(ess_ar > 0.75 * n / 4.0);
    CHECK(ess_ar < 1.25 * n / 4.0);

    CHECK(effective_sample_size(Eigen::VectorXd::Constant(50, 7.0)) == 50.0);
}

TEST_CASE("readout target gradients match finite differences") {
    const Eigen::MatrixXd states = random_matrix(9, 3, 61);
    const Eigen::VectorXd targets = random_matrix(9, 1, 62).col(0);
    Rng rng = make_rng(63);
    std::uniform_real_distribution<double> unit(-1.5, 1.5);
    std::uniform_real_distribution<double> log_noise(-2.0, 1.0);

    for (const bool uniform_prior : {false, true}) {
        for (const bool learn : {false, true}) {
            LikelihoodModel model;
            model.readout.widths = {3, 4, 1};
            model.prior = uniform_prior ? PriorSpec::uniform(-5.0, 5.0)
                                        : PriorSpec::gaussian(0.2, 1.5);
            model.learn_noise = learn;
            model.fixed_noise_variance = 0.8;
            const ReadoutTarget target = build_readout_target(states, targets, model);
            const Eigen::Index n = target.n_params;
            REQUIRE(target.density.dim == n + (learn ? 1 : 0));
            for (int rep = 0; rep < 5; ++rep) {
                Eigen::VectorXd x(target.density.dim);
                for (Eigen::Index i = 0; i < n; ++i) x[i] = unit(rng);
                if (learn) x[n] = log_noise(rng);
                check_gradient_matches(target.density, x);
            }
        }
    }
}

TEST_CASE("the log-likelihood term is additive over independent rows") {
    const Eigen::MatrixXd states = random_matrix(7, 2, 71);
    const Eigen::VectorXd targets = random_matrix(7, 1, 72).col(0);
    Eigen::MatrixXd stacked_s(14, 2);
    stacked_s << states, states;
    Eigen::VectorXd stacked_t(14);
    stacked_t << targets, targets;
    const Eigen::MatrixXd empty_s(0, 2);
    const Eigen::VectorXd empty_t(0);

    Rng rng = make_rng(73);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (const bool uniform_prior : {false, true}) {
        LikelihoodModel model;
        model.readout.widths = {2, 3, 1};
        model.prior = uniform_prior ? PriorSpec::uniform(-4.0, 4.0)
                                    : PriorSpec::gaussian(0.0, 2.0);
        model.learn_noise = true;
        const ReadoutTarget one = build_readout_target(states, targets, model);
        const ReadoutTarget two = build_readout_target(stacked_s, stacked_t, model);
        const ReadoutTarget zero = build_readout_target(empty_s, empty_t, model);
        for (int rep = 0; rep < 5; ++rep) {
            Eigen::VectorXd x(one.density.dim);
            for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = unit(rng);
            const double excess = two.density.value(x) -
                                  2.0 * one.density.value(x) +
                                  zero.density.value(x);
            CHECK(std::abs(excess) < 1e-9);
        }
    }
}

TEST_CASE("the readout density at the origin matches the closed form") {
    const Eigen::MatrixXd states = random_matrix(6, 2, 81);
    const Eigen::VectorXd targets = Eigen::VectorXd::Zero(6);
    LikelihoodModel model;
    model.readout.widths = {2, 1}; // 3 parameters; zero weights predict zero
    model.prior = PriorSpec::gaussian(0.0, 1.0);
    model.learn_noise = false;
    model.fixed_noise_variance = 0.7;
    const ReadoutTarget fixed = build_readout_target(states, targets, model);
    const double expect_fixed =
        -3.0 * std::log(2.0 * std::numbers::pi * 0.7) -
        1.5 * std::log(2.0 * std::numbers::pi);
    CHECK(fixed.density.value(Eigen::VectorXd::Zero(3)) ==
          doctest::Approx(expect_fixed).epsilon(1e-12));

    model.learn_noise = true;
    const ReadoutTarget learned = build_readout_target(states, targets, model);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
    x[3] = std::log(0.7);
    const double expect_learned =
        expect_fixed + std::log(0.7) - std::log(10.0);
    CHECK(learned.density.value(x) ==
          doctest::Approx(expect_learned).epsilon(1e-12));

    // Above the noise-scale support the density is impossible.
    x[3] = std::log(10.0) + 0.1;
    CHECK(learned.density.value(x) ==
          -std::numeric_limits<double>::infinity());
}

TEST_CASE("readout decode helpers invert the transforms") {
    const Eigen::MatrixXd states = random_matrix(4, 2, 91);
    const Eigen::VectorXd targets = random_matrix(4, 1, 92).col(0);
    LikelihoodModel model;
    model.readout.widths = {2, 1};
    model.prior = PriorSpec::uniform(-5.0, 5.0);
    model.learn_noise = true;
    const ReadoutTarget target = build_readout_target(states, targets, model);
    Eigen::VectorXd x(4);
    x << 0.0, 2.0, -30.0, std::log(0.25);
    const Eigen::VectorXd r = target.decode_params(x);
    CHECK(r[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(-5.0 + 10.0 / (1.0 + std::exp(-2.0))));
    CHECK(r[2] > -5.0); // stays inside the box even far out
    CHECK(r[2] < -4.999);
    CHECK(target.decode_noise(x) == doctest::Approx(0.25));

    model.prior = PriorSpec::gaussian(0.0, 1.0);
    model.learn_noise = false;
    model.fixed_noise_variance = 1.3;
    const ReadoutTarget plain = build_readout_target(states, targets, model);
    Eigen::VectorXd w(3);
    w << 0.3, -0.7, 2.0;
    CHECK(plain.decode_params(w) == w);
    CHECK(plain.decode_noise(w) == 1.3);
}

TEST_CASE("shrinkage target gradients match finite differences") {
    Rng rng = make_rng(111);
    std::uniform_real_distribution<double> unit(-1.2, 1.2);

    const Eigen::MatrixXd states = random_matrix(12, 4, 112);
    const Eigen::VectorXd targets = random_matrix(12, 1, 113).col(0);
    const SsvsTarget target = build_ssvs_target(states, targets);
    REQUIRE(target.density.dim == 10);
    for (int rep = 0; rep < 8; ++rep) {
        Eigen::VectorXd x(10);
        for (Eigen::Index i = 0; i < 10; ++i) x[i] = unit(rng);
        check_gradient_matches(target.density, x);
    }

    // Spec'd interior point: beta = 0, lambda = tau = 1, sigma = 1.
    Eigen::VectorXd interior = Eigen::VectorXd::Zero(10);
    interior[9] = std::log(1.0 / 9.0); // logit of sigma/10 at sigma = 1
    CHECK(std::isfinite(target.density.value(interior)));
    CHECK(target.density.gradient(interior).allFinite());
    CHECK(target.decode_sigma(interior) == doctest::Approx(1.0));
    CHECK(target.decode_tau(interior) == 1.0);
    CHECK(target.decode_lambda(interior) == Eigen::VectorXd::Ones(4));

    // No coefficients at all: only the global scale and noise remain.
    const SsvsTarget bare =
        build_ssvs_target(Eigen::MatrixXd(5, 0), random_matrix(5, 1, 114).col(0));
    REQUIRE(bare.density.dim == 2);
    for (int rep = 0; rep < 4; ++rep) {
        Eigen::VectorXd x(2);
        x << unit(rng), unit(rng);
        check_gradient_matches(bare.density, x);
    }

    // No data: the prior alone.
    const SsvsTarget prior_only =
        build_ssvs_target(Eigen::MatrixXd(0, 3), Eigen::VectorXd(0));
    REQUIRE(prior_only.density.dim == 8);
    for (int rep = 0; rep < 4; ++rep) {
        Eigen::VectorXd x(8);
        for (Eigen::Index i = 0; i < 8; ++i) x[i] = unit(rng);
        check_gradient_matches(prior_only.density, x);
    }
}

TEST_CASE("sparse coefficients are recovered through the shrinkage readout") {
    const Eigen::Index d = 10, t_rows = 120;
    const Eigen::MatrixXd x = random_matrix(t_rows, d, 211);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
    beta[3] = 3.0;
    beta[7] = -3.0;
    Rng rng = make_rng(212);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd y = x * beta;
    for (Eigen::Index t = 0; t < t_rows; ++t) y[t] += 0.5 * gauss(rng);

    const SsvsTarget target = build_ssvs_target(x, y);
    HmcConfig cfg;
    cfg.warmup = 400;
    cfg.samples = 800;
    cfg.seed = 7;
    Eigen::VectorXd init = Eigen::VectorXd::Zero(target.density.dim);
    init[2 * d + 1] = std::log(1.0 / 9.0); // start the noise scale at 1
    const Chain chain = run_chain(target.density, init, cfg);

    Eigen::VectorXd mean_abs = Eigen::VectorXd::Zero(d);
    double mean_sigma = 0.0;
    for (Eigen::Index s = 0; s < chain.samples.rows(); ++s) {
        const Eigen::VectorXd draw = chain.samples.row(s).transpose();
        mean_abs += target.decode_beta(draw).cwiseAbs();
        mean_sigma += target.decode_sigma(draw);
    }
    mean_abs /= static_cast<double>(chain.samples.rows());
    mean_sigma /= static_cast<double>(chain.samples.rows());

    double weakest_signal = std::numeric_limits<double>::infinity();
    double strongest_null = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
        if (j == 3 || j == 7)
            weakest_signal = std::min(weakest_signal, mean_abs[j]);
        else
            strongest_null = std::max(strongest_null, mean_abs[j]);
    }
    CHECK(weakest_signal > strongest_null);
    CHECK(weakest_signal > 2.5);
    CHECK(mean_sigma > 0.35);
    CHECK(mean_sigma < 0.8);
}

TEST_CASE("the prior-only chain reproduces the shrinkage prior") {
    const SsvsTarget target =
        build_ssvs_target(Eigen::MatrixXd(0, 2), Eigen::VectorXd(0));
    HmcConfig cfg;
    cfg.warmup = 500;
    cfg.samples = 8000;
    cfg.seed = 131;
    const Chain chain = run_chain(
        target.density, Eigen::VectorXd::Zero(target.density.dim), cfg);

    std::vector<double> taus(chain.samples.rows());
    Eigen::VectorXd sigmas(chain.samples.rows());
    for (Eigen::Index s = 0; s < chain.samples.rows(); ++s) {
        const Eigen::VectorXd draw = chain.samples.row(s).transpose();
        taus[static_cast<std::size_t>(s)] = target.decode_tau(draw);
        sigmas[s] = target.decode_sigma(draw);
    }
    std::nth_element(taus.begin(), taus.begin() + taus.size() / 2, taus.end());
    const double tau_median = taus[taus.size() / 2];
    CHECK(tau_median > 0.85); // the half-Cauchy(0,1) median is exactly 1
    CHECK(tau_median < 1.15);

    // Chain moments of the noise scale against direct draws from its prior.
    Rng rng = make_rng(132);
    std::uniform_real_distribution<double> prior_sigma(0.0, 10.0);
    const int n_direct = 20000;
    double direct_mean = 0.0, direct_sq = 0.0;
    for (int i = 0; i < n_direct; ++i) {
        const double s = prior_sigma(rng);
        direct_mean += s;
        direct_sq += s * s;
    }
    direct_mean /= n_direct;
    const double direct_var = direct_sq / n_direct - direct_mean * direct_mean;

    const double ess_sigma = effective_sample_size(sigmas);
    CHECK(ess_sigma > 50.0);
    const double sigma_sd = std::sqrt(100.0 / 12.0);
    const double mean_tol =
        3.0 * sigma_sd * std::sqrt(1.0 / ess_sigma + 1.0 / n_direct);
    const double chain_mean = sigmas.mean();
    const double chain_var =
        (sigmas.array() - chain_mean).square().sum() / sigmas.size();
    CHECK(std::abs(chain_mean - direct_mean) < mean_tol);
    CHECK(chain_var > 0.75 * direct_var);
    CHECK(chain_var < 1.25 * direct_var);
}

TEST_CASE("chain predictions are deterministic, tagged and evenly strided") {
    // A hand-built chain with known rows; near-zero noise exposes the stride.
    LikelihoodModel model;
    model.readout.widths = {2, 1};
    model.prior = PriorSpec::gaussian(0.0, 1.0);
    model.learn_noise = false;
    model.fixed_noise_variance = 1e-18;
    const ReadoutTarget target = build_readout_target(
        Eigen::MatrixXd(0, 2), Eigen::VectorXd(0), model);

    Chain chain;
    chain.samples.resize(4, 3);
    chain.samples << 1.0, 0.0, 0.0,
                     0.0, 1.0, 0.0,
                     0.0, 0.0, 1.0,
                     2.0, -1.0, 0.5;
    const Eigen::MatrixXd states = random_matrix(5, 2, 301);

    const EnsembleForecast full =
        posterior_predict_chain(chain, target, states, 4, 900);
    CHECK(full.source == "hmc");
    CHECK(full.samples.rows() == 5);
    CHECK(full.samples.cols() == 4);
    const EnsembleForecast again =
        posterior_predict_chain(chain, target, states, 4, 900);
    CHECK(full.samples == again.samples);

    const EnsembleForecast strided =
        posterior_predict_chain(chain, target, states, 2, 900);
    Mlp net{model.readout, chain.samples.row(0).transpose()};
    CHECK((strided.samples.col(0) - forward_batch(net, states).col(0))
              .lpNorm<Eigen::Infinity>() < 1e-6);
    net.params = chain.samples.row(2).transpose();
    CHECK((strided.samples.col(1) - forward_batch(net, states).col(0))
              .lpNorm<Eigen::Infinity>() < 1e-6);

    // Sparse-readout flavour: sigma pinned near zero by a large negative logit.
    const SsvsTarget starget =
        build_ssvs_target(Eigen::MatrixXd(0, 2), Eigen::VectorXd(0));
    Chain schain;
    schain.samples.resize(3, 6);
    schain.samples.setZero();
    schain.samples(0, 0) = 1.0;  // beta = (1, 0)
    schain.samples(1, 1) = -2.0; // beta = (0, -2)
    schain.samples(2, 0) = 0.5;
    schain.samples.col(5).setConstant(-40.0);
    const EnsembleForecast sfull =
        posterior_predict_ssvs(schain, starget, states, 3, 901);
    CHECK(sfull.source == "ssvs");
    CHECK((sfull.samples.col(1) - states * Eigen::Vector2d(0.0, -2.0))
              .lpNorm<Eigen::Infinity>() < 1e-12);
    const EnsembleForecast sagain =
        posterior_predict_ssvs(schain, starget, states, 3, 901);
    CHECK(sfull.samples == sagain.samples);
    CHECK_THROWS_AS(posterior_predict_ssvs(schain, starget, states, 0, 901),
                    std::invalid_argument);
}

TEST_CASE("chains survive a save/load round trip") {
    const LogDensity d = standard_normal(2);
    HmcConfig cfg;
    cfg.warmup = 50;
    cfg.samples = 40;
    cfg.seed = 17;
    const Chain chain = run_chain(d, Eigen::VectorXd::Zero(2), cfg);
    const std::string samples_path = "hmc_roundtrip_samples.bin";
    const std::string meta_path = "hmc_roundtrip_meta.json";
    save_chain(chain, cfg, samples_path, meta_path);
    const Chain back = load_chain(samples_path, meta_path);
    CHECK(back.samples == chain.samples);
    CHECK(back.acceptance_rate == chain.acceptance_rate);
    CHECK(back.ess == chain.ess);
    CHECK(back.wall_seconds == chain.wall_seconds);
    CHECK(back.step_size == chain.step_size);
    CHECK(back.divergences == chain.divergences);
    std::remove(samples_path.c_str());
    std::remove(meta_path.c_str());
}
