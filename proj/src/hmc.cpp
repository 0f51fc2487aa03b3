#include "esnuq/hmc.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace esnuq {

namespace {

double sigmoid(double v) {
    return v > 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

// Leapfrog core; false when a gradient evaluation goes non-finite.
bool leapfrog_core(Eigen::VectorXd& q, Eigen::VectorXd& p, double step_size,
                   int n_steps,
                   const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                   int* bad_step) {
    for (int l = 0; l < n_steps; ++l) {
        Eigen::VectorXd g = grad(q);
        if (!g.allFinite()) {
            if (bad_step) *bad_step = l;
            return false;
        }
        p += 0.5 * step_size * g;
        q += step_size * p;
        g = grad(q);
        if (!g.allFinite()) {
            if (bad_step) *bad_step = l;
            return false;
        }
        p += 0.5 * step_size * g;
    }
    return true;
}

Eigen::VectorXd draw_momentum(Eigen::Index dim, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd p(dim);
    for (Eigen::Index i = 0; i < dim; ++i) p[i] = gauss(rng);
    return p;
}

double hamiltonian(const LogDensity& target, const Eigen::VectorXd& q,
                   const Eigen::VectorXd& p) {
    return -target.value(q) + 0.5 * p.squaredNorm();
}

// One-leapfrog-step probe doubling/halving until the acceptance probability
// crosses one half.
double find_reasonable_step_size(const LogDensity& target,
                                 const Eigen::VectorXd& init, Rng& rng) {
    double eps = 1.0;
    const Eigen::VectorXd p0 = draw_momentum(target.dim, rng);
    const double h0 = hamiltonian(target, init, p0);
    auto accept_prob = [&](double step) {
        Eigen::VectorXd q = init, p = p0;
        if (!leapfrog_core(q, p, step, 1, target.gradient, nullptr)) return 0.0;
        const double h1 = hamiltonian(target, q, p);
        if (!std::isfinite(h1)) return 0.0;
        return std::min(1.0, std::exp(h0 - h1));
    };
    double a = accept_prob(eps);
    const double dir = a > 0.5 ? 1.0 : -1.0;
    for (int iter = 0; iter < 60; ++iter) {
        if (std::pow(a, dir) <= std::pow(2.0, -dir)) break;
        eps *= std::pow(2.0, dir);
        a = accept_prob(eps);
    }
    return eps;
}

struct ReadoutContext {
    Eigen::MatrixXd states;
    Eigen::VectorXd targets;
    LikelihoodModel model;
    Eigen::Index n_params;
};

struct SsvsContext {
    Eigen::MatrixXd states;
    Eigen::VectorXd targets;
    Eigen::Index d;
};

constexpr double kSigmaUpper = 10.0; // sparse-readout noise-scale support

double log_half_cauchy(double x) {
    return std::log(2.0 / std::numbers::pi) - std::log1p(x * x);
}

} // namespace

void HmcConfig::validate() const {
    if (leapfrog_steps < 1) throw std::invalid_argument("need at least one leapfrog step");
    if (warmup < 0) throw std::invalid_argument("negative warmup");
    if (samples < 1) throw std::invalid_argument("need at least one kept sample");
}

void leapfrog(Eigen::VectorXd& q, Eigen::VectorXd& p, double step_size,
              int n_steps,
              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad) {
    if (n_steps < 1) throw std::invalid_argument("need at least one leapfrog step");
    int bad = -1;
    if (!leapfrog_core(q, p, step_size, n_steps, grad, &bad))
        throw std::runtime_error("non-finite gradient in leapfrog step " +
                                 std::to_string(bad));
}

StepResult hmc_step(const Eigen::VectorXd& q, const LogDensity& target,
                    double step_size, int leapfrog_steps, Rng& rng) {
    StepResult out;
    out.q = q;
    const Eigen::VectorXd p0 = draw_momentum(target.dim, rng);
    const double h0 = hamiltonian(target, q, p0);

    Eigen::VectorXd q1 = q, p1 = p0;
    const bool ok = leapfrog_core(q1, p1, step_size, leapfrog_steps,
                                  target.gradient, nullptr);
    const double h1 = ok ? hamiltonian(target, q1, p1)
                         : std::numeric_limits<double>::infinity();
    out.delta_h = h1 - h0;
    // The uniform draw happens unconditionally so divergent proposals do not
    // desynchronize the stream relative to ordinary rejections.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    if (!ok || !std::isfinite(h1)) {
        out.divergent = true;
        return out;
    }
    if (u < std::min(1.0, std::exp(-out.delta_h))) {
        out.accepted = true;
        out.q = std::move(q1);
    }
    return out;
}

Chain run_chain(const LogDensity& target, const Eigen::VectorXd& init,
                const HmcConfig& cfg) {
    cfg.validate();
    if (init.size() != target.dim)
        throw std::invalid_argument("initial point does not match the target dimension");
    if (!std::isfinite(target.value(init)))
        throw std::invalid_argument("initial point has non-finite density");

    const auto t_start = std::chrono::steady_clock::now();
    Rng rng = make_rng(derive_seed(cfg.seed, 0xAC));

    double eps = cfg.step_size > 0.0 ? cfg.step_size
                                     : find_reasonable_step_size(target, init, rng);

    Chain chain;
    Eigen::VectorXd q = init;

    // Dual averaging toward 0.8 acceptance (leapfrog count fixed).
    if (cfg.warmup > 0) {
        const double delta = 0.8, gamma = 0.05, t0 = 10.0, kappa = 0.75;
        const double mu = std::log(10.0 * eps);
        double h_bar = 0.0, log_eps_bar = std::log(eps);
        int warmup_accepts = 0;
        for (int m = 1; m <= cfg.warmup; ++m) {
            StepResult step = hmc_step(q, target, eps, cfg.leapfrog_steps, rng);
            q = step.q;
            if (step.accepted) ++warmup_accepts;
            if (step.divergent) ++chain.divergences;
            const double alpha =
                step.divergent ? 0.0 : std::min(1.0, std::exp(-step.delta_h));
            const double w = 1.0 / (m + t0);
            h_bar = (1.0 - w) * h_bar + w * (delta - alpha);
            const double log_eps = mu - std::sqrt(static_cast<double>(m)) / gamma * h_bar;
            const double shrink = std::pow(static_cast<double>(m), -kappa);
            log_eps_bar = shrink * log_eps + (1.0 - shrink) * log_eps_bar;
            eps = std::exp(log_eps);
        }
        if (warmup_accepts == 0)
            throw std::runtime_error(
                "no proposal accepted during warmup; lower the initial step size "
                "or the leapfrog count");
        eps = std::exp(log_eps_bar);
    }

    chain.step_size = eps;
    chain.samples.resize(cfg.samples, target.dim);
    int accepts = 0;
    for (int s = 0; s < cfg.samples; ++s) {
        StepResult step = hmc_step(q, target, eps, cfg.leapfrog_steps, rng);
        q = step.q;
        if (step.accepted) ++accepts;
        if (step.divergent) ++chain.divergences;
        chain.samples.row(s) = q.transpose();
    }
    chain.acceptance_rate = static_cast<double>(accepts) / cfg.samples;

    chain.ess.resize(target.dim);
    for (Eigen::Index j = 0; j < target.dim; ++j)
        chain.ess[j] = effective_sample_size(chain.samples.col(j));

    chain.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    return chain;
}

double effective_sample_size(const Eigen::VectorXd& series) {
    const Eigen::Index n = series.size();
    if (n < 4) return static_cast<double>(n);
    const double mean = series.mean();
    const Eigen::VectorXd centered = series.array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(n);
    if (var <= 0.0) return static_cast<double>(n);

    auto rho = [&](Eigen::Index lag) {
        double acc = 0.0;
        for (Eigen::Index t = 0; t + lag < n; ++t)
            acc += centered[t] * centered[t + lag];
        return acc / (static_cast<double>(n) * var);
    };
    // Sum paired correlations while the pair sums stay positive.
    double tau = -1.0;
    for (Eigen::Index m = 0; 2 * m + 1 < n; ++m) {
        const double pair = rho(2 * m) + rho(2 * m + 1);
        if (pair <= 0.0) break;
        tau += 2.0 * pair;
    }
    tau = std::max(tau, 1e-12);
    return std::min(static_cast<double>(n), static_cast<double>(n) / tau);
}

Eigen::VectorXd ReadoutTarget::decode_params(const Eigen::VectorXd& draw) const {
    Eigen::VectorXd r = draw.head(n_params);
    if (model.prior.kind == PriorSpec::Kind::uniform) {
        const double width = model.prior.upper - model.prior.lower;
        for (Eigen::Index i = 0; i < r.size(); ++i)
            r[i] = model.prior.lower + width * sigmoid(r[i]);
    }
    return r;
}

double ReadoutTarget::decode_noise(const Eigen::VectorXd& draw) const {
    if (!model.learn_noise) return model.fixed_noise_variance;
    return std::exp(draw[n_params]);
}

ReadoutTarget build_readout_target(const Eigen::MatrixXd& states,
                                   const Eigen::VectorXd& targets,
                                   const LikelihoodModel& model) {
    model.validate();
    if (states.rows() != targets.size())
        throw std::invalid_argument("state/target row mismatch");
    auto ctx = std::make_shared<ReadoutContext>();
    ctx->states = states;
    ctx->targets = targets;
    ctx->model = model;
    ctx->n_params = static_cast<Eigen::Index>(param_count(model.readout));

    ReadoutTarget out;
    out.model = model;
    out.n_params = ctx->n_params;
    out.density.dim = ctx->n_params + (model.learn_noise ? 1 : 0);

    auto decode = [ctx](const Eigen::VectorXd& x) {
        Eigen::VectorXd r = x.head(ctx->n_params);
        if (ctx->model.prior.kind == PriorSpec::Kind::uniform) {
            const double width = ctx->model.prior.upper - ctx->model.prior.lower;
            for (Eigen::Index i = 0; i < r.size(); ++i)
                r[i] = ctx->model.prior.lower + width * sigmoid(r[i]);
        }
        return r;
    };

    out.density.value = [ctx, decode](const Eigen::VectorXd& x) {
        const Eigen::Index n = ctx->n_params;
        double logp = 0.0;
        double noise = ctx->model.fixed_noise_variance;
        if (ctx->model.learn_noise) {
            const double u = x[n];
            if (u >= std::log(ctx->model.noise_upper))
                return -std::numeric_limits<double>::infinity();
            noise = std::exp(u);
            logp += u - std::log(ctx->model.noise_upper); // log-scale Jacobian + flat prior
        }
        if (ctx->model.prior.kind == PriorSpec::Kind::gaussian) {
            const double v = ctx->model.prior.variance;
            const Eigen::VectorXd c =
                (x.head(n).array() - ctx->model.prior.mean).matrix();
            logp += -0.5 * n * std::log(2.0 * std::numbers::pi * v) -
                    c.squaredNorm() / (2.0 * v);
        } else {
            const double width = ctx->model.prior.upper - ctx->model.prior.lower;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double s = sigmoid(x[i]);
                logp += std::log(width * s * (1.0 - s)); // transform Jacobian
            }
            logp += -n * std::log(width); // flat prior inside the box
        }
        const Eigen::Index t_rows = ctx->states.rows();
        if (t_rows > 0) {
            Mlp net{ctx->model.readout, decode(x)};
            const Eigen::VectorXd pred =
                forward_batch(net, ctx->states).col(0);
            const double sse = (ctx->targets - pred).squaredNorm();
            logp += -0.5 * t_rows * std::log(2.0 * std::numbers::pi * noise) -
                    sse / (2.0 * noise);
        }
        return logp;
    };

    out.density.gradient = [ctx, decode](const Eigen::VectorXd& x) {
        const Eigen::Index n = ctx->n_params;
        const Eigen::Index t_rows = ctx->states.rows();
        Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
        double noise = ctx->model.fixed_noise_variance;
        if (ctx->model.learn_noise) noise = std::exp(x[n]);

        Eigen::VectorXd g_r = Eigen::VectorXd::Zero(n); // dloglik/d(constrained R)
        double sse = 0.0;
        if (t_rows > 0) {
            Mlp net{ctx->model.readout, decode(x)};
            double mse = 0.0;
            const Eigen::VectorXd g_mse =
                gradient(net, ctx->states, ctx->targets, MseLoss{}, nullptr, &mse);
            sse = mse * static_cast<double>(t_rows);
            g_r = -static_cast<double>(t_rows) / (2.0 * noise) * g_mse;
        }
        if (ctx->model.prior.kind == PriorSpec::Kind::gaussian) {
            g.head(n) = g_r - (x.head(n).array() - ctx->model.prior.mean).matrix() /
                                  ctx->model.prior.variance;
        } else {
            const double width = ctx->model.prior.upper - ctx->model.prior.lower;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double s = sigmoid(x[i]);
                g[i] = g_r[i] * width * s * (1.0 - s) + (1.0 - 2.0 * s);
            }
        }
        if (ctx->model.learn_noise)
            g[n] = -0.5 * t_rows + sse / (2.0 * noise) + 1.0;
        return g;
    };
    return out;
}

Eigen::VectorXd SsvsTarget::decode_beta(const Eigen::VectorXd& draw) const {
    return draw.head(n_beta);
}

Eigen::VectorXd SsvsTarget::decode_lambda(const Eigen::VectorXd& draw) const {
    return draw.segment(n_beta, n_beta).array().exp().matrix();
}

double SsvsTarget::decode_tau(const Eigen::VectorXd& draw) const {
    return std::exp(draw[2 * n_beta]);
}

double SsvsTarget::decode_sigma(const Eigen::VectorXd& draw) const {
    return kSigmaUpper * sigmoid(draw[2 * n_beta + 1]);
}

SsvsTarget build_ssvs_target(const Eigen::MatrixXd& states,
                             const Eigen::VectorXd& targets) {
    if (states.rows() != targets.size())
        throw std::invalid_argument("state/target row mismatch");
    auto ctx = std::make_shared<SsvsContext>();
    ctx->states = states;
    ctx->targets = targets;
    ctx->d = states.cols();
    const Eigen::Index d = ctx->d;

    SsvsTarget out;
    out.n_beta = d;
    out.density.dim = 2 * d + 2;

    out.density.value = [ctx](const Eigen::VectorXd& x) {
        const Eigen::Index d = ctx->d;
        const double t_rows = static_cast<double>(ctx->states.rows());
        const auto beta = x.head(d);
        const auto u = x.segment(d, d); // log lambda
        const double v = x[2 * d];      // log tau
        const double w = x[2 * d + 1];
        const double s = sigmoid(w);
        const double sigma = kSigmaUpper * s;

        double logp = 0.0;
        // coefficient shells: beta_j ~ N(0, lambda_j^2 tau^2)
        for (Eigen::Index j = 0; j < d; ++j) {
            const double log_scale = u[j] + v;
            logp += -0.5 * std::log(2.0 * std::numbers::pi) - log_scale -
                    beta[j] * beta[j] / (2.0 * std::exp(2.0 * log_scale));
            logp += log_half_cauchy(std::exp(u[j])) + u[j]; // prior + Jacobian
        }
        logp += log_half_cauchy(std::exp(v)) + v;
        logp += std::log(kSigmaUpper * s * (1.0 - s)) - std::log(kSigmaUpper);
        if (t_rows > 0.0) {
            const double sse =
                (ctx->targets - ctx->states * beta).squaredNorm();
            logp += -t_rows * std::log(sigma) -
                    0.5 * t_rows * std::log(2.0 * std::numbers::pi) -
                    sse / (2.0 * sigma * sigma);
        }
        return logp;
    };

    out.density.gradient = [ctx](const Eigen::VectorXd& x) {
        const Eigen::Index d = ctx->d;
        const double t_rows = static_cast<double>(ctx->states.rows());
        const auto beta = x.head(d);
        const auto u = x.segment(d, d);
        const double v = x[2 * d];
        const double w = x[2 * d + 1];
        const double s = sigmoid(w);
        const double sigma = kSigmaUpper * s;

        Eigen::VectorXd g = Eigen::VectorXd::Zero(2 * d + 2);
        Eigen::VectorXd resid;
        double sse = 0.0;
        if (t_rows > 0.0) {
            resid = ctx->targets - ctx->states * beta;
            sse = resid.squaredNorm();
            g.head(d) = ctx->states.transpose() * resid / (sigma * sigma);
        }
        double sum_shell = 0.0; // accumulates beta^2 / (lambda^2 tau^2)
        for (Eigen::Index j = 0; j < d; ++j) {
            const double inv_var = std::exp(-2.0 * (u[j] + v));
            const double shell = beta[j] * beta[j] * inv_var;
            sum_shell += shell;
            g[j] += -beta[j] * inv_var;
            const double lam2 = std::exp(2.0 * u[j]);
            g[d + j] = shell - 2.0 * lam2 / (1.0 + lam2);
        }
        const double tau2 = std::exp(2.0 * v);
        g[2 * d] = -static_cast<double>(d) + sum_shell - 2.0 * tau2 / (1.0 + tau2) + 1.0;
        g[2 * d + 1] =
            (-t_rows + sse / (sigma * sigma)) * (1.0 - s) + (1.0 - 2.0 * s);
        return g;
    };
    return out;
}

EnsembleForecast posterior_predict_chain(const Chain& chain,
                                         const ReadoutTarget& target,
                                         const Eigen::MatrixXd& states,
                                         int m_samples, std::uint64_t seed) {
    if (m_samples < 1) throw std::invalid_argument("need at least one draw");
    if (chain.samples.rows() < 1) throw std::invalid_argument("empty chain");
    EnsembleForecast out;
    out.samples.resize(states.rows(), m_samples);
    out.source = "hmc";
    const Eigen::Index kept = chain.samples.rows();
    Mlp net{target.model.readout, Eigen::VectorXd()};
    for (int j = 0; j < m_samples; ++j) {
        const Eigen::Index idx =
            m_samples == kept ? j
                              : static_cast<Eigen::Index>(
                                    (static_cast<std::int64_t>(j) * kept) / m_samples);
        const Eigen::VectorXd draw = chain.samples.row(idx).transpose();
        net.params = target.decode_params(draw);
        const double sd = std::sqrt(target.decode_noise(draw));
        Eigen::VectorXd pred = forward_batch(net, states).col(0);
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Eigen::Index t = 0; t < pred.size(); ++t) pred[t] += sd * gauss(rng);
        out.samples.col(j) = pred;
    }
    return out;
}

EnsembleForecast posterior_predict_ssvs(const Chain& chain,
                                        const SsvsTarget& target,
                                        const Eigen::MatrixXd& states,
                                        int m_samples, std::uint64_t seed) {
    if (m_samples < 1) throw std::invalid_argument("need at least one draw");
    if (chain.samples.rows() < 1) throw std::invalid_argument("empty chain");
    if (states.cols() != target.n_beta)
        throw std::invalid_argument("state width does not match the coefficients");
    EnsembleForecast out;
    out.samples.resize(states.rows(), m_samples);
    out.source = "ssvs";
    const Eigen::Index kept = chain.samples.rows();
    for (int j = 0; j < m_samples; ++j) {
        const Eigen::Index idx =
            m_samples == kept ? j
                              : static_cast<Eigen::Index>(
                                    (static_cast<std::int64_t>(j) * kept) / m_samples);
        const Eigen::VectorXd draw = chain.samples.row(idx).transpose();
        const Eigen::VectorXd beta = target.decode_beta(draw);
        const double sd = target.decode_sigma(draw);
        Eigen::VectorXd pred = states * beta;
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Eigen::Index t = 0; t < pred.size(); ++t) pred[t] += sd * gauss(rng);
        out.samples.col(j) = pred;
    }
    return out;
}

void save_chain(const Chain& chain, const HmcConfig& cfg,
                const std::string& samples_path, const std::string& meta_path) {
    std::ofstream bin(samples_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + samples_path);
    bin.write(reinterpret_cast<const char*>(chain.samples.data()),
              static_cast<std::streamsize>(sizeof(double) * chain.samples.size()));

    nlohmann::json meta;
    meta["rows"] = chain.samples.rows();
    meta["cols"] = chain.samples.cols();
    meta["acceptance_rate"] = chain.acceptance_rate;
    meta["ess"] = std::vector<double>(chain.ess.data(),
                                      chain.ess.data() + chain.ess.size());
    meta["wall_seconds"] = chain.wall_seconds;
    meta["step_size"] = chain.step_size;
    meta["divergences"] = chain.divergences;
    meta["config"] = {{"step_size", cfg.step_size},
                      {"leapfrog_steps", cfg.leapfrog_steps},
                      {"warmup", cfg.warmup},
                      {"samples", cfg.samples},
                      {"seed", cfg.seed}};
    std::ofstream js(meta_path);
    if (!js) throw std::runtime_error("cannot write " + meta_path);
    js << meta.dump(2) << '\n';
}

Chain load_chain(const std::string& samples_path, const std::string& meta_path) {
    std::ifstream js(meta_path);
    if (!js) throw std::runtime_error("cannot read " + meta_path);
    nlohmann::json meta = nlohmann::json::parse(js);
    Chain chain;
    const Eigen::Index rows = meta.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = meta.at("cols").get<Eigen::Index>();
    chain.samples.resize(rows, cols);
    std::ifstream bin(samples_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot read " + samples_path);
    bin.read(reinterpret_cast<char*>(chain.samples.data()),
             static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (static_cast<std::size_t>(bin.gcount()) != sizeof(double) * rows * cols)
        throw std::runtime_error(samples_path + " is shorter than its sidecar requires");
    chain.acceptance_rate = meta.at("acceptance_rate").get<double>();
    const auto ess = meta.at("ess").get<std::vector<double>>();
    chain.ess = Eigen::Map<const Eigen::VectorXd>(ess.data(),
                                                  static_cast<Eigen::Index>(ess.size()));
    chain.wall_seconds = meta.at("wall_seconds").get<double>();
    chain.step_size = meta.at("step_size").get<double>();
    chain.divergences = meta.at("divergences").get<int>();
    return chain;
}

} // namespace esnuq
