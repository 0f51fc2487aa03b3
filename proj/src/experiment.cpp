#include "esnuq/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <tuple>

#include "esnuq/hmc.hpp"
#include "esnuq/mc_dropout.hpp"
#include "esnuq/quantile_regression.hpp"
#include "esnuq/rng.hpp"

namespace esnuq {

namespace {

// Wrap a pipeline stage so any error surfaces with its stage name.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        if (!msg.empty() && msg.front() == '[') throw; // already tagged
        throw std::runtime_error("[" + std::string(name) + "] " + msg);
    }
}

bool method_uses_pca(Method m) {
    return m == Method::mcmc_pca || m == Method::ssvs;
}

// Which hyperparameter fields each method accepts.
const std::set<std::string>& allowed_hyper_keys(Method m) {
    static const std::set<std::string> qr = {
        "layers", "units", "activation", "learning_rate", "steps", "batch_size"};
    static const std::set<std::string> dropout = {
        "layers", "units", "activation", "learning_rate", "steps",
        "batch_size", "dropout_p", "m_samples"};
    static const std::set<std::string> vi = {
        "layers", "units", "activation", "learning_rate", "steps",
        "prior", "rank", "m_samples"};
    static const std::set<std::string> mcmc = {
        "layers", "units", "activation", "prior",
        "warmup", "samples", "leapfrog", "m_samples"};
    static const std::set<std::string> mcmc_pca = {
        "layers", "units", "activation", "prior",
        "warmup", "samples", "leapfrog", "m_samples", "pca_dim"};
    static const std::set<std::string> ssvs = {
        "prior", "warmup", "samples", "leapfrog", "m_samples", "pca_dim"};
    switch (m) {
        case Method::qr: return qr;
        case Method::dropout: return dropout;
        case Method::vi: return vi;
        case Method::mcmc: return mcmc;
        case Method::mcmc_pca: return mcmc_pca;
        case Method::ssvs: return ssvs;
    }
    throw std::logic_error("unreachable");
}

struct SplitView {
    Eigen::MatrixXd x;               // states feeding this split's forecasts
    std::vector<double> truths;      // original-scale observed values
    std::size_t first_target = 0;    // differenced index of forecast step 0
};

// Everything the per-run stage needs, shared across runs and grid candidates.
struct PipelineContext {
    TimeSeries raw;
    NormStats stats;
    QuantileLevels levels;
    SeasonalSpec seasonal{7, 1};
    Eigen::MatrixXd x_train;
    Eigen::VectorXd y_train; // normalized differenced scale
    SplitView cal;
    SplitView test;
    int state_dim = 0;
};

TimeSeries ingest(const DatasetSpec& spec, std::uint64_t master_seed) {
    if (spec.kind == DatasetSpec::Kind::synthetic)
        return synth_seasonal(spec.length, spec.period, spec.trend,
                              spec.noise_std, derive_seed(master_seed, 1));
    TimeSeries series = load_csv(spec.path, spec.column, spec.has_header);
    if (!spec.exclude.empty()) series = apply_exclusions(series, spec.exclude);
    return series;
}

PipelineContext prepare_pipeline(const ExperimentConfig& cfg) {
    PipelineContext ctx;
    ctx.seasonal = cfg.seasonal;
    ctx.levels = cfg.levels.empty() ? QuantileLevels::default_grid()
                                    : QuantileLevels(cfg.levels);

    ctx.raw = stage("ingest", [&] { return ingest(cfg.dataset, cfg.seed); });
    const std::size_t s = static_cast<std::size_t>(cfg.seasonal.s);
    if (ctx.raw.size() <= s)
        throw std::runtime_error("[ingest] series shorter than the seasonal lag");
    const std::size_t n_diff = ctx.raw.size() - s;

    const SplitSizes sizes = split_sizes(n_diff, cfg.split);
    if (sizes.train == 0 || sizes.cal == 0 || sizes.test == 0)
        throw std::runtime_error("[config] a split is empty at this series length");

    // Normalization statistics come from the raw values that back the
    // training region of the differenced series and nothing later.
    ctx.stats = stage("normalize", [&] {
        TimeSeries head;
        head.values.assign(ctx.raw.values.begin(),
                           ctx.raw.values.begin() +
                               static_cast<std::ptrdiff_t>(sizes.train + s));
        head.name = ctx.raw.name;
        return fit_normalizer(head);
    });
    const TimeSeries normalized = apply_normalizer(ctx.raw, ctx.stats);
    const TimeSeries diff = stage("difference", [&] {
        return seasonal_difference(normalized, cfg.seasonal);
    });

    const int w = cfg.washout;
    const int h = cfg.seasonal.h;
    if (sizes.train <= static_cast<std::size_t>(w + h))
        throw std::runtime_error(
            "[reservoir] washout and horizon leave no training pairs");

    SupervisedSet sup = stage("reservoir", [&] {
        ReservoirConfig rc = cfg.reservoir;
        rc.input_dim = 1;
        rc.seed = derive_seed(cfg.seed, 2);
        const Reservoir reservoir = init_reservoir(rc);
        const StateSequence states = run(reservoir, diff, w);
        TimeSeries trimmed;
        trimmed.values.assign(diff.values.begin() + w, diff.values.end());
        return make_supervised(states, trimmed, h);
    });

    const Eigen::Index k_train = static_cast<Eigen::Index>(sizes.train) - w - h;
    const Eigen::Index k_cal = k_train + static_cast<Eigen::Index>(sizes.cal);
    if (sup.x.rows() != k_cal + static_cast<Eigen::Index>(sizes.test))
        throw std::runtime_error("[reservoir] split bookkeeping mismatch");

    if (method_uses_pca(cfg.method)) {
        stage("pca", [&] {
            StateSequence train_states{sup.x.topRows(k_train), 0};
            const int d = cfg.hyper.pca_dim > 0
                              ? std::min<int>(cfg.hyper.pca_dim,
                                              static_cast<int>(sup.x.cols()))
                              : pca_auto_dim(train_states);
            const PcaModel model = pca_fit(train_states, d);
            StateSequence all{sup.x, 0};
            sup.x = pca_transform(model, all).states;
            return 0;
        });
    }
    ctx.state_dim = static_cast<int>(sup.x.cols());

    ctx.x_train = sup.x.topRows(k_train);
    ctx.y_train = sup.y.head(k_train);
    ctx.cal.x = sup.x.middleRows(k_train, k_cal - k_train);
    ctx.test.x = sup.x.bottomRows(sup.x.rows() - k_cal);
    ctx.cal.first_target = sizes.train;
    ctx.test.first_target = sizes.train + sizes.cal;
    auto truths_for = [&](std::size_t first_target, Eigen::Index count) {
        std::vector<double> t(static_cast<std::size_t>(count));
        for (Eigen::Index i = 0; i < count; ++i)
            t[static_cast<std::size_t>(i)] =
                ctx.raw.values[first_target + static_cast<std::size_t>(i) + s];
        return t;
    };
    ctx.cal.truths = truths_for(ctx.cal.first_target, ctx.cal.x.rows());
    ctx.test.truths = truths_for(ctx.test.first_target, ctx.test.x.rows());
    return ctx;
}

// Trained state of one run; predicts any split on demand.
struct TrainedMethod {
    Method method;
    double train_seconds = 0.0;
    // qr
    QrModel qr;
    // dropout
    Mlp dropout_net;
    double keep_prob = 1.0;
    // vi
    LikelihoodModel likelihood;
    ViResult vi;
    // chains
    ReadoutTarget readout_target;
    SsvsTarget ssvs_target;
    Chain chain;
    int m_samples = 0;
};

TrainedMethod train_method(const PipelineContext& ctx, const ExperimentConfig& cfg,
                           std::uint64_t train_seed) {
    TrainedMethod out;
    out.method = cfg.method;
    out.m_samples = cfg.hyper.m_samples;
    const MethodHyper& hy = cfg.hyper;
    const auto t0 = std::chrono::steady_clock::now();

    switch (cfg.method) {
        case Method::qr: {
            const MlpSpec spec = readout_spec(
                ctx.state_dim, hy, static_cast<int>(ctx.levels.size()));
            OptimizerConfig opt;
            opt.learning_rate = hy.learning_rate;
            opt.steps = hy.steps;
            opt.batch_size = hy.batch_size;
            opt.seed = train_seed;
            out.qr = train_qr(spec, ctx.x_train, ctx.y_train, ctx.levels, opt)
                         .model;
            break;
        }
        case Method::dropout: {
            const MlpSpec spec = readout_spec(ctx.state_dim, hy, 1);
            OptimizerConfig opt;
            opt.learning_rate = hy.learning_rate;
            opt.steps = hy.steps;
            opt.batch_size = hy.batch_size;
            opt.seed = train_seed;
            const Mlp init = init_mlp(spec, derive_seed(train_seed, 0x71));
            out.dropout_net = train_deterministic(init, ctx.x_train, ctx.y_train,
                                                  MseLoss{}, opt, hy.dropout_p)
                                  .model;
            out.keep_prob = hy.dropout_p;
            break;
        }
        case Method::vi: {
            out.likelihood.readout = readout_spec(ctx.state_dim, hy, 1);
            out.likelihood.prior = hy.prior;
            ViConfig vc;
            vc.rank = hy.rank;
            vc.steps = hy.steps;
            vc.learning_rate = hy.learning_rate;
            vc.seed = train_seed;
            out.vi = fit_vi(out.likelihood, ctx.x_train, ctx.y_train, vc);
            break;
        }
        case Method::mcmc:
        case Method::mcmc_pca: {
            out.likelihood.readout = readout_spec(ctx.state_dim, hy, 1);
            out.likelihood.prior = hy.prior;
            out.readout_target =
                build_readout_target(ctx.x_train, ctx.y_train, out.likelihood);
            HmcConfig hc;
            hc.leapfrog_steps = hy.leapfrog;
            hc.warmup = hy.warmup;
            hc.samples = hy.samples;
            hc.seed = train_seed;
            out.chain = run_chain(out.readout_target.density,
                                  Eigen::VectorXd::Zero(out.readout_target.density.dim),
                                  hc);
            break;
        }
        case Method::ssvs: {
            out.ssvs_target = build_ssvs_target(ctx.x_train, ctx.y_train);
            HmcConfig hc;
            hc.leapfrog_steps = hy.leapfrog;
            hc.warmup = hy.warmup;
            hc.samples = hy.samples;
            hc.seed = train_seed;
            Eigen::VectorXd init =
                Eigen::VectorXd::Zero(out.ssvs_target.density.dim);
            init[out.ssvs_target.density.dim - 1] =
                std::log(1.0 / 9.0); // noise scale starts at 1
            out.chain = run_chain(out.ssvs_target.density, init, hc);
            break;
        }
    }
    out.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return out;
}

// Forecast one split in the original scale.
PredictiveDistribution predict_split(const TrainedMethod& trained,
                                     const PipelineContext& ctx,
                                     const SplitView& view,
                                     std::uint64_t predict_seed) {
    PredictiveDistribution dist;
    dist.levels = ctx.levels;
    switch (trained.method) {
        case Method::qr:
            dist.value = predict_quantiles(trained.qr, view.x);
            break;
        case Method::dropout:
            dist.value = predict_mc_dropout(trained.dropout_net, view.x,
                                            trained.keep_prob, trained.m_samples,
                                            predict_seed);
            break;
        case Method::vi:
            dist.value = posterior_predict_vi(trained.vi.q, trained.likelihood,
                                              trained.vi.log_noise, view.x,
                                              trained.m_samples, predict_seed);
            break;
        case Method::mcmc:
        case Method::mcmc_pca:
            dist.value = posterior_predict_chain(trained.chain,
                                                 trained.readout_target, view.x,
                                                 trained.m_samples, predict_seed);
            break;
        case Method::ssvs:
            dist.value = posterior_predict_ssvs(trained.chain, trained.ssvs_target,
                                                view.x, trained.m_samples,
                                                predict_seed);
            break;
    }
    dist.affine(ctx.stats.std, 0.0);     // back to the original units
    return reconstruct_forecast(dist, ctx.raw, ctx.seasonal, view.first_target);
}

struct SingleRun {
    RunMetrics metrics;
    MetricsReport cal_split; // calibration-split scores (selection metric)
    QuantileForecast test_final;
    CalibrationCurve curve_before;
    CalibrationCurve curve_after;
};

SingleRun run_once(const PipelineContext& ctx, const ExperimentConfig& cfg,
                   std::uint64_t rseed) {
    SingleRun out;
    const TrainedMethod trained = stage("train", [&] {
        return train_method(ctx, cfg, derive_seed(rseed, 1));
    });
    out.metrics.train_seconds = trained.train_seconds;

    const PredictiveDistribution cal_dist = stage("predict", [&] {
        return predict_split(trained, ctx, ctx.cal, derive_seed(rseed, 2));
    });
    const PredictiveDistribution test_dist = stage("predict", [&] {
        return predict_split(trained, ctx, ctx.test, derive_seed(rseed, 3));
    });

    const QuantileForecast cal_q = cal_dist.to_quantiles();
    const QuantileForecast test_raw = test_dist.to_quantiles();

    QuantileForecast test_final = test_raw;
    if (cfg.method != Method::qr) {
        stage("recalibrate", [&] {
            const CalibrationCurve fit_curve =
                calibration_curve(cal_q, ctx.cal.truths);
            const CalibrationMap map = fit_recalibrator(fit_curve, "cal");
            test_final = apply_recalibrator(map, test_dist);
            return 0;
        });
    }

    stage("evaluate", [&] {
        out.metrics.final = compute_metrics(test_final, ctx.test.truths);
        out.metrics.raw = compute_metrics(test_raw, ctx.test.truths);
        out.cal_split = compute_metrics(cal_q, ctx.cal.truths);
        out.metrics.final.wall_seconds = trained.train_seconds;
        out.metrics.raw.wall_seconds = trained.train_seconds;
        out.curve_before = calibration_curve(test_raw, ctx.test.truths);
        out.curve_after = calibration_curve(test_final, ctx.test.truths);
        return 0;
    });
    out.test_final = std::move(test_final);
    return out;
}

MetricsReport report_mean(const std::vector<MetricsReport>& xs) {
    MetricsReport m;
    for (const MetricsReport& x : xs) {
        m.mse += x.mse;
        m.cal += x.cal;
        m.width95 += x.width95;
        m.coverage95 += x.coverage95;
        m.mcrps += x.mcrps;
        m.wall_seconds += x.wall_seconds;
    }
    const double n = static_cast<double>(xs.size());
    m.mse /= n;
    m.cal /= n;
    m.width95 /= n;
    m.coverage95 /= n;
    m.mcrps /= n;
    m.wall_seconds /= n;
    return m;
}

MetricsReport report_sd(const std::vector<MetricsReport>& xs,
                        const MetricsReport& mean) {
    MetricsReport v;
    if (xs.size() < 2) return v;
    for (const MetricsReport& x : xs) {
        v.mse += (x.mse - mean.mse) * (x.mse - mean.mse);
        v.cal += (x.cal - mean.cal) * (x.cal - mean.cal);
        v.width95 += (x.width95 - mean.width95) * (x.width95 - mean.width95);
        v.coverage95 +=
            (x.coverage95 - mean.coverage95) * (x.coverage95 - mean.coverage95);
        v.mcrps += (x.mcrps - mean.mcrps) * (x.mcrps - mean.mcrps);
        v.wall_seconds += (x.wall_seconds - mean.wall_seconds) *
                          (x.wall_seconds - mean.wall_seconds);
    }
    const double n = static_cast<double>(xs.size()) - 1.0;
    v.mse = std::sqrt(v.mse / n);
    v.cal = std::sqrt(v.cal / n);
    v.width95 = std::sqrt(v.width95 / n);
    v.coverage95 = std::sqrt(v.coverage95 / n);
    v.mcrps = std::sqrt(v.mcrps / n);
    v.wall_seconds = std::sqrt(v.wall_seconds / n);
    return v;
}

nlohmann::json metrics_to_json(const MetricsReport& m) {
    return {{"mse", m.mse},
            {"cal", m.cal},
            {"width95", m.width95},
            {"coverage95", m.coverage95},
            {"mcrps", m.mcrps}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("[io] cannot write " + path);
    out << text;
}

std::string curve_csv(const CalibrationCurve& before,
                      const CalibrationCurve& after) {
    std::string text = "tau,observed_before,observed_after\n";
    for (std::size_t i = 0; i < before.taus.size(); ++i) {
        text += std::to_string(before.taus[i]) + "," +
                std::to_string(before.observed[i]) + "," +
                std::to_string(after.observed[i]) + "\n";
    }
    return text;
}

} // namespace

void DatasetSpec::validate() const {
    if (kind == Kind::synthetic) {
        if (period <= 0) throw std::invalid_argument("period must be positive");
        if (length <= 2 * static_cast<std::size_t>(period))
            throw std::invalid_argument("series must cover at least two periods");
        if (noise_std < 0) throw std::invalid_argument("negative noise level");
    } else {
        if (path.empty()) throw std::invalid_argument("csv path is empty");
    }
}

Method method_from_string(const std::string& name) {
    if (name == "qr") return Method::qr;
    if (name == "dropout") return Method::dropout;
    if (name == "vi") return Method::vi;
    if (name == "mcmc") return Method::mcmc;
    if (name == "mcmc_pca") return Method::mcmc_pca;
    if (name == "ssvs") return Method::ssvs;
    throw std::invalid_argument("unknown method '" + name +
                                "' (expected qr, dropout, vi, mcmc, mcmc_pca or ssvs)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::qr: return "qr";
        case Method::dropout: return "dropout";
        case Method::vi: return "vi";
        case Method::mcmc: return "mcmc";
        case Method::mcmc_pca: return "mcmc_pca";
        case Method::ssvs: return "ssvs";
    }
    throw std::logic_error("unreachable");
}

MlpSpec readout_spec(int input_dim, const MethodHyper& hyper, int output_dim) {
    MlpSpec spec;
    spec.activation = hyper.activation;
    spec.widths.push_back(input_dim);
    int width = hyper.units;
    for (int l = 0; l < hyper.layers; ++l) {
        spec.widths.push_back(std::max(1, width));
        width /= 2;
    }
    spec.widths.push_back(output_dim);
    spec.validate();
    return spec;
}

void ExperimentConfig::validate() const {
    dataset.validate();
    split.validate();
    reservoir.validate();
    if (washout < 0) throw std::invalid_argument("negative washout");
    if (n_runs < 1) throw std::invalid_argument("need at least one run");
    if (hyper.layers < 0) throw std::invalid_argument("negative layer count");
    if (hyper.units < 1) throw std::invalid_argument("units must be positive");
    if (hyper.learning_rate <= 0)
        throw std::invalid_argument("learning rate must be positive");
    if (hyper.steps < 1) throw std::invalid_argument("steps must be positive");
    if (hyper.batch_size < 0) throw std::invalid_argument("negative batch size");
    if (hyper.dropout_p <= 0.0 || hyper.dropout_p > 1.0)
        throw std::invalid_argument("keep probability must lie in (0, 1]");
    hyper.prior.validate();
    if (hyper.warmup < 0) throw std::invalid_argument("negative warmup");
    if (hyper.samples < 1)
        throw std::invalid_argument("need at least one kept draw");
    if (hyper.leapfrog < 1)
        throw std::invalid_argument("need at least one leapfrog step");
    if (hyper.m_samples < 2)
        throw std::invalid_argument("ensemble size must be at least 2");
    if (hyper.pca_dim < 0)
        throw std::invalid_argument("negative pca dimension");

    const QuantileLevels grid =
        levels.empty() ? QuantileLevels::default_grid() : QuantileLevels(levels);
    if (!grid.contains(0.5) || !grid.contains(0.025) || !grid.contains(0.975))
        throw std::invalid_argument(
            "levels must include 0.025, 0.5 and 0.975 for the reports");

    const std::set<std::string>& allowed = allowed_hyper_keys(method);
    for (const std::string& key : hyper_keys) {
        if (!allowed.count(key))
            throw std::invalid_argument("field '" + key +
                                        "' does not apply to method '" +
                                        to_string(method) + "'");
    }
}

std::uint64_t run_seed(std::uint64_t master, int run_index) {
    return derive_seed(master, 100 + static_cast<std::uint64_t>(run_index));
}

ExperimentConfig parse_config(const nlohmann::json& doc) {
    ExperimentConfig cfg;
    static const std::set<std::string> top_keys = {
        "dataset", "seasonal", "split", "reservoir", "washout",
        "method",  "hyper",    "levels", "n_runs",   "seed"};
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (!top_keys.count(key))
            throw std::invalid_argument("unknown config field '" + key + "'");
    }

    if (doc.contains("dataset")) {
        const nlohmann::json& d = doc.at("dataset");
        static const std::set<std::string> ds_keys = {
            "kind",  "length", "period",     "trend",  "noise_std",
            "path",  "column", "has_header", "exclude"};
        for (const auto& [key, value] : d.items()) {
            (void)value;
            if (!ds_keys.count(key))
                throw std::invalid_argument("unknown dataset field '" + key + "'");
        }
        const std::string kind = d.value("kind", "synthetic");
        if (kind == "synthetic") {
            cfg.dataset.kind = DatasetSpec::Kind::synthetic;
            cfg.dataset.length = d.value("length", cfg.dataset.length);
            cfg.dataset.period = d.value("period", cfg.dataset.period);
            cfg.dataset.trend = d.value("trend", cfg.dataset.trend);
            cfg.dataset.noise_std = d.value("noise_std", cfg.dataset.noise_std);
        } else if (kind == "csv") {
            cfg.dataset.kind = DatasetSpec::Kind::csv;
            cfg.dataset.path = d.at("path").get<std::string>();
            cfg.dataset.column = d.value("column", cfg.dataset.column);
            cfg.dataset.has_header = d.value("has_header", cfg.dataset.has_header);
            if (d.contains("exclude")) {
                for (const auto& pair : d.at("exclude")) {
                    if (!pair.is_array() || pair.size() != 2)
                        throw std::invalid_argument(
                            "exclude entries must be [begin, end) pairs");
                    cfg.dataset.exclude.push_back(
                        {pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
                }
            }
        } else {
            throw std::invalid_argument("dataset kind must be synthetic or csv");
        }
    }
    if (doc.contains("seasonal")) {
        const nlohmann::json& s = doc.at("seasonal");
        cfg.seasonal = SeasonalSpec(s.value("s", 7), s.value("h", 1));
    }
    if (doc.contains("split")) {
        const nlohmann::json& s = doc.at("split");
        cfg.split.train_frac = s.value("train", cfg.split.train_frac);
        cfg.split.cal_frac = s.value("cal", cfg.split.cal_frac);
        cfg.split.test_frac = s.value("test", cfg.split.test_frac);
    }
    if (doc.contains("reservoir")) {
        const nlohmann::json& r = doc.at("reservoir");
        static const std::set<std::string> r_keys = {
            "units", "spectral_radius", "density", "input_scale"};
        for (const auto& [key, value] : r.items()) {
            (void)value;
            if (!r_keys.count(key)) {
                std::string msg = "unknown reservoir field '" + key + "'";
                if (key == "seed")
                    msg += " (the reservoir seed derives from the master seed)";
                throw std::invalid_argument(msg);
            }
        }
        cfg.reservoir.n_units = r.value("units", cfg.reservoir.n_units);
        cfg.reservoir.spectral_radius =
            r.value("spectral_radius", cfg.reservoir.spectral_radius);
        cfg.reservoir.density = r.value("density", cfg.reservoir.density);
        cfg.reservoir.input_scale = r.value("input_scale", cfg.reservoir.input_scale);
    }
    cfg.washout = doc.value("washout", cfg.washout);
    if (doc.contains("method"))
        cfg.method = method_from_string(doc.at("method").get<std::string>());
    if (doc.contains("hyper")) {
        const nlohmann::json& h = doc.at("hyper");
        static const std::set<std::string> h_keys = {
            "layers",    "units",     "activation", "learning_rate",
            "steps",     "batch_size", "dropout_p", "prior",
            "rank",      "warmup",    "samples",    "leapfrog",
            "m_samples", "pca_dim"};
        for (const auto& [key, value] : h.items()) {
            (void)value;
            if (!h_keys.count(key))
                throw std::invalid_argument("unknown hyperparameter '" + key + "'");
            cfg.hyper_keys.push_back(key);
        }
        cfg.hyper.layers = h.value("layers", cfg.hyper.layers);
        cfg.hyper.units = h.value("units", cfg.hyper.units);
        if (h.contains("activation"))
            cfg.hyper.activation =
                activation_from_string(h.at("activation").get<std::string>());
        cfg.hyper.learning_rate = h.value("learning_rate", cfg.hyper.learning_rate);
        cfg.hyper.steps = h.value("steps", cfg.hyper.steps);
        cfg.hyper.batch_size = h.value("batch_size", cfg.hyper.batch_size);
        cfg.hyper.dropout_p = h.value("dropout_p", cfg.hyper.dropout_p);
        if (h.contains("prior"))
            cfg.hyper.prior = PriorSpec::parse(h.at("prior").get<std::string>());
        cfg.hyper.rank = h.value("rank", cfg.hyper.rank);
        cfg.hyper.warmup = h.value("warmup", cfg.hyper.warmup);
        cfg.hyper.samples = h.value("samples", cfg.hyper.samples);
        cfg.hyper.leapfrog = h.value("leapfrog", cfg.hyper.leapfrog);
        cfg.hyper.m_samples = h.value("m_samples", cfg.hyper.m_samples);
        cfg.hyper.pca_dim = h.value("pca_dim", cfg.hyper.pca_dim);
    }
    if (doc.contains("levels"))
        cfg.levels = doc.at("levels").get<std::vector<double>>();
    cfg.n_runs = doc.value("n_runs", cfg.n_runs);
    cfg.seed = doc.value("seed", cfg.seed);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("[config] cannot read " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw std::runtime_error("[config] " + std::string(e.what()));
    }
    return stage("config", [&] { return parse_config(doc); });
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json dataset;
    if (cfg.dataset.kind == DatasetSpec::Kind::synthetic) {
        dataset = {{"kind", "synthetic"},
                   {"length", cfg.dataset.length},
                   {"period", cfg.dataset.period},
                   {"trend", cfg.dataset.trend},
                   {"noise_std", cfg.dataset.noise_std}};
    } else {
        nlohmann::json exclude = nlohmann::json::array();
        for (const ExclusionRange& r : cfg.dataset.exclude)
            exclude.push_back({r.begin, r.end});
        dataset = {{"kind", "csv"},
                   {"path", cfg.dataset.path},
                   {"column", cfg.dataset.column},
                   {"has_header", cfg.dataset.has_header},
                   {"exclude", exclude}};
    }
    return {{"dataset", dataset},
            {"seasonal", {{"s", cfg.seasonal.s}, {"h", cfg.seasonal.h}}},
            {"split",
             {{"train", cfg.split.train_frac},
              {"cal", cfg.split.cal_frac},
              {"test", cfg.split.test_frac}}},
            {"reservoir",
             {{"units", cfg.reservoir.n_units},
              {"spectral_radius", cfg.reservoir.spectral_radius},
              {"density", cfg.reservoir.density},
              {"input_scale", cfg.reservoir.input_scale}}},
            {"washout", cfg.washout},
            {"method", to_string(cfg.method)},
            {"hyper",
             {{"layers", cfg.hyper.layers},
              {"units", cfg.hyper.units},
              {"activation", to_string(cfg.hyper.activation)},
              {"learning_rate", cfg.hyper.learning_rate},
              {"steps", cfg.hyper.steps},
              {"batch_size", cfg.hyper.batch_size},
              {"dropout_p", cfg.hyper.dropout_p},
              {"prior", cfg.hyper.prior.to_string()},
              {"rank", cfg.hyper.rank},
              {"warmup", cfg.hyper.warmup},
              {"samples", cfg.hyper.samples},
              {"leapfrog", cfg.hyper.leapfrog},
              {"m_samples", cfg.hyper.m_samples},
              {"pca_dim", cfg.hyper.pca_dim}}},
            {"levels", cfg.levels},
            {"n_runs", cfg.n_runs},
            {"seed", cfg.seed}};
}

RunReport run_experiment(const ExperimentConfig& cfg, RunArtifacts* artifacts) {
    stage("config", [&] {
        cfg.validate();
        return 0;
    });
    const PipelineContext ctx = prepare_pipeline(cfg);

    RunReport report;
    report.config = cfg;
    std::vector<MetricsReport> finals, raws;
    std::vector<double> times;
    for (int r = 0; r < cfg.n_runs; ++r) {
        SingleRun one = run_once(ctx, cfg, run_seed(cfg.seed, r));
        if (r == 0 && artifacts) {
            artifacts->test_quantiles = one.test_final;
            artifacts->curve_before = one.curve_before;
            artifacts->curve_after = one.curve_after;
            artifacts->test_truths = ctx.test.truths;
        }
        finals.push_back(one.metrics.final);
        raws.push_back(one.metrics.raw);
        times.push_back(one.metrics.train_seconds);
        report.runs.push_back(std::move(one.metrics));
    }
    report.aggregate.mean = report_mean(finals);
    report.aggregate.sd = report_sd(finals, report.aggregate.mean);
    report.aggregate.raw_mean = report_mean(raws);
    report.aggregate.raw_sd = report_sd(raws, report.aggregate.raw_mean);
    double tm = 0.0;
    for (double t : times) tm += t;
    tm /= static_cast<double>(times.size());
    double tv = 0.0;
    for (double t : times) tv += (t - tm) * (t - tm);
    report.aggregate.train_seconds_mean = tm;
    report.aggregate.train_seconds_sd =
        times.size() > 1 ? std::sqrt(tv / (static_cast<double>(times.size()) - 1.0))
                         : 0.0;
    return report;
}

std::size_t GridSpec::size() const {
    std::size_t n = 1;
    for (std::size_t k : {layers.size(), units.size(), activations.size(),
                          learning_rates.size(), dropout_ps.size(), priors.size()})
        if (k > 0) n *= k;
    return n;
}

GridSpec parse_grid(const nlohmann::json& doc) {
    GridSpec grid;
    static const std::set<std::string> keys = {
        "layers", "units", "activations", "learning_rates", "dropout_ps",
        "priors"};
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (!keys.count(key))
            throw std::invalid_argument("unknown grid field '" + key + "'");
    }
    if (doc.contains("layers"))
        grid.layers = doc.at("layers").get<std::vector<int>>();
    if (doc.contains("units"))
        grid.units = doc.at("units").get<std::vector<int>>();
    if (doc.contains("activations"))
        for (const auto& a : doc.at("activations"))
            grid.activations.push_back(activation_from_string(a.get<std::string>()));
    if (doc.contains("learning_rates"))
        grid.learning_rates = doc.at("learning_rates").get<std::vector<double>>();
    if (doc.contains("dropout_ps"))
        grid.dropout_ps = doc.at("dropout_ps").get<std::vector<double>>();
    if (doc.contains("priors"))
        for (const auto& p : doc.at("priors"))
            grid.priors.push_back(PriorSpec::parse(p.get<std::string>()));
    return grid;
}

GridResult grid_search(const GridSpec& grid, const ExperimentConfig& base) {
    stage("config", [&] {
        base.validate();
        return 0;
    });
    if (grid.size() == 0) throw std::runtime_error("[grid] the grid is empty");
    const PipelineContext ctx = prepare_pipeline(base);

    auto add_key = [](std::vector<std::string>& keys, const std::string& key) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            keys.push_back(key);
    };

    std::vector<ExperimentConfig> candidates;
    auto one_or = [](auto list, auto base_value) {
        if (list.empty()) list.push_back(base_value);
        return list;
    };
    for (int layers : one_or(grid.layers, base.hyper.layers))
        for (int units : one_or(grid.units, base.hyper.units))
            for (Activation act : one_or(grid.activations, base.hyper.activation))
                for (double lr :
                     one_or(grid.learning_rates, base.hyper.learning_rate))
                    for (double p : one_or(grid.dropout_ps, base.hyper.dropout_p))
                        for (const PriorSpec& prior :
                             one_or(grid.priors, base.hyper.prior)) {
                            ExperimentConfig c = base;
                            c.hyper.layers = layers;
                            c.hyper.units = units;
                            c.hyper.activation = act;
                            c.hyper.learning_rate = lr;
                            c.hyper.dropout_p = p;
                            c.hyper.prior = prior;
                            if (!grid.layers.empty()) add_key(c.hyper_keys, "layers");
                            if (!grid.units.empty()) add_key(c.hyper_keys, "units");
                            if (!grid.activations.empty())
                                add_key(c.hyper_keys, "activation");
                            if (!grid.learning_rates.empty())
                                add_key(c.hyper_keys, "learning_rate");
                            if (!grid.dropout_ps.empty())
                                add_key(c.hyper_keys, "dropout_p");
                            if (!grid.priors.empty()) add_key(c.hyper_keys, "prior");
                            candidates.push_back(std::move(c));
                        }

    GridResult result;
    std::string last_error = "no candidates";
    for (const ExperimentConfig& c : candidates) {
        try {
            c.validate();
            const SingleRun one = run_once(ctx, c, run_seed(c.seed, 0));
            GridEntry entry;
            entry.config = c;
            entry.val_mse = one.cal_split.mse;
            entry.val_cal = one.cal_split.cal;
            entry.n_params =
                c.method == Method::ssvs
                    ? static_cast<std::size_t>(2 * ctx.state_dim + 2)
                    : param_count(readout_spec(
                          ctx.state_dim, c.hyper,
                          c.method == Method::qr
                              ? static_cast<int>(ctx.levels.size())
                              : 1));
            result.leaderboard.push_back(std::move(entry));
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    if (result.leaderboard.empty())
        throw std::runtime_error("[grid] every candidate failed; last error: " +
                                 last_error);
    std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                     [](const GridEntry& a, const GridEntry& b) {
                         return std::tie(a.val_mse, a.n_params, a.val_cal) <
                                std::tie(b.val_mse, b.n_params, b.val_cal);
                     });
    result.best = result.leaderboard.front().config;
    return result;
}

Comparison compare_methods(const std::vector<ExperimentConfig>& cfgs) {
    if (cfgs.empty()) throw std::runtime_error("[compare] no methods given");
    for (const ExperimentConfig& c : cfgs) {
        const ExperimentConfig& a = cfgs.front();
        const bool same_reservoir =
            c.reservoir.n_units == a.reservoir.n_units &&
            c.reservoir.spectral_radius == a.reservoir.spectral_radius &&
            c.reservoir.density == a.reservoir.density &&
            c.reservoir.input_scale == a.reservoir.input_scale;
        const bool same_split = c.split.train_frac == a.split.train_frac &&
                                c.split.cal_frac == a.split.cal_frac &&
                                c.split.test_frac == a.split.test_frac;
        if (!(c.dataset == a.dataset) || c.seed != a.seed ||
            c.seasonal.s != a.seasonal.s || c.seasonal.h != a.seasonal.h ||
            c.washout != a.washout || !same_reservoir || !same_split)
            throw std::runtime_error(
                "[compare] mismatched dataset specs: all methods must share the "
                "dataset, splits, reservoir and master seed");
    }
    Comparison out;
    for (const ExperimentConfig& c : cfgs) {
        RunArtifacts art;
        out.rows.push_back(run_experiment(c, &art));
        out.artifacts.push_back(std::move(art));
    }
    return out;
}

nlohmann::json report_to_json(const RunReport& report) {
    nlohmann::json runs = nlohmann::json::array();
    for (const RunMetrics& r : report.runs)
        runs.push_back({{"final", metrics_to_json(r.final)},
                        {"raw", metrics_to_json(r.raw)}});
    return {{"config", config_to_json(report.config)},
            {"runs", runs},
            {"aggregate",
             {{"final_mean", metrics_to_json(report.aggregate.mean)},
              {"final_sd", metrics_to_json(report.aggregate.sd)},
              {"raw_mean", metrics_to_json(report.aggregate.raw_mean)},
              {"raw_sd", metrics_to_json(report.aggregate.raw_sd)}}}};
}

nlohmann::json timing_to_json(const RunReport& report) {
    nlohmann::json times = nlohmann::json::array();
    for (const RunMetrics& r : report.runs) times.push_back(r.train_seconds);
    return {{"train_seconds", times},
            {"mean", report.aggregate.train_seconds_mean},
            {"sd", report.aggregate.train_seconds_sd}};
}

void write_run_outputs(const RunReport& report, const RunArtifacts& artifacts,
                       const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_text(out_dir + "/metrics.json", report_to_json(report).dump(2) + "\n");
    write_text(out_dir + "/timing.json", timing_to_json(report).dump(2) + "\n");
    export_quantile_csv(artifacts.test_quantiles, out_dir + "/quantiles_test.csv");
    write_text(out_dir + "/calibration_curve.csv",
               curve_csv(artifacts.curve_before, artifacts.curve_after));
    std::string traj = "t,truth,median,lo025,hi975\n";
    const QuantileForecast& q = artifacts.test_quantiles;
    const std::size_t med = q.levels.index_of(0.5);
    const std::size_t lo = q.levels.index_of(0.025);
    const std::size_t hi = q.levels.index_of(0.975);
    for (Eigen::Index t = 0; t < q.q.rows(); ++t) {
        traj += std::to_string(t) + "," +
                std::to_string(artifacts.test_truths[static_cast<std::size_t>(t)]) +
                "," + std::to_string(q.q(t, static_cast<Eigen::Index>(med))) + "," +
                std::to_string(q.q(t, static_cast<Eigen::Index>(lo))) + "," +
                std::to_string(q.q(t, static_cast<Eigen::Index>(hi))) + "\n";
    }
    write_text(out_dir + "/trajectory_test.csv", traj);
}

void write_comparison_outputs(const Comparison& comparison,
                              const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    nlohmann::json rows = nlohmann::json::array();
    std::string csv =
        "method,mse,cal,cal_raw,width95,coverage95,mcrps,"
        "train_seconds_mean,train_seconds_sd\n";
    for (const RunReport& r : comparison.rows) {
        rows.push_back({{"method", to_string(r.config.method)},
                        {"report", report_to_json(r)},
                        {"timing", timing_to_json(r)}});
        const MetricAggregate& a = r.aggregate;
        csv += to_string(r.config.method) + "," + std::to_string(a.mean.mse) +
               "," + std::to_string(a.mean.cal) + "," +
               std::to_string(a.raw_mean.cal) + "," +
               std::to_string(a.mean.width95) + "," +
               std::to_string(a.mean.coverage95) + "," +
               std::to_string(a.mean.mcrps) + "," +
               std::to_string(a.train_seconds_mean) + "," +
               std::to_string(a.train_seconds_sd) + "\n";
    }
    write_text(out_dir + "/comparison.json",
               nlohmann::json{{"rows", rows}}.dump(2) + "\n");
    write_text(out_dir + "/comparison.csv", csv);

    std::string curves = "method,tau,observed_before,observed_after\n";
    for (std::size_t i = 0; i < comparison.rows.size(); ++i) {
        const RunArtifacts& art = comparison.artifacts[i];
        const std::string name = to_string(comparison.rows[i].config.method);
        for (std::size_t k = 0; k < art.curve_before.taus.size(); ++k) {
            curves += name + "," + std::to_string(art.curve_before.taus[k]) + "," +
                      std::to_string(art.curve_before.observed[k]) + "," +
                      std::to_string(art.curve_after.observed[k]) + "\n";
        }
    }
    write_text(out_dir + "/calibration_curves.csv", curves);

    for (std::size_t i = 0; i < comparison.rows.size(); ++i) {
        const RunReport& rep = comparison.rows[i];
        write_run_outputs(rep, comparison.artifacts[i],
                          out_dir + "/" + to_string(rep.config.method));
    }
}

} // namespace esnuq
