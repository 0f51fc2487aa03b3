#include "esnuq/mlp.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace esnuq {

Activation activation_from_string(const std::string& name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation '" + name + "' (tanh | relu)");
}

std::string to_string(Activation a) {
    return a == Activation::tanh ? "tanh" : "relu";
}

void MlpSpec::validate() const {
    if (widths.size() < 2)
        throw std::invalid_argument("network needs at least an input and an output layer");
    for (int w : widths)
        if (w < 1) throw std::invalid_argument("layer widths must be positive");
}

std::size_t param_count(const MlpSpec& spec) {
    spec.validate();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l)
        n += static_cast<std::size_t>(spec.widths[l] + 1) * spec.widths[l + 1];
    return n;
}

namespace {

struct LayerView {
    Eigen::Map<const Eigen::MatrixXd> w;
    Eigen::Map<const Eigen::VectorXd> b;
};

// Map layer l of a flat parameter vector. Layout: per layer, weights
// (column-major out x in) then bias.
LayerView layer_view(const MlpSpec& spec, const Eigen::VectorXd& params, int l) {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k)
        off += static_cast<std::size_t>(spec.widths[k] + 1) * spec.widths[k + 1];
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    return LayerView{
        Eigen::Map<const Eigen::MatrixXd>(params.data() + off, out, in),
        Eigen::Map<const Eigen::VectorXd>(params.data() + off + std::size_t(out) * in,
                                          out)};
}

std::size_t layer_offset(const MlpSpec& spec, int l) {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k)
        off += static_cast<std::size_t>(spec.widths[k] + 1) * spec.widths[k + 1];
    return off;
}

// Multiply activations by the (already 1/p-scaled) mask. A mask with one row
// is broadcast over the batch.
void apply_mask(Eigen::MatrixXd* a, const Eigen::MatrixXd& scaled_mask) {
    if (scaled_mask.rows() == 1) {
        a->array().rowwise() *= scaled_mask.row(0).array();
    } else {
        if (scaled_mask.rows() != a->rows())
            throw std::invalid_argument("dropout mask batch size mismatch");
        a->array() *= scaled_mask.array();
    }
}

struct ForwardCache {
    // activations[l] is the (masked, if applicable) input fed to layer l;
    // activations[L] is the network output.
    std::vector<Eigen::MatrixXd> activations;
    // derivative of the hidden activation function at each hidden layer output
    std::vector<Eigen::MatrixXd> act_grad;
    // scaled masks actually applied, empty when running mask-free
    std::vector<Eigen::MatrixXd> scaled_masks;
};

Eigen::MatrixXd run_forward(const Mlp& mlp, const Eigen::MatrixXd& x,
                            const DropoutMasks* masks, ForwardCache* cache) {
    const MlpSpec& spec = mlp.spec;
    spec.validate();
    const int layers = spec.layers();
    if (x.cols() != spec.widths.front())
        throw std::invalid_argument("input width does not match the network");
    if (mlp.params.size() != static_cast<Eigen::Index>(param_count(spec)))
        throw std::invalid_argument("parameter vector has the wrong length");
    if (masks) {
        if (!(masks->p > 0.0 && masks->p <= 1.0))
            throw std::invalid_argument("keep probability must lie in (0,1]");
        if (static_cast<int>(masks->masks.size()) != layers)
            throw std::invalid_argument("expected one mask per maskable activation");
    }

    Eigen::MatrixXd a = x;
    if (cache) {
        cache->activations.clear();
        cache->act_grad.clear();
        cache->scaled_masks.assign(layers, Eigen::MatrixXd());
    }

    if (masks) {
        const Eigen::MatrixXd m = masks->masks[0] / masks->p;
        apply_mask(&a, m);
        if (cache) cache->scaled_masks[0] = m;
    }
    if (cache) cache->activations.push_back(a);

    for (int l = 0; l < layers; ++l) {
        const LayerView layer = layer_view(spec, mlp.params, l);
        Eigen::MatrixXd z =
            (a * layer.w.transpose()).rowwise() + layer.b.transpose();
        if (l + 1 < layers) {
            if (spec.activation == Activation::tanh) {
                a = z.array().tanh().matrix();
                if (cache)
                    cache->act_grad.push_back((1.0 - a.array().square()).matrix());
            } else {
                a = z.cwiseMax(0.0);
                if (cache)
                    cache->act_grad.push_back(
                        (z.array() > 0.0).cast<double>().matrix());
            }
            if (masks) {
                const Eigen::MatrixXd m = masks->masks[l + 1] / masks->p;
                apply_mask(&a, m);
                if (cache) cache->scaled_masks[l + 1] = m;
            }
        } else {
            a = std::move(z); // linear output layer
        }
        if (cache) cache->activations.push_back(a);
    }
    return a;
}

double pinball_slope(double r, double tau) {
    if (r > 0.0) return tau;
    if (r < 0.0) return tau - 1.0;
    return 0.0;
}

} // namespace

Mlp init_mlp(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    Mlp mlp;
    mlp.spec = spec;
    mlp.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(spec)));
    Rng rng = make_rng(seed);
    for (int l = 0; l < spec.layers(); ++l) {
        const int in = spec.widths[l];
        const int out = spec.widths[l + 1];
        const double limit = std::sqrt(6.0 / (in + out));
        std::uniform_real_distribution<double> glorot(-limit, limit);
        const std::size_t off = layer_offset(spec, l);
        for (std::size_t i = 0; i < std::size_t(out) * in; ++i)
            mlp.params[static_cast<Eigen::Index>(off + i)] = glorot(rng);
        // biases stay zero
    }
    return mlp;
}

DropoutMasks sample_masks(const MlpSpec& spec, double p, Rng& rng,
                          Eigen::Index rows) {
    spec.validate();
    if (!(p > 0.0 && p <= 1.0))
        throw std::invalid_argument("keep probability must lie in (0,1]");
    if (rows < 1) throw std::invalid_argument("mask row count must be >= 1");
    std::bernoulli_distribution keep(p);
    DropoutMasks out;
    out.p = p;
    for (int l = 0; l < spec.layers(); ++l) {
        Eigen::MatrixXd m(rows, spec.widths[l]);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (int j = 0; j < spec.widths[l]; ++j)
                m(i, j) = keep(rng) ? 1.0 : 0.0;
        out.masks.push_back(std::move(m));
    }
    return out;
}

Eigen::MatrixXd forward_batch(const Mlp& mlp, const Eigen::MatrixXd& x,
                              const DropoutMasks* masks) {
    return run_forward(mlp, x, masks, nullptr);
}

Eigen::VectorXd forward(const Mlp& mlp, const Eigen::VectorXd& state,
                        const DropoutMasks* masks) {
    return run_forward(mlp, state.transpose(), masks, nullptr).row(0);
}

double loss_value(const Loss& loss, const Eigen::MatrixXd& pred,
                  const Eigen::VectorXd& y) {
    if (pred.rows() != y.size())
        throw std::invalid_argument("prediction/target batch size mismatch");
    if (pred.rows() == 0) throw std::invalid_argument("empty batch");
    if (std::holds_alternative<MseLoss>(loss)) {
        if (pred.cols() != 1)
            throw std::invalid_argument("squared-error loss expects one output head");
        return (pred.col(0) - y).squaredNorm() / static_cast<double>(y.size());
    }
    const auto& pin = std::get<PinballLoss>(loss);
    if (pred.cols() != static_cast<Eigen::Index>(pin.levels.size()))
        throw std::invalid_argument("one output head per quantile level required");
    double total = 0.0;
    for (Eigen::Index t = 0; t < pred.rows(); ++t) {
        for (Eigen::Index k = 0; k < pred.cols(); ++k) {
            const double r = y[t] - pred(t, k);
            const double tau = pin.levels.taus[static_cast<std::size_t>(k)];
            total += tau * std::max(r, 0.0) + (1.0 - tau) * std::max(-r, 0.0);
        }
    }
    return total / (static_cast<double>(pred.rows()) * pred.cols());
}

Eigen::VectorXd gradient(const Mlp& mlp, const Eigen::MatrixXd& x,
                         const Eigen::VectorXd& y, const Loss& loss,
                         const DropoutMasks* masks, double* loss_out) {
    if (x.rows() == 0) throw std::invalid_argument("empty batch");
    ForwardCache cache;
    const Eigen::MatrixXd pred = run_forward(mlp, x, masks, &cache);
    if (loss_out) *loss_out = loss_value(loss, pred, y);

    // dL/d(pred)
    Eigen::MatrixXd g(pred.rows(), pred.cols());
    if (std::holds_alternative<MseLoss>(loss)) {
        if (pred.cols() != 1)
            throw std::invalid_argument("squared-error loss expects one output head");
        g.col(0) = 2.0 * (pred.col(0) - y) / static_cast<double>(y.size());
    } else {
        const auto& pin = std::get<PinballLoss>(loss);
        if (pred.cols() != static_cast<Eigen::Index>(pin.levels.size()))
            throw std::invalid_argument("one output head per quantile level required");
        const double scale = static_cast<double>(pred.rows()) * pred.cols();
        for (Eigen::Index t = 0; t < pred.rows(); ++t)
            for (Eigen::Index k = 0; k < pred.cols(); ++k)
                g(t, k) = -pinball_slope(
                              y[t] - pred(t, k),
                              pin.levels.taus[static_cast<std::size_t>(k)]) /
                          scale;
    }

    const MlpSpec& spec = mlp.spec;
    const int layers = spec.layers();
    Eigen::VectorXd grad =
        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(spec)));
    for (int l = layers - 1; l >= 0; --l) {
        const LayerView layer = layer_view(spec, mlp.params, l);
        const Eigen::MatrixXd& a_in = cache.activations[static_cast<std::size_t>(l)];
        const std::size_t off = layer_offset(spec, l);
        const int in = spec.widths[l];
        const int out = spec.widths[l + 1];

        Eigen::Map<Eigen::MatrixXd>(grad.data() + off, out, in) =
            g.transpose() * a_in;
        Eigen::Map<Eigen::VectorXd>(grad.data() + off + std::size_t(out) * in, out) =
            g.colwise().sum();

        if (l > 0) {
            g = g * layer.w; // gradient w.r.t. the masked activation below
            if (!cache.scaled_masks.empty() && cache.scaled_masks[l].size() > 0)
                apply_mask(&g, cache.scaled_masks[static_cast<std::size_t>(l)]);
            g.array() *= cache.act_grad[static_cast<std::size_t>(l - 1)].array();
        }
    }
    return grad;
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("learning rate must be positive");
    if (steps < 1) throw std::invalid_argument("step budget must be >= 1");
    if (batch_size < 0) throw std::invalid_argument("batch size must be >= 0");
}

TrainResult train_deterministic(const Mlp& init, const Eigen::MatrixXd& x,
                                const Eigen::VectorXd& y, const Loss& loss,
                                const OptimizerConfig& opt, double dropout_keep) {
    opt.validate();
    if (x.rows() == 0) throw std::invalid_argument("empty training set");
    if (x.rows() != y.size())
        throw std::invalid_argument("feature/target row count mismatch");
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
        throw std::invalid_argument("keep probability must lie in (0,1]");

    TrainResult result;
    result.model = init;
    result.loss_trace.reserve(static_cast<std::size_t>(opt.steps));

    Rng rng = make_rng(opt.seed);
    const Eigen::Index n = x.rows();
    const bool minibatch = opt.batch_size > 0 && opt.batch_size < n;
    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);

    const Eigen::Index dim = result.model.params.size();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Eigen::MatrixXd xb;
    Eigen::VectorXd yb;
    for (int step = 0; step < opt.steps; ++step) {
        const Eigen::MatrixXd* xs = &x;
        const Eigen::VectorXd* ys = &y;
        if (minibatch) {
            // Sample a random subset without replacement each step.
            for (Eigen::Index i = 0; i < opt.batch_size; ++i) {
                std::uniform_int_distribution<std::size_t> pick(
                    static_cast<std::size_t>(i), all.size() - 1);
                std::swap(all[static_cast<std::size_t>(i)], all[pick(rng)]);
            }
            xb.resize(opt.batch_size, x.cols());
            yb.resize(opt.batch_size);
            for (int i = 0; i < opt.batch_size; ++i) {
                xb.row(i) = x.row(all[static_cast<std::size_t>(i)]);
                yb[i] = y[all[static_cast<std::size_t>(i)]];
            }
            xs = &xb;
            ys = &yb;
        }

        DropoutMasks masks;
        const DropoutMasks* mask_ptr = nullptr;
        if (dropout_keep < 1.0) {
            masks = sample_masks(result.model.spec, dropout_keep, rng);
            mask_ptr = &masks;
        }

        double loss_now = 0.0;
        const Eigen::VectorXd g =
            gradient(result.model, *xs, *ys, loss, mask_ptr, &loss_now);
        if (!std::isfinite(loss_now))
            throw std::runtime_error(
                "training diverged: non-finite loss at step " + std::to_string(step));
        result.loss_trace.push_back(loss_now);

        double lr = opt.learning_rate;
        if (opt.decay == OptimizerConfig::Decay::linear)
            lr *= 1.0 - static_cast<double>(step) / opt.steps;

        if (opt.kind == OptimizerConfig::Kind::sgd) {
            result.model.params -= lr * g;
        } else {
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
            const double t = step + 1;
            const double mhat = 1.0 - std::pow(beta1, t);
            const double vhat = 1.0 - std::pow(beta2, t);
            result.model.params.array() -=
                lr * (m.array() / mhat) / ((v.array() / vhat).sqrt() + eps);
        }
    }
    return result;
}

void save_mlp(const Mlp& mlp, const std::string& params_path,
              const std::string& spec_path) {
    std::ofstream bin(params_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + params_path);
    bin.write(reinterpret_cast<const char*>(mlp.params.data()),
              static_cast<std::streamsize>(sizeof(double) * mlp.params.size()));

    nlohmann::json spec;
    spec["widths"] = mlp.spec.widths;
    spec["activation"] = to_string(mlp.spec.activation);
    spec["param_count"] = param_count(mlp.spec);
    std::ofstream js(spec_path);
    if (!js) throw std::runtime_error("cannot write " + spec_path);
    js << spec.dump(2) << '\n';
}

Mlp load_mlp(const std::string& params_path, const std::string& spec_path) {
    std::ifstream js(spec_path);
    if (!js) throw std::runtime_error("cannot read " + spec_path);
    nlohmann::json spec = nlohmann::json::parse(js);
    Mlp mlp;
    mlp.spec.widths = spec.at("widths").get<std::vector<int>>();
    mlp.spec.activation = activation_from_string(spec.at("activation").get<std::string>());
    mlp.spec.validate();

    const auto n = param_count(mlp.spec);
    mlp.params.resize(static_cast<Eigen::Index>(n));
    std::ifstream bin(params_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot read " + params_path);
    bin.read(reinterpret_cast<char*>(mlp.params.data()),
             static_cast<std::streamsize>(sizeof(double) * n));
    if (static_cast<std::size_t>(bin.gcount()) != sizeof(double) * n)
        throw std::runtime_error(params_path + " is shorter than the layer spec requires");
    return mlp;
}

} // namespace esnuq
