#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "esnuq/forecast.hpp"
#include "esnuq/rng.hpp"

namespace esnuq {

enum class Activation { tanh, relu };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

/**
 * Layer widths from input to output; hidden layers use `activation`,
 * the output layer is linear. Every layer has a bias.
 */
struct MlpSpec {
    std::vector<int> widths;
    Activation activation = Activation::tanh;

    int layers() const { return static_cast<int>(widths.size()) - 1; }
    void validate() const;
};

/** Parameter count: sum over layers of (in+1)*out. */
std::size_t param_count(const MlpSpec& spec);

/**
 * The readout network. Parameters live in one flat vector, laid out layer by
 * layer: the weight matrix (column-major, out x in) then the bias. The flat
 * view is what the samplers and optimizers see; layer views are Eigen maps
 * into it, so the round trip is exact by construction.
 */
struct Mlp {
    MlpSpec spec;
    Eigen::VectorXd params;
};

/** Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases. */
Mlp init_mlp(const MlpSpec& spec, std::uint64_t seed);

/**
 * Bernoulli(keep) 0/1 masks for the input and for every hidden activation.
 * Each mask has `rows` independent rows so a batch can carry one mask per
 * example; rows == 1 means one shared mask broadcast over the batch.
 * Kept activations are divided by p where the mask is applied, so the
 * masked forward is an unbiased estimate of the mask-free one.
 */
struct DropoutMasks {
    std::vector<Eigen::MatrixXd> masks; // [input, hidden_1, ..., hidden_{L-1}]
    double p = 1.0;
};

DropoutMasks sample_masks(const MlpSpec& spec, double p, Rng& rng,
                          Eigen::Index rows = 1);

Eigen::MatrixXd forward_batch(const Mlp& mlp, const Eigen::MatrixXd& x,
                              const DropoutMasks* masks = nullptr);
Eigen::VectorXd forward(const Mlp& mlp, const Eigen::VectorXd& state,
                        const DropoutMasks* masks = nullptr);

struct MseLoss {};
struct PinballLoss {
    QuantileLevels levels;
};
using Loss = std::variant<MseLoss, PinballLoss>;

/** Mean batch loss of predictions against scalar targets. */
double loss_value(const Loss& loss, const Eigen::MatrixXd& pred,
                  const Eigen::VectorXd& y);

/** Gradient of the mean batch loss with respect to the flat parameters. */
Eigen::VectorXd gradient(const Mlp& mlp, const Eigen::MatrixXd& x,
                         const Eigen::VectorXd& y, const Loss& loss,
                         const DropoutMasks* masks = nullptr,
                         double* loss_out = nullptr);

struct OptimizerConfig {
    enum class Kind { sgd, adam };
    enum class Decay { none, linear }; // linear: rate shrinks to 0 over the budget
    Kind kind = Kind::adam;
    double learning_rate = 1e-3;
    Decay decay = Decay::none;
    int steps = 2000;
    int batch_size = 0; // 0 = full batch
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    Mlp model;
    std::vector<double> loss_trace; // loss at each step's evaluation point
};

/**
 * Fixed-budget gradient descent. With dropout_keep < 1 a fresh shared mask
 * set is sampled every step. Aborts with a diagnostic if the loss goes
 * non-finite. Deterministic given the optimizer seed.
 */
TrainResult train_deterministic(const Mlp& init, const Eigen::MatrixXd& x,
                                const Eigen::VectorXd& y, const Loss& loss,
                                const OptimizerConfig& opt,
                                double dropout_keep = 1.0);

/** Flat binary parameter dump plus a JSON sidecar describing the layers. */
void save_mlp(const Mlp& mlp, const std::string& params_path,
              const std::string& spec_path);
Mlp load_mlp(const std::string& params_path, const std::string& spec_path);

} // namespace esnuq
