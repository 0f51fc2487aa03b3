#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "esnuq/mc_dropout.hpp"
#include "esnuq/rng.hpp"

using namespace esnuq;

namespace {

Eigen::MatrixXd random_states(int rows, int cols, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd x(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) x(i, j) = gauss(rng);
    return x;
}

// Fit a small readout so the sampling tests run against a trained network.
Mlp trained_net(const Eigen::MatrixXd& x, std::uint64_t seed) {
    Eigen::VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        y[i] = std::sin(x(i, 0)) + 0.5 * x(i, 1);
    MlpSpec spec;
    spec.widths = {static_cast<int>(x.cols()), 16, 1};
    OptimizerConfig opt;
    opt.learning_rate = 0.01;
    opt.steps = 800;
    opt.seed = seed;
    return train_deterministic(init_mlp(spec, seed), x, y, MseLoss{}, opt, 0.8).model;
}

double mean_row_sd(const EnsembleForecast& e) {
    double acc = 0.0;
    for (Eigen::Index t = 0; t < e.samples.rows(); ++t) {
        const double mean = e.samples.row(t).mean();
        const double var =
            (e.samples.row(t).array() - mean).square().sum() /
            static_cast<double>(e.samples.cols() - 1);
        acc += std::sqrt(var);
    }
    return acc / static_cast<double>(e.samples.rows());
}

} // namespace

TEST_CASE("keep-everything sampling collapses to the deterministic forward") {
    const Eigen::MatrixXd x = random_states(10, 4, 1);
    const Mlp net = trained_net(x, 2);
    const EnsembleForecast e = predict_mc_dropout(net, x, 1.0, 20, 5);
    const Eigen::VectorXd det = forward_batch(net, x).col(0);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        for (int j = 0; j < 20; ++j)
            CHECK(e.samples(t, j) == doctest::Approx(det[t]).epsilon(1e-15));
        const double var =
            (e.samples.row(t).array() - e.samples.row(t).mean()).square().sum();
        CHECK(var == doctest::Approx(0.0));
    }
}

TEST_CASE("ensemble shape and source tag") {
    const Eigen::MatrixXd x = random_states(7, 3, 3);
    MlpSpec spec;
    spec.widths = {3, 8, 1};
    const Mlp net = init_mlp(spec, 4);
    const EnsembleForecast e = predict_mc_dropout(net, x, 0.6, 33, 9);
    CHECK(e.samples.rows() == 7);
    CHECK(e.samples.cols() == 33);
    CHECK(e.source == "dropout");
    CHECK(e.samples.allFinite());
}

TEST_CASE("stronger dropout widens the ensemble") {
    const Eigen::MatrixXd x = random_states(30, 4, 5);
    const Mlp net = trained_net(x, 6);
    const EnsembleForecast narrow = predict_mc_dropout(net, x, 0.9, 200, 11);
    const EnsembleForecast wide = predict_mc_dropout(net, x, 0.5, 200, 11);
    CHECK(mean_row_sd(wide) > mean_row_sd(narrow));
}

TEST_CASE("sampling is deterministic in the seed") {
    const Eigen::MatrixXd x = random_states(5, 3, 7);
    MlpSpec spec;
    spec.widths = {3, 6, 1};
    const Mlp net = init_mlp(spec, 8);
    const EnsembleForecast a = predict_mc_dropout(net, x, 0.7, 25, 13);
    const EnsembleForecast b = predict_mc_dropout(net, x, 0.7, 25, 13);
    CHECK(a.samples == b.samples);
    const EnsembleForecast c = predict_mc_dropout(net, x, 0.7, 25, 14);
    CHECK(a.samples != c.samples);
}

TEST_CASE("monte carlo means agree across independent runs") {
    const Eigen::MatrixXd x = random_states(12, 4, 9);
    const Mlp net = trained_net(x, 10);
    const int m = 400;
    const EnsembleForecast a = predict_mc_dropout(net, x, 0.7, m, 101);
    const EnsembleForecast b = predict_mc_dropout(net, x, 0.7, m, 202);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double mean_a = a.samples.row(t).mean();
        const double mean_b = b.samples.row(t).mean();
        const double sd =
            std::sqrt((a.samples.row(t).array() - mean_a).square().sum() / (m - 1));
        // difference of two independent M-sample means: sd * sqrt(2/M), 3-sigma
        CHECK(std::abs(mean_a - mean_b) <= 3.0 * sd * std::sqrt(2.0 / m) + 1e-12);
    }
}

TEST_CASE("invalid arguments rejected") {
    const Eigen::MatrixXd x = random_states(3, 2, 11);
    MlpSpec spec;
    spec.widths = {2, 4, 1};
    const Mlp net = init_mlp(spec, 12);
    CHECK_THROWS(predict_mc_dropout(net, x, 0.0, 10, 1));
    CHECK_THROWS(predict_mc_dropout(net, x, 1.2, 10, 1));
    CHECK_THROWS(predict_mc_dropout(net, x, 0.5, 0, 1));
    MlpSpec wide;
    wide.widths = {2, 4, 3};
    CHECK_THROWS(predict_mc_dropout(init_mlp(wide, 1), x, 0.5, 10, 1));
}
