#pragma once
#include "heatsim/nbe_net.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace heatsim {

struct TrainingSet {
    BundleShape shape;
    int years = 0;
    std::uint64_t seed = 0;
    int n_train = 0, n_val = 0, n_holdout = 0;
    std::vector<float> x;         // count rows of flat_len
    std::vector<float> y;         // count rows of 8, normalized to the box
    std::vector<std::uint8_t> ok; // generation succeeded
    std::vector<int> skipped;

    int count() const { return n_train + n_val + n_holdout; }
    std::uint64_t digest() const;
};

struct GenerateConfig {
    int years = 40;
    int n_train = 20000, n_val = 500, n_holdout = 200;
    SummaryConfig summary;
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string checkpoint_path; // empty disables checkpointing
    int checkpoint_every = 500;
};

TrainingSet generate_training_set(const PriorBox& box, const GridDomain& domain, int D,
                                  const GenerateConfig& cfg);

struct TrainConfig {
    int max_epochs = 200;
    int batch = 128;
    double lr = 1e-3;
    int patience = 10;
    std::uint64_t seed = 1;
};

struct TrainCurves {
    std::vector<double> train_loss, val_loss;
    int best_epoch = -1;
    double best_val = 0.0;
};

TrainCurves train(EstimatorNet& net, const TrainingSet& set, const TrainConfig& cfg);

struct HoldoutDiagnostics {
    std::array<double, 8> rmse{}, bias{}, rank_corr{}; // raw parameter scale
    std::array<double, 8> mse_norm{};                  // normalized scale
    // rank correlation within terciles of the true mixture weight (low, mid, high)
    std::array<std::array<double, 3>, 8> rank_corr_by_delta{};
    // wrapped-angle error of the anisotropy direction, split by true stretch
    double omega_err_low_eta = 0.0, omega_err_high_eta = 0.0;
    std::vector<std::array<double, 8>> truth, pred;    // scatter tables, raw scale
};

HoldoutDiagnostics holdout_diagnostics(const EstimatorNet& net, const TrainingSet& set);

struct BootstrapResult {
    std::array<double, 8> lo{}, hi{}, median{};
    std::vector<std::array<double, 8>> replicates;
};

BootstrapResult parametric_bootstrap(const EstimatorNet& net, const DepParams& fitted, int B,
                                     int years, const GridDomain& domain, int D,
                                     const SummaryConfig& scfg, double alpha = 0.05,
                                     std::uint64_t seed = 1, int jobs = 1);

} // namespace heatsim
