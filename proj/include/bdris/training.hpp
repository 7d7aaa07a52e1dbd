// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/estimators.hpp"
#include "bdris/models.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace bdris {

struct TrainConfig {
    std::size_t batch_size = 64;
    double learning_rate = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t max_epochs = 15;
    std::size_t patience = 10;
    double min_delta = 1e-4;
    /// Multiplies the learning rate after every epoch.
    double lr_decay = 1.0;
    std::uint64_t seed = 1;
    double pu_lo_dbm = 5.0;
    double pu_hi_dbm = 25.0;
    /// Validation NMSE is measured at this power; NaN means the interval midpoint.
    double eval_pu_dbm = std::numeric_limits<double>::quiet_NaN();

    void validate() const;
    double eval_power() const;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Batch mean of ‖est − labels‖²_F / N_tot; both in normalized units.
ad::Var mse_loss(const ad::Var& estimate, const ad::Tensor& labels);

/// Mean of per-sample ‖Q̄ − Q̂‖²_F / ‖Q̄‖²_F.
double nmse(const std::vector<CascadedChannel>& truth, const std::vector<CascadedChannel>& estimate);

struct SnrReport {
    std::vector<double> per_user_db;
    double average_db = 0.0;
};

/// SNR_k = P_u‖H_IT Φ H_RI,k‖²_F / (NU·σ²); the average is over users in
/// linear scale and then converted to dB.
SnrReport snr_report(const ChannelPair& ch, const ScatteringMatrix& phi, double pu, double noise, const SystemConfig& cfg);

class Adam {
public:
    Adam(ParamStore& store, double lr, double beta1, double beta2, double eps);
    void step();
    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }
    std::size_t steps() const { return t_; }

private:
    ParamStore& store_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainLog {
    std::vector<double> epoch_loss;
    std::vector<double> val_nmse;
    std::size_t best_epoch = 0;
    std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss, double val_nmse)>;

/// Joint end-to-end training of both networks (or the estimator alone when
/// `mc.tsmo_enabled` is false). Returns the bundle with the best validation
/// NMSE seen. Deterministic in `tc.seed`.
ModelBundle train_joint(const DatasetSplit& train, const DatasetSplit& val, const ModelConfig& mc, const TrainConfig& tc,
                        TrainLog* log = nullptr, const EpochCallback& on_epoch = {});

/// Batched pipeline NMSE over a split at one power with seeded noise.
double evaluate_pipeline(const ModelBundle& bundle, const DatasetSplit& split, double pu_dbm, std::uint64_t noise_seed,
                         std::size_t batch_size = 128);

/// Full protocol evaluation: per-subframe physics for both phases, designer
/// and estimator from the bundle. Returns the per-sample estimates.
std::vector<CascadedChannel> estimate_with_protocol(const ModelBundle& bundle, const DatasetSplit& split, double pu_dbm,
                                                    std::uint64_t noise_seed);

}  // namespace bdris
