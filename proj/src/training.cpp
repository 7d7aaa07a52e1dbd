// SPDX-License-Identifier: Apache-2.0
#include "bdris/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bdris {

using ad::Tensor;
using ad::Var;

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid train config: " + what); };
    if (batch_size < 1) fail("batch size must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam moments must lie in [0, 1)");
    if (!(epsilon > 0.0)) fail("epsilon must be positive");
    if (max_epochs < 1) fail("max epochs must be >= 1");
    if (pu_hi_dbm < pu_lo_dbm) fail("P_u interval must satisfy lo <= hi");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr decay must lie in (0, 1]");
}

double TrainConfig::eval_power() const { return std::isnan(eval_pu_dbm) ? 0.5 * (pu_lo_dbm + pu_hi_dbm) : eval_pu_dbm; }

Var mse_loss(const Var& estimate, const Tensor& labels) {
    if (estimate.shape() != labels.shape())
        throw ad::ShapeError("mse_loss: estimate " + ad::to_string(estimate.shape()) + " vs labels " +
                             ad::to_string(labels.shape()));
    const Var diff = ad::sub(estimate, Var::constant(labels));
    return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(labels.size()));
}

double nmse(const std::vector<CascadedChannel>& truth, const std::vector<CascadedChannel>& estimate) {
    if (truth.empty()) throw std::invalid_argument("nmse needs at least one sample");
    if (truth.size() != estimate.size()) throw std::invalid_argument("nmse: sample count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) total += sample_nmse(truth[i], estimate[i]);
    return total / static_cast<double>(truth.size());
}

SnrReport snr_report(const ChannelPair& ch, const ScatteringMatrix& phi, double pu, double noise, const SystemConfig& cfg) {
    SnrReport rep;
    const double denom = static_cast<double>(cfg.rx_dims()) * noise;
    double mean = 0.0;
    for (std::size_t k = 0; k < cfg.users; ++k) {
        const double snr = pu * effective_channel(ch, phi, k, cfg).squaredNorm() / denom;
        rep.per_user_db.push_back(10.0 * std::log10(snr));
        mean += snr;
    }
    rep.average_db = 10.0 * std::log10(mean / static_cast<double>(cfg.users));
    return rep;
}

Adam::Adam(ParamStore& store, double lr, double beta1, double beta2, double eps)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& item : store_.items()) {
        m_.emplace_back(item.second.size(), 0.0);
        v_.emplace_back(item.second.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& items = store_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        Var& p = items[i].second;
        if (p.grad().size() == 0) continue;
        double* w = p.mutable_value().ptr();
        const double* g = p.grad().ptr();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

namespace {

std::vector<double> batch_nmse(const Tensor& estimate, const Batch& batch, const NormStats& norm) {
    const std::size_t inner = batch.q_re.size() / batch.size;
    const double g = std::sqrt(norm.label_gain);
    std::vector<double> out(batch.size);
    for (std::size_t i = 0; i < batch.size; ++i) {
        double err = 0.0, ref = 0.0;
        for (std::size_t j = 0; j < inner; ++j) {
            const double re = batch.q_re[i * inner + j], im = batch.q_im[i * inner + j];
            const double dr = re - g * estimate[(2 * i) * inner + j];
            const double di = im - g * estimate[(2 * i + 1) * inner + j];
            err += dr * dr + di * di;
            ref += re * re + im * im;
        }
        if (!(ref > 0.0)) throw std::invalid_argument("nmse: zero-norm label");
        out[i] = err / ref;
    }
    return out;
}

std::vector<Tensor> snapshot(const ParamStore& store) {
    std::vector<Tensor> out;
    for (const auto& item : store.items()) out.push_back(item.second.value());
    return out;
}

void restore(ParamStore& store, const std::vector<Tensor>& values) {
    auto& items = store.items();
    for (std::size_t i = 0; i < items.size(); ++i) items[i].second.mutable_value() = values[i];
}

bool params_finite(const ParamStore& store) {
    for (const auto& [name, p] : store.items())
        for (double v : p.value().data())
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

double evaluate_pipeline(const ModelBundle& bundle, const DatasetSplit& split, double pu_dbm, std::uint64_t noise_seed,
                         std::size_t batch_size) {
    if (split.samples.empty()) throw std::invalid_argument("evaluation needs a nonempty split");
    double total = 0.0;
    for (std::size_t start = 0; start < split.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, split.size() - start);
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), start);
        const Batch batch = make_batch(split, idx, std::vector<double>(n, pu_dbm), noise_seed);
        const PipelineOutput out = forward_pipeline(bundle, batch);
        for (double v : batch_nmse(out.estimate.value(), batch, bundle.norm)) total += v;
    }
    return total / static_cast<double>(split.size());
}

std::vector<CascadedChannel> estimate_with_protocol(const ModelBundle& bundle, const DatasetSplit& split, double pu_dbm,
                                                    std::uint64_t noise_seed) {
    SystemConfig cfg = bundle.system;
    cfg.pu_watts = dbm_to_watts(pu_dbm);
    const PhaseTwoDesigner designer = make_designer(bundle);
    std::vector<CascadedChannel> out;
    out.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        const NoiseSource noise(derive_seed(noise_seed, {i}));
        const SessionResult res = two_phase_session(split.samples[i].channels, bundle.phase1, designer, cfg, noise);
        out.push_back(dace_forward(bundle, res.phase2, pu_dbm));
    }
    return out;
}

ModelBundle train_joint(const DatasetSplit& train, const DatasetSplit& val, const ModelConfig& mc, const TrainConfig& tc,
                        TrainLog* log, const EpochCallback& on_epoch) {
    tc.validate();
    if (train.samples.empty() || val.samples.empty()) throw std::invalid_argument("training needs nonempty splits");
    ModelBundle bundle = ModelBundle::create(train.system, mc, derive_seed(tc.seed, {1}), derive_seed(tc.seed, {2}),
                                             tc.pu_lo_dbm, tc.pu_hi_dbm);
    bundle.norm = fit_norm_stats(train, bundle, derive_seed(tc.seed, {3}));

    Adam adam(bundle.params, tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon);
    TrainLog local;
    TrainLog& lg = log ? *log : local;
    lg = TrainLog{};

    std::vector<Tensor> best = snapshot(bundle.params);
    double best_nmse = std::numeric_limits<double>::infinity();
    double plateau_ref = best_nmse;
    std::size_t wait = 0;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
        Rng rng(derive_seed(tc.seed, {4, epoch}));
        std::shuffle(order.begin(), order.end(), rng.engine());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batches) {
            const std::size_t n = std::min(tc.batch_size, order.size() - start);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + n));
            std::vector<double> pu(n);
            for (auto& p : pu) p = rng.uniform(tc.pu_lo_dbm, tc.pu_hi_dbm);
            const Batch batch = make_batch(train, idx, pu, derive_seed(tc.seed, {5, epoch, batches}));
            // I + jZ0B is invertible for any finite real B; a singular pivot
            // here means the weights have blown up.
            PipelineOutput out;
            try {
                out = forward_pipeline(bundle, batch);
            } catch (const ad::SingularMatrixError& e) {
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            const Var loss = mse_loss(out.estimate, normalized_labels(batch, bundle.norm));
            const double lv = loss.value()[0];
            if (!std::isfinite(lv))
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
            bundle.params.zero_grad();
            ad::backward(loss);
            adam.step();
            if (!params_finite(bundle.params))
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": non-finite parameters");
            loss_sum += lv;
        }
        lg.steps = adam.steps();
        const double epoch_loss = loss_sum / static_cast<double>(batches);
        const double v = evaluate_pipeline(bundle, val, tc.eval_power(), derive_seed(tc.seed, {6}));
        lg.epoch_loss.push_back(epoch_loss);
        lg.val_nmse.push_back(v);
        if (on_epoch) on_epoch(epoch, epoch_loss, v);
        if (!std::isfinite(v)) throw DivergenceError("validation NMSE is not finite");
        if (v < best_nmse) {
            best_nmse = v;
            best = snapshot(bundle.params);
            lg.best_epoch = epoch;
        }
        if (v < plateau_ref - tc.min_delta) {
            plateau_ref = v;
            wait = 0;
        } else if (++wait >= tc.patience) {
            break;
        }
        adam.set_learning_rate(adam.learning_rate() * tc.lr_decay);
    }
    restore(bundle.params, best);
    bundle.params.zero_grad();
    return bundle;
}

}  // namespace bdris
