// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/autodiff.hpp"
#include "bdris/channel.hpp"
#include "bdris/protocol.hpp"
#include "bdris/random.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bdris {

/// Architecture hyperparameters shared by the optimizer and the estimator.
struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t d_ff = 64;
    std::size_t heads = 2;
    std::size_t intra_layers = 2;  // N_A1
    std::size_t inter_layers = 2;  // N_A2
    std::vector<std::size_t> ffc_widths{128, 128, 128};
    std::size_t d_group = 128;
    double xi = 1000.0;
    bool positional_encoding = true;
    /// When false the Phase-II susceptances are a fixed random draw (DACEN).
    bool tsmo_enabled = true;

    void validate(const SystemConfig& sys) const;
};

/// Ordered, named learnable tensors.
class ParamStore {
public:
    ad::Var& add(std::string name, ad::Tensor init);
    /// Glorot-uniform matrix, bound sqrt(6/(fan_in+fan_out)).
    ad::Var& add_weight(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng);
    ad::Var& add_bias(std::string name, std::size_t n) { return add(std::move(name), ad::Tensor({n}, 0.0)); }

    const ad::Var& get(const std::string& name) const;
    ad::Var& get(const std::string& name);
    bool contains(const std::string& name) const;

    std::vector<std::pair<std::string, ad::Var>>& items() { return items_; }
    const std::vector<std::pair<std::string, ad::Var>>& items() const { return items_; }
    std::size_t count() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, ad::Var>> items_;
};

/// [p, 2j] = sin(p / ξ^{2j/d}), [p, 2j+1] = cos(p / ξ^{2j/d}).
ad::Tensor sinusoidal_pe(std::size_t positions, std::size_t d_model, double xi);

/// Scaled dot-product self-attention over x[B, E, d]. Head n uses columns
/// [n·d_k, (n+1)·d_k) of wq, wk and wv. When `weights` is non-null it receives
/// the softmax matrices as [B·heads, E, E].
ad::Var mhsa(const ad::Var& x, const ad::Var& wq, const ad::Var& wk, const ad::Var& wv, const ad::Var& wo,
             std::size_t heads, ad::Tensor* weights = nullptr);

struct AttentionParams {
    ad::Var ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;

    static AttentionParams create(ParamStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_ff,
                                  Rng& rng);
};

/// Pre-LN block: x + MHSA(LN(x)), then + FF(LN(·)).
ad::Var attention_block(const ad::Var& x, const AttentionParams& p, std::size_t heads);

/// Training scattering matrix optimizer: FC stack, group split, shared group head.
class Tsmo {
public:
    Tsmo() = default;
    Tsmo(ParamStore& store, const SystemConfig& sys, const ModelConfig& mc, Rng& rng);

    /// x[B, 2·NU·K·τ1] standardized pilots, pu[B, 1] standardized power
    /// -> raw outputs [B, M(M̄+1)/2, τ2], read as Z0·B.
    ad::Var forward(const ad::Var& pilots, const ad::Var& pu) const;

    std::size_t input_width() const { return input_width_; }

private:
    std::vector<ad::Var> w_, b_;
    ad::Var wg1_, bg1_, wg2_, bg2_;
    std::size_t input_width_ = 0, groups_ = 0, group_coeffs_ = 0, tau2_ = 0;
};

/// Dual-attention channel estimator.
class Dace {
public:
    Dace() = default;
    Dace(ParamStore& store, const SystemConfig& sys, const ModelConfig& mc, Rng& rng);

    /// x[B, 2, NU, K, τ2] -> normalized estimate [B, 2, NU, K, M(M̄+1)/2].
    ad::Var forward(const ad::Var& x) const;

    /// Pieces exposed for structural tests.
    ad::Var embed(const ad::Var& x) const;
    ad::Var intra_branch(const ad::Var& emb) const;
    ad::Var inter_branch(const ad::Var& emb) const;

private:
    struct Branch {
        ad::Var ln_g, ln_b, down_w, down_b, up_w, up_b;
        std::vector<AttentionParams> blocks;
        ad::Tensor pe;  // [E·d]
    };
    ad::Var run_branch(const Branch& br, const ad::Var& tokens) const;

    ad::Var emb_w1_, emb_b1_, emb_w2_, emb_b2_;
    Branch intra_, inter_;
    ad::Var fuse_w1_, fuse_b1_, fuse_w2_, fuse_b2_, out_w_, out_b_;
    std::size_t nu_ = 0, k_ = 0, d_ = 0, heads_ = 0, coeffs_ = 0;
};

/// Everything needed to run the trained pipeline.
struct ModelBundle {
    SystemConfig system;
    ModelConfig model;
    NormStats norm;
    std::uint64_t phase1_seed = 0;
    SusceptanceParams phase1;          // frozen Phase-I susceptances (Siemens), width τ1
    SusceptanceParams phase2_fixed;    // used only when the optimizer is disabled
    double pu_lo_dbm = 0.0;
    double pu_hi_dbm = 0.0;
    ParamStore params;
    Tsmo tsmo;
    Dace dace;

    /// Fresh bundle with Glorot initialization drawn from `init_seed`.
    static ModelBundle create(const SystemConfig& sys, const ModelConfig& mc, std::uint64_t init_seed,
                              std::uint64_t phase1_seed, double pu_lo_dbm, double pu_hi_dbm);
    /// Recreate the layers over an existing parameter store (after loading).
    void bind_layers();

    double pu_feature(double pu_dbm) const;
    std::size_t pilot_slots() const { return system.pilot_length() * (system.tau1 + system.tau2); }
};

/// One mini-batch of labels, powers and pre-drawn decorrelated noise.
/// Layouts are row-major [B, NU, K, ·].
struct Batch {
    std::size_t size = 0;
    ad::Tensor q_re, q_im;    // [B, NU, K, S]
    std::vector<double> pu_dbm;
    ad::Tensor n1_re, n1_im;  // [B, NU, K, τ1]
    ad::Tensor n2_re, n2_im;  // [B, NU, K, τ2]
};

/// Assembles a batch; noise has per-entry variance σ²/KU and is a pure
/// function of `noise_seed` and the sample index, so the batch partition
/// does not change the draws.
Batch make_batch(const DatasetSplit& split, const std::vector<std::size_t>& indices, const std::vector<double>& pu_dbm,
                 std::uint64_t noise_seed, bool with_noise = true);

struct PipelineOutput {
    ad::Var estimate;         // normalized, [B, 2, NU, K, S]
    ad::ComplexPair phi2;     // Phase-II training scattering matrix [B, S, τ2] or [S, τ2]
    ad::Var susceptance;      // TSMO output (Z0·B), empty when disabled
};

/// Phase I (fixed scattering) → optimizer → converter → Phase II linear model
/// → estimator, differentiable end to end.
PipelineOutput forward_pipeline(const ModelBundle& bundle, const Batch& batch);

/// Normalized labels [B, 2, NU, K, S] (divided by √label_gain).
ad::Tensor normalized_labels(const Batch& batch, const NormStats& norm);

/// Phase-I statistics for the training split: pools the real and imaginary
/// parts of noisy Phase-I observations, divided by √P_u, with P_u drawn in the
/// bundle interval.
NormStats fit_norm_stats(const DatasetSplit& train, const ModelBundle& bundle, std::uint64_t seed);

/// Inference entry points over protocol observations.
SusceptanceParams tsmo_forward(const ModelBundle& bundle, const PhaseObservation& phase1, double pu_dbm);
CascadedChannel dace_forward(const ModelBundle& bundle, const PhaseObservation& phase2, double pu_dbm);

/// Phase-II designer backed by the bundle (TSMO or the fixed draw).
PhaseTwoDesigner make_designer(const ModelBundle& bundle);

}  // namespace bdris
