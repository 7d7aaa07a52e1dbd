// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/physics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bdris {

/// Clustered geometric channel model with half-wavelength uniform linear arrays
/// at the BS, the RIS and every user.
///
/// H_IT is Rician with a LoS component and cluster centers drawn once from
/// `geometry_seed`. With `static_it` the ray terms are drawn from the geometry
/// stream too; otherwise they change per sample.
/// H_RI,k mixes `shared_clusters` terms whose angles are common to all users of
/// a sample with `private_clusters` per user, plus a dominant steering term in
/// the LoS state.
struct ChannelModelConfig {
    double rician_k_it = 1.0;
    /// BS and RIS are fixed infrastructure: H_IT is identical across samples.
    bool static_it = true;
    double rician_k_los = 4.0;
    double rician_k_nlos = 0.0;
    std::size_t clusters_it = 2;       // L_c
    std::size_t shared_clusters = 2;   // C_sh
    std::size_t private_clusters = 1;  // C_pr
    std::size_t rays_per_cluster = 4;
    double angle_spread = 0.05;  // radians
    double p_los = 0.5;
    std::uint64_t geometry_seed = 7;

    void validate() const;

    /// Two fixed presets used to emulate scenario mismatch.
    static ChannelModelConfig preset(const std::string& name);
};

/// Half-wavelength ULA response exp(jπ·i·sin θ), unit-modulus entries.
CVector steering(std::size_t elements, double angle);

CMatrix sample_h_it(const SystemConfig& cfg, const ChannelModelConfig& model, std::uint64_t seed);
CMatrix sample_h_ri(const SystemConfig& cfg, const ChannelModelConfig& model, std::size_t user, std::uint64_t seed);
ChannelPair sample_channels(const SystemConfig& cfg, const ChannelModelConfig& model, std::uint64_t seed);

enum class SplitRole : std::uint32_t { train = 0, validation = 1, test = 2 };
std::string to_string(SplitRole role);
SplitRole parse_role(const std::string& s);

struct Sample {
    ChannelPair channels;
    CascadedChannel cascaded;
};

struct DatasetSplit {
    SystemConfig system;
    ChannelModelConfig model;
    SplitRole role = SplitRole::train;
    std::uint64_t seed_base = 0;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

/// Sample i is a pure function of (configs, seed + i).
DatasetSplit build_dataset(const SystemConfig& cfg, const ChannelModelConfig& model, std::size_t count, SplitRole role,
                           std::uint64_t seed);

/// Scalar standardization statistics and the label gain, all from the training split.
struct NormStats {
    double pilot_mean = 0.0;
    double pilot_std = 1.0;
    double label_gain = 1.0;  // mean of ‖Q̄‖²_F / N_tot
};

/// Total real coefficients N_tot = NUKM(M̄+1).
std::size_t real_label_count(const SystemConfig& cfg);

/// `observations` are real and imaginary pilot entries pooled over the
/// training split (any layout). Throws on an empty split or zero spread.
NormStats compute_norm_stats(const DatasetSplit& train, const std::vector<double>& observations);

}  // namespace bdris
