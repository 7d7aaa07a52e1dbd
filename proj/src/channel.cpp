// SPDX-License-Identifier: Apache-2.0
#include "bdris/channel.hpp"

#include "bdris/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace bdris {

namespace {

constexpr double kSector = std::numbers::pi / 3.0;  // angles drawn in ±60°

// Rician weights (LoS, scattered). Infinite K keeps only the LoS term.
std::pair<double, double> rician_weights(double k) {
    if (std::isinf(k)) return {1.0, 0.0};
    return {std::sqrt(k / (k + 1.0)), std::sqrt(1.0 / (k + 1.0))};
}

struct Cluster {
    double center_a;
    double center_b;
};

// One cluster of rays between arrays of size na and nb, E‖·‖²_F = na·nb.
CMatrix cluster_term(std::size_t na, std::size_t nb, const Cluster& c, double spread, std::size_t rays, Rng& rng) {
    CMatrix h = CMatrix::Zero(static_cast<Eigen::Index>(na), static_cast<Eigen::Index>(nb));
    const double var = 1.0 / static_cast<double>(rays);
    for (std::size_t r = 0; r < rays; ++r) {
        const double ta = c.center_a + spread * rng.normal();
        const double tb = c.center_b + spread * rng.normal();
        const auto g = rng.cgauss(var);
        h.noalias() += g * steering(na, ta) * steering(nb, tb).transpose();
    }
    return h;
}

}  // namespace

void ChannelModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid channel model config: " + what); };
    if (p_los < 0.0 || p_los > 1.0) fail("p_los must be in [0, 1]");
    if (clusters_it < 1) fail("clusters_it must be >= 1");
    if (shared_clusters + private_clusters < 1) fail("need at least one user-side cluster");
    if (rays_per_cluster < 1) fail("rays_per_cluster must be >= 1");
    if (rician_k_it < 0.0 || rician_k_los < 0.0 || rician_k_nlos < 0.0) fail("Rician factors must be >= 0");
    if (angle_spread < 0.0) fail("angle_spread must be >= 0");
}

ChannelModelConfig ChannelModelConfig::preset(const std::string& name) {
    ChannelModelConfig c;
    if (name == "preset-A") return c;
    if (name == "preset-B") {
        // Richer scattering, weaker geometric components.
        c.rician_k_it = 3.0;
        c.rician_k_los = 1.0;
        c.clusters_it = 4;
        c.shared_clusters = 3;
        c.private_clusters = 3;
        c.angle_spread = 0.15;
        c.geometry_seed = 11;
        return c;
    }
    throw std::invalid_argument("unknown channel preset: " + name);
}

CVector steering(std::size_t elements, double angle) {
    CVector a(static_cast<Eigen::Index>(elements));
    const double s = std::numbers::pi * std::sin(angle);
    for (std::size_t i = 0; i < elements; ++i) a(static_cast<Eigen::Index>(i)) = std::polar(1.0, s * static_cast<double>(i));
    return a;
}

CMatrix sample_h_it(const SystemConfig& cfg, const ChannelModelConfig& model, std::uint64_t seed) {
    const std::size_t n = cfg.bs_antennas, m = cfg.ris_elements;
    Rng geo(derive_seed(model.geometry_seed, {1}));
    const double los_bs = geo.uniform(-kSector, kSector);
    const double los_ris = geo.uniform(-kSector, kSector);
    std::vector<Cluster> clusters(model.clusters_it);
    for (auto& c : clusters) c = {geo.uniform(-kSector, kSector), geo.uniform(-kSector, kSector)};

    const auto [w_los, w_nlos] = rician_weights(model.rician_k_it);
    CMatrix h = w_los * steering(n, los_bs) * steering(m, los_ris).transpose();
    if (w_nlos == 0.0) return h;
    // A static link draws its rays from the geometry stream, so every sample shares them.
    Rng rng(model.static_it ? derive_seed(model.geometry_seed, {2}) : derive_seed(seed, {2}));
    const double norm = w_nlos / std::sqrt(static_cast<double>(clusters.size()));
    for (const auto& c : clusters) h += norm * cluster_term(n, m, c, model.angle_spread, model.rays_per_cluster, rng);
    // A single shared realization carries the average energy exactly.
    if (model.static_it) h *= std::sqrt(static_cast<double>(n * m)) / h.norm();
    return h;
}

CMatrix sample_h_ri(const SystemConfig& cfg, const ChannelModelConfig& model, std::size_t user, std::uint64_t seed) {
    const std::size_t m = cfg.ris_elements, u = cfg.user_antennas;
    // RIS-side cluster centers common to every user of this sample.
    Rng shared(derive_seed(seed, {3}));
    std::vector<double> shared_ris(model.shared_clusters);
    for (auto& a : shared_ris) a = shared.uniform(-kSector, kSector);

    Rng rng(derive_seed(seed, {4, user}));
    const bool los = rng.uniform() < model.p_los;
    const auto [w_los, w_nlos] = rician_weights(los ? model.rician_k_los : model.rician_k_nlos);
    const double los_ris = rng.uniform(-kSector, kSector);
    const double los_user = rng.uniform(-kSector, kSector);
    const double los_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    CMatrix h = CMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(u));
    if (w_los > 0.0) h += w_los * std::polar(1.0, los_phase) * steering(m, los_ris) * steering(u, los_user).transpose();
    if (w_nlos == 0.0) return h;

    const double norm = w_nlos / std::sqrt(static_cast<double>(model.shared_clusters + model.private_clusters));
    for (double center : shared_ris) {
        const Cluster c{center, rng.uniform(-kSector, kSector)};
        h += norm * cluster_term(m, u, c, model.angle_spread, model.rays_per_cluster, rng);
    }
    for (std::size_t p = 0; p < model.private_clusters; ++p) {
        const Cluster c{rng.uniform(-kSector, kSector), rng.uniform(-kSector, kSector)};
        h += norm * cluster_term(m, u, c, model.angle_spread, model.rays_per_cluster, rng);
    }
    return h;
}

ChannelPair sample_channels(const SystemConfig& cfg, const ChannelModelConfig& model, std::uint64_t seed) {
    ChannelPair ch;
    ch.h_it = sample_h_it(cfg, model, seed);
    ch.h_ri.resize(static_cast<Eigen::Index>(cfg.ris_elements), static_cast<Eigen::Index>(cfg.pilot_length()));
    for (std::size_t k = 0; k < cfg.users; ++k)
        ch.h_ri.middleCols(static_cast<Eigen::Index>(k * cfg.user_antennas), static_cast<Eigen::Index>(cfg.user_antennas)) =
            sample_h_ri(cfg, model, k, seed);
    return ch;
}

std::string to_string(SplitRole role) {
    switch (role) {
        case SplitRole::train: return "train";
        case SplitRole::validation: return "val";
        case SplitRole::test: return "test";
    }
    return "?";
}

SplitRole parse_role(const std::string& s) {
    if (s == "train") return SplitRole::train;
    if (s == "val" || s == "validation") return SplitRole::validation;
    if (s == "test") return SplitRole::test;
    throw std::invalid_argument("unknown split role: " + s);
}

DatasetSplit build_dataset(const SystemConfig& cfg, const ChannelModelConfig& model, std::size_t count, SplitRole role,
                           std::uint64_t seed) {
    cfg.validate();
    model.validate();
    if (count == 0) throw std::invalid_argument("dataset count must be >= 1");
    DatasetSplit split;
    split.system = cfg;
    split.model = model;
    split.role = role;
    split.seed_base = seed;
    split.samples.resize(count);
    const MappingP p = build_mapping(cfg.group_size());
    // Hashing the base keeps splits with nearby seeds or different roles disjoint.
    const std::uint64_t base = derive_seed(seed, {static_cast<std::uint64_t>(role)});
    for (std::size_t i = 0; i < count; ++i) {
        Sample& s = split.samples[i];
        s.channels = sample_channels(cfg, model, base + i);
        s.cascaded = assemble_cascaded(s.channels, p, cfg);
    }
    return split;
}

std::size_t real_label_count(const SystemConfig& cfg) {
    return cfg.rx_dims() * cfg.users * cfg.ris_elements * (cfg.group_size() + 1);
}

NormStats compute_norm_stats(const DatasetSplit& train, const std::vector<double>& observations) {
    if (train.samples.empty()) throw std::invalid_argument("norm stats need a nonempty training split");
    if (observations.empty()) throw std::invalid_argument("norm stats need pilot observations");
    NormStats st;
    double mean = 0.0;
    for (double v : observations) mean += v;
    mean /= static_cast<double>(observations.size());
    double var = 0.0;
    for (double v : observations) var += (v - mean) * (v - mean);
    var /= static_cast<double>(observations.size());
    if (!(var > 0.0)) throw std::invalid_argument("degenerate pilot observations: zero standard deviation");
    st.pilot_mean = mean;
    st.pilot_std = std::sqrt(var);

    const double n_tot = static_cast<double>(real_label_count(train.system));
    double gain = 0.0;
    for (const auto& s : train.samples) gain += s.cascaded.frobenius_sq() / n_tot;
    st.label_gain = gain / static_cast<double>(train.samples.size());
    if (!(st.label_gain > 0.0)) throw std::invalid_argument("degenerate labels: zero channel gain");
    return st;
}

}  // namespace bdris
