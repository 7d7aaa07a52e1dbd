// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/physics.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace bdris {

/// DFT pilot book: X is KU×KU with entries exp(−j2πmn/KU); user k owns rows
/// kU … kU+U−1, so X_{k1}X_{k2}ᴴ = KU·I_U when k1 = k2 and 0 otherwise.
struct PilotBook {
    CMatrix x;
    std::size_t users = 0;
    std::size_t user_antennas = 0;

    CMatrix user(std::size_t k) const;
};

PilotBook build_pilot_book(std::size_t users, std::size_t user_antennas);

/// Counter-based noise: the stream for (phase, subframe) depends only on the
/// session seed, so reordering or skipping subframes never shifts other draws.
class NoiseSource {
public:
    explicit NoiseSource(std::uint64_t seed, bool enabled = true) : seed_(seed), enabled_(enabled) {}

    /// N×cols matrix of CN(0, variance) entries for one subframe.
    CMatrix draw(std::size_t phase, std::size_t subframe, std::size_t rows, std::size_t cols, double variance) const;
    bool enabled() const { return enabled_; }

private:
    std::uint64_t seed_;
    bool enabled_;
};

/// Yᵗ = √P_u·H_IT·Φᵗ·H_RI·X + Nᵗ  (N × KU)
CMatrix transmit_subframe(const ChannelPair& ch, const ScatteringMatrix& phi, const PilotBook& book, double pu,
                          const CMatrix& noise);

/// Y_kᵗ = (1/KU)·Yᵗ·X_kᴴ  (N × U)
CMatrix decorrelate(const CMatrix& y, const CMatrix& x_k, std::size_t pilot_length);

enum class Phase : std::uint32_t { one = 1, two = 2 };

/// Stacked decorrelated observations of one phase.
struct PhaseObservation {
    Phase phase = Phase::one;
    std::vector<CMatrix> per_user;  // NU × τ, column t = vec(Y_kᵗ)
    SusceptanceParams susceptances;
    std::vector<ScatteringMatrix> scattering;

    std::size_t subframes() const { return per_user.empty() ? 0 : static_cast<std::size_t>(per_user[0].cols()); }
    /// Row-major [NU][K][τ] real and imaginary parts.
    void write_tensor(double* re, double* im) const;
};

/// Simulates every subframe physically and stacks the decorrelated results.
PhaseObservation run_phase(const ChannelPair& ch, const SusceptanceParams& susceptances, Phase phase,
                           const PilotBook& book, const SystemConfig& cfg, const NoiseSource& noise);

/// Noiseless √P_u·Q̄_k·Φ̃ for every user; the linear model the estimators rely on.
std::vector<CMatrix> linear_model(const CascadedChannel& q, const CMatrix& phi_tilde, double pu);

/// Maps the Phase-I observation (and P_u in dBm) to Phase-II susceptances.
using PhaseTwoDesigner = std::function<SusceptanceParams(const PhaseObservation&, double pu_dbm)>;

struct SessionResult {
    PhaseObservation phase1;
    PhaseObservation phase2;
    /// Pilot slots KU(τ1+τ2); control latency is reported separately.
    std::size_t pilot_slots = 0;
    std::size_t control_slots = 0;
};

SessionResult two_phase_session(const ChannelPair& ch, const SusceptanceParams& phase1, const PhaseTwoDesigner& designer,
                                const SystemConfig& cfg, const NoiseSource& noise, std::size_t control_slots = 0);

}  // namespace bdris
