// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/channel.hpp"

#include <stdexcept>
#include <vector>

namespace bdris {

/// Raised when the training scattering matrix cannot identify Q̄_k.
class UnderdeterminedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kLsRankTolerance = 1e-10;
inline constexpr double kLmmseRegularization = 1e-10;

/// Q̂_k = (1/√P_u)·Y·Φ̃ᴴ(Φ̃Φ̃ᴴ)⁻¹.
///
/// Requires τ ≥ M(M̄+1)/2 and σ_min(Φ̃) > 1e-10·σ_max(Φ̃).
CMatrix ls_estimate(const CMatrix& y, const CMatrix& phi_tilde, double pu);

/// Row-wise LMMSE with a shared column covariance C = E[q̃ᴴq̃] over rows q̃ of Q̄_k:
/// q̂ = ỹ·(P_u·Φ̃ᴴCΦ̃ + σ_eff²·I)⁻¹·√P_u·Φ̃ᴴC, applied to every row ỹ of Y.
///
/// `noise_eff` is the decorrelated noise variance σ²/KU. The covariance is
/// regularized by 1e-10·I. Works for any τ ≥ 1.
CMatrix lmmse_estimate(const CMatrix& y, const CMatrix& phi_tilde, double pu, double noise_eff, const CMatrix& column_cov);

/// One covariance per user, averaged over rows and samples of the split.
std::vector<CMatrix> estimate_column_covariance(const DatasetSplit& split);

/// ‖Q̄ − Q̂‖²_F / ‖Q̄‖²_F for one sample; throws on a zero-norm label.
double sample_nmse(const CascadedChannel& truth, const CascadedChannel& estimate);

struct EstimatorReport {
    CascadedChannel estimate;
    std::vector<double> per_user_nmse;
    std::size_t pilot_slots = 0;
};

EstimatorReport make_report(const CascadedChannel& truth, CascadedChannel estimate, std::size_t pilot_slots);

}  // namespace bdris
