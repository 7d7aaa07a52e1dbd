// SPDX-License-Identifier: Apache-2.0
#include "bdris/estimators.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <string>

namespace bdris {

CMatrix ls_estimate(const CMatrix& y, const CMatrix& phi_tilde, double pu) {
    const Eigen::Index s = phi_tilde.rows(), tau = phi_tilde.cols();
    if (y.cols() != tau) throw std::invalid_argument("ls_estimate: observation width must equal tau");
    if (tau < s)
        throw UnderdeterminedError("LS needs tau >= " + std::to_string(s) + " subframes, got " + std::to_string(tau));
    const Eigen::JacobiSVD<CMatrix> svd(phi_tilde);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= kLsRankTolerance * sv(0))
        throw UnderdeterminedError("training scattering matrix is rank deficient");
    const CMatrix gram = phi_tilde * phi_tilde.adjoint();
    // Y Φ̃ᴴ (Φ̃Φ̃ᴴ)⁻¹ = ((Φ̃Φ̃ᴴ)⁻¹ Φ̃ Yᴴ)ᴴ since the Gram matrix is Hermitian.
    const CMatrix rhs = phi_tilde * y.adjoint();
    return gram.ldlt().solve(rhs).adjoint() / std::sqrt(pu);
}

CMatrix lmmse_estimate(const CMatrix& y, const CMatrix& phi_tilde, double pu, double noise_eff, const CMatrix& column_cov) {
    const Eigen::Index s = phi_tilde.rows(), tau = phi_tilde.cols();
    if (y.cols() != tau) throw std::invalid_argument("lmmse_estimate: observation width must equal tau");
    if (column_cov.rows() != s || column_cov.cols() != s) throw std::invalid_argument("lmmse_estimate: covariance size");
    const CMatrix c = column_cov + kLmmseRegularization * CMatrix::Identity(s, s);
    const CMatrix cphi = c * phi_tilde;  // C Φ̃
    CMatrix gram = pu * phi_tilde.adjoint() * cphi;
    gram.diagonal().array() += noise_eff;
    // q̂ = ỹ G⁻¹ √P Φ̃ᴴC  →  Q̂ = Y (G⁻¹ √P Φ̃ᴴ C) with G Hermitian.
    const CMatrix w = gram.ldlt().solve(std::sqrt(pu) * cphi.adjoint());
    return y * w;
}

std::vector<CMatrix> estimate_column_covariance(const DatasetSplit& split) {
    if (split.samples.empty()) throw std::invalid_argument("covariance needs a nonempty split");
    const std::size_t users = split.system.users;
    const auto s = static_cast<Eigen::Index>(split.system.coeffs());
    std::vector<CMatrix> cov(users, CMatrix::Zero(s, s));
    double rows = 0.0;
    for (const auto& sample : split.samples) {
        for (std::size_t k = 0; k < users; ++k) {
            const CMatrix& q = sample.cascaded.per_user[k];
            cov[k].noalias() += q.adjoint() * q;  // Σ_rows q̃ᴴq̃
        }
        rows += static_cast<double>(sample.cascaded.per_user[0].rows());
    }
    for (auto& c : cov) c /= rows;
    return cov;
}

double sample_nmse(const CascadedChannel& truth, const CascadedChannel& estimate) {
    if (truth.users() != estimate.users()) throw std::invalid_argument("nmse: user count mismatch");
    double err = 0.0, ref = 0.0;
    for (std::size_t k = 0; k < truth.users(); ++k) {
        err += (truth.per_user[k] - estimate.per_user[k]).squaredNorm();
        ref += truth.per_user[k].squaredNorm();
    }
    if (!(ref > 0.0)) throw std::invalid_argument("nmse: zero-norm label");
    return err / ref;
}

EstimatorReport make_report(const CascadedChannel& truth, CascadedChannel estimate, std::size_t pilot_slots) {
    EstimatorReport rep;
    for (std::size_t k = 0; k < truth.users(); ++k) {
        const double ref = truth.per_user[k].squaredNorm();
        if (!(ref > 0.0)) throw std::invalid_argument("nmse: zero-norm label");
        rep.per_user_nmse.push_back((truth.per_user[k] - estimate.per_user[k]).squaredNorm() / ref);
    }
    rep.estimate = std::move(estimate);
    rep.pilot_slots = pilot_slots;
    return rep;
}

}  // namespace bdris
