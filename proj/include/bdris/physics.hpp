// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/autodiff.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bdris {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;

double dbm_to_watts(double dbm);
double watts_to_dbm(double watts);

/// System dimensions and physical constants.
///
/// `pu_watts` is the per-antenna uplink power and `noise_watts` the receiver
/// noise power, both linear. Counts must be at least one and `ris_elements`
/// must split evenly into `groups`.
struct SystemConfig {
    std::size_t bs_antennas = 4;    // N
    std::size_t ris_elements = 8;   // M
    std::size_t groups = 2;         // G
    std::size_t users = 2;          // K
    std::size_t user_antennas = 2;  // U
    std::size_t tau1 = 1;
    std::size_t tau2 = 8;
    double pu_watts = 1e-3;
    double noise_watts = 1e-3;
    double z0 = 50.0;

    std::size_t group_size() const { return ris_elements / groups; }
    /// Unique entries per symmetric group block, M̄(M̄+1)/2.
    std::size_t group_coeffs() const { return group_size() * (group_size() + 1) / 2; }
    /// Unique scattering coefficients over all groups, M(M̄+1)/2.
    std::size_t coeffs() const { return groups * group_coeffs(); }
    std::size_t rx_dims() const { return bs_antennas * user_antennas; }  // NU
    std::size_t pilot_length() const { return users * user_antennas; }    // KU

    void validate() const;
};

/// Binary duplication matrix P for one symmetric M̄×M̄ group, stored as one
/// half-vector index per entry of vec(Φ_g).
///
/// Half-vector order is column-major over the upper triangle including the
/// diagonal: (0,0), (0,1), (1,1), (0,2), (1,2), (2,2), ...
class MappingP {
public:
    explicit MappingP(std::size_t group_size);

    std::size_t group_size() const { return m_; }
    std::size_t half_size() const { return m_ * (m_ + 1) / 2; }

    /// Half index of the unordered pair {i, j}.
    std::size_t half_index(std::size_t i, std::size_t j) const;

    /// rows()[r] is the half index of vec entry r (column-major vec).
    const std::vector<std::size_t>& rows() const { return rows_; }
    /// For each half entry, the row-major offset of its (i <= j) position.
    const std::vector<std::size_t>& upper_offsets() const { return upper_; }
    /// How many vec entries map to each half entry (1 on the diagonal, 2 off it).
    std::vector<std::size_t> column_multiplicity() const;

    /// Dense P (M̄² × M̄(M̄+1)/2), for tests and documentation.
    RMatrix dense() const;

private:
    std::size_t m_;
    std::vector<std::size_t> rows_;
    std::vector<std::size_t> upper_;
};

MappingP build_mapping(std::size_t group_size);

/// Symmetric M̄×M̄ matrix with vec(result) = P·half.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> expand_half(const Eigen::MatrixBase<Derived>& half,
                                                                                     const MappingP& p);

/// Diagonal and upper-triangular entries in half-vector order.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> extract_half(const Eigen::MatrixBase<Derived>& full,
                                                                        const MappingP& p);

/// Per-group scattering blocks Φ_g.
struct ScatteringMatrix {
    std::vector<CMatrix> blocks;

    CMatrix full() const;
    /// φ̄ = [φ̄_1; …; φ̄_G], length M(M̄+1)/2.
    CVector half_vector(const MappingP& p) const;
    /// max_g ‖Φ_gᴴΦ_g − I‖_F
    double unitarity_error() const;
    /// max_g ‖Φ_g − Φ_gᵀ‖_F
    double symmetry_error() const;
};

inline constexpr double kUnitarityTolerance = 1e-9;
inline constexpr double kSymmetryTolerance = 1e-12;

bool is_feasible(const ScatteringMatrix& s);

/// Half-vectorized susceptances, one column per subframe, in Siemens.
struct SusceptanceParams {
    RMatrix values;  // M(M̄+1)/2 × τ

    std::size_t subframes() const { return static_cast<std::size_t>(values.cols()); }
};

/// Φ = (I + jZ0B)⁻¹(I − jZ0B) for a batch of blocks.
///
/// Input holds the dimensionless products Z0·B with shape [..., M̄, M̄] (real
/// symmetric). Built from cinverse and cmatmul so gradients reach the input.
ad::ComplexPair susceptance_to_scattering(const ad::Var& z0_b);

/// Value-level conversion of one real symmetric block in Siemens.
CMatrix susceptance_to_scattering(const RMatrix& b, double z0);

/// Converts column `t` of the half-vectorized susceptances.
ScatteringMatrix scattering_from_susceptance(const SusceptanceParams& s, std::size_t t, const SystemConfig& cfg,
                                             const MappingP& p);

/// Random susceptances with i.i.d. N(0, 1/Z0²) half-vector entries.
SusceptanceParams random_susceptances(const SystemConfig& cfg, std::size_t subframes, std::uint64_t seed);
ScatteringMatrix random_feasible_scattering(const SystemConfig& cfg, std::uint64_t seed);

/// Φ̃ = [φ̄¹, …, φ̄^τ] for every column of `s`.
CMatrix training_scattering_matrix(const SusceptanceParams& s, const SystemConfig& cfg, const MappingP& p);

struct ChannelPair {
    CMatrix h_it;  // N × M
    CMatrix h_ri;  // M × KU

    /// H_RI,k, the M×U slice of user k.
    CMatrix user(std::size_t k, std::size_t user_antennas) const;
};

/// Reduced-coefficient cascaded channel Q̄ with one NU × M(M̄+1)/2 matrix per user.
///
/// Row index of Q̄_k is u·N + n, matching vec(H_eff,k).
struct CascadedChannel {
    std::vector<CMatrix> per_user;

    std::size_t users() const { return per_user.size(); }
    double frobenius_sq() const;
    /// Row-major [NU][K][S] real and imaginary parts.
    void write_tensor(double* re, double* im) const;
    static CascadedChannel from_tensor(const double* re, const double* im, std::size_t nu, std::size_t k,
                                       std::size_t s);
};

CascadedChannel assemble_cascaded(const ChannelPair& ch, const MappingP& p, const SystemConfig& cfg);

/// H_IT Φ H_RI,k computed directly.
CMatrix effective_channel(const ChannelPair& ch, const ScatteringMatrix& phi, std::size_t k, const SystemConfig& cfg);

/// vec⁻¹(Q̄_k φ̄) as an N×U matrix.
CMatrix effective_channel_reduced(const CascadedChannel& q, const CVector& phi_bar, std::size_t k,
                                  const SystemConfig& cfg);

// ---------------------------------------------------------------------------

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> expand_half(const Eigen::MatrixBase<Derived>& half,
                                                                                     const MappingP& p) {
    if (static_cast<std::size_t>(half.size()) != p.half_size())
        throw std::invalid_argument("expand_half: expected " + std::to_string(p.half_size()) + " entries");
    const auto m = static_cast<Eigen::Index>(p.group_size());
    Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(m, m);
    const auto& rows = p.rows();
    for (Eigen::Index c = 0; c < m; ++c)
        for (Eigen::Index r = 0; r < m; ++r) out(r, c) = half(static_cast<Eigen::Index>(rows[c * m + r]));
    return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> extract_half(const Eigen::MatrixBase<Derived>& full,
                                                                        const MappingP& p) {
    const auto m = static_cast<Eigen::Index>(p.group_size());
    if (full.rows() != m || full.cols() != m) throw std::invalid_argument("extract_half: block size mismatch");
    Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> out(static_cast<Eigen::Index>(p.half_size()));
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i <= j; ++i) out(static_cast<Eigen::Index>(p.half_index(i, j))) = full(i, j);
    return out;
}

}  // namespace bdris
