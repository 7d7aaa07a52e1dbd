// SPDX-License-Identifier: Apache-2.0
#include "bdris/physics.hpp"

#include "bdris/random.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bdris {

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
double watts_to_dbm(double watts) { return 10.0 * std::log10(watts) + 30.0; }

void SystemConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid system config: " + what); };
    if (bs_antennas < 1 || ris_elements < 1 || groups < 1 || users < 1 || user_antennas < 1)
        fail("all counts must be >= 1");
    if (ris_elements % groups != 0) fail("M must equal G * group size");
    if (tau1 < 1 || tau2 < 1) fail("tau1 and tau2 must be >= 1");
    if (!(pu_watts > 0.0) || !(noise_watts > 0.0)) fail("P_u and noise power must be positive");
    if (!(z0 > 0.0)) fail("Z0 must be positive");
}

MappingP::MappingP(std::size_t group_size) : m_(group_size) {
    if (m_ < 1) throw std::invalid_argument("group size must be >= 1");
    rows_.resize(m_ * m_);
    for (std::size_t c = 0; c < m_; ++c)
        for (std::size_t r = 0; r < m_; ++r) rows_[c * m_ + r] = half_index(r, c);
    upper_.resize(half_size());
    for (std::size_t j = 0; j < m_; ++j)
        for (std::size_t i = 0; i <= j; ++i) upper_[half_index(i, j)] = i * m_ + j;
}

std::size_t MappingP::half_index(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return j * (j + 1) / 2 + i;
}

std::vector<std::size_t> MappingP::column_multiplicity() const {
    std::vector<std::size_t> mult(half_size(), 0);
    for (auto r : rows_) ++mult[r];
    return mult;
}

RMatrix MappingP::dense() const {
    RMatrix p = RMatrix::Zero(static_cast<Eigen::Index>(m_ * m_), static_cast<Eigen::Index>(half_size()));
    for (std::size_t r = 0; r < rows_.size(); ++r) p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(rows_[r])) = 1.0;
    return p;
}

MappingP build_mapping(std::size_t group_size) { return MappingP(group_size); }

CMatrix ScatteringMatrix::full() const {
    Eigen::Index m = 0;
    for (const auto& b : blocks) m += b.rows();
    CMatrix out = CMatrix::Zero(m, m);
    Eigen::Index off = 0;
    for (const auto& b : blocks) {
        out.block(off, off, b.rows(), b.cols()) = b;
        off += b.rows();
    }
    return out;
}

CVector ScatteringMatrix::half_vector(const MappingP& p) const {
    const auto h = static_cast<Eigen::Index>(p.half_size());
    CVector out(h * static_cast<Eigen::Index>(blocks.size()));
    for (std::size_t g = 0; g < blocks.size(); ++g) out.segment(static_cast<Eigen::Index>(g) * h, h) = extract_half(blocks[g], p);
    return out;
}

double ScatteringMatrix::unitarity_error() const {
    double worst = 0.0;
    for (const auto& b : blocks)
        worst = std::max(worst, (b.adjoint() * b - CMatrix::Identity(b.rows(), b.cols())).norm());
    return worst;
}

double ScatteringMatrix::symmetry_error() const {
    double worst = 0.0;
    for (const auto& b : blocks) worst = std::max(worst, (b - b.transpose()).norm());
    return worst;
}

bool is_feasible(const ScatteringMatrix& s) {
    return s.unitarity_error() < kUnitarityTolerance && s.symmetry_error() < kSymmetryTolerance;
}

ad::ComplexPair susceptance_to_scattering(const ad::Var& z0_b) {
    const ad::Shape& shape = z0_b.shape();
    if (shape.size() < 2 || shape[shape.size() - 1] != shape[shape.size() - 2])
        throw ad::ShapeError("susceptance_to_scattering: expected [..., m, m], got " + ad::to_string(shape));
    const std::size_t m = shape.back();
    ad::Tensor eye(shape, 0.0);
    const std::size_t batch = eye.size() / (m * m);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i) eye[b * m * m + i * m + i] = 1.0;
    ad::Var identity = ad::Var::constant(eye);

    // (I + jZ0B)^{-1} (I - jZ0B)
    ad::ComplexPair plus{identity, z0_b};
    ad::ComplexPair minus{identity, ad::scale(z0_b, -1.0)};
    const ad::ComplexPair inv = ad::cinverse(plus);
    if (shape.size() == 2) return ad::cmatmul(inv, minus);
    // Collapse leading axes for the batched product, then restore them.
    const ad::Shape flat{batch, m, m};
    auto flatten = [&](const ad::ComplexPair& c) {
        return ad::ComplexPair{ad::reshape(c.re, flat), ad::reshape(c.im, flat)};
    };
    ad::ComplexPair prod = ad::cmatmul(flatten(inv), flatten(minus));
    return {ad::reshape(prod.re, shape), ad::reshape(prod.im, shape)};
}

CMatrix susceptance_to_scattering(const RMatrix& b, double z0) {
    const auto m = static_cast<std::size_t>(b.rows());
    if (b.rows() != b.cols()) throw std::invalid_argument("susceptance block must be square");
    ad::Tensor t({m, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) t[i * m + j] = z0 * b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const ad::ComplexPair phi = susceptance_to_scattering(ad::Var::constant(std::move(t)));
    CMatrix out(b.rows(), b.cols());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = {phi.re.value()[i * m + j], phi.im.value()[i * m + j]};
    return out;
}

ScatteringMatrix scattering_from_susceptance(const SusceptanceParams& s, std::size_t t, const SystemConfig& cfg,
                                             const MappingP& p) {
    if (static_cast<std::size_t>(s.values.rows()) != cfg.coeffs())
        throw std::invalid_argument("susceptance rows must equal M(M̄+1)/2");
    if (t >= s.subframes()) throw std::out_of_range("subframe index out of range");
    const auto h = static_cast<Eigen::Index>(p.half_size());
    ScatteringMatrix out;
    out.blocks.reserve(cfg.groups);
    for (std::size_t g = 0; g < cfg.groups; ++g) {
        const Eigen::VectorXd half = s.values.col(static_cast<Eigen::Index>(t)).segment(static_cast<Eigen::Index>(g) * h, h);
        out.blocks.push_back(susceptance_to_scattering(expand_half(half, p), cfg.z0));
    }
    return out;
}

SusceptanceParams random_susceptances(const SystemConfig& cfg, std::size_t subframes, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x5cea}));
    SusceptanceParams s;
    s.values.resize(static_cast<Eigen::Index>(cfg.coeffs()), static_cast<Eigen::Index>(subframes));
    for (Eigen::Index t = 0; t < s.values.cols(); ++t)
        for (Eigen::Index r = 0; r < s.values.rows(); ++r) s.values(r, t) = rng.normal() / cfg.z0;
    return s;
}

ScatteringMatrix random_feasible_scattering(const SystemConfig& cfg, std::uint64_t seed) {
    return scattering_from_susceptance(random_susceptances(cfg, 1, seed), 0, cfg, build_mapping(cfg.group_size()));
}

CMatrix training_scattering_matrix(const SusceptanceParams& s, const SystemConfig& cfg, const MappingP& p) {
    CMatrix out(static_cast<Eigen::Index>(cfg.coeffs()), static_cast<Eigen::Index>(s.subframes()));
    for (std::size_t t = 0; t < s.subframes(); ++t)
        out.col(static_cast<Eigen::Index>(t)) = scattering_from_susceptance(s, t, cfg, p).half_vector(p);
    return out;
}

CMatrix ChannelPair::user(std::size_t k, std::size_t user_antennas) const {
    return h_ri.middleCols(static_cast<Eigen::Index>(k * user_antennas), static_cast<Eigen::Index>(user_antennas));
}

double CascadedChannel::frobenius_sq() const {
    double acc = 0.0;
    for (const auto& q : per_user) acc += q.squaredNorm();
    return acc;
}

void CascadedChannel::write_tensor(double* re, double* im) const {
    const std::size_t k_count = per_user.size();
    const auto nu = static_cast<std::size_t>(per_user.at(0).rows());
    const auto s = static_cast<std::size_t>(per_user.at(0).cols());
    for (std::size_t r = 0; r < nu; ++r)
        for (std::size_t k = 0; k < k_count; ++k)
            for (std::size_t c = 0; c < s; ++c) {
                const auto v = per_user[k](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
                re[(r * k_count + k) * s + c] = v.real();
                im[(r * k_count + k) * s + c] = v.imag();
            }
}

CascadedChannel CascadedChannel::from_tensor(const double* re, const double* im, std::size_t nu, std::size_t k_count,
                                             std::size_t s) {
    CascadedChannel q;
    q.per_user.assign(k_count, CMatrix(static_cast<Eigen::Index>(nu), static_cast<Eigen::Index>(s)));
    for (std::size_t r = 0; r < nu; ++r)
        for (std::size_t k = 0; k < k_count; ++k)
            for (std::size_t c = 0; c < s; ++c)
                q.per_user[k](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = {re[(r * k_count + k) * s + c],
                                                                                             im[(r * k_count + k) * s + c]};
    return q;
}

CascadedChannel assemble_cascaded(const ChannelPair& ch, const MappingP& p, const SystemConfig& cfg) {
    const auto n = static_cast<Eigen::Index>(cfg.bs_antennas);
    const auto m = static_cast<Eigen::Index>(cfg.ris_elements);
    const auto u_count = static_cast<Eigen::Index>(cfg.user_antennas);
    const auto mb = static_cast<Eigen::Index>(cfg.group_size());
    const auto h = static_cast<Eigen::Index>(p.half_size());
    if (ch.h_it.rows() != n || ch.h_it.cols() != m)
        throw std::invalid_argument("assemble_cascaded: H_IT must be N x M");
    if (ch.h_ri.rows() != m || ch.h_ri.cols() != static_cast<Eigen::Index>(cfg.pilot_length()))
        throw std::invalid_argument("assemble_cascaded: H_RI must be M x KU");
    if (p.group_size() != cfg.group_size()) throw std::invalid_argument("assemble_cascaded: mapping group size mismatch");

    CascadedChannel q;
    q.per_user.reserve(cfg.users);
    for (std::size_t k = 0; k < cfg.users; ++k) {
        const CMatrix hk = ch.user(k, cfg.user_antennas);
        CMatrix qk = CMatrix::Zero(n * u_count, static_cast<Eigen::Index>(cfg.coeffs()));
        for (Eigen::Index g = 0; g < static_cast<Eigen::Index>(cfg.groups); ++g) {
            // Q̃_{k,g} = H_RI,k,gᵀ ⊗ H_IT,g has column c·M̄ + r for vec(Φ_g) entry (r, c).
            // Q̄_{k,g} = Q̃_{k,g}·P sums the two columns that share a symmetric coefficient.
            for (Eigen::Index c = 0; c < mb; ++c)
                for (Eigen::Index r = 0; r < mb; ++r) {
                    const auto col = g * h + static_cast<Eigen::Index>(p.rows()[static_cast<std::size_t>(c * mb + r)]);
                    for (Eigen::Index u = 0; u < u_count; ++u)
                        qk.block(u * n, col, n, 1) += hk(g * mb + c, u) * ch.h_it.col(g * mb + r);
                }
        }
        q.per_user.push_back(std::move(qk));
    }
    return q;
}

CMatrix effective_channel(const ChannelPair& ch, const ScatteringMatrix& phi, std::size_t k, const SystemConfig& cfg) {
    return ch.h_it * phi.full() * ch.user(k, cfg.user_antennas);
}

CMatrix effective_channel_reduced(const CascadedChannel& q, const CVector& phi_bar, std::size_t k,
                                  const SystemConfig& cfg) {
    const CVector v = q.per_user.at(k) * phi_bar;
    return Eigen::Map<const CMatrix>(v.data(), static_cast<Eigen::Index>(cfg.bs_antennas),
                                     static_cast<Eigen::Index>(cfg.user_antennas));
}

}  // namespace bdris
