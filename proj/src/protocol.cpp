// SPDX-License-Identifier: Apache-2.0
#include "bdris/protocol.hpp"

#include "bdris/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bdris {

CMatrix PilotBook::user(std::size_t k) const {
    if (k >= users) throw std::out_of_range("pilot book: user index out of range");
    return x.middleRows(static_cast<Eigen::Index>(k * user_antennas), static_cast<Eigen::Index>(user_antennas));
}

PilotBook build_pilot_book(std::size_t users, std::size_t user_antennas) {
    const std::size_t n = users * user_antennas;
    if (n < 1) throw std::invalid_argument("pilot book needs KU >= 1");
    PilotBook book;
    book.users = users;
    book.user_antennas = user_antennas;
    book.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            // Reduce the exponent mod n first so entries are exact where they can be.
            const auto e = static_cast<double>((r * c) % n);
            book.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                std::polar(1.0, -2.0 * std::numbers::pi * e / static_cast<double>(n));
        }
    return book;
}

CMatrix NoiseSource::draw(std::size_t phase, std::size_t subframe, std::size_t rows, std::size_t cols,
                          double variance) const {
    CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!enabled_) return out;
    Rng rng(derive_seed(seed_, {phase, subframe}));
    for (Eigen::Index c = 0; c < out.cols(); ++c)
        for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, c) = rng.cgauss(variance);
    return out;
}

CMatrix transmit_subframe(const ChannelPair& ch, const ScatteringMatrix& phi, const PilotBook& book, double pu,
                          const CMatrix& noise) {
    CMatrix y = std::sqrt(pu) * (ch.h_it * phi.full() * ch.h_ri * book.x);
    if (noise.size() != 0) {
        if (noise.rows() != y.rows() || noise.cols() != y.cols())
            throw std::invalid_argument("transmit_subframe: noise shape mismatch");
        y += noise;
    }
    return y;
}

CMatrix decorrelate(const CMatrix& y, const CMatrix& x_k, std::size_t pilot_length) {
    if (y.cols() != x_k.cols()) throw std::invalid_argument("decorrelate: pilot length mismatch");
    return (y * x_k.adjoint()) / static_cast<double>(pilot_length);
}

void PhaseObservation::write_tensor(double* re, double* im) const {
    const std::size_t k_count = per_user.size();
    const auto nu = static_cast<std::size_t>(per_user.at(0).rows());
    const std::size_t tau = subframes();
    for (std::size_t r = 0; r < nu; ++r)
        for (std::size_t k = 0; k < k_count; ++k)
            for (std::size_t t = 0; t < tau; ++t) {
                const auto v = per_user[k](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t));
                re[(r * k_count + k) * tau + t] = v.real();
                im[(r * k_count + k) * tau + t] = v.imag();
            }
}

PhaseObservation run_phase(const ChannelPair& ch, const SusceptanceParams& susceptances, Phase phase,
                           const PilotBook& book, const SystemConfig& cfg, const NoiseSource& noise) {
    const std::size_t tau = susceptances.subframes();
    if (tau < 1) throw std::invalid_argument("run_phase needs at least one subframe");
    const MappingP p = build_mapping(cfg.group_size());
    const std::size_t ku = cfg.pilot_length();
    const auto nu = static_cast<Eigen::Index>(cfg.rx_dims());

    PhaseObservation obs;
    obs.phase = phase;
    obs.susceptances = susceptances;
    obs.per_user.assign(cfg.users, CMatrix(nu, static_cast<Eigen::Index>(tau)));
    for (std::size_t t = 0; t < tau; ++t) {
        obs.scattering.push_back(scattering_from_susceptance(susceptances, t, cfg, p));
        const CMatrix n = noise.draw(static_cast<std::size_t>(phase), t, cfg.bs_antennas, ku, cfg.noise_watts);
        const CMatrix y = transmit_subframe(ch, obs.scattering.back(), book, cfg.pu_watts, n);
        for (std::size_t k = 0; k < cfg.users; ++k) {
            const CMatrix yk = decorrelate(y, book.user(k), ku);
            obs.per_user[k].col(static_cast<Eigen::Index>(t)) = Eigen::Map<const CVector>(yk.data(), nu);
        }
    }
    return obs;
}

std::vector<CMatrix> linear_model(const CascadedChannel& q, const CMatrix& phi_tilde, double pu) {
    std::vector<CMatrix> out;
    out.reserve(q.users());
    for (const auto& qk : q.per_user) out.push_back(std::sqrt(pu) * qk * phi_tilde);
    return out;
}

SessionResult two_phase_session(const ChannelPair& ch, const SusceptanceParams& phase1, const PhaseTwoDesigner& designer,
                                const SystemConfig& cfg, const NoiseSource& noise, std::size_t control_slots) {
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    SessionResult res;
    res.phase1 = run_phase(ch, phase1, Phase::one, book, cfg, noise);
    const SusceptanceParams design = designer(res.phase1, watts_to_dbm(cfg.pu_watts));
    if (design.subframes() != cfg.tau2 || static_cast<std::size_t>(design.values.rows()) != cfg.coeffs())
        throw std::invalid_argument("phase-two designer returned susceptances of the wrong shape");
    res.phase2 = run_phase(ch, design, Phase::two, book, cfg, noise);
    res.pilot_slots = cfg.pilot_length() * (phase1.subframes() + design.subframes());
    res.control_slots = control_slots;
    return res;
}

}  // namespace bdris
