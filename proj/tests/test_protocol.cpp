// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include "bdris/channel.hpp"
#include "bdris/protocol.hpp"

#include <doctest.h>

using namespace bdris;

namespace {

SystemConfig desk() { return SystemConfig{}; }

ChannelPair gaussian_pair(const SystemConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    ChannelPair ch;
    ch.h_it = oracle::random_cmatrix(cfg.bs_antennas, cfg.ris_elements, rng);
    ch.h_ri = oracle::random_cmatrix(cfg.ris_elements, cfg.pilot_length(), rng);
    return ch;
}

}  // namespace

TEST_CASE("pilot book examples") {
    const PilotBook one = build_pilot_book(1, 1);
    CHECK(one.x.rows() == 1);
    CHECK(one.x(0, 0) == std::complex<double>(1.0, 0.0));

    const PilotBook two = build_pilot_book(2, 1);
    CMatrix expected(2, 2);
    expected << 1.0, 1.0, 1.0, -1.0;
    CHECK((two.x - expected).norm() < 1e-15);
    CHECK((two.x * two.x.adjoint() - 2.0 * CMatrix::Identity(2, 2)).norm() < 1e-15);

    CHECK_THROWS(build_pilot_book(0, 2));
}

TEST_CASE("pilot orthogonality law") {
    for (std::size_t k = 1; k <= 4; ++k)
        for (std::size_t u = 1; u <= 4; ++u) {
            const PilotBook b = build_pilot_book(k, u);
            const double ku = static_cast<double>(k * u);
            CHECK((b.x.cwiseAbs().array() - 1.0).abs().maxCoeff() < 1e-15);
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t c = 0; c < k; ++c) {
                    // Entry-by-entry product sums against the law.
                    const CMatrix xa = b.user(a), xc = b.user(c);
                    double worst = 0.0;
                    for (Eigen::Index i = 0; i < xa.rows(); ++i)
                        for (Eigen::Index j = 0; j < xc.rows(); ++j) {
                            std::complex<double> s = 0.0;
                            for (Eigen::Index t = 0; t < xa.cols(); ++t) s += xa(i, t) * std::conj(xc(j, t));
                            const double target = (a == c && i == j) ? ku : 0.0;
                            worst = std::max(worst, std::abs(s - target));
                        }
                    CHECK(worst < 1e-12);
                }
        }
}

TEST_CASE("transmit_subframe: noiseless identity and linearity") {
    SystemConfig cfg;
    cfg.bs_antennas = 3;
    cfg.ris_elements = 2;
    cfg.groups = 1;
    cfg.users = 1;
    cfg.user_antennas = 1;
    const ChannelPair ch = gaussian_pair(cfg, 2);
    const PilotBook book = build_pilot_book(1, 1);
    ScatteringMatrix identity;
    identity.blocks.push_back(CMatrix::Identity(2, 2));
    const CMatrix y = transmit_subframe(ch, identity, book, 4.0, CMatrix());
    CHECK((y - 2.0 * ch.h_it * ch.h_ri).norm() < 1e-14);

    const SystemConfig d = desk();
    const ChannelPair c2 = gaussian_pair(d, 3);
    const PilotBook b2 = build_pilot_book(d.users, d.user_antennas);
    const ScatteringMatrix phi = random_feasible_scattering(d, 4);
    const CMatrix y1 = transmit_subframe(c2, phi, b2, 1.0, CMatrix());
    const CMatrix y4 = transmit_subframe(c2, phi, b2, 4.0, CMatrix());
    CHECK((y4 - 2.0 * y1).norm() < 1e-12 * y1.norm());
    CHECK_THROWS(transmit_subframe(c2, phi, b2, 1.0, CMatrix::Zero(2, 2)));
}

TEST_CASE("decorrelation recovers each user's effective channel") {
    const SystemConfig cfg = desk();
    const ChannelPair ch = gaussian_pair(cfg, 5);
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    const ScatteringMatrix phi = random_feasible_scattering(cfg, 6);
    const double pu = 0.3;
    const CMatrix y = transmit_subframe(ch, phi, book, pu, CMatrix());
    for (std::size_t k = 0; k < cfg.users; ++k) {
        const CMatrix yk = decorrelate(y, book.user(k), cfg.pilot_length());
        const CMatrix direct = std::sqrt(pu) * ch.h_it * phi.full() * ch.user(k, cfg.user_antennas);
        CHECK((yk - direct).norm() < 1e-12 * direct.norm());
    }

    // Leakage: only user 1 transmits, user 0's decorrelated output stays empty.
    ChannelPair solo = ch;
    solo.h_ri.middleCols(0, static_cast<Eigen::Index>(cfg.user_antennas)).setZero();
    const CMatrix ys = transmit_subframe(solo, phi, book, pu, CMatrix());
    CHECK(decorrelate(ys, book.user(0), cfg.pilot_length()).norm() < 1e-12);
}

TEST_CASE("noise variance before and after decorrelation") {
    SystemConfig cfg = desk();
    const double sigma2 = 0.37;
    const NoiseSource src(123);
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    const std::size_t ku = cfg.pilot_length();
    double raw = 0.0, dec = 0.0;
    std::size_t raw_n = 0, dec_n = 0;
    std::complex<double> mean = 0.0;
    for (std::size_t t = 0; raw_n < 1000000; ++t) {
        const CMatrix n = src.draw(1, t, cfg.bs_antennas, ku, sigma2);
        raw += n.squaredNorm();
        mean += n.sum();
        raw_n += static_cast<std::size_t>(n.size());
        for (std::size_t k = 0; k < cfg.users; ++k) {
            const CMatrix nk = decorrelate(n, book.user(k), ku);
            dec += nk.squaredNorm();
            dec_n += static_cast<std::size_t>(nk.size());
        }
    }
    CHECK(raw / static_cast<double>(raw_n) == doctest::Approx(sigma2).epsilon(0.02));
    CHECK(dec / static_cast<double>(dec_n) == doctest::Approx(sigma2 / static_cast<double>(ku)).epsilon(0.02));
    CHECK(std::abs(mean) / static_cast<double>(raw_n) < 0.01);

    // Counter-based streams: same (phase, subframe) gives the same draw.
    CHECK(src.draw(2, 5, 4, 4, 1.0) == src.draw(2, 5, 4, 4, 1.0));
    CHECK(src.draw(2, 5, 4, 4, 1.0) != src.draw(1, 5, 4, 4, 1.0));
    CHECK(NoiseSource(1, false).draw(1, 0, 4, 4, 1.0).norm() == 0.0);
}

TEST_CASE("run_phase equals the stacked linear model") {
    SystemConfig cfg = desk();
    cfg.pu_watts = 0.02;
    const MappingP p = build_mapping(cfg.group_size());
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const ChannelPair ch = sample_channels(cfg, ChannelModelConfig{}, s);
        const CascadedChannel q = assemble_cascaded(ch, p, cfg);
        const SusceptanceParams b = random_susceptances(cfg, 7, 100 + s);
        const PhaseObservation obs = run_phase(ch, b, Phase::two, book, cfg, NoiseSource(0, false));
        const auto lin = linear_model(q, training_scattering_matrix(b, cfg, p), cfg.pu_watts);
        CHECK(obs.subframes() == 7);
        CHECK(obs.scattering.size() == 7);
        for (std::size_t k = 0; k < cfg.users; ++k) CHECK((obs.per_user[k] - lin[k]).norm() < 1e-12 * lin[k].norm());
        for (const auto& sm : obs.scattering) CHECK(is_feasible(sm));
    }
}

TEST_CASE("noisy run_phase adds exactly the decorrelated noise draws") {
    SystemConfig cfg = desk();
    const MappingP p = build_mapping(cfg.group_size());
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    const ChannelPair ch = sample_channels(cfg, ChannelModelConfig{}, 3);
    const SusceptanceParams b = random_susceptances(cfg, 3, 8);
    const NoiseSource src(55);
    const PhaseObservation obs = run_phase(ch, b, Phase::one, book, cfg, src);
    const auto lin = linear_model(assemble_cascaded(ch, p, cfg), training_scattering_matrix(b, cfg, p), cfg.pu_watts);
    for (std::size_t t = 0; t < 3; ++t) {
        const CMatrix n = src.draw(1, t, cfg.bs_antennas, cfg.pilot_length(), cfg.noise_watts);
        for (std::size_t k = 0; k < cfg.users; ++k) {
            const CMatrix nk = decorrelate(n, book.user(k), cfg.pilot_length());
            const CVector expect = lin[k].col(static_cast<Eigen::Index>(t)) + Eigen::Map<const CVector>(nk.data(), nk.size());
            CHECK((obs.per_user[k].col(static_cast<Eigen::Index>(t)) - expect).norm() < 1e-12 * expect.norm());
        }
    }
}

TEST_CASE("run_phase: single subframe, permutation, tensor layout") {
    SystemConfig cfg = desk();
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    const ChannelPair ch = sample_channels(cfg, ChannelModelConfig{}, 1);
    const NoiseSource off(0, false);

    const SusceptanceParams b = random_susceptances(cfg, 4, 9);
    const PhaseObservation full = run_phase(ch, b, Phase::one, book, cfg, off);

    SusceptanceParams one;
    one.values = b.values.col(2);
    const PhaseObservation single = run_phase(ch, one, Phase::one, book, cfg, off);
    CHECK(single.subframes() == 1);
    for (std::size_t k = 0; k < cfg.users; ++k) CHECK(single.per_user[k].col(0) == full.per_user[k].col(2));

    const std::vector<Eigen::Index> perm{3, 0, 2, 1};
    SusceptanceParams shuffled;
    shuffled.values.resize(b.values.rows(), 4);
    for (Eigen::Index t = 0; t < 4; ++t) shuffled.values.col(t) = b.values.col(perm[static_cast<std::size_t>(t)]);
    const PhaseObservation moved = run_phase(ch, shuffled, Phase::one, book, cfg, off);
    for (std::size_t k = 0; k < cfg.users; ++k)
        for (Eigen::Index t = 0; t < 4; ++t) CHECK(moved.per_user[k].col(t) == full.per_user[k].col(perm[static_cast<std::size_t>(t)]));

    const std::size_t nu = cfg.rx_dims();
    std::vector<double> re(nu * cfg.users * 4), im(re.size());
    full.write_tensor(re.data(), im.data());
    CHECK(re[(5 * cfg.users + 1) * 4 + 3] == full.per_user[1](5, 3).real());
    CHECK(im[(5 * cfg.users + 1) * 4 + 3] == full.per_user[1](5, 3).imag());

    SusceptanceParams none;
    none.values.resize(cfg.coeffs(), 0);
    CHECK_THROWS(run_phase(ch, none, Phase::one, book, cfg, off));
}

TEST_CASE("two-phase session") {
    SystemConfig cfg = desk();
    const ChannelPair ch = sample_channels(cfg, ChannelModelConfig{}, 2);
    const SusceptanceParams phase1 = random_susceptances(cfg, cfg.tau1, 10);
    double seen_pu = 0.0;
    std::size_t seen_width = 0;
    const PhaseTwoDesigner zero = [&](const PhaseObservation& obs, double pu_dbm) {
        seen_pu = pu_dbm;
        seen_width = obs.subframes();
        SusceptanceParams s;
        s.values = RMatrix::Zero(static_cast<Eigen::Index>(cfg.coeffs()), static_cast<Eigen::Index>(cfg.tau2));
        return s;
    };
    const SessionResult r = two_phase_session(ch, phase1, zero, cfg, NoiseSource(4), 3);
    CHECK(seen_width == 1);
    CHECK(r.phase1.subframes() == 1);
    CHECK(seen_pu == doctest::Approx(watts_to_dbm(cfg.pu_watts)));
    CHECK(r.phase2.subframes() == cfg.tau2);
    for (const auto& s : r.phase2.scattering) CHECK((s.full() - CMatrix::Identity(8, 8)).norm() == 0.0);
    CHECK(r.pilot_slots == cfg.pilot_length() * (cfg.tau1 + cfg.tau2));
    CHECK(r.control_slots == 3);

    // Arbitrary designer output always maps to feasible scattering.
    const PhaseTwoDesigner wild = [&](const PhaseObservation& obs, double) {
        SusceptanceParams s = random_susceptances(cfg, cfg.tau2, 77);
        s.values *= 1e3 * obs.per_user[0].norm();
        return s;
    };
    for (const auto& s : two_phase_session(ch, phase1, wild, cfg, NoiseSource(4)).phase2.scattering) CHECK(is_feasible(s));

    const PhaseTwoDesigner narrow = [&](const PhaseObservation&, double) {
        return random_susceptances(cfg, cfg.tau2 - 1, 1);
    };
    CHECK_THROWS(two_phase_session(ch, phase1, narrow, cfg, NoiseSource(4)));
}
