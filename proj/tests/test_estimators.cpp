// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include "bdris/channel.hpp"
#include "bdris/estimators.hpp"
#include "bdris/protocol.hpp"

#include <doctest.h>

using namespace bdris;

namespace {

CMatrix random_phi_tilde(const SystemConfig& cfg, std::size_t tau, std::uint64_t seed) {
    return training_scattering_matrix(random_susceptances(cfg, tau, seed), cfg, build_mapping(cfg.group_size()));
}

CMatrix noise_matrix(Eigen::Index r, Eigen::Index c, double var, Rng& rng) {
    CMatrix n(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) n(i, j) = rng.cgauss(var);
    return n;
}

struct Comparison {
    double ls = 0.0;
    double lmmse = 0.0;
};

/// Average NMSE of LS and LMMSE on `test` with covariance from `train`.
Comparison compare(const DatasetSplit& train, const DatasetSplit& test, std::size_t tau, double pu, std::uint64_t seed) {
    const SystemConfig& cfg = train.system;
    const auto cov = estimate_column_covariance(train);
    const double noise_eff = cfg.noise_watts / static_cast<double>(cfg.pilot_length());
    Rng rng(seed);
    Comparison c;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const CMatrix phi = random_phi_tilde(cfg, tau, derive_seed(seed, {i}));
        const auto clean = linear_model(test.samples[i].cascaded, phi, pu);
        CascadedChannel ls, lm;
        for (std::size_t k = 0; k < cfg.users; ++k) {
            const CMatrix y = clean[k] + noise_matrix(clean[k].rows(), clean[k].cols(), noise_eff, rng);
            ls.per_user.push_back(ls_estimate(y, phi, pu));
            lm.per_user.push_back(lmmse_estimate(y, phi, pu, noise_eff, cov[k]));
        }
        c.ls += sample_nmse(test.samples[i].cascaded, ls);
        c.lmmse += sample_nmse(test.samples[i].cascaded, lm);
    }
    c.ls /= static_cast<double>(test.size());
    c.lmmse /= static_cast<double>(test.size());
    return c;
}

}  // namespace

TEST_CASE("LS is exact without noise and refuses underdetermined systems") {
    const SystemConfig cfg;
    const std::size_t s = cfg.coeffs();
    const Sample smp = build_dataset(cfg, ChannelModelConfig{}, 1, SplitRole::test, 4).samples[0];
    const CMatrix phi = random_phi_tilde(cfg, s, 1);
    const auto y = linear_model(smp.cascaded, phi, 0.7);
    CascadedChannel est;
    for (std::size_t k = 0; k < cfg.users; ++k) est.per_user.push_back(ls_estimate(y[k], phi, 0.7));
    CHECK(sample_nmse(smp.cascaded, est) < 1e-12);

    const CMatrix short_phi = random_phi_tilde(cfg, s - 1, 2);
    CHECK_THROWS_AS(ls_estimate(linear_model(smp.cascaded, short_phi, 0.7)[0], short_phi, 0.7), UnderdeterminedError);

    // Repeated subframes: τ large enough but rank deficient.
    CMatrix twice(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s + 2));
    twice << short_phi, short_phi.leftCols(3);
    CHECK_THROWS_AS(ls_estimate(linear_model(smp.cascaded, twice, 0.7)[0], twice, 0.7), UnderdeterminedError);
    CHECK_THROWS(ls_estimate(CMatrix::Zero(8, 3), phi, 1.0));
}

TEST_CASE("noisy LS error matches its closed-form covariance") {
    const SystemConfig cfg;
    const CMatrix phi = random_phi_tilde(cfg, 24, 3);
    const double pu = 0.5, sigma2 = 0.2;
    const double noise_eff = sigma2 / static_cast<double>(cfg.pilot_length());
    const CMatrix gram_inv = (phi * phi.adjoint()).inverse();
    const double predicted = noise_eff * gram_inv.trace().real() / pu;

    Rng rng(11);
    const CMatrix q = oracle::random_cmatrix(cfg.rx_dims(), cfg.coeffs(), rng);
    const CMatrix clean = std::sqrt(pu) * q * phi;
    double mse = 0.0;
    CMatrix mean = CMatrix::Zero(q.rows(), q.cols());
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        const CMatrix est = ls_estimate(clean + noise_matrix(clean.rows(), clean.cols(), noise_eff, rng), phi, pu);
        if (t < 1000) mse += (est - q).squaredNorm() / static_cast<double>(q.rows());
        mean += est;
    }
    mse /= 1000.0;
    mean /= static_cast<double>(trials);
    CHECK(mse == doctest::Approx(predicted).epsilon(0.05));
    // Unbiasedness over 10⁴ noise draws.
    CHECK((mean - q).norm() / q.norm() < 0.01);
}

TEST_CASE("column covariance matches a brute-force average") {
    SystemConfig cfg;
    const DatasetSplit split = build_dataset(cfg, ChannelModelConfig{}, 5, SplitRole::train, 6);
    const auto cov = estimate_column_covariance(split);
    REQUIRE(cov.size() == cfg.users);
    for (std::size_t k = 0; k < cfg.users; ++k) {
        CMatrix c = CMatrix::Zero(static_cast<Eigen::Index>(cfg.coeffs()), static_cast<Eigen::Index>(cfg.coeffs()));
        double rows = 0.0;
        for (const auto& s : split.samples)
            for (Eigen::Index r = 0; r < s.cascaded.per_user[k].rows(); ++r) {
                // For a row q̃ the outer product q̃ᴴq̃ equals q·qᴴ with q = q̃ᴴ.
                const CVector q = s.cascaded.per_user[k].row(r).adjoint();
                c += q * q.adjoint();
                rows += 1.0;
            }
        c /= rows;
        CHECK((cov[k] - c).norm() < 1e-12 * c.norm());
        CHECK((cov[k] - cov[k].adjoint()).norm() < 1e-12 * c.norm());
    }
    DatasetSplit empty = split;
    empty.samples.clear();
    CHECK_THROWS(estimate_column_covariance(empty));
}

TEST_CASE("LMMSE limits") {
    const SystemConfig cfg;
    const DatasetSplit train = build_dataset(cfg, ChannelModelConfig{}, 200, SplitRole::train, 1);
    const auto cov = estimate_column_covariance(train);
    const Sample smp = build_dataset(cfg, ChannelModelConfig{}, 1, SplitRole::test, 1).samples[0];
    const CMatrix phi = random_phi_tilde(cfg, cfg.coeffs(), 5);
    const auto y = linear_model(smp.cascaded, phi, 1.0);

    CascadedChannel lm, zero;
    for (std::size_t k = 0; k < cfg.users; ++k) {
        lm.per_user.push_back(lmmse_estimate(y[k], phi, 1.0, 1e-16, cov[k]));
        zero.per_user.push_back(lmmse_estimate(y[k], phi, 1.0, 1e-3, CMatrix::Zero(cov[k].rows(), cov[k].cols())));
    }
    CHECK(sample_nmse(smp.cascaded, lm) < 1e-8);
    CHECK(sample_nmse(smp.cascaded, zero) == doctest::Approx(1.0).epsilon(1e-6));

    // Works for any τ ≥ 1.
    const CMatrix one = random_phi_tilde(cfg, 1, 9);
    CHECK(lmmse_estimate(linear_model(smp.cascaded, one, 1.0)[0], one, 1.0, 1e-3, cov[0]).cols() ==
          static_cast<Eigen::Index>(cfg.coeffs()));
    CHECK_THROWS(lmmse_estimate(y[0], phi, 1.0, 1e-3, CMatrix::Zero(3, 3)));
}

TEST_CASE("LMMSE works below the LS threshold on correlated channels") {
    SystemConfig cfg;
    const DatasetSplit train = build_dataset(cfg, ChannelModelConfig{}, 1000, SplitRole::train, 2);
    const DatasetSplit test = build_dataset(cfg, ChannelModelConfig{}, 100, SplitRole::test, 2);
    const std::size_t tau = cfg.coeffs() / 4;
    const auto cov = estimate_column_covariance(train);
    const double pu = cfg.pu_watts, noise_eff = cfg.noise_watts / static_cast<double>(cfg.pilot_length());
    double nmse = 0.0;
    Rng rng(3);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const CMatrix phi = random_phi_tilde(cfg, tau, 500 + i);
        const auto clean = linear_model(test.samples[i].cascaded, phi, pu);
        CascadedChannel est;
        for (std::size_t k = 0; k < cfg.users; ++k) {
            const CMatrix y = clean[k] + noise_matrix(clean[k].rows(), clean[k].cols(), noise_eff, rng);
            CHECK_THROWS_AS(ls_estimate(y, phi, pu), UnderdeterminedError);
            est.per_user.push_back(lmmse_estimate(y, phi, pu, noise_eff, cov[k]));
        }
        nmse += sample_nmse(test.samples[i].cascaded, est);
    }
    nmse /= static_cast<double>(test.size());
    MESSAGE("LMMSE NMSE at tau = S/4: " << nmse);
    CHECK(nmse < 1.0);
}

TEST_CASE("LMMSE is not worse than LS on average") {
    SystemConfig cfg;
    for (std::uint64_t seed : {1, 2, 3}) {
        const DatasetSplit train = build_dataset(cfg, ChannelModelConfig{}, 1000, SplitRole::train, seed);
        const DatasetSplit test = build_dataset(cfg, ChannelModelConfig{}, 100, SplitRole::test, seed);
        const Comparison c = compare(train, test, cfg.coeffs(), cfg.pu_watts, seed);
        MESSAGE("seed " << seed << ": LS " << c.ls << " LMMSE " << c.lmmse);
        CHECK(c.lmmse <= c.ls);
    }
}

TEST_CASE("NMSE and reports") {
    CascadedChannel a, b;
    a.per_user = {CMatrix::Constant(2, 2, {1.0, 0.0}), CMatrix::Constant(2, 2, {0.0, 1.0})};
    b.per_user = {CMatrix::Constant(2, 2, {1.0, 0.0}), CMatrix::Zero(2, 2)};
    CHECK(sample_nmse(a, a) == 0.0);
    CHECK(sample_nmse(a, b) == doctest::Approx(0.5));
    const EstimatorReport r = make_report(a, b, 36);
    CHECK(r.per_user_nmse == std::vector<double>{0.0, 1.0});
    CHECK(r.pilot_slots == 36);
    CascadedChannel z;
    z.per_user = {CMatrix::Zero(2, 2), CMatrix::Zero(2, 2)};
    CHECK_THROWS(sample_nmse(z, a));
    CascadedChannel one;
    one.per_user = {CMatrix::Zero(2, 2)};
    CHECK_THROWS(sample_nmse(a, one));
}
