// SPDX-License-Identifier: Apache-2.0
#include "bdris/checks.hpp"

#include "bdris/estimators.hpp"
#include "bdris/training.hpp"

#include <cmath>
#include <cstdio>

namespace bdris {

using ad::Tensor;
using ad::Var;

namespace {

Var random_param(const ad::Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data()) v = scale * rng.normal();
    return Var::parameter(std::move(t));
}

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

CheckResult from_gradcheck(const std::string& name, const ad::GradcheckResult& r, double min_fraction = 1.0) {
    const double frac = r.checked ? static_cast<double>(r.passed) / static_cast<double>(r.checked) : 0.0;
    CheckResult c{name, r.checked > 0 && frac >= min_fraction, ""};
    c.detail = std::to_string(r.passed) + "/" + std::to_string(r.checked) + fmt(" passed, max rel err %.3g", r.max_rel_error);
    return c;
}

}  // namespace

MicroInstance make_micro_instance(std::uint64_t seed) {
    SystemConfig sys;
    sys.bs_antennas = 2;
    sys.ris_elements = 4;
    sys.groups = 2;
    sys.users = 2;
    sys.user_antennas = 1;
    sys.tau1 = 1;
    sys.tau2 = 2;
    ModelConfig mc;
    mc.d_model = 8;
    mc.d_ff = 16;
    mc.ffc_widths = {16, 16};
    mc.d_group = 8;
    mc.intra_layers = 1;
    mc.inter_layers = 1;
    MicroInstance m{ModelBundle::create(sys, mc, derive_seed(seed, {1}), derive_seed(seed, {2}), 5.0, 15.0),
                    build_dataset(sys, ChannelModelConfig{}, 4, SplitRole::train, seed), {}};
    m.bundle.norm = fit_norm_stats(m.data, m.bundle, derive_seed(seed, {3}));
    m.batch = make_batch(m.data, {0, 1}, {8.0, 12.0}, derive_seed(seed, {4}));
    return m;
}

std::vector<CheckResult> gradcheck_suite(std::uint64_t seed) {
    std::vector<CheckResult> out;
    Rng rng(derive_seed(seed, {0x9c}));
    auto weighted_sum = [&](const ad::Shape& s) {
        return Var::constant([&] {
            Tensor t(s);
            for (auto& v : t.data()) v = rng.normal();
            return t;
        }());
    };
    auto loss_of = [](const Var& y, const Var& w) { return ad::sum(ad::mul(y, w)); };

    {
        Var a = random_param({3, 4}, rng), b = random_param({4, 2}, rng);
        const Var w = weighted_sum({3, 2});
        out.push_back(from_gradcheck("matmul", ad::gradcheck([&] { return loss_of(ad::matmul(a, b), w); }, {a, b})));
    }
    {
        Var a = random_param({2, 3, 4}, rng), b = random_param({2, 4, 3}, rng);
        const Var w = weighted_sum({2, 3, 3});
        out.push_back(from_gradcheck("bmm", ad::gradcheck([&] { return loss_of(ad::bmm(a, b), w); }, {a, b})));
    }
    {
        Var x = random_param({2, 3, 5}, rng), bias = random_param({5}, rng);
        const Var w = weighted_sum({2, 3, 5});
        out.push_back(from_gradcheck(
            "add_bias+relu", ad::gradcheck([&] { return loss_of(ad::relu(ad::add_bias(x, bias)), w); }, {x, bias})));
    }
    {
        Var x = random_param({3, 6}, rng), g = random_param({6}, rng), b = random_param({6}, rng);
        const Var w = weighted_sum({3, 6});
        out.push_back(
            from_gradcheck("layer_norm", ad::gradcheck([&] { return loss_of(ad::layer_norm(x, g, b), w); }, {x, g, b})));
    }
    {
        Var x = random_param({4, 5}, rng);
        const Var w = weighted_sum({4, 5});
        out.push_back(from_gradcheck("softmax_rows", ad::gradcheck([&] { return loss_of(ad::softmax_rows(x), w); }, {x})));
    }
    {
        Var x = random_param({2, 3, 4}, rng), y = random_param({2, 3, 2}, rng);
        const Var w = weighted_sum({4, 2, 3});
        out.push_back(from_gradcheck("permute/concat/slice/gather", ad::gradcheck(
                                                                        [&] {
                                                                            const Var c = ad::concat({x, y}, 2);
                                                                            const Var s = ad::slice(c, 2, 1, 5);
                                                                            const Var gth = ad::gather_last(s, {3, 0, 0, 2});
                                                                            return loss_of(ad::permute(gth, {2, 0, 1}), w);
                                                                        },
                                                                        {x, y})));
    }
    {
        // Diagonally dominant so the inverse stays well conditioned.
        Tensor re({2, 3, 3}), im({2, 3, 3});
        for (std::size_t i = 0; i < re.size(); ++i) {
            re[i] = 0.3 * rng.normal();
            im[i] = 0.3 * rng.normal();
        }
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t d = 0; d < 3; ++d) re[b * 9 + d * 4] += 2.0;
        Var ar = Var::parameter(re), ai = Var::parameter(im);
        const Var w1 = weighted_sum({2, 3, 3}), w2 = weighted_sum({2, 3, 3});
        out.push_back(from_gradcheck("cinverse", ad::gradcheck(
                                                     [&] {
                                                         const auto inv = ad::cinverse({ar, ai});
                                                         return ad::add(loss_of(inv.re, w1), loss_of(inv.im, w2));
                                                     },
                                                     {ar, ai})));
    }
    {
        Tensor b({1, 3, 3});
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = r; c < 3; ++c) b[r * 3 + c] = b[c * 3 + r] = rng.normal();
        Var zb = Var::parameter(b);
        const Var w1 = weighted_sum({1, 3, 3}), w2 = weighted_sum({1, 3, 3});
        out.push_back(from_gradcheck("susceptance_to_scattering", ad::gradcheck(
                                                                      [&] {
                                                                          const auto phi = susceptance_to_scattering(zb);
                                                                          return ad::add(loss_of(phi.re, w1),
                                                                                         loss_of(phi.im, w2));
                                                                      },
                                                                      {zb})));
    }
    {
        Var x = random_param({3, 4}, rng), w1 = random_param({4, 6}, rng, 0.5), w2 = random_param({6, 6}, rng, 0.5),
            w3 = random_param({6, 2}, rng, 0.5);
        const Var w = weighted_sum({3, 2});
        out.push_back(from_gradcheck("three-layer composite", ad::gradcheck(
                                                                  [&] {
                                                                      const Var h1 = ad::relu(ad::matmul(x, w1));
                                                                      const Var h2 = ad::relu(ad::matmul(h1, w2));
                                                                      return loss_of(ad::matmul(h2, w3), w);
                                                                  },
                                                                  {x, w1, w2, w3})));
    }
    {
        ParamStore store;
        Rng init(derive_seed(seed, {0xab}));
        const AttentionParams p = AttentionParams::create(store, "blk", 4, 8, init);
        Var x = random_param({1, 2, 4}, rng);
        const Var w = weighted_sum({1, 2, 4});
        std::vector<Var> inputs{x};
        for (const auto& item : store.items()) inputs.push_back(item.second);
        out.push_back(from_gradcheck("attention_block",
                                     ad::gradcheck([&] { return loss_of(attention_block(x, p, 2), w); }, inputs)));
    }
    {
        MicroInstance m = make_micro_instance(seed);
        std::vector<Var> params;
        for (const auto& item : m.bundle.params.items()) params.push_back(item.second);
        const Tensor labels = normalized_labels(m.batch, m.bundle.norm);
        const auto r = ad::gradcheck([&] { return mse_loss(forward_pipeline(m.bundle, m.batch).estimate, labels); },
                                     params, 1e-6, 1e-5, 200, seed);
        out.push_back(from_gradcheck("whole pipeline (200 sampled parameters)", r, 0.99));
    }
    return out;
}

std::vector<CheckResult> physics_suite(std::size_t draws, std::uint64_t seed) {
    std::vector<CheckResult> out;
    for (std::size_t gs : {2, 4, 8}) {
        SystemConfig cfg;
        cfg.ris_elements = 2 * gs;
        cfg.groups = 2;
        const MappingP p = build_mapping(gs);
        double worst_u = 0.0, worst_s = 0.0;
        for (std::size_t i = 0; i < draws; ++i) {
            const auto sus = random_susceptances(cfg, 1, derive_seed(seed, {gs, i}));
            const ScatteringMatrix s = scattering_from_susceptance(sus, 0, cfg, p);
            worst_u = std::max(worst_u, s.unitarity_error());
            worst_s = std::max(worst_s, s.symmetry_error());
        }
        out.push_back({"feasibility, group size " + std::to_string(gs),
                       worst_u < kUnitarityTolerance && worst_s < kSymmetryTolerance,
                       fmt("max unitarity err %.3g, max symmetry err %.3g", worst_u, worst_s)});
    }
    {
        SystemConfig cfg;
        cfg.groups = 2;
        const MappingP p = build_mapping(cfg.group_size());
        double worst = 0.0;
        for (std::size_t i = 0; i < 100; ++i) {
            const ChannelPair ch = sample_channels(cfg, ChannelModelConfig{}, derive_seed(seed, {0xc5, i}));
            const ScatteringMatrix phi = random_feasible_scattering(cfg, derive_seed(seed, {0xc6, i}));
            const CascadedChannel q = assemble_cascaded(ch, p, cfg);
            for (std::size_t k = 0; k < cfg.users; ++k) {
                const CMatrix direct = effective_channel(ch, phi, k, cfg);
                const CMatrix reduced = effective_channel_reduced(q, phi.half_vector(p), k, cfg);
                worst = std::max(worst, (direct - reduced).norm() / direct.norm());
            }
        }
        out.push_back({"cascaded-channel identity", worst < 1e-12, fmt("max relative error %.3g", worst)});
    }
    {
        SystemConfig cfg;
        const MappingP p = build_mapping(cfg.group_size());
        const ChannelPair ch = sample_channels(cfg, ChannelModelConfig{}, derive_seed(seed, {0xc7}));
        const CascadedChannel q = assemble_cascaded(ch, p, cfg);
        const auto sus = random_susceptances(cfg, cfg.coeffs(), derive_seed(seed, {0xc8}));
        const CMatrix phi = training_scattering_matrix(sus, cfg, p);
        const auto y = linear_model(q, phi, cfg.pu_watts);
        CascadedChannel est;
        for (std::size_t k = 0; k < cfg.users; ++k) est.per_user.push_back(ls_estimate(y[k], phi, cfg.pu_watts));
        const double e = sample_nmse(q, est);
        bool raised = false;
        try {
            (void)ls_estimate(y[0].leftCols(phi.cols() - 1), phi.leftCols(phi.cols() - 1), cfg.pu_watts);
        } catch (const UnderdeterminedError&) {
            raised = true;
        }
        out.push_back({"LS exactness", e < 1e-12 && raised,
                       fmt("noiseless NMSE %.3g, underdetermined raised: ", e) + (raised ? "yes" : "no")});
    }
    return out;
}

std::vector<CheckResult> protocol_suite(std::uint64_t seed) {
    std::vector<CheckResult> out;
    SystemConfig cfg;
    const MappingP p = build_mapping(cfg.group_size());
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    {
        const CMatrix gram = book.x * book.x.adjoint();
        const double err =
            (gram - static_cast<double>(cfg.pilot_length()) * CMatrix::Identity(gram.rows(), gram.cols())).norm();
        out.push_back({"pilot orthogonality", err < 1e-9, fmt("‖XXᴴ − KU·I‖ = %.3g", err)});
    }
    {
        double worst = 0.0;
        for (std::size_t i = 0; i < 20; ++i) {
            const ChannelPair ch = sample_channels(cfg, ChannelModelConfig{}, derive_seed(seed, {0xd1, i}));
            const CascadedChannel q = assemble_cascaded(ch, p, cfg);
            const auto sus = random_susceptances(cfg, cfg.tau2, derive_seed(seed, {0xd2, i}));
            const PhaseObservation obs = run_phase(ch, sus, Phase::two, book, cfg, NoiseSource(0, false));
            const auto lin = linear_model(q, training_scattering_matrix(sus, cfg, p), cfg.pu_watts);
            for (std::size_t k = 0; k < cfg.users; ++k)
                worst = std::max(worst, (obs.per_user[k] - lin[k]).norm() / lin[k].norm());
        }
        out.push_back({"subframe simulation vs stacked model", worst < 1e-12, fmt("max relative error %.3g", worst)});
    }
    {
        // 10⁶ decorrelated entries: per subframe N·U per user, K users.
        const std::size_t per = cfg.bs_antennas * cfg.user_antennas * cfg.users;
        const std::size_t subframes = (1000000 + per - 1) / per;
        const NoiseSource noise(derive_seed(seed, {0xd3}));
        double acc = 0.0;
        std::size_t n = 0;
        for (std::size_t t = 0; t < subframes; ++t) {
            const CMatrix raw = noise.draw(2, t, cfg.bs_antennas, cfg.pilot_length(), cfg.noise_watts);
            for (std::size_t k = 0; k < cfg.users; ++k) {
                const CMatrix d = decorrelate(raw, book.user(k), cfg.pilot_length());
                acc += d.squaredNorm();
                n += static_cast<std::size_t>(d.size());
            }
        }
        const double expected = cfg.noise_watts / static_cast<double>(cfg.pilot_length());
        const double ratio = acc / static_cast<double>(n) / expected;
        out.push_back({"decorrelated noise variance", std::abs(ratio - 1.0) < 0.02,
                       fmt("measured/expected = %.5f over %.0f entries", ratio, static_cast<double>(n))});
    }
    return out;
}

}  // namespace bdris
