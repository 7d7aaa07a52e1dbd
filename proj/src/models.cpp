// SPDX-License-Identifier: Apache-2.0
#include "bdris/models.hpp"

#include <cmath>
#include <stdexcept>

namespace bdris {

using ad::Shape;
using ad::Tensor;
using ad::Var;

void ModelConfig::validate(const SystemConfig& sys) const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model config: " + what); };
    if (d_model < 2 || d_model % 2 != 0) fail("d_model must be even");
    if (heads < 1 || d_model % heads != 0) fail("d_model must be divisible by the head count");
    if (d_ff < 1 || d_group < 1) fail("d_ff and d_group must be >= 1");
    if (ffc_widths.empty()) fail("need at least one FC layer in the optimizer");
    for (auto w : ffc_widths)
        if (w < 1) fail("FC widths must be >= 1");
    if (ffc_widths.back() % sys.groups != 0) fail("last FC width must be divisible by G");
    if (!(xi > 0.0)) fail("xi must be positive");
}

Var& ParamStore::add(std::string name, Tensor init) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    items_.emplace_back(std::move(name), Var::parameter(std::move(init)));
    return items_.back().second;
}

Var& ParamStore::add_weight(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return add(std::move(name), std::move(t));
}

const Var& ParamStore::get(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    throw std::out_of_range("unknown parameter: " + name);
}

Var& ParamStore::get(const std::string& name) {
    for (auto& [n, v] : items_)
        if (n == name) return v;
    throw std::out_of_range("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
    for (const auto& item : items_)
        if (item.first == name) return true;
    return false;
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto& item : items_) n += item.second.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& item : items_) item.second.zero_grad();
}

Tensor sinusoidal_pe(std::size_t positions, std::size_t d_model, double xi) {
    if (d_model % 2 != 0) throw std::invalid_argument("sinusoidal_pe: d_model must be even");
    Tensor pe({positions, d_model});
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t j = 0; j < d_model / 2; ++j) {
            const double angle =
                static_cast<double>(p) / std::pow(xi, static_cast<double>(2 * j) / static_cast<double>(d_model));
            pe[p * d_model + 2 * j] = std::sin(angle);
            pe[p * d_model + 2 * j + 1] = std::cos(angle);
        }
    return pe;
}

Var mhsa(const Var& x, const Var& wq, const Var& wk, const Var& wv, const Var& wo, std::size_t heads, Tensor* weights) {
    if (x.shape().size() != 3) throw ad::ShapeError("mhsa expects [B, E, d], got " + ad::to_string(x.shape()));
    const std::size_t b = x.dim(0), e = x.dim(1), d = x.dim(2);
    if (heads < 1 || d % heads != 0) throw ad::ShapeError("mhsa: d_model must be divisible by the head count");
    const std::size_t dk = d / heads;
    auto split = [&](const Var& v) {
        return ad::reshape(ad::permute(ad::reshape(v, {b, e, heads, dk}), {0, 2, 1, 3}), {b * heads, e, dk});
    };
    const Var q = split(ad::matmul(x, wq));
    const Var k = split(ad::matmul(x, wk));
    const Var v = split(ad::matmul(x, wv));
    const Var attn = ad::softmax_rows(ad::scale(ad::bmm(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk))));
    if (weights) *weights = attn.value();
    const Var heads_out = ad::bmm(attn, v);
    const Var merged = ad::reshape(ad::permute(ad::reshape(heads_out, {b, heads, e, dk}), {0, 2, 1, 3}), {b, e, d});
    return ad::matmul(merged, wo);
}

AttentionParams AttentionParams::create(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t d_ff,
                                        Rng& rng) {
    AttentionParams p;
    p.ln1_g = store.add(prefix + ".ln1.gain", Tensor({d}, 1.0));
    p.ln1_b = store.add_bias(prefix + ".ln1.bias", d);
    p.wq = store.add_weight(prefix + ".wq", d, d, rng);
    p.wk = store.add_weight(prefix + ".wk", d, d, rng);
    p.wv = store.add_weight(prefix + ".wv", d, d, rng);
    p.wo = store.add_weight(prefix + ".wo", d, d, rng);
    p.ln2_g = store.add(prefix + ".ln2.gain", Tensor({d}, 1.0));
    p.ln2_b = store.add_bias(prefix + ".ln2.bias", d);
    p.ff1_w = store.add_weight(prefix + ".ff1.w", d, d_ff, rng);
    p.ff1_b = store.add_bias(prefix + ".ff1.b", d_ff);
    p.ff2_w = store.add_weight(prefix + ".ff2.w", d_ff, d, rng);
    p.ff2_b = store.add_bias(prefix + ".ff2.b", d);
    return p;
}

Var attention_block(const Var& x, const AttentionParams& p, std::size_t heads) {
    const Var h = ad::layer_norm(x, p.ln1_g, p.ln1_b);
    const Var rc1 = ad::add(mhsa(h, p.wq, p.wk, p.wv, p.wo, heads), x);
    const Var h2 = ad::layer_norm(rc1, p.ln2_g, p.ln2_b);
    const Var ff = ad::add_bias(ad::matmul(ad::relu(ad::add_bias(ad::matmul(h2, p.ff1_w), p.ff1_b)), p.ff2_w), p.ff2_b);
    return ad::add(ff, rc1);
}

// ---------------------------------------------------------------------------

Tsmo::Tsmo(ParamStore& store, const SystemConfig& sys, const ModelConfig& mc, Rng& rng)
    : input_width_(2 * sys.rx_dims() * sys.users * sys.tau1),
      groups_(sys.groups),
      group_coeffs_(sys.group_coeffs()),
      tau2_(sys.tau2) {
    std::size_t in = input_width_ + 1;
    for (std::size_t i = 0; i < mc.ffc_widths.size(); ++i) {
        const std::size_t out = mc.ffc_widths[i];
        w_.push_back(store.add_weight("tsmo.fc" + std::to_string(i) + ".w", in, out, rng));
        b_.push_back(store.add_bias("tsmo.fc" + std::to_string(i) + ".b", out));
        in = out;
    }
    const std::size_t per_group = in / groups_;
    wg1_ = store.add_weight("tsmo.group1.w", per_group, mc.d_group, rng);
    bg1_ = store.add_bias("tsmo.group1.b", mc.d_group);
    wg2_ = store.add_weight("tsmo.group2.w", mc.d_group, group_coeffs_ * tau2_, rng);
    bg2_ = store.add_bias("tsmo.group2.b", group_coeffs_ * tau2_);
}

Var Tsmo::forward(const Var& pilots, const Var& pu) const {
    if (pilots.shape().size() != 2 || pilots.dim(1) != input_width_)
        throw ad::ShapeError("tsmo: expected pilots [B, " + std::to_string(input_width_) + "], got " +
                             ad::to_string(pilots.shape()));
    const std::size_t b = pilots.dim(0);
    if (pu.shape() != Shape{b, 1}) throw ad::ShapeError("tsmo: expected power feature [B, 1]");
    Var x = ad::concat({pilots, pu}, 1);
    for (std::size_t i = 0; i < w_.size(); ++i) x = ad::relu(ad::add_bias(ad::matmul(x, w_[i]), b_[i]));
    const std::size_t width = x.dim(1);
    x = ad::reshape(x, {b, groups_, width / groups_});
    x = ad::relu(ad::add_bias(ad::matmul(x, wg1_), bg1_));
    x = ad::add_bias(ad::matmul(x, wg2_), bg2_);  // [B, G, S̄·τ2]
    return ad::reshape(x, {b, groups_ * group_coeffs_, tau2_});
}

// ---------------------------------------------------------------------------

Dace::Dace(ParamStore& store, const SystemConfig& sys, const ModelConfig& mc, Rng& rng)
    : nu_(sys.rx_dims()), k_(sys.users), d_(mc.d_model), heads_(mc.heads), coeffs_(sys.coeffs()) {
    const std::size_t d = d_;
    emb_w1_ = store.add_weight("dace.emb1.w", sys.tau2, d, rng);
    emb_b1_ = store.add_bias("dace.emb1.b", d);
    emb_w2_ = store.add_weight("dace.emb2.w", d, d, rng);
    emb_b2_ = store.add_bias("dace.emb2.b", d);

    auto make_branch = [&](const std::string& name, std::size_t positions, std::size_t fold, std::size_t layers) {
        Branch br;
        br.ln_g = store.add(name + ".ln.gain", Tensor({fold * d}, 1.0));
        br.ln_b = store.add_bias(name + ".ln.bias", fold * d);
        br.down_w = store.add_weight(name + ".down.w", fold * d, d, rng);
        br.down_b = store.add_bias(name + ".down.b", d);
        for (std::size_t l = 0; l < layers; ++l)
            br.blocks.push_back(AttentionParams::create(store, name + ".block" + std::to_string(l), d, mc.d_ff, rng));
        br.up_w = store.add_weight(name + ".up.w", d, fold * d, rng);
        br.up_b = store.add_bias(name + ".up.b", fold * d);
        br.pe = mc.positional_encoding ? sinusoidal_pe(positions, d, mc.xi) : Tensor({positions, d}, 0.0);
        br.pe = br.pe.reshaped({positions * d});
        return br;
    };
    intra_ = make_branch("dace.intra", 2 * nu_, k_, mc.intra_layers);
    inter_ = make_branch("dace.inter", 2 * k_, nu_, mc.inter_layers);

    fuse_w1_ = store.add_weight("dace.fuse1.w", 2 * d, d, rng);
    fuse_b1_ = store.add_bias("dace.fuse1.b", d);
    fuse_w2_ = store.add_weight("dace.fuse2.w", d, d, rng);
    fuse_b2_ = store.add_bias("dace.fuse2.b", d);
    out_w_ = store.add_weight("dace.out.w", d, coeffs_, rng);
    out_b_ = store.add_bias("dace.out.b", coeffs_);
}

Var Dace::embed(const Var& x) const {
    if (x.shape().size() != 5 || x.dim(1) != 2 || x.dim(2) != nu_ || x.dim(3) != k_ || x.dim(4) != emb_w1_.dim(0))
        throw ad::ShapeError("dace: expected [B, 2, NU, K, tau2], got " + ad::to_string(x.shape()));
    const Var h = ad::relu(ad::add_bias(ad::matmul(x, emb_w1_), emb_b1_));
    return ad::add_bias(ad::matmul(h, emb_w2_), emb_b2_);
}

Var Dace::run_branch(const Branch& br, const Var& tokens) const {
    const std::size_t b = tokens.dim(0), e = tokens.dim(1);
    Var h = ad::add_bias(ad::matmul(ad::layer_norm(tokens, br.ln_g, br.ln_b), br.down_w), br.down_b);
    h = ad::reshape(ad::add_bias(ad::reshape(h, {b, e * d_}), Var::constant(br.pe)), {b, e, d_});
    for (const auto& blk : br.blocks) h = attention_block(h, blk, heads_);
    return ad::add_bias(ad::matmul(h, br.up_w), br.up_b);
}

Var Dace::intra_branch(const Var& emb) const {
    const std::size_t b = emb.dim(0);
    const Var tokens = ad::reshape(emb, {b, 2 * nu_, k_ * d_});
    return ad::reshape(run_branch(intra_, tokens), {b, 2, nu_, k_, d_});
}

Var Dace::inter_branch(const Var& emb) const {
    const std::size_t b = emb.dim(0);
    const Var tokens = ad::reshape(ad::permute(emb, {0, 1, 3, 2, 4}), {b, 2 * k_, nu_ * d_});
    const Var out = ad::reshape(run_branch(inter_, tokens), {b, 2, k_, nu_, d_});
    return ad::permute(out, {0, 1, 3, 2, 4});
}

Var Dace::forward(const Var& x) const {
    const Var emb = embed(x);
    const Var dual = ad::concat({intra_branch(emb), inter_branch(emb)}, 4);
    Var h = ad::relu(ad::add_bias(ad::matmul(dual, fuse_w1_), fuse_b1_));
    h = ad::add_bias(ad::matmul(h, fuse_w2_), fuse_b2_);
    return ad::add_bias(ad::matmul(h, out_w_), out_b_);
}

// ---------------------------------------------------------------------------

ModelBundle ModelBundle::create(const SystemConfig& sys, const ModelConfig& mc, std::uint64_t init_seed,
                                std::uint64_t phase1_seed, double pu_lo_dbm, double pu_hi_dbm) {
    sys.validate();
    mc.validate(sys);
    if (pu_hi_dbm < pu_lo_dbm) throw std::invalid_argument("P_u interval must satisfy lo <= hi");
    ModelBundle b;
    b.system = sys;
    b.model = mc;
    b.phase1_seed = phase1_seed;
    b.phase1 = random_susceptances(sys, sys.tau1, derive_seed(phase1_seed, {1}));
    b.phase2_fixed = random_susceptances(sys, sys.tau2, derive_seed(phase1_seed, {2}));
    b.pu_lo_dbm = pu_lo_dbm;
    b.pu_hi_dbm = pu_hi_dbm;
    Rng rng(derive_seed(init_seed, {0x1417}));
    b.tsmo = Tsmo(b.params, sys, mc, rng);
    b.dace = Dace(b.params, sys, mc, rng);
    return b;
}

void ModelBundle::bind_layers() {
    // Rebuild the layers over a scratch store, then copy the loaded values in by name.
    ParamStore scratch;
    Rng rng(0);
    tsmo = Tsmo(scratch, system, model, rng);
    dace = Dace(scratch, system, model, rng);
    if (scratch.items().size() != params.items().size())
        throw std::invalid_argument("checkpoint parameter count does not match the architecture");
    for (auto& [name, var] : scratch.items()) {
        if (!params.contains(name)) throw std::invalid_argument("checkpoint is missing parameter " + name);
        const Var& loaded = params.get(name);
        if (loaded.shape() != var.shape()) throw std::invalid_argument("checkpoint shape mismatch for " + name);
        var.mutable_value() = loaded.value();
    }
    params = std::move(scratch);
}

double ModelBundle::pu_feature(double pu_dbm) const {
    const double center = 0.5 * (pu_lo_dbm + pu_hi_dbm);
    const double spread = (pu_hi_dbm - pu_lo_dbm) / std::sqrt(12.0);
    return spread > 0.0 ? (pu_dbm - center) / spread : pu_dbm - center;
}

// ---------------------------------------------------------------------------

Batch make_batch(const DatasetSplit& split, const std::vector<std::size_t>& indices, const std::vector<double>& pu_dbm,
                 std::uint64_t noise_seed, bool with_noise) {
    if (indices.empty() || pu_dbm.size() != indices.size())
        throw std::invalid_argument("make_batch: need one power per sample");
    const SystemConfig& sys = split.system;
    const std::size_t b = indices.size(), nu = sys.rx_dims(), k = sys.users, s = sys.coeffs();
    Batch out;
    out.size = b;
    out.pu_dbm = pu_dbm;
    out.q_re = Tensor({b, nu, k, s});
    out.q_im = Tensor({b, nu, k, s});
    out.n1_re = Tensor({b, nu, k, sys.tau1});
    out.n1_im = Tensor({b, nu, k, sys.tau1});
    out.n2_re = Tensor({b, nu, k, sys.tau2});
    out.n2_im = Tensor({b, nu, k, sys.tau2});
    const double var = sys.noise_watts / static_cast<double>(sys.pilot_length());
    const std::size_t per1 = nu * k * sys.tau1, per2 = nu * k * sys.tau2;
    for (std::size_t i = 0; i < b; ++i) {
        split.samples.at(indices[i]).cascaded.write_tensor(out.q_re.ptr() + i * nu * k * s, out.q_im.ptr() + i * nu * k * s);
        if (!with_noise) continue;
        Rng rng(derive_seed(noise_seed, {indices[i]}));
        for (std::size_t j = 0; j < per1; ++j) {
            const auto z = rng.cgauss(var);
            out.n1_re[i * per1 + j] = z.real();
            out.n1_im[i * per1 + j] = z.imag();
        }
        for (std::size_t j = 0; j < per2; ++j) {
            const auto z = rng.cgauss(var);
            out.n2_re[i * per2 + j] = z.real();
            out.n2_im[i * per2 + j] = z.imag();
        }
    }
    return out;
}

namespace {

ad::ComplexPair constant_pair(const CMatrix& m) {
    const auto r = static_cast<std::size_t>(m.rows()), c = static_cast<std::size_t>(m.cols());
    Tensor re({r, c}), im({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            re[i * c + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)).real();
            im[i * c + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)).imag();
        }
    return {Var::constant(std::move(re)), Var::constant(std::move(im))};
}

Var sqrt_power(const std::vector<double>& pu_dbm, bool inverse = false) {
    Tensor t({pu_dbm.size()});
    for (std::size_t i = 0; i < pu_dbm.size(); ++i) {
        const double a = std::sqrt(dbm_to_watts(pu_dbm[i]));
        t[i] = inverse ? 1.0 / a : a;
    }
    return Var::constant(std::move(t));
}

// [B, NU, K, τ] re/im -> standardized [B, 2, NU, K, τ]. Observations are
// divided by √P_u first, so the signal part has the same scale at every power.
Var standardize(const Var& re, const Var& im, const std::vector<double>& pu_dbm, const NormStats& norm) {
    const Var inv = sqrt_power(pu_dbm, true);
    Shape s = re.shape();
    Shape with_axis{s[0], 1, s[1], s[2], s[3]};
    const Var stacked = ad::concat({ad::reshape(ad::scale_leading(re, inv), with_axis),
                                    ad::reshape(ad::scale_leading(im, inv), with_axis)},
                                   1);
    return ad::scale(ad::add_scalar(stacked, -norm.pilot_mean), 1.0 / norm.pilot_std);
}

Var power_feature(const ModelBundle& bundle, const std::vector<double>& pu_dbm) {
    Tensor t({pu_dbm.size(), 1});
    for (std::size_t i = 0; i < pu_dbm.size(); ++i) t[i] = bundle.pu_feature(pu_dbm[i]);
    return Var::constant(std::move(t));
}

std::vector<std::size_t> full_to_half_rowmajor(const MappingP& p) {
    const std::size_t m = p.group_size();
    std::vector<std::size_t> idx(m * m);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < m; ++c) idx[r * m + c] = p.half_index(r, c);
    return idx;
}

// Raw optimizer output [B, S, τ2] (Z0·B) -> Φ̃ [B, S, τ2].
ad::ComplexPair convert_training_matrix(const Var& zb, const SystemConfig& sys) {
    const MappingP p = build_mapping(sys.group_size());
    const std::size_t b = zb.dim(0), g = sys.groups, h = sys.group_coeffs(), tau = zb.dim(2), m = sys.group_size();
    Var blocks = ad::permute(ad::reshape(zb, {b, g, h, tau}), {0, 3, 1, 2});  // [B, τ, G, S̄]
    blocks = ad::reshape(ad::gather_last(blocks, full_to_half_rowmajor(p)), {b * tau * g, m, m});
    const ad::ComplexPair phi = susceptance_to_scattering(blocks);
    auto to_half = [&](const Var& v) {
        const Var half = ad::gather_last(ad::reshape(v, {b, tau, g, m * m}), p.upper_offsets());
        return ad::reshape(ad::permute(half, {0, 2, 3, 1}), {b, g * h, tau});
    };
    return {to_half(phi.re), to_half(phi.im)};
}

}  // namespace

PipelineOutput forward_pipeline(const ModelBundle& bundle, const Batch& batch) {
    const SystemConfig& sys = bundle.system;
    const std::size_t b = batch.size, nu = sys.rx_dims(), k = sys.users, s = sys.coeffs();
    const MappingP p = build_mapping(sys.group_size());
    const Var amp = sqrt_power(batch.pu_dbm);
    const ad::ComplexPair q{Var::constant(batch.q_re), Var::constant(batch.q_im)};

    // Phase I: fixed random training matrix.
    const ad::ComplexPair phi1 = constant_pair(training_scattering_matrix(bundle.phase1, sys, p));
    const ad::ComplexPair y1 = ad::cmatmul(q, phi1);
    const Var y1_re = ad::add(ad::scale_leading(y1.re, amp), Var::constant(batch.n1_re));
    const Var y1_im = ad::add(ad::scale_leading(y1.im, amp), Var::constant(batch.n1_im));

    PipelineOutput out;
    ad::ComplexPair y2;
    if (bundle.model.tsmo_enabled) {
        const Var pilots = ad::reshape(standardize(y1_re, y1_im, batch.pu_dbm, bundle.norm), {b, 2 * nu * k * sys.tau1});
        out.susceptance = bundle.tsmo.forward(pilots, power_feature(bundle, batch.pu_dbm));
        out.phi2 = convert_training_matrix(out.susceptance, sys);
        const ad::ComplexPair qf{ad::reshape(q.re, {b, nu * k, s}), ad::reshape(q.im, {b, nu * k, s})};
        const ad::ComplexPair prod = ad::cmatmul(qf, out.phi2);
        y2 = {ad::reshape(prod.re, {b, nu, k, sys.tau2}), ad::reshape(prod.im, {b, nu, k, sys.tau2})};
    } else {
        out.phi2 = constant_pair(training_scattering_matrix(bundle.phase2_fixed, sys, p));
        y2 = ad::cmatmul(q, out.phi2);
    }
    const Var y2_re = ad::add(ad::scale_leading(y2.re, amp), Var::constant(batch.n2_re));
    const Var y2_im = ad::add(ad::scale_leading(y2.im, amp), Var::constant(batch.n2_im));
    out.estimate = bundle.dace.forward(standardize(y2_re, y2_im, batch.pu_dbm, bundle.norm));
    return out;
}

Tensor normalized_labels(const Batch& batch, const NormStats& norm) {
    const Shape& s = batch.q_re.shape();
    const std::size_t inner = s[1] * s[2] * s[3];
    Tensor out({s[0], 2, s[1], s[2], s[3]});
    const double g = 1.0 / std::sqrt(norm.label_gain);
    for (std::size_t i = 0; i < s[0]; ++i)
        for (std::size_t j = 0; j < inner; ++j) {
            out[(i * 2) * inner + j] = batch.q_re[i * inner + j] * g;
            out[(i * 2 + 1) * inner + j] = batch.q_im[i * inner + j] * g;
        }
    return out;
}

NormStats fit_norm_stats(const DatasetSplit& train, const ModelBundle& bundle, std::uint64_t seed) {
    const SystemConfig& sys = bundle.system;
    const MappingP p = build_mapping(sys.group_size());
    const CMatrix phi1 = training_scattering_matrix(bundle.phase1, sys, p);
    const double var = sys.noise_watts / static_cast<double>(sys.pilot_length());
    Rng rng(derive_seed(seed, {0x57a7}));
    std::vector<double> obs;
    obs.reserve(train.size() * 2 * sys.rx_dims() * sys.users * sys.tau1);
    for (const auto& sample : train.samples) {
        const double pu = dbm_to_watts(rng.uniform(bundle.pu_lo_dbm, bundle.pu_hi_dbm));
        const double inv = 1.0 / std::sqrt(pu);
        for (const auto& y : linear_model(sample.cascaded, phi1, pu))
            for (Eigen::Index c = 0; c < y.cols(); ++c)
                for (Eigen::Index r = 0; r < y.rows(); ++r) {
                    const auto v = (y(r, c) + rng.cgauss(var)) * inv;
                    obs.push_back(v.real());
                    obs.push_back(v.imag());
                }
    }
    return compute_norm_stats(train, obs);
}

namespace {

std::pair<Var, Var> observation_vars(const PhaseObservation& obs) {
    const std::size_t k = obs.per_user.size();
    const auto nu = static_cast<std::size_t>(obs.per_user.at(0).rows());
    const std::size_t tau = obs.subframes();
    Tensor re({1, nu, k, tau}), im({1, nu, k, tau});
    obs.write_tensor(re.ptr(), im.ptr());
    return {Var::constant(std::move(re)), Var::constant(std::move(im))};
}

}  // namespace

SusceptanceParams tsmo_forward(const ModelBundle& bundle, const PhaseObservation& phase1, double pu_dbm) {
    const SystemConfig& sys = bundle.system;
    if (phase1.subframes() != sys.tau1 || phase1.per_user.size() != sys.users)
        throw std::invalid_argument("tsmo_forward: observation does not match the model's Phase-I shape");
    const auto [re, im] = observation_vars(phase1);
    const Var pilots = ad::reshape(standardize(re, im, {pu_dbm}, bundle.norm), {1, 2 * sys.rx_dims() * sys.users * sys.tau1});
    const Var zb = bundle.tsmo.forward(pilots, power_feature(bundle, {pu_dbm}));
    SusceptanceParams out;
    out.values.resize(static_cast<Eigen::Index>(sys.coeffs()), static_cast<Eigen::Index>(sys.tau2));
    for (std::size_t r = 0; r < sys.coeffs(); ++r)
        for (std::size_t t = 0; t < sys.tau2; ++t)
            out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = zb.value()[r * sys.tau2 + t] / sys.z0;
    return out;
}

CascadedChannel dace_forward(const ModelBundle& bundle, const PhaseObservation& phase2, double pu_dbm) {
    const SystemConfig& sys = bundle.system;
    if (phase2.subframes() != sys.tau2 || phase2.per_user.size() != sys.users)
        throw std::invalid_argument("dace_forward: observation does not match the model's Phase-II shape");
    const auto [re, im] = observation_vars(phase2);
    const Var est = bundle.dace.forward(standardize(re, im, {pu_dbm}, bundle.norm));
    const std::size_t inner = sys.rx_dims() * sys.users * sys.coeffs();
    const double g = std::sqrt(bundle.norm.label_gain);
    std::vector<double> q_re(inner), q_im(inner);
    for (std::size_t j = 0; j < inner; ++j) {
        q_re[j] = est.value()[j] * g;
        q_im[j] = est.value()[inner + j] * g;
    }
    return CascadedChannel::from_tensor(q_re.data(), q_im.data(), sys.rx_dims(), sys.users, sys.coeffs());
}

PhaseTwoDesigner make_designer(const ModelBundle& bundle) {
    return [&bundle](const PhaseObservation& obs, double pu_dbm) {
        if (!bundle.model.tsmo_enabled) return bundle.phase2_fixed;
        return tsmo_forward(bundle, obs, pu_dbm);
    };
}

}  // namespace bdris
