// SPDX-License-Identifier: Apache-2.0
#include "bdris/sweep.hpp"

#include "bdris/estimators.hpp"
#include "bdris/persistence.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

namespace bdris {

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::pu: return "pu";
        case SweepAxis::tau2: return "tau2";
        case SweepAxis::ris_elements: return "M";
        case SweepAxis::mix_ratio: return "mix_ratio";
    }
    return "?";
}

std::string to_string(Method m) {
    switch (m) {
        case Method::jtsmlcef: return "jtsmlcef";
        case Method::dacen: return "dacen";
        case Method::ls: return "ls";
        case Method::lmmse: return "lmmse";
    }
    return "?";
}

SweepAxis parse_axis(const std::string& s) {
    if (s == "pu") return SweepAxis::pu;
    if (s == "tau2") return SweepAxis::tau2;
    if (s == "M") return SweepAxis::ris_elements;
    if (s == "mix_ratio") return SweepAxis::mix_ratio;
    throw ConfigError("unknown sweep axis '" + s + "' (pu, tau2, M, mix_ratio)");
}

Method parse_method(const std::string& s) {
    if (s == "jtsmlcef") return Method::jtsmlcef;
    if (s == "dacen") return Method::dacen;
    if (s == "ls") return Method::ls;
    if (s == "lmmse") return Method::lmmse;
    throw ConfigError("unknown method '" + s + "' (jtsmlcef, dacen, ls, lmmse)");
}

namespace {

bool is_learned(Method m) { return m == Method::jtsmlcef || m == Method::dacen; }

}  // namespace

void SweepSpec::validate() const {
    if (values.empty()) throw ConfigError("sweep grid is empty");
    if (methods.empty()) throw ConfigError("sweep needs at least one method");
    if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
    for (double v : values) {
        if (axis == SweepAxis::mix_ratio && !(v >= 0.0 && v <= 1.0)) throw ConfigError("mix_ratio values must lie in [0, 1]");
        if ((axis == SweepAxis::tau2 || axis == SweepAxis::ris_elements) && !(v >= 1.0 && v == std::floor(v)))
            throw ConfigError("grid values on this axis must be positive integers");
        if (axis == SweepAxis::ris_elements && static_cast<std::size_t>(v) % base.system.group_size() != 0)
            throw ConfigError("M values must be multiples of the group size");
    }
}

SweepSpec parse_sweep_spec(const std::string& text) {
    static const std::vector<std::string> keys{"axis",      "values",    "methods",    "seeds",        "ls_tau",
                                               "lmmse_tau", "mix_preset", "bundle_dir", "train_missing"};
    const auto kv = parse_key_values(text);
    SweepSpec spec;
    spec.base = apply_config(kv, keys);
    for (const auto& [k, v] : kv) {
        if (k == "axis") spec.axis = parse_axis(v);
        else if (k == "values") spec.values = parse_double_list(k, v);
        else if (k == "methods") {
            spec.methods.clear();
            for (const auto& m : parse_string_list(v)) spec.methods.push_back(parse_method(m));
        } else if (k == "seeds") {
            spec.seeds.clear();
            for (const auto& s : parse_string_list(v)) spec.seeds.push_back(parse_size(k, s));
        } else if (k == "ls_tau") spec.ls_tau = parse_size(k, v);
        else if (k == "lmmse_tau") spec.lmmse_tau = parse_size(k, v);
        else if (k == "mix_preset") spec.mix_preset = v;
        else if (k == "bundle_dir") spec.bundle_dir = v;
        else if (k == "train_missing") spec.train_missing = (v == "true" || v == "1" || v == "yes");
    }
    spec.validate();
    return spec;
}

SweepSpec load_sweep_spec(const std::string& path) { return parse_sweep_spec(read_text_file(path)); }

std::string format_row(const SweepRow& row) {
    char buf[256];
    const std::string nmse = [&] {
        if (!row.nmse) return std::string("underdetermined");
        char b[64];
        std::snprintf(b, sizeof b, "%.10g", *row.nmse);
        return std::string(b);
    }();
    std::snprintf(buf, sizeof buf, "%s,%.10g,%s,%llu,%s,%.6f,%zu", to_string(row.axis).c_str(), row.value,
                  to_string(row.method).c_str(), static_cast<unsigned long long>(row.seed), nmse.c_str(), row.avg_snr_db,
                  row.pilot_slots);
    return buf;
}

void write_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << kCsvHeader << '\n';
    for (const auto& r : rows) out << format_row(r) << '\n';
}

std::optional<double> classical_nmse(Method method, const DatasetSplit& train, const DatasetSplit& test, double pu_dbm,
                                     std::size_t tau, std::uint64_t seed) {
    if (is_learned(method)) throw std::invalid_argument("classical_nmse: not a classical method");
    SystemConfig cfg = test.system;
    cfg.pu_watts = dbm_to_watts(pu_dbm);
    if (method == Method::ls && tau < cfg.coeffs()) return std::nullopt;
    const std::vector<CMatrix> cov = method == Method::lmmse ? estimate_column_covariance(train) : std::vector<CMatrix>{};
    const MappingP p = build_mapping(cfg.group_size());
    const PilotBook book = build_pilot_book(cfg.users, cfg.user_antennas);
    const double noise_eff = cfg.noise_watts / static_cast<double>(cfg.pilot_length());
    double total = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Sample& s = test.samples[i];
        const SusceptanceParams sus = random_susceptances(cfg, tau, derive_seed(seed, {i, 17}));
        const PhaseObservation obs = run_phase(s.channels, sus, Phase::one, book, cfg, NoiseSource(derive_seed(seed, {i, 19})));
        const CMatrix phi = training_scattering_matrix(sus, cfg, p);
        CascadedChannel est;
        for (std::size_t k = 0; k < cfg.users; ++k)
            est.per_user.push_back(method == Method::ls ? ls_estimate(obs.per_user[k], phi, cfg.pu_watts)
                                                        : lmmse_estimate(obs.per_user[k], phi, cfg.pu_watts, noise_eff, cov[k]));
        total += sample_nmse(s.cascaded, est);
    }
    return total / static_cast<double>(test.size());
}

double average_snr_db(const DatasetSplit& split, double pu_dbm, std::uint64_t seed) {
    double total = 0.0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        const ScatteringMatrix phi = random_feasible_scattering(split.system, derive_seed(seed, {i, 23}));
        total += snr_report(split.samples[i].channels, phi, dbm_to_watts(pu_dbm), split.system.noise_watts, split.system)
                     .average_db;
    }
    return total / static_cast<double>(split.size());
}

namespace {

std::string format_value(double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%g", v);
    return b;
}

struct DataCache {
    std::map<std::string, std::shared_ptr<const DatasetSplit>> splits;

    std::shared_ptr<const DatasetSplit> get(const std::string& key, const SystemConfig& sys, const ChannelModelConfig& model,
                                            std::size_t count, SplitRole role, std::uint64_t seed) {
        auto& slot = splits[key + "/" + to_string(role)];
        if (!slot) slot = std::make_shared<const DatasetSplit>(build_dataset(sys, model, count, role, seed));
        return slot;
    }
};

GridPoint make_grid_point(const SweepSpec& spec, double v, DataCache& cache) {
    GridPoint g;
    g.config = spec.base;
    g.eval_pu_dbm = spec.base.train.eval_power();
    std::string data_key = "base";
    switch (spec.axis) {
        case SweepAxis::pu:
            g.eval_pu_dbm = v;
            break;
        case SweepAxis::tau2:
            g.config.system.tau2 = static_cast<std::size_t>(v);
            // The base τ2 is the same model as every other axis trains, so it shares the bundle.
            if (g.config.system.tau2 != spec.base.system.tau2) data_key = "tau2=" + format_value(v);
            break;
        case SweepAxis::ris_elements: {
            const std::size_t gs = spec.base.system.group_size();
            g.config.system.ris_elements = static_cast<std::size_t>(v);
            g.config.system.groups = g.config.system.ris_elements / gs;
            data_key = "M=" + format_value(v);
            break;
        }
        case SweepAxis::mix_ratio:
            break;
    }
    g.config.system.validate();
    g.bundle_key = data_key;
    const ExperimentConfig& c = g.config;
    // The system dimensions, not τ2, determine the channels, so τ2 points share data.
    const std::string channel_key = spec.axis == SweepAxis::ris_elements ? data_key : "base";
    g.train = cache.get(channel_key, c.system, c.channel, c.train_count, SplitRole::train, c.data_seed);
    g.val = cache.get(channel_key, c.system, c.channel, c.val_count, SplitRole::validation, c.data_seed);
    g.test = cache.get(channel_key, c.system, c.channel, c.test_count, SplitRole::test, c.data_seed);
    auto retag = [&](std::shared_ptr<const DatasetSplit> s) {
        if (s->system.tau2 == c.system.tau2) return s;
        auto copy = std::make_shared<DatasetSplit>(*s);
        copy->system = c.system;
        return std::shared_ptr<const DatasetSplit>(copy);
    };
    g.train = retag(g.train);
    g.val = retag(g.val);
    g.test = retag(g.test);
    if (spec.axis == SweepAxis::mix_ratio) {
        const auto mixed_count = static_cast<std::size_t>(std::llround(v * static_cast<double>(c.test_count)));
        auto mixed = std::make_shared<DatasetSplit>(*g.test);
        mixed->samples.resize(c.test_count - mixed_count);
        if (mixed_count > 0) {
            const DatasetSplit other = build_dataset(c.system, ChannelModelConfig::preset(spec.mix_preset), mixed_count,
                                                     SplitRole::test, derive_seed(c.data_seed, {0x6d1c}));
            mixed->samples.insert(mixed->samples.end(), other.samples.begin(), other.samples.end());
        }
        g.test = mixed;
    }
    return g;
}

}  // namespace

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const ProgressFn& progress) {
    spec.validate();
    DataCache cache;
    std::map<std::string, std::shared_ptr<ModelBundle>> bundles;
    auto note = [&](const std::string& s) {
        if (progress) progress(s);
    };

    auto bundle_for = [&](const GridPoint& g, Method m, std::uint64_t seed) -> const ModelBundle& {
        const std::string name = to_string(m) + "_" + g.bundle_key + "_s" + std::to_string(seed);
        auto& slot = bundles[name];
        if (slot) return *slot;
        std::string path;
        if (!spec.bundle_dir.empty()) {
            std::string file = name;
            for (auto& ch : file)
                if (ch == '=' || ch == '/') ch = '-';
            path = (std::filesystem::path(spec.bundle_dir) / (file + ".bdmc")).string();
            if (std::filesystem::exists(path)) {
                note("loading " + path);
                slot = std::make_shared<ModelBundle>(load_checkpoint(path));
                return *slot;
            }
        }
        if (!spec.train_missing) throw MissingBundleError("no trained bundle for " + name);
        ModelConfig mc = g.config.model;
        mc.tsmo_enabled = m == Method::jtsmlcef;
        TrainConfig tc = g.config.train;
        tc.seed = seed;
        note("training " + name);
        slot = std::make_shared<ModelBundle>(train_joint(*g.train, *g.val, mc, tc, nullptr,
                                                         [&](std::size_t e, double loss, double v) {
                                                             char b[160];
                                                             std::snprintf(b, sizeof b, "  epoch %zu loss %.5g val %.5g",
                                                                           e, loss, v);
                                                             note(b);
                                                         }));
        if (!path.empty()) {
            std::filesystem::create_directories(spec.bundle_dir);
            save_checkpoint(*slot, path);
        }
        return *slot;
    };

    std::vector<SweepRow> rows;
    for (double v : spec.values) {
        const GridPoint g = make_grid_point(spec, v, cache);
        const SystemConfig& sys = g.config.system;
        const double snr = average_snr_db(*g.test, g.eval_pu_dbm, g.config.data_seed);
        for (Method m : spec.methods)
            for (std::uint64_t seed : spec.seeds) {
                SweepRow row;
                row.axis = spec.axis;
                row.value = v;
                row.method = m;
                row.seed = seed;
                row.avg_snr_db = snr;
                if (is_learned(m)) {
                    const ModelBundle& b = bundle_for(g, m, seed);
                    row.nmse = evaluate_pipeline(b, *g.test, g.eval_pu_dbm, derive_seed(seed, {0xE7A1}));
                    row.pilot_slots = b.pilot_slots();
                } else {
                    const std::size_t budget = m == Method::ls ? spec.ls_tau : spec.lmmse_tau;
                    const std::size_t tau = budget == 0 ? sys.tau1 + sys.tau2 : budget;
                    row.nmse = classical_nmse(m, *g.train, *g.test, g.eval_pu_dbm, tau, seed);
                    row.pilot_slots = sys.pilot_length() * tau;
                }
                note(format_row(row));
                rows.push_back(row);
            }
    }
    return rows;
}

}  // namespace bdris
