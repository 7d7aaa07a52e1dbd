// SPDX-License-Identifier: Apache-2.0
#include "bdris/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace bdris {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    return out;
}

}  // namespace

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(parse_u64(key, value));
}

std::vector<std::string> parse_string_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const auto& s : parse_string_list(value)) out.push_back(parse_double(key, s));
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

ExperimentConfig apply_config(const std::vector<std::pair<std::string, std::string>>& kv,
                              const std::vector<std::string>& extra) {
    ExperimentConfig c;
    for (const auto& [k, v] : kv)
        if (k == "preset") c.channel = ChannelModelConfig::preset(v);

    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto sz = [](std::size_t& f) -> Setter { return [&f](auto& k, auto& v) { f = parse_size(k, v); }; };
    auto dbl = [](double& f) -> Setter { return [&f](auto& k, auto& v) { f = parse_double(k, v); }; };
    auto u64 = [](std::uint64_t& f) -> Setter { return [&f](auto& k, auto& v) { f = parse_u64(k, v); }; };
    auto bln = [](bool& f) -> Setter { return [&f](auto& k, auto& v) { f = parse_bool(k, v); }; };
    auto& s = c.system;
    auto& ch = c.channel;
    auto& m = c.model;
    auto& t = c.train;
    const std::map<std::string, Setter> setters{
        {"bs_antennas", sz(s.bs_antennas)},
        {"ris_elements", sz(s.ris_elements)},
        {"groups", sz(s.groups)},
        {"users", sz(s.users)},
        {"user_antennas", sz(s.user_antennas)},
        {"tau1", sz(s.tau1)},
        {"tau2", sz(s.tau2)},
        {"pu_dbm", [&s](auto& k, auto& v) { s.pu_watts = dbm_to_watts(parse_double(k, v)); }},
        {"noise_dbm", [&s](auto& k, auto& v) { s.noise_watts = dbm_to_watts(parse_double(k, v)); }},
        {"z0", dbl(s.z0)},
        {"preset", [](auto&, auto&) {}},
        {"rician_k_it", dbl(ch.rician_k_it)},
        {"rician_k_los", dbl(ch.rician_k_los)},
        {"rician_k_nlos", dbl(ch.rician_k_nlos)},
        {"static_it", bln(ch.static_it)},
        {"clusters_it", sz(ch.clusters_it)},
        {"shared_clusters", sz(ch.shared_clusters)},
        {"private_clusters", sz(ch.private_clusters)},
        {"rays_per_cluster", sz(ch.rays_per_cluster)},
        {"angle_spread", dbl(ch.angle_spread)},
        {"p_los", dbl(ch.p_los)},
        {"geometry_seed", u64(ch.geometry_seed)},
        {"d_model", sz(m.d_model)},
        {"d_ff", sz(m.d_ff)},
        {"heads", sz(m.heads)},
        {"intra_layers", sz(m.intra_layers)},
        {"inter_layers", sz(m.inter_layers)},
        {"ffc_widths",
         [&m](auto& k, auto& v) {
             m.ffc_widths.clear();
             for (const auto& w : parse_string_list(v)) m.ffc_widths.push_back(parse_size(k, w));
         }},
        {"d_group", sz(m.d_group)},
        {"xi", dbl(m.xi)},
        {"positional_encoding", bln(m.positional_encoding)},
        {"tsmo", bln(m.tsmo_enabled)},
        {"batch_size", sz(t.batch_size)},
        {"learning_rate", dbl(t.learning_rate)},
        {"beta1", dbl(t.beta1)},
        {"beta2", dbl(t.beta2)},
        {"epsilon", dbl(t.epsilon)},
        {"max_epochs", sz(t.max_epochs)},
        {"patience", sz(t.patience)},
        {"min_delta", dbl(t.min_delta)},
        {"lr_decay", dbl(t.lr_decay)},
        {"seed", u64(t.seed)},
        {"pu_lo_dbm", dbl(t.pu_lo_dbm)},
        {"pu_hi_dbm", dbl(t.pu_hi_dbm)},
        {"eval_pu_dbm", dbl(t.eval_pu_dbm)},
        {"train_count", sz(c.train_count)},
        {"val_count", sz(c.val_count)},
        {"test_count", sz(c.test_count)},
        {"data_seed", u64(c.data_seed)},
    };
    for (const auto& [k, v] : kv) {
        const auto it = setters.find(k);
        if (it == setters.end()) {
            if (std::find(extra.begin(), extra.end(), k) != extra.end()) continue;
            throw ConfigError("unknown config key '" + k + "'");
        }
        it->second(k, v);
    }
    try {
        c.system.validate();
        c.channel.validate();
        c.model.validate(c.system);
        c.train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& extra) {
    return apply_config(parse_key_values(read_text_file(path)), extra);
}

}  // namespace bdris
