// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/channel.hpp"
#include "bdris/models.hpp"
#include "bdris/training.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdris {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a `key = value` file can set. See README for the key list.
struct ExperimentConfig {
    SystemConfig system;
    ChannelModelConfig channel;
    ModelConfig model;
    TrainConfig train;
    std::size_t train_count = 20000;
    std::size_t val_count = 2000;
    std::size_t test_count = 2000;
    std::uint64_t data_seed = 1;
};

/// Ordered key/value pairs; `#` starts a comment, blank lines are skipped.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

/// Applies known keys; unknown keys throw ConfigError. The `preset` key is
/// applied before any other channel key regardless of its position.
/// Keys listed in `extra` are skipped so callers can layer their own.
ExperimentConfig apply_config(const std::vector<std::pair<std::string, std::string>>& kv,
                              const std::vector<std::string>& extra = {});

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& extra = {});
std::string read_text_file(const std::string& path);

double parse_double(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);
std::vector<std::string> parse_string_list(const std::string& value);

}  // namespace bdris
