// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/channel.hpp"
#include "bdris/models.hpp"

#include <stdexcept>
#include <string>

namespace bdris {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian "BDRS" file: configs, role, seed, then per sample H_IT,
/// H_RI and Q̄. Loading recomputes Q̄ from the channels and rejects files
/// where the two disagree.
void save_dataset(const DatasetSplit& split, const std::string& path);
DatasetSplit load_dataset(const std::string& path);

/// Little-endian "BDMC" file: system and model configs, normalization
/// statistics, Phase-I seed and susceptances, P_u interval, fixed Phase-II
/// susceptances, then named parameter records.
void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const ModelBundle& bundle);
ModelBundle deserialize_checkpoint(const std::string& bytes);
std::string serialize_dataset(const DatasetSplit& split);
DatasetSplit deserialize_dataset(const std::string& bytes);

}  // namespace bdris
