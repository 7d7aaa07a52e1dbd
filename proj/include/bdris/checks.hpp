// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/models.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bdris {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Finite-difference checks of every primitive, the converter, an attention
/// block and the whole pipeline on a frozen-noise micro instance.
std::vector<CheckResult> gradcheck_suite(std::uint64_t seed = 1);

/// Feasibility of converted scattering over random draws, the cascaded-channel
/// identity and LS exactness.
std::vector<CheckResult> physics_suite(std::size_t draws = 10000, std::uint64_t seed = 1);

/// Per-subframe simulation against the stacked linear model, pilot
/// orthogonality and decorrelated noise variance.
std::vector<CheckResult> protocol_suite(std::uint64_t seed = 1);

/// Micro configuration used for the whole-pipeline gradient check.
struct MicroInstance {
    ModelBundle bundle;
    DatasetSplit data;
    Batch batch;
};
MicroInstance make_micro_instance(std::uint64_t seed);

}  // namespace bdris
