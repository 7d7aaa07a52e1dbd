// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bdris/config.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bdris {

enum class SweepAxis { pu, tau2, ris_elements, mix_ratio };
enum class Method { jtsmlcef, dacen, ls, lmmse };

std::string to_string(SweepAxis a);
std::string to_string(Method m);
SweepAxis parse_axis(const std::string& s);
Method parse_method(const std::string& s);

struct SweepSpec {
    ExperimentConfig base;
    SweepAxis axis = SweepAxis::pu;
    std::vector<double> values;
    std::vector<Method> methods;
    std::vector<std::uint64_t> seeds{1};
    /// Classical budgets in subframes; 0 means τ1+τ2 (equal to the learned methods).
    std::size_t ls_tau = 0;
    std::size_t lmmse_tau = 0;
    /// Preset mixed into the test split on the mix_ratio axis.
    std::string mix_preset = "preset-B";
    /// Where bundles are loaded from (and saved to when trained here). When
    /// `train_missing` is false a missing bundle is an error.
    std::string bundle_dir;
    bool train_missing = true;

    void validate() const;
};

/// Parses a sweep file: experiment keys plus axis, values, methods, seeds,
/// ls_tau, lmmse_tau, mix_preset, bundle_dir, train_missing.
SweepSpec load_sweep_spec(const std::string& path);
SweepSpec parse_sweep_spec(const std::string& text);

struct SweepRow {
    SweepAxis axis = SweepAxis::pu;
    double value = 0.0;
    Method method = Method::ls;
    std::uint64_t seed = 0;
    std::optional<double> nmse;  // empty when the estimator is underdetermined
    double avg_snr_db = 0.0;
    std::size_t pilot_slots = 0;
};

inline constexpr const char* kCsvHeader = "axis,value,method,seed,nmse,avg_snr_db,pilot_slots";
void write_csv(std::ostream& out, const std::vector<SweepRow>& rows);
std::string format_row(const SweepRow& row);

/// System/config and splits for one grid value of the spec's axis.
struct GridPoint {
    ExperimentConfig config;
    double eval_pu_dbm = 0.0;
    std::string bundle_key;  // identifies the trained bundle shared across values
    std::shared_ptr<const DatasetSplit> train, val, test;
};

class MissingBundleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Classical estimate NMSE on a split; τ subframes of random feasible
/// scattering per sample, physically simulated with noise. Returns nullopt for
/// LS when τ < M(M̄+1)/2.
std::optional<double> classical_nmse(Method method, const DatasetSplit& train, const DatasetSplit& test, double pu_dbm,
                                     std::size_t tau, std::uint64_t seed);

/// Mean of the average per-user SNR (dB) over the split under random feasible
/// scattering; identical across methods for a given (split, P_u, seed).
double average_snr_db(const DatasetSplit& split, double pu_dbm, std::uint64_t seed);

using ProgressFn = std::function<void(const std::string&)>;

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const ProgressFn& progress = {});

}  // namespace bdris
