// SPDX-License-Identifier: Apache-2.0
#include "bdris/checks.hpp"
#include "bdris/config.hpp"
#include "bdris/persistence.hpp"
#include "bdris/sweep.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace bdris;

namespace {

int report(const std::string& title, const std::vector<CheckResult>& results) {
    int failures = 0;
    std::cout << "== " << title << '\n';
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        failures += r.passed ? 0 : 1;
    }
    return failures;
}

void write_rows(const std::string& path, const std::vector<SweepRow>& rows) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_csv(out, rows);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BD-RIS channel estimation workbench"};
    app.require_subcommand(1);

    std::string config_path, role = "train", out_path;
    std::size_t count = 0;
    std::uint64_t seed = 1;
    auto* gen = app.add_subcommand("gen", "Generate a dataset split");
    gen->add_option("--config", config_path, "Config file (key = value)")->required();
    gen->add_option("--role", role, "train | val | test")->required();
    gen->add_option("--count", count, "Number of samples")->required();
    gen->add_option("--seed", seed, "Dataset seed")->required();
    gen->add_option("--out", out_path, "Output file")->required();

    std::string data_dir;
    bool no_tsmo = false;
    auto* train = app.add_subcommand("train", "Train the joint model on <data-dir>/train.bdrs and val.bdrs");
    train->add_option("--config", config_path, "Config file")->required();
    train->add_option("--data-dir", data_dir, "Directory holding train.bdrs and val.bdrs")->required();
    train->add_option("--out", out_path, "Checkpoint path")->required();
    train->add_flag("--no-tsmo", no_tsmo, "Fixed random Phase-II scattering (estimator only)");

    std::string ckpt, data_path, csv_path;
    double pu_dbm = std::numeric_limits<double>::quiet_NaN();
    bool fast = false;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
    eval->add_option("--data", data_path, "Dataset file")->required();
    eval->add_option("--csv", csv_path, "Output CSV")->required();
    eval->add_option("--pu-dbm", pu_dbm, "Transmit power (default: training-interval midpoint)");
    eval->add_option("--seed", seed, "Noise seed");
    eval->add_flag("--fast", fast, "Batched linear-model evaluation instead of per-subframe simulation");

    std::string spec_path;
    auto* sweep = app.add_subcommand("sweep", "Run an experiment sweep");
    sweep->add_option("--spec", spec_path, "Sweep spec file")->required();
    sweep->add_option("--csv", csv_path, "Output CSV")->required();

    bool do_grad = false, do_phys = false, do_proto = false;
    auto* check = app.add_subcommand("check", "Run property suites");
    check->add_flag("--gradcheck", do_grad, "Finite-difference gradient checks");
    check->add_flag("--physics", do_phys, "Scattering feasibility and cascaded-channel identity");
    check->add_flag("--protocol", do_proto, "Pilot protocol equivalence and noise statistics");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const ExperimentConfig cfg = load_config(config_path);
            const DatasetSplit split = build_dataset(cfg.system, cfg.channel, count, parse_role(role), seed);
            save_dataset(split, out_path);
            std::cout << "wrote " << split.size() << " " << to_string(split.role) << " samples to " << out_path << '\n';
        } else if (*train) {
            ExperimentConfig cfg = load_config(config_path);
            if (no_tsmo) cfg.model.tsmo_enabled = false;
            const auto dir = std::filesystem::path(data_dir);
            const DatasetSplit tr = load_dataset((dir / "train.bdrs").string());
            const DatasetSplit va = load_dataset((dir / "val.bdrs").string());
            if (tr.role != SplitRole::train || va.role != SplitRole::validation)
                throw std::invalid_argument("train.bdrs / val.bdrs hold the wrong split roles");
            const ModelBundle b = train_joint(tr, va, cfg.model, cfg.train, nullptr, [](std::size_t e, double l, double v) {
                std::cout << "epoch " << e << " loss " << l << " val_nmse " << v << std::endl;
            });
            save_checkpoint(b, out_path);
            std::cout << "wrote " << out_path << '\n';
        } else if (*eval) {
            const ModelBundle b = load_checkpoint(ckpt);
            const DatasetSplit data = load_dataset(data_path);
            if (data.system.rx_dims() != b.system.rx_dims() || data.system.coeffs() != b.system.coeffs() ||
                data.system.users != b.system.users)
                throw std::invalid_argument("dataset dimensions do not match the checkpoint");
            if (std::isnan(pu_dbm)) pu_dbm = 0.5 * (b.pu_lo_dbm + b.pu_hi_dbm);
            SweepRow row;
            row.axis = SweepAxis::pu;
            row.value = pu_dbm;
            row.method = b.model.tsmo_enabled ? Method::jtsmlcef : Method::dacen;
            row.seed = seed;
            row.pilot_slots = b.pilot_slots();
            row.avg_snr_db = average_snr_db(data, pu_dbm, seed);
            if (fast) {
                row.nmse = evaluate_pipeline(b, data, pu_dbm, seed);
            } else {
                std::vector<CascadedChannel> truth;
                for (const auto& s : data.samples) truth.push_back(s.cascaded);
                row.nmse = nmse(truth, estimate_with_protocol(b, data, pu_dbm, seed));
            }
            write_rows(csv_path, {row});
            std::cout << format_row(row) << '\n';
        } else if (*sweep) {
            const SweepSpec spec = load_sweep_spec(spec_path);
            const auto rows = run_sweep(spec, [](const std::string& s) { std::cerr << s << std::endl; });
            write_rows(csv_path, rows);
            std::cout << "wrote " << rows.size() << " rows to " << csv_path << '\n';
        } else if (*check) {
            if (!do_grad && !do_phys && !do_proto) do_grad = do_phys = do_proto = true;
            int failures = 0;
            if (do_grad) failures += report("gradcheck", gradcheck_suite());
            if (do_phys) failures += report("physics", physics_suite());
            if (do_proto) failures += report("protocol", protocol_suite());
            return failures == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
