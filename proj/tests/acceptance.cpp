// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 1 2 8`.
#include "bdris/channel.hpp"
#include "bdris/checks.hpp"
#include "bdris/config.hpp"
#include "bdris/persistence.hpp"
#include "bdris/sweep.hpp"
#include "bdris/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace bdris;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

const CheckResult& find(const std::vector<CheckResult>& rs, const std::string& name) {
    for (const auto& r : rs)
        if (r.name == name) return r;
    throw std::runtime_error("missing check " + name);
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool same_nonempty(const fs::path& a, const fs::path& b) {
    const std::string x = read_bytes(a);
    return !x.empty() && x == read_bytes(b);
}

/// Counts adjacent pairs where the value rises; the allowance is 10% of the pairs, rounded down.
Outcome monotone(const std::vector<double>& v, const std::string& label) {
    std::size_t bad = 0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i)
        if (v[i + 1] > v[i]) ++bad;
    const std::size_t pairs = v.size() - 1;
    std::string d = label + " [";
    for (std::size_t i = 0; i < v.size(); ++i) d += (i ? ", " : "") + fmt("%.4g", v[i]);
    d += "], " + std::to_string(bad) + "/" + std::to_string(pairs) + " rising pairs";
    return {static_cast<double>(bad) <= 0.1 * static_cast<double>(pairs), d};
}

// Sweep results are shared by criteria 6 and 7.
struct Trend {
    fs::path dir;
    std::vector<SweepRow> pu_rows, tau2_rows, tau1_rows;
    double seconds = 0.0;
    bool ran = false;
};

double mean_nmse(const std::vector<SweepRow>& rows, Method m, double value) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.method == m && r.value == value && r.nmse) {
            s += *r.nmse;
            ++n;
        }
    if (n == 0) throw std::runtime_error("no rows for " + to_string(m));
    return s / static_cast<double>(n);
}

const std::vector<double> kSnrGrid{5, 9, 13, 17, 21, 25};
constexpr double kOperatingPower = 15.0;

void run_trend(Trend& t) {
    if (t.ran) return;
    const auto t0 = Clock::now();
    auto progress = [](const std::string& s) { std::cerr << "    " << s << '\n'; };

    SweepSpec pu;
    pu.axis = SweepAxis::pu;
    pu.values = kSnrGrid;
    pu.values.push_back(kOperatingPower);
    pu.methods = {Method::jtsmlcef, Method::dacen, Method::lmmse, Method::ls};
    pu.seeds = {1, 2, 3};
    pu.ls_tau = pu.base.system.coeffs();
    pu.bundle_dir = (t.dir / "bundles").string();
    t.pu_rows = run_sweep(pu, progress);

    SweepSpec tau2 = pu;
    tau2.axis = SweepAxis::tau2;
    tau2.values = {4, 8, 16};
    tau2.methods = {Method::jtsmlcef};
    t.tau2_rows = run_sweep(tau2, progress);

    SweepSpec tau1 = tau2;
    tau1.base.system.tau1 = 2;
    tau1.values = {7};
    tau1.bundle_dir = (t.dir / "bundles-tau1").string();
    t.tau1_rows = run_sweep(tau1, progress);

    std::cout << kCsvHeader << '\n';
    for (const auto* rows : {&t.pu_rows, &t.tau2_rows, &t.tau1_rows}) write_csv(std::cout, *rows);
    t.seconds = seconds_since(t0);
    t.ran = true;
}

Outcome criterion6(Trend& t) {
    run_trend(t);
    const double p = kOperatingPower;
    const double jt = mean_nmse(t.pu_rows, Method::jtsmlcef, p), da = mean_nmse(t.pu_rows, Method::dacen, p);
    const double lm = mean_nmse(t.pu_rows, Method::lmmse, p), ls = mean_nmse(t.pu_rows, Method::ls, p);
    const bool a = jt < 0.5 * lm && jt < ls;
    const bool b = jt <= da;

    std::vector<double> by_tau2;
    for (double v : {4.0, 8.0, 16.0}) by_tau2.push_back(mean_nmse(t.tau2_rows, Method::jtsmlcef, v));
    std::vector<double> by_snr;
    for (double v : kSnrGrid) by_snr.push_back(mean_nmse(t.pu_rows, Method::jtsmlcef, v));
    const Outcome c1 = monotone(by_tau2, "tau2 {4,8,16}:"), c2 = monotone(by_snr, "P_u 5..25 dBm:");
    const bool in_time = t.seconds <= 3600.0;

    std::string d = fmt("(a) JT %.4g vs LMMSE %.4g (x0.5 = %.4g), LS %.4g; ", jt, lm, 0.5 * lm, ls);
    d += fmt("(b) JT %.4g <= DACEN %.4g; ", jt, da);
    d += "(c) " + c1.detail + "; " + c2.detail + fmt("; sweeps %.0f s", t.seconds);
    return {a && b && c1.pass && c2.pass && in_time, d};
}

Outcome criterion7(Trend& t) {
    run_trend(t);
    const double base = mean_nmse(t.pu_rows, Method::jtsmlcef, kOperatingPower);
    const double two = mean_nmse(t.tau1_rows, Method::jtsmlcef, 7);
    const double rel = std::abs(two - base) / base;
    return {rel <= 0.10, fmt("tau1=2/tau2=7 %.4g vs tau1=1/tau2=8 %.4g, relative difference %.3g", two, base, rel)};
}

ExperimentConfig micro_config() {
    ExperimentConfig c;
    c.system.bs_antennas = 2;
    c.system.ris_elements = 4;
    c.system.groups = 2;
    c.system.users = 2;
    c.system.user_antennas = 1;
    c.system.tau1 = 1;
    c.system.tau2 = 2;
    c.model.d_model = 8;
    c.model.d_ff = 16;
    c.model.ffc_widths = {16, 16};
    c.model.d_group = 16;
    c.train.batch_size = 16;
    c.train.max_epochs = 2;
    c.train_count = 64;
    c.val_count = 16;
    c.test_count = 32;
    return c;
}

Outcome criterion8(const fs::path& dir) {
    std::vector<std::string> failed;
    const ExperimentConfig desk;
    for (int run : {0, 1}) {
        const DatasetSplit s = build_dataset(desk.system, desk.channel, 500, SplitRole::train, 11);
        save_dataset(s, (dir / ("data" + std::to_string(run) + ".bdds")).string());
    }
    if (!same_nonempty(dir / "data0.bdds", dir / "data1.bdds")) failed.push_back("dataset");

    const ExperimentConfig m = micro_config();
    const DatasetSplit train = build_dataset(m.system, m.channel, m.train_count, SplitRole::train, m.data_seed);
    const DatasetSplit val = build_dataset(m.system, m.channel, m.val_count, SplitRole::validation, m.data_seed);
    for (int run : {0, 1})
        save_checkpoint(train_joint(train, val, m.model, m.train), (dir / ("m" + std::to_string(run) + ".bdmc")).string());
    if (!same_nonempty(dir / "m0.bdmc", dir / "m1.bdmc")) failed.push_back("checkpoint");

    for (int run : {0, 1}) {
        SweepSpec spec;
        spec.base = m;
        spec.axis = SweepAxis::pu;
        spec.values = {5, 15, 25};
        spec.methods = {Method::jtsmlcef, Method::dacen, Method::lmmse, Method::ls};
        spec.seeds = {1, 2};
        spec.bundle_dir = (dir / ("sweep" + std::to_string(run))).string();
        std::ofstream out(dir / ("sweep" + std::to_string(run) + ".csv"), std::ios::binary);
        write_csv(out, run_sweep(spec));
    }
    if (!same_nonempty(dir / "sweep0.csv", dir / "sweep1.csv")) failed.push_back("csv");

    std::string d = "datasets, checkpoints and sweep CSVs compared byte for byte";
    if (!failed.empty()) {
        d = "differs:";
        for (const auto& f : failed) d += " " + f;
    }
    return {failed.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
    auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

    const fs::path dir = fs::temp_directory_path() / ("bdris-acceptance-" + std::to_string(::getpid()));
    fs::create_directories(dir);

    int failures = 0;
    auto report = [&](int n, const std::string& name, const Outcome& o, double secs) {
        std::printf("%s  [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, name.c_str(), o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failures;
    };
    auto run = [&](int n, const std::string& name, const std::function<Outcome()>& f) {
        if (!wanted(n)) return;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        report(n, name, o, seconds_since(t0));
    };

    std::vector<CheckResult> physics;
    double physics_secs = 0.0;
    if (wanted(1) || wanted(2) || wanted(4)) {
        const auto t0 = Clock::now();
        physics = physics_suite(10000, 1);
        physics_secs = seconds_since(t0);
    }

    run(1, "scattering feasibility over 10^4 draws per group size", [&] {
        Outcome o{physics_secs < 10.0, ""};
        for (std::size_t gs : {2, 4, 8}) {
            const auto& r = find(physics, "feasibility, group size " + std::to_string(gs));
            o.pass = o.pass && r.passed;
            o.detail += "M̄=" + std::to_string(gs) + ": " + r.detail + "; ";
        }
        o.detail += fmt("suite %.2f s", physics_secs);
        return o;
    });
    run(2, "cascaded-channel identity over 100 pairs", [&] {
        const auto& r = find(physics, "cascaded-channel identity");
        return Outcome{r.passed, r.detail};
    });
    run(3, "protocol equivalence and decorrelated noise", [&] {
        const auto rs = protocol_suite(1);
        const auto& a = find(rs, "subframe simulation vs stacked model");
        const auto& b = find(rs, "decorrelated noise variance");
        return Outcome{a.passed && b.passed, a.detail + "; " + b.detail};
    });
    run(4, "LS exactness and underdetermined error", [&] {
        const auto& r = find(physics, "LS exactness");
        return Outcome{r.passed, r.detail};
    });
    run(5, "whole-pipeline gradient check", [&] {
        const auto t0 = Clock::now();
        const auto rs = gradcheck_suite(1);
        const double secs = seconds_since(t0);
        const auto& r = find(rs, "whole pipeline (200 sampled parameters)");
        return Outcome{r.passed && secs < 120.0, r.detail + fmt("; %.1f s", secs)};
    });

    Trend trend;
    trend.dir = dir;
    run(6, "trend reproduction at desk scale", [&] { return criterion6(trend); });
    run(7, "tau1 saturation", [&] { return criterion7(trend); });
    run(8, "determinism", [&] { return criterion8(dir); });

    fs::remove_all(dir);
    std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
