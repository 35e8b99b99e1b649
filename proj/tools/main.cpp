#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qjlab/common.hpp"
#include "qjlab/harness.hpp"

namespace fs = std::filesystem;
using namespace qjlab;

namespace {

std::string show(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

std::string show(cx z) {
    return show(z.real()) + (z.imag() < 0 ? " - " : " + ") + show(std::abs(z.imag())) + "i";
}

void print_semiclassical(const nlohmann::json& j) {
    std::cout << "saturation photon number: " << show(j["saturation_photon_number"].get<double>())
              << "\n";
    for (const auto& root : j["roots"]["roots"]) {
        const cx alpha{root["alpha"][0].get<double>(), root["alpha"][1].get<double>()};
        const std::string label = root["label"].get<std::string>();
        std::cout << "root " << label << ": alpha = " << show(alpha)
                  << ", |alpha|^2 = " << show(root["modulus2"].get<double>())
                  << (label == "U" ? " (unstable)" : " (stable)") << "\n";
    }
    if (j.contains("localization")) {
        std::cout << "localization time (bright -> unstable): "
                  << show(j["localization"]["kdt_loc"].get<double>()) << " / kappa\n";
        const auto& drive = j["meter_drive"];
        std::cout << "meter cancellation drive: "
                  << show(cx{drive[0].get<double>(), drive[1].get<double>()})
                  << ", reference transmission: "
                  << show(j["reference_transmission"].get<double>()) << "\n";
        std::cout << "adiabatic conditions: "
                  << (j["adiabatic"]["all_pass"].get<bool>() ? "pass" : "FAIL") << "\n";
    }
}

int run(int argc, char** argv) {
    CLI::App app{"simulation laboratory for a driven bistable cavity QED system\n"
                 "with jump metering and integrated-charge state readout"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, preset_name, out_dir, jumps_path, finals_path;
    std::uint64_t seed = 0;
    int workers = 0;
    int jump_index = 0;
    bool normalized = false;

    auto* config_opt =
        app.add_option("--config", config_path, "configuration file (key=value tree or JSON)");
    auto* preset_opt = app.add_option("--preset", preset_name, "built-in preset name");
    preset_opt->excludes(config_opt);
    auto* seed_opt = app.add_option("--seed", seed, "override [seeds] base_seed");
    auto* out_opt = app.add_option("--out", out_dir, "output directory");
    app.add_option("--workers", workers, "worker threads (0 = all hardware threads)");
    app.add_flag("--normalized", normalized, "scale Q surfaces to unit mass (native mass is pi)");

    CLI::App* sc = app.add_subcommand(
        "semiclassical", "mean-field amplitudes, localization time, and meter conditions");
    CLI::App* ss =
        app.add_subcommand("steady-state", "master-equation steady state and its Q surface");
    CLI::App* tr = app.add_subcommand("trajectory", "one seeded quantum trajectory");
    CLI::App* s1 = app.add_subcommand(
        "stage1", "trajectory with live metering: dip detection and jump amplitude reading");
    CLI::App* s2 = app.add_subcommand(
        "stage2", "integrated-charge ensemble compared against its terminal density");
    CLI::App* an =
        app.add_subcommand("analytic", "closed-form stage-2 targets, no simulation");
    CLI::App* cp = app.add_subcommand("compare",
                                      "re-compare a finals CSV against the configured target");
    s2->add_option("--jumps", jumps_path, "stage-1 jumps.json supplying the superposition");
    s2->add_option("--jump-index", jump_index, "record index within the jumps file");
    cp->add_option("--finals", finals_path, "finals CSV as written by stage2")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    ExperimentConfig config;
    if (*preset_opt) config = ExperimentConfig::preset(preset_name);
    else if (*config_opt) config = ExperimentConfig::load(config_path);
    if (*seed_opt) config.base_seed = seed;
    if (*out_opt) config.output.directory = out_dir;
    config.validate();

    const std::optional<fs::path> explicit_out =
        *out_opt ? std::optional<fs::path>(out_dir) : std::nullopt;
    const fs::path run_dir = config.output.directory;

    if (*sc) {
        const nlohmann::json j = cli_semiclassical(config);
        print_semiclassical(j);
        if (explicit_out) {
            RunDir dir = RunDir::create(*explicit_out, config);
            write_text_file(dir.file("semiclassical.json"), j.dump(2) + "\n");
            dir.note("semiclassical summary written");
        }
        return 0;
    }
    if (*ss) {
        const nlohmann::json j = cli_steady_state(config, explicit_out, normalized, workers);
        std::cout << "steady state <n> = " << show(j["mean_n"].get<double>())
                  << ", residual = " << show(j["residual"].get<double>())
                  << (j["used_fallback"].get<bool>() ? " (integration fallback)" : "") << "\n";
        return 0;
    }
    if (*tr) {
        const nlohmann::json j = cli_trajectory(config, explicit_out);
        std::cout << "trajectory: " << j["clicks"].get<std::size_t>() << " clicks over "
                  << j["samples"].get<std::size_t>() << " samples, time-averaged <n> = "
                  << show(j["mean_n_time_average"].get<double>()) << "\n";
        if (j["truncation_warning"].get<bool>())
            std::cout << "warning: top Fock level population reached "
                      << show(j["max_top_population"].get<double>()) << "\n";
        return 0;
    }
    if (*s1) {
        const Stage1Result result = cli_stage1(config, run_dir);
        std::cout << "stage 1: " << result.n_dips << " dips (" << result.n_metastable
                  << " metastable, " << result.n_fluctuation << " fluctuation, "
                  << result.n_indeterminate << " indeterminate), " << result.jumps.size()
                  << " jump readings -> " << result.run_dir.string() << "\n";
        return 0;
    }
    if (*s2) {
        const std::optional<fs::path> jumps =
            jumps_path.empty() ? std::nullopt : std::optional<fs::path>(jumps_path);
        const Stage2Result result = cli_stage2(config, run_dir, workers, jumps, jump_index);
        if (!result.compared) {
            std::cout << "stage 2: " << result.n_paths
                      << " path(s) recorded, comparison skipped (needs >= 100) ("
                      << result.run_dir.string() << ")\n";
            return 0;
        }
        const auto& r = result.report;
        std::cout << "stage 2: " << to_string(r.statistic) << " = " << show(r.value) << " vs "
                  << show(r.threshold) << " over " << r.n << " records -> "
                  << (r.pass ? "pass" : "FAIL") << " (" << result.run_dir.string() << ")\n";
        return r.pass ? 0 : 4;
    }
    if (*an) {
        const nlohmann::json j = cli_analytic(config, explicit_out);
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    if (*cp) {
        const ComparisonReport report = cli_compare(finals_path, config);
        std::cout << "compare: " << to_string(report.statistic) << " = " << show(report.value)
                  << " vs " << show(report.threshold) << " over " << report.n << " records -> "
                  << (report.pass ? "pass" : "FAIL") << "\n";
        return report.pass ? 0 : 4;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
