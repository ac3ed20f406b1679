// wfleak: measure information leakage of traffic-analysis features.
//
// Subcommands: extract, analyze, leakage [joint|individual], defend,
// bounds, validate. Options may also come from a `key = value` config
// file (--config); command-line flags win. Exit codes: 0 success,
// 2 usage error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include <wfleak/pipeline.hpp>

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"information leakage analysis for traffic-trace features"};
    app.set_version_flag("--version", wfleak::kVersion);
    app.set_config("--config", "", "config file with `key = value` lines");
    app.fallthrough();
    app.require_subcommand(1);

    wfleak::PipelineConfig cfg;

    app.add_option("--dataset", cfg.dataset_dir, "dataset root: <root>/<website_id>/<visit_id>.trace");
    app.add_option("--output", cfg.output_dir, "output directory for artifacts and manifests");
    app.add_option("--mode", cfg.mode, "world mode: closed | open")->capture_default_str();
    app.add_option("--monitored", cfg.monitored_file, "open mode: file with one monitored website id per line");
    app.add_option("--prior", cfg.prior, "website prior: uniform | zipf | file:<path>")->capture_default_str();
    app.add_option("--cell-size", cfg.cell_size, "if > 0, split packets into +/-1 cells of this size")
        ->capture_default_str();

    app.add_option("--top-n", cfg.top_n, "features kept after redundancy pruning")->capture_default_str();
    app.add_option("--prune-threshold", cfg.prune_threshold, "NMI redundancy threshold")->capture_default_str();
    app.add_option("--eps", cfg.eps, "clustering radius on 1 - NMI")->capture_default_str();
    app.add_option("--beta", cfg.beta, "repeats above which a value counts as discrete")->capture_default_str();
    app.add_option("--nmi-estimator", cfg.nmi_estimator, "NMI estimator: binned | kde")->capture_default_str();

    app.add_option("--mc-samples", cfg.mc_samples, "Monte Carlo sample count")->capture_default_str();
    app.add_option("--seed", cfg.seed, "master seed (required for stochastic stages)");
    app.add_option("--threads", cfg.threads, "worker thread cap (0 = hardware)")
        ->envname("WFLEAK_THREADS")
        ->capture_default_str();

    app.add_option("--defense", cfg.defense, "defense: buflo | tamaraw")->capture_default_str();
    app.add_option("--tau", cfg.buflo.tau, "buflo: minimum padded duration (s)")->capture_default_str();
    app.add_option("--rho", cfg.buflo.rho, "buflo: inter-cell interval (s)")->capture_default_str();
    app.add_option("--buflo-cell", cfg.buflo.cell_size, "buflo: emitted cell size")->capture_default_str();
    app.add_option("--pad-multiple", cfg.tamaraw.L, "tamaraw: pad per-direction counts to multiples of L")
        ->capture_default_str();
    app.add_option("--rho-out", cfg.tamaraw.rho_out, "tamaraw: outgoing interval (s)")->capture_default_str();
    app.add_option("--rho-in", cfg.tamaraw.rho_in, "tamaraw: incoming interval (s)")->capture_default_str();

    app.add_option("--resample", cfg.resample, "validate: bootstrap | subsample")->capture_default_str();
    app.add_option("--trials", cfg.trials, "validate: resampling trials")->capture_default_str();
    app.add_option("--ci-level", cfg.ci_level, "validate: confidence level")->capture_default_str();
    app.add_option("--world-size", cfg.world_size, "validate: websites per subsample trial");

    app.add_option("--n", cfg.bounds_n, "bounds: world size")->capture_default_str();
    app.add_option("--accuracy", cfg.accuracy, "bounds: classification accuracy alpha")->capture_default_str();
    app.add_option("--prior-file", cfg.bounds_prior_file, "bounds: prior file instead of uniform");
    app.add_option("--sweep-steps", cfg.sweep_steps, "bounds: extra alpha grid points")->capture_default_str();

    auto* cmd_extract = app.add_subcommand("extract", "extract the feature table from a dataset");
    auto* cmd_analyze = app.add_subcommand("analyze", "rank features, prune redundancy, cluster");
    auto* cmd_leakage = app.add_subcommand("leakage", "measure information leakage");
    auto* cmd_joint = cmd_leakage->add_subcommand("joint", "grouped joint leakage (default)");
    auto* cmd_individual = cmd_leakage->add_subcommand("individual", "per-feature leakage ranking");
    cmd_leakage->require_subcommand(0, 1);
    auto* cmd_defend = app.add_subcommand("defend", "apply a padding defense to a dataset");
    auto* cmd_bounds = app.add_subcommand("bounds", "closed-form accuracy bounds");
    auto* cmd_validate = app.add_subcommand("validate", "resampling confidence interval for joint leakage");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e); // prints help text or the parse error
        return code == 0 ? 0 : kExitUsage;
    }

    std::string stage = "setup";
    try {
        bool stochastic = cmd_analyze->parsed() || cmd_leakage->parsed() || cmd_validate->parsed();
        if (stochastic && app.count("--seed") == 0)
            throw std::invalid_argument("a --seed is required for stochastic stages");

        std::filesystem::path artifact;
        if (cmd_extract->parsed()) {
            stage = "extract";
            artifact = wfleak::stage_extract(cfg);
        } else if (cmd_analyze->parsed()) {
            stage = "analyze";
            artifact = wfleak::stage_analyze(cfg);
        } else if (cmd_leakage->parsed()) {
            bool joint = cmd_joint->parsed() || !cmd_individual->parsed();
            stage = joint ? "leakage-joint" : "leakage-individual";
            artifact = wfleak::stage_leakage(cfg, joint);
        } else if (cmd_defend->parsed()) {
            stage = "defend";
            artifact = wfleak::stage_defend(cfg);
        } else if (cmd_bounds->parsed()) {
            stage = "bounds";
            artifact = wfleak::stage_bounds(cfg);
        } else if (cmd_validate->parsed()) {
            stage = "validate";
            artifact = wfleak::stage_validate(cfg);
        }
        std::printf("%s: wrote %s\n", stage.c_str(), artifact.generic_string().c_str());
        return 0;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "%s: usage error: %s\n", stage.c_str(), e.what());
        return kExitUsage;
    } catch (const wfleak::NumericError& e) {
        std::fprintf(stderr, "%s: numeric failure: %s\n", stage.c_str(), e.what());
        return kExitNumeric;
    } catch (const wfleak::DataError& e) {
        std::fprintf(stderr, "%s: data error: %s\n", stage.c_str(), e.what());
        return kExitData;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "%s: data error: %s\n", stage.c_str(), e.what());
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "%s: data error: %s\n", stage.c_str(), e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s: failed: %s\n", stage.c_str(), e.what());
        return kExitNumeric;
    }
}
