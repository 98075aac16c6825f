// Experiment runner CLI: run / resume / report / render.
//
// Environment:
//   AAE_DATA_DIR      dataset root for relative dataset paths (default ./data)
//   AAE_BLAS_THREADS  BLAS thread count (default 1; logs are reproducible
//                     only at a fixed count)

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "aae/runner.hpp"

namespace {

int blas_threads_from_env() {
    const char* t = std::getenv("AAE_BLAS_THREADS");
    return t ? std::atoi(t) : 1;
}

}  // namespace

int main(int argc, char** argv) {
    aae::set_blas_threads(blas_threads_from_env());

    CLI::App app{"adversarial autoencoder experiment runner"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_path;
    std::uint64_t seed_override = 0;
    std::size_t epochs_override = 0;
    std::vector<std::string> run_dirs;

    CLI::App* cmd_run = app.add_subcommand("run", "train an experiment from a config file");
    cmd_run->add_option("--config", config_path, "experiment config (JSON)")->required();
    CLI::Option* run_seed = cmd_run->add_option("--seed-override", seed_override, "replace the config seed");
    CLI::Option* run_epochs =
        cmd_run->add_option("--epochs-override", epochs_override, "replace the epoch count");
    cmd_run->add_option("--out", out_path, "override the output directory");

    CLI::App* cmd_resume = app.add_subcommand("resume", "continue training from a checkpoint");
    cmd_resume->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    cmd_resume->add_option("--config", config_path, "experiment config (JSON)")->required();
    CLI::Option* res_epochs =
        cmd_resume->add_option("--epochs-override", epochs_override, "replace the epoch count");
    cmd_resume->add_option("--out", out_path, "override the output directory");

    CLI::App* cmd_report = app.add_subcommand("report", "aggregate run results into a table");
    cmd_report->add_option("dirs", run_dirs, "run directories")->required()->expected(-1);
    std::string report_out = "report.tsv";
    cmd_report->add_option("--out", report_out, "output table path");

    CLI::App* cmd_render = app.add_subcommand("render", "re-render figures from a checkpoint");
    cmd_render->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    cmd_render->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd_render->add_option("--out", out_path, "figure output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) {
            aae::RunConfig rc = aae::load_config_file(config_path);
            aae::RunOverrides ov;
            if (run_seed->count()) ov.seed = seed_override;
            if (run_epochs->count()) ov.epochs = epochs_override;
            if (!out_path.empty()) ov.out = out_path;
            return aae::run_experiment(rc, ov, std::cout);
        }
        if (cmd_resume->parsed()) {
            aae::RunConfig rc = aae::load_config_file(config_path);
            aae::RunOverrides ov;
            if (res_epochs->count()) ov.epochs = epochs_override;
            if (!out_path.empty()) ov.out = out_path;
            return aae::resume_experiment(checkpoint_path, rc, ov, std::cout);
        }
        if (cmd_report->parsed()) {
            const int rcode = aae::report_runs(run_dirs, report_out);
            std::cout << "report written to " << report_out << "\n";
            return rcode;
        }
        if (cmd_render->parsed()) {
            aae::RunConfig rc = aae::load_config_file(config_path);
            return aae::render_from_checkpoint(checkpoint_path, rc, out_path, std::cout);
        }
    } catch (const aae::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const aae::IngestError& e) {
        std::cerr << "ingest error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
