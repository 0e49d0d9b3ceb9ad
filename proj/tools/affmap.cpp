// affmap — amortised MAP super-resolution experiment harness.
//
// Subcommands:
//   fit-pinv <cfg>     fit the conv pseudoinverse (or closed-form matrix B)
//   swissroll <cfg>    2D benchmark: per-variant cross-entropy table + sweep
//   mse-affine <cfg>   projection-variant MSE learning curves on textures
//   texture-gan <cfg>  adversarial vs MSE super-resolution smoke experiment
//   report <dir>       pretty-print the CSV outputs of a previous run
//
// Exit codes: 0 success, 2 configuration error, 3 training divergence.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "affmap/affmap.hpp"

int main(int argc, char** argv) {
    CLI::App app{"amortised MAP super-resolution experiments"};
    app.require_subcommand(1);

    std::string cfg_path;
    std::string report_dir;
    CLI::App* fit = app.add_subcommand("fit-pinv", "fit a pseudoinverse operator");
    fit->add_option("config", cfg_path, "JSON config file")->required();
    CLI::App* swiss = app.add_subcommand("swissroll", "run the 2D benchmark");
    swiss->add_option("config", cfg_path, "JSON config file")->required();
    CLI::App* mse = app.add_subcommand("mse-affine", "projection-variant learning curves");
    mse->add_option("config", cfg_path, "JSON config file")->required();
    CLI::App* tex = app.add_subcommand("texture-gan", "adversarial texture experiment");
    tex->add_option("config", cfg_path, "JSON config file")->required();
    CLI::App* rep = app.add_subcommand("report", "print results from an output directory");
    rep->add_option("dir", report_dir, "output directory of a previous run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    using namespace affmap;
    try {
        if (fit->parsed()) {
            cli::cmd_fit_pinv(cli::load_fit_pinv_config(cfg_path));
        } else if (rep->parsed()) {
            cli::cmd_report(report_dir);
        } else {
            const cli::RunConfig run = cli::RunConfig::load(cfg_path);
            const std::string sub = swiss->parsed()   ? "swissroll"
                                    : mse->parsed()   ? "mse-affine"
                                                      : "texture-gan";
            require<ConfigError>(run.experiment == sub, "config is for experiment '",
                                 run.experiment, "' but the '", sub, "' subcommand was invoked");
            if (swiss->parsed()) cli::cmd_swissroll(run);
            else if (mse->parsed()) cli::cmd_mse_affine(run);
            else cli::cmd_texture_gan(run);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
