#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fieldalign/cli.hpp"

namespace cli = fieldalign::cli;

int main(int argc, char** argv) {
    CLI::App app{"Bayesian alignment of unlabeled marked point sets"};
    app.require_subcommand(1);

    std::string config_path, profile_name, out_dir = ".";
    std::optional<std::uint64_t> seed;
    unsigned workers = 1;
    std::vector<std::string> overrides;

    for (const auto& name : cli::command_names()) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "key = value file or a JSON artifact with a config object");
        sub->add_option("--profile", profile_name, "named defaults")->check(CLI::IsMember(cli::profile_names()));
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--out-dir", out_dir, "artifact directory");
        sub->add_option("--workers", workers, "worker threads (0: all cores)");
        sub->add_option("--set", overrides, "override, key=value")->allow_extra_args(false);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::ConfigFailure;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    cli::Context ctx;
    try {
        fieldalign::RunConfig file;
        if (!config_path.empty()) file = fieldalign::RunConfig::load(config_path);
        ctx.config = cli::effective_config(command, profile_name, file, overrides, seed);
    } catch (const fieldalign::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return cli::IoFailure;
    } catch (const fieldalign::Error& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return cli::ConfigFailure;
    }
    ctx.out_dir = out_dir;
    ctx.workers = workers;
    return cli::run(command, ctx);
}
