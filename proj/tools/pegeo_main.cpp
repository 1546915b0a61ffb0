#include <cstdio>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"

#include "pegeo/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"positional-geometry probes over a deterministic toy ViT"};

    std::string config_path;
    std::string out_dir;
    std::string probe;
    std::uint64_t seed = 0;
    bool dump_slices = false;

    app.add_option("--config", config_path, "JSON run config; defaults apply when omitted")
        ->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "output directory (overrides the config)");
    app.add_option("--probe", probe, "kernel | overlap | stereo | sweep");
    auto* seed_opt = app.add_option("--seed", seed, "run seed (overrides the config)");
    app.add_flag("--dump-slices", dump_slices, "also write per-layer epipolar slices (stereo)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    pegeo::cli::RunConfig config;
    try {
        if (!config_path.empty()) config = pegeo::cli::load_run_config(config_path);
        if (!out_dir.empty()) config.out_dir = out_dir;
        if (!probe.empty()) config.probe = probe;
        if (seed_opt->count() > 0) config.seed = seed;
        if (dump_slices) config.dump_slices = true;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }

    return pegeo::cli::run_command(config);
}
