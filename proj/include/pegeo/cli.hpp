#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pegeo/corrvol.hpp"
#include "pegeo/synth.hpp"
#include "pegeo/toyvit.hpp"

namespace pegeo::cli {

// One run, fully described. Every field has a default, so the empty JSON object is a
// valid config; unknown keys are rejected so typos fail loudly. Reports echo the
// effective config (defaults applied) to make runs self-describing.
struct RunConfig {
    toyvit::ToyViTConfig model;
    std::string probe = "stereo";  // kernel | overlap | stereo | sweep
    std::string corpus = "corpus/default_manifest.json";
    std::string out_dir = "pegeo-out";
    std::uint64_t seed = 0;
    double tau = corrvol::kDefaultTau;
    std::vector<std::string> interventions = {"vanilla", "zeroed", "shuffled(1)",
                                              "pairwise-shuffled(1)"};
    std::vector<double> omegas = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<int> offsets = {0, 1, 2, 3};
    std::vector<int> recall_ns = {1, 3};
    std::vector<int> deltas = {1, 2, 3};
    int max_images = 32;  // cap on corpus entries consumed per probe

    std::string kernel_method = "analytic";  // analytic | monte-carlo
    int kernel_samples = 50000;
    int kernel_grid = 6;

    std::string stereo_kind = "periodic-texture";
    int stereo_out_size = 0;  // 0 resolves to model.image_size; anything else must match it
    synth::DisparityProfile stereo_profile{synth::DisparityKind::constant, 8.0, 0.0, 0.0};
    std::string stereo_upsample = "none";  // none | bilinear
    bool dump_slices = false;
};

// Serialization is total: to_json emits every effective field, from_json validates
// ranges and enum spellings and throws invalid_argument on anything it cannot honor.
std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);

// Reads the file, parses it, and additionally requires the corpus manifest to exist.
RunConfig load_run_config(const std::string& path);

// Inverse of probes::intervention_name: "vanilla", "zeroed", "scaled(0.5,interpolated)",
// "shuffled(7)", "pairwise-shuffled(7)", "reindexed(1,2)".
toyvit::Intervention parse_intervention(const std::string& text);

// Commands write their reports under config.out_dir and throw on failure:
// invalid_argument for anything traceable to the config, other exceptions for
// runtime faults.
void cmd_kernel(const RunConfig& config);
void cmd_overlap(const RunConfig& config);
void cmd_stereo(const RunConfig& config);
void cmd_sweep(const RunConfig& config);

// Dispatches config.probe to the command above and maps exceptions to exit codes:
// 0 success, 2 validation failure, 3 runtime probe failure.
int run_command(const RunConfig& config);

}  // namespace pegeo::cli
