#include "pegeo/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "pegeo/attnlab.hpp"
#include "pegeo/io.hpp"
#include "pegeo/parallel.hpp"
#include "pegeo/posenc.hpp"
#include "pegeo/probes.hpp"

namespace pegeo::cli {

namespace {

namespace fs = std::filesystem;

void require_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                  const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::invalid_argument("cli: unknown key '" + key + "' in " + where);
}

std::string scheme_kind_name(posenc::SchemeKind kind) {
    switch (kind) {
        case posenc::SchemeKind::none: return "none";
        case posenc::SchemeKind::absolute: return "absolute";
        case posenc::SchemeKind::relative: return "relative";
        case posenc::SchemeKind::rotary: return "rotary";
    }
    return "unknown";
}

// Keeps condition names usable as file stems: "shuffled(7)" -> "shuffled_7".
std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name)
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.')
            out += c;
        else if (out.empty() || out.back() != '_')
            out += '_';
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

double parse_number(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("cli: bad number '" + text + "' in " + what);
    }
    if (used != text.size())
        throw std::invalid_argument("cli: bad number '" + text + "' in " + what);
    return v;
}

std::vector<synth::SceneSpec> load_manifest(const std::string& path) {
    if (!fs::exists(path))
        throw std::invalid_argument("cli: corpus manifest not found: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("cli: corpus manifest is not valid JSON: " +
                                    std::string(e.what()));
    }
    if (!j.is_array()) throw std::invalid_argument("cli: corpus manifest must be a JSON list");
    std::vector<synth::SceneSpec> specs;
    for (const auto& entry : j) specs.push_back(synth::scene_spec_from_json(entry.dump()));
    if (specs.empty()) throw std::invalid_argument("cli: corpus manifest is empty");
    return specs;
}

void ensure_out_dir(const RunConfig& config) {
    fs::create_directories(config.out_dir);
}

std::string out_path(const RunConfig& config, const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
}

void write_report(const RunConfig& config, probes::ProbeReport& report,
                  const std::string& stem) {
    if (config.model.scheme == posenc::SchemeKind::rotary)
        report.meta.emplace_back("rotary_axis_split", "alternating");
    report.meta.emplace_back("effective_config", run_config_to_json(config));
    report.timestamp = probes::now_iso8601();
    io::write_file(out_path(config, stem + ".json"), probes::report_to_json(report));
    io::write_file(out_path(config, stem + ".csv"), probes::report_to_csv(report));
}

int resolved_out_size(const RunConfig& config) {
    return config.stereo_out_size == 0 ? config.model.image_size : config.stereo_out_size;
}

Image crop_top_left(const Image& img, int size) {
    if (img.height < size || img.width < size)
        throw std::invalid_argument("cli: scene smaller than the model input");
    Image out(size, size, img.channels);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

std::vector<toyvit::Intervention> parse_interventions(const RunConfig& config) {
    std::vector<toyvit::Intervention> ivs;
    for (const std::string& name : config.interventions) ivs.push_back(parse_intervention(name));
    if (ivs.empty()) throw std::invalid_argument("cli: intervention list is empty");
    return ivs;
}

}  // namespace

toyvit::Intervention parse_intervention(const std::string& text) {
    const auto open = text.find('(');
    std::string head = text.substr(0, open);
    std::vector<std::string> args;
    if (open != std::string::npos) {
        if (text.back() != ')')
            throw std::invalid_argument("cli: unbalanced intervention '" + text + "'");
        std::string body = text.substr(open + 1, text.size() - open - 2);
        std::istringstream in(body);
        std::string piece;
        while (std::getline(in, piece, ',')) args.push_back(piece);
    }
    auto want = [&](std::size_t n) {
        if (args.size() != n)
            throw std::invalid_argument("cli: intervention '" + text + "' takes " +
                                        std::to_string(n) + " arguments");
    };
    if (head == "vanilla") {
        want(0);
        return toyvit::Intervention::vanilla();
    }
    if (head == "zeroed") {
        want(0);
        return toyvit::Intervention::zeroed();
    }
    if (head == "scaled") {
        want(2);
        const double omega = parse_number(args[0], text);
        posenc::WeightMode mode;
        if (args[1] == "interpolated")
            mode = posenc::WeightMode::interpolated;
        else if (args[1] == "phase-scaled")
            mode = posenc::WeightMode::phase_scaled;
        else
            throw std::invalid_argument("cli: unknown weight mode '" + args[1] + "'");
        return toyvit::Intervention::scaled(omega, mode);
    }
    if (head == "shuffled" || head == "pairwise-shuffled") {
        want(1);
        const double seed = parse_number(args[0], text);
        if (seed < 0 || seed != std::floor(seed))
            throw std::invalid_argument("cli: seed must be a non-negative integer in '" + text +
                                        "'");
        const auto s = static_cast<std::uint64_t>(seed);
        return head == "shuffled" ? toyvit::Intervention::shuffled(s)
                                  : toyvit::Intervention::pairwise_shuffled(s);
    }
    if (head == "reindexed") {
        want(2);
        const double dr = parse_number(args[0], text);
        const double dc = parse_number(args[1], text);
        if (dr != std::floor(dr) || dc != std::floor(dc))
            throw std::invalid_argument("cli: reindex offsets must be integers in '" + text + "'");
        return toyvit::Intervention::reindexed(static_cast<int>(dr), static_cast<int>(dc));
    }
    throw std::invalid_argument("cli: unknown intervention '" + text + "'");
}

std::string run_config_to_json(const RunConfig& config) {
    nlohmann::ordered_json j;
    j["model"] = nlohmann::ordered_json::parse(toyvit::config_to_json(config.model));
    j["probe"] = config.probe;
    j["corpus"] = config.corpus;
    j["out_dir"] = config.out_dir;
    j["seed"] = config.seed;
    j["tau"] = config.tau;
    j["interventions"] = config.interventions;
    j["omegas"] = config.omegas;
    j["offsets"] = config.offsets;
    j["recall_ns"] = config.recall_ns;
    j["deltas"] = config.deltas;
    j["max_images"] = config.max_images;
    j["kernel"] = {{"method", config.kernel_method},
                   {"samples", config.kernel_samples},
                   {"grid", config.kernel_grid}};
    j["stereo"] = {
        {"scene_kind", config.stereo_kind},
        {"out_size", config.stereo_out_size},
        {"disparity", nlohmann::ordered_json::parse(
                          synth::disparity_profile_to_json(config.stereo_profile))},
        {"upsample", config.stereo_upsample}};
    j["dump_slices"] = config.dump_slices;
    return j.dump();
}

RunConfig run_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("cli: config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw std::invalid_argument("cli: config must be a JSON object");
    require_keys(j,
                 {"model", "probe", "corpus", "out_dir", "seed", "tau", "interventions",
                  "omegas", "offsets", "recall_ns", "deltas", "max_images", "kernel", "stereo",
                  "dump_slices"},
                 "config");

    RunConfig config;
    try {
        if (j.contains("model")) config.model = toyvit::config_from_json(j["model"].dump());
        config.probe = j.value("probe", config.probe);
        config.corpus = j.value("corpus", config.corpus);
        config.out_dir = j.value("out_dir", config.out_dir);
        config.seed = j.value("seed", config.seed);
        config.tau = j.value("tau", config.tau);
        if (j.contains("interventions"))
            config.interventions = j["interventions"].get<std::vector<std::string>>();
        if (j.contains("omegas")) config.omegas = j["omegas"].get<std::vector<double>>();
        if (j.contains("offsets")) config.offsets = j["offsets"].get<std::vector<int>>();
        if (j.contains("recall_ns")) config.recall_ns = j["recall_ns"].get<std::vector<int>>();
        if (j.contains("deltas")) config.deltas = j["deltas"].get<std::vector<int>>();
        config.max_images = j.value("max_images", config.max_images);
        if (j.contains("kernel")) {
            const auto& k = j["kernel"];
            require_keys(k, {"method", "samples", "grid"}, "kernel");
            config.kernel_method = k.value("method", config.kernel_method);
            config.kernel_samples = k.value("samples", config.kernel_samples);
            config.kernel_grid = k.value("grid", config.kernel_grid);
        }
        if (j.contains("stereo")) {
            const auto& s = j["stereo"];
            require_keys(s, {"scene_kind", "out_size", "disparity", "upsample"}, "stereo");
            config.stereo_kind = s.value("scene_kind", config.stereo_kind);
            config.stereo_out_size = s.value("out_size", config.stereo_out_size);
            if (s.contains("disparity"))
                config.stereo_profile = synth::disparity_profile_from_json(s["disparity"].dump());
            config.stereo_upsample = s.value("upsample", config.stereo_upsample);
        }
        config.dump_slices = j.value("dump_slices", config.dump_slices);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("cli: config field has the wrong type: " +
                                    std::string(e.what()));
    }

    if (config.probe != "kernel" && config.probe != "overlap" && config.probe != "stereo" &&
        config.probe != "sweep")
        throw std::invalid_argument("cli: unknown probe '" + config.probe + "'");
    if (!(config.tau > 0.0)) throw std::invalid_argument("cli: tau must be positive");
    if (config.max_images < 1) throw std::invalid_argument("cli: max_images must be at least 1");
    for (double w : config.omegas)
        if (w < 0.0 || w > 1.0) throw std::invalid_argument("cli: omegas must lie in [0, 1]");
    for (int k : config.offsets)
        if (k < 0) throw std::invalid_argument("cli: offsets must be non-negative");
    for (int n : config.recall_ns)
        if (n < 1) throw std::invalid_argument("cli: recall ns must be at least 1");
    for (int d : config.deltas)
        if (d < 1 || d > toyvit::kReindexMargin)
            throw std::invalid_argument("cli: deltas must lie in [1, " +
                                        std::to_string(toyvit::kReindexMargin) + "]");
    if (config.kernel_method != "analytic" && config.kernel_method != "monte-carlo")
        throw std::invalid_argument("cli: kernel method must be analytic or monte-carlo");
    if (config.kernel_method == "monte-carlo" && config.kernel_samples < 1)
        throw std::invalid_argument("cli: monte-carlo needs at least one sample");
    if (config.kernel_grid < 2) throw std::invalid_argument("cli: kernel grid must be at least 2");
    synth::scene_kind_from_name(config.stereo_kind);  // throws on unknown spelling
    if (config.stereo_out_size != 0 && config.stereo_out_size != config.model.image_size)
        throw std::invalid_argument(
            "cli: stereo out_size must be 0 or equal to the model image size");
    if (config.stereo_upsample != "none" && config.stereo_upsample != "bilinear")
        throw std::invalid_argument("cli: stereo upsample must be none or bilinear");
    for (const std::string& name : config.interventions) parse_intervention(name);
    return config;
}

RunConfig load_run_config(const std::string& path) {
    if (!fs::exists(path)) throw std::invalid_argument("cli: config file not found: " + path);
    RunConfig config = run_config_from_json(io::read_file(path));
    if (!fs::exists(config.corpus))
        throw std::invalid_argument("cli: corpus manifest not found: " + config.corpus);
    return config;
}

void cmd_kernel(const RunConfig& config) {
    const GridShape shape{config.kernel_grid, config.kernel_grid};
    const int dim = config.model.dim;
    posenc::PositionalScheme scheme;
    switch (config.model.scheme) {
        case posenc::SchemeKind::none:
            scheme = posenc::scheme_none();
            break;
        case posenc::SchemeKind::absolute:
            scheme = posenc::scheme_absolute(
                config.model.absolute_kind == posenc::AbsoluteKind::sinusoidal_2d
                    ? posenc::build_sinusoidal_2d(shape, dim)
                    : posenc::build_learned_random(shape, dim, config.seed));
            break;
        case posenc::SchemeKind::relative:
            scheme = posenc::scheme_relative(
                posenc::build_relative_bias(shape, config.model.heads, config.seed));
            break;
        case posenc::SchemeKind::rotary:
            scheme = posenc::scheme_rotary(posenc::make_rotary_angles(dim));
            break;
    }
    const attnlab::ProjectionPair proj = attnlab::make_projection_pair(dim, config.seed);
    const attnlab::KernelMethod method = config.kernel_method == "analytic"
                                             ? attnlab::KernelMethod::analytic
                                             : attnlab::KernelMethod::monte_carlo;
    if (method == attnlab::KernelMethod::monte_carlo && config.kernel_samples < 1)
        throw std::invalid_argument("cli: monte-carlo needs at least one sample");
    const attnlab::ExpectedKernel kernel = attnlab::expected_kernel(
        scheme, shape, proj, method, config.kernel_samples, config.seed);

    ensure_out_dir(config);
    io::write_tensor(out_path(config, "kernel.pgt"), io::tensor_from_matrix(kernel.kernel));
    io::write_tensor(out_path(config, "kernel_se.pgt"), io::tensor_from_matrix(kernel.se));
    io::write_csv_matrix(out_path(config, "kernel.csv"), kernel.kernel);

    nlohmann::ordered_json summary;
    summary["schema"] = 1;
    summary["probe"] = "kernel";
    summary["scheme"] = scheme_kind_name(config.model.scheme);
    summary["method"] = config.kernel_method;
    summary["samples"] = kernel.samples;
    summary["seed"] = kernel.seed;
    summary["grid"] = config.kernel_grid;
    summary["dim"] = dim;
    if (config.model.scheme == posenc::SchemeKind::rotary)
        summary["rotary_axis_split"] = "alternating";
    summary["config_digest"] = probes::config_digest(config.model);
    summary["effective_config"] = nlohmann::ordered_json::parse(run_config_to_json(config));
    summary["timestamp"] = probes::now_iso8601();
    io::write_file(out_path(config, "kernel_summary.json"), summary.dump(2));
}

void cmd_overlap(const RunConfig& config) {
    const std::vector<synth::SceneSpec> specs = load_manifest(config.corpus);
    const toyvit::Model model = toyvit::build_model(config.model);
    const std::size_t n_scenes =
        std::min<std::size_t>(specs.size(), static_cast<std::size_t>(config.max_images));
    const std::size_t n_cells = config.deltas.size() * 2;  // vanilla, reindexed

    std::vector<std::vector<double>> means(n_scenes, std::vector<double>(n_cells, 0.0));
    parallel_for(n_scenes, [&](std::size_t i) {
        const Image scene = synth::make_scene(specs[i]);
        // crop_a is anchored at the origin for every delta, and aligning view A is a
        // zero-offset re-index (the vanilla assignment), so one forward serves all cells
        TokenGrid grid_a;
        for (std::size_t di = 0; di < config.deltas.size(); ++di) {
            const int dx = config.deltas[di];
            const synth::OverlapPair pair = synth::make_overlap_pair(
                scene, dx, 0, config.model.image_size, config.model.patch_size);
            if (grid_a.v.empty()) {
                const auto base_a =
                    forward(model, pair.crop_a, toyvit::Intervention::vanilla());
                grid_a = apply_final_norm(model, base_a.back());
            }

            const auto vanilla_b =
                forward(model, pair.crop_b, toyvit::Intervention::vanilla());
            means[i][di * 2] =
                probes::overlap_similarity(grid_a, apply_final_norm(model, vanilla_b.back()),
                                           pair.overlap_a, pair.overlap_b)
                    .mean;

            const auto [iv_a, iv_b] = toyvit::reindex_for_overlap(
                toyvit::GridPos{0, 0}, toyvit::GridPos{pair.dy_patches, pair.dx_patches});
            (void)iv_a;  // reindexed(0, 0): the vanilla forward above already realizes it
            const auto aligned_b = forward(model, pair.crop_b, iv_b);
            means[i][di * 2 + 1] =
                probes::overlap_similarity(grid_a, apply_final_norm(model, aligned_b.back()),
                                           pair.overlap_a, pair.overlap_b)
                    .mean;
        }
    });

    probes::ProbeReport report;
    report.probe = "overlap";
    report.config_digest = probes::config_digest(config.model);
    report.meta = {{"images", std::to_string(n_scenes)}, {"readout", "final-norm"}};
    for (std::size_t di = 0; di < config.deltas.size(); ++di)
        for (int cond = 0; cond < 2; ++cond) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n_scenes; ++i) mean += means[i][di * 2 + cond];
            mean /= static_cast<double>(n_scenes);
            probes::ProbeCondition c;
            const std::string iv_name = cond == 0 ? "vanilla" : "reindexed";
            c.name = "dx=" + std::to_string(config.deltas[di]) + "," + iv_name;
            c.config = {{"dx", std::to_string(config.deltas[di])}, {"intervention", iv_name}};
            c.metrics = {{"mean_cosine", mean}};
            report.conditions.push_back(std::move(c));
        }
    ensure_out_dir(config);
    write_report(config, report, "overlap_report");
}

void cmd_stereo(const RunConfig& config) {
    std::vector<synth::SceneSpec> specs = load_manifest(config.corpus);
    const synth::SceneKind kind = synth::scene_kind_from_name(config.stereo_kind);
    std::erase_if(specs, [&](const synth::SceneSpec& s) { return s.kind != kind; });
    if (specs.empty())
        throw std::invalid_argument("cli: corpus has no scenes of kind " + config.stereo_kind);

    const int out_size = resolved_out_size(config);
    if (out_size != config.model.image_size)
        throw std::invalid_argument("cli: stereo out_size must equal the model image size");
    const toyvit::Model model = toyvit::build_model(config.model);
    const std::vector<toyvit::Intervention> ivs = parse_interventions(config);
    const probes::Upsample upsample = config.stereo_upsample == "bilinear"
                                          ? probes::Upsample::bilinear
                                          : probes::Upsample::none;
    const std::size_t n_pairs =
        std::min<std::size_t>(specs.size(), static_cast<std::size_t>(config.max_images));

    std::vector<probes::ProbeReport> per_pair(n_pairs);
    parallel_for(n_pairs, [&](std::size_t i) {
        const Image scene = synth::make_scene(specs[i]);
        const synth::StereoPair pair = synth::make_stereo_pair(
            scene, config.stereo_profile, out_size, config.model.patch_size);
        per_pair[i] = probes::stereo_probe(model, pair, ivs, config.tau, upsample,
                                           config.recall_ns);
    });

    probes::ProbeReport report;
    report.probe = "stereo";
    report.config_digest = probes::config_digest(config.model);
    report.meta = per_pair.front().meta;  // convention rows: query view, tau, d1, readout
    report.meta.emplace_back("scene_kind", config.stereo_kind);
    report.meta.emplace_back("pairs", std::to_string(n_pairs));

    double epe_vanilla = -1.0;
    double epe_zeroed = -1.0;
    for (std::size_t c = 0; c < ivs.size(); ++c) {
        probes::ProbeCondition agg = per_pair.front().conditions[c];
        agg.metrics.clear();
        // metrics average over pairs, except the degenerate count which accumulates
        for (std::size_t m = 0; m < per_pair.front().conditions[c].metrics.size(); ++m) {
            const std::string& key = per_pair.front().conditions[c].metrics[m].first;
            double v = 0.0;
            for (std::size_t i = 0; i < n_pairs; ++i)
                v += per_pair[i].conditions[c].metrics[m].second;
            if (key != "degenerate_tokens") v /= static_cast<double>(n_pairs);
            agg.metrics.emplace_back(key, v);
            if (key == "epe_tokens") {
                if (agg.name == "vanilla") epe_vanilla = v;
                if (agg.name == "zeroed") epe_zeroed = v;
            }
        }
        report.conditions.push_back(std::move(agg));
    }
    if (epe_vanilla >= 0.0 && epe_zeroed >= 0.0) {
        const bool consistent = epe_vanilla < epe_zeroed;
        report.meta.emplace_back("epe_direction",
                                 consistent ? "vanilla<zeroed" : "not vanilla<zeroed");
        std::printf("stereo: epe vanilla %.6f zeroed %.6f (%s)\n", epe_vanilla, epe_zeroed,
                    consistent ? "direction holds" : "direction inverted");
    }

    ensure_out_dir(config);
    if (config.dump_slices) {
        const fs::path slice_dir = fs::path(config.out_dir) / "slices";
        fs::create_directories(slice_dir);
        const Image scene = synth::make_scene(specs.front());
        const synth::StereoPair pair = synth::make_stereo_pair(
            scene, config.stereo_profile, out_size, config.model.patch_size);
        for (const toyvit::Intervention& iv : ivs) {
            const auto [iv_left, iv_right] = probes::per_view(iv);
            const auto left_layers = forward(model, pair.left, iv_left);
            const auto right_layers = forward(model, pair.right, iv_right);
            for (std::size_t l = 0; l < left_layers.size(); ++l) {
                const bool last = l + 1 == left_layers.size();
                const TokenGrid left =
                    last ? apply_final_norm(model, left_layers[l]) : left_layers[l];
                const TokenGrid right =
                    last ? apply_final_norm(model, right_layers[l]) : right_layers[l];
                const corrvol::CorrelationVolume vol =
                    corrvol::build_volume(corrvol::normalize_tokens(right),
                                          corrvol::normalize_tokens(left));
                const corrvol::EpipolarSlice slice = corrvol::epipolar_slice(vol);
                io::Tensor t;
                t.dims = {slice.shape.rows, slice.shape.cols, slice.cols_r};
                t.dtype = "f32";
                t.f32 = slice.data;
                const std::string stem = sanitize(probes::intervention_name(iv)) + "_layer" +
                                         std::to_string(l) + ".pgt";
                io::write_tensor((slice_dir / stem).string(), t);
            }
        }
    }
    write_report(config, report, "stereo_report");
}

void cmd_sweep(const RunConfig& config) {
    const std::vector<synth::SceneSpec> specs = load_manifest(config.corpus);
    const toyvit::Model model = toyvit::build_model(config.model);
    const std::size_t n_images =
        std::min<std::size_t>(specs.size(), static_cast<std::size_t>(config.max_images));

    std::vector<Image> images;
    for (std::size_t i = 0; i < n_images; ++i)
        images.push_back(crop_top_left(synth::make_scene(specs[i]), config.model.image_size));

    ensure_out_dir(config);
    probes::ProbeReport sweep = probes::offset_sweep(model, images, config.offsets,
                                                     config.omegas);
    sweep.meta.emplace_back("corpus", config.corpus);
    write_report(config, sweep, "sweep_report");

    // one shared pass of vanilla forwards feeds the decodability and reconstruction probes
    std::vector<TokenGrid> layer0(n_images);
    std::vector<TokenGrid> final_grids(n_images);
    parallel_for(n_images, [&](std::size_t i) {
        const auto layers = forward(model, images[i], toyvit::Intervention::vanilla());
        layer0[i] = layers.front();
        final_grids[i] = apply_final_norm(model, layers.back());
    });

    probes::ProbeReport decod;
    decod.probe = "decodability";
    decod.config_digest = probes::config_digest(config.model);
    decod.meta = {{"images", std::to_string(n_images)},
                  {"probe_kind", "linear-softmax"},
                  {"split", "80/20 by image"}};
    const auto add_layer = [&](const std::string& label, const std::vector<TokenGrid>& grids) {
        const probes::DecodabilityResult r =
            probes::position_decodability(grids, probes::ProbeKind::linear_softmax, config.seed);
        probes::ProbeCondition c;
        c.name = "layer=" + label;
        c.config = {{"layer", label}};
        c.metrics = {{"row_accuracy", r.row_accuracy},
                     {"col_accuracy", r.col_accuracy},
                     {"joint_accuracy", r.joint_accuracy},
                     {"train_tokens", static_cast<double>(r.train_tokens)},
                     {"test_tokens", static_cast<double>(r.test_tokens)}};
        decod.conditions.push_back(std::move(c));
    };
    add_layer("0", layer0);
    add_layer("final", final_grids);
    write_report(config, decod, "decodability_report");

    probes::ProbeReport recon;
    recon.probe = "reconstruction";
    recon.config_digest = probes::config_digest(config.model);
    recon.meta = {{"images", std::to_string(n_images)},
                  {"lambda", "0.001"},
                  {"readout", "final-norm"}};
    for (int k : config.offsets) {
        if (k < 1) continue;  // k=0 is the calibration row of the sweep, not a map to fit
        const probes::OffsetReconstruction r =
            probes::offset_reconstruction(final_grids, k, 1e-3, config.seed);
        probes::ProbeCondition c;
        c.name = "k=" + std::to_string(k);
        c.config = {{"offset", std::to_string(k)}};
        c.metrics = {{"reconstruction_cosine", r.reconstruction_cosine},
                     {"baseline_cosine", r.baseline_cosine}};
        recon.conditions.push_back(std::move(c));
    }
    write_report(config, recon, "reconstruction_report");
}

int run_command(const RunConfig& config) {
    try {
        if (config.probe == "kernel")
            cmd_kernel(config);
        else if (config.probe == "overlap")
            cmd_overlap(config);
        else if (config.probe == "stereo")
            cmd_stereo(config);
        else if (config.probe == "sweep")
            cmd_sweep(config);
        else
            throw std::invalid_argument("cli: unknown probe '" + config.probe + "'");
        return 0;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "probe failed: %s\n", e.what());
        return 3;
    }
}

}  // namespace pegeo::cli
