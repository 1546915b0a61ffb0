#include "pegeo/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "pegeo/io.hpp"
#include "pegeo/rng.hpp"

namespace pegeo::synth {

namespace {

constexpr int kChannels = 3;
constexpr std::uint64_t kPeriodicStream = 0x5045524C;
constexpr std::uint64_t kRandomStream = 0x524E4454;
constexpr std::uint64_t kGradientStream = 0x47524144;

void check_spec(const SceneSpec& spec) {
    if (spec.size < 1) throw std::invalid_argument("make_scene: size must be positive");
    const bool periodic =
        spec.kind == SceneKind::periodic_texture || spec.kind == SceneKind::mixed;
    if (periodic) {
        if (spec.period < 1) throw std::invalid_argument("make_scene: period must be positive");
        if (spec.size % spec.period != 0)
            throw std::invalid_argument("make_scene: period must divide size");
    }
}

Image periodic_scene(const SceneSpec& spec) {
    Image tile(spec.period, spec.period, kChannels);
    Rng rng(derive_seed(spec.seed, kPeriodicStream));
    for (double& v : tile.v) v = rng.uniform();

    Image img(spec.size, spec.size, kChannels);
    for (int y = 0; y < spec.size; ++y)
        for (int x = 0; x < spec.size; ++x)
            for (int c = 0; c < kChannels; ++c)
                img.at(y, x, c) = tile.at(y % spec.period, x % spec.period, c);
    return img;
}

Image random_scene(const SceneSpec& spec) {
    Image img(spec.size, spec.size, kChannels);
    Rng rng(derive_seed(spec.seed, kRandomStream));
    for (double& v : img.v) v = rng.uniform();
    return img;
}

// Smooth low-frequency field: per channel a seeded plane wave, one to two cycles
// across the image, bounded in [0, 1].
Image gradient_scene(const SceneSpec& spec) {
    Rng rng(derive_seed(spec.seed, kGradientStream));
    double ax[kChannels], ay[kChannels], phase[kChannels];
    for (int c = 0; c < kChannels; ++c) {
        ax[c] = 0.5 + rng.uniform();
        ay[c] = 0.5 + rng.uniform();
        phase[c] = rng.uniform() * 2.0 * M_PI;
    }
    Image img(spec.size, spec.size, kChannels);
    const double inv = 1.0 / static_cast<double>(spec.size);
    for (int y = 0; y < spec.size; ++y)
        for (int x = 0; x < spec.size; ++x)
            for (int c = 0; c < kChannels; ++c) {
                const double arg = 2.0 * M_PI * (ax[c] * x + ay[c] * y) * inv + phase[c];
                img.at(y, x, c) = 0.5 + 0.5 * std::sin(arg);
            }
    return img;
}

double profile_disparity(const DisparityProfile& p, int y, int out_h) {
    switch (p.kind) {
        case DisparityKind::constant:
        case DisparityKind::fractional:
            return p.value;
        case DisparityKind::per_region:
            return y < out_h / 2 ? p.top : p.bottom;
    }
    throw std::invalid_argument("disparity profile: unknown kind");
}

}  // namespace

Image make_scene(const SceneSpec& spec) {
    check_spec(spec);
    switch (spec.kind) {
        case SceneKind::periodic_texture:
            return periodic_scene(spec);
        case SceneKind::random_texture:
            return random_scene(spec);
        case SceneKind::gradient:
            return gradient_scene(spec);
        case SceneKind::mixed: {
            const Image p = periodic_scene(spec);
            const Image g = gradient_scene(spec);
            const Image r = random_scene(spec);
            Image img(spec.size, spec.size, kChannels);
            for (std::size_t i = 0; i < img.v.size(); ++i)
                img.v[i] = 0.5 * p.v[i] + 0.3 * g.v[i] + 0.2 * r.v[i];
            return img;
        }
    }
    throw std::invalid_argument("make_scene: unknown kind");
}

OverlapPair make_overlap_pair(const Image& image, int dx_patches, int dy_patches, int crop_px,
                              int patch_px) {
    if (patch_px < 1) throw std::invalid_argument("make_overlap_pair: patch size must be positive");
    if (crop_px < patch_px || crop_px % patch_px != 0)
        throw std::invalid_argument("make_overlap_pair: crop must be a whole number of patches");
    if (dx_patches < 0 || dy_patches < 0)
        throw std::invalid_argument("make_overlap_pair: offsets must be non-negative");
    const int grid = crop_px / patch_px;
    if (dx_patches >= grid || dy_patches >= grid)
        throw std::invalid_argument("make_overlap_pair: offset leaves no overlap");
    const int bx = dx_patches * patch_px;
    const int by = dy_patches * patch_px;
    if (crop_px > image.width || crop_px > image.height || bx + crop_px > image.width ||
        by + crop_px > image.height)
        throw std::invalid_argument("make_overlap_pair: crop exceeds image");

    OverlapPair out;
    out.dx_patches = dx_patches;
    out.dy_patches = dy_patches;
    out.patch_px = patch_px;
    out.crop_a = Image(crop_px, crop_px, image.channels);
    out.crop_b = Image(crop_px, crop_px, image.channels);
    for (int y = 0; y < crop_px; ++y)
        for (int x = 0; x < crop_px; ++x)
            for (int c = 0; c < image.channels; ++c) {
                out.crop_a.at(y, x, c) = image.at(y, x, c);
                out.crop_b.at(y, x, c) = image.at(by + y, bx + x, c);
            }
    out.overlap_a = Rect{dy_patches, dx_patches, grid - dy_patches, grid - dx_patches};
    out.overlap_b = Rect{0, 0, grid - dy_patches, grid - dx_patches};
    return out;
}

StereoPair make_stereo_pair(const Image& scene, const DisparityProfile& profile, int out_size,
                            int patch_px) {
    if (patch_px < 1 || out_size < patch_px || out_size % patch_px != 0)
        throw std::invalid_argument("make_stereo_pair: output must be a whole number of patches");
    if (out_size > scene.width || out_size > scene.height)
        throw std::invalid_argument("make_stereo_pair: output exceeds scene");

    StereoPair pair;
    pair.patch_px = patch_px;
    pair.left = Image(out_size, out_size, scene.channels);
    pair.right = Image(out_size, out_size, scene.channels);
    pair.gt_disparity = Matrix(out_size, out_size);
    pair.valid = Matrix(out_size, out_size);

    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x)
            for (int c = 0; c < scene.channels; ++c) pair.left.at(y, x, c) = scene.at(y, x, c);

    for (int y = 0; y < out_size; ++y) {
        for (int x = 0; x < out_size; ++x) {
            const double d = profile_disparity(profile, y, out_size);
            const double xs = static_cast<double>(x) + d;
            const double x0f = std::floor(xs);
            const int x0 = static_cast<int>(x0f);
            const double f = xs - x0f;
            const int x_hi = f > 0.0 ? x0 + 1 : x0;
            if (x0 < 0 || x_hi > scene.width - 1)
                throw std::invalid_argument("make_stereo_pair: warp samples outside the scene");

            for (int c = 0; c < scene.channels; ++c) {
                pair.right.at(y, x, c) =
                    f > 0.0 ? (1.0 - f) * scene.at(y, x0, c) + f * scene.at(y, x0 + 1, c)
                            : scene.at(y, x0, c);
            }
            pair.gt_disparity.at(y, x) = d;
            pair.valid.at(y, x) = x_hi <= out_size - 1 ? 1.0 : 0.0;
        }
    }

    // Cross-check the warp against the left view on the valid mask.
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x) {
            if (pair.valid.at(y, x) == 0.0) continue;
            const double d = pair.gt_disparity.at(y, x);
            const double xs = static_cast<double>(x) + d;
            const int x0 = static_cast<int>(std::floor(xs));
            const double f = xs - std::floor(xs);
            for (int c = 0; c < scene.channels; ++c) {
                const double ref =
                    f > 0.0 ? (1.0 - f) * pair.left.at(y, x0, c) + f * pair.left.at(y, x0 + 1, c)
                            : pair.left.at(y, x0, c);
                if (std::abs(pair.right.at(y, x, c) - ref) > 1e-3)
                    throw std::runtime_error("make_stereo_pair: warp consistency violated");
            }
        }

    const int grid = out_size / patch_px;
    pair.token_gt = Matrix(grid, grid);
    pair.token_valid = Matrix(grid, grid);
    const double inv_patch_area = 1.0 / static_cast<double>(patch_px * patch_px);
    for (int tr = 0; tr < grid; ++tr)
        for (int tc = 0; tc < grid; ++tc) {
            double sum = 0.0;
            double all_valid = 1.0;
            for (int y = tr * patch_px; y < (tr + 1) * patch_px; ++y)
                for (int x = tc * patch_px; x < (tc + 1) * patch_px; ++x) {
                    sum += pair.gt_disparity.at(y, x);
                    if (pair.valid.at(y, x) == 0.0) all_valid = 0.0;
                }
            pair.token_gt.at(tr, tc) = sum * inv_patch_area / static_cast<double>(patch_px);
            pair.token_valid.at(tr, tc) = all_valid;
        }
    return pair;
}

std::string scene_kind_name(SceneKind kind) {
    switch (kind) {
        case SceneKind::periodic_texture: return "periodic-texture";
        case SceneKind::random_texture: return "random-texture";
        case SceneKind::gradient: return "gradient";
        case SceneKind::mixed: return "mixed";
    }
    throw std::invalid_argument("scene_kind_name: unknown kind");
}

SceneKind scene_kind_from_name(const std::string& name) {
    if (name == "periodic-texture") return SceneKind::periodic_texture;
    if (name == "random-texture") return SceneKind::random_texture;
    if (name == "gradient") return SceneKind::gradient;
    if (name == "mixed") return SceneKind::mixed;
    throw std::invalid_argument("scene kind: unknown name '" + name + "'");
}

std::string scene_spec_to_json(const SceneSpec& spec) {
    nlohmann::ordered_json j;
    j["kind"] = scene_kind_name(spec.kind);
    j["size"] = spec.size;
    j["period"] = spec.period;
    j["seed"] = spec.seed;
    return j.dump();
}

SceneSpec scene_spec_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SceneSpec spec;
    spec.kind = scene_kind_from_name(j.at("kind").get<std::string>());
    spec.size = j.at("size").get<int>();
    spec.period = j.value("period", 0);
    spec.seed = j.at("seed").get<std::uint64_t>();
    return spec;
}

std::string disparity_profile_to_json(const DisparityProfile& profile) {
    nlohmann::ordered_json j;
    switch (profile.kind) {
        case DisparityKind::constant:
            j["kind"] = "constant";
            j["value"] = profile.value;
            break;
        case DisparityKind::fractional:
            j["kind"] = "fractional";
            j["value"] = profile.value;
            break;
        case DisparityKind::per_region:
            j["kind"] = "per-region";
            j["top"] = profile.top;
            j["bottom"] = profile.bottom;
            break;
    }
    return j.dump();
}

DisparityProfile disparity_profile_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    const std::string kind = j.at("kind").get<std::string>();
    DisparityProfile p;
    if (kind == "constant") {
        p.kind = DisparityKind::constant;
        p.value = j.at("value").get<double>();
    } else if (kind == "fractional") {
        p.kind = DisparityKind::fractional;
        p.value = j.at("value").get<double>();
    } else if (kind == "per-region") {
        p.kind = DisparityKind::per_region;
        p.top = j.at("top").get<double>();
        p.bottom = j.at("bottom").get<double>();
    } else {
        throw std::invalid_argument("disparity profile: unknown kind '" + kind + "'");
    }
    return p;
}

void save_scene(const std::string& path, const Image& img, const SceneSpec& spec) {
    io::write_image(path, img, scene_spec_to_json(spec));
}

Image load_scene(const std::string& path) { return io::read_image(path); }

}  // namespace pegeo::synth
