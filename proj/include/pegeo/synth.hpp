#pragma once

#include <cstdint>
#include <string>

#include "pegeo/grid.hpp"

namespace pegeo::synth {

enum class SceneKind { periodic_texture, random_texture, gradient, mixed };

// Deterministic scene recipe. period is consumed by the periodic kinds
// (periodic_texture and mixed) and must divide size there.
struct SceneSpec {
    SceneKind kind = SceneKind::random_texture;
    int size = 96;
    int period = 24;
    std::uint64_t seed = 0;
};

Image make_scene(const SceneSpec& spec);

// Two crops of one image offset by whole patches, plus the token rectangles that
// address the shared pixels in each crop's grid.
struct OverlapPair {
    Image crop_a;  // anchored at the image origin
    Image crop_b;  // anchored at (dy·patch, dx·patch)
    Rect overlap_a;
    Rect overlap_b;
    int dx_patches = 0;
    int dy_patches = 0;
    int patch_px = 0;
};

OverlapPair make_overlap_pair(const Image& image, int dx_patches, int dy_patches, int crop_px,
                              int patch_px);

enum class DisparityKind { constant, per_region, fractional };

struct DisparityProfile {
    DisparityKind kind = DisparityKind::constant;
    double value = 0.0;   // constant and fractional profiles, pixels
    double top = 0.0;     // per_region: rows above the vertical midline
    double bottom = 0.0;  // per_region: rows at and below the midline
};

// Rectified pair: right(x, y) = left(x + d(x, y), y), sampled from the source scene so
// disparities up to the scene margin stay in bounds. Fractional disparities use linear
// interpolation along x. The valid masks flag pixels (and whole tokens) whose match
// lies inside the left view.
struct StereoPair {
    Image left;
    Image right;
    Matrix gt_disparity;  // pixels, per right-view pixel
    Matrix valid;         // 1.0 where the left-view counterpart exists
    Matrix token_gt;      // block mean of gt_disparity over each patch, in token units
    Matrix token_valid;   // 1.0 where every pixel of the patch is valid
    int patch_px = 0;
};

StereoPair make_stereo_pair(const Image& scene, const DisparityProfile& profile, int out_size,
                            int patch_px);

std::string scene_kind_name(SceneKind kind);
SceneKind scene_kind_from_name(const std::string& name);

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);
std::string disparity_profile_to_json(const DisparityProfile& profile);
DisparityProfile disparity_profile_from_json(const std::string& text);

// Scene persistence: PGT1 tensor plus a JSON sidecar holding the scene spec.
void save_scene(const std::string& path, const Image& img, const SceneSpec& spec);
Image load_scene(const std::string& path);

}  // namespace pegeo::synth
