#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pegeo/grid.hpp"
#include "pegeo/posenc.hpp"

namespace pegeo::toyvit {

struct ToyViTConfig {
    int image_size = 64;
    int patch_size = 8;
    int dim = 64;
    int heads = 4;
    int layers = 4;
    posenc::SchemeKind scheme = posenc::SchemeKind::absolute;
    posenc::AbsoluteKind absolute_kind = posenc::AbsoluteKind::sinusoidal_2d;
    std::uint64_t seed = 0;
};

std::string config_to_json(const ToyViTConfig& config);
ToyViTConfig config_from_json(const std::string& text);

// How many grid cells of index margin re-indexing may use: learned and relative tables
// are built over (rows+kReindexMargin)×(cols+kReindexMargin) so offset lookups stay in
// bounds. Sinusoidal and rotary positions are evaluated by formula and take any offset.
constexpr int kReindexMargin = 4;

struct Block {
    Matrix w_q;  // queries and keys share weights; symmetric positional kernels
    Matrix w_v;
    Matrix w_o;
    Matrix mlp_w1, mlp_w2;
    std::vector<double> mlp_b1, mlp_b2;
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
};

struct Model {
    ToyViTConfig config;
    GridShape grid;
    int head_dim = 0;
    Matrix patch_proj;  // dim × (patch²·3), pixels centered before projection
    posenc::PositionalScheme scheme;  // tables span the margin-extended grid
    std::vector<Block> blocks;
    std::vector<double> final_g, final_b;
    double inject_gain = 0.0;    // absolute table rows, applied at layer 0
    double bias_gain = 0.0;      // relative logit bias
    double residual_gain = 0.0;  // sublayer output scale
};

// Positional intervention, resolved before the forward pass. Exactly one variant is
// active. shuffled and pairwise_shuffled permute the assignment of position indices to
// tokens identically for equal seeds; the pairwise variant exists so two views of a
// pair can share one seed while independent shuffles derive per-view seeds.
struct Intervention {
    enum class Kind { vanilla, zeroed, scaled, shuffled, pairwise_shuffled, reindexed };
    Kind kind = Kind::vanilla;
    double omega = 1.0;
    posenc::WeightMode mode = posenc::WeightMode::interpolated;
    std::uint64_t seed = 0;
    int drow = 0;
    int dcol = 0;

    static Intervention vanilla() { return {}; }
    static Intervention zeroed();
    static Intervention scaled(double omega, posenc::WeightMode mode);
    static Intervention shuffled(std::uint64_t seed);
    static Intervention pairwise_shuffled(std::uint64_t seed);
    static Intervention reindexed(int drow, int dcol);
};

struct GridPos {
    int row = 0;
    int col = 0;
};

Model build_model(const ToyViTConfig& config);

// Runs the full stack and returns layers+1 grids: index 0 is the patch embedding with
// any absolute encoding injected, index l is the output of block l.
std::vector<TokenGrid> forward(const Model& model, const Image& image,
                               const Intervention& intervention);

// Forward with an explicit position index per token (row-major token order). This is
// the primitive beneath the shuffle and reindex interventions; Vanilla is the identity
// assignment. Learned and relative lookups must stay inside the margin-extended table.
// Pass `scheme` to substitute the model's positional scheme (used by Zeroed/Scaled).
std::vector<TokenGrid> forward_with_positions(const Model& model, const Image& image,
                                              const std::vector<GridPos>& positions);
std::vector<TokenGrid> forward_with_positions(const Model& model, const Image& image,
                                              const std::vector<GridPos>& positions,
                                              const posenc::PositionalScheme& scheme);

// The identity and seeded-permutation index assignments over the model's grid.
std::vector<GridPos> identity_positions(GridShape grid);
std::vector<GridPos> shuffled_positions(GridShape grid, std::uint64_t seed);

// Final layer-norm, for callers that want normalized features; forward returns raw
// residual-stream grids.
TokenGrid apply_final_norm(const Model& model, const TokenGrid& grid);

// Interventions aligning two views whose crops start at the given origins (patch units,
// shared scene frame): every token covering the same scene patch receives the same
// position index in both views.
std::pair<Intervention, Intervention> reindex_for_overlap(GridPos view_a_origin,
                                                          GridPos view_b_origin);

}  // namespace pegeo::toyvit
