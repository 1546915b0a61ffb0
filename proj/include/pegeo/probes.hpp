#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pegeo/corrvol.hpp"
#include "pegeo/grid.hpp"
#include "pegeo/synth.hpp"
#include "pegeo/toyvit.hpp"

namespace pegeo::probes {

// Whether measured tokens pass through the model's final LayerNorm first.
// Intermediate layers of a layer-wise curve are always the raw residual stream;
// the readout choice applies to the last layer only.
enum class TokenReadout { raw, final_norm };

struct ProbeCondition {
    std::string name;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, double>> metrics;
};

// Structured probe artifact. The timestamp records wall-clock provenance and is
// the one field excluded from determinism comparisons.
struct ProbeReport {
    std::string probe;
    std::string config_digest;
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<ProbeCondition> conditions;
    std::string timestamp;
};

std::string report_to_json(const ProbeReport& report);
// One line per (condition, metric): probe,condition,metric,value.
std::string report_to_csv(const ProbeReport& report);

// FNV-1a over the model-config JSON, hex encoded.
std::string config_digest(const toyvit::ToyViTConfig& config);
std::string intervention_name(const toyvit::Intervention& iv);
std::string now_iso8601();

// Per-view realization of one intervention: independent shuffles draw a
// different seed per view, a pairwise shuffle shares one, everything else is
// used as given.
std::pair<toyvit::Intervention, toyvit::Intervention> per_view(const toyvit::Intervention& iv);

struct OverlapSimilarity {
    double mean = 0.0;
    Matrix per_token;
};

OverlapSimilarity overlap_similarity(const TokenGrid& grid_a, const TokenGrid& grid_b,
                                     const Rect& overlap_a, const Rect& overlap_b);

// Mean cosine between tokens at (i,j) and (i+k,j+k) of the same grid, averaged
// over valid cells and images, for every (offset, omega) pair.
ProbeReport offset_sweep(const toyvit::Model& model, const std::vector<Image>& images,
                         const std::vector<int>& offsets, const std::vector<double>& omegas,
                         TokenReadout readout = TokenReadout::final_norm);

struct StereoMetrics {
    double epe = 0.0;
    double d1 = 0.0;
    std::vector<std::pair<int, double>> recall;
};

// EPE and D1 over the mask; Recall@n ranks each query's slice row with ground
// truth snapped to the nearest candidate column. D1 follows the common stereo
// benchmark convention (|err| > 3 tokens and > 5% of |gt|); reports record the
// convention in their metadata.
StereoMetrics stereo_metrics(const corrvol::DisparityField& predicted, const Matrix& gt,
                             const Matrix& mask, const corrvol::EpipolarSlice& slice,
                             const std::vector<int>& recall_ns);

enum class Upsample { none, bilinear };

// Right-view tokens query left-view candidates along the same row, so the
// signed slice displacement equals the synthetic ground truth and the valid
// mask is exactly the right view's. Bilinear mode resizes both token grids to
// pixel resolution before the volume.
ProbeReport stereo_probe(const toyvit::Model& model, const synth::StereoPair& pair,
                         const std::vector<toyvit::Intervention>& interventions, double tau,
                         Upsample upsample = Upsample::none,
                         const std::vector<int>& recall_ns = {1, 3},
                         TokenReadout readout = TokenReadout::final_norm);

// Bilinear token upsampling by an integer factor (output cell centers sample
// fractional token coordinates, clamped at the border).
TokenGrid upsample_bilinear(const TokenGrid& grid, int factor);

enum class ProbeKind { linear_softmax, one_hidden };

struct DecodabilityResult {
    double row_accuracy = 0.0;
    double col_accuracy = 0.0;
    double joint_accuracy = 0.0;
    int train_tokens = 0;
    int test_tokens = 0;
};

// Trains a position classifier on tokens labeled by their own grid cell:
// full-batch gradient descent on softmax cross-entropy, 500 steps at lr 0.1,
// features z-scored with train-split statistics, 80/20 split by image.
DecodabilityResult position_decodability(const std::vector<TokenGrid>& grids, ProbeKind kind,
                                         std::uint64_t seed);

struct OffsetReconstruction {
    double reconstruction_cosine = 0.0;
    double baseline_cosine = 0.0;
};

// Closed-form ridge regression from each token to the token at diagonal offset
// k, fit on the train split, scored by mean cosine on the held-out split.
// Baseline is the direct cosine between the same pairs.
OffsetReconstruction offset_reconstruction(const std::vector<TokenGrid>& grids, int offset,
                                           double lambda, std::uint64_t seed);

// Mean overlap cosine per layer (layer 0 = patch embedding + injection).
std::vector<double> layerwise_similarity(const toyvit::Model& model,
                                         const synth::OverlapPair& pair,
                                         const toyvit::Intervention& iv_a,
                                         const toyvit::Intervention& iv_b,
                                         TokenReadout readout = TokenReadout::final_norm);
std::vector<double> layerwise_similarity(const toyvit::Model& model,
                                         const synth::OverlapPair& pair,
                                         const toyvit::Intervention& iv,
                                         TokenReadout readout = TokenReadout::final_norm);

}  // namespace pegeo::probes
