#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pegeo/grid.hpp"

namespace pegeo::corrvol {

// Sharpness used by the probes when none is given; at this value a margin-0.1
// winner on normalized affinities takes >0.99 of the match mass.
constexpr double kDefaultTau = 50.0;

// Dense affinity tensor between two token grids, laid out row-major as
// (row_l, col_l, row_r, col_r) so each query's candidate plane is contiguous.
// Stored in 32-bit: a 56x56 pair is ~78M entries.
struct CorrelationVolume {
    GridShape left_shape;
    GridShape right_shape;
    std::vector<float> data;
    bool normalized = false;

    std::size_t index(int row_l, int col_l, int row_r, int col_r) const {
        return ((static_cast<std::size_t>(row_l) * left_shape.cols + col_l) *
                    right_shape.rows +
                row_r) *
                   right_shape.cols +
               col_r;
    }
    float at(int row_l, int col_l, int row_r, int col_r) const {
        return data[index(row_l, col_l, row_r, col_r)];
    }
};

// Per-query softmax over all candidate cells; same layout as the volume.
struct MatchDistribution {
    GridShape left_shape;
    GridShape right_shape;
    std::vector<double> data;
    double temperature = kDefaultTau;

    std::size_t index(int row_l, int col_l, int row_r, int col_r) const {
        return ((static_cast<std::size_t>(row_l) * left_shape.cols + col_l) *
                    right_shape.rows +
                row_r) *
                   right_shape.cols +
               col_r;
    }
    double at(int row_l, int col_l, int row_r, int col_r) const {
        return data[index(row_l, col_l, row_r, col_r)];
    }
};

// Expected displacement per query, in token units. x indexes columns, y rows.
struct DisplacementField {
    GridShape shape;
    Matrix dx;
    Matrix dy;
};

// Same-row affinity slice: entry (row, col, col_r) = volume(row, col, row, col_r).
// Candidates span every column of the right view, so d = col_r - col is signed.
struct EpipolarSlice {
    GridShape shape;
    int cols_r = 0;
    std::vector<float> data;
    bool normalized = false;

    std::size_t index(int row, int col, int col_r) const {
        return (static_cast<std::size_t>(row) * shape.cols + col) * cols_r + col_r;
    }
    float at(int row, int col, int col_r) const { return data[index(row, col, col_r)]; }
};

// Horizontal displacement per query, in token units.
struct DisparityField {
    GridShape shape;
    Matrix values;
};

// L2-normalizes every token row. An exactly zero token becomes the first unit
// basis vector; the count of such replacements lands in degenerate_count so
// reports can flag them instead of aborting a probe batch.
TokenGrid normalize_tokens(const TokenGrid& grid, int* degenerate_count = nullptr);

CorrelationVolume build_volume(const TokenGrid& left, const TokenGrid& right);

MatchDistribution match_distribution(const CorrelationVolume& volume, double tau);

DisplacementField soft_argmax_displacement(const MatchDistribution& dist);

EpipolarSlice epipolar_slice(const CorrelationVolume& volume);

// Expected signed d per query under softmax(tau * slice). The operation is the
// usual "soft-argmin" of the stereo literature, written over affinities rather
// than costs, so larger affinity wins.
DisparityField soft_argmin_disparity(const EpipolarSlice& slice, double tau);

// Flat CSV: header then one line per (row, col, candidate) triple. Meant for
// small grids.
std::string slice_to_csv(const EpipolarSlice& slice);

}  // namespace pegeo::corrvol
