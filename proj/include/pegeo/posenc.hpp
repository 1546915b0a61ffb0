#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pegeo/grid.hpp"

namespace pegeo::posenc {

enum class AbsoluteKind { learned_random, sinusoidal_2d };

// Per-position additive encoding table, one row per grid cell (row-major cells).
struct AbsoluteTable {
    AbsoluteKind kind = AbsoluteKind::learned_random;
    GridShape shape;
    int dim = 0;
    std::uint64_t seed = 0;  // meaningful for learned_random only
    Matrix table;            // (rows·cols) × dim

    const double* row(int r, int c) const { return &table.a[(static_cast<std::size_t>(r) * shape.cols + c) * dim]; }
};

// Additive attention-logit bias indexed by displacement, one (2R−1)×(2C−1) plane per head.
struct RelativeBiasTable {
    GridShape shape;
    int heads = 0;
    std::uint64_t seed = 0;
    std::vector<double> table;  // heads × (2·rows−1) × (2·cols−1)

    double lookup(int head, int drow, int dcol) const;
};

enum class RotaryAxis { row, col };

// Frequency ladder for 2D rotary encoding. Pairs alternate between axes according to
// axis_split (the fraction of pairs assigned to the row axis).
struct RotaryAngles {
    int dim = 0;
    double axis_split = 0.5;
    std::vector<double> frequencies;  // dim/2 entries, strictly decreasing

    RotaryAxis axis_of(int pair) const;
};

enum class SchemeKind { none, absolute, relative, rotary };
enum class WeightMode { phase_scaled, interpolated };

// Tagged union over the scheme families plus the PE-free baseline. omega is the
// cumulative positional weight; for absolute/relative it has already been folded into
// the stored table, for rotary it is applied at rotation time using `mode`.
struct PositionalScheme {
    SchemeKind kind = SchemeKind::none;
    std::optional<AbsoluteTable> absolute;
    std::optional<RelativeBiasTable> relative;
    std::optional<RotaryAngles> rotary;
    double omega = 1.0;
    WeightMode mode = WeightMode::interpolated;
};

PositionalScheme scheme_none();
PositionalScheme scheme_absolute(AbsoluteTable table);
PositionalScheme scheme_relative(RelativeBiasTable table);
PositionalScheme scheme_rotary(RotaryAngles angles);

// Writes the sinusoidal encoding of fractional grid position (row, col) into out[0..dim).
// First dim/2 channels encode the row, second dim/2 the column; sin/cos interleave with
// the classical frequency ladder per half. Valid for any real position, including
// positions outside the grid a table was built for.
void sinusoidal_encode(int dim, double row, double col, double* out);

AbsoluteTable build_sinusoidal_2d(GridShape shape, int dim);
AbsoluteTable build_learned_random(GridShape shape, int dim, std::uint64_t seed);
RelativeBiasTable build_relative_bias(GridShape shape, int heads, std::uint64_t seed);
RotaryAngles make_rotary_angles(int dim, double axis_split = 0.5);

std::vector<double> rope_rotate(const std::vector<double>& v, double row, double col,
                                const RotaryAngles& angles);
std::vector<double> rope_rotate_weighted(const std::vector<double>& v, double row, double col,
                                         const RotaryAngles& angles, double omega,
                                         WeightMode mode);

// In-place variants used by the hot paths; identical arithmetic to the copying versions.
void rope_rotate_inplace(double* v, int dim, double row, double col, const RotaryAngles& angles);
void rope_rotate_weighted_inplace(double* v, int dim, double row, double col,
                                  const RotaryAngles& angles, double omega, WeightMode mode);

PositionalScheme scale_positional(const PositionalScheme& scheme, double omega);

// JSON descriptor sufficient to rebuild the scheme bit-for-bit (kind, shape, dim, seed,
// omega, mode). Tables are reproduced from their seeds, not serialized.
std::string scheme_to_json(const PositionalScheme& scheme);
PositionalScheme scheme_from_json(const std::string& descriptor);

}  // namespace pegeo::posenc
