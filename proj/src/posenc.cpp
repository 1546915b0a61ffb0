#include "pegeo/posenc.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "pegeo/rng.hpp"

namespace pegeo::posenc {

namespace {

constexpr double kLearnedStd = 0.02;
constexpr double kFreqBase = 10000.0;

void check_shape(GridShape shape) {
    if (shape.rows < 1 || shape.cols < 1)
        throw std::invalid_argument("grid shape must be at least 1x1");
}

}  // namespace

double RelativeBiasTable::lookup(int head, int drow, int dcol) const {
    if (head < 0 || head >= heads)
        throw std::invalid_argument("relative bias: head out of range");
    const int r = drow + shape.rows - 1;
    const int c = dcol + shape.cols - 1;
    const int nr = 2 * shape.rows - 1;
    const int nc = 2 * shape.cols - 1;
    if (r < 0 || r >= nr || c < 0 || c >= nc)
        throw std::invalid_argument("relative bias: displacement out of range");
    return table[(static_cast<std::size_t>(head) * nr + r) * nc + c];
}

RotaryAxis RotaryAngles::axis_of(int pair) const {
    // Spreads round(axis_split · npairs) row pairs evenly; split 0.5 alternates row-first.
    const double lo = std::ceil(pair * axis_split);
    const double hi = std::ceil((pair + 1) * axis_split);
    return (hi - lo >= 1.0) ? RotaryAxis::row : RotaryAxis::col;
}

PositionalScheme scheme_none() { return PositionalScheme{}; }

PositionalScheme scheme_absolute(AbsoluteTable table) {
    PositionalScheme s;
    s.kind = SchemeKind::absolute;
    s.absolute = std::move(table);
    return s;
}

PositionalScheme scheme_relative(RelativeBiasTable table) {
    PositionalScheme s;
    s.kind = SchemeKind::relative;
    s.relative = std::move(table);
    return s;
}

PositionalScheme scheme_rotary(RotaryAngles angles) {
    PositionalScheme s;
    s.kind = SchemeKind::rotary;
    s.rotary = std::move(angles);
    return s;
}

void sinusoidal_encode(int dim, double row, double col, double* out) {
    if (dim < 4 || dim % 4 != 0)
        throw std::invalid_argument("sinusoidal encoding needs dim divisible by 4");
    const int half = dim / 2;
    const int pairs = half / 2;
    for (int t = 0; t < pairs; ++t) {
        const double freq = std::pow(kFreqBase, -2.0 * t / half);
        out[2 * t] = std::sin(row * freq);
        out[2 * t + 1] = std::cos(row * freq);
        out[half + 2 * t] = std::sin(col * freq);
        out[half + 2 * t + 1] = std::cos(col * freq);
    }
}

AbsoluteTable build_sinusoidal_2d(GridShape shape, int dim) {
    check_shape(shape);
    if (dim < 4 || dim % 4 != 0)
        throw std::invalid_argument("build_sinusoidal_2d: dim must be divisible by 4");
    AbsoluteTable t;
    t.kind = AbsoluteKind::sinusoidal_2d;
    t.shape = shape;
    t.dim = dim;
    t.table = Matrix(shape.cells(), dim);
    for (int r = 0; r < shape.rows; ++r)
        for (int c = 0; c < shape.cols; ++c)
            sinusoidal_encode(dim, r, c, &t.table.at(r * shape.cols + c, 0));
    return t;
}

AbsoluteTable build_learned_random(GridShape shape, int dim, std::uint64_t seed) {
    check_shape(shape);
    if (dim < 1) throw std::invalid_argument("build_learned_random: dim must be >= 1");
    AbsoluteTable t;
    t.kind = AbsoluteKind::learned_random;
    t.shape = shape;
    t.dim = dim;
    t.seed = seed;
    t.table = Matrix(shape.cells(), dim);
    Rng rng(derive_seed(seed, 0x41425354));
    for (double& x : t.table.a) x = rng.gaussian(0.0, kLearnedStd);
    return t;
}

RelativeBiasTable build_relative_bias(GridShape shape, int heads, std::uint64_t seed) {
    check_shape(shape);
    if (heads < 1) throw std::invalid_argument("build_relative_bias: heads must be >= 1");
    RelativeBiasTable t;
    t.shape = shape;
    t.heads = heads;
    t.seed = seed;
    t.table.resize(static_cast<std::size_t>(heads) * (2 * shape.rows - 1) * (2 * shape.cols - 1));
    Rng rng(derive_seed(seed, 0x52454C42));
    for (double& x : t.table) x = rng.gaussian(0.0, kLearnedStd);
    return t;
}

RotaryAngles make_rotary_angles(int dim, double axis_split) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("make_rotary_angles: dim must be a positive even integer");
    if (axis_split < 0.0 || axis_split > 1.0)
        throw std::invalid_argument("make_rotary_angles: axis_split must be in [0,1]");
    RotaryAngles a;
    a.dim = dim;
    a.axis_split = axis_split;
    a.frequencies.resize(dim / 2);
    for (int b = 0; b < dim / 2; ++b)
        a.frequencies[b] = std::pow(kFreqBase, -2.0 * b / dim);
    return a;
}

void rope_rotate_inplace(double* v, int dim, double row, double col,
                         const RotaryAngles& angles) {
    if (dim != angles.dim) throw std::invalid_argument("rope_rotate: vector length mismatch");
    for (int b = 0; b < dim / 2; ++b) {
        const double pos = (angles.axis_of(b) == RotaryAxis::row) ? row : col;
        const double theta = pos * angles.frequencies[b];
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double x = v[2 * b];
        const double y = v[2 * b + 1];
        v[2 * b] = c * x - s * y;
        v[2 * b + 1] = s * x + c * y;
    }
}

void rope_rotate_weighted_inplace(double* v, int dim, double row, double col,
                                  const RotaryAngles& angles, double omega, WeightMode mode) {
    if (omega < 0.0 || omega > 1.0)
        throw std::invalid_argument("rope_rotate_weighted: omega must be in [0,1]");
    if (dim != angles.dim)
        throw std::invalid_argument("rope_rotate_weighted: vector length mismatch");
    for (int b = 0; b < dim / 2; ++b) {
        const double pos = (angles.axis_of(b) == RotaryAxis::row) ? row : col;
        const double theta = pos * angles.frequencies[b];
        double c, s;
        if (mode == WeightMode::phase_scaled) {
            c = std::cos(omega * theta);
            s = std::sin(omega * theta);
        } else {
            // blended matrix (1−ω)I + ωR(θ); shrinks norms for intermediate ω
            c = 1.0 - omega + omega * std::cos(theta);
            s = omega * std::sin(theta);
        }
        const double x = v[2 * b];
        const double y = v[2 * b + 1];
        v[2 * b] = c * x - s * y;
        v[2 * b + 1] = s * x + c * y;
    }
}

std::vector<double> rope_rotate(const std::vector<double>& v, double row, double col,
                                const RotaryAngles& angles) {
    std::vector<double> out = v;
    rope_rotate_inplace(out.data(), static_cast<int>(out.size()), row, col, angles);
    return out;
}

std::vector<double> rope_rotate_weighted(const std::vector<double>& v, double row, double col,
                                         const RotaryAngles& angles, double omega,
                                         WeightMode mode) {
    std::vector<double> out = v;
    rope_rotate_weighted_inplace(out.data(), static_cast<int>(out.size()), row, col, angles,
                                 omega, mode);
    return out;
}

PositionalScheme scale_positional(const PositionalScheme& scheme, double omega) {
    if (omega < 0.0 || omega > 1.0)
        throw std::invalid_argument("scale_positional: omega must be in [0,1]");
    PositionalScheme out = scheme;
    out.omega = scheme.omega * omega;
    switch (scheme.kind) {
        case SchemeKind::none:
            break;
        case SchemeKind::absolute:
            for (double& x : out.absolute->table.a) x *= omega;
            break;
        case SchemeKind::relative:
            for (double& x : out.relative->table) x *= omega;
            break;
        case SchemeKind::rotary:
            // no additive vector to scale; omega is consumed by rope_rotate_weighted
            break;
    }
    return out;
}

std::string scheme_to_json(const PositionalScheme& scheme) {
    nlohmann::ordered_json j;
    switch (scheme.kind) {
        case SchemeKind::none:
            j["kind"] = "none";
            break;
        case SchemeKind::absolute: {
            const auto& t = *scheme.absolute;
            j["kind"] = "absolute";
            j["absolute_kind"] =
                t.kind == AbsoluteKind::learned_random ? "learned-random" : "sinusoidal-2d";
            j["rows"] = t.shape.rows;
            j["cols"] = t.shape.cols;
            j["dim"] = t.dim;
            if (t.kind == AbsoluteKind::learned_random) j["seed"] = t.seed;
            break;
        }
        case SchemeKind::relative: {
            const auto& t = *scheme.relative;
            j["kind"] = "relative";
            j["rows"] = t.shape.rows;
            j["cols"] = t.shape.cols;
            j["heads"] = t.heads;
            j["seed"] = t.seed;
            break;
        }
        case SchemeKind::rotary: {
            const auto& a = *scheme.rotary;
            j["kind"] = "rotary";
            j["dim"] = a.dim;
            j["axis_split"] = a.axis_split;
            break;
        }
    }
    j["omega"] = scheme.omega;
    j["mode"] = scheme.mode == WeightMode::interpolated ? "interpolated" : "phase-scaled";
    return j.dump();
}

PositionalScheme scheme_from_json(const std::string& descriptor) {
    const auto j = nlohmann::json::parse(descriptor);
    const std::string kind = j.at("kind").get<std::string>();
    PositionalScheme s;
    if (kind == "none") {
        s = scheme_none();
    } else if (kind == "absolute") {
        const GridShape shape{j.at("rows").get<int>(), j.at("cols").get<int>()};
        const int dim = j.at("dim").get<int>();
        const std::string ak = j.at("absolute_kind").get<std::string>();
        if (ak == "learned-random")
            s = scheme_absolute(build_learned_random(shape, dim, j.at("seed").get<std::uint64_t>()));
        else if (ak == "sinusoidal-2d")
            s = scheme_absolute(build_sinusoidal_2d(shape, dim));
        else
            throw std::invalid_argument("unknown absolute kind: " + ak);
    } else if (kind == "relative") {
        const GridShape shape{j.at("rows").get<int>(), j.at("cols").get<int>()};
        s = scheme_relative(
            build_relative_bias(shape, j.at("heads").get<int>(), j.at("seed").get<std::uint64_t>()));
    } else if (kind == "rotary") {
        s = scheme_rotary(
            make_rotary_angles(j.at("dim").get<int>(), j.value("axis_split", 0.5)));
    } else {
        throw std::invalid_argument("unknown scheme kind: " + kind);
    }
    const double omega = j.value("omega", 1.0);
    if (omega != 1.0) s = scale_positional(s, omega);
    const std::string mode = j.value("mode", "interpolated");
    s.mode = mode == "phase-scaled" ? WeightMode::phase_scaled : WeightMode::interpolated;
    return s;
}

}  // namespace pegeo::posenc
