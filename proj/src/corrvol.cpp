#include "pegeo/corrvol.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pegeo/parallel.hpp"

namespace pegeo::corrvol {

TokenGrid normalize_tokens(const TokenGrid& grid, int* degenerate_count) {
    TokenGrid out = grid;
    int degenerate = 0;
    for (int i = 0; i < grid.shape.cells(); ++i) {
        double* tok = out.v.data() + static_cast<std::size_t>(i) * grid.dim;
        const double norm = norm2(tok, grid.dim);
        if (norm == 0.0) {
            ++degenerate;
            tok[0] = 1.0;
            for (int d = 1; d < grid.dim; ++d) tok[d] = 0.0;
        } else {
            const double inv = 1.0 / norm;
            for (int d = 0; d < grid.dim; ++d) tok[d] *= inv;
        }
    }
    out.normalized = true;
    if (degenerate_count) *degenerate_count = degenerate;
    return out;
}

CorrelationVolume build_volume(const TokenGrid& left, const TokenGrid& right) {
    if (left.dim != right.dim)
        throw std::invalid_argument("corrvol: token dims differ between views");
    CorrelationVolume vol;
    vol.left_shape = left.shape;
    vol.right_shape = right.shape;
    vol.normalized = left.normalized && right.normalized;
    const std::size_t candidates = static_cast<std::size_t>(right.shape.cells());
    vol.data.resize(static_cast<std::size_t>(left.shape.cells()) * candidates);
    const int dim = left.dim;
    parallel_for(static_cast<std::size_t>(left.shape.cells()), [&](std::size_t q) {
        const double* lq = left.v.data() + q * dim;
        float* out = vol.data.data() + q * candidates;
        for (std::size_t j = 0; j < candidates; ++j)
            out[j] = static_cast<float>(dot(lq, right.v.data() + j * dim, dim));
    });
    return vol;
}

MatchDistribution match_distribution(const CorrelationVolume& volume, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("corrvol: temperature must be positive");
    MatchDistribution dist;
    dist.left_shape = volume.left_shape;
    dist.right_shape = volume.right_shape;
    dist.temperature = tau;
    dist.data.resize(volume.data.size());
    const std::size_t candidates = static_cast<std::size_t>(volume.right_shape.cells());
    parallel_for(static_cast<std::size_t>(volume.left_shape.cells()), [&](std::size_t q) {
        const float* in = volume.data.data() + q * candidates;
        double* out = dist.data.data() + q * candidates;
        double mx = in[0];
        for (std::size_t j = 1; j < candidates; ++j) mx = std::max(mx, static_cast<double>(in[j]));
        double sum = 0.0;
        for (std::size_t j = 0; j < candidates; ++j) {
            out[j] = std::exp(tau * (static_cast<double>(in[j]) - mx));
            sum += out[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < candidates; ++j) out[j] *= inv;
    });
    return dist;
}

DisplacementField soft_argmax_displacement(const MatchDistribution& dist) {
    DisplacementField field;
    field.shape = dist.left_shape;
    field.dx = Matrix(dist.left_shape.rows, dist.left_shape.cols);
    field.dy = Matrix(dist.left_shape.rows, dist.left_shape.cols);
    const std::size_t candidates = static_cast<std::size_t>(dist.right_shape.cells());
    const int cols_r = dist.right_shape.cols;
    parallel_for(static_cast<std::size_t>(dist.left_shape.cells()), [&](std::size_t q) {
        const double* p = dist.data.data() + q * candidates;
        const int row = static_cast<int>(q) / dist.left_shape.cols;
        const int col = static_cast<int>(q) % dist.left_shape.cols;
        double ex = 0.0;
        double ey = 0.0;
        for (std::size_t j = 0; j < candidates; ++j) {
            const int row_r = static_cast<int>(j) / cols_r;
            const int col_r = static_cast<int>(j) % cols_r;
            ex += p[j] * (col_r - col);
            ey += p[j] * (row_r - row);
        }
        field.dx.a[q] = ex;
        field.dy.a[q] = ey;
    });
    return field;
}

EpipolarSlice epipolar_slice(const CorrelationVolume& volume) {
    if (volume.left_shape.rows != volume.right_shape.rows)
        throw std::invalid_argument("corrvol: epipolar slice needs equal row counts");
    EpipolarSlice slice;
    slice.shape = volume.left_shape;
    slice.cols_r = volume.right_shape.cols;
    slice.normalized = volume.normalized;
    slice.data.resize(static_cast<std::size_t>(volume.left_shape.cells()) * slice.cols_r);
    parallel_for(static_cast<std::size_t>(volume.left_shape.cells()), [&](std::size_t q) {
        const int row = static_cast<int>(q) / volume.left_shape.cols;
        const int col = static_cast<int>(q) % volume.left_shape.cols;
        float* out = slice.data.data() + q * slice.cols_r;
        for (int cr = 0; cr < slice.cols_r; ++cr) out[cr] = volume.at(row, col, row, cr);
    });
    return slice;
}

DisparityField soft_argmin_disparity(const EpipolarSlice& slice, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("corrvol: temperature must be positive");
    DisparityField field;
    field.shape = slice.shape;
    field.values = Matrix(slice.shape.rows, slice.shape.cols);
    parallel_for(static_cast<std::size_t>(slice.shape.cells()), [&](std::size_t q) {
        const int col = static_cast<int>(q) % slice.shape.cols;
        const float* in = slice.data.data() + q * slice.cols_r;
        double mx = in[0];
        for (int cr = 1; cr < slice.cols_r; ++cr) mx = std::max(mx, static_cast<double>(in[cr]));
        double sum = 0.0;
        double acc = 0.0;
        for (int cr = 0; cr < slice.cols_r; ++cr) {
            const double w = std::exp(tau * (static_cast<double>(in[cr]) - mx));
            sum += w;
            acc += w * (cr - col);
        }
        field.values.a[q] = acc / sum;
    });
    return field;
}

std::string slice_to_csv(const EpipolarSlice& slice) {
    std::ostringstream os;
    os.precision(17);
    os << "row,col,candidate_col,disparity,value\n";
    for (int r = 0; r < slice.shape.rows; ++r)
        for (int c = 0; c < slice.shape.cols; ++c)
            for (int cr = 0; cr < slice.cols_r; ++cr)
                os << r << ',' << c << ',' << cr << ',' << (cr - c) << ','
                   << slice.at(r, c, cr) << '\n';
    return os.str();
}

}  // namespace pegeo::corrvol
