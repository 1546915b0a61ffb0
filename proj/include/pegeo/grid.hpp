#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pegeo {

struct GridShape {
    int rows = 0;
    int cols = 0;

    int cells() const { return rows * cols; }
    bool operator==(const GridShape& o) const { return rows == o.rows && cols == o.cols; }
    bool operator!=(const GridShape& o) const { return !(*this == o); }
};

// Dense row-major matrix of doubles. All linear algebra in this project runs on fixed
// iteration orders so results are identical across runs and worker counts.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows) throw std::invalid_argument("matmul: inner dims differ");
    Matrix out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i) {
        for (int k = 0; k < x.cols; ++k) {
            const double v = x.at(i, k);
            if (v == 0.0) continue;
            for (int j = 0; j < y.cols; ++j) out.at(i, j) += v * y.at(k, j);
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& x) {
    Matrix out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
    return out;
}

// Image with values in [0, 1] per channel, stored row-major (y, x, channel).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> v;

    Image() = default;
    Image(int h, int w, int c)
        : height(h), width(w), channels(c),
          v(static_cast<std::size_t>(h) * w * c, 0.0) {}

    double& at(int y, int x, int c) {
        return v[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return v[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// One layer's token activations on a rows×cols grid, row-major, dim innermost.
struct TokenGrid {
    GridShape shape;
    int dim = 0;
    int layer_index = 0;
    bool normalized = false;  // set by corrvol::normalize_tokens
    std::vector<double> v;

    TokenGrid() = default;
    TokenGrid(GridShape s, int d, int layer = 0)
        : shape(s), dim(d), layer_index(layer),
          v(static_cast<std::size_t>(s.rows) * s.cols * d, 0.0) {}

    double* tok(int r, int c) {
        return v.data() + (static_cast<std::size_t>(r) * shape.cols + c) * dim;
    }
    const double* tok(int r, int c) const {
        return v.data() + (static_cast<std::size_t>(r) * shape.cols + c) * dim;
    }
};

// Token-unit rectangle; identifies corresponding regions of two grids.
struct Rect {
    int row0 = 0;
    int col0 = 0;
    int rows = 0;
    int cols = 0;

    bool congruent(const Rect& o) const { return rows == o.rows && cols == o.cols; }
};

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const double* a, int n) { return std::sqrt(dot(a, a, n)); }

inline double cosine(const double* a, const double* b, int n) {
    const double na = norm2(a, n);
    const double nb = norm2(b, n);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b, n) / (na * nb);
}

}  // namespace pegeo
