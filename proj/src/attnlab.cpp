#include "pegeo/attnlab.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pegeo/parallel.hpp"
#include "pegeo/rng.hpp"

namespace pegeo::attnlab {

namespace {

constexpr std::uint64_t kProjStream = 0x50524F4A;  // projection weight stream tag
constexpr std::size_t kSampleChunk = 256;          // fixed Monte-Carlo reduction chunk

Matrix tokens_as_matrix(const TokenGrid& t) {
    Matrix m(t.shape.cells(), t.dim);
    m.a = t.v;
    return m;
}

Matrix positions_as_matrix(const posenc::AbsoluteTable& table) {
    Matrix m(table.shape.cells(), table.dim);
    m.a = table.table.a;
    return m;
}

void check_absolute(const posenc::AbsoluteTable& table, GridShape shape, int dim) {
    if (table.shape != shape)
        throw std::invalid_argument("attention_logits: absolute table shape mismatch");
    if (table.dim != dim)
        throw std::invalid_argument("attention_logits: absolute table dim mismatch");
}

void check_relative(const posenc::RelativeBiasTable& table, GridShape shape) {
    if (table.shape != shape)
        throw std::invalid_argument("attention_logits: relative table shape mismatch");
}

void check_rotary(const posenc::RotaryAngles& angles, int dim) {
    if (angles.dim != dim)
        throw std::invalid_argument("attention_logits: rotary dim mismatch");
}

// Core logit computation against pre-transposed projections.
Matrix logits_impl(const TokenGrid& xq, const TokenGrid& xk,
                   const posenc::PositionalScheme& scheme, int dim, const Matrix& wq_t,
                   const Matrix& wk_t) {
    const GridShape shape = xq.shape;
    const int n = shape.cells();

    Matrix mq = tokens_as_matrix(xq);
    Matrix mk = tokens_as_matrix(xk);

    if (scheme.kind == posenc::SchemeKind::absolute) {
        const posenc::AbsoluteTable& table = *scheme.absolute;
        check_absolute(table, shape, dim);
        for (std::size_t i = 0; i < mq.a.size(); ++i) {
            mq.a[i] += table.table.a[i];
            mk.a[i] += table.table.a[i];
        }
    }

    Matrix q = matmul(mq, wq_t);
    Matrix k = matmul(mk, wk_t);

    if (scheme.kind == posenc::SchemeKind::rotary) {
        const posenc::RotaryAngles& angles = *scheme.rotary;
        check_rotary(angles, dim);
        for (int i = 0; i < n; ++i) {
            const double r = static_cast<double>(i / shape.cols);
            const double c = static_cast<double>(i % shape.cols);
            posenc::rope_rotate_weighted_inplace(&q.at(i, 0), dim, r, c, angles, scheme.omega,
                                                 scheme.mode);
            posenc::rope_rotate_weighted_inplace(&k.at(i, 0), dim, r, c, angles, scheme.omega,
                                                 scheme.mode);
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    Matrix logits = matmul(q, transpose(k));
    for (double& v : logits.a) v *= scale;

    if (scheme.kind == posenc::SchemeKind::relative) {
        const posenc::RelativeBiasTable& table = *scheme.relative;
        check_relative(table, shape);
        for (int i = 0; i < n; ++i) {
            const int ri = i / shape.cols, ci = i % shape.cols;
            for (int j = 0; j < n; ++j) {
                const int rj = j / shape.cols, cj = j % shape.cols;
                logits.at(i, j) += table.lookup(0, rj - ri, cj - ci);
            }
        }
    }
    return logits;
}

TokenGrid normal_grid(GridShape shape, int dim, std::uint64_t seed) {
    TokenGrid t(shape, dim);
    Rng rng(seed);
    for (double& v : t.v) v = rng.gaussian();
    return t;
}

// Per-pair relative phase between grid cells i and j (key minus query).
double pair_phase(const posenc::RotaryAngles& angles, int pair, int drow, int dcol) {
    const double delta =
        angles.axis_of(pair) == posenc::RotaryAxis::row ? static_cast<double>(drow)
                                                        : static_cast<double>(dcol);
    return delta * angles.frequencies[static_cast<std::size_t>(pair)];
}

}  // namespace

ProjectionPair make_projection_pair(int dim, std::uint64_t seed) {
    if (dim < 1) throw std::invalid_argument("make_projection_pair: dim must be positive");
    ProjectionPair p;
    p.dim = dim;
    p.seed = seed;
    p.w_q = Matrix(dim, dim);
    p.w_k = Matrix(dim, dim);
    Rng rng(derive_seed(seed, kProjStream));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& v : p.w_q.a) v = rng.gaussian(0.0, stddev);
    for (double& v : p.w_k.a) v = rng.gaussian(0.0, stddev);
    return p;
}

Matrix attention_logits(const TokenGrid& x, const posenc::PositionalScheme& scheme,
                        const ProjectionPair& proj) {
    return attention_logits(x, x, scheme, proj);
}

Matrix attention_logits(const TokenGrid& xq, const TokenGrid& xk,
                        const posenc::PositionalScheme& scheme, const ProjectionPair& proj) {
    if (xq.dim != proj.dim || xk.dim != proj.dim)
        throw std::invalid_argument("attention_logits: token dim does not match projection dim");
    if (xq.shape != xk.shape)
        throw std::invalid_argument("attention_logits: query/key grids differ in shape");
    return logits_impl(xq, xk, scheme, proj.dim, transpose(proj.w_q), transpose(proj.w_k));
}

LogitDecomposition decompose_absolute(const TokenGrid& x, const posenc::AbsoluteTable& table,
                                      const ProjectionPair& proj) {
    if (x.dim != proj.dim)
        throw std::invalid_argument("decompose_absolute: token dim does not match projection dim");
    check_absolute(table, x.shape, x.dim);

    const Matrix wq_t = transpose(proj.w_q);
    const Matrix wk_t = transpose(proj.w_k);
    const Matrix xc = tokens_as_matrix(x);
    const Matrix xp = positions_as_matrix(table);

    const Matrix qc = matmul(xc, wq_t), qp = matmul(xp, wq_t);
    const Matrix kc = matmul(xc, wk_t), kp = matmul(xp, wk_t);
    const Matrix kc_t = transpose(kc), kp_t = transpose(kp);

    LogitDecomposition d;
    d.scale = 1.0 / std::sqrt(static_cast<double>(x.dim));
    d.cc = matmul(qc, kc_t);
    d.cp = matmul(qc, kp_t);
    d.pc = matmul(qp, kc_t);
    d.pp = matmul(qp, kp_t);
    for (Matrix* m : {&d.cc, &d.cp, &d.pc, &d.pp})
        for (double& v : m->a) v *= d.scale;
    return d;
}

LogitDecomposition decompose_absolute(const TokenGrid& x, const posenc::PositionalScheme& scheme,
                                      const ProjectionPair& proj) {
    if (scheme.kind != posenc::SchemeKind::absolute)
        throw std::invalid_argument("decompose_absolute: scheme is not additive-absolute");
    return decompose_absolute(x, *scheme.absolute, proj);
}

double rope_logit_pairterm(double q1, double q2, double k1, double k2, double dphi) {
    return (q1 * k1 + q2 * k2) * std::cos(dphi) + (q2 * k1 - q1 * k2) * std::sin(dphi);
}

ExpectedKernel expected_kernel(const posenc::PositionalScheme& scheme, GridShape shape,
                               const ProjectionPair& proj, KernelMethod method, int samples,
                               std::uint64_t seed, const std::vector<double>* pair_corr) {
    if (shape.rows < 1 || shape.cols < 1)
        throw std::invalid_argument("expected_kernel: empty grid");
    const int n = shape.cells();
    const int dim = proj.dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));

    ExpectedKernel out;
    out.shape = shape;
    out.method = method;
    out.seed = seed;
    out.kernel = Matrix(n, n);
    out.se = Matrix(n, n);

    if (method == KernelMethod::monte_carlo) {
        if (samples < 1)
            throw std::invalid_argument("expected_kernel: monte-carlo needs samples >= 1");
        out.samples = samples;

        const Matrix wq_t = transpose(proj.w_q);
        const Matrix wk_t = transpose(proj.w_k);
        const std::size_t cells2 = static_cast<std::size_t>(n) * n;
        const std::size_t total = static_cast<std::size_t>(samples);
        const std::size_t chunks = (total + kSampleChunk - 1) / kSampleChunk;
        std::vector<std::vector<double>> part_sum(chunks), part_sq(chunks);

        parallel_chunks(total, kSampleChunk, [&](std::size_t begin, std::size_t end) {
            std::vector<double> sum(cells2, 0.0), sq(cells2, 0.0);
            for (std::size_t s = begin; s < end; ++s) {
                const std::uint64_t ss = derive_seed(seed, s);
                const TokenGrid xq = normal_grid(shape, dim, derive_seed(ss, 0));
                const TokenGrid xk = normal_grid(shape, dim, derive_seed(ss, 1));
                const Matrix logits = logits_impl(xq, xk, scheme, dim, wq_t, wk_t);
                for (std::size_t i = 0; i < cells2; ++i) {
                    sum[i] += logits.a[i];
                    sq[i] += logits.a[i] * logits.a[i];
                }
            }
            part_sum[begin / kSampleChunk] = std::move(sum);
            part_sq[begin / kSampleChunk] = std::move(sq);
        });

        std::vector<double> sum(cells2, 0.0), sq(cells2, 0.0);
        for (std::size_t c = 0; c < chunks; ++c) {
            for (std::size_t i = 0; i < cells2; ++i) {
                sum[i] += part_sum[c][i];
                sq[i] += part_sq[c][i];
            }
        }
        const double ns = static_cast<double>(samples);
        for (std::size_t i = 0; i < cells2; ++i) {
            const double mean = sum[i] / ns;
            out.kernel.a[i] = mean;
            if (samples > 1) {
                const double var = std::max(0.0, (sq[i] - ns * mean * mean) / (ns - 1.0));
                out.se.a[i] = std::sqrt(var / ns);
            }
        }
        return out;
    }

    // Analytic closed forms.
    switch (scheme.kind) {
        case posenc::SchemeKind::absolute: {
            const posenc::AbsoluteTable& table = *scheme.absolute;
            check_absolute(table, shape, dim);
            const Matrix p = positions_as_matrix(table);
            const Matrix m = matmul(transpose(proj.w_q), proj.w_k);
            out.kernel = matmul(matmul(p, m), transpose(p));
            for (double& v : out.kernel.a) v *= scale;
            return out;
        }
        case posenc::SchemeKind::relative: {
            const posenc::RelativeBiasTable& table = *scheme.relative;
            check_relative(table, shape);
            for (int i = 0; i < n; ++i) {
                const int ri = i / shape.cols, ci = i % shape.cols;
                for (int j = 0; j < n; ++j) {
                    const int rj = j / shape.cols, cj = j % shape.cols;
                    out.kernel.at(i, j) = table.lookup(0, rj - ri, cj - ci);
                }
            }
            return out;
        }
        case posenc::SchemeKind::rotary: {
            const posenc::RotaryAngles& angles = *scheme.rotary;
            check_rotary(angles, dim);
            if (scheme.omega != 1.0 && scheme.mode == posenc::WeightMode::interpolated)
                throw std::invalid_argument(
                    "expected_kernel: interpolated weighting has no stationary closed form");
            const int pairs = dim / 2;

            std::vector<double> corr;
            if (pair_corr != nullptr) {
                if (static_cast<int>(pair_corr->size()) != pairs)
                    throw std::invalid_argument("expected_kernel: pair_corr needs dim/2 entries");
                corr = *pair_corr;
            } else {
                if (samples < 1)
                    throw std::invalid_argument(
                        "expected_kernel: estimating pair correlations needs samples >= 1");
                out.samples = samples;
                const Matrix wq_t = transpose(proj.w_q);
                const Matrix wk_t = transpose(proj.w_k);
                const std::size_t total = static_cast<std::size_t>(samples);
                const std::size_t chunks = (total + kSampleChunk - 1) / kSampleChunk;
                std::vector<std::vector<double>> part(chunks);

                parallel_chunks(total, kSampleChunk, [&](std::size_t begin, std::size_t end) {
                    std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
                    std::vector<double> qcol(static_cast<std::size_t>(dim));
                    std::vector<double> kcol(static_cast<std::size_t>(dim));
                    for (std::size_t s = begin; s < end; ++s) {
                        const std::uint64_t ss = derive_seed(seed, s);
                        const TokenGrid xq = normal_grid(shape, dim, derive_seed(ss, 0));
                        const TokenGrid xk = normal_grid(shape, dim, derive_seed(ss, 1));
                        const Matrix q = matmul(tokens_as_matrix(xq), wq_t);
                        const Matrix k = matmul(tokens_as_matrix(xk), wk_t);
                        // E[q_c k_c] over independent tokens equals the product of the
                        // per-channel token means; sums over i and j factorize.
                        for (int c = 0; c < dim; ++c) {
                            qcol[c] = 0.0;
                            kcol[c] = 0.0;
                        }
                        for (int i = 0; i < n; ++i)
                            for (int c = 0; c < dim; ++c) {
                                qcol[c] += q.at(i, c);
                                kcol[c] += k.at(i, c);
                            }
                        const double inv_pairs = 1.0 / (static_cast<double>(n) * n);
                        for (int c = 0; c < dim; ++c) acc[c] += qcol[c] * kcol[c] * inv_pairs;
                    }
                    part[begin / kSampleChunk] = std::move(acc);
                });

                std::vector<double> channel(static_cast<std::size_t>(dim), 0.0);
                for (std::size_t c = 0; c < chunks; ++c)
                    for (int d = 0; d < dim; ++d) channel[d] += part[c][d];
                corr.assign(static_cast<std::size_t>(pairs), 0.0);
                for (int b = 0; b < pairs; ++b)
                    corr[b] = (channel[2 * b] + channel[2 * b + 1]) / static_cast<double>(samples);
            }

            for (int i = 0; i < n; ++i) {
                const int ri = i / shape.cols, ci = i % shape.cols;
                for (int j = 0; j < n; ++j) {
                    const int rj = j / shape.cols, cj = j % shape.cols;
                    double v = 0.0;
                    for (int b = 0; b < pairs; ++b)
                        v += corr[b] *
                             std::cos(scheme.omega * pair_phase(angles, b, rj - ri, cj - ci));
                    out.kernel.at(i, j) = v * scale;
                }
            }
            return out;
        }
        case posenc::SchemeKind::none:
            throw std::invalid_argument(
                "expected_kernel: the PE-free expectation is identically zero; use monte_carlo");
    }
    throw std::invalid_argument("expected_kernel: unknown scheme kind");
}

}  // namespace pegeo::attnlab
