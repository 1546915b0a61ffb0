#pragma once

#include <cstdint>
#include <vector>

#include "pegeo/grid.hpp"
#include "pegeo/posenc.hpp"

namespace pegeo::attnlab {

// Query/key projection weights for one attention head, drawn i.i.d. N(0, 1/dim) so that
// projected tokens keep unit-order variance.
struct ProjectionPair {
    int dim = 0;
    std::uint64_t seed = 0;
    Matrix w_q;  // dim × dim
    Matrix w_k;  // dim × dim
};

ProjectionPair make_projection_pair(int dim, std::uint64_t seed);

// Raw pre-softmax logits α_ij = (1/√d)·q_i·k_j over all token pairs, with the scheme's
// positional signal injected where that scheme injects it:
//   none      q = W_Q x,        k = W_K x
//   absolute  q = W_Q (x + p),  k = W_K (x + p)
//   relative  content logits plus the head-0 displacement bias, added after scaling
//   rotary    q, k rotated by their grid phases after projection (omega-weighted)
// The two-grid overload draws queries from `xq` and keys from `xk`; both grids must
// share shape and dim. Mismatched dims or table shapes raise invalid_argument.
Matrix attention_logits(const TokenGrid& x, const posenc::PositionalScheme& scheme,
                        const ProjectionPair& proj);
Matrix attention_logits(const TokenGrid& xq, const TokenGrid& xk,
                        const posenc::PositionalScheme& scheme, const ProjectionPair& proj);

// The four bilinear terms of the additive-PE logit: content-content, content-position,
// position-content, position-position, each scaled by 1/√d. Their sum reproduces
// attention_logits on x + p.
struct LogitDecomposition {
    Matrix cc, cp, pc, pp;
    double scale = 0.0;
};

LogitDecomposition decompose_absolute(const TokenGrid& x, const posenc::AbsoluteTable& table,
                                      const ProjectionPair& proj);
// Scheme-typed entry point; throws invalid_argument unless scheme.kind == absolute.
LogitDecomposition decompose_absolute(const TokenGrid& x, const posenc::PositionalScheme& scheme,
                                      const ProjectionPair& proj);

// Closed-form contribution of one rotated pair to a logit, for relative phase dphi
// (key phase minus query phase). Equals dotting q with k rotated by dphi.
double rope_logit_pairterm(double q1, double q2, double k1, double k2, double dphi);

enum class KernelMethod { monte_carlo, analytic };

// Expected logit E[α_ij] over i.i.d. standard-normal tokens, queries and keys drawn
// independently. The Monte-Carlo variant reports a per-entry standard error; analytic
// variants report zero.
struct ExpectedKernel {
    GridShape shape;
    Matrix kernel;  // N × N
    Matrix se;      // N × N, zero for analytic
    KernelMethod method = KernelMethod::monte_carlo;
    int samples = 0;
    std::uint64_t seed = 0;
};

// Monte-Carlo: averages attention_logits over `samples` independent token draws, with
// per-sample seeds derived from (seed, sample index) so any worker count reproduces the
// same bits. Analytic closed forms:
//   absolute  (1/√d)·P M Pᵀ with M = W_Qᵀ W_K        (the position-position term)
//   relative  the head-0 bias table laid out over token pairs
//   rotary    (1/√d)·Σ_b c_b·cos(Δφ_b), with c_b the expected per-pair correlation
//             q_{2b−1}k_{2b−1} + q_{2b}k_{2b}; pass it via `pair_corr` or leave null to
//             estimate it from `samples` draws of the same sampler
//   none      unsupported (expectation is identically zero; request monte_carlo)
// Rotary analytic requires omega = 1 or phase_scaled mode; interpolated weighting at
// interior omega is not a rotation, so no stationary closed form exists.
ExpectedKernel expected_kernel(const posenc::PositionalScheme& scheme, GridShape shape,
                               const ProjectionPair& proj, KernelMethod method, int samples,
                               std::uint64_t seed,
                               const std::vector<double>* pair_corr = nullptr);

}  // namespace pegeo::attnlab
