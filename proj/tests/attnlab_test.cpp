#include "pegeo/attnlab.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"

#include "pegeo/posenc.hpp"
#include "pegeo/rng.hpp"

using namespace pegeo;
using namespace pegeo::attnlab;
using posenc::PositionalScheme;

namespace {

TokenGrid random_tokens(GridShape shape, int dim, std::uint64_t seed) {
    TokenGrid t(shape, dim);
    Rng rng(seed);
    for (double& v : t.v) v = rng.gaussian();
    return t;
}

ProjectionPair identity_projections(int dim) {
    ProjectionPair p;
    p.dim = dim;
    p.w_q = Matrix(dim, dim);
    p.w_k = Matrix(dim, dim);
    for (int i = 0; i < dim; ++i) {
        p.w_q.at(i, i) = 1.0;
        p.w_k.at(i, i) = 1.0;
    }
    return p;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.a.size(); ++i) m = std::max(m, std::abs(a.a[i] - b.a[i]));
    return m;
}

double frobenius(const Matrix& a) {
    double s = 0.0;
    for (const double v : a.a) s += v * v;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("projection pair: deterministic, unit-order projected variance") {
    const ProjectionPair a = make_projection_pair(16, 5);
    const ProjectionPair b = make_projection_pair(16, 5);
    CHECK(a.w_q.a == b.w_q.a);
    CHECK(a.w_k.a == b.w_k.a);
    const ProjectionPair c = make_projection_pair(16, 6);
    CHECK(a.w_q.a != c.w_q.a);

    double sq = 0.0;
    for (const double v : a.w_q.a) sq += v * v;
    // entries are N(0, 1/16): mean square near 1/16
    CHECK(sq / 256.0 == doctest::Approx(1.0 / 16.0).epsilon(0.3));
}

TEST_CASE("attention logits: identity projections on an orthonormal pair give the scaled Gram") {
    const int dim = 4;
    TokenGrid t({1, 2}, dim);
    t.tok(0, 0)[0] = 1.0;
    t.tok(0, 1)[1] = 1.0;
    const Matrix logits = attention_logits(t, posenc::scheme_none(), identity_projections(dim));
    // Gram of orthonormal tokens is the identity; scale is 1/sqrt(4)
    CHECK(logits.at(0, 0) == 0.5);
    CHECK(logits.at(0, 1) == 0.0);
    CHECK(logits.at(1, 0) == 0.0);
    CHECK(logits.at(1, 1) == 0.5);
}

TEST_CASE("attention logits: zero tokens under absolute PE leave only the position term") {
    const GridShape shape{3, 3};
    const int dim = 16;
    const ProjectionPair proj = make_projection_pair(dim, 2);
    const auto table = posenc::build_learned_random(shape, dim, 9);
    const TokenGrid zeros(shape, dim);

    const Matrix logits = attention_logits(zeros, posenc::scheme_absolute(table), proj);
    const LogitDecomposition d = decompose_absolute(zeros, table, proj);
    CHECK(max_abs_diff(logits, d.pp) == 0.0);
    CHECK(frobenius(d.cc) == 0.0);
    CHECK(frobenius(d.cp) == 0.0);
    CHECK(frobenius(d.pc) == 0.0);
    CHECK(frobenius(d.pp) > 0.0);
}

TEST_CASE("attention logits: relative bias is purely additive") {
    const GridShape shape{3, 4};
    const int dim = 8;
    const ProjectionPair proj = make_projection_pair(dim, 3);
    const TokenGrid x = random_tokens(shape, dim, 17);
    const auto table = posenc::build_relative_bias(shape, 2, 5);

    const Matrix with_bias = attention_logits(x, posenc::scheme_relative(table), proj);
    const Matrix without = attention_logits(x, posenc::scheme_none(), proj);
    for (int i = 0; i < shape.cells(); ++i) {
        const int ri = i / shape.cols, ci = i % shape.cols;
        for (int j = 0; j < shape.cells(); ++j) {
            const int rj = j / shape.cols, cj = j % shape.cols;
            CHECK(with_bias.at(i, j) == without.at(i, j) + table.lookup(0, rj - ri, cj - ci));
        }
    }
}

TEST_CASE("attention logits: dim and shape mismatches are rejected") {
    const ProjectionPair proj = make_projection_pair(8, 0);
    const TokenGrid x({2, 2}, 4);
    CHECK_THROWS_AS(attention_logits(x, posenc::scheme_none(), proj), std::invalid_argument);

    const TokenGrid ok({2, 2}, 8);
    const auto wrong_table = posenc::build_learned_random({3, 3}, 8, 0);
    CHECK_THROWS_AS(attention_logits(ok, posenc::scheme_absolute(wrong_table), proj),
                    std::invalid_argument);

    const TokenGrid other_shape({2, 3}, 8);
    CHECK_THROWS_AS(attention_logits(ok, other_shape, posenc::scheme_none(), proj),
                    std::invalid_argument);
}

TEST_CASE("decompose: zero positions collapse to content-content") {
    const GridShape shape{2, 3};
    const int dim = 8;
    const ProjectionPair proj = make_projection_pair(dim, 4);
    const TokenGrid x = random_tokens(shape, dim, 21);
    const auto zero_table =
        posenc::scale_positional(posenc::scheme_absolute(posenc::build_learned_random(shape, dim, 1)), 0.0);

    const LogitDecomposition d = decompose_absolute(x, *zero_table.absolute, proj);
    CHECK(frobenius(d.cp) == 0.0);
    CHECK(frobenius(d.pc) == 0.0);
    CHECK(frobenius(d.pp) == 0.0);

    const Matrix plain = attention_logits(x, posenc::scheme_none(), proj);
    CHECK(max_abs_diff(d.cc, plain) == 0.0);
}

TEST_CASE("decompose: four terms reconstruct the direct logits") {
    const GridShape shape{3, 3};
    const int dim = 16;
    const ProjectionPair proj = make_projection_pair(dim, 3);
    const TokenGrid x = random_tokens(shape, dim, 3);
    const auto table = posenc::build_learned_random(shape, dim, 3);

    const LogitDecomposition d = decompose_absolute(x, table, proj);
    Matrix sum = d.cc;
    for (std::size_t i = 0; i < sum.a.size(); ++i)
        sum.a[i] += d.cp.a[i] + d.pc.a[i] + d.pp.a[i];

    const Matrix direct = attention_logits(x, posenc::scheme_absolute(table), proj);
    CHECK(max_abs_diff(sum, direct) < 1e-8);
}

TEST_CASE("decompose: reconstruction holds within 1e-6 relative across 100 seeds") {
    const GridShape shape{2, 3};
    const int dim = 8;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const ProjectionPair proj = make_projection_pair(dim, derive_seed(100, s));
        const TokenGrid x = random_tokens(shape, dim, derive_seed(200, s));
        const auto table = posenc::build_learned_random(shape, dim, derive_seed(300, s));

        const LogitDecomposition d = decompose_absolute(x, table, proj);
        const Matrix direct = attention_logits(x, posenc::scheme_absolute(table), proj);
        Matrix gap = d.cc;
        for (std::size_t i = 0; i < gap.a.size(); ++i)
            gap.a[i] += d.cp.a[i] + d.pc.a[i] + d.pp.a[i] - direct.a[i];
        CHECK(frobenius(gap) <= 1e-6 * frobenius(direct));
    }
}

TEST_CASE("decompose: non-absolute scheme is rejected") {
    const ProjectionPair proj = make_projection_pair(8, 0);
    const TokenGrid x({2, 2}, 8);
    CHECK_THROWS_AS(decompose_absolute(x, posenc::scheme_none(), proj), std::invalid_argument);
    CHECK_THROWS_AS(
        decompose_absolute(x, posenc::scheme_rotary(posenc::make_rotary_angles(8)), proj),
        std::invalid_argument);
}

TEST_CASE("rope pair term: closed form matches rotate-then-dot") {
    CHECK(rope_logit_pairterm(1, 0, 1, 0, 0.0) == 1.0);
    CHECK(std::abs(rope_logit_pairterm(1, 0, 1, 0, M_PI / 2.0)) < 1e-12);

    // rotate k = (3, -1) by pi/3, then dot with q = (1, 2)
    const double c = std::cos(M_PI / 3.0), s = std::sin(M_PI / 3.0);
    const double kx = 3.0 * c - (-1.0) * s, ky = 3.0 * s + (-1.0) * c;
    const double expected = 1.0 * kx + 2.0 * ky;
    CHECK(rope_logit_pairterm(1, 2, 3, -1, M_PI / 3.0) == doctest::Approx(expected).epsilon(1e-12));

    // agreement with the grid rotation path: phase difference is key minus query
    const auto angles = posenc::make_rotary_angles(2, 1.0);
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<double> q{rng.gaussian(), rng.gaussian()};
        const std::vector<double> k{rng.gaussian(), rng.gaussian()};
        const double phi_q = rng.uniform() * 6.0 - 3.0;
        const double phi_k = rng.uniform() * 6.0 - 3.0;
        const auto qr = posenc::rope_rotate(q, phi_q, 0.0, angles);
        const auto kr = posenc::rope_rotate(k, phi_k, 0.0, angles);
        const double via_rotation = qr[0] * kr[0] + qr[1] * kr[1];
        const double via_pairterm = rope_logit_pairterm(q[0], q[1], k[0], k[1], phi_k - phi_q);
        CHECK(std::abs(via_rotation - via_pairterm) < 1e-12);
    }
}

TEST_CASE("expected kernel: PE-free Monte-Carlo mean is statistically zero") {
    const GridShape shape{3, 3};
    const ProjectionPair proj = make_projection_pair(16, 1);
    const ExpectedKernel k = expected_kernel(posenc::scheme_none(), shape, proj,
                                             KernelMethod::monte_carlo, 10000, 42);
    CHECK(k.samples == 10000);
    for (std::size_t i = 0; i < k.kernel.a.size(); ++i) {
        CHECK(k.se.a[i] > 0.0);
        CHECK(std::abs(k.kernel.a[i]) < 4.0 * k.se.a[i]);
    }
}

TEST_CASE("expected kernel: absolute analytic equals the position-position term") {
    const GridShape shape{3, 3};
    const int dim = 16;
    const ProjectionPair proj = make_projection_pair(dim, 8);
    const auto table = posenc::build_learned_random(shape, dim, 12);

    const ExpectedKernel k = expected_kernel(posenc::scheme_absolute(table), shape, proj,
                                             KernelMethod::analytic, 0, 0);
    CHECK(k.samples == 0);
    CHECK(frobenius(k.se) == 0.0);

    const LogitDecomposition d =
        decompose_absolute(TokenGrid(shape, dim), table, proj);
    CHECK(max_abs_diff(k.kernel, d.pp) < 1e-12);
    CHECK(frobenius(k.kernel) > 0.0);
}

TEST_CASE("expected kernel: relative analytic is the bias table itself") {
    const GridShape shape{2, 3};
    const ProjectionPair proj = make_projection_pair(8, 0);
    const auto table = posenc::build_relative_bias(shape, 1, 6);
    const ExpectedKernel k = expected_kernel(posenc::scheme_relative(table), shape, proj,
                                             KernelMethod::analytic, 0, 0);
    for (int i = 0; i < shape.cells(); ++i) {
        const int ri = i / shape.cols, ci = i % shape.cols;
        for (int j = 0; j < shape.cells(); ++j) {
            const int rj = j / shape.cols, cj = j % shape.cols;
            CHECK(k.kernel.at(i, j) == table.lookup(0, rj - ri, cj - ci));
        }
    }
}

TEST_CASE("expected kernel: rotary Monte-Carlo agrees with the cosine closed form") {
    const GridShape shape{3, 3};
    const int dim = 16;
    const ProjectionPair proj = make_projection_pair(dim, 7);
    const auto scheme = posenc::scheme_rotary(posenc::make_rotary_angles(dim));

    const int samples = 50000;
    const ExpectedKernel mc =
        expected_kernel(scheme, shape, proj, KernelMethod::monte_carlo, samples, 7);
    const ExpectedKernel an =
        expected_kernel(scheme, shape, proj, KernelMethod::analytic, samples, 7);

    for (std::size_t i = 0; i < mc.kernel.a.size(); ++i)
        CHECK(std::abs(mc.kernel.a[i] - an.kernel.a[i]) < 5.0 * mc.se.a[i]);
}

TEST_CASE("expected kernel: Monte-Carlo standard error scales as inverse root samples") {
    const GridShape shape{2, 2};
    const ProjectionPair proj = make_projection_pair(8, 11);
    std::vector<double> scaled;
    for (const int samples : {1000, 4000, 16000}) {
        const ExpectedKernel k = expected_kernel(posenc::scheme_none(), shape, proj,
                                                 KernelMethod::monte_carlo, samples, 13);
        double mean_se = 0.0;
        for (const double v : k.se.a) mean_se += v;
        mean_se /= static_cast<double>(k.se.a.size());
        scaled.push_back(mean_se * std::sqrt(static_cast<double>(samples)));
    }
    for (const double v : scaled) {
        CHECK(v <= 2.0 * scaled[0]);
        CHECK(v >= scaled[0] / 2.0);
    }
}

TEST_CASE("expected kernel: rotary closed form is stationary, absolute is not") {
    const GridShape shape{3, 4};
    const int dim = 16;
    const ProjectionPair proj = make_projection_pair(dim, 15);

    std::vector<double> corr(dim / 2);
    Rng rng(31);
    for (double& v : corr) v = rng.gaussian(0.0, 0.1);
    const ExpectedKernel rot =
        expected_kernel(posenc::scheme_rotary(posenc::make_rotary_angles(dim)), shape, proj,
                        KernelMethod::analytic, 0, 0, &corr);

    const auto table = posenc::build_learned_random(shape, dim, 23);
    const ExpectedKernel abs_k = expected_kernel(posenc::scheme_absolute(table), shape, proj,
                                                 KernelMethod::analytic, 0, 0);

    const int n = shape.cells();
    double rot_gap = 0.0, abs_gap = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int i2 = 0; i2 < n; ++i2)
                for (int j2 = 0; j2 < n; ++j2) {
                    const int dr = j / shape.cols - i / shape.cols;
                    const int dc = j % shape.cols - i % shape.cols;
                    const int dr2 = j2 / shape.cols - i2 / shape.cols;
                    const int dc2 = j2 % shape.cols - i2 % shape.cols;
                    if (dr != dr2 || dc != dc2) continue;
                    rot_gap = std::max(rot_gap, std::abs(rot.kernel.at(i, j) - rot.kernel.at(i2, j2)));
                    abs_gap = std::max(abs_gap, std::abs(abs_k.kernel.at(i, j) - abs_k.kernel.at(i2, j2)));
                }
    CHECK(rot_gap <= 1e-12);
    CHECK(abs_gap > 1e-6);  // learned tables carry absolute-position structure
}

TEST_CASE("expected kernel: invalid requests are rejected") {
    const GridShape shape{2, 2};
    const ProjectionPair proj = make_projection_pair(8, 0);
    CHECK_THROWS_AS(expected_kernel(posenc::scheme_none(), shape, proj,
                                    KernelMethod::monte_carlo, 0, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        expected_kernel(posenc::scheme_none(), shape, proj, KernelMethod::analytic, 0, 0),
        std::invalid_argument);

    auto rot = posenc::scheme_rotary(posenc::make_rotary_angles(8));
    rot = posenc::scale_positional(rot, 0.5);  // interpolated mode by default
    CHECK_THROWS_AS(expected_kernel(rot, shape, proj, KernelMethod::analytic, 100, 0),
                    std::invalid_argument);

    std::vector<double> wrong_size(3, 0.0);
    CHECK_THROWS_AS(expected_kernel(posenc::scheme_rotary(posenc::make_rotary_angles(8)), shape,
                                    proj, KernelMethod::analytic, 0, 0, &wrong_size),
                    std::invalid_argument);
}
