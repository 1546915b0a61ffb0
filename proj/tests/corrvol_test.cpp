#include "pegeo/corrvol.hpp"

#include <cmath>
#include <cstdlib>
#include <vector>

#include "doctest.h"

#include "pegeo/rng.hpp"

using namespace pegeo;
using namespace pegeo::corrvol;

namespace {

TokenGrid random_grid(GridShape shape, int dim, std::uint64_t seed) {
    TokenGrid g(shape, dim);
    Rng rng(seed);
    for (double& x : g.v) x = rng.gaussian();
    return g;
}

TokenGrid basis_grid(GridShape shape, int dim) {
    // token i = e_i; requires dim >= cells
    TokenGrid g(shape, dim);
    for (int i = 0; i < shape.cells(); ++i) g.v[static_cast<std::size_t>(i) * dim + i] = 1.0;
    g.normalized = true;
    return g;
}

}  // namespace

TEST_CASE("normalize_tokens: unit rows, idempotence, degenerate replacement") {
    TokenGrid g(GridShape{1, 3}, 4);
    g.v = {3.0, 4.0, 0.0, 0.0,
           0.6, 0.8, 0.0, 0.0,
           0.0, 0.0, 0.0, 0.0};
    int degenerate = -1;
    const TokenGrid n = normalize_tokens(g, &degenerate);
    CHECK(n.normalized);
    CHECK(degenerate == 1);
    CHECK(n.v[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(n.v[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(n.v[2] == 0.0);
    for (int d = 0; d < 4; ++d)
        CHECK(std::abs(n.v[static_cast<std::size_t>(4 + d)] - g.v[static_cast<std::size_t>(4 + d)]) <
              1e-12);
    CHECK(n.v[8] == 1.0);
    CHECK(n.v[9] == 0.0);
    CHECK(n.v[11] == 0.0);

    const TokenGrid r = normalize_tokens(random_grid(GridShape{5, 7}, 16, 42));
    for (int i = 0; i < 35; ++i)
        CHECK(std::abs(norm2(r.v.data() + static_cast<std::size_t>(i) * 16, 16) - 1.0) < 1e-9);
}

TEST_CASE("build_volume: self-similarity, orthogonality, hand dot products") {
    const TokenGrid g = normalize_tokens(random_grid(GridShape{3, 4}, 8, 7));
    const CorrelationVolume vol = build_volume(g, g);
    CHECK(vol.normalized);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) CHECK(std::abs(vol.at(r, c, r, c) - 1.0) < 1e-6);

    const TokenGrid basis = basis_grid(GridShape{2, 2}, 4);
    const CorrelationVolume ortho = build_volume(basis, basis);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(ortho.data[static_cast<std::size_t>(i) * 4 + j] == (i == j ? 1.0f : 0.0f));

    TokenGrid left(GridShape{2, 2}, 2);
    left.v = {1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 2.0, -2.0};
    TokenGrid right(GridShape{2, 2}, 2);
    right.v = {0.5, 1.0, 1.0, 1.0, -1.0, 2.0, 0.0, -1.0};
    const CorrelationVolume hand = build_volume(left, right);
    CHECK(!hand.normalized);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double expect = left.v[static_cast<std::size_t>(i) * 2] * right.v[static_cast<std::size_t>(j) * 2] +
                                  left.v[static_cast<std::size_t>(i) * 2 + 1] * right.v[static_cast<std::size_t>(j) * 2 + 1];
            CHECK(hand.data[static_cast<std::size_t>(i) * 4 + j] == doctest::Approx(expect).epsilon(1e-6));
        }

    const TokenGrid other_dim = random_grid(GridShape{2, 2}, 6, 1);
    CHECK_THROWS_AS(build_volume(left, other_dim), std::invalid_argument);
}

TEST_CASE("build_volume: view swap transposes the query and candidate axes") {
    const TokenGrid a = normalize_tokens(random_grid(GridShape{3, 4}, 8, 11));
    const TokenGrid b = normalize_tokens(random_grid(GridShape{2, 5}, 8, 12));
    const CorrelationVolume ab = build_volume(a, b);
    const CorrelationVolume ba = build_volume(b, a);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            for (int rr = 0; rr < 2; ++rr)
                for (int cc = 0; cc < 5; ++cc)
                    CHECK(std::abs(static_cast<double>(ab.at(r, c, rr, cc)) -
                                   static_cast<double>(ba.at(rr, cc, r, c))) < 1e-12);
    for (float x : ab.data) {
        CHECK(x <= 1.0f + 1e-6f);
        CHECK(x >= -1.0f - 1e-6f);
    }
}

TEST_CASE("match_distribution: uniform, one-hot, normalization, temperature errors") {
    CorrelationVolume uniform;
    uniform.left_shape = GridShape{2, 2};
    uniform.right_shape = GridShape{2, 3};
    uniform.data.assign(4 * 6, 0.25f);
    const MatchDistribution u = match_distribution(uniform, 10.0);
    for (double p : u.data) CHECK(p == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    CorrelationVolume onehot = uniform;
    onehot.data.assign(4 * 6, 0.0f);
    onehot.data[onehot.index(1, 1, 0, 2)] = 1.0f;
    const MatchDistribution d = match_distribution(onehot, 500.0);
    CHECK(d.at(1, 1, 0, 2) > 0.999);

    const CorrelationVolume rnd =
        build_volume(normalize_tokens(random_grid(GridShape{3, 3}, 8, 3)),
                     normalize_tokens(random_grid(GridShape{3, 3}, 8, 4)));
    const MatchDistribution m = match_distribution(rnd, 50.0);
    for (int q = 0; q < 9; ++q) {
        double sum = 0.0;
        for (int j = 0; j < 9; ++j) sum += m.data[static_cast<std::size_t>(q) * 9 + j];
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }

    CHECK_THROWS_AS(match_distribution(uniform, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(match_distribution(uniform, -3.0), std::invalid_argument);
}

TEST_CASE("soft_argmax_displacement: identity, symmetry, hand expectation") {
    MatchDistribution d;
    d.left_shape = GridShape{3, 3};
    d.right_shape = GridShape{3, 3};
    d.data.assign(81, 0.0);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) d.data[d.index(r, c, r, c)] = 1.0;
    const DisplacementField id = soft_argmax_displacement(d);
    for (int i = 0; i < 9; ++i) {
        CHECK(id.dx.a[static_cast<std::size_t>(i)] == 0.0);
        CHECK(id.dy.a[static_cast<std::size_t>(i)] == 0.0);
    }

    // query (1,1): equal modes one column left and right of the query
    MatchDistribution sym = d;
    sym.data.assign(81, 0.0);
    sym.data[sym.index(1, 1, 1, 0)] = 0.5;
    sym.data[sym.index(1, 1, 1, 2)] = 0.5;
    const DisplacementField s = soft_argmax_displacement(sym);
    CHECK(s.dx.at(1, 1) == 0.0);
    CHECK(s.dy.at(1, 1) == 0.0);

    MatchDistribution hand = d;
    hand.data.assign(81, 0.0);
    hand.data[hand.index(1, 1, 1, 0)] = 0.2;
    hand.data[hand.index(1, 1, 1, 1)] = 0.5;
    hand.data[hand.index(1, 1, 1, 2)] = 0.3;
    const DisplacementField h = soft_argmax_displacement(hand);
    CHECK(h.dx.at(1, 1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(h.dy.at(1, 1) == 0.0);
}

TEST_CASE("epipolar_slice: self-match, shifted match, definition, shape errors") {
    const TokenGrid g = normalize_tokens(random_grid(GridShape{3, 5}, 8, 21));
    const CorrelationVolume self_vol = build_volume(g, g);
    const EpipolarSlice self_slice = epipolar_slice(self_vol);
    REQUIRE(self_slice.cols_r == 5);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) {
            int best = 0;
            for (int cr = 1; cr < 5; ++cr)
                if (self_slice.at(r, c, cr) > self_slice.at(r, c, best)) best = cr;
            CHECK(best == c);
            for (int cr = 0; cr < 5; ++cr)
                CHECK(self_slice.at(r, c, cr) == self_vol.at(r, c, r, cr));
        }

    // right view = left cyclically shifted one column to the left, so the content
    // of left column c sits at right column c-1... argmax lands at d = +1 when the
    // right view holds left's column c+1 content at column c+... Construct directly:
    // right column cr holds left column (cr+1) mod 5? Then left c matches right c-1 (d=-1).
    // We want d=+1: right column cr = left column (cr-1) mod 5, so left c matches cr=c+1.
    TokenGrid shifted = g;
    for (int r = 0; r < 3; ++r)
        for (int cr = 0; cr < 5; ++cr) {
            const int src = (cr + 4) % 5;
            for (int d = 0; d < 8; ++d)
                shifted.v[(static_cast<std::size_t>(r) * 5 + cr) * 8 + d] =
                    g.v[(static_cast<std::size_t>(r) * 5 + src) * 8 + d];
        }
    const EpipolarSlice moved = epipolar_slice(build_volume(g, shifted));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) {
            int best = 0;
            for (int cr = 1; cr < 5; ++cr)
                if (moved.at(r, c, cr) > moved.at(r, c, best)) best = cr;
            CHECK(best == (c + 1) % 5);
        }

    const TokenGrid tall = random_grid(GridShape{4, 5}, 8, 23);
    CHECK_THROWS_AS(epipolar_slice(build_volume(g, tall)), std::invalid_argument);
}

TEST_CASE("soft_argmin_disparity: one-hot, symmetric, centered uniform") {
    EpipolarSlice slice;
    slice.shape = GridShape{1, 3};
    slice.cols_r = 5;
    slice.data.assign(15, 0.0f);
    slice.data[slice.index(0, 1, 3)] = 1.0f;  // query col 1, candidate col 3 -> d = 2
    const DisparityField one = soft_argmin_disparity(slice, 100.0);
    CHECK(std::abs(one.values.at(0, 1) - 2.0) < 1e-6);

    // affinities symmetric about d=0 for the query at column 2
    EpipolarSlice sym;
    sym.shape = GridShape{1, 5};
    sym.cols_r = 5;
    sym.data.assign(25, 0.0f);
    const float vals[5] = {0.1f, 0.7f, 0.9f, 0.7f, 0.1f};
    for (int cr = 0; cr < 5; ++cr) sym.data[sym.index(0, 2, cr)] = vals[cr];
    const DisparityField s = soft_argmin_disparity(sym, 10.0);
    CHECK(std::abs(s.values.at(0, 2)) < 1e-12);

    // uniform over candidates d in {-1,0,+1} for the query at column 1
    EpipolarSlice flat;
    flat.shape = GridShape{1, 3};
    flat.cols_r = 3;
    flat.data.assign(9, 0.5f);
    const DisparityField f = soft_argmin_disparity(flat, 7.0);
    CHECK(std::abs(f.values.at(0, 1)) < 1e-12);

    CHECK_THROWS_AS(soft_argmin_disparity(flat, 0.0), std::invalid_argument);
}

TEST_CASE("temperature sharpens matches toward the hard argmax") {
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        const TokenGrid left =
            normalize_tokens(random_grid(GridShape{6, 6}, 16, derive_seed(500, trial * 2)));
        const TokenGrid right =
            normalize_tokens(random_grid(GridShape{6, 6}, 16, derive_seed(500, trial * 2 + 1)));
        const CorrelationVolume vol = build_volume(left, right);

        double prev_mean_max = 0.0;
        for (double tau : {1.0, 10.0, 100.0}) {
            const MatchDistribution dist = match_distribution(vol, tau);
            double mean_max = 0.0;
            for (int q = 0; q < 36; ++q) {
                double mx = 0.0;
                for (int j = 0; j < 36; ++j)
                    mx = std::max(mx, dist.data[static_cast<std::size_t>(q) * 36 + j]);
                mean_max += mx;
            }
            mean_max /= 36.0;
            CHECK(mean_max >= prev_mean_max - 1e-12);
            prev_mean_max = mean_max;
        }

        // sharp-limit agreement with the brute-force argmax on well-separated queries
        const DisplacementField soft = soft_argmax_displacement(match_distribution(vol, 500.0));
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) {
                float best = -2.0f;
                float second = -2.0f;
                int best_j = 0;
                for (int j = 0; j < 36; ++j) {
                    const float v = vol.data[(static_cast<std::size_t>(r) * 6 + c) * 36 + j];
                    if (v > best) {
                        second = best;
                        best = v;
                        best_j = j;
                    } else if (v > second) {
                        second = v;
                    }
                }
                if (best - second > 0.1f) {
                    CHECK(std::abs(soft.dx.at(r, c) - (best_j % 6 - c)) < 0.01);
                    CHECK(std::abs(soft.dy.at(r, c) - (best_j / 6 - r)) < 0.01);
                }
            }
    }
}

TEST_CASE("slice softmax equals the row-masked full distribution") {
    const TokenGrid left = normalize_tokens(random_grid(GridShape{4, 5}, 12, 61));
    const TokenGrid right = normalize_tokens(random_grid(GridShape{4, 5}, 12, 62));
    const CorrelationVolume vol = build_volume(left, right);
    const double tau = 25.0;

    MatchDistribution masked = match_distribution(vol, tau);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 5; ++c) {
            double keep = 0.0;
            for (int rr = 0; rr < 4; ++rr)
                for (int cc = 0; cc < 5; ++cc) {
                    if (rr != r) masked.data[masked.index(r, c, rr, cc)] = 0.0;
                    else keep += masked.data[masked.index(r, c, rr, cc)];
                }
            for (int cc = 0; cc < 5; ++cc) masked.data[masked.index(r, c, r, cc)] /= keep;
        }

    const DisplacementField from_full = soft_argmax_displacement(masked);
    const DisparityField from_slice = soft_argmin_disparity(epipolar_slice(vol), tau);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 5; ++c)
            CHECK(std::abs(from_full.dx.at(r, c) - from_slice.values.at(r, c)) < 1e-9);
}

TEST_CASE("volume and softmax bytes ignore the worker count") {
    const TokenGrid left = normalize_tokens(random_grid(GridShape{5, 5}, 16, 71));
    const TokenGrid right = normalize_tokens(random_grid(GridShape{5, 5}, 16, 72));

    setenv("PEGEO_THREADS", "1", 1);
    const CorrelationVolume v1 = build_volume(left, right);
    const MatchDistribution d1 = match_distribution(v1, 50.0);
    setenv("PEGEO_THREADS", "4", 1);
    const CorrelationVolume v4 = build_volume(left, right);
    const MatchDistribution d4 = match_distribution(v4, 50.0);
    unsetenv("PEGEO_THREADS");

    CHECK(v1.data == v4.data);
    CHECK(d1.data == d4.data);
}
