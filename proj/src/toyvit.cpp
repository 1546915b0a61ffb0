#include "pegeo/toyvit.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "json.hpp"

#include "pegeo/attnlab.hpp"
#include "pegeo/rng.hpp"

namespace pegeo::toyvit {

namespace {

constexpr int kChannels = 3;
constexpr int kMlpMult = 4;
constexpr double kPatchStd = 0.01;       // content rms ≈ 0.04 on [0,1] pixels
constexpr double kSinusoidalGain = 0.055;  // injected rms ≈ content rms
constexpr double kLearnedGain = 4.0;  // tables use std 0.02, so injected rms ≈ 2x content
constexpr double kBiasGain = 25.0;
constexpr double kResidualGain = 0.02;
constexpr double kLnEps = 1e-5;
constexpr double kLnParamStd = 0.02;
constexpr double kMlpBiasStd = 0.02;

constexpr std::uint64_t kPatchStream = 0x50415443;
constexpr std::uint64_t kPeStream = 0x5045544C;
constexpr std::uint64_t kBlockStream = 0x424C4F43;
constexpr std::uint64_t kFinalStream = 0x464C4E4D;
constexpr std::uint64_t kShuffleStream = 0x53484646;

void fill_gaussian(Rng& rng, std::vector<double>& v, double stddev) {
    for (double& x : v) x = rng.gaussian(0.0, stddev);
}

void check_config(const ToyViTConfig& c) {
    if (c.image_size < 1 || c.patch_size < 1 || c.image_size % c.patch_size != 0)
        throw std::invalid_argument("toyvit: image size must be a positive multiple of patch size");
    if (c.heads < 1 || c.dim < 2 || c.dim % (2 * c.heads) != 0)
        throw std::invalid_argument("toyvit: dim must be divisible by 2*heads");
    if (c.layers < 1) throw std::invalid_argument("toyvit: layers must be >= 1");
    if (c.scheme == posenc::SchemeKind::absolute &&
        c.absolute_kind == posenc::AbsoluteKind::sinusoidal_2d && c.dim % 4 != 0)
        throw std::invalid_argument("toyvit: sinusoidal encoding needs dim divisible by 4");
}

std::vector<double> layer_norm(const std::vector<double>& v, int n, int dim,
                               const std::vector<double>& g, const std::vector<double>& b) {
    std::vector<double> out(v.size());
    for (int i = 0; i < n; ++i) {
        const double* x = v.data() + static_cast<std::size_t>(i) * dim;
        double* y = out.data() + static_cast<std::size_t>(i) * dim;
        double mean = 0.0;
        for (int d = 0; d < dim; ++d) mean += x[d];
        mean /= dim;
        double var = 0.0;
        for (int d = 0; d < dim; ++d) var += (x[d] - mean) * (x[d] - mean);
        var /= dim;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        for (int d = 0; d < dim; ++d) y[d] = (x[d] - mean) * inv * g[d] + b[d];
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix rows_matrix(const std::vector<double>& v, int n, int dim) {
    Matrix m(n, dim);
    m.a = v;
    return m;
}

TokenGrid patch_embed(const Model& model, const Image& image) {
    const int p = model.config.patch_size;
    const int dim = model.config.dim;
    TokenGrid t(model.grid, dim);
    std::vector<double> vec(static_cast<std::size_t>(p) * p * kChannels);
    for (int r = 0; r < model.grid.rows; ++r)
        for (int c = 0; c < model.grid.cols; ++c) {
            std::size_t k = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    for (int ch = 0; ch < kChannels; ++ch)
                        vec[k++] = image.at(r * p + y, c * p + x, ch) - 0.5;
            double* tok = t.tok(r, c);
            for (int d = 0; d < dim; ++d) {
                double s = 0.0;
                const double* w = &model.patch_proj.a[static_cast<std::size_t>(d) * vec.size()];
                for (std::size_t j = 0; j < vec.size(); ++j) s += w[j] * vec[j];
                tok[d] = s;
            }
        }
    return t;
}

// Absolute-PE injection at the assigned indices. Sinusoidal rows are evaluated by
// formula (any index is valid) with the scheme's omega folded in explicitly, which
// reproduces the eagerly scaled table bit-for-bit; learned rows come from the
// margin-extended table and must stay inside it.
void inject_absolute(TokenGrid& t, const std::vector<GridPos>& positions,
                     const posenc::PositionalScheme& scheme, double gain) {
    if (scheme.kind != posenc::SchemeKind::absolute) return;
    const posenc::AbsoluteTable& table = *scheme.absolute;
    const int dim = t.dim;
    std::vector<double> enc(static_cast<std::size_t>(dim));
    for (int i = 0; i < t.shape.cells(); ++i) {
        const GridPos pos = positions[static_cast<std::size_t>(i)];
        double* tok = t.v.data() + static_cast<std::size_t>(i) * dim;
        if (table.kind == posenc::AbsoluteKind::sinusoidal_2d) {
            posenc::sinusoidal_encode(dim, pos.row, pos.col, enc.data());
            for (int d = 0; d < dim; ++d) tok[d] += gain * scheme.omega * enc[d];
        } else {
            if (pos.row < 0 || pos.row >= table.shape.rows || pos.col < 0 ||
                pos.col >= table.shape.cols)
                throw std::invalid_argument("toyvit: position index outside the learned table");
            const double* row = table.row(pos.row, pos.col);
            for (int d = 0; d < dim; ++d) tok[d] += gain * row[d];
        }
    }
}

void attention_sublayer(const Model& model, const Block& blk, TokenGrid& x,
                        const std::vector<GridPos>& positions,
                        const posenc::PositionalScheme& scheme) {
    const int n = x.shape.cells();
    const int dim = x.dim;
    const int heads = model.config.heads;
    const int hd = model.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    const std::vector<double> h = layer_norm(x.v, n, dim, blk.ln1_g, blk.ln1_b);
    const Matrix hm = rows_matrix(h, n, dim);
    Matrix q = matmul(hm, transpose(blk.w_q));  // shared by queries and keys
    const Matrix v = matmul(hm, transpose(blk.w_v));

    const bool rotary = scheme.kind == posenc::SchemeKind::rotary;
    const bool rotary_weighted = rotary && scheme.omega != 1.0;
    if (rotary_weighted) {
        // weighted rotation is not a pure rotation, so logits need absolute phases
        for (int i = 0; i < n; ++i)
            for (int head = 0; head < heads; ++head)
                posenc::rope_rotate_weighted_inplace(
                    &q.at(i, head * hd), hd, positions[static_cast<std::size_t>(i)].row,
                    positions[static_cast<std::size_t>(i)].col, *scheme.rotary, scheme.omega,
                    scheme.mode);
    }

    const bool relative = scheme.kind == posenc::SchemeKind::relative;
    Matrix attn(n, dim);
    std::vector<double> row(static_cast<std::size_t>(n));
    for (int head = 0; head < heads; ++head) {
        const int o = head * hd;
        for (int i = 0; i < n; ++i) {
            const GridPos pi = positions[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j) {
                const GridPos pj = positions[static_cast<std::size_t>(j)];
                double logit;
                if (rotary && !rotary_weighted) {
                    // relative-phase pair form: logits depend only on index differences,
                    // so uniform re-indexing leaves them bit-identical
                    logit = 0.0;
                    for (int b = 0; b < hd / 2; ++b) {
                        const double freq = scheme.rotary->frequencies[static_cast<std::size_t>(b)];
                        const double delta =
                            scheme.rotary->axis_of(b) == posenc::RotaryAxis::row
                                ? static_cast<double>(pj.row - pi.row)
                                : static_cast<double>(pj.col - pi.col);
                        logit += attnlab::rope_logit_pairterm(
                            q.at(i, o + 2 * b), q.at(i, o + 2 * b + 1), q.at(j, o + 2 * b),
                            q.at(j, o + 2 * b + 1), delta * freq);
                    }
                } else {
                    logit = 0.0;
                    for (int d = 0; d < hd; ++d) logit += q.at(i, o + d) * q.at(j, o + d);
                }
                logit *= scale;
                if (relative)
                    logit += model.bias_gain *
                             scheme.relative->lookup(head, pj.row - pi.row, pj.col - pi.col);
                row[static_cast<std::size_t>(j)] = logit;
            }

            double mx = row[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, row[static_cast<std::size_t>(j)]);
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx);
                sum += row[static_cast<std::size_t>(j)];
            }
            const double inv = 1.0 / sum;
            for (int d = 0; d < hd; ++d) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) acc += row[static_cast<std::size_t>(j)] * v.at(j, o + d);
                attn.at(i, o + d) = acc * inv;
            }
        }
    }

    const Matrix out = matmul(attn, transpose(blk.w_o));
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += model.residual_gain * out.a[i];
}

void mlp_sublayer(const Model& model, const Block& blk, TokenGrid& x) {
    const int n = x.shape.cells();
    const int dim = x.dim;
    const int hidden = dim * kMlpMult;
    const std::vector<double> h = layer_norm(x.v, n, dim, blk.ln2_g, blk.ln2_b);
    Matrix a1 = matmul(rows_matrix(h, n, dim), transpose(blk.mlp_w1));
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < hidden; ++d)
            a1.at(i, d) = gelu(a1.at(i, d) + blk.mlp_b1[static_cast<std::size_t>(d)]);
    const Matrix a2 = matmul(a1, transpose(blk.mlp_w2));
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < dim; ++d)
            x.v[static_cast<std::size_t>(i) * dim + d] +=
                model.residual_gain * (a2.at(i, d) + blk.mlp_b2[static_cast<std::size_t>(d)]);
}

}  // namespace

Intervention Intervention::zeroed() {
    Intervention iv;
    iv.kind = Kind::zeroed;
    return iv;
}

Intervention Intervention::scaled(double omega, posenc::WeightMode mode) {
    Intervention iv;
    iv.kind = Kind::scaled;
    iv.omega = omega;
    iv.mode = mode;
    return iv;
}

Intervention Intervention::shuffled(std::uint64_t seed) {
    Intervention iv;
    iv.kind = Kind::shuffled;
    iv.seed = seed;
    return iv;
}

Intervention Intervention::pairwise_shuffled(std::uint64_t seed) {
    Intervention iv;
    iv.kind = Kind::pairwise_shuffled;
    iv.seed = seed;
    return iv;
}

Intervention Intervention::reindexed(int drow, int dcol) {
    Intervention iv;
    iv.kind = Kind::reindexed;
    iv.drow = drow;
    iv.dcol = dcol;
    return iv;
}

std::string config_to_json(const ToyViTConfig& config) {
    nlohmann::ordered_json j;
    j["image_size"] = config.image_size;
    j["patch_size"] = config.patch_size;
    j["dim"] = config.dim;
    j["heads"] = config.heads;
    j["layers"] = config.layers;
    switch (config.scheme) {
        case posenc::SchemeKind::none: j["scheme"] = "none"; break;
        case posenc::SchemeKind::absolute: j["scheme"] = "absolute"; break;
        case posenc::SchemeKind::relative: j["scheme"] = "relative"; break;
        case posenc::SchemeKind::rotary: j["scheme"] = "rotary"; break;
    }
    j["absolute_kind"] = config.absolute_kind == posenc::AbsoluteKind::sinusoidal_2d
                             ? "sinusoidal-2d"
                             : "learned-random";
    j["seed"] = config.seed;
    return j.dump();
}

ToyViTConfig config_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ToyViTConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    const std::string scheme = j.value("scheme", "absolute");
    if (scheme == "none") c.scheme = posenc::SchemeKind::none;
    else if (scheme == "absolute") c.scheme = posenc::SchemeKind::absolute;
    else if (scheme == "relative") c.scheme = posenc::SchemeKind::relative;
    else if (scheme == "rotary") c.scheme = posenc::SchemeKind::rotary;
    else throw std::invalid_argument("toyvit config: unknown scheme '" + scheme + "'");
    const std::string kind = j.value("absolute_kind", "sinusoidal-2d");
    if (kind == "sinusoidal-2d") c.absolute_kind = posenc::AbsoluteKind::sinusoidal_2d;
    else if (kind == "learned-random") c.absolute_kind = posenc::AbsoluteKind::learned_random;
    else throw std::invalid_argument("toyvit config: unknown absolute kind '" + kind + "'");
    c.seed = j.value("seed", static_cast<std::uint64_t>(0));
    return c;
}

Model build_model(const ToyViTConfig& config) {
    check_config(config);
    Model m;
    m.config = config;
    const int g = config.image_size / config.patch_size;
    m.grid = GridShape{g, g};
    m.head_dim = config.dim / config.heads;
    m.residual_gain = kResidualGain;
    m.bias_gain = kBiasGain;

    const int patch_vec = config.patch_size * config.patch_size * kChannels;
    m.patch_proj = Matrix(config.dim, patch_vec);
    {
        Rng rng(derive_seed(config.seed, kPatchStream));
        fill_gaussian(rng, m.patch_proj.a, kPatchStd);
    }

    const GridShape extended{g + kReindexMargin, g + kReindexMargin};
    const std::uint64_t pe_seed = derive_seed(config.seed, kPeStream);
    switch (config.scheme) {
        case posenc::SchemeKind::none:
            m.scheme = posenc::scheme_none();
            break;
        case posenc::SchemeKind::absolute:
            if (config.absolute_kind == posenc::AbsoluteKind::sinusoidal_2d) {
                m.scheme = posenc::scheme_absolute(posenc::build_sinusoidal_2d(extended, config.dim));
                m.inject_gain = kSinusoidalGain;
            } else {
                m.scheme = posenc::scheme_absolute(
                    posenc::build_learned_random(extended, config.dim, pe_seed));
                m.inject_gain = kLearnedGain;
            }
            break;
        case posenc::SchemeKind::relative:
            m.scheme = posenc::scheme_relative(
                posenc::build_relative_bias(extended, config.heads, pe_seed));
            break;
        case posenc::SchemeKind::rotary:
            m.scheme = posenc::scheme_rotary(posenc::make_rotary_angles(m.head_dim));
            break;
    }

    const int hidden = config.dim * kMlpMult;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(config.dim));
    const double mlp2_std = 1.0 / std::sqrt(static_cast<double>(hidden));
    m.blocks.resize(static_cast<std::size_t>(config.layers));
    for (int l = 0; l < config.layers; ++l) {
        Block& b = m.blocks[static_cast<std::size_t>(l)];
        Rng rng(derive_seed(config.seed, kBlockStream + static_cast<std::uint64_t>(l)));
        b.w_q = Matrix(config.dim, config.dim);
        b.w_v = Matrix(config.dim, config.dim);
        b.w_o = Matrix(config.dim, config.dim);
        fill_gaussian(rng, b.w_q.a, proj_std);
        fill_gaussian(rng, b.w_v.a, proj_std);
        fill_gaussian(rng, b.w_o.a, proj_std);
        b.mlp_w1 = Matrix(hidden, config.dim);
        b.mlp_w2 = Matrix(config.dim, hidden);
        fill_gaussian(rng, b.mlp_w1.a, proj_std);
        fill_gaussian(rng, b.mlp_w2.a, mlp2_std);
        b.mlp_b1.resize(static_cast<std::size_t>(hidden));
        b.mlp_b2.resize(static_cast<std::size_t>(config.dim));
        fill_gaussian(rng, b.mlp_b1, kMlpBiasStd);
        fill_gaussian(rng, b.mlp_b2, kMlpBiasStd);
        b.ln1_g.resize(static_cast<std::size_t>(config.dim));
        b.ln1_b.resize(static_cast<std::size_t>(config.dim));
        b.ln2_g.resize(static_cast<std::size_t>(config.dim));
        b.ln2_b.resize(static_cast<std::size_t>(config.dim));
        for (double& x : b.ln1_g) x = 1.0 + rng.gaussian(0.0, kLnParamStd);
        fill_gaussian(rng, b.ln1_b, kLnParamStd);
        for (double& x : b.ln2_g) x = 1.0 + rng.gaussian(0.0, kLnParamStd);
        fill_gaussian(rng, b.ln2_b, kLnParamStd);
    }

    {
        Rng rng(derive_seed(config.seed, kFinalStream));
        m.final_g.resize(static_cast<std::size_t>(config.dim));
        m.final_b.resize(static_cast<std::size_t>(config.dim));
        for (double& x : m.final_g) x = 1.0 + rng.gaussian(0.0, kLnParamStd);
        fill_gaussian(rng, m.final_b, kLnParamStd);
    }
    return m;
}

std::vector<GridPos> identity_positions(GridShape grid) {
    std::vector<GridPos> pos(static_cast<std::size_t>(grid.cells()));
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c)
            pos[static_cast<std::size_t>(r) * grid.cols + c] = GridPos{r, c};
    return pos;
}

std::vector<GridPos> shuffled_positions(GridShape grid, std::uint64_t seed) {
    std::vector<GridPos> pos = identity_positions(grid);
    Rng rng(derive_seed(seed, kShuffleStream));
    for (std::size_t i = pos.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(pos[i], pos[j]);
    }
    return pos;
}

std::vector<TokenGrid> forward(const Model& model, const Image& image,
                               const Intervention& intervention) {
    switch (intervention.kind) {
        case Intervention::Kind::vanilla:
            return forward_with_positions(model, image, identity_positions(model.grid));
        case Intervention::Kind::zeroed:
            return forward_with_positions(model, image, identity_positions(model.grid),
                                          posenc::scheme_none());
        case Intervention::Kind::scaled: {
            posenc::PositionalScheme scaled =
                posenc::scale_positional(model.scheme, intervention.omega);
            scaled.mode = intervention.mode;
            return forward_with_positions(model, image, identity_positions(model.grid), scaled);
        }
        case Intervention::Kind::shuffled:
        case Intervention::Kind::pairwise_shuffled:
            return forward_with_positions(model, image,
                                          shuffled_positions(model.grid, intervention.seed));
        case Intervention::Kind::reindexed: {
            const bool bounded_table =
                (model.scheme.kind == posenc::SchemeKind::absolute &&
                 model.scheme.absolute->kind == posenc::AbsoluteKind::learned_random) ||
                model.scheme.kind == posenc::SchemeKind::relative;
            if (bounded_table &&
                (intervention.drow < 0 || intervention.drow > kReindexMargin ||
                 intervention.dcol < 0 || intervention.dcol > kReindexMargin))
                throw std::invalid_argument("toyvit: re-index offset outside the table margin");
            std::vector<GridPos> pos = identity_positions(model.grid);
            for (GridPos& p : pos) {
                p.row += intervention.drow;
                p.col += intervention.dcol;
            }
            return forward_with_positions(model, image, pos);
        }
    }
    throw std::invalid_argument("toyvit: unknown intervention");
}

std::vector<TokenGrid> forward_with_positions(const Model& model, const Image& image,
                                              const std::vector<GridPos>& positions) {
    return forward_with_positions(model, image, positions, model.scheme);
}

std::vector<TokenGrid> forward_with_positions(const Model& model, const Image& image,
                                              const std::vector<GridPos>& positions,
                                              const posenc::PositionalScheme& scheme) {
    if (image.height != model.config.image_size || image.width != model.config.image_size ||
        image.channels != kChannels)
        throw std::invalid_argument("toyvit: image does not match the configured size");
    if (static_cast<int>(positions.size()) != model.grid.cells())
        throw std::invalid_argument("toyvit: one position index per token required");

    std::vector<TokenGrid> layers;
    layers.reserve(static_cast<std::size_t>(model.config.layers) + 1);

    TokenGrid x = patch_embed(model, image);
    inject_absolute(x, positions, scheme, model.inject_gain);
    x.layer_index = 0;
    layers.push_back(x);

    for (int l = 0; l < model.config.layers; ++l) {
        const Block& blk = model.blocks[static_cast<std::size_t>(l)];
        attention_sublayer(model, blk, x, positions, scheme);
        mlp_sublayer(model, blk, x);
        x.layer_index = l + 1;
        layers.push_back(x);
    }
    return layers;
}

TokenGrid apply_final_norm(const Model& model, const TokenGrid& grid) {
    TokenGrid out = grid;
    out.v = layer_norm(grid.v, grid.shape.cells(), grid.dim, model.final_g, model.final_b);
    return out;
}

std::pair<Intervention, Intervention> reindex_for_overlap(GridPos view_a_origin,
                                                          GridPos view_b_origin) {
    return {Intervention::reindexed(view_a_origin.row, view_a_origin.col),
            Intervention::reindexed(view_b_origin.row, view_b_origin.col)};
}

}  // namespace pegeo::toyvit
