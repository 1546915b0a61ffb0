#include "pegeo/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "pegeo/parallel.hpp"
#include "pegeo/rng.hpp"

namespace pegeo::probes {

namespace {

constexpr std::uint64_t kSplitStream = 0x53504C54;
constexpr std::uint64_t kProbeInitStream = 0x50524F42;
constexpr int kProbeSteps = 500;
constexpr double kProbeLr = 0.1;
constexpr int kHiddenUnits = 64;

const double* tok_ptr(const TokenGrid& g, int r, int c) {
    return g.v.data() + (static_cast<std::size_t>(r) * g.shape.cols + c) * g.dim;
}

std::string format_double(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

// Last-layer readout under the configured convention.
TokenGrid readout_grid(const toyvit::Model& model, const std::vector<TokenGrid>& layers,
                       TokenReadout readout) {
    if (readout == TokenReadout::final_norm) return apply_final_norm(model, layers.back());
    return layers.back();
}

// Train/test split disjoint by image: a seeded permutation, last fifth held out.
std::pair<std::vector<int>, std::vector<int>> split_by_image(int n_images, std::uint64_t seed) {
    std::vector<int> order(static_cast<std::size_t>(n_images));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, kSplitStream));
    for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
    const int n_test = std::max(1, static_cast<int>(std::lround(0.2 * n_images)));
    if (n_test >= n_images)
        throw std::invalid_argument("probes: need at least two images to split by image");
    std::vector<int> train(order.begin(), order.end() - n_test);
    std::vector<int> test(order.end() - n_test, order.end());
    return {train, test};
}

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> inv_std;

    void fit(const Matrix& x) {
        const int dim = x.cols;
        mean.assign(static_cast<std::size_t>(dim), 0.0);
        inv_std.assign(static_cast<std::size_t>(dim), 1.0);
        for (int i = 0; i < x.rows; ++i)
            for (int d = 0; d < dim; ++d) mean[static_cast<std::size_t>(d)] += x.at(i, d);
        for (double& m : mean) m /= x.rows;
        std::vector<double> var(static_cast<std::size_t>(dim), 0.0);
        for (int i = 0; i < x.rows; ++i)
            for (int d = 0; d < dim; ++d) {
                const double c = x.at(i, d) - mean[static_cast<std::size_t>(d)];
                var[static_cast<std::size_t>(d)] += c * c;
            }
        for (int d = 0; d < dim; ++d) {
            const double v = var[static_cast<std::size_t>(d)] / x.rows;
            inv_std[static_cast<std::size_t>(d)] = v > 0.0 ? 1.0 / std::sqrt(v) : 1.0;
        }
    }
    void apply(Matrix& x) const {
        for (int i = 0; i < x.rows; ++i)
            for (int d = 0; d < x.cols; ++d)
                x.at(i, d) = (x.at(i, d) - mean[static_cast<std::size_t>(d)]) *
                             inv_std[static_cast<std::size_t>(d)];
    }
};

// Softmax head state for one label axis.
struct Head {
    Matrix w;  // classes x input
    std::vector<double> b;

    void init(int classes, int input, Rng& rng) {
        w = Matrix(classes, input);
        for (double& x : w.a) x = rng.gaussian(0.0, 0.01);
        b.assign(static_cast<std::size_t>(classes), 0.0);
    }
};

// probs = softmax(x W^T + b) per sample; returns also the gradient seed (p - y).
void head_forward(const Head& head, const Matrix& x, const std::vector<int>& labels,
                  Matrix& delta) {
    const int n = x.rows;
    const int classes = head.w.rows;
    delta = Matrix(n, classes);
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int k = 0; k < classes; ++k) {
            double z = head.b[static_cast<std::size_t>(k)];
            for (int d = 0; d < x.cols; ++d) z += x.at(i, d) * head.w.at(k, d);
            delta.at(i, k) = z;
            mx = std::max(mx, z);
        }
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) {
            delta.at(i, k) = std::exp(delta.at(i, k) - mx);
            sum += delta.at(i, k);
        }
        for (int k = 0; k < classes; ++k) delta.at(i, k) /= sum;
        delta.at(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    }
}

void head_step(Head& head, const Matrix& x, const Matrix& delta, double lr) {
    const int n = x.rows;
    const double scale = lr / n;
    for (int k = 0; k < head.w.rows; ++k) {
        double gb = 0.0;
        for (int i = 0; i < n; ++i) gb += delta.at(i, k);
        head.b[static_cast<std::size_t>(k)] -= scale * gb;
        for (int d = 0; d < x.cols; ++d) {
            double g = 0.0;
            for (int i = 0; i < n; ++i) g += delta.at(i, k) * x.at(i, d);
            head.w.at(k, d) -= scale * g;
        }
    }
}

int head_predict(const Head& head, const double* x, int input) {
    int best = 0;
    double best_z = -1e300;
    for (int k = 0; k < head.w.rows; ++k) {
        double z = head.b[static_cast<std::size_t>(k)];
        for (int d = 0; d < input; ++d) z += x[d] * head.w.at(k, d);
        if (z > best_z) {
            best_z = z;
            best = k;
        }
    }
    return best;
}

// In-place lower Cholesky of an SPD matrix, then solves A x = b for many b.
struct CholeskySolver {
    Matrix l;

    explicit CholeskySolver(Matrix a) : l(std::move(a)) {
        const int n = l.rows;
        for (int j = 0; j < n; ++j) {
            double d = l.at(j, j);
            for (int k = 0; k < j; ++k) d -= l.at(j, k) * l.at(j, k);
            if (d <= 0.0) throw std::invalid_argument("probes: normal equations not positive definite");
            const double root = std::sqrt(d);
            l.at(j, j) = root;
            for (int i = j + 1; i < n; ++i) {
                double s = l.at(i, j);
                for (int k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
                l.at(i, j) = s / root;
            }
        }
    }

    void solve(std::vector<double>& b) const {
        const int n = l.rows;
        for (int i = 0; i < n; ++i) {
            double s = b[static_cast<std::size_t>(i)];
            for (int k = 0; k < i; ++k) s -= l.at(i, k) * b[static_cast<std::size_t>(k)];
            b[static_cast<std::size_t>(i)] = s / l.at(i, i);
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = b[static_cast<std::size_t>(i)];
            for (int k = i + 1; k < n; ++k) s -= l.at(k, i) * b[static_cast<std::size_t>(k)];
            b[static_cast<std::size_t>(i)] = s / l.at(i, i);
        }
    }
};

}  // namespace

std::string report_to_json(const ProbeReport& report) {
    nlohmann::ordered_json j;
    j["schema"] = 1;
    j["probe"] = report.probe;
    j["config_digest"] = report.config_digest;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.meta) meta[k] = v;
    j["meta"] = meta;
    j["conditions"] = nlohmann::ordered_json::array();
    for (const ProbeCondition& c : report.conditions) {
        nlohmann::ordered_json jc;
        jc["name"] = c.name;
        nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
        for (const auto& [k, v] : c.config) cfg[k] = v;
        jc["config"] = cfg;
        nlohmann::ordered_json met = nlohmann::ordered_json::object();
        for (const auto& [k, v] : c.metrics) met[k] = v;
        jc["metrics"] = met;
        j["conditions"].push_back(jc);
    }
    j["timestamp"] = report.timestamp;
    return j.dump(2);
}

std::string report_to_csv(const ProbeReport& report) {
    std::ostringstream os;
    os.precision(17);
    os << "probe,condition,metric,value\n";
    for (const ProbeCondition& c : report.conditions)
        for (const auto& [k, v] : c.metrics)
            os << report.probe << ',' << c.name << ',' << k << ',' << v << '\n';
    return os.str();
}

std::string config_digest(const toyvit::ToyViTConfig& config) {
    const std::string text = toyvit::config_to_json(config);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string intervention_name(const toyvit::Intervention& iv) {
    using K = toyvit::Intervention::Kind;
    std::ostringstream os;
    switch (iv.kind) {
        case K::vanilla: return "vanilla";
        case K::zeroed: return "zeroed";
        case K::scaled:
            os << "scaled(" << iv.omega << ','
               << (iv.mode == posenc::WeightMode::interpolated ? "interpolated" : "phase-scaled")
               << ')';
            return os.str();
        case K::shuffled:
            os << "shuffled(" << iv.seed << ')';
            return os.str();
        case K::pairwise_shuffled:
            os << "pairwise-shuffled(" << iv.seed << ')';
            return os.str();
        case K::reindexed:
            os << "reindexed(" << iv.drow << ',' << iv.dcol << ')';
            return os.str();
    }
    return "unknown";
}

std::string now_iso8601() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::pair<toyvit::Intervention, toyvit::Intervention> per_view(const toyvit::Intervention& iv) {
    using K = toyvit::Intervention::Kind;
    if (iv.kind == K::shuffled)
        return {toyvit::Intervention::shuffled(derive_seed(iv.seed, 0)),
                toyvit::Intervention::shuffled(derive_seed(iv.seed, 1))};
    return {iv, iv};
}

OverlapSimilarity overlap_similarity(const TokenGrid& grid_a, const TokenGrid& grid_b,
                                     const Rect& overlap_a, const Rect& overlap_b) {
    if (!overlap_a.congruent(overlap_b))
        throw std::invalid_argument("probes: overlap rectangles differ in size");
    if (grid_a.dim != grid_b.dim)
        throw std::invalid_argument("probes: token dims differ between views");
    if (overlap_a.row0 < 0 || overlap_a.col0 < 0 ||
        overlap_a.row0 + overlap_a.rows > grid_a.shape.rows ||
        overlap_a.col0 + overlap_a.cols > grid_a.shape.cols || overlap_b.row0 < 0 ||
        overlap_b.col0 < 0 || overlap_b.row0 + overlap_b.rows > grid_b.shape.rows ||
        overlap_b.col0 + overlap_b.cols > grid_b.shape.cols)
        throw std::invalid_argument("probes: overlap rectangle leaves the grid");

    OverlapSimilarity out;
    out.per_token = Matrix(overlap_a.rows, overlap_a.cols);
    double sum = 0.0;
    for (int r = 0; r < overlap_a.rows; ++r)
        for (int c = 0; c < overlap_a.cols; ++c) {
            const double cs = cosine(tok_ptr(grid_a, overlap_a.row0 + r, overlap_a.col0 + c),
                                     tok_ptr(grid_b, overlap_b.row0 + r, overlap_b.col0 + c),
                                     grid_a.dim);
            out.per_token.at(r, c) = cs;
            sum += cs;
        }
    out.mean = sum / (static_cast<double>(overlap_a.rows) * overlap_a.cols);
    return out;
}

ProbeReport offset_sweep(const toyvit::Model& model, const std::vector<Image>& images,
                         const std::vector<int>& offsets, const std::vector<double>& omegas,
                         TokenReadout readout) {
    const int rows = model.grid.rows;
    const int cols = model.grid.cols;
    for (int k : offsets)
        if (k < 0 || k >= std::min(rows, cols))
            throw std::invalid_argument("probes: offset must be below the grid extent");
    if (images.empty()) throw std::invalid_argument("probes: sweep needs at least one image");

    const std::size_t cells = offsets.size() * omegas.size();
    std::vector<std::vector<double>> image_means(images.size(),
                                                 std::vector<double>(cells, 0.0));
    parallel_for(images.size(), [&](std::size_t img) {
        for (std::size_t w = 0; w < omegas.size(); ++w) {
            const auto layers =
                forward(model, images[img],
                        toyvit::Intervention::scaled(omegas[w], posenc::WeightMode::interpolated));
            const TokenGrid grid = readout_grid(model, layers, readout);
            for (std::size_t ki = 0; ki < offsets.size(); ++ki) {
                const int k = offsets[ki];
                double sum = 0.0;
                int count = 0;
                for (int r = 0; r + k < rows; ++r)
                    for (int c = 0; c + k < cols; ++c) {
                        sum += cosine(tok_ptr(grid, r, c), tok_ptr(grid, r + k, c + k), grid.dim);
                        ++count;
                    }
                image_means[img][ki * omegas.size() + w] = sum / count;
            }
        }
    });

    ProbeReport report;
    report.probe = "offset-sweep";
    report.config_digest = config_digest(model.config);
    report.meta = {{"images", std::to_string(images.size())},
                   {"weight_mode", "interpolated"},
                   {"readout", readout == TokenReadout::final_norm ? "final-norm" : "raw"}};
    for (std::size_t ki = 0; ki < offsets.size(); ++ki)
        for (std::size_t w = 0; w < omegas.size(); ++w) {
            double mean = 0.0;
            for (std::size_t img = 0; img < images.size(); ++img)
                mean += image_means[img][ki * omegas.size() + w];
            mean /= static_cast<double>(images.size());
            ProbeCondition cond;
            std::ostringstream name;
            name << "k=" << offsets[ki] << ",omega=" << omegas[w];
            cond.name = name.str();
            cond.config = {{"offset", std::to_string(offsets[ki])},
                           {"omega", format_double(omegas[w])}};
            cond.metrics = {{"mean_cosine", mean}};
            report.conditions.push_back(std::move(cond));
        }
    report.timestamp = now_iso8601();
    return report;
}

StereoMetrics stereo_metrics(const corrvol::DisparityField& predicted, const Matrix& gt,
                             const Matrix& mask, const corrvol::EpipolarSlice& slice,
                             const std::vector<int>& recall_ns) {
    if (predicted.shape.rows != gt.rows || predicted.shape.cols != gt.cols ||
        mask.rows != gt.rows || mask.cols != gt.cols || slice.shape != predicted.shape)
        throw std::invalid_argument("probes: stereo metric shapes differ");

    StereoMetrics m;
    int count = 0;
    double err_sum = 0.0;
    int d1_count = 0;
    std::vector<int> gt_rank;  // rank of the snapped gt candidate per masked query
    std::vector<int> order(static_cast<std::size_t>(slice.cols_r));
    for (int r = 0; r < gt.rows; ++r)
        for (int c = 0; c < gt.cols; ++c) {
            if (mask.at(r, c) == 0.0) continue;
            const double g = gt.at(r, c);
            if (!std::isfinite(g))
                throw std::invalid_argument("probes: ground truth not finite on the mask");
            ++count;
            const double err = std::abs(predicted.values.at(r, c) - g);
            err_sum += err;
            if (err > 3.0 && err > 0.05 * std::abs(g)) ++d1_count;

            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
                return slice.at(r, c, lhs) > slice.at(r, c, rhs);
            });
            const long snapped = std::lround(g) + c;
            int rank = slice.cols_r;  // never recalled when gt leaves the candidate range
            if (snapped >= 0 && snapped < slice.cols_r)
                for (int i = 0; i < slice.cols_r; ++i)
                    if (order[static_cast<std::size_t>(i)] == snapped) {
                        rank = i;
                        break;
                    }
            gt_rank.push_back(rank);
        }
    if (count == 0) throw std::invalid_argument("probes: empty evaluation mask");

    m.epe = err_sum / count;
    m.d1 = static_cast<double>(d1_count) / count;
    for (int n : recall_ns) {
        int hits = 0;
        for (int rank : gt_rank)
            if (rank < n) ++hits;
        m.recall.emplace_back(n, static_cast<double>(hits) / count);
    }
    return m;
}

TokenGrid upsample_bilinear(const TokenGrid& grid, int factor) {
    if (factor < 1) throw std::invalid_argument("probes: upsample factor must be positive");
    TokenGrid out(GridShape{grid.shape.rows * factor, grid.shape.cols * factor}, grid.dim);
    out.layer_index = grid.layer_index;
    for (int R = 0; R < out.shape.rows; ++R)
        for (int C = 0; C < out.shape.cols; ++C) {
            const double tr =
                std::clamp((R + 0.5) / factor - 0.5, 0.0, static_cast<double>(grid.shape.rows - 1));
            const double tc =
                std::clamp((C + 0.5) / factor - 0.5, 0.0, static_cast<double>(grid.shape.cols - 1));
            const int r0 = static_cast<int>(tr);
            const int c0 = static_cast<int>(tc);
            const int r1 = std::min(r0 + 1, grid.shape.rows - 1);
            const int c1 = std::min(c0 + 1, grid.shape.cols - 1);
            const double fr = tr - r0;
            const double fc = tc - c0;
            double* dst = out.v.data() + (static_cast<std::size_t>(R) * out.shape.cols + C) * grid.dim;
            const double* a = tok_ptr(grid, r0, c0);
            const double* b = tok_ptr(grid, r0, c1);
            const double* cc = tok_ptr(grid, r1, c0);
            const double* d = tok_ptr(grid, r1, c1);
            for (int k = 0; k < grid.dim; ++k)
                dst[k] = (1.0 - fr) * ((1.0 - fc) * a[k] + fc * b[k]) +
                         fr * ((1.0 - fc) * cc[k] + fc * d[k]);
        }
    return out;
}

ProbeReport stereo_probe(const toyvit::Model& model, const synth::StereoPair& pair,
                         const std::vector<toyvit::Intervention>& interventions, double tau,
                         Upsample upsample, const std::vector<int>& recall_ns,
                         TokenReadout readout) {
    ProbeReport report;
    report.probe = "stereo";
    report.config_digest = config_digest(model.config);
    report.meta = {{"query_view", "right"},
                   {"tau", format_double(tau)},
                   {"upsample", upsample == Upsample::bilinear ? "bilinear" : "none"},
                   {"d1_convention", "|err|>3 tokens and >5% of |gt|"},
                   {"readout", readout == TokenReadout::final_norm ? "final-norm" : "raw"}};

    for (const toyvit::Intervention& iv : interventions) {
        const auto [iv_left, iv_right] = per_view(iv);
        TokenGrid left = readout_grid(model, forward(model, pair.left, iv_left), readout);
        TokenGrid right = readout_grid(model, forward(model, pair.right, iv_right), readout);

        Matrix gt = pair.token_gt;
        Matrix mask = pair.token_valid;
        double unit_per_token = 1.0;
        if (upsample == Upsample::bilinear) {
            left = upsample_bilinear(left, pair.patch_px);
            right = upsample_bilinear(right, pair.patch_px);
            gt = pair.gt_disparity;  // candidate units are pixels
            mask = pair.valid;
            unit_per_token = static_cast<double>(pair.patch_px);
        }

        int degenerate_left = 0;
        int degenerate_right = 0;
        const TokenGrid nl = corrvol::normalize_tokens(left, &degenerate_left);
        const TokenGrid nr = corrvol::normalize_tokens(right, &degenerate_right);
        // right tokens query left candidates so ground-truth displacement is positive
        const corrvol::CorrelationVolume vol = corrvol::build_volume(nr, nl);
        const corrvol::EpipolarSlice slice = corrvol::epipolar_slice(vol);
        const corrvol::DisparityField disp = corrvol::soft_argmin_disparity(slice, tau);

        // D1 thresholds are defined in tokens; rescale the error test, not the data
        StereoMetrics metrics;
        {
            StereoMetrics raw = stereo_metrics(disp, gt, mask, slice, recall_ns);
            metrics = raw;
            if (unit_per_token != 1.0) {
                metrics.epe = raw.epe / unit_per_token;
                int count = 0;
                int d1 = 0;
                for (int r = 0; r < gt.rows; ++r)
                    for (int c = 0; c < gt.cols; ++c) {
                        if (mask.at(r, c) == 0.0) continue;
                        ++count;
                        const double err =
                            std::abs(disp.values.at(r, c) - gt.at(r, c)) / unit_per_token;
                        if (err > 3.0 && err > 0.05 * std::abs(gt.at(r, c)) / unit_per_token) ++d1;
                    }
                metrics.d1 = static_cast<double>(d1) / count;
            }
        }

        ProbeCondition cond;
        cond.name = intervention_name(iv);
        cond.config = {{"intervention", intervention_name(iv)},
                       {"tau", format_double(tau)},
                       {"upsample", upsample == Upsample::bilinear ? "bilinear" : "none"}};
        cond.metrics = {{"epe_tokens", metrics.epe},
                        {"d1", metrics.d1},
                        {"degenerate_tokens",
                         static_cast<double>(degenerate_left + degenerate_right)}};
        for (const auto& [n, v] : metrics.recall)
            cond.metrics.emplace_back("recall@" + std::to_string(n), v);
        report.conditions.push_back(std::move(cond));
    }
    report.timestamp = now_iso8601();
    return report;
}

DecodabilityResult position_decodability(const std::vector<TokenGrid>& grids, ProbeKind kind,
                                         std::uint64_t seed) {
    if (grids.empty()) throw std::invalid_argument("probes: no grids given");
    const GridShape shape = grids[0].shape;
    const int dim = grids[0].dim;
    if (shape.rows < 2 || shape.cols < 2)
        throw std::invalid_argument("probes: need at least two labels per axis");
    for (const TokenGrid& g : grids)
        if (g.shape != shape || g.dim != dim)
            throw std::invalid_argument("probes: grids differ in shape");

    const auto [train_imgs, test_imgs] = split_by_image(static_cast<int>(grids.size()), seed);
    const int per_image = shape.cells();
    auto gather = [&](const std::vector<int>& imgs, Matrix& x, std::vector<int>& row_label,
                      std::vector<int>& col_label) {
        x = Matrix(static_cast<int>(imgs.size()) * per_image, dim);
        row_label.clear();
        col_label.clear();
        int i = 0;
        for (int img : imgs)
            for (int r = 0; r < shape.rows; ++r)
                for (int c = 0; c < shape.cols; ++c, ++i) {
                    const double* t = tok_ptr(grids[static_cast<std::size_t>(img)], r, c);
                    for (int d = 0; d < dim; ++d) x.at(i, d) = t[d];
                    row_label.push_back(r);
                    col_label.push_back(c);
                }
    };
    Matrix x_train;
    Matrix x_test;
    std::vector<int> row_train, col_train, row_test, col_test;
    gather(train_imgs, x_train, row_train, col_train);
    gather(test_imgs, x_test, row_test, col_test);

    Standardizer std_fit;
    std_fit.fit(x_train);
    std_fit.apply(x_train);
    std_fit.apply(x_test);

    Rng rng(derive_seed(seed, kProbeInitStream));
    const bool hidden = kind == ProbeKind::one_hidden;
    Matrix w1;
    std::vector<double> b1;
    if (hidden) {
        w1 = Matrix(kHiddenUnits, dim);
        for (double& v : w1.a) v = rng.gaussian(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
        b1.assign(kHiddenUnits, 0.0);
    }
    const int feat_dim = hidden ? kHiddenUnits : dim;
    Head row_head;
    Head col_head;
    row_head.init(shape.rows, feat_dim, rng);
    col_head.init(shape.cols, feat_dim, rng);

    auto hidden_forward = [&](const Matrix& x, Matrix& h) {
        h = Matrix(x.rows, kHiddenUnits);
        for (int i = 0; i < x.rows; ++i)
            for (int u = 0; u < kHiddenUnits; ++u) {
                double z = b1[static_cast<std::size_t>(u)];
                for (int d = 0; d < dim; ++d) z += x.at(i, d) * w1.at(u, d);
                h.at(i, u) = std::tanh(z);
            }
    };

    Matrix feats_train;
    if (!hidden) feats_train = x_train;
    Matrix delta_row, delta_col;
    for (int step = 0; step < kProbeSteps; ++step) {
        if (hidden) hidden_forward(x_train, feats_train);
        head_forward(row_head, feats_train, row_train, delta_row);
        head_forward(col_head, feats_train, col_train, delta_col);
        if (hidden) {
            // backprop through tanh into the shared layer before the heads move
            const int n = x_train.rows;
            Matrix dh(n, kHiddenUnits);
            for (int i = 0; i < n; ++i)
                for (int u = 0; u < kHiddenUnits; ++u) {
                    double g = 0.0;
                    for (int k = 0; k < shape.rows; ++k) g += delta_row.at(i, k) * row_head.w.at(k, u);
                    for (int k = 0; k < shape.cols; ++k) g += delta_col.at(i, k) * col_head.w.at(k, u);
                    const double t = feats_train.at(i, u);
                    dh.at(i, u) = g * (1.0 - t * t);
                }
            const double scale = kProbeLr / n;
            for (int u = 0; u < kHiddenUnits; ++u) {
                double gb = 0.0;
                for (int i = 0; i < n; ++i) gb += dh.at(i, u);
                b1[static_cast<std::size_t>(u)] -= scale * gb;
                for (int d = 0; d < dim; ++d) {
                    double g = 0.0;
                    for (int i = 0; i < n; ++i) g += dh.at(i, u) * x_train.at(i, d);
                    w1.at(u, d) -= scale * g;
                }
            }
        }
        head_step(row_head, feats_train, delta_row, kProbeLr);
        head_step(col_head, feats_train, delta_col, kProbeLr);
    }

    Matrix feats_test;
    if (hidden) hidden_forward(x_test, feats_test);
    const Matrix& ft = hidden ? feats_test : x_test;
    DecodabilityResult res;
    res.train_tokens = x_train.rows;
    res.test_tokens = x_test.rows;
    int row_ok = 0, col_ok = 0, joint_ok = 0;
    for (int i = 0; i < ft.rows; ++i) {
        const double* f = ft.a.data() + static_cast<std::size_t>(i) * ft.cols;
        const int pr = head_predict(row_head, f, ft.cols);
        const int pc = head_predict(col_head, f, ft.cols);
        const bool r_ok = pr == row_test[static_cast<std::size_t>(i)];
        const bool c_ok = pc == col_test[static_cast<std::size_t>(i)];
        row_ok += r_ok;
        col_ok += c_ok;
        joint_ok += r_ok && c_ok;
    }
    res.row_accuracy = static_cast<double>(row_ok) / ft.rows;
    res.col_accuracy = static_cast<double>(col_ok) / ft.rows;
    res.joint_accuracy = static_cast<double>(joint_ok) / ft.rows;
    return res;
}

OffsetReconstruction offset_reconstruction(const std::vector<TokenGrid>& grids, int offset,
                                           double lambda, std::uint64_t seed) {
    if (!(lambda > 0.0)) throw std::invalid_argument("probes: ridge lambda must be positive");
    if (grids.empty()) throw std::invalid_argument("probes: no grids given");
    const GridShape shape = grids[0].shape;
    const int dim = grids[0].dim;
    if (offset < 0 || offset >= std::min(shape.rows, shape.cols))
        throw std::invalid_argument("probes: offset must be below the grid extent");
    for (const TokenGrid& g : grids)
        if (g.shape != shape || g.dim != dim)
            throw std::invalid_argument("probes: grids differ in shape");

    const auto [train_imgs, test_imgs] = split_by_image(static_cast<int>(grids.size()), seed);
    auto gather = [&](const std::vector<int>& imgs, std::vector<const double*>& xs,
                      std::vector<const double*>& ys) {
        for (int img : imgs)
            for (int r = 0; r + offset < shape.rows; ++r)
                for (int c = 0; c + offset < shape.cols; ++c) {
                    xs.push_back(tok_ptr(grids[static_cast<std::size_t>(img)], r, c));
                    ys.push_back(
                        tok_ptr(grids[static_cast<std::size_t>(img)], r + offset, c + offset));
                }
    };
    std::vector<const double*> x_train, y_train, x_test, y_test;
    gather(train_imgs, x_train, y_train);
    gather(test_imgs, x_test, y_test);

    std::vector<double> mu_x(static_cast<std::size_t>(dim), 0.0);
    std::vector<double> mu_y(static_cast<std::size_t>(dim), 0.0);
    for (std::size_t i = 0; i < x_train.size(); ++i)
        for (int d = 0; d < dim; ++d) {
            mu_x[static_cast<std::size_t>(d)] += x_train[i][d];
            mu_y[static_cast<std::size_t>(d)] += y_train[i][d];
        }
    for (int d = 0; d < dim; ++d) {
        mu_x[static_cast<std::size_t>(d)] /= static_cast<double>(x_train.size());
        mu_y[static_cast<std::size_t>(d)] /= static_cast<double>(x_train.size());
    }

    Matrix a(dim, dim);
    Matrix xty(dim, dim);
    for (std::size_t i = 0; i < x_train.size(); ++i)
        for (int p = 0; p < dim; ++p) {
            const double xp = x_train[i][p] - mu_x[static_cast<std::size_t>(p)];
            for (int q = 0; q < dim; ++q) {
                a.at(p, q) += xp * (x_train[i][q] - mu_x[static_cast<std::size_t>(q)]);
                xty.at(p, q) += xp * (y_train[i][q] - mu_y[static_cast<std::size_t>(q)]);
            }
        }
    for (int p = 0; p < dim; ++p) a.at(p, p) += lambda;

    const CholeskySolver solver(std::move(a));
    Matrix w(dim, dim);  // w(p, q): weight from centered x_p to centered y_q
    std::vector<double> col(static_cast<std::size_t>(dim));
    for (int q = 0; q < dim; ++q) {
        for (int p = 0; p < dim; ++p) col[static_cast<std::size_t>(p)] = xty.at(p, q);
        solver.solve(col);
        for (int p = 0; p < dim; ++p) w.at(p, q) = col[static_cast<std::size_t>(p)];
    }

    OffsetReconstruction out;
    std::vector<double> pred(static_cast<std::size_t>(dim));
    double rec_sum = 0.0;
    double base_sum = 0.0;
    for (std::size_t i = 0; i < x_test.size(); ++i) {
        for (int q = 0; q < dim; ++q) {
            double s = mu_y[static_cast<std::size_t>(q)];
            for (int p = 0; p < dim; ++p)
                s += (x_test[i][p] - mu_x[static_cast<std::size_t>(p)]) * w.at(p, q);
            pred[static_cast<std::size_t>(q)] = s;
        }
        rec_sum += cosine(pred.data(), y_test[i], dim);
        base_sum += cosine(x_test[i], y_test[i], dim);
    }
    out.reconstruction_cosine = rec_sum / static_cast<double>(x_test.size());
    out.baseline_cosine = base_sum / static_cast<double>(x_test.size());
    return out;
}

std::vector<double> layerwise_similarity(const toyvit::Model& model,
                                         const synth::OverlapPair& pair,
                                         const toyvit::Intervention& iv_a,
                                         const toyvit::Intervention& iv_b,
                                         TokenReadout readout) {
    const auto layers_a = forward(model, pair.crop_a, iv_a);
    const auto layers_b = forward(model, pair.crop_b, iv_b);
    std::vector<double> curve;
    curve.reserve(layers_a.size());
    for (std::size_t l = 0; l < layers_a.size(); ++l) {
        const bool last = l + 1 == layers_a.size();
        const TokenGrid& ga = last && readout == TokenReadout::final_norm
                                  ? apply_final_norm(model, layers_a[l])
                                  : layers_a[l];
        const TokenGrid& gb = last && readout == TokenReadout::final_norm
                                  ? apply_final_norm(model, layers_b[l])
                                  : layers_b[l];
        curve.push_back(overlap_similarity(ga, gb, pair.overlap_a, pair.overlap_b).mean);
    }
    return curve;
}

std::vector<double> layerwise_similarity(const toyvit::Model& model,
                                         const synth::OverlapPair& pair,
                                         const toyvit::Intervention& iv, TokenReadout readout) {
    const auto [iv_a, iv_b] = per_view(iv);
    return layerwise_similarity(model, pair, iv_a, iv_b, readout);
}

}  // namespace pegeo::probes
