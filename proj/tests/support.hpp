#pragma once

// Shared fixtures for the test suites: tiny models, a finite-difference
// driver and a scratch directory helper.

#include "defield/fields.hpp"
#include "defield/losses.hpp"
#include "defield/renderer.hpp"
#include "defield/synthscene.hpp"
#include "defield/trainer.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

using namespace defield;

inline SceneFrame unit_frame(int num_frames = 5) {
    SceneFrame f;
    f.box = Box{Vec3<double>(-1, -1, -1), Vec3<double>(1, 1, 1)};
    f.num_frames = num_frames;
    return f;
}

/// 8x8 planes, 4 features, 16-wide MLPs.
inline ModelConfig mini_config() {
    ModelConfig c;
    c.motion_spatial_res = {8};
    c.motion_time_res = {8};
    c.motion_features = 4;
    c.canonical_res = {8};
    c.canonical_features = 4;
    c.motion_hidden = {16};
    c.color_hidden = {16};
    c.dir_frequencies = 2;
    c.time_frequencies = 2;
    c.init_seed = 7;
    return c;
}

// Model whose canonical density and color are the same everywhere.
inline Model<double> homogeneous_model(double sigma, const Vec3<double>& color) {
    ModelConfig cfg = mini_config();
    auto m = make_model<double>(cfg, unit_frame(5));
    const double latent0 = std::log(std::expm1(sigma));  // inverse softplus
    const double per_plane = std::cbrt(latent0);
    for (auto& p : m.canonical.grid.levels()[0].planes)
        for (int ia = 0; ia < p.res_a; ++ia)
            for (int ib = 0; ib < p.res_b; ++ib) p.at(ia, ib, 0) = per_plane;
    auto& out = m.canonical.color_mlp.layers().back();
    out.weight.setZero();
    for (int k = 0; k < 3; ++k) out.bias[k] = std::log(color[k] / (1 - color[k]));
    return m;
}

/// Every parameter drawn at random so that no gradient vanishes by construction.
template <typename S>
void randomize(Model<S>& m, std::uint64_t seed, double grid_lo = 0.3, double grid_hi = 1.2, double mlp = 0.6) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> g(grid_lo, grid_hi), w(-mlp, mlp);
    m.for_each_param([&](const std::string& name, auto span, const auto&) {
        const bool grid = name[0] == 'G';
        for (auto& v : span) v = static_cast<S>(grid ? g(rng) : w(rng));
    });
}

/// Flattened copy of every parameter in for_each_param order.
template <typename S>
std::vector<S> flatten(const Model<S>& m) {
    std::vector<S> out;
    m.for_each_param([&](const std::string&, auto span, const auto&) { out.insert(out.end(), span.begin(), span.end()); });
    return out;
}

struct ParamRef {
    std::string name;
    std::size_t index;
};

template <typename S>
std::vector<ParamRef> param_refs(const Model<S>& m) {
    std::vector<ParamRef> out;
    m.for_each_param([&](const std::string& name, auto span, const auto&) {
        for (std::size_t i = 0; i < span.size(); ++i) out.push_back({name, i});
    });
    return out;
}

/// Pointer to the k-th scalar parameter in for_each_param order.
template <typename S>
S* param_ptr(Model<S>& m, std::size_t k) {
    S* out = nullptr;
    std::size_t base = 0;
    m.for_each_param([&](const std::string&, auto span, const auto&) {
        if (!out && k < base + span.size()) out = &span[k - base];
        base += span.size();
    });
    return out;
}

struct FdMismatch {
    std::size_t index;
    double analytic;
    double numeric;
};

/// Central differences of `loss` with respect to every parameter of `m`,
/// compared against `analytic` (flattened). Returns the mismatches beyond
/// relative `rel` with absolute floor `abs_floor`.
inline std::vector<FdMismatch> finite_difference_check(Model<double>& m, const std::function<double()>& loss,
                                                       const std::vector<double>& analytic, double step, double rel,
                                                       double abs_floor, double* max_rel = nullptr) {
    std::vector<FdMismatch> bad;
    if (max_rel) *max_rel = 0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        double* p = param_ptr(m, k);
        const double keep = *p;
        *p = keep + step;
        const double up = loss();
        *p = keep - step;
        const double down = loss();
        *p = keep;
        const double fd = (up - down) / (2 * step);
        const double err = std::abs(fd - analytic[k]);
        const double scale = std::max(std::abs(fd), std::abs(analytic[k]));
        if (max_rel && scale > abs_floor) *max_rel = std::max(*max_rel, err / scale);
        if (err > std::max(rel * scale, abs_floor)) bad.push_back({k, analytic[k], fd});
    }
    return bad;
}

/// Distance of every grid coordinate from a cell boundary and of every ReLU
/// pre-activation from zero, over the samples of `f`. Finite-difference checks
/// require this to exceed the perturbation's effect.
template <typename S>
double kink_margin(const Model<S>& m, const BatchForward<S>& f) {
    double margin = 1e9;
    auto grid_margin = [&](const PlaneGridSet<S>& grid, const MatrixX<S>& pts) {
        for (const auto& level : grid.levels())
            for (const auto& p : level.planes)
                for (Eigen::Index r = 0; r < pts.rows(); ++r)
                    for (auto [axis, res] : {std::pair{p.axis_a, p.res_a}, std::pair{p.axis_b, p.res_b}}) {
                        const double x = static_cast<double>(pts(r, axis)) * (res - 1);
                        margin = std::min(margin, std::abs(x - std::round(x)));
                    }
    };
    grid_margin(m.motion.grid, f.motion.points);
    grid_margin(m.canonical.grid, f.field.points);
    auto relu_margin = [&](const TinyMLP<S>& mlp, const MLPCache<S>& c) {
        for (std::size_t k = 0; k + 1 < mlp.layers().size(); ++k) {
            const auto& l = mlp.layers()[k];
            MatrixX<S> pre = c.inputs[k] * l.weight.transpose();
            pre.rowwise() += l.bias.transpose();
            margin = std::min(margin, static_cast<double>(pre.cwiseAbs().minCoeff()));
        }
    };
    relu_margin(m.motion.mlp, f.motion.cache);
    relu_margin(m.canonical.color_mlp, f.field.cache);
    return margin;
}

/// Two rays through a randomized miniature model with all four loss terms:
/// photometric and depth on both rays, sparse and dense flow on the pair.
struct MiniProblem {
    Model<double> model;
    std::vector<Ray> rays;
    std::vector<Vec3<float>> colors;
    std::vector<float> depths;
    LossWeights weights{1.0, 0.5, 0.8};
    RenderOptions opt{8, SampleMode::uniform, 0, 0};

    explicit MiniProblem(std::uint64_t seed = 11) {
        model = make_model<double>(mini_config(), unit_frame(5));
        randomize(model, seed);
        // Keep p' = p + flow well inside the unit box.
        auto& out = model.motion.mlp.layers().back();
        out.weight *= 0.05;
        out.bias *= 0.05;
        Ray a;
        a.origin = Vec3<double>(-0.9, -0.3, 0.2);
        a.direction = Vec3<double>(1, 0.2, -0.1).normalized();
        a.near = 0.1;
        a.far = 1.6;
        a.t = 2;
        Ray b;
        b.origin = Vec3<double>(0.2, -0.9, -0.4);
        b.direction = Vec3<double>(-0.1, 1, 0.3).normalized();
        b.near = 0.15;
        b.far = 1.55;
        b.t = 4;
        b.camera = 2;
        rays = {a, b};
        colors = {Vec3<float>(0.9f, 0.2f, 0.4f), Vec3<float>(0.1f, 0.7f, 0.3f)};
        depths = {0.8f, 1.1f};
    }

    template <typename Up>
    double evaluate(const BatchForward<double>& f, Up& up) const {
        const double lp = accumulate_loss<double>(LossTerm::photometric, f, colors, depths, 0.5, up);
        const double ls = accumulate_loss<double>(LossTerm::sparse_flow, f, colors, depths, weights.sparse_flow, up);
        const double ld = accumulate_loss<double>(LossTerm::dense_flow, f, colors, depths, weights.dense_flow, up);
        const double lz = accumulate_loss<double>(LossTerm::sparse_depth, f, colors, depths, 0.5 * weights.sparse_depth, up);
        return total_loss(lp / 2, ls, ld, weights, lz / 2).total;
    }

    double loss() const {
        BatchForward<double> f;
        render_forward(model, std::span<const Ray>(rays), opt, f);
        std::vector<RayUpstream<double>> up(rays.size());
        return evaluate(f, up);
    }

    std::vector<double> gradient(double* margin = nullptr) const {
        BatchForward<double> f;
        render_forward(model, std::span<const Ray>(rays), opt, f);
        std::vector<RayUpstream<double>> up(rays.size());
        evaluate(f, up);
        ModelGrads<double> g(model);
        render_backward(model, f, std::span<const RayUpstream<double>>(up), g);
        if (margin) *margin = kink_margin(model, f);
        return flatten(g.g);
    }
};

/// 2 cameras, 12 frames of 16x16 from the orbit scene, with clean priors at offset 3.
inline void write_tiny_dataset(const std::filesystem::path& root, int frames = 12) {
    DatasetOptions opt;
    opt.num_cameras = 2;
    opt.num_frames = frames;
    opt.width = 16;
    opt.height = 16;
    opt.render_samples = 128;
    opt.priors.offset = 3;
    opt.priors.sparse_per_pair = 6;
    opt.priors.dense_stride = 2;
    opt.priors.oracle_samples = 128;
    write_dataset(root, blob_orbit_scene(frames), arc_rig(2, 16, 16), opt);
}

inline TrainConfig tiny_train_config(std::uint64_t iterations) {
    TrainConfig c;
    c.iterations = iterations;
    c.batch_rays = 64;
    c.n_samples = 12;
    c.chunk_rays = 32;
    c.warmup_steps = 5;
    c.prior_offset = 3;
    c.log_every = 0;
    c.threads = 1;
    c.model = mini_config();
    return c;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("defield_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace testing_support
