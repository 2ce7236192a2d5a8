#pragma once

#include "defield/checkpoint.hpp"
#include "defield/fields.hpp"
#include "defield/image.hpp"
#include "defield/losses.hpp"
#include "defield/optim.hpp"
#include "defield/priors.hpp"
#include "defield/renderer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace defield {

struct TrainConfig {
    std::uint64_t iterations = 30000;
    int batch_rays = 1024;            // photometric rays per step
    int prior_rays_per_batch = -1;    // rays spent on prior pairs; -1: 25% of batch_rays
    double lambda_sf = 1.0;
    double lambda_df = 1.0;
    double lambda_sd = 0.0;
    double lr_grid = 1e-2;
    double lr_mlp = 1e-3;
    std::uint64_t warmup_steps = 512;
    double final_lr_factor = 1e-2;
    AdamConfig adam;
    int n_samples = 128;
    int prior_offset = 10;
    std::vector<int> train_cameras;   // empty: every camera in the rig
    std::uint64_t seed = 0;
    bool deterministic = true;
    int threads = 0;                  // 0: DEFIELD_THREADS or hardware concurrency
    int chunk_rays = 256;
    std::uint64_t eval_every = 0;     // validation renders; 0 disables
    std::uint64_t checkpoint_every = 0;
    std::uint64_t log_every = 100;
    std::string priors_sparse = "priors_sparse.csv";
    std::string priors_dense = "priors_dense.csv";
    std::string priors_depth = "priors_depth.csv";
    bool check_coverage = true;
    ModelConfig model;

    int prior_rays() const { return prior_rays_per_batch >= 0 ? prior_rays_per_batch : batch_rays / 4; }

    void validate() const {
        if (iterations < 1) throw DataError("iterations must be >= 1");
        if (batch_rays < 1) throw DataError("batch_rays must be >= 1");
        if (!(lr_grid > 0) || !(lr_mlp > 0)) throw DataError("learning rates must be positive");
        if (lambda_sf < 0 || lambda_df < 0 || lambda_sd < 0) throw DataError("loss weights must be non-negative");
        if (n_samples < 1) throw DataError("n_samples must be >= 1");
        if (chunk_rays < 2) throw DataError("chunk_rays must be >= 2");
        if (prior_offset < 1) throw DataError("prior_offset must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"iterations", c.iterations},
         {"batch_rays", c.batch_rays},
         {"prior_rays_per_batch", c.prior_rays_per_batch},
         {"lambda_sf", c.lambda_sf},
         {"lambda_df", c.lambda_df},
         {"lambda_sd", c.lambda_sd},
         {"lr_grid", c.lr_grid},
         {"lr_mlp", c.lr_mlp},
         {"warmup_steps", c.warmup_steps},
         {"final_lr_factor", c.final_lr_factor},
         {"adam_beta1", c.adam.beta1},
         {"adam_beta2", c.adam.beta2},
         {"adam_eps", c.adam.eps},
         {"n_samples", c.n_samples},
         {"prior_offset", c.prior_offset},
         {"train_cameras", c.train_cameras},
         {"seed", c.seed},
         {"deterministic", c.deterministic},
         {"threads", c.threads},
         {"chunk_rays", c.chunk_rays},
         {"eval_every", c.eval_every},
         {"checkpoint_every", c.checkpoint_every},
         {"log_every", c.log_every},
         {"priors_sparse", c.priors_sparse},
         {"priors_dense", c.priors_dense},
         {"priors_depth", c.priors_depth},
         {"check_coverage", c.check_coverage},
         {"model", c.model}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    static const std::set<std::string> known{
        "iterations", "batch_rays", "prior_rays_per_batch", "lambda_sf", "lambda_df", "lambda_sd", "lr_grid",
        "lr_mlp", "warmup_steps", "final_lr_factor", "adam_beta1", "adam_beta2", "adam_eps", "n_samples",
        "prior_offset", "train_cameras", "seed", "deterministic", "threads", "chunk_rays", "eval_every",
        "checkpoint_every", "log_every", "priors_sparse", "priors_dense", "priors_depth", "check_coverage", "model"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw DataError("unknown train config key '" + key + "'");
    const TrainConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.batch_rays = j.value("batch_rays", d.batch_rays);
    c.prior_rays_per_batch = j.value("prior_rays_per_batch", d.prior_rays_per_batch);
    c.lambda_sf = j.value("lambda_sf", d.lambda_sf);
    c.lambda_df = j.value("lambda_df", d.lambda_df);
    c.lambda_sd = j.value("lambda_sd", d.lambda_sd);
    c.lr_grid = j.value("lr_grid", d.lr_grid);
    c.lr_mlp = j.value("lr_mlp", d.lr_mlp);
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    c.final_lr_factor = j.value("final_lr_factor", d.final_lr_factor);
    c.adam.beta1 = j.value("adam_beta1", d.adam.beta1);
    c.adam.beta2 = j.value("adam_beta2", d.adam.beta2);
    c.adam.eps = j.value("adam_eps", d.adam.eps);
    c.n_samples = j.value("n_samples", d.n_samples);
    c.prior_offset = j.value("prior_offset", d.prior_offset);
    c.train_cameras = j.value("train_cameras", d.train_cameras);
    c.seed = j.value("seed", d.seed);
    c.deterministic = j.value("deterministic", d.deterministic);
    c.threads = j.value("threads", d.threads);
    c.chunk_rays = j.value("chunk_rays", d.chunk_rays);
    c.eval_every = j.value("eval_every", d.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.log_every = j.value("log_every", d.log_every);
    c.priors_sparse = j.value("priors_sparse", d.priors_sparse);
    c.priors_dense = j.value("priors_dense", d.priors_dense);
    c.priors_depth = j.value("priors_depth", d.priors_depth);
    c.check_coverage = j.value("check_coverage", d.check_coverage);
    c.model = j.value("model", d.model);
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j.get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

/// Posed multi-view video frames with the scene frame they live in.
struct Dataset {
    std::filesystem::path root;
    Rig rig;
    SceneFrame frame;
    RayBounds bounds;
    std::vector<int> cameras;               // cameras used for training
    std::vector<std::vector<Image>> images; // [v-1][t-1], empty for unused cameras

    const Camera& camera(int v) const { return rig.at(static_cast<std::size_t>(v - 1)); }
    const Image& image(int v, int t) const {
        return images.at(static_cast<std::size_t>(v - 1)).at(static_cast<std::size_t>(t - 1));
    }
    PriorDomain prior_domain() const { return PriorDomain::from_rig(rig, frame.num_frames); }
};

/// Reads rig.json and the "frame" / ray bound entries of scene.json.
inline void load_scene_layout(const std::filesystem::path& root, Rig& rig, SceneFrame& frame, RayBounds& bounds) {
    rig = load_rig(root / "rig.json");
    std::ifstream in(root / "scene.json");
    if (!in) throw DataError("missing " + (root / "scene.json").string());
    try {
        nlohmann::json j;
        in >> j;
        frame = j.at("frame").get<SceneFrame>();
        bounds = RayBounds{frame.box, j.value("ray_near", 0.1), j.value("ray_far", 10.0)};
    } catch (const nlohmann::json::exception& e) {
        throw DataError((root / "scene.json").string() + ": " + e.what());
    }
}

inline Dataset load_dataset(const std::filesystem::path& root, std::vector<int> cameras = {}) {
    Dataset d;
    d.root = root;
    load_scene_layout(root, d.rig, d.frame, d.bounds);
    if (cameras.empty())
        for (const auto& c : d.rig) cameras.push_back(c.index);
    for (int v : cameras)
        if (v < 1 || v > static_cast<int>(d.rig.size()))
            throw DataError("train camera " + std::to_string(v) + " not in rig");
    d.cameras = cameras;
    d.images.resize(d.rig.size());
    for (int v : cameras) {
        auto& frames = d.images[static_cast<std::size_t>(v - 1)];
        for (int t = 1; t <= d.frame.num_frames; ++t) {
            const auto path = root / ("cam_" + std::to_string(v)) / ("frame_" + std::to_string(t) + ".png");
            Image img = read_png(path);
            if (img.width != d.camera(v).width || img.height != d.camera(v).height)
                throw DataError(path.string() + ": size does not match rig");
            frames.push_back(std::move(img));
        }
    }
    return d;
}

/// Loads prior files named in the config (relative to the dataset root unless absolute).
/// Missing files are treated as empty when the corresponding weight is zero.
inline PriorStore load_training_priors(const Dataset& d, const TrainConfig& cfg) {
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : d.root / path;
    };
    std::vector<std::filesystem::path> flow;
    if (cfg.lambda_sf > 0) flow.push_back(resolve(cfg.priors_sparse));
    if (cfg.lambda_df > 0) flow.push_back(resolve(cfg.priors_dense));
    std::optional<std::filesystem::path> depth;
    if (cfg.lambda_sd > 0) depth = resolve(cfg.priors_depth);
    auto store = PriorStore::load(flow, depth, d.prior_domain());
    return store.restricted_to(std::set<int>(d.cameras.begin(), d.cameras.end()));
}

// ---------------------------------------------------------------------------

/// Loss term a batch of rays contributes to. Flow terms read rays as consecutive (a, b) pairs.
enum class LossTerm { photometric, sparse_flow, dense_flow, sparse_depth };

/// Returns the unweighted sum of `term` over the rays (or pairs) of `f` and adds
/// scale * its gradient to the per-ray upstream. `colors` and `depths` are the
/// targets of photometric and depth terms.
template <typename S>
double accumulate_loss(LossTerm term, const BatchForward<S>& f, std::span<const Vec3<float>> colors,
                       std::span<const float> depths, S scale, std::span<RayUpstream<S>> up) {
    const std::size_t n = f.size();
    double loss = 0;
    switch (term) {
        case LossTerm::photometric:
            for (std::size_t r = 0; r < n; ++r) {
                const Vec3<S> diff = f.color.row(static_cast<Eigen::Index>(r)).transpose() - colors[r].cast<S>();
                loss += static_cast<double>(diff.squaredNorm());
                up[r].color += S(2) * scale * diff;
            }
            break;
        case LossTerm::sparse_flow:
        case LossTerm::dense_flow:
            for (std::size_t r = 0; r + 1 < n; r += 2) {
                const Vec3<S> pa = f.canonical_point.row(static_cast<Eigen::Index>(r)).transpose();
                const Vec3<S> pb = f.canonical_point.row(static_cast<Eigen::Index>(r + 1)).transpose();
                loss += static_cast<double>(flow_loss(pa, pb));
                const Vec3<S> g = scale * flow_loss_grad(pa, pb);
                up[r].canonical_point += g;
                up[r + 1].canonical_point -= g;
            }
            break;
        case LossTerm::sparse_depth:
            for (std::size_t r = 0; r < n; ++r) {
                const S d = f.depth[r] - static_cast<S>(depths[r]);
                loss += static_cast<double>(d * d);
                up[r].depth += S(2) * scale * d;
            }
            break;
    }
    return loss;
}

/// Names of the arrays whose gradient buffer was never written.
template <typename S>
std::vector<std::string> untouched_arrays(const ModelGrads<S>& g) {
    std::vector<std::string> out;
    std::size_t i = 0;
    g.g.for_each_param([&](const std::string& name, auto, const auto&) {
        if (!g.touched[i++]) out.push_back(name);
    });
    return out;
}

struct TrainState {
    Model<float> model;
    Model<float> adam_m;
    Model<float> adam_v;
    std::uint64_t iteration = 0;
    std::uint64_t seed = 0;

    static TrainState fresh(const ModelConfig& cfg, const SceneFrame& frame, std::uint64_t seed) {
        ModelConfig mc = cfg;
        mc.init_seed = seed_from(seed, 0x1417);
        TrainState s;
        s.model = make_model<float>(mc, frame);
        s.adam_m = s.model.zeros_like();
        s.adam_v = s.model.zeros_like();
        s.seed = seed;
        return s;
    }
};

namespace detail {

struct Chunk {
    LossTerm kind = LossTerm::photometric;
    std::vector<Ray> rays;            // flow chunks: consecutive (a, b) pairs
    std::vector<Vec3<float>> colors;  // photometric targets
    std::vector<float> depths;        // depth targets
};

struct ChunkLoss {
    double sum = 0;
};

inline Ray pixel_ray(const Dataset& d, int v, int t, double x, double y) {
    return ray_for_pixel(d.camera(v), {x, y}, t, d.bounds);
}

}  // namespace detail

/// Buffers kept across steps so that a long run does not reallocate them.
struct StepWorkspace {
    std::vector<ModelGrads<float>> grads;  // per worker
    std::vector<BatchForward<float>> forward;
    std::vector<std::vector<RayUpstream<float>>> upstream;

    void prepare(const Model<float>& model, int workers) {
        const auto n = static_cast<std::size_t>(workers);
        if (grads.size() != n) {
            grads.clear();
            for (std::size_t w = 0; w < n; ++w) grads.emplace_back(model);
        } else {
            for (auto& g : grads) g.zero();
        }
        forward.resize(n);
        upstream.resize(n);
    }
};

/// One optimization step on `state`. Returns the loss terms of the step.
/// Throws NumericalError when the loss or gradient stops being finite.
inline LossBreakdown train_step(TrainState& state, const Dataset& data, const PriorStore& priors,
                                const TrainConfig& cfg, StepWorkspace* workspace = nullptr) {
    using detail::Chunk;
    const std::uint64_t it = state.iteration;
    std::mt19937_64 rng(seed_from(state.seed, it, 0x5eed));

    std::vector<Chunk> chunks;
    auto open_chunk = [&](LossTerm kind, std::size_t capacity) -> Chunk& {
        if (chunks.empty() || chunks.back().kind != kind || chunks.back().rays.size() + 2 > capacity)
            chunks.push_back(Chunk{kind, {}, {}, {}});
        return chunks.back();
    };
    const auto cap = static_cast<std::size_t>(cfg.chunk_rays);

    // Photometric rays: uniform over cameras, frames and pixels.
    const int nf = data.frame.num_frames;
    std::uniform_int_distribution<std::size_t> pick_cam(0, data.cameras.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, nf);
    for (int i = 0; i < cfg.batch_rays; ++i) {
        const int v = data.cameras[pick_cam(rng)];
        const int t = pick_t(rng);
        const auto& cam = data.camera(v);
        const int x = std::uniform_int_distribution<int>(0, cam.width - 1)(rng);
        const int y = std::uniform_int_distribution<int>(0, cam.height - 1)(rng);
        Chunk& c = open_chunk(LossTerm::photometric, cap + 1);
        c.rays.push_back(detail::pixel_ray(data, v, t, x, y));
        const Image& img = data.image(v, t);
        c.colors.emplace_back(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
    }

    // Flow prior pairs: s drawn from {t - offset, t + offset}.
    const int pair_budget = cfg.prior_rays() / 4;
    auto add_pairs = [&](PriorKind kind, LossTerm ck) {
        const auto keys = priors.keys(kind);
        if (keys.empty()) return;
        std::uniform_int_distribution<std::size_t> pick_key(0, keys.size() - 1);
        for (int i = 0; i < pair_budget; ++i) {
            const auto [t, v] = keys[pick_key(rng)];
            const auto sel = select_pairs(priors, t, v, PairRule{cfg.prior_offset, 1, kind}, rng);
            if (sel.empty()) continue;
            const auto& r = sel.front();
            Chunk& c = open_chunk(ck, cap);
            c.rays.push_back(detail::pixel_ray(data, r.v, r.t, r.x, r.y));
            c.rays.push_back(detail::pixel_ray(data, r.u, r.s, r.xp, r.yp));
        }
    };
    if (cfg.lambda_sf > 0) add_pairs(PriorKind::sparse, LossTerm::sparse_flow);
    if (cfg.lambda_df > 0) add_pairs(PriorKind::dense, LossTerm::dense_flow);
    if (cfg.lambda_sd > 0 && !priors.depth_records().empty()) {
        const auto& recs = priors.depth_records();
        std::uniform_int_distribution<std::size_t> pick(0, recs.size() - 1);
        for (int i = 0; i < cfg.prior_rays() / 2; ++i) {
            const auto& r = recs[pick(rng)];
            Chunk& c = open_chunk(LossTerm::sparse_depth, cap + 1);
            c.rays.push_back(detail::pixel_ray(data, r.v, r.t, r.x, r.y));
            c.depths.push_back(static_cast<float>(r.depth));
        }
    }

    std::size_t counts[4] = {0, 0, 0, 0};
    for (const auto& c : chunks)
        counts[static_cast<int>(c.kind)] += c.kind == LossTerm::sparse_flow || c.kind == LossTerm::dense_flow
                                                ? c.rays.size() / 2
                                                : c.rays.size();
    const double weight[4] = {1.0, cfg.lambda_sf, cfg.lambda_df, cfg.lambda_sd};

    const int workers = cfg.deterministic ? 1 : resolve_threads(cfg.threads);
    StepWorkspace local;
    StepWorkspace& ws = workspace ? *workspace : local;
    ws.prepare(state.model, workers);
    auto& grads = ws.grads;
    std::vector<double> chunk_loss(chunks.size(), 0.0);

    RenderOptions ro;
    ro.n_samples = cfg.n_samples;
    ro.mode = SampleMode::stratified;
    ro.seed = state.seed;
    ro.iteration = it;

    parallel_for(static_cast<int>(chunks.size()), workers, [&](int ci, int w) {
        const Chunk& c = chunks[static_cast<std::size_t>(ci)];
        const auto kind = static_cast<int>(c.kind);
        const double norm = counts[kind] ? 1.0 / static_cast<double>(counts[kind]) : 0.0;
        const auto scale = static_cast<float>(weight[kind] * norm);
        auto& f = ws.forward[static_cast<std::size_t>(w)];
        render_forward(state.model, std::span<const Ray>(c.rays), ro, f);
        auto& up = ws.upstream[static_cast<std::size_t>(w)];
        up.assign(c.rays.size(), RayUpstream<float>{});
        const double loss = accumulate_loss<float>(c.kind, f, c.colors, c.depths, scale, up);
        chunk_loss[static_cast<std::size_t>(ci)] = loss * norm;
        render_backward(state.model, f, std::span<const RayUpstream<float>>(up), grads[static_cast<std::size_t>(w)]);
    });
    for (std::size_t w = 1; w < grads.size(); ++w) grads[0].add(grads[w]);
    ModelGrads<float>& g = grads[0];

    LossBreakdown b;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        switch (chunks[i].kind) {
            case LossTerm::photometric: b.photometric += chunk_loss[i]; break;
            case LossTerm::sparse_flow: b.sparse_flow += chunk_loss[i]; break;
            case LossTerm::dense_flow: b.dense_flow += chunk_loss[i]; break;
            case LossTerm::sparse_depth: b.sparse_depth += chunk_loss[i]; break;
        }
    }
    b.photometric_count = counts[0];
    b.sparse_flow_count = counts[1];
    b.dense_flow_count = counts[2];
    b.sparse_depth_count = counts[3];
    b = total_loss(b, LossWeights{cfg.lambda_sf, cfg.lambda_df, cfg.lambda_sd});

    double max_grad = 0;
    bool grad_finite = true;
    g.g.for_each_param([&](const std::string&, auto span, const auto&) {
        for (float v : span) {
            if (!std::isfinite(v)) grad_finite = false;
            else max_grad = std::max(max_grad, static_cast<double>(std::abs(v)));
        }
    });
    if (!std::isfinite(b.total) || !grad_finite) {
        const char* term = !std::isfinite(b.photometric)    ? "L_ph"
                           : !std::isfinite(b.sparse_flow)  ? "L_sf"
                           : !std::isfinite(b.dense_flow)   ? "L_df"
                           : !std::isfinite(b.sparse_depth) ? "L_sd"
                                                            : "gradient";
        throw NumericalError("non-finite value at iteration " + std::to_string(it) + " in " + term +
                             " (max |grad| over finite entries = " + std::to_string(max_grad) + ")");
    }

    if (cfg.check_coverage && counts[0] > 0) {
        const auto missing = untouched_arrays(g);
        if (!missing.empty()) {
            std::string names;
            for (const auto& n : missing) names += " " + n;
            throw std::logic_error("parameters received no gradient:" + names);
        }
    }

    const double factor = lr_factor(it, cfg.iterations, cfg.warmup_steps, cfg.final_lr_factor);
    std::vector<std::span<float>> ms, vs, gs;
    state.adam_m.for_each_param([&](const std::string&, auto s, const auto&) { ms.push_back(s); });
    state.adam_v.for_each_param([&](const std::string&, auto s, const auto&) { vs.push_back(s); });
    g.g.for_each_param([&](const std::string&, auto s, const auto&) { gs.push_back(s); });
    std::size_t k = 0;
    state.model.for_each_param([&](const std::string& name, auto p, const auto&) {
        const double rate = (name[0] == 'G' ? cfg.lr_grid : cfg.lr_mlp) * factor;
        adam_update<float>(p, gs[k], ms[k], vs[k], rate, cfg.adam, it + 1);
        ++k;
    });
    state.iteration = it + 1;
    return b;
}

// ---------------------------------------------------------------------------
// Checkpoints: tensors in the container format plus a JSON sidecar with the
// model configuration and scene frame.

inline std::filesystem::path checkpoint_sidecar(const std::filesystem::path& ckpt) {
    return std::filesystem::path(ckpt.string() + ".json");
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& s, const RayBounds& bounds,
                            int n_samples) {
    std::vector<TensorRecord> recs;
    auto add_model = [&](const std::string& prefix, const Model<float>& m) {
        m.for_each_param([&](const std::string& name, auto span, const auto& dims) {
            recs.push_back(TensorRecord::from_floats<float>(prefix + name, span, dims));
        });
    };
    add_model("", s.model);
    add_model("adam_m/", s.adam_m);
    add_model("adam_v/", s.adam_v);
    recs.push_back(TensorRecord::from_u64("state/iteration", s.iteration));
    recs.push_back(TensorRecord::from_u64("state/seed", s.seed));
    write_container(path, recs);

    nlohmann::json meta{{"model", s.model.config},
                        {"frame", s.model.frame},
                        {"ray_near", bounds.near},
                        {"ray_far", bounds.far},
                        {"n_samples", n_samples},
                        {"encoding",
                         {{"kind", "sinusoidal"},
                          {"dir_frequencies", s.model.canonical.dir_encoding.num_frequencies},
                          {"time_frequencies", s.model.canonical.time_encoding.num_frequencies},
                          {"include_input", true}}}};
    std::ofstream out(checkpoint_sidecar(path));
    if (!out) throw DataError("cannot write " + checkpoint_sidecar(path).string());
    out << meta.dump(2) << '\n';
}

struct LoadedCheckpoint {
    TrainState state;
    RayBounds bounds;
    int n_samples = 128;
};

/// Rebuilds the model from the sidecar, then fills every array by name.
/// A missing array or a shape mismatch is reported with the array's name.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream side(checkpoint_sidecar(path));
    if (!side) throw DataError("missing checkpoint sidecar " + checkpoint_sidecar(path).string());
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(checkpoint_sidecar(path).string() + ": " + e.what());
    }
    LoadedCheckpoint out;
    const auto cfg = meta.at("model").get<ModelConfig>();
    const auto frame = meta.at("frame").get<SceneFrame>();
    out.state.model = make_model<float>(cfg, frame);
    out.state.adam_m = out.state.model.zeros_like();
    out.state.adam_v = out.state.model.zeros_like();
    out.bounds = RayBounds{frame.box, meta.value("ray_near", 0.1), meta.value("ray_far", 10.0)};
    out.n_samples = meta.value("n_samples", 128);

    std::map<std::string, const TensorRecord*> by_name;
    const auto records = read_container(path);
    for (const auto& r : records) by_name[r.name] = &r;
    auto fill = [&](const std::string& prefix, Model<float>& m) {
        m.for_each_param([&](const std::string& name, auto span, const auto& dims) {
            const auto it = by_name.find(prefix + name);
            if (it == by_name.end()) throw DataError("checkpoint " + path.string() + " lacks array '" + prefix + name + "'");
            if (it->second->dims != dims)
                throw DataError("checkpoint array '" + prefix + name + "' has mismatched shape");
            it->second->to_floats(span);
        });
    };
    fill("", out.state.model);
    fill("adam_m/", out.state.adam_m);
    fill("adam_v/", out.state.adam_v);
    auto scalar = [&](const std::string& name) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint " + path.string() + " lacks '" + name + "'");
        return it->second->to_u64();
    };
    out.state.iteration = scalar("state/iteration");
    out.state.seed = scalar("state/seed");
    return out;
}

// ---------------------------------------------------------------------------

struct TrainCallbacks {
    std::function<void(std::uint64_t, const LossBreakdown&)> on_step;
};

/// Full optimization run writing config.json, loss.csv, checkpoints and
/// validation renders into `out_dir`.
inline TrainState run_training(const Dataset& data, const PriorStore& priors, const TrainConfig& cfg,
                               const std::filesystem::path& out_dir, std::optional<TrainState> resume = std::nullopt,
                               const TrainCallbacks& callbacks = {}) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "config.json");
        if (!out) throw DataError("cannot write " + (out_dir / "config.json").string());
        out << nlohmann::json(cfg).dump(2) << '\n';
    }
    TrainState state = resume ? std::move(*resume) : TrainState::fresh(cfg.model, data.frame, cfg.seed);
    const bool append = resume.has_value() && fs::exists(out_dir / "loss.csv");
    std::ofstream log_csv(out_dir / "loss.csv", append ? std::ios::app : std::ios::trunc);
    if (!append) log_csv << loss_csv_header() << '\n';

    auto checkpoint = [&] {
        save_checkpoint(out_dir / ("ckpt_" + std::to_string(state.iteration) + ".bin"), state, data.bounds,
                        cfg.n_samples);
    };
    StepWorkspace workspace;
    while (state.iteration < cfg.iterations) {
        const LossBreakdown b = train_step(state, data, priors, cfg, &workspace);
        log_csv << loss_csv_row(state.iteration, b) << '\n';
        if (callbacks.on_step) callbacks.on_step(state.iteration, b);
        if (cfg.log_every && state.iteration % cfg.log_every == 0)
            log::info("iter " + std::to_string(state.iteration) + "  L_ph " + std::to_string(b.photometric) +
                      "  L_sf " + std::to_string(b.sparse_flow) + "  L_df " + std::to_string(b.dense_flow) +
                      "  L " + std::to_string(b.total));
        if (cfg.checkpoint_every && state.iteration % cfg.checkpoint_every == 0 && state.iteration < cfg.iterations)
            checkpoint();
        if (cfg.eval_every && state.iteration % cfg.eval_every == 0) {
            fs::create_directories(out_dir / "val");
            const int v = data.cameras.front();
            const int t = (data.frame.num_frames + 1) / 2;
            RenderOptions ro{cfg.n_samples, SampleMode::uniform, 0, 0};
            const auto view = render_image(state.model, data.camera(v), t, ro, data.bounds, resolve_threads(cfg.threads));
            write_png(out_dir / "val" / ("iter_" + std::to_string(state.iteration) + "_cam_" + std::to_string(v) +
                                         "_frame_" + std::to_string(t) + ".png"),
                      view.color);
        }
    }
    log_csv.flush();
    checkpoint();
    return state;
}

}  // namespace defield
