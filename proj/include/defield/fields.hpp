#pragma once

// The two learned fields.
//
//   motion:    (p, t)  -> scene flow toward the canonical time; p' = p + flow
//   canonical: p'      -> density (softplus of latent channel 0) and a latent
//              code that the color MLP maps, together with the encoded view
//              direction and time, to RGB through a sigmoid.

#include "defield/geometry.hpp"
#include "defield/grids.hpp"
#include "defield/mlp.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <span>
#include <string>

namespace defield {

struct ModelConfig {
    std::vector<int> motion_spatial_res{32, 64};
    std::vector<int> motion_time_res{};  // empty: {N_f/4, N_f/2}
    int motion_features = 8;
    std::vector<int> canonical_res{64, 128};
    int canonical_features = 16;
    std::vector<int> motion_hidden{64, 64};
    std::vector<int> color_hidden{64, 64};
    int dir_frequencies = 4;
    int time_frequencies = 6;
    int canonical_time = 1;
    double grid_init_lo = -0.2;
    double grid_init_hi = 0.2;
    std::uint64_t init_seed = 0;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"motion_spatial_res", c.motion_spatial_res},
         {"motion_time_res", c.motion_time_res},
         {"motion_features", c.motion_features},
         {"canonical_res", c.canonical_res},
         {"canonical_features", c.canonical_features},
         {"motion_hidden", c.motion_hidden},
         {"color_hidden", c.color_hidden},
         {"dir_frequencies", c.dir_frequencies},
         {"time_frequencies", c.time_frequencies},
         {"canonical_time", c.canonical_time},
         {"grid_init_lo", c.grid_init_lo},
         {"grid_init_hi", c.grid_init_hi},
         {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    const ModelConfig d;
    c.motion_spatial_res = j.value("motion_spatial_res", d.motion_spatial_res);
    c.motion_time_res = j.value("motion_time_res", d.motion_time_res);
    c.motion_features = j.value("motion_features", d.motion_features);
    c.canonical_res = j.value("canonical_res", d.canonical_res);
    c.canonical_features = j.value("canonical_features", d.canonical_features);
    c.motion_hidden = j.value("motion_hidden", d.motion_hidden);
    c.color_hidden = j.value("color_hidden", d.color_hidden);
    c.dir_frequencies = j.value("dir_frequencies", d.dir_frequencies);
    c.time_frequencies = j.value("time_frequencies", d.time_frequencies);
    c.canonical_time = j.value("canonical_time", d.canonical_time);
    c.grid_init_lo = j.value("grid_init_lo", d.grid_init_lo);
    c.grid_init_hi = j.value("grid_init_hi", d.grid_init_hi);
    c.init_seed = j.value("init_seed", d.init_seed);
}

/// Maps scene coordinates and frame indices into the unit cube.
struct SceneFrame {
    Box box;
    int num_frames = 1;

    template <typename S>
    S normalize_time(int t) const {
        return num_frames > 1 ? S(t - 1) / S(num_frames - 1) : S(0);
    }
    template <typename S>
    S normalize_axis(S v, int axis) const {
        return (v - S(box.lo[axis])) / S(box.hi[axis] - box.lo[axis]);
    }
    template <typename S>
    S inv_extent(int axis) const {
        return S(1) / S(box.hi[axis] - box.lo[axis]);
    }
};

inline void to_json(nlohmann::json& j, const SceneFrame& f) {
    j = {{"box_min", {f.box.lo.x(), f.box.lo.y(), f.box.lo.z()}},
         {"box_max", {f.box.hi.x(), f.box.hi.y(), f.box.hi.z()}},
         {"num_frames", f.num_frames}};
}

inline void from_json(const nlohmann::json& j, SceneFrame& f) {
    const auto lo = j.at("box_min").get<std::vector<double>>();
    const auto hi = j.at("box_max").get<std::vector<double>>();
    if (lo.size() != 3 || hi.size() != 3) throw DataError("scene box must have 3 components");
    f.box.lo = Vec3<double>(lo[0], lo[1], lo[2]);
    f.box.hi = Vec3<double>(hi[0], hi[1], hi[2]);
    f.num_frames = j.at("num_frames").get<int>();
    if ((f.box.hi.array() <= f.box.lo.array()).any()) throw DataError("scene box is empty");
    if (f.num_frames < 1) throw DataError("num_frames must be >= 1");
}

template <typename S>
struct MotionField {
    PlaneGridSet<S> grid;
    TinyMLP<S> mlp;
    int canonical_time = 1;
};

template <typename S>
struct CanonicalField {
    PlaneGridSet<S> grid;
    TinyMLP<S> color_mlp;
    Encoding dir_encoding{4, true};
    Encoding time_encoding{6, true};

    int latent_dim() const { return grid.output_dim() - 1; }
    int color_input_dim() const {
        return latent_dim() + dir_encoding.output_dim(3) + time_encoding.output_dim(1);
    }
};

/// Everything learnable plus the frame it lives in.
template <typename S>
struct Model {
    ModelConfig config;
    SceneFrame frame;
    MotionField<S> motion;
    CanonicalField<S> canonical;

    /// Calls fn(name, span, dims) for every learnable array in a fixed order.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        visit(*this, fn);
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        visit(*this, fn);
    }

    std::size_t param_array_count() const {
        std::size_t n = 0;
        for_each_param([&](const std::string&, auto, const auto&) { ++n; });
        return n;
    }

    // Index ranges of each module inside the for_each_param order.
    std::size_t motion_grid_offset() const { return 0; }
    std::size_t motion_mlp_offset() const { return plane_count(motion.grid); }
    std::size_t canonical_grid_offset() const { return motion_mlp_offset() + 2 * motion.mlp.layers().size(); }
    std::size_t color_mlp_offset() const { return canonical_grid_offset() + plane_count(canonical.grid); }

    Model zeros_like() const {
        Model z = *this;
        z.motion.grid = motion.grid.zeros_like();
        z.motion.mlp = motion.mlp.zeros_like();
        z.canonical.grid = canonical.grid.zeros_like();
        z.canonical.color_mlp = canonical.color_mlp.zeros_like();
        return z;
    }

    template <typename T>
    Model<T> cast() const {
        Model<T> m;
        m.config = config;
        m.frame = frame;
        m.motion.grid = motion.grid.template cast<T>();
        m.motion.mlp = motion.mlp.template cast<T>();
        m.motion.canonical_time = motion.canonical_time;
        m.canonical.grid = canonical.grid.template cast<T>();
        m.canonical.color_mlp = canonical.color_mlp.template cast<T>();
        m.canonical.dir_encoding = canonical.dir_encoding;
        m.canonical.time_encoding = canonical.time_encoding;
        return m;
    }

    std::size_t parameter_count() const {
        return motion.grid.parameter_count() + motion.mlp.parameter_count() + canonical.grid.parameter_count() +
               canonical.color_mlp.parameter_count();
    }

private:
    static std::size_t plane_count(const PlaneGridSet<S>& g) {
        std::size_t n = 0;
        for (const auto& l : g.levels()) n += l.planes.size();
        return n;
    }

    template <typename M, typename Fn>
    static void visit(M& m, Fn& fn) {
        auto grid = [&](const std::string& prefix, auto& g) {
            for (std::size_t l = 0; l < g.levels().size(); ++l)
                for (auto& p : g.levels()[l].planes)
                    fn(prefix + "/L" + std::to_string(l) + "/" + p.axes_name(), std::span(p.data),
                       std::vector<std::uint32_t>{std::uint32_t(p.res_a), std::uint32_t(p.res_b), std::uint32_t(p.features)});
        };
        auto mlp = [&](const std::string& prefix, auto& net) {
            for (std::size_t k = 0; k < net.layers().size(); ++k) {
                auto& layer = net.layers()[k];
                fn(prefix + "/W" + std::to_string(k), std::span(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())),
                   std::vector<std::uint32_t>{std::uint32_t(layer.weight.rows()), std::uint32_t(layer.weight.cols())});
                fn(prefix + "/b" + std::to_string(k), std::span(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())),
                   std::vector<std::uint32_t>{std::uint32_t(layer.bias.size())});
            }
        };
        grid("Gf", m.motion.grid);
        mlp("Mf", m.motion.mlp);
        grid("Gs", m.canonical.grid);
        mlp("Ms", m.canonical.color_mlp);
    }
};

inline std::vector<int> resolve_time_res(const ModelConfig& cfg, int num_frames) {
    if (!cfg.motion_time_res.empty()) return cfg.motion_time_res;
    std::vector<int> res;
    for (int div : {4, 2}) res.push_back(std::max(2, num_frames / div));
    res.resize(cfg.motion_spatial_res.size(), res.back());
    return res;
}

/// Builds an initialized model: spatial planes uniform in [grid_init_lo, grid_init_hi],
/// temporal planes at 1, motion output layer zero, color-MLP time inputs zero.
template <typename S>
Model<S> make_model(const ModelConfig& cfg, const SceneFrame& frame) {
    Model<S> m;
    m.config = cfg;
    m.frame = frame;

    GridSpec mg;
    mg.kind = GridKind::spatiotemporal4;
    mg.spatial_res = cfg.motion_spatial_res;
    mg.time_res = resolve_time_res(cfg, frame.num_frames);
    mg.features = cfg.motion_features;
    m.motion.grid = PlaneGridSet<S>(mg);
    m.motion.grid.initialize(seed_from(cfg.init_seed, 1), cfg.grid_init_lo, cfg.grid_init_hi);
    m.motion.mlp = TinyMLP<S>(m.motion.grid.output_dim(), cfg.motion_hidden, 3);
    m.motion.mlp.initialize(seed_from(cfg.init_seed, 2));
    m.motion.mlp.layers().back().weight.setZero();
    m.motion.mlp.layers().back().bias.setZero();
    if (cfg.canonical_time < 1 || cfg.canonical_time > frame.num_frames)
        throw std::invalid_argument("canonical_time outside [1, num_frames]");
    m.motion.canonical_time = cfg.canonical_time;

    GridSpec cg;
    cg.kind = GridKind::spatial3;
    cg.spatial_res = cfg.canonical_res;
    cg.features = cfg.canonical_features;
    if (cg.features < 2) throw std::invalid_argument("canonical grid needs >= 2 features (density + latent)");
    m.canonical.grid = PlaneGridSet<S>(cg);
    m.canonical.grid.initialize(seed_from(cfg.init_seed, 3), cfg.grid_init_lo, cfg.grid_init_hi);
    m.canonical.dir_encoding = Encoding{cfg.dir_frequencies, true};
    m.canonical.time_encoding = Encoding{cfg.time_frequencies, true};
    m.canonical.color_mlp = TinyMLP<S>(m.canonical.color_input_dim(), cfg.color_hidden, 3);
    m.canonical.color_mlp.initialize(seed_from(cfg.init_seed, 4));
    const int time_begin = m.canonical.latent_dim() + m.canonical.dir_encoding.output_dim(3);
    auto& w0 = m.canonical.color_mlp.layers().front().weight;
    w0.rightCols(w0.cols() - time_begin).setZero();
    return m;
}

/// Gradient buffers shaped like the model, with a per-array coverage flag.
template <typename S>
struct ModelGrads {
    Model<S> g;
    std::vector<std::uint8_t> touched;

    ModelGrads() = default;
    explicit ModelGrads(const Model<S>& model) : g(model.zeros_like()), touched(model.param_array_count(), 0) {}

    void zero() {
        g.for_each_param([](const std::string&, auto span, const auto&) { std::fill(span.begin(), span.end(), S(0)); });
        std::fill(touched.begin(), touched.end(), 0);
    }

    void add(const ModelGrads& other) {
        std::vector<std::span<S>> mine;
        g.for_each_param([&](const std::string&, auto span, const auto&) { mine.push_back(span); });
        std::size_t i = 0;
        other.g.for_each_param([&](const std::string&, auto span, const auto&) {
            auto dst = mine[i];
            for (std::size_t k = 0; k < span.size(); ++k) dst[k] += span[k];
            touched[i] = touched[i] | other.touched[i];
            ++i;
        });
    }

    std::uint8_t* motion_grid_flags() { return touched.data() + g.motion_grid_offset(); }
    std::uint8_t* motion_mlp_flags() { return touched.data() + g.motion_mlp_offset(); }
    std::uint8_t* canonical_grid_flags() { return touched.data() + g.canonical_grid_offset(); }
    std::uint8_t* color_mlp_flags() { return touched.data() + g.color_mlp_offset(); }
};

// ---------------------------------------------------------------------------
// Batched evaluation. Rows are samples; every row carries its own time.

template <typename S>
struct MotionEval {
    MatrixX<S> points;    // normalized (x, y, z, t), rows x 4
    MatrixX<S> features;  // grid output
    MLPCache<S> cache;
    MatrixX<S> flow;  // rows x 3, scene units
};

/// positions: rows x 3 in scene units; times: frame index per row.
template <typename S>
void motion_forward(const Model<S>& m, const MatrixX<S>& positions, std::span<const int> times, MotionEval<S>& ev) {
    const auto rows = positions.rows();
    ev.points.resize(rows, 4);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (int a = 0; a < 3; ++a) ev.points(r, a) = m.frame.template normalize_axis<S>(positions(r, a), a);
        ev.points(r, 3) = m.frame.template normalize_time<S>(times[static_cast<std::size_t>(r)]);
    }
    ev.features.resize(rows, m.motion.grid.output_dim());
    for (Eigen::Index r = 0; r < rows; ++r) m.motion.grid.combine(&ev.points(r, 0), &ev.features(r, 0));
    m.motion.mlp.forward(ev.features, ev.flow, ev.cache);
}

/// flow_grad: rows x 3. The motion field input p is a ray sample, so no point gradient.
template <typename S>
void motion_backward(const Model<S>& m, const MotionEval<S>& ev, const MatrixX<S>& flow_grad, ModelGrads<S>& grads) {
    MatrixX<S> feat_grad;
    m.motion.mlp.backward(ev.cache, flow_grad, grads.g.motion.mlp, &feat_grad, grads.motion_mlp_flags());
    std::uint8_t* flags = grads.motion_grid_flags();
    std::size_t n = 0;
    for (const auto& l : m.motion.grid.levels()) n += l.planes.size();
    std::fill(flags, flags + n, 1);
    for (Eigen::Index r = 0; r < ev.points.rows(); ++r)
        m.motion.grid.combine_backward(&ev.points(r, 0), &feat_grad(r, 0), grads.g.motion.grid, nullptr);
}

template <typename S>
struct CanonicalEval {
    MatrixX<S> points;  // normalized p', rows x 3
    MatrixX<S> latent;  // grid output, rows x F
    MLPCache<S> cache;
    MatrixX<S> logits;  // rows x 3
    VectorX<S> sigma;   // rows
    MatrixX<S> color;   // rows x 3
};

/// Per-row view directions and frame indices; rows sharing a ray can repeat them.
template <typename S>
void canonical_forward(const Model<S>& m, const MatrixX<S>& canonical_positions, const MatrixX<S>& view_dirs,
                       std::span<const int> times, CanonicalEval<S>& ev) {
    const auto rows = canonical_positions.rows();
    const auto& cf = m.canonical;
    const int fdim = cf.grid.output_dim();
    const int ddim = cf.dir_encoding.output_dim(3);
    const int tdim = cf.time_encoding.output_dim(1);
    ev.points.resize(rows, 3);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (int a = 0; a < 3; ++a) ev.points(r, a) = m.frame.template normalize_axis<S>(canonical_positions(r, a), a);
    ev.latent.resize(rows, fdim);
    for (Eigen::Index r = 0; r < rows; ++r) cf.grid.combine(&ev.points(r, 0), &ev.latent(r, 0));

    MatrixX<S> x(rows, cf.color_input_dim());
    x.leftCols(fdim - 1) = ev.latent.rightCols(fdim - 1);
    std::vector<S> enc(static_cast<std::size_t>(ddim + tdim));
    for (Eigen::Index r = 0; r < rows; ++r) {
        // Consecutive rows usually share direction and time; reuse the encoding.
        if (r == 0 || view_dirs.row(r) != view_dirs.row(r - 1) ||
            times[static_cast<std::size_t>(r)] != times[static_cast<std::size_t>(r - 1)]) {
            const S d[3] = {view_dirs(r, 0), view_dirs(r, 1), view_dirs(r, 2)};
            const S tn = m.frame.template normalize_time<S>(times[static_cast<std::size_t>(r)]);
            cf.dir_encoding.encode(d, 3, enc.data());
            cf.time_encoding.encode(&tn, 1, enc.data() + ddim);
        }
        for (int k = 0; k < ddim + tdim; ++k) x(r, fdim - 1 + k) = enc[static_cast<std::size_t>(k)];
    }
    cf.color_mlp.forward(x, ev.logits, ev.cache);
    ev.sigma.resize(rows);
    ev.color.resize(rows, 3);
    for (Eigen::Index r = 0; r < rows; ++r) {
        ev.sigma[r] = softplus(ev.latent(r, 0));
        for (int c = 0; c < 3; ++c) ev.color(r, c) = sigmoid(ev.logits(r, c));
    }
}

/// Returns d(loss)/d(p') in scene units (rows x 3). Clamped coordinates get zero.
template <typename S>
MatrixX<S> canonical_backward(const Model<S>& m, const CanonicalEval<S>& ev, const VectorX<S>& sigma_grad,
                              const MatrixX<S>& color_grad, ModelGrads<S>& grads) {
    const auto rows = ev.points.rows();
    const auto& cf = m.canonical;
    const int fdim = cf.grid.output_dim();
    MatrixX<S> logit_grad(rows, 3);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (int c = 0; c < 3; ++c) {
            const S y = ev.color(r, c);
            logit_grad(r, c) = color_grad(r, c) * y * (S(1) - y);
        }
    MatrixX<S> x_grad;
    cf.color_mlp.backward(ev.cache, logit_grad, grads.g.canonical.color_mlp, &x_grad, grads.color_mlp_flags());

    std::uint8_t* flags = grads.canonical_grid_flags();
    std::size_t n = 0;
    for (const auto& l : cf.grid.levels()) n += l.planes.size();
    std::fill(flags, flags + n, 1);

    MatrixX<S> point_grad = MatrixX<S>::Zero(rows, 3);
    std::vector<S> latent_grad(static_cast<std::size_t>(fdim));
    for (Eigen::Index r = 0; r < rows; ++r) {
        latent_grad[0] = sigma_grad[r] * sigmoid(ev.latent(r, 0));
        for (int k = 1; k < fdim; ++k) latent_grad[static_cast<std::size_t>(k)] = x_grad(r, k - 1);
        S pg[3] = {0, 0, 0};
        cf.grid.combine_backward(&ev.points(r, 0), latent_grad.data(), grads.g.canonical.grid, pg);
        for (int a = 0; a < 3; ++a) point_grad(r, a) = pg[a] * m.frame.template inv_extent<S>(a);
    }
    return point_grad;
}

// ---------------------------------------------------------------------------
// Single-point queries.

/// F_f(p, t): scene flow from frame t to the canonical time, in scene units.
template <typename S>
Vec3<S> flow(const Model<S>& m, const Vec3<S>& p, int t) {
    MatrixX<S> pos = p.transpose();
    MotionEval<S> ev;
    const int times[1] = {t};
    motion_forward(m, pos, std::span<const int>(times, 1), ev);
    return ev.flow.row(0).transpose();
}

template <typename S>
struct CanonicalSample {
    S sigma;
    Vec3<S> color;
};

template <typename S>
CanonicalSample<S> query_canonical(const Model<S>& m, const Vec3<S>& canonical_p, const Vec3<S>& view_dir, int t) {
    MatrixX<S> pos = canonical_p.transpose();
    MatrixX<S> dir = view_dir.transpose();
    const int times[1] = {t};
    CanonicalEval<S> ev;
    canonical_forward(m, pos, dir, std::span<const int>(times, 1), ev);
    return {ev.sigma[0], ev.color.row(0).transpose()};
}

}  // namespace defield
