#pragma once

// Differentiable volume rendering of the deformed canonical scene.
//
// Samples p_i along a ray at frame t are warped to the canonical time,
// p'_i = p_i + F_f(p_i, t), the canonical field is queried at p'_i, and the
// results are composited front to back:
//
//   w_i = prod_{j<i} exp(-delta_j sigma_j) * (1 - exp(-delta_i sigma_i))
//   c   = sum_i w_i c_i,   z = sum_i w_i z_i,   P = sum_i w_i p'_i
//
// Backward passes run through the weights (no stop-gradient), the colors and
// the canonical positions, and from there into both fields.

#include "defield/fields.hpp"
#include "defield/geometry.hpp"
#include "defield/image.hpp"

#include <span>
#include <vector>

namespace defield {

template <typename S>
struct RenderResult {
    Vec3<S> color = Vec3<S>::Zero();
    S depth = 0;
    S opacity = 0;  // sum of weights
    Vec3<S> canonical_point = Vec3<S>::Zero();  // sum_i w_i p'_i
    std::vector<S> weights;
    std::vector<S> transmittances;  // T_i, light reaching sample i
    std::vector<Vec3<S>> canonical_points;
    std::vector<S> depths;
};

/// Front-to-back compositing of one ray. `colors` and `canonical` hold 3 values per sample.
template <typename S>
void composite(std::span<const S> sigma, std::span<const S> delta, std::span<const S> depth, const S* colors,
               const S* canonical, S* weights, S* transmittance, S* color_out, S& depth_out, S* point_out,
               S& opacity_out) {
    S trans = 1;
    Vec3<S> c = Vec3<S>::Zero(), p = Vec3<S>::Zero();
    S z = 0, acc = 0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        const S atten = std::exp(-delta[i] * sigma[i]);
        const S w = trans * (S(1) - atten);
        weights[i] = w;
        transmittance[i] = trans;
        for (int k = 0; k < 3; ++k) {
            c[k] += w * colors[3 * i + k];
            if (canonical) p[k] += w * canonical[3 * i + k];
        }
        z += w * depth[i];
        acc += w;
        trans *= atten;
    }
    for (int k = 0; k < 3; ++k) {
        color_out[k] = c[k];
        if (point_out) point_out[k] = p[k];
    }
    depth_out = z;
    opacity_out = acc;
}

/// Upstream gradients of one ray's outputs. Optional per-sample terms address
/// the weights and canonical positions directly.
template <typename S>
struct RayUpstream {
    Vec3<S> color = Vec3<S>::Zero();
    S depth = 0;
    Vec3<S> canonical_point = Vec3<S>::Zero();
    std::span<const S> weights;           // d/dw_i, optional
    std::span<const S> canonical_points;  // d/dp'_i, 3 per sample, optional

    bool is_zero() const {
        bool z = color.isZero() && depth == S(0) && canonical_point.isZero();
        for (S v : weights) z = z && v == S(0);
        for (S v : canonical_points) z = z && v == S(0);
        return z;
    }
};

/// Backward of `composite`. Writes d/dsigma_i, d/dc_i and d/dp'_i (overwrites).
template <typename S>
void composite_backward(std::span<const S> sigma, std::span<const S> delta, std::span<const S> depth,
                        const S* colors, const S* canonical, std::span<const S> weights,
                        std::span<const S> transmittance, const RayUpstream<S>& up, S* sigma_grad, S* color_grad,
                        S* canonical_grad) {
    const std::size_t n = sigma.size();
    // g_w[i]: total derivative w.r.t. w_i with sigma held fixed elsewhere.
    std::vector<S> gw(n);
    for (std::size_t i = 0; i < n; ++i) {
        S g = up.depth * depth[i];
        for (int k = 0; k < 3; ++k) {
            g += up.color[k] * colors[3 * i + k];
            if (canonical) g += up.canonical_point[k] * canonical[3 * i + k];
        }
        if (!up.weights.empty()) g += up.weights[i];
        gw[i] = g;
    }
    S suffix = 0;  // sum_{j>i} w_j g_w[j]
    for (std::size_t i = n; i-- > 0;) {
        const S next_trans = transmittance[i] * std::exp(-delta[i] * sigma[i]);
        sigma_grad[i] = delta[i] * (next_trans * gw[i] - suffix);
        suffix += weights[i] * gw[i];
        for (int k = 0; k < 3; ++k) {
            color_grad[3 * i + k] = weights[i] * up.color[k];
            if (canonical_grad) {
                S g = weights[i] * up.canonical_point[k];
                if (!up.canonical_points.empty()) g += up.canonical_points[3 * i + k];
                canonical_grad[3 * i + k] = g;
            }
        }
    }
}

struct RenderOptions {
    int n_samples = 128;
    SampleMode mode = SampleMode::uniform;
    std::uint64_t seed = 0;
    std::uint64_t iteration = 0;
};

/// Forward state of a batch of rays with n samples each, kept for backward.
template <typename S>
struct BatchForward {
    std::vector<Ray> rays;
    int n = 0;
    std::vector<S> depths;  // rays * n
    std::vector<S> deltas;
    std::vector<int> times;  // per sample row
    MatrixX<S> positions;
    MatrixX<S> view_dirs;
    MotionEval<S> motion;
    MatrixX<S> canonical;  // p', rows x 3
    CanonicalEval<S> field;
    std::vector<S> weights;
    std::vector<S> transmittance;
    MatrixX<S> color;           // rays x 3
    std::vector<S> depth;       // rays
    std::vector<S> opacity;     // rays
    MatrixX<S> canonical_point; // rays x 3

    std::size_t size() const { return rays.size(); }

    RenderResult<S> result(std::size_t r) const {
        RenderResult<S> out;
        out.color = color.row(static_cast<Eigen::Index>(r)).transpose();
        out.depth = depth[r];
        out.opacity = opacity[r];
        out.canonical_point = canonical_point.row(static_cast<Eigen::Index>(r)).transpose();
        for (int i = 0; i < n; ++i) {
            const std::size_t k = r * static_cast<std::size_t>(n) + static_cast<std::size_t>(i);
            out.weights.push_back(weights[k]);
            out.transmittances.push_back(transmittance[k]);
            out.depths.push_back(depths[k]);
            out.canonical_points.push_back(canonical.row(static_cast<Eigen::Index>(k)).transpose());
        }
        return out;
    }
};

template <typename S>
void render_forward(const Model<S>& m, std::span<const Ray> rays, const RenderOptions& opt, BatchForward<S>& f) {
    const int n = opt.n_samples;
    if (n < 1) throw std::invalid_argument("n_samples must be >= 1");
    const std::size_t nr = rays.size();
    const auto rows = static_cast<Eigen::Index>(nr * static_cast<std::size_t>(n));
    f.rays.assign(rays.begin(), rays.end());
    f.n = n;
    f.depths.resize(static_cast<std::size_t>(rows));
    f.deltas.resize(static_cast<std::size_t>(rows));
    f.times.resize(static_cast<std::size_t>(rows));
    f.positions.resize(rows, 3);
    f.view_dirs.resize(rows, 3);
    std::vector<double> zd(static_cast<std::size_t>(n)), dd(static_cast<std::size_t>(n));
    for (std::size_t r = 0; r < nr; ++r) {
        const Ray& ray = rays[r];
        if (!(ray.near < ray.far)) throw std::invalid_argument("degenerate ray: near >= far");
        sample_depths(ray, n, opt.mode, ray_stream_seed(opt.seed, ray, opt.iteration), zd.data(), dd.data());
        for (int i = 0; i < n; ++i) {
            const auto k = static_cast<Eigen::Index>(r * static_cast<std::size_t>(n) + static_cast<std::size_t>(i));
            const auto uk = static_cast<std::size_t>(k);
            f.depths[uk] = static_cast<S>(zd[static_cast<std::size_t>(i)]);
            f.deltas[uk] = static_cast<S>(dd[static_cast<std::size_t>(i)]);
            f.times[uk] = ray.t;
            const Vec3<double> p = ray.at(zd[static_cast<std::size_t>(i)]);
            for (int a = 0; a < 3; ++a) {
                f.positions(k, a) = static_cast<S>(p[a]);
                f.view_dirs(k, a) = static_cast<S>(ray.direction[a]);
            }
        }
    }
    motion_forward(m, f.positions, std::span<const int>(f.times), f.motion);
    f.canonical = f.positions + f.motion.flow;
    canonical_forward(m, f.canonical, f.view_dirs, std::span<const int>(f.times), f.field);

    f.weights.resize(static_cast<std::size_t>(rows));
    f.transmittance.resize(static_cast<std::size_t>(rows));
    f.color.resize(static_cast<Eigen::Index>(nr), 3);
    f.depth.resize(nr);
    f.opacity.resize(nr);
    f.canonical_point.resize(static_cast<Eigen::Index>(nr), 3);
    for (std::size_t r = 0; r < nr; ++r) {
        const std::size_t b = r * static_cast<std::size_t>(n);
        const auto rr = static_cast<Eigen::Index>(r);
        S c[3], p[3];
        composite<S>(std::span<const S>(f.field.sigma.data() + b, static_cast<std::size_t>(n)),
                     std::span<const S>(f.deltas.data() + b, static_cast<std::size_t>(n)),
                     std::span<const S>(f.depths.data() + b, static_cast<std::size_t>(n)),
                     &f.field.color(static_cast<Eigen::Index>(b), 0), &f.canonical(static_cast<Eigen::Index>(b), 0),
                     f.weights.data() + b, f.transmittance.data() + b, c, f.depth[r], p, f.opacity[r]);
        for (int k = 0; k < 3; ++k) {
            f.color(rr, k) = c[k];
            f.canonical_point(rr, k) = p[k];
        }
    }
}

/// Accumulates parameter gradients for per-ray upstream gradients.
template <typename S>
void render_backward(const Model<S>& m, const BatchForward<S>& f, std::span<const RayUpstream<S>> upstream,
                     ModelGrads<S>& grads) {
    const int n = f.n;
    const std::size_t nr = f.size();
    const auto rows = static_cast<Eigen::Index>(nr * static_cast<std::size_t>(n));
    VectorX<S> sigma_grad = VectorX<S>::Zero(rows);
    MatrixX<S> color_grad = MatrixX<S>::Zero(rows, 3);
    MatrixX<S> canon_grad = MatrixX<S>::Zero(rows, 3);
    for (std::size_t r = 0; r < nr; ++r) {
        const auto& up = upstream[r];
        if (up.is_zero()) continue;
        const std::size_t b = r * static_cast<std::size_t>(n);
        const auto rb = static_cast<Eigen::Index>(b);
        const auto un = static_cast<std::size_t>(n);
        composite_backward<S>(std::span<const S>(f.field.sigma.data() + b, un), std::span<const S>(f.deltas.data() + b, un),
                              std::span<const S>(f.depths.data() + b, un), &f.field.color(rb, 0), &f.canonical(rb, 0),
                              std::span<const S>(f.weights.data() + b, un),
                              std::span<const S>(f.transmittance.data() + b, un), up, sigma_grad.data() + b,
                              &color_grad(rb, 0), &canon_grad(rb, 0));
    }
    canon_grad += canonical_backward(m, f.field, sigma_grad, color_grad, grads);
    // p' = p + flow, so d/dflow = d/dp'.
    motion_backward(m, f.motion, canon_grad, grads);
}

template <typename S>
RenderResult<S> render_ray(const Model<S>& m, const Ray& ray, const RenderOptions& opt) {
    BatchForward<S> f;
    render_forward(m, std::span<const Ray>(&ray, 1), opt, f);
    return f.result(0);
}

struct RenderedView {
    Image color;
    DepthMap depth;
    DepthMap opacity;  // sum of weights; depth is meaningful where this is > 0
};

/// Renders every pixel center of `cam` at frame t. Rows are rendered independently.
template <typename S>
RenderedView render_image(const Model<S>& m, const Camera& cam, int t, const RenderOptions& opt,
                          const RayBounds& bounds, int threads = 1) {
    RenderedView out{Image(cam.width, cam.height), DepthMap(cam.width, cam.height), DepthMap(cam.width, cam.height)};
    parallel_for(cam.height, threads, [&](int y, int) {
        std::vector<Ray> rays;
        rays.reserve(static_cast<std::size_t>(cam.width));
        for (int x = 0; x < cam.width; ++x) rays.push_back(ray_for_pixel(cam, {double(x), double(y)}, t, bounds));
        BatchForward<S> f;
        render_forward(m, std::span<const Ray>(rays), opt, f);
        for (int x = 0; x < cam.width; ++x) {
            for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = static_cast<float>(f.color(x, c));
            out.depth.at(x, y) = static_cast<float>(f.depth[static_cast<std::size_t>(x)]);
            out.opacity.at(x, y) = static_cast<float>(f.opacity[static_cast<std::size_t>(x)]);
        }
    });
    return out;
}

}  // namespace defield
