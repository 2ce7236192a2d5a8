#pragma once

// Multi-resolution factorized plane grids.
//
// A point in the unit cube (3D) or unit tesseract (4D, last axis is time) is
// projected onto every plane of a level, each plane is sampled bilinearly, and
// the per-plane features are multiplied elementwise. Levels are concatenated.

#include "defield/common.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace defield {

enum class GridKind { spatial3, spatiotemporal4 };

inline int grid_dims(GridKind kind) { return kind == GridKind::spatial3 ? 3 : 4; }

inline constexpr char axis_name(int axis) { return "xyzt"[axis]; }

/// Plane axis pairs in canonical order: xy, yz, xz, then xt, yt, zt.
inline std::vector<std::array<int, 2>> plane_axes(GridKind kind) {
    std::vector<std::array<int, 2>> axes{{0, 1}, {1, 2}, {0, 2}};
    if (kind == GridKind::spatiotemporal4) {
        axes.push_back({0, 3});
        axes.push_back({1, 3});
        axes.push_back({2, 3});
    }
    return axes;
}

inline constexpr int kMaxPlaneFeatures = 64;
inline constexpr int kMaxPlanes = 6;

template <typename S>
struct Plane {
    int axis_a = 0;
    int axis_b = 1;
    int res_a = 2;
    int res_b = 2;
    int features = 1;
    std::vector<S> data;  // [res_a][res_b][features]

    std::string axes_name() const { return {axis_name(axis_a), axis_name(axis_b)}; }
    bool is_temporal() const { return axis_a == 3 || axis_b == 3; }
    std::size_t node(int ia, int ib) const {
        return (static_cast<std::size_t>(ia) * static_cast<std::size_t>(res_b) + static_cast<std::size_t>(ib)) *
               static_cast<std::size_t>(features);
    }
    S& at(int ia, int ib, int f) { return data[node(ia, ib) + static_cast<std::size_t>(f)]; }
    const S& at(int ia, int ib, int f) const { return data[node(ia, ib) + static_cast<std::size_t>(f)]; }
};

/// Cell lookup for one bilinear query. Weights w00..w11 address nodes
/// (i, j), (i+1, j), (i, j+1), (i+1, j+1).
template <typename S>
struct BilinearCell {
    int i = 0;
    int j = 0;
    S fa = 0;
    S fb = 0;
    bool clamped_a = false;
    bool clamped_b = false;
};

namespace detail {
inline std::atomic<bool>& clamp_logged() {
    static std::atomic<bool> flag{false};
    return flag;
}

template <typename S>
inline void locate(S u, int res, int& cell, S& frac, bool& clamped) {
    clamped = !(u >= S(0) && u <= S(1));
    if (clamped) {
        log::warn_once(clamp_logged(), "grid query outside the unit cube; clamping (reported once)");
        u = std::clamp(u, S(0), S(1));
        if (!(u == u)) u = S(0);
    }
    const S x = u * S(res - 1);
    cell = std::min(static_cast<int>(x), res - 2);
    frac = x - S(cell);
}
}  // namespace detail

template <typename S>
BilinearCell<S> locate_cell(const Plane<S>& plane, S ua, S ub) {
    BilinearCell<S> c;
    detail::locate(ua, plane.res_a, c.i, c.fa, c.clamped_a);
    detail::locate(ub, plane.res_b, c.j, c.fb, c.clamped_b);
    return c;
}

/// Bilinear sample of `plane` at uv in [0,1]^2 (clamped). Writes `plane.features` values.
template <typename S>
void interpolate_plane(const Plane<S>& plane, S ua, S ub, S* out) {
    const auto c = locate_cell(plane, ua, ub);
    const S w00 = (S(1) - c.fa) * (S(1) - c.fb), w10 = c.fa * (S(1) - c.fb);
    const S w01 = (S(1) - c.fa) * c.fb, w11 = c.fa * c.fb;
    const S* n00 = &plane.data[plane.node(c.i, c.j)];
    const S* n10 = &plane.data[plane.node(c.i + 1, c.j)];
    const S* n01 = &plane.data[plane.node(c.i, c.j + 1)];
    const S* n11 = &plane.data[plane.node(c.i + 1, c.j + 1)];
    for (int f = 0; f < plane.features; ++f) out[f] = w00 * n00[f] + w10 * n10[f] + w01 * n01[f] + w11 * n11[f];
}

template <typename S>
std::vector<S> interpolate_plane(const Plane<S>& plane, S ua, S ub) {
    std::vector<S> out(static_cast<std::size_t>(plane.features));
    interpolate_plane(plane, ua, ub, out.data());
    return out;
}

struct GridSpec {
    GridKind kind = GridKind::spatial3;
    std::vector<int> spatial_res;  // per level, nodes along x, y, z
    std::vector<int> time_res;     // per level, nodes along t (spatiotemporal4 only)
    int features = 8;              // per level
    double init_lo = -0.2;         // spatial planes ~ U[init_lo, init_hi]
    double init_hi = 0.2;
};

template <typename S>
struct GridLevel {
    int features = 0;
    std::vector<Plane<S>> planes;
};

template <typename S>
class PlaneGridSet {
public:
    PlaneGridSet() = default;

    /// Allocates planes with zero data. Call `initialize` for the standard init.
    explicit PlaneGridSet(const GridSpec& spec) : kind_(spec.kind) {
        if (spec.spatial_res.empty()) throw std::invalid_argument("grid needs at least one level");
        if (spec.features < 1 || spec.features > kMaxPlaneFeatures)
            throw std::invalid_argument("grid feature_dim out of range");
        if (kind_ == GridKind::spatiotemporal4 && spec.time_res.size() != spec.spatial_res.size())
            throw std::invalid_argument("spatiotemporal grid needs one time resolution per level");
        for (std::size_t l = 0; l < spec.spatial_res.size(); ++l) {
            GridLevel<S> level;
            level.features = spec.features;
            for (auto ax : plane_axes(kind_)) {
                Plane<S> p;
                p.axis_a = ax[0];
                p.axis_b = ax[1];
                p.res_a = ax[0] == 3 ? spec.time_res[l] : spec.spatial_res[l];
                p.res_b = ax[1] == 3 ? spec.time_res[l] : spec.spatial_res[l];
                if (p.res_a < 2 || p.res_b < 2) throw std::invalid_argument("plane resolution must be >= 2");
                p.features = spec.features;
                p.data.assign(static_cast<std::size_t>(p.res_a) * p.res_b * p.features, S(0));
                level.planes.push_back(std::move(p));
            }
            levels_.push_back(std::move(level));
        }
    }

    /// Spatial planes uniform in [lo, hi]; planes containing t set to exactly 1.
    void initialize(std::uint64_t seed, double lo, double hi) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& level : levels_)
            for (auto& p : level.planes)
                for (auto& v : p.data) v = p.is_temporal() ? S(1) : static_cast<S>(dist(rng));
    }

    GridKind kind() const { return kind_; }
    int dims() const { return grid_dims(kind_); }
    const std::vector<GridLevel<S>>& levels() const { return levels_; }
    std::vector<GridLevel<S>>& levels() { return levels_; }

    int output_dim() const {
        int n = 0;
        for (const auto& l : levels_) n += l.features;
        return n;
    }

    PlaneGridSet zeros_like() const {
        PlaneGridSet g = *this;
        for (auto& l : g.levels_)
            for (auto& p : l.planes) std::fill(p.data.begin(), p.data.end(), S(0));
        return g;
    }

    template <typename T>
    PlaneGridSet<T> cast() const {
        PlaneGridSet<T> g;
        g.kind_ = kind_;
        for (const auto& l : levels_) {
            GridLevel<T> nl;
            nl.features = l.features;
            for (const auto& p : l.planes) {
                Plane<T> np{p.axis_a, p.axis_b, p.res_a, p.res_b, p.features, {}};
                np.data.assign(p.data.begin(), p.data.end());
                nl.planes.push_back(std::move(np));
            }
            g.levels_.push_back(std::move(nl));
        }
        return g;
    }

    /// Hadamard product of the planes per level, levels concatenated. `point` has dims() coordinates in [0,1].
    void combine(const S* point, S* out) const {
        std::array<S, kMaxPlaneFeatures> tmp{};
        int offset = 0;
        for (const auto& level : levels_) {
            S* h = out + offset;
            std::fill(h, h + level.features, S(1));
            for (const auto& p : level.planes) {
                interpolate_plane(p, point[p.axis_a], point[p.axis_b], tmp.data());
                for (int f = 0; f < level.features; ++f) h[f] *= tmp[static_cast<std::size_t>(f)];
            }
            offset += level.features;
        }
    }

    std::vector<S> combine(std::span<const S> point) const {
        check_point(point.size());
        std::vector<S> out(static_cast<std::size_t>(output_dim()));
        combine(point.data(), out.data());
        return out;
    }

    /// Accumulates d(out)/d(planes) . upstream into `grads` (same shapes as *this),
    /// touching at most four nodes per plane, and adds d(out)/d(point) . upstream
    /// to `point_grad` when non-null. Clamped coordinates receive zero point gradient.
    void combine_backward(const S* point, const S* upstream, PlaneGridSet& grads, S* point_grad) const {
        std::array<std::array<S, kMaxPlaneFeatures>, kMaxPlanes> value{};
        std::array<BilinearCell<S>, kMaxPlanes> cells{};
        std::array<S, kMaxPlaneFeatures> prefix{}, suffix{};
        int offset = 0;
        for (std::size_t l = 0; l < levels_.size(); ++l) {
            const auto& level = levels_[l];
            const int nf = level.features;
            const int np = static_cast<int>(level.planes.size());
            const S* g = upstream + offset;
            offset += nf;
            bool any = false;
            for (int f = 0; f < nf; ++f) any |= g[f] != S(0);
            if (!any) continue;

            for (int c = 0; c < np; ++c) {
                const auto& p = level.planes[static_cast<std::size_t>(c)];
                cells[static_cast<std::size_t>(c)] = locate_cell(p, point[p.axis_a], point[p.axis_b]);
                interpolate_plane(p, point[p.axis_a], point[p.axis_b], value[static_cast<std::size_t>(c)].data());
            }
            // suffix[c] holds the product of planes after c; prefix accumulates the ones before.
            std::array<std::array<S, kMaxPlaneFeatures>, kMaxPlanes> after{};
            for (int f = 0; f < nf; ++f) suffix[static_cast<std::size_t>(f)] = S(1);
            for (int c = np - 1; c >= 0; --c) {
                after[static_cast<std::size_t>(c)] = suffix;
                for (int f = 0; f < nf; ++f)
                    suffix[static_cast<std::size_t>(f)] *= value[static_cast<std::size_t>(c)][static_cast<std::size_t>(f)];
            }
            for (int f = 0; f < nf; ++f) prefix[static_cast<std::size_t>(f)] = S(1);

            for (int c = 0; c < np; ++c) {
                const auto uc = static_cast<std::size_t>(c);
                const auto& p = level.planes[uc];
                auto& gp = grads.levels_[l].planes[uc];
                const auto& cell = cells[uc];
                std::array<S, kMaxPlaneFeatures> gc{};
                for (int f = 0; f < nf; ++f) {
                    const auto uf = static_cast<std::size_t>(f);
                    gc[uf] = g[f] * prefix[uf] * after[uc][uf];
                    prefix[uf] *= value[uc][uf];
                }
                const S w00 = (S(1) - cell.fa) * (S(1) - cell.fb), w10 = cell.fa * (S(1) - cell.fb);
                const S w01 = (S(1) - cell.fa) * cell.fb, w11 = cell.fa * cell.fb;
                const std::size_t i00 = p.node(cell.i, cell.j), i10 = p.node(cell.i + 1, cell.j);
                const std::size_t i01 = p.node(cell.i, cell.j + 1), i11 = p.node(cell.i + 1, cell.j + 1);
                S* d = gp.data.data();
                for (int f = 0; f < nf; ++f) {
                    const S v = gc[static_cast<std::size_t>(f)];
                    d[i00 + f] += w00 * v;
                    d[i10 + f] += w10 * v;
                    d[i01 + f] += w01 * v;
                    d[i11 + f] += w11 * v;
                }
                if (point_grad) {
                    const S* n00 = &p.data[i00];
                    const S* n10 = &p.data[i10];
                    const S* n01 = &p.data[i01];
                    const S* n11 = &p.data[i11];
                    S da = 0, db = 0;
                    for (int f = 0; f < nf; ++f) {
                        const S v = gc[static_cast<std::size_t>(f)];
                        da += v * ((S(1) - cell.fb) * (n10[f] - n00[f]) + cell.fb * (n11[f] - n01[f]));
                        db += v * ((S(1) - cell.fa) * (n01[f] - n00[f]) + cell.fa * (n11[f] - n10[f]));
                    }
                    if (!cell.clamped_a) point_grad[p.axis_a] += da * S(p.res_a - 1);
                    if (!cell.clamped_b) point_grad[p.axis_b] += db * S(p.res_b - 1);
                }
            }
        }
    }

    void check_point(std::size_t n) const {
        if (static_cast<int>(n) != dims())
            throw std::invalid_argument("point dimensionality " + std::to_string(n) + " does not match grid (" +
                                        std::to_string(dims()) + ")");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : levels_)
            for (const auto& p : l.planes) n += p.data.size();
        return n;
    }

private:
    template <typename>
    friend class PlaneGridSet;

    GridKind kind_ = GridKind::spatial3;
    std::vector<GridLevel<S>> levels_;
};

}  // namespace defield
