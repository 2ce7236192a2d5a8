#pragma once

// Training objectives. Every term is a batch mean so the weights do not
// depend on batch size.
//
//   L_ph = mean ||c - c_gt||^2
//   L_sf = mean ||P(t,v) - P(s,u)||^2   over cross-camera matches
//   L_df = same formula over same-camera matches
//   L_sd = mean (z - z_prior)^2         (depth-prior baseline only)
//   L    = L_ph + l_sf L_sf + l_df L_df + l_sd L_sd
//
// where P = sum_i w_i p'_i is the ray's expected point in the canonical volume.

#include "defield/renderer.hpp"

#include <span>
#include <vector>

namespace defield {

struct LossWeights {
    double sparse_flow = 1.0;
    double dense_flow = 1.0;
    double sparse_depth = 0.0;
};

struct LossBreakdown {
    double photometric = 0;
    double sparse_flow = 0;
    double dense_flow = 0;
    double sparse_depth = 0;
    double total = 0;
    std::size_t photometric_count = 0;
    std::size_t sparse_flow_count = 0;
    std::size_t dense_flow_count = 0;
    std::size_t sparse_depth_count = 0;
};

/// Squared euclidean color error of one pixel.
template <typename S>
S photometric_loss(const Vec3<S>& rendered, const Vec3<S>& truth) {
    return (rendered - truth).squaredNorm();
}

/// Mean over a batch of pixels.
template <typename S>
S photometric_loss(std::span<const Vec3<S>> rendered, std::span<const Vec3<S>> truth) {
    if (rendered.size() != truth.size()) throw std::invalid_argument("photometric batch size mismatch");
    if (rendered.empty()) return S(0);
    S sum = 0;
    for (std::size_t i = 0; i < rendered.size(); ++i) sum += photometric_loss(rendered[i], truth[i]);
    return sum / S(rendered.size());
}

/// sum_i w_i p'_i: the pixel's location in the canonical volume.
template <typename S>
Vec3<S> canonical_point(const RenderResult<S>& r) {
    Vec3<S> p = Vec3<S>::Zero();
    for (std::size_t i = 0; i < r.weights.size(); ++i) p += r.weights[i] * r.canonical_points[i];
    return p;
}

/// Flow loss of one matched pair, from the two canonical points.
template <typename S>
S flow_loss(const Vec3<S>& canonical_a, const Vec3<S>& canonical_b) {
    return (canonical_a - canonical_b).squaredNorm();
}

template <typename S>
S flow_loss(const RenderResult<S>& a, const RenderResult<S>& b) {
    return flow_loss(canonical_point(a), canonical_point(b));
}

/// d(flow_loss)/d(canonical_a); the gradient for b is the negation.
template <typename S>
Vec3<S> flow_loss_grad(const Vec3<S>& canonical_a, const Vec3<S>& canonical_b) {
    return S(2) * (canonical_a - canonical_b);
}

template <typename S>
S sparse_depth_loss(S rendered, S prior) {
    const S d = rendered - prior;
    return d * d;
}

/// Mean over entries whose mask is set; zero when nothing is supervised.
template <typename S>
S sparse_depth_loss(std::span<const S> rendered, std::span<const S> prior, std::span<const std::uint8_t> mask) {
    S sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        sum += sparse_depth_loss(rendered[i], prior[i]);
        ++n;
    }
    return n ? sum / S(n) : S(0);
}

/// Fills the total from the individual terms.
inline LossBreakdown total_loss(LossBreakdown terms, const LossWeights& w) {
    terms.total = terms.photometric + w.sparse_flow * terms.sparse_flow + w.dense_flow * terms.dense_flow +
                  w.sparse_depth * terms.sparse_depth;
    return terms;
}

inline LossBreakdown total_loss(double photometric, double sparse_flow, double dense_flow, const LossWeights& w,
                                double sparse_depth = 0.0) {
    LossBreakdown b;
    b.photometric = photometric;
    b.sparse_flow = sparse_flow;
    b.dense_flow = dense_flow;
    b.sparse_depth = sparse_depth;
    return total_loss(b, w);
}

inline std::string loss_csv_header() { return "iter,L_ph,L_sf,L_df,L_sd,L_total"; }

inline std::string loss_csv_row(std::uint64_t iter, const LossBreakdown& b) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%.6g,%.6g,%.6g,%.6g,%.6g", static_cast<unsigned long long>(iter), b.photometric,
                  b.sparse_flow, b.dense_flow, b.sparse_depth, b.total);
    return buf;
}

}  // namespace defield
