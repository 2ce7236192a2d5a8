#pragma once

#include "defield/image.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace defield {

inline void require_same_size(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("image sizes differ");
    if (a.width == 0 || a.height == 0) throw std::invalid_argument("empty image");
}

/// Peak signal-to-noise ratio for values in [0, 1]. +inf for identical images.
inline double psnr(const Image& a, const Image& b) {
    require_same_size(a, b);
    double se = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.rgb.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_taps(const SsimOptions& o) {
    const int r = o.window / 2;
    std::vector<double> w(static_cast<std::size_t>(o.window));
    for (int i = -r; i <= r; ++i) w[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (o.sigma * o.sigma));
    return w;
}

// Separable Gaussian filter; taps falling outside the image are dropped and
// the remaining weights renormalized.
inline std::vector<double> blur(const std::vector<double>& src, int w, int h, const std::vector<double>& taps) {
    const int r = static_cast<int>(taps.size()) / 2;
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0, n = 0;
            for (int k = -r; k <= r; ++k) {
                const int xx = x + k;
                if (xx < 0 || xx >= w) continue;
                const double t = taps[static_cast<std::size_t>(k + r)];
                s += t * src[static_cast<std::size_t>(y) * w + xx];
                n += t;
            }
            tmp[static_cast<std::size_t>(y) * w + x] = s / n;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0, n = 0;
            for (int k = -r; k <= r; ++k) {
                const int yy = y + k;
                if (yy < 0 || yy >= h) continue;
                const double t = taps[static_cast<std::size_t>(k + r)];
                s += t * tmp[static_cast<std::size_t>(yy) * w + x];
                n += t;
            }
            out[static_cast<std::size_t>(y) * w + x] = s / n;
        }
    return out;
}

}  // namespace detail

/// Mean structural similarity over pixels and channels, Gaussian window.
inline double ssim(const Image& a, const Image& b, const SsimOptions& o = {}) {
    require_same_size(a, b);
    const int w = a.width, h = a.height;
    const auto taps = detail::gaussian_taps(o);
    const double c1 = (o.k1) * (o.k1), c2 = (o.k2) * (o.k2);
    const std::size_t n = static_cast<std::size_t>(w) * h;
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a.rgb[3 * i + c];
            y[i] = b.rgb[3 * i + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = detail::blur(x, w, h, taps), my = detail::blur(y, w, h, taps);
        const auto sxx = detail::blur(xx, w, h, taps), syy = detail::blur(yy, w, h, taps),
                   sxy = detail::blur(xy, w, h, taps);
        for (std::size_t i = 0; i < n; ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
    }
    return total / (3.0 * static_cast<double>(n));
}

/// Mean absolute depth error over pixels where `mask` (ground-truth opacity) >= threshold.
/// Returns NaN when no pixel qualifies.
inline double depth_mae(const DepthMap& pred, const DepthMap& truth, const DepthMap& mask, double threshold = 0.5) {
    if (pred.width != truth.width || pred.height != truth.height || mask.width != truth.width ||
        mask.height != truth.height)
        throw std::invalid_argument("depth map sizes differ");
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        if (mask.values[i] < threshold) continue;
        sum += std::abs(static_cast<double>(pred.values[i]) - truth.values[i]);
        ++n;
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

struct MetricReport {
    double psnr = 0;
    double ssim = 0;
    double depth_mae = 0;
    std::size_t views = 0;

    void add(double p, double s, double d) {
        psnr += p;
        ssim += s;
        depth_mae += d;
        ++views;
    }
    MetricReport mean() const {
        if (!views) return *this;
        const double k = 1.0 / static_cast<double>(views);
        return {psnr * k, ssim * k, depth_mae * k, views};
    }
};

}  // namespace defield
