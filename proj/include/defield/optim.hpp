#pragma once

#include "defield/common.hpp"

#include <numbers>
#include <span>

namespace defield {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam step. `step` counts updates and starts at 1.
template <typename S>
void adam_update(std::span<S> param, std::span<const S> grad, std::span<S> m, std::span<S> v, double rate,
                 const AdamConfig& cfg, std::uint64_t step) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    const S a = static_cast<S>(rate / c1);
    const S inv_c2 = static_cast<S>(1.0 / c2);
    const S eps = static_cast<S>(cfg.eps);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const S g = grad[i];
        m[i] = b1 * m[i] + (S(1) - b1) * g;
        v[i] = b2 * v[i] + (S(1) - b2) * g * g;
        param[i] -= a * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
}

/// Multiplier on the base rate: linear warmup, then cosine decay to `final_factor`.
inline double lr_factor(std::uint64_t iteration, std::uint64_t total, std::uint64_t warmup, double final_factor) {
    if (iteration < warmup) return static_cast<double>(iteration + 1) / static_cast<double>(warmup);
    if (total <= warmup + 1) return 1.0;
    const double progress =
        std::min(1.0, static_cast<double>(iteration - warmup) / static_cast<double>(total - warmup - 1));
    return final_factor + (1.0 - final_factor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace defield
