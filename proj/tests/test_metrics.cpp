#include "defield/metrics.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace defield;

namespace {

Image random_image(int w, int h, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    Image img(w, h);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(lo, hi);
    for (auto& v : img.rgb) v = u(rng);
    return img;
}

Image filled(int w, int h, float v) {
    Image img(w, h);
    std::fill(img.rgb.begin(), img.rgb.end(), v);
    return img;
}

// Per-pixel window sums with the Gaussian truncated at the border and renormalized.
double ssim_bruteforce(const Image& a, const Image& b) {
    const int r = 5;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                double wsum = 0, mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int xx = x + dx, yy = y + dy;
                        if (xx < 0 || yy < 0 || xx >= a.width || yy >= a.height) continue;
                        const double w = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                        const double p = a.at(xx, yy, c), q = b.at(xx, yy, c);
                        wsum += w;
                        mx += w * p;
                        my += w * q;
                        sxx += w * p * p;
                        syy += w * q * q;
                        sxy += w * p * q;
                    }
                mx /= wsum;
                my /= wsum;
                const double vx = sxx / wsum - mx * mx, vy = syy / wsum - my * my, cov = sxy / wsum - mx * my;
                total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
    return total / (3.0 * a.width * a.height);
}

}  // namespace

TEST(Metrics, PsnrIdenticalIsInfinite) {
    const auto a = random_image(8, 6, 1);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_GT(psnr(a, a), 0);
}

TEST(Metrics, PsnrHandValue) {
    // Uniform error 0.1 gives MSE 0.01 and 20 dB.
    EXPECT_NEAR(psnr(filled(5, 4, 0.5f), filled(5, 4, 0.6f)), 20.0, 1e-5);
    EXPECT_NEAR(psnr(filled(5, 4, 0.0f), filled(5, 4, 1.0f)), 0.0, 1e-9);
}

TEST(Metrics, PsnrMatchesDirectFormula) {
    const auto a = random_image(13, 7, 2), b = random_image(13, 7, 3);
    double se = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) se += std::pow(double(a.rgb[i]) - b.rgb[i], 2);
    EXPECT_NEAR(psnr(a, b), -10 * std::log10(se / double(a.rgb.size())), 1e-9);
    EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
    EXPECT_THROW(psnr(a, random_image(12, 7, 3)), std::invalid_argument);
}

TEST(Metrics, SsimIdenticalIsOne) {
    const auto a = random_image(16, 12, 4);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Metrics, SsimOfInvertedImageIsNegative) {
    const auto a = random_image(16, 16, 5);
    Image b = a;
    for (auto& v : b.rgb) v = 1.0f - v;
    EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Metrics, SsimMatchesWindowedOracle) {
    for (std::uint64_t seed : {6u, 7u}) {
        const auto a = random_image(8, 8, seed), b = random_image(8, 8, seed + 10);
        EXPECT_NEAR(ssim(a, b), ssim_bruteforce(a, b), 1e-9);
    }
    const auto a = random_image(20, 14, 8);
    Image b = a;
    std::mt19937_64 rng(9);
    std::normal_distribution<float> n(0, 0.05f);
    for (auto& v : b.rgb) v += n(rng);
    EXPECT_NEAR(ssim(a, b), ssim_bruteforce(a, b), 1e-9);
}

TEST(Metrics, SsimSymmetric) {
    const auto a = random_image(15, 11, 10), b = random_image(15, 11, 11);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-14);
}

TEST(Metrics, SsimStableUnderCommonLuminanceShift) {
    // The same offset added to both images only moves the C1 balance of the luminance term.
    const auto a = random_image(24, 24, 12, 0.3f, 0.65f);
    Image b = a;
    std::mt19937_64 rng(14);
    std::normal_distribution<float> n(0, 0.05f);
    for (auto& v : b.rgb) v += n(rng);
    Image a2 = a, b2 = b;
    for (auto& v : a2.rgb) v += 0.05f;
    for (auto& v : b2.rgb) v += 0.05f;
    EXPECT_LT(std::abs(ssim(a, b) - ssim(a2, b2)), 1e-3);
}

TEST(Metrics, DepthMaeHandValues) {
    DepthMap truth(4, 3), mask(4, 3);
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<float> u(1, 5);
    for (auto& v : truth.values) v = u(rng);
    std::fill(mask.values.begin(), mask.values.end(), 1.0f);
    EXPECT_EQ(depth_mae(truth, truth, mask), 0.0);
    DepthMap shifted = truth;
    for (auto& v : shifted.values) v += 0.3f;
    EXPECT_NEAR(depth_mae(shifted, truth, mask), 0.3, 1e-6);
    EXPECT_NEAR(depth_mae(shifted, truth, mask), depth_mae(truth, shifted, mask), 1e-12);
}

TEST(Metrics, DepthMaeIgnoresBackground) {
    DepthMap truth(2, 2), pred(2, 2), mask(2, 2);
    truth.values = {1, 2, 3, 4};
    pred.values = {1.5, 2, 100, 4};
    mask.values = {1, 0.9f, 0.2f, 0.5f};
    EXPECT_NEAR(depth_mae(pred, truth, mask), 0.5 / 3, 1e-7);
    std::fill(mask.values.begin(), mask.values.end(), 0.0f);
    EXPECT_TRUE(std::isnan(depth_mae(pred, truth, mask)));
}
