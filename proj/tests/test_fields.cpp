#include "defield/fields.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace defield;
using namespace testing_support;

TEST(Fields, IdentityDeformationAtInit) {
    ModelConfig cfg = mini_config();
    cfg.grid_init_lo = 0.1;
    cfg.grid_init_hi = 0.5;
    const auto m = make_model<double>(cfg, unit_frame(9));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 50; ++i) {
        const Vec3<double> p(u(rng), u(rng), u(rng));
        for (int t : {1, 4, 9}) ASSERT_EQ(flow(m, p, t), Vec3<double>::Zero());
    }
}

TEST(Fields, MotionMatchesLayerByLayerOracle) {
    auto m = make_model<double>(mini_config(), unit_frame(5));
    randomize(m, 2);
    const Vec3<double> p(0.3, -0.45, 0.7);
    const int t = 4;
    const std::vector<double> q{(0.3 + 1) / 2, (-0.45 + 1) / 2, (0.7 + 1) / 2, 3.0 / 4.0};
    const auto feat = m.motion.grid.combine(q);
    const VectorX<double> expect = m.motion.mlp(Eigen::Map<const VectorX<double>>(feat.data(), static_cast<Eigen::Index>(feat.size())));
    EXPECT_NEAR((flow(m, p, t) - expect).norm(), 0, 1e-13);
}

TEST(Fields, CanonicalMatchesLayerByLayerOracle) {
    auto m = make_model<double>(mini_config(), unit_frame(5));
    randomize(m, 3);
    const Vec3<double> p(-0.2, 0.15, 0.6);
    const Vec3<double> d = Vec3<double>(0.3, -0.4, 0.8).normalized();
    const int t = 2;
    const std::vector<double> q{0.4, 0.575, 0.8};
    const auto latent = m.canonical.grid.combine(q);
    std::vector<double> x(latent.begin() + 1, latent.end());
    const auto denc = Encoding{2, true}.encode(std::vector<double>{d.x(), d.y(), d.z()});
    const auto tenc = Encoding{2, true}.encode(std::vector<double>{0.25});
    x.insert(x.end(), denc.begin(), denc.end());
    x.insert(x.end(), tenc.begin(), tenc.end());
    const VectorX<double> logits = m.canonical.color_mlp(Eigen::Map<const VectorX<double>>(x.data(), static_cast<Eigen::Index>(x.size())));
    const auto s = query_canonical(m, p, d, t);
    EXPECT_NEAR(s.sigma, std::log1p(std::exp(latent[0])), 1e-13);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s.color[c], 1 / (1 + std::exp(-logits[c])), 1e-13);
}

TEST(Fields, DensityVanishesForVeryNegativeLatent) {
    auto m = make_model<double>(mini_config(), unit_frame(5));
    for (auto& p : m.canonical.grid.levels()[0].planes)
        for (int ia = 0; ia < p.res_a; ++ia)
            for (int ib = 0; ib < p.res_b; ++ib) p.at(ia, ib, 0) = 1.0;
    auto& first = m.canonical.grid.levels()[0].planes[0];
    for (int ia = 0; ia < first.res_a; ++ia)
        for (int ib = 0; ib < first.res_b; ++ib) first.at(ia, ib, 0) = -200.0;
    const auto s = query_canonical(m, Vec3<double>(0.1, 0.2, 0.3), Vec3<double>(0, 0, 1), 1);
    EXPECT_LT(s.sigma, 1e-80);
    EXPECT_GE(s.sigma, 0.0);
}

TEST(Fields, ZeroColorHeadGivesGray) {
    auto m = make_model<double>(mini_config(), unit_frame(5));
    for (auto& l : m.canonical.color_mlp.layers()) {
        l.weight.setZero();
        l.bias.setZero();
    }
    const auto s = query_canonical(m, Vec3<double>(0.5, -0.2, 0.1), Vec3<double>(1, 0, 0), 3);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(s.color[c], 0.5);
}

TEST(Fields, TimeColumnsOfColorHeadStartAtZero) {
    const auto m = make_model<float>(ModelConfig{}, unit_frame(60));
    const auto& w0 = m.canonical.color_mlp.layers().front().weight;
    const int tdim = m.canonical.time_encoding.output_dim(1);
    EXPECT_EQ(w0.rightCols(tdim).cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_GT(w0.leftCols(w0.cols() - tdim).cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ(m.motion.mlp.layers().back().weight.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Fields, DefaultTimeResolutionFollowsFrameCount) {
    const auto m = make_model<float>(ModelConfig{}, unit_frame(60));
    const auto& levels = m.motion.grid.levels();
    ASSERT_EQ(levels.size(), 2u);
    EXPECT_EQ(levels[0].planes[3].res_b, 15);
    EXPECT_EQ(levels[1].planes[3].res_b, 30);
    EXPECT_EQ(levels[1].planes[0].res_a, 64);
}

TEST(Fields, ParameterNamesUniqueAndOrdered) {
    const auto m = make_model<float>(mini_config(), unit_frame(5));
    std::vector<std::string> names;
    std::size_t total = 0;
    m.for_each_param([&](const std::string& n, auto span, const auto& dims) {
        names.push_back(n);
        std::size_t prod = 1;
        for (auto d : dims) prod *= d;
        EXPECT_EQ(prod, span.size()) << n;
        total += span.size();
    });
    EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
    EXPECT_EQ(names.front().substr(0, 2), "Gf");
    EXPECT_EQ(names.back().substr(0, 2), "Ms");
    EXPECT_EQ(total, m.parameter_count());
}

TEST(Fields, CanonicalBackwardMatchesFiniteDifferences) {
    auto m = make_model<double>(mini_config(), unit_frame(5));
    randomize(m, 4);
    MatrixX<double> pts(3, 3), dirs(3, 3);
    pts << 0.11, -0.32, 0.47, -0.61, 0.23, 0.09, 0.38, 0.52, -0.71;
    dirs << 0, 0, 1, 0.6, 0, 0.8, 0, -0.6, 0.8;
    const std::vector<int> times{1, 3, 5};
    const VectorX<double> a = (VectorX<double>(3) << 0.7, -1.1, 0.4).finished();
    MatrixX<double> b(3, 3);
    b << 0.2, -0.5, 0.9, 1.3, 0.1, -0.7, -0.4, 0.6, 0.3;
    auto objective = [&]() {
        CanonicalEval<double> ev;
        canonical_forward(m, pts, dirs, std::span<const int>(times), ev);
        return a.dot(ev.sigma) + (b.array() * ev.color.array()).sum();
    };
    CanonicalEval<double> ev;
    canonical_forward(m, pts, dirs, std::span<const int>(times), ev);
    ModelGrads<double> g(m);
    const MatrixX<double> pg = canonical_backward(m, ev, a, b, g);
    double max_rel = 0;
    const auto bad = finite_difference_check(m, objective, flatten(g.g), 1e-4, 1e-4, 1e-9, &max_rel);
    EXPECT_TRUE(bad.empty()) << bad.size() << " mismatches, worst relative " << max_rel;
    for (Eigen::Index r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) {
            const double keep = pts(r, k);
            pts(r, k) = keep + 1e-5;
            const double up = objective();
            pts(r, k) = keep - 1e-5;
            const double down = objective();
            pts(r, k) = keep;
            const double fd = (up - down) / 2e-5;
            EXPECT_NEAR(pg(r, k), fd, 1e-4 * std::max(1.0, std::abs(fd)));
        }
}

TEST(Fields, MotionBackwardMatchesFiniteDifferences) {
    auto m = make_model<double>(mini_config(), unit_frame(5));
    randomize(m, 5);
    MatrixX<double> pts(2, 3);
    pts << 0.11, -0.32, 0.47, -0.61, 0.23, 0.09;
    const std::vector<int> times{2, 4};
    MatrixX<double> up(2, 3);
    up << 0.5, -0.3, 0.8, -1.2, 0.4, 0.1;
    auto objective = [&]() {
        MotionEval<double> ev;
        motion_forward(m, pts, std::span<const int>(times), ev);
        return (ev.flow.array() * up.array()).sum();
    };
    MotionEval<double> ev;
    motion_forward(m, pts, std::span<const int>(times), ev);
    ModelGrads<double> g(m);
    motion_backward(m, ev, up, g);
    double max_rel = 0;
    const auto bad = finite_difference_check(m, objective, flatten(g.g), 1e-4, 1e-4, 1e-9, &max_rel);
    EXPECT_TRUE(bad.empty()) << bad.size() << " mismatches, worst relative " << max_rel;
}

TEST(Fields, ZeroUpstreamGivesZeroGradients) {
    auto m = make_model<double>(mini_config(), unit_frame(5));
    randomize(m, 6);
    MatrixX<double> pts(2, 3), dirs(2, 3);
    pts << 0.1, 0.2, 0.3, -0.4, 0.5, -0.6;
    dirs << 0, 0, 1, 1, 0, 0;
    const std::vector<int> times{1, 2};
    CanonicalEval<double> ev;
    canonical_forward(m, pts, dirs, std::span<const int>(times), ev);
    ModelGrads<double> g(m);
    const MatrixX<double> pg = canonical_backward(m, ev, VectorX<double>(VectorX<double>::Zero(2)), MatrixX<double>(MatrixX<double>::Zero(2, 3)), g);
    for (double v : flatten(g.g)) ASSERT_EQ(v, 0.0);
    EXPECT_EQ(pg.cwiseAbs().maxCoeff(), 0.0);
}
