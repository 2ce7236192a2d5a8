#include "defield/synthscene.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace defield;
using namespace testing_support;

namespace {

Primitive blob(const Vec3<double>& at, double radius, double amplitude) {
    Primitive p;
    p.shape = Primitive::Shape::gaussian;
    p.path.start = at;
    p.size = Vec3<double>::Constant(radius);
    p.amplitude = amplitude;
    p.color = Vec3<double>(0.9, 0.6, 0.3);
    return p;
}

SyntheticScene scene_of(std::vector<Primitive> elems, int frames = 20) {
    SyntheticScene s;
    s.frame.box = Box{Vec3<double>::Constant(-1.5), Vec3<double>::Constant(1.5)};
    s.frame.num_frames = frames;
    s.elements = std::move(elems);
    return s;
}

// A static box on the left and a blob sliding along +x on the right.
SyntheticScene sliding_scene() {
    Primitive box;
    box.shape = Primitive::Shape::box;
    box.path.start = Vec3<double>(-0.7, 0, 0);
    box.size = Vec3<double>::Constant(0.25);
    box.amplitude = 40;
    Primitive b = blob(Vec3<double>(0.2, 0, 0), 0.18, 80);
    b.path.kind = Trajectory::Kind::linear;
    b.path.velocity = Vec3<double>(0.03, 0, 0);
    return scene_of({box, b}, 12);
}

double gauss(const Vec3<double>& p, const Vec3<double>& c, double r, double a) {
    return a * std::exp(-(p - c).squaredNorm() / (2 * r * r));
}

}  // namespace

TEST(SynthScene, DensityFarFromPrimitivesVanishes) {
    const auto s = blob_orbit_scene(60);
    for (int t : {1, 30, 60}) {
        EXPECT_LT(oracle_sigma_color(s, Vec3<double>(1.45, 1.45, 1.45), t).sigma, 1e-6);
        EXPECT_LT(oracle_sigma_color(s, Vec3<double>(-1.45, 1.4, -1.45), t).sigma, 1e-6);
    }
}

TEST(SynthScene, BlobCenterHasPeakDensity) {
    const auto s = scene_of({blob(Vec3<double>(0.2, -0.1, 0.3), 0.2, 37.5)});
    EXPECT_DOUBLE_EQ(oracle_sigma_color(s, Vec3<double>(0.2, -0.1, 0.3), 1).sigma, 37.5);
    EXPECT_NEAR(oracle_sigma_color(s, Vec3<double>(0.4, -0.1, 0.3), 1).sigma, 37.5 * std::exp(-0.5), 1e-12);
}

TEST(SynthScene, OverlappingDensitiesAdd) {
    const Vec3<double> c1(0.1, 0, 0), c2(-0.1, 0.05, 0);
    auto a = blob(c1, 0.2, 10);
    auto b = blob(c2, 0.15, 25);
    b.color = Vec3<double>(0.1, 0.2, 0.9);
    const auto s = scene_of({a, b});
    const Vec3<double> p(0.02, 0.01, 0.05);
    const double da = gauss(p, c1, 0.2, 10), db = gauss(p, c2, 0.15, 25);
    const auto o = oracle_sigma_color(s, p, 1);
    EXPECT_NEAR(o.sigma, da + db, 1e-12);
    EXPECT_NEAR((o.color - (da * a.color + db * b.color) / (da + db)).norm(), 0, 1e-12);
}

TEST(SynthScene, EmptySceneRendersBlack) {
    const auto s = scene_of({});
    const auto cam = look_at_camera({0, 0, -4}, {0, 0, 0}, {0, 1, 0}, 20, 9, 7, 1);
    const auto view = oracle_render(s, cam, 1, 64);
    for (float v : view.color.rgb) ASSERT_EQ(v, 0.0f);
    for (float v : view.opacity.values) ASSERT_EQ(v, 0.0f);
}

TEST(SynthScene, CenteredBlobImageIsSymmetric) {
    const auto s = scene_of({blob(Vec3<double>::Zero(), 0.4, 20)});
    const int n = 33;
    const auto cam = look_at_camera({0, 0, -4}, {0, 0, 0}, {0, 1, 0}, 30, n, n, 1);
    const auto view = oracle_render(s, cam, 1, 256);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = view.color.at(x, y, c);
                ASSERT_NEAR(v, view.color.at(n - 1 - x, y, c), 1e-5);
                ASSERT_NEAR(v, view.color.at(x, n - 1 - y, c), 1e-5);
                ASSERT_NEAR(v, view.color.at(y, x, c), 1e-5);
            }
    EXPECT_GT(view.color.at(n / 2, n / 2, 0), view.color.at(2, 2, 0));
}

TEST(SynthScene, QuadratureConvergedAt512Samples) {
    const auto s = blob_orbit_scene(60);
    const auto cam = arc_rig(3, 24, 24)[1];
    for (int t : {1, 25}) {
        const auto a = oracle_render(s, cam, t, 512);
        const auto b = oracle_render(s, cam, t, 1024);
        double worst = 0;
        for (std::size_t i = 0; i < a.color.rgb.size(); ++i)
            worst = std::max(worst, double(std::abs(a.color.rgb[i] - b.color.rgb[i])));
        EXPECT_LT(worst, 1e-3);
    }
}

TEST(SynthScene, BlobSilhouetteDepthMatchesFinerIntegral) {
    const Vec3<double> c(0.1, -0.05, 0.2);
    const double radius = 0.3, amp = 30;
    const auto s = scene_of({blob(c, radius, amp)});
    const auto cam = look_at_camera({0.4, 0.3, -3.5}, {0, 0, 0}, {0, 1, 0}, 40, 32, 32, 1);
    const auto view = oracle_render(s, cam, 1, 512);
    // Independent midpoint march of the closed-form density at 1024 samples.
    auto fine_depth = [&](const Ray& r) {
        const int n = 1024;
        const double h = (r.far - r.near) / n;
        double trans = 1, depth = 0, prev = r.near;
        for (int i = 0; i < n; ++i) {
            const double z = r.near + (i + 0.5) * h;
            const double a = std::exp(-(z - prev) * gauss(r.at(z), c, radius, amp));
            depth += trans * (1 - a) * z;
            trans *= a;
            prev = z;
        }
        return depth;
    };
    int checked = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const float o = view.opacity.at(x, y);
            if (o < 0.05f || o > 0.95f) continue;
            ++checked;
            const Ray r = ray_for_pixel(cam, {double(x), double(y)}, 1, s.bounds());
            EXPECT_NEAR(view.depth.at(x, y), fine_depth(r), 1e-3) << x << "," << y;
        }
    EXPECT_GT(checked, 10);
}

TEST(SynthScene, OracleFlowClosedForms) {
    const auto s = sliding_scene();
    const Vec3<double> on_blob(0.2, 0, 0);
    EXPECT_EQ(oracle_flow(s, on_blob, 4, 4), Vec3<double>::Zero());
    EXPECT_NEAR((oracle_flow(s, Vec3<double>(0.29, 0.01, 0), 1, 11) - Vec3<double>(0.3, 0, 0)).norm(), 0, 1e-12);
    EXPECT_NEAR((oracle_flow(s, Vec3<double>(0.29, 0.01, 0), 11, 1) - Vec3<double>(-0.3, 0, 0)).norm(), 0, 1e-12);
    EXPECT_EQ(oracle_flow(s, Vec3<double>(-0.7, 0.1, 0), 2, 12), Vec3<double>::Zero());
    const auto orbit = blob_orbit_scene(60);
    const Vec3<double> start = orbit.elements[1].path.at(1);
    const Vec3<double> f = oracle_flow(orbit, start, 1, 60);
    EXPECT_NEAR((f - Vec3<double>(0, 0, 1.6)).norm(), 0, 1e-12);
}

TEST(SynthScene, StaticSceneHasZeroDenseFlow) {
    auto b = blob(Vec3<double>(0.1, 0.1, 0), 0.3, 50);
    const auto s = scene_of({b}, 12);
    const Rig rig = arc_rig(2, 20, 20);
    SynthPriorOptions opt;
    opt.offset = 5;
    opt.sparse_per_pair = 4;
    opt.dense_stride = 2;
    opt.oracle_samples = 128;
    const auto p = synth_priors(s, rig, opt);
    ASSERT_FALSE(p.dense.empty());
    for (const auto& r : p.dense) {
        ASSERT_NEAR(r.xp, r.x, 1e-9);
        ASSERT_NEAR(r.yp, r.y, 1e-9);
    }
}

TEST(SynthScene, DenseFlowOfTranslationIsPinholeShift) {
    // Blob sliding along world x, camera looking down -z: the image shift is
    // f * (right . dx) / z_cam at the tracked surface point.
    const auto s = sliding_scene();
    const Camera cam = look_at_camera({0, 0, 4}, {0, 0, 0}, {0, 1, 0}, 40, 40, 30, 1);
    const Rig rig{cam};
    SynthPriorOptions opt;
    opt.offset = 5;
    opt.sparse_per_pair = 0;
    opt.dense_stride = 2;
    opt.oracle_samples = 256;
    const auto p = synth_priors(s, rig, opt);
    int on_blob = 0;
    for (const auto& r : p.dense) {
        const Ray ray = ray_for_pixel(cam, {r.x, r.y}, r.t, s.bounds());
        const auto o = oracle_ray(s, ray, opt.oracle_samples);
        const Vec3<double> xt = ray.at(o.surface_depth());
        const Vec3<double> dx = Vec3<double>(0.03 * (r.s - r.t), 0, 0);
        if (o.dominant != 1) {
            ASSERT_NEAR(r.xp, r.x, 1e-9);
            continue;
        }
        ++on_blob;
        const double z = (xt - cam.center()).dot(cam.rotation().col(2));
        const Vec3<double> local = cam.rotation().transpose() * dx;
        ASSERT_NEAR(r.xp - r.x, cam.intrinsics(0, 0) * local.x() / z, 1e-6);
        ASSERT_NEAR(r.yp - r.y, cam.intrinsics(1, 1) * local.y() / z, 1e-6);
    }
    EXPECT_GT(on_blob, 10);
}

TEST(SynthScene, CleanSparsePriorsReprojectExactly) {
    const auto s = sliding_scene();
    const Rig rig = arc_rig(3, 32, 24);
    SynthPriorOptions opt;
    opt.offset = 4;
    opt.sparse_per_pair = 6;
    opt.dense_stride = 8;
    opt.oracle_samples = 256;
    const auto p = synth_priors(s, rig, opt);
    ASSERT_GT(p.sparse.size(), 20u);
    for (const auto& r : p.sparse) {
        ASSERT_NE(r.v, r.u);
        ASSERT_EQ(std::abs(r.s - r.t), 4);
        const Camera& cv = rig[static_cast<std::size_t>(r.v - 1)];
        const Ray ray = ray_for_pixel(cv, {r.x, r.y}, r.t, s.bounds());
        const auto o = oracle_ray(s, ray, opt.oracle_samples);
        const Vec3<double> xt = ray.at(o.surface_depth());
        const Vec3<double> xs = xt + oracle_flow(s, xt, r.t, r.s);
        const auto proj = project(rig[static_cast<std::size_t>(r.u - 1)], xs);
        ASSERT_LT(std::hypot(proj.pixel.x - r.xp, proj.pixel.y - r.yp), 1e-3);
    }
    for (const auto& d : p.depth) {
        const Ray ray = ray_for_pixel(rig[static_cast<std::size_t>(d.v - 1)], {d.x, d.y}, d.t, s.bounds());
        ASSERT_NEAR(d.depth, oracle_ray(s, ray, opt.oracle_samples).surface_depth(), 1e-9);
    }
}

TEST(SynthScene, OutliersMoveTheRequestedFraction) {
    const auto s = sliding_scene();
    const Rig rig = arc_rig(2, 32, 24);
    SynthPriorOptions opt;
    opt.offset = 4;
    opt.sparse_per_pair = 8;
    opt.dense_stride = 2;
    opt.oracle_samples = 128;
    const auto clean = synth_priors(s, rig, opt);
    opt.outlier_rate = 0.5;
    opt.outlier_pixels = 5;
    const auto noisy = synth_priors(s, rig, opt);
    ASSERT_EQ(clean.dense.size(), noisy.dense.size());
    std::size_t moved = 0;
    for (std::size_t i = 0; i < clean.dense.size(); ++i)
        moved += std::hypot(clean.dense[i].xp - noisy.dense[i].xp, clean.dense[i].yp - noisy.dense[i].yp) > 1e-9;
    const double frac = double(moved) / double(clean.dense.size());
    EXPECT_NEAR(frac, 0.5, 0.1);
}

TEST(SynthScene, GenerationIsDeterministic) {
    const auto s = sliding_scene();
    const Rig rig = arc_rig(2, 16, 12);
    SynthPriorOptions opt;
    opt.offset = 3;
    opt.sparse_per_pair = 5;
    opt.oracle_samples = 64;
    opt.outlier_rate = 0.3;
    const auto a = synth_priors(s, rig, opt, 1);
    const auto b = synth_priors(s, rig, opt, 3);
    EXPECT_EQ(a.sparse, b.sparse);
    EXPECT_EQ(a.dense, b.dense);
    EXPECT_EQ(a.depth, b.depth);
    opt.seed = 9;
    const auto c = synth_priors(s, rig, opt, 1);
    EXPECT_NE(a.sparse, c.sparse);
}

TEST(SynthScene, SceneJsonRoundTrip) {
    TempDir dir("scene");
    const auto s = blob_orbit_scene(24);
    DatasetOptions opt;
    opt.num_cameras = 2;
    opt.num_frames = 24;
    opt.width = 8;
    opt.height = 6;
    opt.render_samples = 32;
    opt.priors.oracle_samples = 32;
    opt.priors.sparse_per_pair = 2;
    write_dataset(dir.path(), s, arc_rig(2, 8, 6), opt);
    const auto back = load_scene(dir.path());
    ASSERT_EQ(back.elements.size(), s.elements.size());
    for (double t : {1.0, 7.5, 24.0})
        for (const Vec3<double>& p : {Vec3<double>(0.1, 0.2, 0.3), Vec3<double>(-0.8, 0.1, 0)})
            EXPECT_DOUBLE_EQ(oracle_sigma_color(back, p, t).sigma, oracle_sigma_color(s, p, t).sigma);
    EXPECT_TRUE(std::filesystem::exists(dir / "cam_2/frame_24.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "depth_gt/cam_1/frame_1.f32"));
    EXPECT_TRUE(std::filesystem::exists(dir / "priors_sparse.csv"));
}
