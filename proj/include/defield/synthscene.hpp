#pragma once

// Procedural dynamic scenes with closed-form density, color and motion.
// They provide ground truth images, depth, flow and priors for tests and
// experiments.

#include "defield/fields.hpp"
#include "defield/geometry.hpp"
#include "defield/image.hpp"
#include "defield/priors.hpp"
#include "defield/renderer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace defield {

struct Trajectory {
    enum class Kind { fixed, linear, circular };
    Kind kind = Kind::fixed;
    Vec3<double> start = Vec3<double>::Zero();     // fixed/linear: position at t = 1; circular: orbit center
    Vec3<double> velocity = Vec3<double>::Zero();  // linear, scene units per frame
    double radius = 0;                             // circular, in the xz plane
    double angular_speed = 0;                      // radians per frame
    double phase = 0;

    Vec3<double> at(double t) const {
        switch (kind) {
            case Kind::fixed: return start;
            case Kind::linear: return start + velocity * (t - 1.0);
            case Kind::circular: {
                const double a = phase + angular_speed * (t - 1.0);
                return start + Vec3<double>(radius * std::cos(a), 0.0, radius * std::sin(a));
            }
        }
        return start;
    }
};

struct Primitive {
    enum class Shape { gaussian, box };
    Shape shape = Shape::gaussian;
    Trajectory path;
    Vec3<double> size = Vec3<double>::Constant(0.2);  // gaussian: std-dev (x only); box: half extents
    double edge = 0.0;                                // box: width of the linear density falloff
    double amplitude = 10.0;                          // peak density
    Vec3<double> color = Vec3<double>::Constant(0.5);

    double density(const Vec3<double>& p, double t) const {
        const Vec3<double> d = p - path.at(t);
        if (shape == Shape::gaussian) {
            const double r = size.x();
            return amplitude * std::exp(-d.squaredNorm() / (2.0 * r * r));
        }
        double f = 1.0;
        for (int a = 0; a < 3; ++a) {
            const double out = std::abs(d[a]) - size[a];
            if (edge <= 0.0) {
                if (out > 0.0) return 0.0;
            } else {
                f *= std::clamp(0.5 - out / edge, 0.0, 1.0);
            }
        }
        return amplitude * f;
    }
};

struct SyntheticScene {
    std::string name = "custom";
    std::vector<Primitive> elements;
    SceneFrame frame;
    double ray_near = 0.1;  // fallback when a ray misses the box
    double ray_far = 10.0;

    RayBounds bounds() const { return {frame.box, ray_near, ray_far}; }
};

struct OracleSample {
    double sigma = 0;
    Vec3<double> color = Vec3<double>::Zero();
};

/// Sum of primitive densities; color is the density-weighted blend.
inline OracleSample oracle_sigma_color(const SyntheticScene& scene, const Vec3<double>& p, double t) {
    OracleSample s;
    for (const auto& e : scene.elements) {
        const double d = e.density(p, t);
        s.sigma += d;
        s.color += d * e.color;
    }
    if (s.sigma > 0) s.color /= s.sigma;
    return s;
}

/// Index of the primitive with the largest density at p, or -1 in empty space.
inline int dominant_at(const SyntheticScene& scene, const Vec3<double>& p, double t) {
    int best = -1;
    double best_d = 0;
    for (std::size_t k = 0; k < scene.elements.size(); ++k) {
        const double d = scene.elements[k].density(p, t);
        if (d > best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

/// Exact displacement from t to s of the primitive that dominates the density at p.
inline Vec3<double> oracle_flow(const SyntheticScene& scene, const Vec3<double>& p, double t, double s) {
    const int best = dominant_at(scene, p, t);
    if (best < 0) return Vec3<double>::Zero();
    const auto& path = scene.elements[static_cast<std::size_t>(best)].path;
    return path.at(s) - path.at(t);
}

struct OracleRay {
    Vec3<double> color = Vec3<double>::Zero();
    double depth = 0;    // sum_i w_i z_i
    double opacity = 0;  // sum_i w_i
    int dominant = -1;   // primitive with the largest share of the weights

    /// Depth of the expected termination point, normalized by opacity.
    double surface_depth() const { return opacity > 0 ? depth / opacity : 0.0; }
};

/// Ray-marches the closed-form scene with bin-center samples.
inline OracleRay oracle_ray(const SyntheticScene& scene, const Ray& ray, int n_samples) {
    OracleRay out;
    if (!(ray.near < ray.far)) return out;
    std::vector<double> share(scene.elements.size(), 0.0), dens(scene.elements.size());
    const double step = (ray.far - ray.near) / n_samples;
    double trans = 1.0, prev = ray.near;
    for (int i = 0; i < n_samples; ++i) {
        const double z = ray.near + (i + 0.5) * step;
        const double delta = z - prev;
        prev = z;
        const Vec3<double> p = ray.at(z);
        double sigma = 0;
        Vec3<double> c = Vec3<double>::Zero();
        for (std::size_t k = 0; k < scene.elements.size(); ++k) {
            dens[k] = scene.elements[k].density(p, ray.t);
            sigma += dens[k];
            c += dens[k] * scene.elements[k].color;
        }
        if (sigma <= 0) continue;
        c /= sigma;
        const double atten = std::exp(-delta * sigma);
        const double w = trans * (1.0 - atten);
        out.color += w * c;
        out.depth += w * z;
        out.opacity += w;
        for (std::size_t k = 0; k < dens.size(); ++k) share[k] += w * dens[k] / sigma;
        trans *= atten;
    }
    double best = 0;
    for (std::size_t k = 0; k < share.size(); ++k)
        if (share[k] > best) {
            best = share[k];
            out.dominant = static_cast<int>(k);
        }
    return out;
}

inline RenderedView oracle_render(const SyntheticScene& scene, const Camera& cam, int t, int n_samples,
                                  int threads = 1) {
    RenderedView out{Image(cam.width, cam.height), DepthMap(cam.width, cam.height), DepthMap(cam.width, cam.height)};
    const RayBounds bounds = scene.bounds();
    parallel_for(cam.height, threads, [&](int y, int) {
        for (int x = 0; x < cam.width; ++x) {
            const auto r = oracle_ray(scene, ray_for_pixel(cam, {double(x), double(y)}, t, bounds), n_samples);
            for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = static_cast<float>(r.color[c]);
            out.depth.at(x, y) = static_cast<float>(r.depth);
            out.opacity.at(x, y) = static_cast<float>(r.opacity);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Built-in scenes.

/// Cameras on a horizontal arc of radius `distance`, raised by `height`, all
/// looking at the origin. Azimuths are spread evenly over [-spread, spread].
inline Rig arc_rig(int num_cameras, int width, int height, double distance = 4.0, double elevation = 1.0,
                   double spread_deg = 35.0, double fov_deg = 40.0) {
    Rig rig;
    const double focal = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
    for (int v = 0; v < num_cameras; ++v) {
        const double frac = num_cameras == 1 ? 0.5 : double(v) / (num_cameras - 1);
        const double az = (-spread_deg + 2.0 * spread_deg * frac) * std::numbers::pi / 180.0;
        const Vec3<double> eye(distance * std::sin(az), elevation, -distance * std::cos(az));
        rig.push_back(look_at_camera(eye, Vec3<double>::Zero(), Vec3<double>::UnitY(), focal, width, height, v + 1));
    }
    return rig;
}

/// One static box and one Gaussian blob orbiting it in the xz plane.
inline SyntheticScene blob_orbit_scene(int num_frames = 60) {
    SyntheticScene s;
    s.name = "blob-orbit";
    s.frame.box = Box{Vec3<double>::Constant(-1.5), Vec3<double>::Constant(1.5)};
    s.frame.num_frames = num_frames;
    s.ray_near = 0.1;
    s.ray_far = 10.0;

    Primitive box;
    box.shape = Primitive::Shape::box;
    box.path.start = Vec3<double>(0.0, -0.15, 0.0);
    box.size = Vec3<double>(0.35, 0.35, 0.35);
    box.edge = 0.06;
    box.amplitude = 40.0;
    box.color = Vec3<double>(0.85, 0.35, 0.2);
    s.elements.push_back(box);

    Primitive blob;
    blob.shape = Primitive::Shape::gaussian;
    blob.path.kind = Trajectory::Kind::circular;
    blob.path.start = Vec3<double>(0.0, 0.1, 0.0);
    blob.path.radius = 0.8;
    blob.path.angular_speed = std::numbers::pi / std::max(1, num_frames - 1);
    blob.path.phase = -0.5 * std::numbers::pi;
    blob.size = Vec3<double>::Constant(0.2);
    blob.amplitude = 60.0;
    blob.color = Vec3<double>(0.2, 0.55, 0.95);
    s.elements.push_back(blob);
    return s;
}

inline SyntheticScene make_scene(const std::string& name, int num_frames) {
    if (name == "blob-orbit") return blob_orbit_scene(num_frames);
    throw UsageError("unknown synthetic scene '" + name + "' (available: blob-orbit)");
}

// ---------------------------------------------------------------------------
// Scene serialization (scene.json), so tools can rebuild the oracle.

inline nlohmann::json vec3_json(const Vec3<double>& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3<double> vec3_from_json(const nlohmann::json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline nlohmann::json scene_to_json(const SyntheticScene& s) {
    nlohmann::json elems = nlohmann::json::array();
    for (const auto& e : s.elements) {
        nlohmann::json path{{"kind", e.path.kind == Trajectory::Kind::fixed    ? "fixed"
                                     : e.path.kind == Trajectory::Kind::linear ? "linear"
                                                                               : "circular"},
                            {"start", vec3_json(e.path.start)},
                            {"velocity", vec3_json(e.path.velocity)},
                            {"radius", e.path.radius},
                            {"angular_speed", e.path.angular_speed},
                            {"phase", e.path.phase}};
        elems.push_back({{"shape", e.shape == Primitive::Shape::gaussian ? "gaussian" : "box"},
                         {"path", path},
                         {"size", vec3_json(e.size)},
                         {"edge", e.edge},
                         {"amplitude", e.amplitude},
                         {"color", vec3_json(e.color)}});
    }
    return {{"name", s.name}, {"frame", s.frame}, {"ray_near", s.ray_near}, {"ray_far", s.ray_far}, {"elements", elems}};
}

inline SyntheticScene scene_from_json(const nlohmann::json& j) {
    SyntheticScene s;
    try {
        s.name = j.value("name", std::string("custom"));
        s.frame = j.at("frame").get<SceneFrame>();
        s.ray_near = j.value("ray_near", 0.1);
        s.ray_far = j.value("ray_far", 10.0);
        for (const auto& e : j.at("elements")) {
            Primitive p;
            p.shape = e.at("shape") == "box" ? Primitive::Shape::box : Primitive::Shape::gaussian;
            const auto& path = e.at("path");
            const std::string kind = path.at("kind");
            p.path.kind = kind == "linear"     ? Trajectory::Kind::linear
                          : kind == "circular" ? Trajectory::Kind::circular
                                               : Trajectory::Kind::fixed;
            p.path.start = vec3_from_json(path.at("start"));
            p.path.velocity = vec3_from_json(path.at("velocity"));
            p.path.radius = path.at("radius");
            p.path.angular_speed = path.at("angular_speed");
            p.path.phase = path.at("phase");
            p.size = vec3_from_json(e.at("size"));
            p.edge = e.at("edge");
            p.amplitude = e.at("amplitude");
            p.color = vec3_from_json(e.at("color"));
            s.elements.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("scene description: ") + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Prior synthesis from exact scene motion.

struct SynthPriorOptions {
    int offset = 10;
    int sparse_per_pair = 16;     // keypoints per (t, v, s, u)
    int dense_stride = 4;         // pixel stride of the dense grid
    double outlier_rate = 0.0;    // fraction of records replaced by outliers
    double outlier_pixels = 20.0; // outlier displacement magnitude
    double min_opacity = 0.5;     // pixels below this are background
    double visibility_tolerance = 0.1;
    int oracle_samples = 256;
    std::uint64_t seed = 0;
};

struct SynthPriors {
    std::vector<FlowPriorRecord> sparse;
    std::vector<FlowPriorRecord> dense;
    std::vector<DepthPriorRecord> depth;
};

/// Where pixel (x, y) of (t, v) lands in camera u at frame s, if visible there.
struct Correspondence {
    Pixel source;
    Pixel target;
    double source_depth = 0;  // surface depth along the source ray
};

inline std::optional<Correspondence> track_pixel(const SyntheticScene& scene, const Rig& rig, int t, int v, Pixel px,
                                                 int s, int u, const SynthPriorOptions& opt) {
    const RayBounds bounds = scene.bounds();
    const Camera& cv = rig[static_cast<std::size_t>(v - 1)];
    const Camera& cu = rig[static_cast<std::size_t>(u - 1)];
    const Ray ray = ray_for_pixel(cv, px, t, bounds);
    const OracleRay src = oracle_ray(scene, ray, opt.oracle_samples);
    if (src.opacity < opt.min_opacity || src.dominant < 0) return std::nullopt;
    const auto& path = scene.elements[static_cast<std::size_t>(src.dominant)].path;
    const Vec3<double> x_t = ray.at(src.surface_depth());
    // A pixel mixing two primitives has no single attached point.
    if (dominant_at(scene, x_t, t) != src.dominant) return std::nullopt;
    const Vec3<double> x_s = x_t + path.at(s) - path.at(t);
    const Projection proj = project(cu, x_s);
    if (proj.camera_z <= 0 || !cu.contains(proj.pixel)) return std::nullopt;
    const OracleRay dst = oracle_ray(scene, ray_for_pixel(cu, proj.pixel, s, bounds), opt.oracle_samples);
    if (dst.opacity < opt.min_opacity || dst.dominant != src.dominant) return std::nullopt;
    if (std::abs(dst.surface_depth() - proj.distance) > opt.visibility_tolerance) return std::nullopt;
    return Correspondence{px, proj.pixel, src.surface_depth()};
}

namespace detail {
inline void inject_outlier(FlowPriorRecord& r, const Camera& cam, double pixels, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double a = angle(rng);
    r.xp = std::clamp(r.xp + pixels * std::cos(a), 0.0, cam.width - 1.0);
    r.yp = std::clamp(r.yp + pixels * std::sin(a), 0.0, cam.height - 1.0);
}
}  // namespace detail

/// Exact sparse (cross-camera) and dense (within-camera) correspondences for the
/// offsets t -> t +/- offset, plus depth priors at the sparse keypoints.
/// Occluded or out-of-frame projections are skipped.
inline SynthPriors synth_priors(const SyntheticScene& scene, const Rig& rig, const SynthPriorOptions& opt,
                                int threads = 1) {
    const int nf = scene.frame.num_frames;
    const int nc = static_cast<int>(rig.size());
    const int tasks = nf * nc;
    std::vector<SynthPriors> parts(static_cast<std::size_t>(tasks));
    parallel_for(tasks, threads, [&](int task, int) {
        const int t = task / nc + 1;
        const int v = task % nc + 1;
        auto& out = parts[static_cast<std::size_t>(task)];
        std::mt19937_64 rng(seed_from(opt.seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(v)));
        const Camera& cv = rig[static_cast<std::size_t>(v - 1)];
        const RayBounds bounds = scene.bounds();

        std::vector<Pixel> foreground;
        for (int y = 0; y < cv.height; ++y)
            for (int x = 0; x < cv.width; ++x) {
                const auto r = oracle_ray(scene, ray_for_pixel(cv, {double(x), double(y)}, t, bounds), 64);
                if (r.opacity >= opt.min_opacity) foreground.push_back({double(x), double(y)});
            }
        if (foreground.empty()) return;

        for (int s : {t - opt.offset, t + opt.offset}) {
            if (s < 1 || s > nf) continue;
            for (int u = 1; u <= nc; ++u) {
                if (u == v) continue;
                std::uniform_int_distribution<std::size_t> pick(0, foreground.size() - 1);
                for (int k = 0; k < opt.sparse_per_pair; ++k) {
                    const Pixel px = foreground[pick(rng)];
                    const auto c = track_pixel(scene, rig, t, v, px, s, u, opt);
                    if (!c) continue;
                    out.sparse.push_back({PriorKind::sparse, t, v, px.x, px.y, s, u, c->target.x, c->target.y, 1.0});
                    out.depth.push_back({t, v, px.x, px.y, c->source_depth, 1.0});
                }
            }
            for (int y = 0; y < cv.height; y += opt.dense_stride)
                for (int x = 0; x < cv.width; x += opt.dense_stride) {
                    const auto c = track_pixel(scene, rig, t, v, {double(x), double(y)}, s, v, opt);
                    if (!c) continue;
                    out.dense.push_back({PriorKind::dense, t, v, double(x), double(y), s, v, c->target.x, c->target.y, 1.0});
                }
        }
        if (opt.outlier_rate > 0) {
            std::bernoulli_distribution coin(opt.outlier_rate);
            for (auto* list : {&out.sparse, &out.dense})
                for (auto& r : *list)
                    if (coin(rng)) detail::inject_outlier(r, rig[static_cast<std::size_t>(r.u - 1)], opt.outlier_pixels, rng);
        }
    });
    SynthPriors all;
    for (auto& p : parts) {
        all.sparse.insert(all.sparse.end(), p.sparse.begin(), p.sparse.end());
        all.dense.insert(all.dense.end(), p.dense.begin(), p.dense.end());
        all.depth.insert(all.depth.end(), p.depth.begin(), p.depth.end());
    }
    // Depth priors may repeat a keypoint drawn for several target cameras.
    std::sort(all.depth.begin(), all.depth.end(), [](const auto& a, const auto& b) {
        return std::tie(a.t, a.v, a.y, a.x) < std::tie(b.t, b.v, b.y, b.x);
    });
    all.depth.erase(std::unique(all.depth.begin(), all.depth.end()), all.depth.end());
    return all;
}

// ---------------------------------------------------------------------------
// Dataset directory layout.

namespace dataset_paths {
inline std::filesystem::path frame(const std::filesystem::path& root, int v, int t) {
    return root / ("cam_" + std::to_string(v)) / ("frame_" + std::to_string(t) + ".png");
}
inline std::filesystem::path depth(const std::filesystem::path& root, int v, int t) {
    return root / "depth_gt" / ("cam_" + std::to_string(v)) / ("frame_" + std::to_string(t) + ".f32");
}
inline std::filesystem::path opacity(const std::filesystem::path& root, int v, int t) {
    return root / "depth_gt" / ("cam_" + std::to_string(v)) / ("frame_" + std::to_string(t) + ".opacity.f32");
}
}  // namespace dataset_paths

struct DatasetOptions {
    int num_cameras = 3;
    int num_frames = 60;
    int width = 64;
    int height = 64;
    int render_samples = 512;
    SynthPriorOptions priors;
};

inline void write_scene_priors(const std::filesystem::path& dir, const SynthPriors& p) {
    std::filesystem::create_directories(dir);
    write_flow_priors(dir / "priors_sparse.csv", p.sparse);
    write_flow_priors(dir / "priors_dense.csv", p.dense);
    write_depth_priors(dir / "priors_depth.csv", p.depth);
}

/// Writes frames, rig.json, scene.json, depth ground truth and clean priors.
inline void write_dataset(const std::filesystem::path& root, const SyntheticScene& scene, const Rig& rig,
                          const DatasetOptions& opt, int threads = 1) {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    save_rig(root / "rig.json", rig);
    {
        std::ofstream out(root / "scene.json");
        if (!out) throw DataError("cannot write " + (root / "scene.json").string());
        out << scene_to_json(scene).dump(2) << '\n';
    }
    for (const auto& cam : rig) {
        fs::create_directories(dataset_paths::frame(root, cam.index, 1).parent_path());
        fs::create_directories(dataset_paths::depth(root, cam.index, 1).parent_path());
        for (int t = 1; t <= scene.frame.num_frames; ++t) {
            const auto view = oracle_render(scene, cam, t, opt.render_samples, threads);
            write_png(dataset_paths::frame(root, cam.index, t), view.color);
            write_depth(dataset_paths::depth(root, cam.index, t), view.depth);
            write_depth(dataset_paths::opacity(root, cam.index, t), view.opacity);
        }
    }
    write_scene_priors(root, synth_priors(scene, rig, opt.priors, threads));
}

inline SyntheticScene load_scene(const std::filesystem::path& root) {
    std::ifstream in(root / "scene.json");
    if (!in) throw DataError("missing " + (root / "scene.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError((root / "scene.json").string() + ": " + e.what());
    }
    return scene_from_json(j);
}

}  // namespace defield
