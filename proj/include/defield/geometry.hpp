#pragma once

// Pinhole cameras, ray generation and sampling along rays.
//
// Pixel coordinates are continuous with integer values at pixel centers, so
// pixel (0, 0) is the center of the top-left pixel. Camera frames follow the
// x-right, y-down, z-forward convention.

#include "defield/common.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace defield {

struct Pixel {
    double x = 0.0;
    double y = 0.0;
};

struct Camera {
    Mat3<double> intrinsics = Mat3<double>::Identity();
    Mat4<double> world_from_camera = Mat4<double>::Identity();
    int width = 0;
    int height = 0;
    int index = 1;  // 1-based camera index v

    Mat3<double> rotation() const { return world_from_camera.block<3, 3>(0, 0); }
    Vec3<double> center() const { return world_from_camera.block<3, 1>(0, 3); }

    bool contains(Pixel px) const {
        return px.x >= -0.5 && px.y >= -0.5 && px.x <= width - 0.5 && px.y <= height - 0.5;
    }

    /// Throws DataError if the camera breaks its invariants.
    void validate() const {
        const std::string where = "camera " + std::to_string(index) + ": ";
        if (width <= 0 || height <= 0) throw DataError(where + "non-positive image size");
        if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0))
            throw DataError(where + "focal lengths must be positive");
        if (intrinsics(0, 1) != 0.0) throw DataError(where + "non-zero skew is not supported");
        if (std::abs(intrinsics(2, 2) - 1.0) > 1e-12 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 ||
            intrinsics(1, 0) != 0.0)
            throw DataError(where + "intrinsics must be upper triangular with K[2][2] = 1");
        const Mat3<double> r = rotation();
        if ((r.transpose() * r - Mat3<double>::Identity()).cwiseAbs().maxCoeff() > 1e-6 || r.determinant() < 0.0)
            throw DataError(where + "pose rotation is not orthonormal");
        const Eigen::Matrix<double, 1, 4> last = world_from_camera.row(3);
        if ((last - Eigen::Matrix<double, 1, 4>(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
            throw DataError(where + "pose last row must be [0 0 0 1]");
    }
};

/// Camera at `eye` looking at `target`, image y axis pointing along -up.
inline Camera look_at_camera(const Vec3<double>& eye, const Vec3<double>& target, const Vec3<double>& up,
                             double focal, int width, int height, int index) {
    const Vec3<double> forward = (target - eye).normalized();
    const Vec3<double> right = forward.cross(up).normalized();
    const Vec3<double> down = forward.cross(right);
    Camera cam;
    cam.intrinsics << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
    cam.world_from_camera.block<3, 1>(0, 0) = right;
    cam.world_from_camera.block<3, 1>(0, 1) = down;
    cam.world_from_camera.block<3, 1>(0, 2) = forward;
    cam.world_from_camera.block<3, 1>(0, 3) = eye;
    cam.width = width;
    cam.height = height;
    cam.index = index;
    return cam;
}

struct Box {
    Vec3<double> lo = Vec3<double>::Constant(-1.0);
    Vec3<double> hi = Vec3<double>::Constant(1.0);

    Vec3<double> extent() const { return hi - lo; }
    bool contains(const Vec3<double>& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
    Vec3<double> clamp(const Vec3<double>& p) const { return p.cwiseMax(lo).cwiseMin(hi); }

    /// Slab test; returns the parametric entry/exit distances for a unit direction.
    std::optional<std::pair<double, double>> intersect(const Vec3<double>& origin, const Vec3<double>& dir) const {
        double t0 = -std::numeric_limits<double>::infinity();
        double t1 = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            if (std::abs(dir[a]) < 1e-15) {
                if (origin[a] < lo[a] || origin[a] > hi[a]) return std::nullopt;
                continue;
            }
            double ta = (lo[a] - origin[a]) / dir[a];
            double tb = (hi[a] - origin[a]) / dir[a];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
        }
        if (t1 <= std::max(t0, 0.0)) return std::nullopt;
        return std::make_pair(std::max(t0, 0.0), t1);
    }
};

/// How ray extents are chosen: box intersection first, global near/far otherwise.
struct RayBounds {
    std::optional<Box> box;
    double near = 0.1;
    double far = 10.0;
};

struct Ray {
    Vec3<double> origin = Vec3<double>::Zero();
    Vec3<double> direction = Vec3<double>::UnitZ();
    double near = 0.0;
    double far = 1.0;
    Pixel pixel;
    int t = 1;       // frame index, 1-based
    int camera = 1;  // camera index, 1-based

    Vec3<double> at(double z) const { return origin + z * direction; }
};

inline Ray ray_for_pixel(const Camera& cam, Pixel px, int t, const RayBounds& bounds = {}) {
    if (!cam.contains(px))
        throw std::out_of_range("pixel (" + std::to_string(px.x) + ", " + std::to_string(px.y) +
                                ") outside image of camera " + std::to_string(cam.index));
    const auto& k = cam.intrinsics;
    const Vec3<double> d_cam((px.x - k(0, 2)) / k(0, 0), (px.y - k(1, 2)) / k(1, 1), 1.0);
    Ray ray;
    ray.origin = cam.center();
    ray.direction = (cam.rotation() * d_cam).normalized();
    ray.pixel = px;
    ray.t = t;
    ray.camera = cam.index;
    ray.near = bounds.near;
    ray.far = bounds.far;
    if (bounds.box) {
        if (auto hit = bounds.box->intersect(ray.origin, ray.direction)) {
            ray.near = hit->first;
            ray.far = hit->second;
        }
    }
    return ray;
}

struct Projection {
    Pixel pixel;
    double camera_z = 0.0;  // depth along the optical axis
    double distance = 0.0;  // euclidean distance from the camera center
};

inline Projection project(const Camera& cam, const Vec3<double>& world) {
    const Vec3<double> local = cam.rotation().transpose() * (world - cam.center());
    const auto& k = cam.intrinsics;
    Projection p;
    p.camera_z = local.z();
    p.pixel.x = k(0, 0) * local.x() / local.z() + k(0, 2);
    p.pixel.y = k(1, 1) * local.y() / local.z() + k(1, 2);
    p.distance = local.norm();
    return p;
}

enum class SampleMode { uniform, stratified };

struct SampleSet {
    std::vector<Vec3<double>> positions;
    std::vector<double> depths;
    std::vector<double> deltas;

    std::size_t size() const { return depths.size(); }
};

/// Seed of the per-ray jitter stream. Independent of evaluation order. The frame
/// index is left out so that a time-invariant field renders identically at every t.
inline std::uint64_t ray_stream_seed(std::uint64_t seed, const Ray& ray, std::uint64_t iteration = 0) {
    return seed_from(seed, static_cast<std::uint64_t>(ray.camera),
                     static_cast<std::uint64_t>(std::llround(ray.pixel.x * 4096.0)),
                     static_cast<std::uint64_t>(std::llround(ray.pixel.y * 4096.0)), iteration);
}

/// Fills only depths and deltas; positions are left to the caller. Used by the batched renderer.
inline void sample_depths(const Ray& ray, int n, SampleMode mode, std::uint64_t stream, double* depths,
                          double* deltas) {
    if (n < 1) throw std::invalid_argument("sample count must be at least 1");
    const double step = (ray.far - ray.near) / n;
    if (mode == SampleMode::uniform) {
        for (int i = 0; i < n; ++i) depths[i] = ray.near + (i + 0.5) * step;
    } else {
        std::mt19937_64 rng(stream);
        std::uniform_real_distribution<double> jitter(0.0, 1.0);
        for (int i = 0; i < n; ++i) depths[i] = ray.near + (i + jitter(rng)) * step;
    }
    double prev = ray.near;
    for (int i = 0; i < n; ++i) {
        deltas[i] = depths[i] - prev;
        prev = depths[i];
    }
}

inline SampleSet sample_along_ray(const Ray& ray, int n, SampleMode mode, std::uint64_t stream = 0,
                                  const std::optional<Box>& clamp_box = std::nullopt) {
    if (n < 1) throw std::invalid_argument("sample count must be at least 1");
    SampleSet s;
    s.depths.resize(static_cast<std::size_t>(n));
    s.deltas.resize(static_cast<std::size_t>(n));
    sample_depths(ray, n, mode, stream, s.depths.data(), s.deltas.data());
    s.positions.reserve(static_cast<std::size_t>(n));
    for (double z : s.depths) {
        Vec3<double> p = ray.at(z);
        if (clamp_box) p = clamp_box->clamp(p);
        s.positions.push_back(p);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Camera rig file: JSON array, one object per camera, row-major matrices.

inline nlohmann::json camera_to_json(const Camera& cam) {
    nlohmann::json k = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) k.push_back({cam.intrinsics(r, 0), cam.intrinsics(r, 1), cam.intrinsics(r, 2)});
    nlohmann::json pose = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
        pose.push_back({cam.world_from_camera(r, 0), cam.world_from_camera(r, 1), cam.world_from_camera(r, 2),
                        cam.world_from_camera(r, 3)});
    return {{"K", k}, {"pose_w_from_c", pose}, {"width", cam.width}, {"height", cam.height}};
}

inline Camera camera_from_json(const nlohmann::json& j, int index) {
    Camera cam;
    cam.index = index;
    try {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) cam.intrinsics(r, c) = j.at("K").at(r).at(c).get<double>();
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) cam.world_from_camera(r, c) = j.at("pose_w_from_c").at(r).at(c).get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("camera " + std::to_string(index) + ": " + e.what());
    }
    cam.validate();
    return cam;
}

using Rig = std::vector<Camera>;

inline nlohmann::json rig_to_json(const Rig& rig) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : rig) j.push_back(camera_to_json(c));
    return j;
}

inline Rig rig_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw DataError("rig must be a JSON array of cameras");
    Rig rig;
    for (std::size_t i = 0; i < j.size(); ++i) rig.push_back(camera_from_json(j[i], static_cast<int>(i) + 1));
    return rig;
}

inline Rig load_rig(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open rig file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    // A single camera object is accepted as a one-camera rig.
    if (j.is_object()) return {camera_from_json(j, 1)};
    return rig_from_json(j);
}

inline void save_rig(const std::filesystem::path& path, const Rig& rig) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write rig file " + path.string());
    out << rig_to_json(rig).dump(2) << '\n';
}

}  // namespace defield
