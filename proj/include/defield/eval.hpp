#pragma once

#include "defield/metrics.hpp"
#include "defield/renderer.hpp"
#include "defield/synthscene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

namespace defield {

// Rendered output layout: <dir>/cam_<v>/frame_<t>.png and <dir>/depth/cam_<v>/frame_<t>.f32

inline std::filesystem::path predicted_depth_path(const std::filesystem::path& root, int v, int t) {
    return root / "depth" / ("cam_" + std::to_string(v)) / ("frame_" + std::to_string(t) + ".f32");
}

template <typename S>
void render_views(const Model<S>& model, const Camera& cam, int first, int last, const RenderOptions& opt,
                  const RayBounds& bounds, const std::filesystem::path& out, int threads) {
    if (first < 1 || last > model.frame.num_frames || first > last)
        throw UsageError("frame range " + std::to_string(first) + ".." + std::to_string(last) + " outside 1.." +
                         std::to_string(model.frame.num_frames));
    std::filesystem::create_directories(dataset_paths::frame(out, cam.index, 1).parent_path());
    std::filesystem::create_directories(predicted_depth_path(out, cam.index, 1).parent_path());
    for (int t = first; t <= last; ++t) {
        const auto view = render_image(model, cam, t, opt, bounds, threads);
        write_png(dataset_paths::frame(out, cam.index, t), view.color);
        write_depth(predicted_depth_path(out, cam.index, t), view.depth);
    }
}

struct ViewScore {
    int camera = 0;
    int frame = 0;
    double psnr = 0;
    double ssim = 0;
    double depth_mae = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
    std::vector<ViewScore> views;

    double mean_psnr() const { return mean([](const ViewScore& v) { return v.psnr; }); }
    double mean_ssim() const { return mean([](const ViewScore& v) { return v.ssim; }); }
    double mean_depth_mae() const { return mean([](const ViewScore& v) { return v.depth_mae; }); }

    // NaN entries (no depth reference) are skipped. Infinite PSNR is kept.
    template <typename F>
    double mean(F get) const {
        double s = 0;
        std::size_t n = 0;
        for (const auto& v : views) {
            const double x = get(v);
            if (std::isnan(x)) continue;
            s += x;
            ++n;
        }
        return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    }
};

inline ViewScore score_view(int v, int t, const Image& pred, const Image& gt, const DepthMap* pred_depth,
                            const DepthMap* gt_depth, const DepthMap* gt_opacity) {
    ViewScore s{v, t, psnr(pred, gt), ssim(pred, gt)};
    if (pred_depth && gt_depth && gt_opacity) s.depth_mae = depth_mae(*pred_depth, *gt_depth, *gt_opacity);
    return s;
}

/// Scores every cam_<v>/frame_<t>.png under `pred` against the same view under `gt`.
inline EvalReport evaluate_directories(const std::filesystem::path& pred, const std::filesystem::path& gt) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(pred)) throw DataError("prediction directory " + pred.string() + " not found");
    if (!fs::is_directory(gt)) throw DataError("ground-truth directory " + gt.string() + " not found");
    static const std::regex cam_re("cam_([0-9]+)"), frame_re("frame_([0-9]+)\\.png");
    std::vector<std::pair<int, int>> views;
    for (const auto& cam_dir : fs::directory_iterator(pred)) {
        std::smatch m;
        const std::string cname = cam_dir.path().filename().string();
        if (!cam_dir.is_directory() || !std::regex_match(cname, m, cam_re)) continue;
        const int v = std::stoi(m[1]);
        for (const auto& f : fs::directory_iterator(cam_dir.path())) {
            const std::string fname = f.path().filename().string();
            if (std::regex_match(fname, m, frame_re)) views.emplace_back(v, std::stoi(m[1]));
        }
    }
    if (views.empty()) throw DataError("no rendered frames under " + pred.string());
    std::sort(views.begin(), views.end());
    EvalReport report;
    for (const auto& [v, t] : views) {
        const auto gt_frame = dataset_paths::frame(gt, v, t);
        if (!fs::exists(gt_frame)) throw DataError("no ground truth for " + gt_frame.string());
        const Image p = read_png(dataset_paths::frame(pred, v, t));
        const Image g = read_png(gt_frame);
        if (p.width != g.width || p.height != g.height)
            throw DataError("size mismatch for camera " + std::to_string(v) + " frame " + std::to_string(t));
        std::optional<DepthMap> pd, gd, go;
        if (fs::exists(predicted_depth_path(pred, v, t)) && fs::exists(dataset_paths::depth(gt, v, t)) &&
            fs::exists(dataset_paths::opacity(gt, v, t))) {
            pd = read_depth(predicted_depth_path(pred, v, t));
            gd = read_depth(dataset_paths::depth(gt, v, t));
            go = read_depth(dataset_paths::opacity(gt, v, t));
        }
        report.views.push_back(score_view(v, t, p, g, pd ? &*pd : nullptr, gd ? &*gd : nullptr, go ? &*go : nullptr));
    }
    return report;
}

/// Renders the given views from `model` and scores them against a dataset on disk.
template <typename S>
EvalReport evaluate_model(const Model<S>& model, const std::filesystem::path& gt, const Rig& rig,
                          const std::vector<int>& cameras, const std::vector<int>& frames, const RenderOptions& opt,
                          const RayBounds& bounds, int threads) {
    EvalReport report;
    for (int v : cameras) {
        const Camera& cam = rig.at(static_cast<std::size_t>(v - 1));
        for (int t : frames) {
            const auto view = render_image(model, cam, t, opt, bounds, threads);
            const Image g = read_png(dataset_paths::frame(gt, v, t));
            std::optional<DepthMap> gd, go;
            if (std::filesystem::exists(dataset_paths::depth(gt, v, t))) {
                gd = read_depth(dataset_paths::depth(gt, v, t));
                go = read_depth(dataset_paths::opacity(gt, v, t));
            }
            report.views.push_back(
                score_view(v, t, view.color, g, gd ? &view.depth : nullptr, gd ? &*gd : nullptr, go ? &*go : nullptr));
        }
    }
    return report;
}

inline std::string format_metric(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    if (std::isnan(x)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

inline void write_report(const EvalReport& r, const std::filesystem::path& json_path) {
    auto num = [](double x) -> nlohmann::json {
        if (std::isfinite(x)) return x;
        return format_metric(x);
    };
    nlohmann::json j{{"views", r.views.size()},
                     {"psnr", num(r.mean_psnr())},
                     {"ssim", num(r.mean_ssim())},
                     {"depth_mae", num(r.mean_depth_mae())}};
    if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write " + json_path.string());
    out << j.dump(2) << '\n';

    auto csv_path = json_path;
    csv_path.replace_extension(".csv");
    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot write " + csv_path.string());
    csv << "camera,frame,psnr,ssim,depth_mae\n";
    for (const auto& v : r.views)
        csv << v.camera << ',' << v.frame << ',' << format_metric(v.psnr) << ',' << format_metric(v.ssim) << ','
            << format_metric(v.depth_mae) << '\n';
}

}  // namespace defield
