#pragma once

#include "defield/eval.hpp"
#include "defield/synthscene.hpp"
#include "defield/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace defield::cli {

namespace fs = std::filesystem;

inline std::pair<int, int> parse_frame_range(const std::string& s, int num_frames) {
    const auto dots = s.find("..");
    std::pair<int, int> r;
    try {
        if (dots == std::string::npos) {
            r.first = r.second = std::stoi(s);
        } else {
            const std::string a = s.substr(0, dots), b = s.substr(dots + 2);
            r = {a.empty() ? 1 : std::stoi(a), b.empty() ? num_frames : std::stoi(b)};
        }
    } catch (const std::exception&) {
        throw UsageError("bad frame range '" + s + "' (expected a..b)");
    }
    if (r.first < 1 || r.second > num_frames || r.first > r.second)
        throw UsageError("frame range '" + s + "' outside [1, " + std::to_string(num_frames) + "]");
    return r;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

struct GenSyntheticArgs {
    std::string scene = "blob-orbit";
    fs::path out;
    DatasetOptions data;
    int threads = 0;
};

inline void gen_synthetic(const GenSyntheticArgs& a) {
    const int threads = resolve_threads(a.threads);
    const auto scene = make_scene(a.scene, a.data.num_frames);
    const auto rig = arc_rig(a.data.num_cameras, a.data.width, a.data.height);
    log::info("rendering " + std::to_string(a.data.num_cameras) + " x " + std::to_string(a.data.num_frames) +
              " frames of " + a.scene + " into " + a.out.string());
    write_dataset(a.out, scene, rig, a.data, threads);
    write_json(a.out / "generate.json", {{"scene", a.scene},
                                          {"cameras", a.data.num_cameras},
                                          {"frames", a.data.num_frames},
                                          {"width", a.data.width},
                                          {"height", a.data.height},
                                          {"render_samples", a.data.render_samples},
                                          {"prior_offset", a.data.priors.offset},
                                          {"sparse_per_pair", a.data.priors.sparse_per_pair},
                                          {"dense_stride", a.data.priors.dense_stride},
                                          {"seed", a.data.priors.seed}});
}

struct GenPriorsArgs {
    fs::path data;
    fs::path out;  // empty: the data directory
    SynthPriorOptions priors;
    int threads = 0;
};

inline void gen_priors(const GenPriorsArgs& a) {
    if (a.priors.outlier_rate < 0 || a.priors.outlier_rate > 1) throw UsageError("--noise must be in [0, 1]");
    const auto scene = load_scene(a.data);
    const auto rig = load_rig(a.data / "rig.json");
    const fs::path out = a.out.empty() ? a.data : a.out;
    write_scene_priors(out, synth_priors(scene, rig, a.priors, resolve_threads(a.threads)));
    write_json(out / "priors.json", {{"offset", a.priors.offset},
                                     {"noise", a.priors.outlier_rate},
                                     {"outlier_px", a.priors.outlier_pixels},
                                     {"sparse_per_pair", a.priors.sparse_per_pair},
                                     {"dense_stride", a.priors.dense_stride},
                                     {"seed", a.priors.seed}});
}

inline void train(const fs::path& data_dir, const TrainConfig& cfg, const fs::path& out, const fs::path& resume) {
    cfg.validate();
    const Dataset data = load_dataset(data_dir, cfg.train_cameras);
    const PriorStore priors = load_training_priors(data, cfg);
    log::info("training on " + std::to_string(data.cameras.size()) + " cameras, " +
              std::to_string(priors.size()) + " flow priors, " + std::to_string(priors.depth_records().size()) +
              " depth priors");
    std::optional<TrainState> state;
    if (!resume.empty()) state = load_checkpoint(resume).state;
    run_training(data, priors, cfg, out, std::move(state));
}

inline void render(const fs::path& ckpt, const fs::path& camera_json, const std::string& frames, const fs::path& out,
                   int samples, int threads) {
    const auto loaded = load_checkpoint(ckpt);
    const Model<float>& model = loaded.state.model;
    const auto [first, last] = parse_frame_range(frames, model.frame.num_frames);
    RenderOptions ro;
    ro.n_samples = samples > 0 ? samples : loaded.n_samples;
    const Rig rig = load_rig(camera_json);
    for (const auto& cam : rig) render_views(model, cam, first, last, ro, loaded.bounds, out, resolve_threads(threads));
}

inline void evaluate(const fs::path& pred, const fs::path& gt, const fs::path& out) {
    const auto report = evaluate_directories(pred, gt);
    write_report(report, out);
    std::cout << "views " << report.views.size() << "  psnr " << format_metric(report.mean_psnr()) << "  ssim "
              << format_metric(report.mean_ssim()) << "  depth_mae " << format_metric(report.mean_depth_mae())
              << '\n';
}

/// Parses argv and dispatches. Returns the process exit code:
/// 0 success, 1 usage, 2 data or validation error, 3 numerical abort.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Dynamic radiance fields with flow priors"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    GenSyntheticArgs gs;
    auto* gen_synth = app.add_subcommand("gen-synthetic", "Render a synthetic multi-view video with ground truth");
    gen_synth->add_option("--scene", gs.scene, "Scene name")->check(CLI::IsMember({"blob-orbit"}));
    gen_synth->add_option("--out", gs.out, "Output directory")->required();
    gen_synth->add_option("--cameras", gs.data.num_cameras)->check(CLI::Range(1, 64));
    gen_synth->add_option("--frames", gs.data.num_frames)->check(CLI::Range(2, 100000));
    gen_synth->add_option("--width", gs.data.width)->check(CLI::Range(1, 8192));
    gen_synth->add_option("--height", gs.data.height)->check(CLI::Range(1, 8192));
    gen_synth->add_option("--render-samples", gs.data.render_samples)->check(CLI::PositiveNumber);
    gen_synth->add_option("--offset", gs.data.priors.offset, "Frame offset of the flow priors");
    gen_synth->add_option("--sparse-per-pair", gs.data.priors.sparse_per_pair);
    gen_synth->add_option("--dense-stride", gs.data.priors.dense_stride)->check(CLI::PositiveNumber);
    gen_synth->add_option("--seed", gs.data.priors.seed);
    gen_synth->add_option("--threads", gs.threads);

    GenPriorsArgs gp;
    auto* gen_pri = app.add_subcommand("gen-priors", "Regenerate flow and depth priors, optionally with outliers");
    gen_pri->add_option("--data", gp.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    gen_pri->add_option("--noise", gp.priors.outlier_rate, "Fraction of flow priors replaced by outliers");
    gen_pri->add_option("--outlier-px", gp.priors.outlier_pixels, "Outlier displacement in pixels");
    gen_pri->add_option("--out", gp.out, "Output directory (default: the dataset)");
    gen_pri->add_option("--offset", gp.priors.offset);
    gen_pri->add_option("--sparse-per-pair", gp.priors.sparse_per_pair);
    gen_pri->add_option("--dense-stride", gp.priors.dense_stride)->check(CLI::PositiveNumber);
    gen_pri->add_option("--seed", gp.priors.seed);
    gen_pri->add_option("--threads", gp.threads);

    fs::path data_dir, config_path, run_dir, resume;
    bool no_sf = false, no_df = false, sd = false;
    int train_threads = 0;
    std::uint64_t iterations = 0, seed = 0;
    std::vector<int> cameras;
    std::string priors_dir;
    auto* tr = app.add_subcommand("train", "Optimize a model on a dataset");
    tr->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--config", config_path, "Training config JSON")->check(CLI::ExistingFile);
    tr->add_option("--out", run_dir, "Run directory")->required();
    tr->add_flag("--no-sf", no_sf, "Disable the sparse flow prior");
    tr->add_flag("--no-df", no_df, "Disable the dense flow prior");
    tr->add_flag("--sd", sd, "Enable the sparse depth prior");
    auto* opt_threads = tr->add_option("--threads", train_threads);
    auto* opt_iters = tr->add_option("--iterations", iterations);
    auto* opt_seed = tr->add_option("--seed", seed);
    auto* opt_cams = tr->add_option("--cameras", cameras, "Training cameras (1-based)");
    auto* opt_priors = tr->add_option("--priors", priors_dir, "Directory holding the prior CSV files");
    tr->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

    fs::path ckpt, camera_json, render_out;
    std::string frames = "1..";
    int render_samples = 0, render_threads = 0;
    auto* rd = app.add_subcommand("render", "Render frames from a checkpoint");
    rd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    rd->add_option("--camera", camera_json, "Camera or rig JSON")->required()->check(CLI::ExistingFile);
    rd->add_option("--frames", frames, "Frame range a..b");
    rd->add_option("--out", render_out)->required();
    rd->add_option("--samples", render_samples, "Samples per ray (default: training value)");
    rd->add_option("--threads", render_threads);

    fs::path pred, gt, report;
    auto* ev = app.add_subcommand("evaluate", "Score rendered frames against ground truth");
    ev->add_option("--pred", pred)->required();
    ev->add_option("--gt", gt)->required();
    ev->add_option("--out", report, "Report JSON (a per-frame CSV is written next to it)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (e.get_exit_code() == 0) return 0;
        std::cerr << app.help();
        return 1;
    }
    log::quiet_flag() = quiet;

    try {
        if (*gen_synth) {
            gen_synthetic(gs);
        } else if (*gen_pri) {
            gen_priors(gp);
        } else if (*tr) {
            TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
            if (no_sf) cfg.lambda_sf = 0;
            if (no_df) cfg.lambda_df = 0;
            if (sd && cfg.lambda_sd == 0) cfg.lambda_sd = 1;
            if (opt_threads->count()) cfg.threads = train_threads;
            if (opt_iters->count()) cfg.iterations = iterations;
            if (opt_seed->count()) cfg.seed = seed;
            if (opt_cams->count()) cfg.train_cameras = cameras;
            if (opt_priors->count()) {
                const fs::path p = fs::absolute(priors_dir);
                cfg.priors_sparse = (p / "priors_sparse.csv").string();
                cfg.priors_dense = (p / "priors_dense.csv").string();
                cfg.priors_depth = (p / "priors_depth.csv").string();
            }
            train(data_dir, cfg, run_dir, resume);
        } else if (*rd) {
            render(ckpt, camera_json, frames, render_out, render_samples, render_threads);
        } else if (*ev) {
            evaluate(pred, gt, report);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"defield"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace defield::cli
