// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/cli.hpp"

#include "tsplat/dataio.hpp"
#include "tsplat/errors.hpp"
#include "tsplat/parallel.hpp"
#include "tsplat/pipeline.hpp"
#include "tsplat/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace tsplat {
namespace {

namespace fs = std::filesystem;

struct GlobalFlags {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<int> resolution_scale;
    std::optional<std::string> mode;
    std::string config;
};

TrainConfig resolve_config(const GlobalFlags& g) {
    TrainConfig c;
    if (!g.config.empty()) c = load_train_config(g.config, c);
    if (g.seed) c.seed = *g.seed;
    if (g.resolution_scale) c.resolution_scale = *g.resolution_scale;
    if (g.mode) c.mode = mode_from_string(*g.mode);
    c.validate();
    return c;
}

/// Scale used when reading data for an existing checkpoint: the flag, else
/// the one it was trained at.
int checkpoint_scale(const GlobalFlags& g, const Checkpoint& ckpt) {
    if (g.resolution_scale) return *g.resolution_scale;
    return ckpt.train_config.value("resolution_scale", 1);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Deformable Gaussian splatting for endoscopic scenes", "tsplat"};
    app.fallthrough();
    app.require_subcommand(1);

    GlobalFlags g;
    app.add_option("--seed", g.seed, "random seed");
    app.add_option("--threads", g.threads, "worker threads (overrides TSPLAT_THREADS)")->check(CLI::PositiveNumber);
    app.add_option("--resolution-scale", g.resolution_scale, "integer image downscale")->check(CLI::PositiveNumber);
    app.add_option("--mode", g.mode, "tissue-only or full-scene");
    app.add_option("--config", g.config, "JSON file overriding training defaults")->check(CLI::ExistingFile);

    // init-pointcloud
    auto* init = app.add_subcommand("init-pointcloud", "accumulate depth frames into a point file");
    std::string init_dataset, init_out;
    std::optional<int> init_target;
    init->add_option("dataset", init_dataset, "dataset manifest or directory")->required();
    init->add_option("-o,--output", init_out, "output PLY")->required();
    init->add_option("--target", init_target, "approximate point count after downsampling (0 keeps all)");

    // train
    auto* tr = app.add_subcommand("train", "train a checkpoint on a dataset");
    std::string tr_dataset, tr_out, tr_log;
    std::optional<int> tr_coarse, tr_fine;
    tr->add_option("dataset", tr_dataset, "dataset manifest or directory")->required();
    tr->add_option("-o,--output", tr_out, "checkpoint file")->required();
    tr->add_option("--log", tr_log, "iteration log (newline-delimited JSON)");
    tr->add_option("--coarse-iters", tr_coarse, "coarse-stage iterations");
    tr->add_option("--fine-iters", tr_fine, "fine-stage iterations");

    // render
    auto* rd = app.add_subcommand("render", "render one frame at a pose and time");
    std::string rd_ckpt, rd_poses, rd_out, rd_depth;
    int rd_frame = 0;
    std::optional<double> rd_time;
    rd->add_option("checkpoint", rd_ckpt, "checkpoint file")->required();
    rd->add_option("poses", rd_poses, "pose track or dataset manifest")->required();
    rd->add_option("--frame", rd_frame, "pose index in the track");
    rd->add_option("--time", rd_time, "timestamp in [0, 1] (defaults to the pose's)");
    rd->add_option("-o,--output", rd_out, "output PNG")->required();
    rd->add_option("--depth", rd_depth, "also write expected depth as PFM");

    // stream
    auto* st = app.add_subcommand("stream", "replay a pose track through the streaming pipeline");
    std::string st_ckpt, st_track, st_out;
    std::size_t st_capacity = 4;
    bool st_no_frames = false;
    st->add_option("checkpoint", st_ckpt, "checkpoint file")->required();
    st->add_option("track", st_track, "pose track manifest")->required();
    st->add_option("-o,--output", st_out, "output directory")->required();
    st->add_option("--queue-capacity", st_capacity, "bounded queue capacity")->check(CLI::PositiveNumber);
    st->add_flag("--no-frames", st_no_frames, "skip writing frames (metrics only)");

    // eval
    auto* ev = app.add_subcommand("eval", "score a checkpoint against a dataset");
    std::string ev_ckpt, ev_dataset, ev_report, ev_render_dir;
    std::vector<int> ev_frames;
    ev->add_option("checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("dataset", ev_dataset, "dataset manifest or directory")->required();
    ev->add_option("--report", ev_report, "write the per-frame report as JSON");
    ev->add_option("--render-dir", ev_render_dir, "write renders as frame_%03d.png");
    ev->add_option("--frames", ev_frames, "frame indices to score (default all)")->delimiter(',');

    // convert
    auto* cv = app.add_subcommand("convert", "write a manifest for an EndoNeRF-style directory");
    std::string cv_src, cv_out;
    ConvertOptions cv_opts;
    bool cv_monocular = false;
    cv->add_option("source", cv_src, "directory with poses_bounds.npy, images/, depth/, masks/")->required();
    cv->add_option("-o,--output", cv_out, "output manifest path")->required();
    cv->add_option("--depth-format", cv_opts.depth_format, "png16 or f32")->check(CLI::IsMember({"png16", "f32"}));
    cv->add_option("--depth-scale", cv_opts.depth_scale, "scene units per stored depth unit");
    cv->add_flag("--invert-mask", cv_opts.invert_mask, "source masks mark tissue rather than tools");
    cv->add_flag("--monocular", cv_monocular, "depth comes from a monocular estimator");

    if (argc <= 1) {
        err << app.help();
        return kExitUsage;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error[Usage]: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    const int saved_threads = num_threads();
    int status = kExitOk;
    try {
        if (g.threads) set_num_threads(*g.threads);

        if (*init) {
            TrainConfig c = resolve_config(g);
            if (init_target) c.accumulate.target_count = *init_target;
            const Dataset ds = load_dataset(init_dataset, c.resolution_scale);
            const AccumulatedCloud acc = accumulate_point_cloud(ds.frames, c.mode, c.accumulate);
            write_ply(init_out, acc.points);
            out << "points " << acc.points.size() << " scene_scale " << acc.scene_scale << " voxel " << acc.voxel
                << "\n";
        } else if (*tr) {
            TrainConfig c = resolve_config(g);
            if (tr_coarse) c.coarse_iters = *tr_coarse;
            if (tr_fine) c.fine_iters = *tr_fine;
            c.validate();
            const Dataset ds = load_dataset(tr_dataset, c.resolution_scale);
            TrainOptions opts;
            opts.checkpoint_path = tr_out;
            opts.log_path = tr_log;
            const TrainResult r = train(ds, c, opts);
            const auto& last = r.log.back();
            out << "iterations " << r.log.size() << " gaussians " << r.checkpoint.cloud.size() << " final_loss "
                << last.loss.total << " seconds " << r.wall_seconds << "\n";
        } else if (*rd) {
            const Checkpoint ckpt = load_checkpoint(rd_ckpt);
            const auto track = load_pose_track(rd_poses, checkpoint_scale(g, ckpt));
            if (rd_frame < 0 || static_cast<std::size_t>(rd_frame) >= track.size())
                throw ConfigError("frame " + std::to_string(rd_frame) + " is outside the track of " +
                                  std::to_string(track.size()) + " poses");
            const PoseSample& pose = track[static_cast<std::size_t>(rd_frame)];
            const float t = rd_time ? static_cast<float>(*rd_time) : pose.t;
            const auto r = render_frame(ckpt, pose.camera, t, checkpoint_background(ckpt));
            write_png_rgb(rd_out, r.rgb);
            if (!rd_depth.empty()) write_pfm(rd_depth, r.depth);
            out << "rendered frame " << rd_frame << " t " << t << "\n";
        } else if (*st) {
            // Only the header is read here; run_stream loads the model once.
            int scale = g.resolution_scale.value_or(1);
            if (!g.resolution_scale)
                scale = read_checkpoint_header(st_ckpt).value("train_config", nlohmann::json::object())
                            .value("resolution_scale", 1);
            StreamOptions opts;
            opts.queue_capacity = st_capacity;
            opts.write_frames = !st_no_frames;
            const StreamReport r = run_stream(st_ckpt, load_pose_track(st_track, scale), st_out, opts);
            out << "frames " << r.frames << " fps " << r.throughput_fps << " mean_ms " << r.mean_latency_ms
                << " p99_ms " << r.p99_latency_ms << "\n";
        } else if (*ev) {
            const Checkpoint ckpt = load_checkpoint(ev_ckpt);
            const Mode mode = g.mode ? mode_from_string(*g.mode) : ckpt.mode;
            const Dataset ds = load_dataset(ev_dataset, checkpoint_scale(g, ckpt));
            const EvalReport r = evaluate(ckpt, ds, mode, ev_frames, ev_render_dir);
            if (!ev_report.empty()) write_json(ev_report, r.to_json());
            for (const auto& row : r.rows)
                out << "frame " << row.frame << " psnr " << row.psnr << " ssim " << row.ssim << "\n";
            out << "mode " << to_string(mode) << " mean_psnr " << r.mean_psnr << " mean_ssim " << r.mean_ssim << "\n";
        } else if (*cv) {
            if (cv_monocular) cv_opts.depth_source = DepthSource::Monocular;
            const DatasetManifest m = convert_endonerf(cv_src, cv_out, cv_opts);
            out << "frames " << m.frames.size() << " size " << m.width << "x" << m.height << "\n";
        }
    } catch (const Error& e) {
        err << "error[" << e.kind() << "]: " << e.what() << "\n";
        status = kExitFailure;
    } catch (const std::exception& e) {
        err << "error[Error]: " << e.what() << "\n";
        status = kExitFailure;
    }
    set_num_threads(saved_threads);
    return status;
}

} // namespace tsplat
