// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/pipeline.hpp"

#include "tsplat/dataio.hpp"
#include "tsplat/errors.hpp"
#include "tsplat/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <thread>

namespace tsplat {

using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

std::vector<PoseSample> load_pose_track(const fs::path& path, int resolution_scale) {
    if (resolution_scale < 1) throw ConfigError("resolution scale must be a positive integer");
    DatasetManifest m = load_manifest(path, false);
    const int k = resolution_scale;
    m.width /= k;
    m.height /= k;
    m.fx /= k;
    m.fy /= k;
    m.cx /= k;
    m.cy /= k;
    std::vector<PoseSample> track;
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        PoseSample s;
        s.index = static_cast<int>(i);
        s.camera = m.camera(i).cast<float>();
        s.camera.validate();
        s.t = static_cast<float>(m.frames[i].time);
        track.push_back(s);
    }
    return track;
}

std::string frame_file_name(int index) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.png", index);
    return name;
}

nlohmann::json StreamReport::to_json() const {
    return nlohmann::json{{"frames", frames},
                          {"wall_seconds", wall_seconds},
                          {"throughput_fps", throughput_fps},
                          {"latency_ms", {{"mean", mean_latency_ms}, {"median", median_latency_ms}, {"p99", p99_latency_ms}}},
                          {"stages_ms",
                           {{"load", load_ms}, {"source", source_ms}, {"render", render_ms}, {"sink", sink_ms}}},
                          {"checkpoint_loads", checkpoint_loads},
                          {"queue_capacity", queue_capacity},
                          {"max_source_queue", max_source_queue},
                          {"max_sink_queue", max_sink_queue}};
}

namespace {

struct Tick {
    PoseSample pose;
    Clock::time_point emitted;
};

struct Rendered {
    int index = 0;
    Image<float> rgb;
    Clock::time_point emitted;
};

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// First exception raised by any stage; later ones are dropped.
class ErrorSlot {
public:
    void set(std::exception_ptr e) {
        std::lock_guard lock(mutex_);
        if (!error_) error_ = std::move(e);
    }
    void rethrow() {
        std::lock_guard lock(mutex_);
        if (error_) std::rethrow_exception(error_);
    }

private:
    std::mutex mutex_;
    std::exception_ptr error_;
};

} // namespace

StreamReport run_stream(const fs::path& checkpoint, const std::vector<PoseSample>& track, const fs::path& out_dir,
                        const StreamOptions& options) {
    if (track.empty()) throw EmptyInput("pose track is empty");
    if (options.write_frames || !options.report_name.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        const fs::path probe = out_dir / ".tsplat-write-probe";
        std::ofstream test(probe);
        if (ec || !test) throw IoError("output directory is not writable: " + out_dir.string());
        test.close();
        fs::remove(probe, ec);
    }

    StreamReport report;
    report.queue_capacity = options.queue_capacity;
    const auto wall0 = Clock::now();

    // Model op: the checkpoint is loaded exactly once, before any frame flows.
    const auto load0 = Clock::now();
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const Vec3<float> background = checkpoint_background(ckpt);
    report.load_ms = ms_since(load0);
    report.checkpoint_loads = 1;

    BoundedQueue<Tick> ticks(options.queue_capacity);
    BoundedQueue<Rendered> frames(options.queue_capacity);
    ErrorSlot error;
    double source_ms = 0, render_ms = 0;

    std::thread source([&] {
        try {
            for (const auto& pose : track) {
                const auto t0 = Clock::now();
                Tick tick{pose, t0};
                source_ms += ms_since(t0);
                if (!ticks.push(std::move(tick))) break;
            }
        } catch (...) {
            error.set(std::current_exception());
        }
        ticks.close();
    });

    std::thread renderer([&] {
        try {
            while (auto tick = ticks.pop()) {
                const auto t0 = Clock::now();
                Rendered out;
                out.index = tick->pose.index;
                out.emitted = tick->emitted;
                try {
                    out.rgb = render_frame(ckpt, tick->pose.camera, tick->pose.t, background).rgb;
                } catch (const std::exception& e) {
                    throw RenderError("frame " + std::to_string(tick->pose.index) + ": " + e.what());
                }
                render_ms += ms_since(t0);
                if (!frames.push(std::move(out))) break;
            }
        } catch (...) {
            error.set(std::current_exception());
            ticks.close();
        }
        frames.close();
    });

    // Sink: runs on the calling thread and serializes writes.
    std::vector<double> latencies;
    try {
        while (auto frame = frames.pop()) {
            const auto t0 = Clock::now();
            if (options.write_frames) write_png_rgb(out_dir / frame_file_name(frame->index), frame->rgb);
            if (options.sink_delay.count() > 0) std::this_thread::sleep_for(options.sink_delay);
            report.sink_ms += ms_since(t0);
            latencies.push_back(ms_since(frame->emitted));
            report.sink_order.push_back(frame->index);
        }
    } catch (...) {
        error.set(std::current_exception());
        ticks.close();
        frames.close();
    }
    source.join();
    renderer.join();
    error.rethrow();

    report.frames = static_cast<int>(report.sink_order.size());
    report.wall_seconds = std::chrono::duration<double>(Clock::now() - wall0).count();
    report.source_ms = source_ms;
    report.render_ms = render_ms;
    report.throughput_fps = report.wall_seconds > 0 ? report.frames / report.wall_seconds : 0.0;
    report.max_source_queue = ticks.max_occupancy();
    report.max_sink_queue = frames.max_occupancy();
    if (!latencies.empty()) {
        std::vector<double> sorted = latencies;
        std::sort(sorted.begin(), sorted.end());
        double sum = 0;
        for (double l : sorted) sum += l;
        report.mean_latency_ms = sum / static_cast<double>(sorted.size());
        const std::size_t n = sorted.size();
        report.median_latency_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n)));
        report.p99_latency_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
    }
    if (!options.report_name.empty()) {
        std::ofstream out(out_dir / options.report_name);
        if (!out) throw IoError("cannot write stream report in " + out_dir.string());
        out << report.to_json().dump(2) << "\n";
    }
    return report;
}

} // namespace tsplat
