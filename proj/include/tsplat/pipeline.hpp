// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/checkpoint.hpp"
#include "tsplat/errors.hpp"
#include "tsplat/numerics.hpp"

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <mutex>
#include <optional>
#include <deque>
#include <vector>

namespace tsplat {

/// Blocking FIFO with a fixed capacity. push waits while full, pop waits
/// while empty; after close() pushes fail and pops drain what is left.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ConfigError("queue capacity must be positive");
    }

    bool push(T item) {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        max_occupancy_ = std::max(max_occupancy_, items_.size());
        ++pushed_;
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }

    [[nodiscard]] std::size_t capacity() const { return capacity_; }
    [[nodiscard]] std::size_t max_occupancy() const {
        std::lock_guard lock(mutex_);
        return max_occupancy_;
    }
    [[nodiscard]] std::size_t pushed() const {
        std::lock_guard lock(mutex_);
        return pushed_;
    }

private:
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    std::size_t max_occupancy_ = 0;
    std::size_t pushed_ = 0;
    bool closed_ = false;
};

/// One tick of a pose track.
struct PoseSample {
    int index = 0;
    Camera<float> camera;
    float t = 0.0f;
};

/// Reads a pose track: the dataset manifest schema with rgb/depth/mask
/// omitted. Intrinsics and size are divided by resolution_scale.
[[nodiscard]] std::vector<PoseSample> load_pose_track(const std::filesystem::path& path, int resolution_scale = 1);

struct StreamOptions {
    std::size_t queue_capacity = 4;
    /// Extra time the sink spends per frame; used to exercise backpressure.
    std::chrono::milliseconds sink_delay{0};
    bool write_frames = true;
    /// Written next to the frames when non-empty.
    std::string report_name = "stream_report.json";
};

struct StreamReport {
    int frames = 0;
    double wall_seconds = 0.0;
    double mean_latency_ms = 0.0;
    double median_latency_ms = 0.0;
    double p99_latency_ms = 0.0;
    double throughput_fps = 0.0;
    double load_ms = 0.0;           // one-time checkpoint load
    double source_ms = 0.0;         // per stage, summed over frames
    double render_ms = 0.0;
    double sink_ms = 0.0;
    int checkpoint_loads = 0;
    std::size_t queue_capacity = 0;
    std::size_t max_source_queue = 0;  // peak occupancy between source and render
    std::size_t max_sink_queue = 0;    // peak occupancy between render and sink
    std::vector<int> sink_order;       // source indices in the order the sink wrote them

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Output file name for source index i: frame_%03d.png.
[[nodiscard]] std::string frame_file_name(int index);

/// Source -> (checkpoint loaded once) deform+render -> sink, each stage on its
/// own thread, joined by bounded queues. Throws on checkpoint load failure,
/// IoError for an unwritable output directory and RenderError naming the
/// frame when a render fails.
[[nodiscard]] StreamReport run_stream(const std::filesystem::path& checkpoint, const std::vector<PoseSample>& track,
                                      const std::filesystem::path& out_dir, const StreamOptions& options = {});

} // namespace tsplat
