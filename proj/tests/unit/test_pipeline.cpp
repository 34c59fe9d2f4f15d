// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/pipeline.hpp"

#include "tsplat/dataio.hpp"
#include "tsplat/trainer.hpp"

#include "../support/fixture.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <numeric>
#include <thread>

namespace tsplat {
namespace {

using test::Rng;
using test::TempDir;
namespace fs = std::filesystem;

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random canonical cloud with a small, non-identity deformation saved to dir/model.tsplat.
fs::path write_stream_checkpoint(const TempDir& dir, std::uint64_t seed = 3) {
    Rng rng(seed);
    Checkpoint ckpt;
    ckpt.cloud = test::random_cloud<float>(rng, 40);
    ckpt.deformation = test::small_deform_model<float>(rng, 0.05);
    const fs::path path = dir / "model.tsplat";
    save_checkpoint(path, ckpt);
    return path;
}

TEST(BoundedQueue, PreservesFifoOrderAcrossThreads) {
    BoundedQueue<int> q(3);
    std::thread producer([&] {
        for (int i = 0; i < 200; ++i) ASSERT_TRUE(q.push(i));
        q.close();
    });
    std::vector<int> got;
    while (auto v = q.pop()) got.push_back(*v);
    producer.join();
    std::vector<int> expected(200);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(got, expected);
    EXPECT_LE(q.max_occupancy(), 3u);
    EXPECT_EQ(q.pushed(), 200u);
}

TEST(BoundedQueue, FullQueueBlocksProducer) {
    BoundedQueue<int> q(2);
    ASSERT_TRUE(q.push(1));
    ASSERT_TRUE(q.push(2));
    std::atomic<bool> pushed{false};
    std::thread producer([&] {
        (void)q.push(3);
        pushed = true;
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    EXPECT_FALSE(pushed.load());
    EXPECT_EQ(*q.pop(), 1);
    producer.join();
    EXPECT_TRUE(pushed.load());
    EXPECT_EQ(q.max_occupancy(), 2u);
}

TEST(BoundedQueue, CloseDrainsThenEnds) {
    BoundedQueue<int> q(4);
    ASSERT_TRUE(q.push(7));
    q.close();
    EXPECT_FALSE(q.push(8));
    EXPECT_EQ(*q.pop(), 7);
    EXPECT_FALSE(q.pop().has_value());
    EXPECT_THROW(BoundedQueue<int>(0), ConfigError);
}

TEST(PoseTrack, LoadsPosesTimesAndScale) {
    TempDir dir("track");
    const auto m = test::write_pose_track(dir / "track.json", 63);
    const auto track = load_pose_track(dir / "track.json");
    ASSERT_EQ(track.size(), 63u);
    for (int i = 0; i < 63; ++i) {
        EXPECT_EQ(track[i].index, i);
        EXPECT_FLOAT_EQ(track[i].t, static_cast<float>(i) / 62.0f);
        const Mat4<double> w2c = m.frames[i].camera_to_world.inverse();
        EXPECT_LT((track[i].camera.world_to_camera.cast<double>() - w2c).cwiseAbs().maxCoeff(), 1e-6);
    }
    const auto half = load_pose_track(dir / "track.json", 2);
    EXPECT_EQ(half[0].camera.width, 16);
    EXPECT_EQ(half[0].camera.height, 12);
    EXPECT_FLOAT_EQ(half[0].camera.fx, 15.0f);
    EXPECT_FLOAT_EQ(half[0].camera.cx, 0.5f * 31.0f / 2.0f);
    EXPECT_THROW((void)load_pose_track(dir / "missing.json"), MissingFile);
    EXPECT_THROW((void)load_pose_track(dir / "track.json", 0), ConfigError);
}

TEST(Stream, WritesEveryFrameInOrderWithOneLoad) {
    TempDir dir("stream");
    const fs::path ckpt = write_stream_checkpoint(dir);
    test::write_pose_track(dir / "track.json", 63);
    const auto track = load_pose_track(dir / "track.json");
    const StreamReport r = run_stream(ckpt, track, dir / "out");
    EXPECT_EQ(r.frames, 63);
    EXPECT_EQ(r.checkpoint_loads, 1);
    std::vector<int> expected(63);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(r.sink_order, expected);
    for (int i = 0; i < 63; ++i) EXPECT_TRUE(fs::exists(dir / "out" / frame_file_name(i))) << i;
    EXPECT_EQ(frame_file_name(7), "frame_007.png");
    EXPECT_LE(r.max_source_queue, r.queue_capacity);
    EXPECT_LE(r.max_sink_queue, r.queue_capacity);
    EXPECT_GT(r.throughput_fps, 0.0);
    EXPECT_LE(r.median_latency_ms, r.p99_latency_ms);

    const auto j = nlohmann::json::parse(read_bytes(dir / "out" / "stream_report.json"));
    EXPECT_EQ(j.at("frames"), 63);
    EXPECT_EQ(j.at("checkpoint_loads"), 1);
    EXPECT_TRUE(j.at("latency_ms").contains("p99"));
    EXPECT_TRUE(j.at("stages_ms").contains("render"));
}

TEST(Stream, SlowSinkFillsQueuesWithoutExceedingCapacity) {
    TempDir dir("backpressure");
    const fs::path ckpt = write_stream_checkpoint(dir);
    test::write_pose_track(dir / "track.json", 24);
    StreamOptions opts;
    opts.queue_capacity = 2;
    opts.sink_delay = std::chrono::milliseconds(15);
    const StreamReport r = run_stream(ckpt, load_pose_track(dir / "track.json"), dir / "out", opts);
    EXPECT_EQ(r.frames, 24);
    EXPECT_EQ(r.max_sink_queue, 2u);
    EXPECT_EQ(r.max_source_queue, 2u);
    std::vector<int> expected(24);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(r.sink_order, expected);
}

TEST(Stream, MatchesDirectRenderBitwiseAndIsDeterministic) {
    TempDir dir("stream-det");
    const fs::path ckpt_path = write_stream_checkpoint(dir);
    test::write_pose_track(dir / "track.json", 9);
    const auto track = load_pose_track(dir / "track.json");
    (void)run_stream(ckpt_path, track, dir / "a");
    (void)run_stream(ckpt_path, track, dir / "b");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    for (const auto& pose : track) {
        const auto direct = render_frame(ckpt, pose.camera, pose.t, checkpoint_background(ckpt));
        write_png_rgb(dir / "direct.png", direct.rgb);
        const std::string a = read_bytes(dir / "a" / frame_file_name(pose.index));
        EXPECT_EQ(a, read_bytes(dir / "b" / frame_file_name(pose.index))) << pose.index;
        EXPECT_EQ(a, read_bytes(dir / "direct.png")) << pose.index;
    }
}

TEST(Stream, ReportsLoadWriteAndRenderFailures) {
    TempDir dir("stream-err");
    const fs::path ckpt = write_stream_checkpoint(dir);
    test::write_pose_track(dir / "track.json", 4);
    auto track = load_pose_track(dir / "track.json");
    EXPECT_THROW((void)run_stream(dir / "nope.tsplat", track, dir / "out"), MissingFile);
    { std::ofstream(dir / "plain-file") << "x"; }
    EXPECT_THROW((void)run_stream(ckpt, track, dir / "plain-file" / "out"), IoError);
    EXPECT_THROW((void)run_stream(ckpt, {}, dir / "out"), EmptyInput);

    track[2].camera.width = 0;
    try {
        (void)run_stream(ckpt, track, dir / "out");
        FAIL() << "expected RenderError";
    } catch (const RenderError& e) {
        EXPECT_NE(std::string(e.what()).find("frame 2"), std::string::npos) << e.what();
    }
}

} // namespace
} // namespace tsplat
