// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/dataio.hpp"
#include "tsplat/model.hpp"
#include "tsplat/rasterizer.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace tsplat::test {

/// Tool rectangle [x0, x1) x [y0, y1) in pixels.
struct ToolBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct FixtureSpec {
    int frames = 2;
    int width = 32;
    int height = 24;
    double focal = 30.0;
    double depth_scale = 1e-3;        // meters per 16-bit unit
    std::string depth_format = "png16";
    double baseline = 0.15;           // lateral camera travel over the sequence
    std::vector<ToolBox> tools;       // per frame; empty = no masks written
};

/// World-to-camera pose of fixture frame i: a sideways slide with a small yaw.
inline Mat4<double> fixture_pose(const FixtureSpec& spec, int i) {
    const double u = spec.frames > 1 ? static_cast<double>(i) / (spec.frames - 1) - 0.5 : 0.0;
    Mat4<double> m = Mat4<double>::Identity();
    m.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.05 * u, Vec3<double>::UnitY()).toRotationMatrix();
    m(0, 3) = spec.baseline * u;
    return m;
}

inline Camera<double> fixture_camera(const FixtureSpec& spec, int i) {
    Camera<double> cam;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.fx = cam.fy = spec.focal;
    cam.cx = 0.5 * (spec.width - 1);
    cam.cy = 0.5 * (spec.height - 1);
    cam.world_to_camera = fixture_pose(spec, i);
    cam.near = 0.05;
    cam.far = 100.0;
    return cam;
}

/// Renders the cloud from every fixture camera and writes an on-disk dataset
/// (8-bit RGB, 16-bit depth, 0/255 tool masks, manifest.json) under dir.
inline DatasetManifest write_fixture_dataset(const std::filesystem::path& dir, const GaussianCloud<double>& cloud,
                                             const FixtureSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    DatasetManifest m;
    m.width = spec.width;
    m.height = spec.height;
    m.fx = m.fy = spec.focal;
    m.cx = 0.5 * (spec.width - 1);
    m.cy = 0.5 * (spec.height - 1);
    m.near = 0.05;
    m.far = 100.0;
    m.root = dir;
    const Snapshot<double> snap = snapshot(cloud);
    RenderOptions<double> opts;
    opts.normalized_depth = true;
    for (int i = 0; i < spec.frames; ++i) {
        const Camera<double> cam = fixture_camera(spec, i);
        const RenderOutput<double> out = render(snap, cam, opts);
        char name[32];
        std::snprintf(name, sizeof name, "%03d.png", i);
        FrameEntry e;
        e.rgb = std::string("rgb/") + name;
        Image<float> rgb(spec.width, spec.height, 3);
        rgb.data = out.rgb.data.cast<float>();
        write_png_rgb(dir / e.rgb, rgb);

        e.depth = std::string("depth/") + name;
        e.depth_format = spec.depth_format;
        e.depth_scale = spec.depth_scale;
        Image<float> depth(spec.width, spec.height, 1);
        for (Eigen::Index p = 0; p < depth.pixels(); ++p)
            depth.data(p, 0) = out.alpha.data(p, 0) > 0.5 ? static_cast<float>(out.depth.data(p, 0)) : 0.0f;
        if (spec.depth_format == "f32") {
            e.depth = std::string("depth/") + std::to_string(i) + ".pfm";
            Image<float> stored = depth;
            stored.data /= static_cast<float>(spec.depth_scale);
            write_pfm(dir / e.depth, stored);
        } else {
            PngImage png{spec.width, spec.height, 1, 16, std::vector<std::uint16_t>(static_cast<std::size_t>(depth.pixels()))};
            for (Eigen::Index p = 0; p < depth.pixels(); ++p)
                png.samples[static_cast<std::size_t>(p)] =
                    static_cast<std::uint16_t>(std::lround(std::min(depth.data(p, 0) / spec.depth_scale, 65535.0)));
            write_png(dir / e.depth, png);
        }

        if (!spec.tools.empty()) {
            const ToolBox& box = spec.tools[static_cast<std::size_t>(i) % spec.tools.size()];
            PngImage png{spec.width, spec.height, 1, 8, std::vector<std::uint16_t>(static_cast<std::size_t>(spec.width * spec.height), 0)};
            for (int y = box.y0; y < box.y1; ++y)
                for (int x = box.x0; x < box.x1; ++x) png.samples[static_cast<std::size_t>(y * spec.width + x)] = 255;
            e.mask = std::string("mask/") + name;
            write_png(dir / e.mask, png);
        }
        const Mat4<double>& w2c = cam.world_to_camera;
        Mat4<double> c2w = Mat4<double>::Identity();
        c2w.topLeftCorner<3, 3>() = w2c.topLeftCorner<3, 3>().transpose();
        c2w.topRightCorner<3, 1>() = -w2c.topLeftCorner<3, 3>().transpose() * w2c.topRightCorner<3, 1>();
        e.camera_to_world = c2w;
        e.time = spec.frames > 1 ? static_cast<double>(i) / (spec.frames - 1) : 0.0;
        m.frames.push_back(e);
    }
    save_manifest(dir / "manifest.json", m);
    return m;
}

/// A smooth wall of overlapping Gaussians at depth ~3 that fills fixture views.
inline GaussianCloud<double> fixture_wall(int nx = 6, int ny = 5) {
    GaussianCloud<double> c;
    const int n = nx * ny;
    c.means.resize(n, 3);
    c.log_scales.resize(n, 3);
    c.quats.resize(n, 4);
    c.opacity_logits.resize(n);
    c.sh_dc.resize(n, 3);
    c.sh_rest = Rows<double, 3 * kShRest>::Zero(n, 3 * kShRest);
    c.deform_table = Flags::Ones(n);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const int k = j * nx + i;
            const double x = -2.0 + 4.0 * i / (nx - 1), y = -1.6 + 3.2 * j / (ny - 1);
            c.means.row(k) << x, y, 3.0 + 0.2 * std::sin(1.3 * x + 0.7 * y);
            c.log_scales.row(k) << std::log(0.45), std::log(0.45), std::log(0.08);
            c.quats.row(k) << 1, 0, 0, 0;
            c.opacity_logits[k] = 3.0;
            c.sh_dc.row(k) << std::sin(1.1 * x), std::cos(0.9 * y), std::sin(0.5 * (x + y));
        }
    c.scene_scale = 3.0;
    return c;
}

/// Writes a pose track (manifest without images) of n fixture poses, t = i/(n-1).
inline DatasetManifest write_pose_track(const std::filesystem::path& path, int n, FixtureSpec spec = {}) {
    spec.frames = n;
    DatasetManifest m;
    m.width = spec.width;
    m.height = spec.height;
    m.fx = m.fy = spec.focal;
    m.cx = 0.5 * (spec.width - 1);
    m.cy = 0.5 * (spec.height - 1);
    m.near = 0.05;
    m.far = 100.0;
    for (int i = 0; i < n; ++i) {
        FrameEntry e;
        e.camera_to_world = fixture_pose(spec, i).inverse();
        e.time = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
        m.frames.push_back(e);
    }
    save_manifest(path, m);
    return m;
}

} // namespace tsplat::test
