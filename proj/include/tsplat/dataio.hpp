// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/numerics.hpp"
#include "tsplat/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tsplat {

inline constexpr int kManifestVersion = 1;

enum class DepthSource { Binocular, Monocular };

/// One manifest frame. Paths are relative to the manifest directory; any of
/// rgb/depth/mask may be empty (pose tracks carry poses and times only).
struct FrameEntry {
    std::string rgb;
    std::string depth;
    std::string mask;
    std::string depth_format = "png16";  // "png16" (8/16-bit gray PNG) or "f32" (PFM)
    double depth_scale = 1.0;            // scene units per stored depth unit
    Mat4<double> camera_to_world = Mat4<double>::Identity();  // OpenCV axes: x right, y down, z forward
    double time = 0.0;
};

struct DatasetManifest {
    int version = kManifestVersion;
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    double near = 0.01, far = 1000.0;
    DepthSource depth_source = DepthSource::Binocular;
    std::vector<FrameEntry> frames;
    std::filesystem::path root;  // directory the relative paths resolve against

    /// Camera for frame i at the manifest resolution.
    [[nodiscard]] Camera<double> camera(std::size_t i) const;
};

/// Throws MalformedManifest naming the offending field or frame.
[[nodiscard]] DatasetManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& root,
                                             bool require_images = true);
[[nodiscard]] nlohmann::json manifest_to_json(const DatasetManifest& m);
/// `path` is the manifest file or a directory containing manifest.json.
[[nodiscard]] DatasetManifest load_manifest(const std::filesystem::path& path, bool require_images = true);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

struct FrameRecord {
    int index = 0;
    Image<float> rgb;       // H x W x 3 in [0, 1]
    Image<float> depth;     // H x W scene units, 0 = invalid; empty when absent
    Mask tool_mask;         // H x W, 1 = tool; empty when absent
    Camera<float> camera;
    float t = 0.0f;
};

struct Dataset {
    DatasetManifest manifest;  // intrinsics and size already divided by the scale
    std::vector<FrameRecord> frames;
    int resolution_scale = 1;

    [[nodiscard]] DepthSource depth_source() const { return manifest.depth_source; }
};

/// Decodes every frame and applies an integer downscale k to rasters and
/// intrinsics (width/k, fx/k, cx/k). Throws MissingFile, DimensionMismatch,
/// MalformedManifest or ImageDecodeError.
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& path, int resolution_scale = 1);

/// Integer downscaling on the same sample grid as (fx/k, cx/k): color uses a
/// width-k box centered on full-resolution pixel (k x, k y), depth takes that
/// pixel, masks OR over the box support.
[[nodiscard]] Image<float> downscale_rgb(const Image<float>& img, int k);
[[nodiscard]] Image<float> downscale_depth(const Image<float>& depth, int k);
[[nodiscard]] Mask downscale_mask(const Mask& mask, int k);

struct PointSet {
    Rows<double, 3> points;
    Rows<double, 3> colors;
    Flags tool;  // 1 where the source pixel (or most of a voxel) was a tool pixel

    [[nodiscard]] Eigen::Index size() const { return points.rows(); }
    void append(const PointSet& other);
};

/// Back-projects every stride-th pixel with depth > 0 (and, with exclude_tool,
/// outside the tool mask) through the inverse pinhole and camera-to-world pose.
[[nodiscard]] PointSet depth_to_points(const FrameRecord& frame, bool exclude_tool, int stride = 1);

/// Voxel-grid centroids (mean position and color; tool flag by majority) in
/// lexicographic voxel order.
[[nodiscard]] PointSet voxel_downsample(const PointSet& in, double voxel);

struct AccumulateOptions {
    int target_count = 30000;  // 0 disables downsampling
    int stride = 1;
    double tolerance = 0.1;    // accepted relative deviation from target_count
};

struct AccumulatedCloud {
    PointSet points;
    double scene_scale = 0.0;
    double voxel = 0.0;        // 0 when not downsampled
};

/// Union of depth_to_points over frames (tool pixels excluded in tissue-only
/// mode), voxel downsampled with the edge found by bisection. Throws EmptyCloud.
[[nodiscard]] AccumulatedCloud accumulate_point_cloud(const std::vector<FrameRecord>& frames, Mode mode,
                                                      const AccumulateOptions& options = {});

// Raster files.

/// Decoded PNG samples, row-major, interleaved channels, bit depth 8 or 16.
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;
};

[[nodiscard]] PngImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const PngImage& img);

/// RGB in [0,1], clamped and rounded to 8 bits.
void write_png_rgb(const std::filesystem::path& path, const Image<float>& rgb);
[[nodiscard]] Image<float> read_png_rgb(const std::filesystem::path& path);

[[nodiscard]] Image<float> read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Image<float>& img);

// Point files.

/// Binary little-endian PLY with float x y z, uchar red green blue, uchar tool.
void write_ply(const std::filesystem::path& path, const PointSet& pts);
[[nodiscard]] PointSet read_ply(const std::filesystem::path& path);

// Conversion.

struct ConvertOptions {
    std::string depth_format = "png16";
    double depth_scale = 1.0;
    bool invert_mask = false;  // source masks mark tissue instead of tools
    DepthSource depth_source = DepthSource::Binocular;
};

/// Writes manifest.json for an EndoNeRF-style directory (poses_bounds.npy,
/// images/, depth/, masks/). LLFF pose columns are reordered to OpenCV axes,
/// the principal point moves to pixel-center coordinates and t = i / (N - 1).
DatasetManifest convert_endonerf(const std::filesystem::path& src, const std::filesystem::path& out_manifest,
                                 const ConvertOptions& options = {});

/// Minimal reader for little-endian float64 / float32 .npy arrays (C order).
struct NpyArray {
    std::vector<std::size_t> shape;
    std::vector<double> data;
};
[[nodiscard]] NpyArray read_npy(const std::filesystem::path& path);

} // namespace tsplat
