// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/model.hpp"
#include "tsplat/numerics.hpp"
#include "tsplat/types.hpp"

#include <memory>
#include <vector>

namespace tsplat {

inline constexpr int kTileSize = 16;
/// Compositing stops once transmittance drops below this.
inline constexpr double kTransmittanceStop = 1e-4;
/// Per-splat alpha clamp.
inline constexpr double kMaxAlpha = 0.999;

template <typename S>
struct RenderOptions {
    Vec3<S> background = Vec3<S>::Zero();
    /// Divide the blended depth by the accumulated alpha.
    bool normalized_depth = false;
};

/// Everything the forward pass retains for render_backward.
template <typename S>
struct RasterState {
    Camera<S> camera;
    RenderOptions<S> options;
    Snapshot<S> snap;

    Flags visible;
    Rows<S, 3> camera_points;
    Rows<S, 2> means2d;
    Rows<S, 3> conics;      // (xx, xy, yy) of the inverse screen covariance
    Rows<S, 3> colors;
    Rows<S, 3> view_dirs;   // unit vectors from the camera center
    VecX<S> view_dist;

    std::vector<int> sorted;                   // visible ids, depth ascending, ties by id
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> tile_lists;  // per tile, ids in sorted order
    std::vector<int> n_scanned;                // per pixel, tile-list entries scanned
    VecX<Accum> final_transmittance;
    VecX<Accum> blended_depth;                 // before optional normalization
};

template <typename S>
struct RenderOutput {
    Image<S> rgb;    // H x W x 3, composited + (1 - alpha) * background
    Image<S> depth;  // H x W expected depth
    Image<S> alpha;  // H x W accumulated opacity
    std::shared_ptr<const RasterState<S>> state;  // null for render_reference

    [[nodiscard]] int width() const { return rgb.width; }
    [[nodiscard]] int height() const { return rgb.height; }
};

/// Gradients with respect to the raw parameters of the cloud the snapshot
/// was taken from, plus densification statistics.
template <typename S>
struct ParamGrads {
    Rows<S, 3> means;
    Rows<S, 3> log_scales;
    Rows<S, 4> quats;
    VecX<S> opacity_logits;
    Rows<S, 3> sh_dc;
    Rows<S, 3 * kShRest> sh_rest;
    /// |dL/d mean2d| in NDC units (pixel gradient scaled by W/2, H/2).
    VecX<S> screen_grad_norm;
    Flags visible;

    static ParamGrads zeros(Eigen::Index n);
    [[nodiscard]] Eigen::Index size() const { return means.rows(); }
    [[nodiscard]] bool all_finite() const;
};

/// Tiled forward rasterization.
template <typename S>
[[nodiscard]] RenderOutput<S> render(const Snapshot<S>& snap, const Camera<S>& cam,
                                     const RenderOptions<S>& options = {});

/// Brute-force per-pixel oracle over all depth-sorted Gaussians. Same
/// culling, cutoff and clamping rules as render; no backward state.
template <typename S>
[[nodiscard]] RenderOutput<S> render_reference(const Snapshot<S>& snap, const Camera<S>& cam,
                                               const RenderOptions<S>& options = {});

/// Reverse-mode gradients of the compositing equations. Empty gradient
/// rasters count as zero. Throws ContractViolation without forward state.
template <typename S>
[[nodiscard]] ParamGrads<S> render_backward(const RenderOutput<S>& forward, const Image<S>& grad_rgb,
                                            const Image<S>& grad_depth, const Image<S>& grad_alpha);

} // namespace tsplat
