// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/deformation.hpp"
#include "tsplat/rasterizer.hpp"
#include "tsplat/types.hpp"

#include <vector>

namespace tsplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
/// Guard on predicted depth before taking the reciprocal.
inline constexpr double kDisparityEps = 1e-6;

/// A scalar loss and its gradient with respect to the prediction.
template <typename S>
struct LossGrad {
    double value = 0.0;
    Image<S> grad;
};

/// Mean |pred - gt| over valid pixels and all channels.
template <typename S>
[[nodiscard]] LossGrad<S> masked_l1(const Image<S>& pred, const Image<S>& gt, const Mask& valid);

/// Mean |1 / max(pred, eps) - 1 / gt| over valid pixels. No gradient flows
/// through the guard. Throws DegenerateInput if gt <= 0 on a valid pixel.
template <typename S>
[[nodiscard]] LossGrad<S> depth_loss_disparity(const Image<S>& pred, const Image<S>& gt, const Mask& valid);

/// 1 - Pearson correlation over valid pixels.
template <typename S>
[[nodiscard]] LossGrad<S> depth_loss_pearson(const Image<S>& pred, const Image<S>& gt, const Mask& valid);

/// 1 - mean SSIM over every channel of every 11x11 window that lies inside
/// the image and touches no invalid pixel. Throws NoValidWindow if none do.
template <typename S>
[[nodiscard]] LossGrad<S> ssim_loss(const Image<S>& pred, const Image<S>& gt, const Mask& valid);

/// Mean squared forward difference over horizontal and vertical pixel pairs
/// with both pixels inside the mask, averaged over channels. Empty mask gives 0.
template <typename S>
[[nodiscard]] LossGrad<S> tv_invisible(const Image<S>& pred, const Mask& invisible);

/// Pixelwise OR of the tool masks.
[[nodiscard]] Mask compute_invisible_mask(const std::vector<Mask>& tool_masks);

/// Valid-pixel mask for supervision: NOT tool in tissue-only mode, all ones otherwise.
[[nodiscard]] Mask supervision_mask(const Mask& tool_mask, int width, int height, Mode mode);

/// 10 log10(1 / MSE) over valid pixels; +infinity when the MSE is zero.
template <typename S>
[[nodiscard]] double psnr(const Image<S>& pred, const Image<S>& gt, const Mask& valid);

/// Mean SSIM (the metric, not the loss).
template <typename S>
[[nodiscard]] double ssim(const Image<S>& pred, const Image<S>& gt, const Mask& valid);

enum class DepthLossKind { Disparity, Pearson };

struct LossWeights {
    double depth = 0.001;
    double ssim = 0.2;
    double tv = 0.03;
    DeformRegWeights deform;
};

struct LossBreakdown {
    double l1 = 0.0;
    double depth = 0.0;
    double ssim = 0.0;
    double tv = 0.0;
    double deform_reg = 0.0;  // already weighted
    double total = 0.0;

    [[nodiscard]] double weighted_sum(const LossWeights& w) const {
        return l1 + w.depth * depth + w.ssim * ssim + w.tv * tv + deform_reg;
    }
};

template <typename S>
struct CompositeLoss {
    LossBreakdown breakdown;
    Image<S> grad_rgb;
    Image<S> grad_depth;
};

/// One training frame as seen by the loss.
template <typename S>
struct Target {
    const Image<S>& rgb;
    const Image<S>& depth;  // may be empty: no depth supervision
    const Mask& tool_mask;  // may be empty: no tools
};

/// Weighted objective for one rendered frame. TV on the invisible mask is
/// applied in tissue-only mode only. A depth term whose statistics are
/// degenerate on this frame (no valid depth, zero variance) contributes 0, as
/// does SSIM when no window is fully valid.
template <typename S>
[[nodiscard]] CompositeLoss<S> composite_loss(const RenderOutput<S>& render, const Target<S>& target,
                                              const Mask& invisible, Mode mode, DepthLossKind depth_kind,
                                              const LossWeights& weights, const DeformRegularizers& deform_terms);

} // namespace tsplat
