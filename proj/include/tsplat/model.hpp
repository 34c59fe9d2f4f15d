// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/types.hpp"

#include <vector>

namespace tsplat {

/// Canonical, optimizer-owned Gaussian parameters. All per-Gaussian arrays
/// share the leading dimension N. sh_rest holds 15 coefficient triples per
/// row laid out [coefficient][channel].
template <typename S>
struct GaussianCloud {
    Rows<S, 3> means;
    Rows<S, 3> log_scales;
    Rows<S, 4> quats;          // raw (w, x, y, z), normalized only when activated
    VecX<S> opacity_logits;
    Rows<S, 3> sh_dc;
    Rows<S, 3 * kShRest> sh_rest;
    Flags deform_table;        // 1 = receives deformation offsets
    S scene_scale = S(1);

    [[nodiscard]] Eigen::Index size() const { return means.rows(); }

    /// Throws ShapeMismatch / NonFiniteParameters / EmptyInput.
    void validate() const;

    /// Rows in the given order, duplicates allowed.
    [[nodiscard]] GaussianCloud select(const std::vector<Eigen::Index>& rows) const;
    void append(const GaussianCloud& other);

    template <typename T>
    [[nodiscard]] GaussianCloud<T> cast() const {
        GaussianCloud<T> c;
        c.means = means.template cast<T>();
        c.log_scales = log_scales.template cast<T>();
        c.quats = quats.template cast<T>();
        c.opacity_logits = opacity_logits.template cast<T>();
        c.sh_dc = sh_dc.template cast<T>();
        c.sh_rest = sh_rest.template cast<T>();
        c.deform_table = deform_table;
        c.scene_scale = T(scene_scale);
        return c;
    }
};

/// Activated, read-only view of a cloud as consumed by the rasterizer, plus
/// what the backward pass needs to return to raw parameters.
template <typename S>
struct Snapshot {
    Rows<S, 3> means;
    Rows<S, 3> scales;           // exp(log_scales)
    Rows<S, 4> rotations;        // unit quaternions
    VecX<S> quat_norms;          // |raw quat|
    VecX<S> opacities;           // sigmoid(logit)
    Rows<S, 3 * kShCoeffs> sh;   // [dc, rest...] x channel

    [[nodiscard]] Eigen::Index size() const { return means.rows(); }
};

template <typename S>
[[nodiscard]] Snapshot<S> snapshot(const GaussianCloud<S>& cloud);

struct InitOptions {
    int knn_k = 3;
    double initial_opacity = 0.1;
    /// Isotropic init scale is clamped to [min_scale, max_scale_factor * scene_scale].
    double min_scale = 1e-7;
    double max_scale_factor = 0.1;
};

/// Seeds one Gaussian per point. `deform_flags` (optional, size M) marks which
/// points receive deformation; empty means all of them.
template <typename S>
[[nodiscard]] GaussianCloud<S> init_from_points(const Rows<S, 3>& points, const Rows<S, 3>& colors, S scene_scale,
                                                const InitOptions& options = {}, const Flags& deform_flags = {});

/// Mean distance to the k nearest other points, for every point (k clipped to M - 1).
/// Points with no neighbours get +infinity.
template <typename S>
[[nodiscard]] VecX<S> mean_knn_distance(const Rows<S, 3>& points, int k);

/// Radius of the AABB-centered bounding sphere of a point set.
template <typename S>
[[nodiscard]] S bounding_sphere_radius(const Rows<S, 3>& points);

} // namespace tsplat
