// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/model.hpp"
#include "tsplat/rasterizer.hpp"
#include "tsplat/types.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace tsplat {

inline constexpr int kNumPlanes = 6;
inline constexpr int kNumHeads = 4;
/// Axis pairs of XY, XZ, YZ, XT, YT, ZT; axis 3 is time.
inline constexpr std::array<std::array<int, 2>, kNumPlanes> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

[[nodiscard]] const char* plane_name(int plane);
[[nodiscard]] inline bool is_temporal_plane(int plane) { return plane >= 3; }

struct DeformationConfig {
    int feature_dim = 32;
    int base_spatial = 64;
    int base_temporal = 100;
    std::vector<int> multipliers{1, 2, 4, 8};
    /// Plane entries start uniform in [center - halfwidth, center + halfwidth].
    double init_center = 0.1;
    double init_halfwidth = 0.05;
    int hidden_layers = 8;
    int hidden_width = 256;
    /// Append the normalized canonical position to the decoder input.
    bool concat_position = true;
    /// l1_time penalizes |P| instead of deviation from the per-texel time mean.
    bool l1_time_magnitude = false;
    /// Relative padding of the scene AABB when deriving the query domain.
    double bounds_margin = 0.05;

    void validate() const;
};

/// Six factor planes per resolution level. Plane (p, l) is stored at
/// planes[l * 6 + p] as a (res_b * res_a) x F matrix, row jb * res_a + ia.
template <typename S>
struct HexPlaneField {
    int feature_dim = 0;
    int base_spatial = 0;
    int base_temporal = 0;
    std::vector<int> multipliers;
    Vec3<S> lo = Vec3<S>::Zero();
    Vec3<S> hi = Vec3<S>::Ones();
    std::vector<MatX<S>> planes;

    [[nodiscard]] int levels() const { return static_cast<int>(multipliers.size()); }
    [[nodiscard]] int output_dim() const { return levels() * feature_dim; }
    /// Grid side along `axis` (0..2 spatial, 3 time) at `level`.
    [[nodiscard]] int resolution(int axis, int level) const {
        return (axis == 3 ? base_temporal : base_spatial) * multipliers[static_cast<std::size_t>(level)];
    }
    [[nodiscard]] MatX<S>& plane(int p, int level) { return planes[static_cast<std::size_t>(level * kNumPlanes + p)]; }
    [[nodiscard]] const MatX<S>& plane(int p, int level) const {
        return planes[static_cast<std::size_t>(level * kNumPlanes + p)];
    }
    /// Scene position mapped to [0,1]^3 and clamped.
    [[nodiscard]] Vec3<S> normalize(const Vec3<S>& mu) const;
    void validate() const;
};

/// hidden_layers ReLU layers followed by four linear heads
/// (d_mean 3, d_log_scale 3, d_quat 4, d_opacity_logit 1). Weights are out x in.
template <typename S>
struct MLPDecoder {
    std::vector<MatX<S>> weights;
    std::vector<VecX<S>> biases;

    [[nodiscard]] int hidden_layers() const { return static_cast<int>(weights.size()) - kNumHeads; }
    [[nodiscard]] int input_dim() const { return static_cast<int>(weights.front().cols()); }
    void validate() const;
};

template <typename S>
struct DeformationModel {
    HexPlaneField<S> field;
    MLPDecoder<S> decoder;
    bool concat_position = true;
    bool l1_time_magnitude = false;

    /// Planes seeded from `seed`, hidden layers with uniform(+-1/sqrt(fan_in)),
    /// heads zeroed so the initial deformation is the identity.
    static DeformationModel create(const DeformationConfig& config, const Vec3<S>& lo, const Vec3<S>& hi,
                                   std::uint64_t seed);

    [[nodiscard]] int decoder_input_dim() const { return field.output_dim() + (concat_position ? 3 : 0); }
    void validate() const;

    template <typename T>
    [[nodiscard]] DeformationModel<T> cast() const;
};

/// Padded AABB of a point set, with a minimum extent per axis.
template <typename S>
void domain_bounds(const Rows<S, 3>& points, double margin, Vec3<S>& lo, Vec3<S>& hi);

/// Gradients congruent with a DeformationModel.
template <typename S>
struct DeformationGrads {
    std::vector<MatX<S>> planes;
    std::vector<MatX<S>> weights;
    std::vector<VecX<S>> biases;

    static DeformationGrads zeros_like(const DeformationModel<S>& model);
    void set_zero();
    [[nodiscard]] bool all_finite() const;
};

/// Concatenated per-level products of the six bilinear plane samples.
template <typename S>
[[nodiscard]] VecX<S> query_features(const HexPlaneField<S>& field, const Vec3<S>& mu, S t);

template <typename S>
struct DecodeOutput {
    Rows<S, 3> d_means;
    Rows<S, 3> d_log_scales;
    Rows<S, 4> d_quats;
    VecX<S> d_opacity_logits;
};

/// Forward pass over a batch of decoder inputs (one row per query).
template <typename S>
[[nodiscard]] DecodeOutput<S> decode(const MLPDecoder<S>& decoder, const MatX<S>& inputs);

/// Decoder input rows [features, normalized mu] for the given positions.
template <typename S>
[[nodiscard]] MatX<S> decoder_inputs(const DeformationModel<S>& model, const Rows<S, 3>& means, S t);

/// Forward values retained for deform_backward.
template <typename S>
struct DeformCache {
    S t = S(0);
    std::vector<Eigen::Index> rows;     // deformed Gaussians, ascending
    Rows<S, 3> query_means;              // their canonical means
    std::vector<MatX<S>> activations;   // decoder input, then each hidden layer output
};

template <typename S>
struct DeformedSnapshot {
    GaussianCloud<S> cloud;   // canonical parameters plus offsets
    Snapshot<S> snap;
    DecodeOutput<S> offsets;  // one row per cache->rows entry
    std::shared_ptr<const DeformCache<S>> cache;
};

/// Applies offsets at time t to every Gaussian whose deform_table flag is set.
template <typename S>
[[nodiscard]] DeformedSnapshot<S> deform(const GaussianCloud<S>& cloud, const DeformationModel<S>& model, S t);

/// Turns gradients with respect to the deformed parameters into gradients of
/// the canonical ones (in place) and accumulates decoder and plane gradients.
template <typename S>
void deform_backward(const DeformedSnapshot<S>& deformed, const DeformationModel<S>& model, ParamGrads<S>& grads,
                     DeformationGrads<S>& out);

struct DeformRegularizers {
    double time_smooth = 0.0;
    double l1_time = 0.0;
    double tv_spatial = 0.0;
};

struct DeformRegWeights {
    double time_smooth = 0.01;
    double l1_time = 0.01;
    double tv_spatial = 0.01;
};

/// Plane regularizers, each averaged per plane and then over plane-levels.
///   time_smooth: mean squared second difference along t of XT/YT/ZT
///   l1_time:     mean |P - mean_t P| of XT/YT/ZT (or mean |P| with the magnitude flag)
///   tv_spatial:  mean squared forward difference along each axis of XY/XZ/YZ, summed over both axes
/// When `grads` is given the weighted gradient is accumulated into it.
template <typename S>
DeformRegularizers deform_regularizers(const DeformationModel<S>& model, const DeformRegWeights& weights = {},
                                       DeformationGrads<S>* grads = nullptr);

} // namespace tsplat
