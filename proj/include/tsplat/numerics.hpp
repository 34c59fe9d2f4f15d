// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/errors.hpp"
#include "tsplat/types.hpp"

#include <array>
#include <cmath>

namespace tsplat {

/// Screen-space covariance dilation added to both diagonal entries, in px^2.
inline constexpr double kScreenDilation = 0.3;
/// Footprint cutoff: a splat touches a pixel only when Mahalanobis^2 <= 9 (3 sigma).
inline constexpr double kCutoffMahalanobis2 = 9.0;
/// Real SH band-0 constant; stored colors are offsets around 0.5.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShOffset = 0.5;

/// Pinhole camera. Pixel (x, y) is sampled at coordinate (x, y); the principal
/// point uses the same convention.
template <typename S>
struct Camera {
    S fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 1, height = 1;
    Mat4<S> world_to_camera = Mat4<S>::Identity();
    S near = S(0.01);
    S far = S(1000);

    [[nodiscard]] Mat3<S> rotation() const { return world_to_camera.template topLeftCorner<3, 3>(); }
    [[nodiscard]] Vec3<S> translation() const { return world_to_camera.template topRightCorner<3, 1>(); }
    /// Camera center in world coordinates.
    [[nodiscard]] Vec3<S> center() const { return -rotation().transpose() * translation(); }

    template <typename T>
    [[nodiscard]] Camera<T> cast() const {
        Camera<T> c;
        c.fx = T(fx); c.fy = T(fy); c.cx = T(cx); c.cy = T(cy);
        c.width = width; c.height = height;
        c.world_to_camera = world_to_camera.template cast<T>();
        c.near = T(near); c.far = T(far);
        return c;
    }

    /// Throws DegenerateInput when intrinsics, clip range or pose are invalid.
    void validate() const {
        if (!(fx > 0 && fy > 0)) throw DegenerateInput("camera focal lengths must be positive");
        if (width <= 0 || height <= 0) throw DegenerateInput("camera dimensions must be positive");
        if (!(cx >= 0 && cx < S(width) && cy >= 0 && cy < S(height)))
            throw DegenerateInput("camera principal point outside the image");
        if (!(near > 0 && near < far)) throw DegenerateInput("camera clip range must satisfy 0 < near < far");
        const Mat3<S> r = rotation();
        const S err = (r.transpose() * r - Mat3<S>::Identity()).cwiseAbs().maxCoeff();
        if (!(err <= S(1e-4))) throw DegenerateInput("camera rotation is not orthonormal");
    }
};

/// Quaternions are stored (w, x, y, z).
template <typename S>
[[nodiscard]] Vec4<S> normalize_quat(const Vec4<S>& q) {
    const S n = q.norm();
    if (!(n > S(0)) || !std::isfinite(static_cast<double>(n)))
        throw DegenerateInput("quaternion has zero or non-finite norm");
    return q / n;
}

/// Rotation matrix of a quaternion whose norm is already one.
template <typename S>
[[nodiscard]] Mat3<S> unit_quat_to_rotation(const Vec4<S>& q) {
    const S w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<S> r;
    r << S(1) - S(2) * (y * y + z * z), S(2) * (x * y - w * z), S(2) * (x * z + w * y),
         S(2) * (x * y + w * z), S(1) - S(2) * (x * x + z * z), S(2) * (y * z - w * x),
         S(2) * (x * z - w * y), S(2) * (y * z + w * x), S(1) - S(2) * (x * x + y * y);
    return r;
}

template <typename S>
[[nodiscard]] Mat3<S> quat_to_rotation(const Vec4<S>& q) {
    return unit_quat_to_rotation(normalize_quat(q));
}

/// Pulls a gradient on R(q) back to the unit quaternion q.
template <typename S>
[[nodiscard]] Vec4<S> unit_quat_to_rotation_vjp(const Vec4<S>& q, const Mat3<S>& g) {
    const S w = q[0], x = q[1], y = q[2], z = q[3];
    const S two = S(2);
    Vec4<S> out;
    out[0] = two * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    out[1] = two * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)) -
             S(4) * x * (g(1, 1) + g(2, 2));
    out[2] = two * (x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)) -
             S(4) * y * (g(0, 0) + g(2, 2));
    out[3] = two * (-w * g(0, 1) + x * g(0, 2) + w * g(1, 0) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1)) -
             S(4) * z * (g(0, 0) + g(1, 1));
    return out;
}

/// Pulls a gradient on q/|q| back to the raw quaternion.
template <typename S>
[[nodiscard]] Vec4<S> normalize_quat_vjp(const Vec4<S>& unit, S raw_norm, const Vec4<S>& g) {
    return (g - unit * unit.dot(g)) / raw_norm;
}

/// Sigma = R diag(s)^2 R^T for activated scales and a unit quaternion.
template <typename S>
[[nodiscard]] Mat3<S> covariance_from_scales(const Vec3<S>& scales, const Vec4<S>& unit_q) {
    const Mat3<S> l = unit_quat_to_rotation(unit_q) * scales.asDiagonal();
    return l * l.transpose();
}

/// Sigma = R diag(exp(ls))^2 R^T.
template <typename S>
[[nodiscard]] Mat3<S> build_covariance(const Vec3<S>& log_scales, const Vec4<S>& q) {
    return covariance_from_scales<S>(log_scales.array().exp().matrix(), normalize_quat(q));
}

template <typename S>
struct ProjectedPoint {
    Vec2<S> pixel = Vec2<S>::Zero();
    S depth = S(0);
    Vec3<S> camera_point = Vec3<S>::Zero();
    /// False when the point lies at or behind the near plane; callers cull it.
    bool in_front = false;
};

template <typename S>
[[nodiscard]] ProjectedPoint<S> project_point(const Camera<S>& cam, const Vec3<S>& mu) {
    ProjectedPoint<S> out;
    out.camera_point = cam.rotation() * mu + cam.translation();
    const S z = out.camera_point.z();
    out.depth = z;
    out.in_front = z > cam.near;
    if (out.in_front) {
        out.pixel = {cam.fx * out.camera_point.x() / z + cam.cx, cam.fy * out.camera_point.y() / z + cam.cy};
    }
    return out;
}

/// Pinhole Jacobian d(u, v)/d(camera point).
template <typename S>
[[nodiscard]] Mat23<S> pinhole_jacobian(const Camera<S>& cam, const Vec3<S>& p) {
    const S iz = S(1) / p.z();
    const S iz2 = iz * iz;
    Mat23<S> j;
    j << cam.fx * iz, S(0), -cam.fx * p.x() * iz2,
         S(0), cam.fy * iz, -cam.fy * p.y() * iz2;
    return j;
}

/// EWA screen covariance J W Sigma W^T J^T plus the anti-aliasing dilation.
template <typename S>
[[nodiscard]] Mat2<S> project_covariance(const Camera<S>& cam, const Vec3<S>& mu_cam, const Mat3<S>& sigma3) {
    if (!(mu_cam.z() > cam.near)) throw DegenerateInput("project_covariance: point is not in front of the near plane");
    const Mat23<S> j = pinhole_jacobian(cam, mu_cam);
    const Mat3<S> w = cam.rotation();
    const Mat23<S> t = j * w;
    Mat2<S> cov = t * sigma3 * t.transpose();
    cov(0, 1) = cov(1, 0) = S(0.5) * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += S(kScreenDilation);
    cov(1, 1) += S(kScreenDilation);
    if (!cov.allFinite()) throw NumericalDegeneracy("project_covariance produced non-finite values");
    return cov;
}

/// Real SH basis up to degree 3 with the Condon-Shortley phase, ordered by
/// band then m = -l..l.
template <typename S>
[[nodiscard]] std::array<S, kShCoeffs> sh_basis(const Vec3<S>& dir) {
    const S x = dir.x(), y = dir.y(), z = dir.z();
    const S xx = x * x, yy = y * y, zz = z * z;
    std::array<S, kShCoeffs> b{};
    b[0] = S(0.28209479177387814);
    b[1] = S(-0.4886025119029199) * y;
    b[2] = S(0.4886025119029199) * z;
    b[3] = S(-0.4886025119029199) * x;
    b[4] = S(1.0925484305920792) * x * y;
    b[5] = S(-1.0925484305920792) * y * z;
    b[6] = S(0.31539156525252005) * (S(2) * zz - xx - yy);
    b[7] = S(-1.0925484305920792) * x * z;
    b[8] = S(0.5462742152960396) * (xx - yy);
    b[9] = S(-0.5900435899266435) * y * (S(3) * xx - yy);
    b[10] = S(2.890611442640554) * x * y * z;
    b[11] = S(-0.4570457994644658) * y * (S(4) * zz - xx - yy);
    b[12] = S(0.3731763325901154) * z * (S(2) * zz - S(3) * xx - S(3) * yy);
    b[13] = S(-0.4570457994644658) * x * (S(4) * zz - xx - yy);
    b[14] = S(1.445305721320277) * z * (xx - yy);
    b[15] = S(-0.5900435899266435) * x * (xx - S(3) * yy);
    return b;
}

/// Partial derivatives of each basis function with respect to (x, y, z),
/// treating the direction components as independent.
template <typename S>
[[nodiscard]] std::array<Vec3<S>, kShCoeffs> sh_basis_gradient(const Vec3<S>& dir) {
    const S x = dir.x(), y = dir.y(), z = dir.z();
    const S xx = x * x, yy = y * y, zz = z * z;
    constexpr double c1 = 0.4886025119029199;
    constexpr double c20 = 1.0925484305920792, c22 = 0.31539156525252005, c24 = 0.5462742152960396;
    constexpr double c30 = 0.5900435899266435, c31 = 2.890611442640554, c32 = 0.4570457994644658;
    constexpr double c33 = 0.3731763325901154, c35 = 1.445305721320277;
    std::array<Vec3<S>, kShCoeffs> g;
    g[0] = Vec3<S>::Zero();
    g[1] = {S(0), S(-c1), S(0)};
    g[2] = {S(0), S(0), S(c1)};
    g[3] = {S(-c1), S(0), S(0)};
    g[4] = {S(c20) * y, S(c20) * x, S(0)};
    g[5] = {S(0), S(-c20) * z, S(-c20) * y};
    g[6] = {S(-2 * c22) * x, S(-2 * c22) * y, S(4 * c22) * z};
    g[7] = {S(-c20) * z, S(0), S(-c20) * x};
    g[8] = {S(2 * c24) * x, S(-2 * c24) * y, S(0)};
    g[9] = {S(-6 * c30) * x * y, S(-c30) * (S(3) * xx - S(3) * yy), S(0)};
    g[10] = {S(c31) * y * z, S(c31) * x * z, S(c31) * x * y};
    g[11] = {S(2 * c32) * x * y, S(-c32) * (S(4) * zz - xx - S(3) * yy), S(-8 * c32) * y * z};
    g[12] = {S(-6 * c33) * x * z, S(-6 * c33) * y * z, S(c33) * (S(6) * zz - S(3) * xx - S(3) * yy)};
    g[13] = {S(-c32) * (S(4) * zz - S(3) * xx - yy), S(2 * c32) * x * y, S(-8 * c32) * x * z};
    g[14] = {S(2 * c35) * x * z, S(-2 * c35) * y * z, S(c35) * (xx - yy)};
    g[15] = {S(-c30) * (S(3) * xx - S(3) * yy), S(6 * c30) * x * y, S(0)};
    return g;
}

/// View-dependent color: sum over the first (degree+1)^2 basis functions of
/// basis * coefficient row, plus the 0.5 offset. No clamping here.
template <typename S, typename Derived>
[[nodiscard]] Vec3<S> eval_sh(int degree, const Eigen::MatrixBase<Derived>& coeffs, const Vec3<S>& dir) {
    const int count = (degree + 1) * (degree + 1);
    const auto basis = sh_basis(dir);
    Vec3<S> color = Vec3<S>::Zero();
    for (int k = 0; k < count; ++k) color += basis[k] * coeffs.row(k).transpose().template cast<S>();
    return color.array() + S(kShOffset);
}

/// d^T conic d.
template <typename S>
[[nodiscard]] S mahalanobis2(const Vec2<S>& d, const Mat2<S>& conic) {
    return conic(0, 0) * d.x() * d.x() + S(2) * conic(0, 1) * d.x() * d.y() + conic(1, 1) * d.y() * d.y();
}

/// EWA footprint exp(-0.5 d^T conic d), d = pixel - center.
template <typename S>
[[nodiscard]] S gaussian_2d_weight(const Vec2<S>& pixel, const Vec2<S>& center, const Mat2<S>& conic) {
    return std::exp(S(-0.5) * mahalanobis2<S>(pixel - center, conic));
}

template <typename S>
[[nodiscard]] S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
[[nodiscard]] S logit(S p) {
    return std::log(p / (S(1) - p));
}

} // namespace tsplat
