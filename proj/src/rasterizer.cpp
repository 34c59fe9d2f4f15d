// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/rasterizer.hpp"

#include "tsplat/errors.hpp"
#include "tsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsplat {

namespace {

template <typename S>
void check_inputs(const Snapshot<S>& snap, const Camera<S>& cam) {
    cam.validate();
    const Eigen::Index n = snap.size();
    if (snap.scales.rows() != n || snap.rotations.rows() != n || snap.quat_norms.rows() != n ||
        snap.opacities.rows() != n || snap.sh.rows() != n)
        throw ShapeMismatch("snapshot arrays disagree on the number of Gaussians");
    if (!snap.means.allFinite() || !snap.scales.allFinite() || !snap.rotations.allFinite() ||
        !snap.opacities.allFinite() || !snap.sh.allFinite())
        throw NonFiniteParameters("snapshot holds non-finite parameters");
}

template <typename S>
using ShMap = Eigen::Map<const Eigen::Matrix<S, kShCoeffs, 3, Eigen::RowMajor>>;

/// Per-Gaussian screen-space quantities shared by both renderers.
template <typename S>
struct Projected {
    bool visible = false;
    Vec3<S> camera_point;
    Vec2<S> mean2d;
    Mat2<S> cov2d;
    Mat2<S> conic;
    Vec3<S> color;
    Vec3<S> dir;
    S dist = S(0);
};

template <typename S>
Projected<S> project_gaussian(const Snapshot<S>& snap, const Camera<S>& cam, const Vec3<S>& cam_center,
                              Eigen::Index i) {
    Projected<S> out;
    const Vec3<S> mu = snap.means.row(i).transpose();
    const ProjectedPoint<S> proj = project_point(cam, mu);
    if (!proj.in_front || proj.depth > cam.far) return out;
    const Mat3<S> cov3 = covariance_from_scales<S>(snap.scales.row(i).transpose(), snap.rotations.row(i).transpose());
    const Mat2<S> cov2 = project_covariance(cam, proj.camera_point, cov3);
    const S det = cov2(0, 0) * cov2(1, 1) - cov2(0, 1) * cov2(0, 1);
    if (!(det > S(0))) return out;
    out.camera_point = proj.camera_point;
    out.mean2d = proj.pixel;
    out.cov2d = cov2;
    out.conic << cov2(1, 1) / det, -cov2(0, 1) / det, -cov2(0, 1) / det, cov2(0, 0) / det;
    const Vec3<S> v = mu - cam_center;
    out.dist = v.norm();
    if (!(out.dist > S(0))) return out;
    out.dir = v / out.dist;
    out.color = eval_sh<S>(3, ShMap<S>(snap.sh.row(i).data()), out.dir);
    out.visible = true;
    return out;
}

template <typename S>
std::vector<int> depth_order(const std::vector<int>& ids, const std::vector<S>& depth) {
    std::vector<int> sorted = ids;
    std::stable_sort(sorted.begin(), sorted.end(), [&](int a, int b) { return depth[a] < depth[b]; });
    return sorted;
}

template <typename S>
void write_pixel(RenderOutput<S>& out, Eigen::Index p, const Vec3<Accum>& color, Accum depth, Accum transmittance,
                 const RenderOptions<S>& options) {
    const Accum alpha = 1.0 - transmittance;
    for (int c = 0; c < 3; ++c)
        out.rgb.data(p, c) = static_cast<S>(color[c] + transmittance * static_cast<Accum>(options.background[c]));
    out.alpha.data(p, 0) = static_cast<S>(alpha);
    Accum d = depth;
    if (options.normalized_depth) d = alpha > 1e-12 ? depth / alpha : 0.0;
    out.depth.data(p, 0) = static_cast<S>(d);
}

} // namespace

template <typename S>
ParamGrads<S> ParamGrads<S>::zeros(Eigen::Index n) {
    ParamGrads g;
    g.means = Rows<S, 3>::Zero(n, 3);
    g.log_scales = Rows<S, 3>::Zero(n, 3);
    g.quats = Rows<S, 4>::Zero(n, 4);
    g.opacity_logits = VecX<S>::Zero(n);
    g.sh_dc = Rows<S, 3>::Zero(n, 3);
    g.sh_rest = Rows<S, 3 * kShRest>::Zero(n, 3 * kShRest);
    g.screen_grad_norm = VecX<S>::Zero(n);
    g.visible = Flags::Zero(n);
    return g;
}

template <typename S>
bool ParamGrads<S>::all_finite() const {
    return means.allFinite() && log_scales.allFinite() && quats.allFinite() && opacity_logits.allFinite() &&
           sh_dc.allFinite() && sh_rest.allFinite();
}

template <typename S>
RenderOutput<S> render(const Snapshot<S>& snap, const Camera<S>& cam, const RenderOptions<S>& options) {
    check_inputs(snap, cam);
    const auto n = static_cast<int>(snap.size());
    const int width = cam.width, height = cam.height;

    auto state = std::make_shared<RasterState<S>>();
    RasterState<S>& st = *state;
    st.camera = cam;
    st.options = options;
    st.snap = snap;
    st.visible = Flags::Zero(n);
    st.camera_points.setZero(n, 3);
    st.means2d.setZero(n, 2);
    st.conics.setZero(n, 3);
    st.colors.setZero(n, 3);
    st.view_dirs.setZero(n, 3);
    st.view_dist.setZero(n);

    // Pixel-space bounding boxes; one pixel of slack so the per-pixel cutoff,
    // not the box, decides membership.
    std::vector<Eigen::Vector4i> boxes(static_cast<std::size_t>(n));
    const Vec3<S> center = cam.center();
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
        const auto i = static_cast<Eigen::Index>(k);
        const Projected<S> pg = project_gaussian(snap, cam, center, i);
        if (!pg.visible) return;
        const double ex = 3.0 * std::sqrt(static_cast<double>(pg.cov2d(0, 0))) + 1.0;
        const double ey = 3.0 * std::sqrt(static_cast<double>(pg.cov2d(1, 1))) + 1.0;
        const int x0 = std::max(0, static_cast<int>(std::ceil(pg.mean2d.x() - ex)));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(pg.mean2d.x() + ex)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(pg.mean2d.y() - ey)));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(pg.mean2d.y() + ey)));
        if (x0 > x1 || y0 > y1) return;
        boxes[k] = {x0, x1, y0, y1};
        st.visible[i] = 1;
        st.camera_points.row(i) = pg.camera_point.transpose();
        st.means2d.row(i) = pg.mean2d.transpose();
        st.conics.row(i) << pg.conic(0, 0), pg.conic(0, 1), pg.conic(1, 1);
        st.colors.row(i) = pg.color.transpose();
        st.view_dirs.row(i) = pg.dir.transpose();
        st.view_dist[i] = pg.dist;
    });

    std::vector<int> ids;
    std::vector<S> depth(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        depth[static_cast<std::size_t>(i)] = st.camera_points(i, 2);
        if (st.visible[i]) ids.push_back(i);
    }
    st.sorted = depth_order(ids, depth);

    st.tiles_x = (width + kTileSize - 1) / kTileSize;
    st.tiles_y = (height + kTileSize - 1) / kTileSize;
    st.tile_lists.assign(static_cast<std::size_t>(st.tiles_x * st.tiles_y), {});
    for (const int g : st.sorted) {
        const Eigen::Vector4i& b = boxes[static_cast<std::size_t>(g)];
        for (int ty = b[2] / kTileSize; ty <= b[3] / kTileSize; ++ty)
            for (int tx = b[0] / kTileSize; tx <= b[1] / kTileSize; ++tx)
                st.tile_lists[static_cast<std::size_t>(ty * st.tiles_x + tx)].push_back(g);
    }

    RenderOutput<S> out;
    out.rgb = Image<S>(width, height, 3);
    out.depth = Image<S>(width, height, 1);
    out.alpha = Image<S>(width, height, 1);
    st.n_scanned.assign(static_cast<std::size_t>(width) * height, 0);
    st.final_transmittance.setOnes(static_cast<Eigen::Index>(width) * height);
    st.blended_depth.setZero(static_cast<Eigen::Index>(width) * height);

    parallel_for(st.tile_lists.size(), [&](std::size_t t) {
        const int tx = static_cast<int>(t) % st.tiles_x, ty = static_cast<int>(t) / st.tiles_x;
        const std::vector<int>& list = st.tile_lists[t];
        for (int y = ty * kTileSize; y < std::min(height, (ty + 1) * kTileSize); ++y) {
            for (int x = tx * kTileSize; x < std::min(width, (tx + 1) * kTileSize); ++x) {
                const Vec2<S> pix(static_cast<S>(x), static_cast<S>(y));
                Accum transmittance = 1.0, blended = 0.0;
                Vec3<Accum> color = Vec3<Accum>::Zero();
                int scanned = 0;
                for (std::size_t k = 0; k < list.size(); ++k) {
                    const int g = list[k];
                    const Mat2<S> conic = (Mat2<S>() << st.conics(g, 0), st.conics(g, 1), st.conics(g, 1),
                                           st.conics(g, 2)).finished();
                    const S power = mahalanobis2<S>(pix - st.means2d.row(g).transpose(), conic);
                    if (power > S(kCutoffMahalanobis2)) continue;
                    const S a = std::min(S(kMaxAlpha), snap.opacities[g] * std::exp(S(-0.5) * power));
                    const Accum w = static_cast<Accum>(a) * transmittance;
                    color += w * st.colors.row(g).transpose().template cast<Accum>();
                    blended += w * static_cast<Accum>(st.camera_points(g, 2));
                    transmittance *= 1.0 - static_cast<Accum>(a);
                    scanned = static_cast<int>(k) + 1;
                    if (transmittance < kTransmittanceStop) break;
                }
                const Eigen::Index p = out.rgb.index(x, y);
                st.n_scanned[static_cast<std::size_t>(p)] = scanned;
                st.final_transmittance[p] = transmittance;
                st.blended_depth[p] = blended;
                write_pixel(out, p, color, blended, transmittance, options);
            }
        }
    });

    out.state = std::move(state);
    return out;
}

template <typename S>
RenderOutput<S> render_reference(const Snapshot<S>& snap, const Camera<S>& cam, const RenderOptions<S>& options) {
    check_inputs(snap, cam);
    const auto n = static_cast<int>(snap.size());
    std::vector<Projected<S>> proj(static_cast<std::size_t>(n));
    std::vector<S> depth(static_cast<std::size_t>(n), S(0));
    std::vector<int> ids;
    const Vec3<S> center = cam.center();
    for (int i = 0; i < n; ++i) {
        proj[static_cast<std::size_t>(i)] = project_gaussian(snap, cam, center, i);
        if (proj[static_cast<std::size_t>(i)].visible) {
            ids.push_back(i);
            depth[static_cast<std::size_t>(i)] = proj[static_cast<std::size_t>(i)].camera_point.z();
        }
    }
    const std::vector<int> order = depth_order(ids, depth);

    RenderOutput<S> out;
    out.rgb = Image<S>(cam.width, cam.height, 3);
    out.depth = Image<S>(cam.width, cam.height, 1);
    out.alpha = Image<S>(cam.width, cam.height, 1);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec2<S> pix(static_cast<S>(x), static_cast<S>(y));
            Accum transmittance = 1.0, blended = 0.0;
            Vec3<Accum> color = Vec3<Accum>::Zero();
            for (const int g : order) {
                const Projected<S>& pg = proj[static_cast<std::size_t>(g)];
                const S power = mahalanobis2<S>(pix - pg.mean2d, pg.conic);
                if (power > S(kCutoffMahalanobis2)) continue;
                const Accum a = static_cast<Accum>(std::min(S(kMaxAlpha), snap.opacities[g] * std::exp(S(-0.5) * power)));
                color += a * transmittance * pg.color.template cast<Accum>();
                blended += a * transmittance * static_cast<Accum>(pg.camera_point.z());
                transmittance *= 1.0 - a;
                if (transmittance < kTransmittanceStop) break;
            }
            write_pixel(out, out.rgb.index(x, y), color, blended, transmittance, options);
        }
    }
    return out;
}

namespace {

/// Gradient of the loss with respect to one Gaussian's screen-space quantities,
/// summed over the pixels of one tile.
struct ScreenGrad {
    Accum mean2d[2] = {0, 0};
    Accum conic[3] = {0, 0, 0};  // d/d(xx), d/d(xy) (single off-diagonal value), d/d(yy)
    Accum color[3] = {0, 0, 0};
    Accum opacity = 0;
    Accum depth = 0;

    void add(const ScreenGrad& o) {
        for (int k = 0; k < 2; ++k) mean2d[k] += o.mean2d[k];
        for (int k = 0; k < 3; ++k) conic[k] += o.conic[k];
        for (int k = 0; k < 3; ++k) color[k] += o.color[k];
        opacity += o.opacity;
        depth += o.depth;
    }
};

template <typename S>
Accum grad_at(const Image<S>& g, Eigen::Index p, int c) {
    return g.pixels() == 0 ? 0.0 : static_cast<Accum>(g.data(p, c));
}

} // namespace

template <typename S>
ParamGrads<S> render_backward(const RenderOutput<S>& forward, const Image<S>& grad_rgb, const Image<S>& grad_depth,
                              const Image<S>& grad_alpha) {
    if (!forward.state) throw ContractViolation("render_backward: forward pass did not retain its state");
    const RasterState<S>& st = *forward.state;
    const int width = st.camera.width, height = st.camera.height;
    const auto check = [&](const Image<S>& g, int channels, const char* name) {
        if (g.pixels() != 0 && (g.width != width || g.height != height || g.channels() != channels))
            throw ShapeMismatch(std::string("render_backward: ") + name + " gradient has the wrong shape");
    };
    check(grad_rgb, 3, "rgb");
    check(grad_depth, 1, "depth");
    check(grad_alpha, 1, "alpha");

    const Vec3<Accum> bg = st.options.background.template cast<Accum>();
    std::vector<std::vector<ScreenGrad>> partial(st.tile_lists.size());

    parallel_for(st.tile_lists.size(), [&](std::size_t t) {
        const int tx = static_cast<int>(t) % st.tiles_x, ty = static_cast<int>(t) / st.tiles_x;
        const std::vector<int>& list = st.tile_lists[t];
        std::vector<ScreenGrad>& local = partial[t];
        local.assign(list.size(), ScreenGrad{});
        for (int y = ty * kTileSize; y < std::min(height, (ty + 1) * kTileSize); ++y) {
            for (int x = tx * kTileSize; x < std::min(width, (tx + 1) * kTileSize); ++x) {
                const Eigen::Index p = static_cast<Eigen::Index>(y) * width + x;
                const Vec3<Accum> g_rgb(grad_at(grad_rgb, p, 0), grad_at(grad_rgb, p, 1), grad_at(grad_rgb, p, 2));
                Accum g_depth = grad_at(grad_depth, p, 0);
                Accum g_alpha = grad_at(grad_alpha, p, 0);
                const Accum t_final = st.final_transmittance[p];
                if (st.options.normalized_depth) {
                    const Accum alpha = 1.0 - t_final;
                    if (alpha > 1e-12) {
                        g_alpha -= g_depth * st.blended_depth[p] / (alpha * alpha);
                        g_depth /= alpha;
                    } else {
                        g_depth = 0.0;
                    }
                }
                if (g_rgb.isZero(0) && g_depth == 0.0 && g_alpha == 0.0) continue;

                const Vec2<S> pix(static_cast<S>(x), static_cast<S>(y));
                Accum transmittance = t_final;
                Vec3<Accum> behind_color = t_final * bg;
                Accum behind_depth = 0.0;
                for (int k = st.n_scanned[static_cast<std::size_t>(p)] - 1; k >= 0; --k) {
                    const int g = list[static_cast<std::size_t>(k)];
                    const Mat2<S> conic = (Mat2<S>() << st.conics(g, 0), st.conics(g, 1), st.conics(g, 1),
                                           st.conics(g, 2)).finished();
                    const Vec2<S> d = pix - st.means2d.row(g).transpose();
                    const S power = mahalanobis2<S>(d, conic);
                    if (power > S(kCutoffMahalanobis2)) continue;
                    const S weight = std::exp(S(-0.5) * power);
                    const S raw_alpha = st.snap.opacities[g] * weight;
                    const Accum a = static_cast<Accum>(std::min(S(kMaxAlpha), raw_alpha));
                    const Accum one_minus = 1.0 - a;
                    const Accum t_i = transmittance / one_minus;
                    const Vec3<Accum> c = st.colors.row(g).transpose().template cast<Accum>();
                    const Accum z = static_cast<Accum>(st.camera_points(g, 2));

                    ScreenGrad& sg = local[static_cast<std::size_t>(k)];
                    for (int ch = 0; ch < 3; ++ch) sg.color[ch] += g_rgb[ch] * a * t_i;
                    sg.depth += g_depth * a * t_i;

                    Accum g_a = g_rgb.dot(t_i * c - behind_color / one_minus);
                    g_a += g_depth * (t_i * z - behind_depth / one_minus);
                    g_a += g_alpha * t_final / one_minus;

                    behind_color += a * t_i * c;
                    behind_depth += a * t_i * z;
                    transmittance = t_i;

                    if (raw_alpha >= S(kMaxAlpha)) continue;
                    const Accum w = static_cast<Accum>(weight);
                    sg.opacity += g_a * w;
                    const Accum g_power = -0.5 * w * g_a * static_cast<Accum>(st.snap.opacities[g]);
                    const Accum dx = static_cast<Accum>(d.x()), dy = static_cast<Accum>(d.y());
                    const Accum qxx = static_cast<Accum>(conic(0, 0)), qxy = static_cast<Accum>(conic(0, 1)),
                                qyy = static_cast<Accum>(conic(1, 1));
                    sg.mean2d[0] += -2.0 * g_power * (qxx * dx + qxy * dy);
                    sg.mean2d[1] += -2.0 * g_power * (qxy * dx + qyy * dy);
                    sg.conic[0] += g_power * dx * dx;
                    sg.conic[1] += g_power * 2.0 * dx * dy;
                    sg.conic[2] += g_power * dy * dy;
                }
            }
        }
    });

    // Fixed-order reduction over tiles keeps results independent of thread count.
    const Eigen::Index n = st.snap.size();
    std::vector<ScreenGrad> screen(static_cast<std::size_t>(n));
    for (std::size_t t = 0; t < st.tile_lists.size(); ++t)
        for (std::size_t k = 0; k < st.tile_lists[t].size(); ++k)
            screen[static_cast<std::size_t>(st.tile_lists[t][k])].add(partial[t][k]);

    ParamGrads<S> grads = ParamGrads<S>::zeros(n);
    grads.visible = st.visible;
    const Camera<Accum> cam = st.camera.template cast<Accum>();
    const Mat3<Accum> world_rot = cam.rotation();

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
        const auto i = static_cast<Eigen::Index>(k);
        if (!st.visible[i]) return;
        const ScreenGrad& sg = screen[k];

        const Vec3<Accum> p = st.camera_points.row(i).transpose().template cast<Accum>();
        const Vec3<Accum> s = st.snap.scales.row(i).transpose().template cast<Accum>();
        const Vec4<Accum> q = st.snap.rotations.row(i).transpose().template cast<Accum>();
        const Mat3<Accum> rot = unit_quat_to_rotation(q);
        const Mat3<Accum> l = rot * s.asDiagonal();
        const Mat3<Accum> cov3 = l * l.transpose();
        const Mat23<Accum> jac = pinhole_jacobian(cam, p);
        const Mat23<Accum> tmat = jac * world_rot;
        Mat2<Accum> cov2 = tmat * cov3 * tmat.transpose();
        cov2(0, 1) = cov2(1, 0) = 0.5 * (cov2(0, 1) + cov2(1, 0));
        cov2.diagonal().array() += kScreenDilation;
        const Mat2<Accum> conic = cov2.inverse();

        // conic -> screen covariance
        Mat2<Accum> g_conic;
        g_conic << sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2];
        const Mat2<Accum> g_cov2 = -conic * g_conic * conic;

        // screen covariance -> 3D covariance and Jacobian
        const Mat3<Accum> g_cov3 = tmat.transpose() * g_cov2 * tmat;
        const Mat23<Accum> g_tmat = 2.0 * g_cov2 * tmat * cov3;
        const Mat23<Accum> g_jac = g_tmat * world_rot.transpose();

        Vec3<Accum> g_p = Vec3<Accum>::Zero();
        const Accum iz = 1.0 / p.z(), iz2 = iz * iz, iz3 = iz2 * iz;
        g_p.x() += g_jac(0, 2) * (-cam.fx * iz2);
        g_p.y() += g_jac(1, 2) * (-cam.fy * iz2);
        g_p.z() += g_jac(0, 0) * (-cam.fx * iz2) + g_jac(0, 2) * (2.0 * cam.fx * p.x() * iz3) +
                   g_jac(1, 1) * (-cam.fy * iz2) + g_jac(1, 2) * (2.0 * cam.fy * p.y() * iz3);
        g_p.x() += sg.mean2d[0] * cam.fx * iz;
        g_p.y() += sg.mean2d[1] * cam.fy * iz;
        g_p.z() += -sg.mean2d[0] * cam.fx * p.x() * iz2 - sg.mean2d[1] * cam.fy * p.y() * iz2;
        g_p.z() += sg.depth;
        Vec3<Accum> g_mu = world_rot.transpose() * g_p;

        // 3D covariance -> scales and rotation
        const Mat3<Accum> g_l = 2.0 * g_cov3 * l;
        const Mat3<Accum> g_rot = g_l * s.asDiagonal();
        const Vec3<Accum> g_s = (g_l.array() * rot.array()).colwise().sum().transpose();
        const Vec4<Accum> g_unit = unit_quat_to_rotation_vjp(q, g_rot);
        const Vec4<Accum> g_q = normalize_quat_vjp(q, static_cast<Accum>(st.snap.quat_norms[i]), g_unit);

        // color -> SH coefficients and view direction
        const Vec3<Accum> g_color(sg.color[0], sg.color[1], sg.color[2]);
        const Vec3<Accum> dir = st.view_dirs.row(i).transpose().template cast<Accum>();
        const auto basis = sh_basis(dir);
        const auto dbasis = sh_basis_gradient(dir);
        Vec3<Accum> g_dir = Vec3<Accum>::Zero();
        for (int b = 0; b < kShCoeffs; ++b) {
            Accum coeff_dot = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                const Accum g_coeff = basis[static_cast<std::size_t>(b)] * g_color[ch];
                if (b == 0) grads.sh_dc(i, ch) = static_cast<S>(g_coeff);
                else grads.sh_rest(i, (b - 1) * 3 + ch) = static_cast<S>(g_coeff);
                coeff_dot += static_cast<Accum>(st.snap.sh(i, b * 3 + ch)) * g_color[ch];
            }
            g_dir += coeff_dot * dbasis[static_cast<std::size_t>(b)];
        }
        g_mu += (g_dir - dir * dir.dot(g_dir)) / static_cast<Accum>(st.view_dist[i]);

        const Accum o = static_cast<Accum>(st.snap.opacities[i]);
        grads.means.row(i) = g_mu.transpose().template cast<S>();
        grads.log_scales.row(i) = (g_s.array() * s.array()).matrix().transpose().template cast<S>();
        grads.quats.row(i) = g_q.transpose().template cast<S>();
        grads.opacity_logits[i] = static_cast<S>(sg.opacity * o * (1.0 - o));
        const Accum gx = sg.mean2d[0] * 0.5 * width, gy = sg.mean2d[1] * 0.5 * height;
        grads.screen_grad_norm[i] = static_cast<S>(std::sqrt(gx * gx + gy * gy));
    });
    return grads;
}

#define TSPLAT_INSTANTIATE(S)                                                                                   \
    template struct ParamGrads<S>;                                                                              \
    template RenderOutput<S> render(const Snapshot<S>&, const Camera<S>&, const RenderOptions<S>&);             \
    template RenderOutput<S> render_reference(const Snapshot<S>&, const Camera<S>&, const RenderOptions<S>&);   \
    template ParamGrads<S> render_backward(const RenderOutput<S>&, const Image<S>&, const Image<S>&,            \
                                           const Image<S>&);

TSPLAT_INSTANTIATE(float)
TSPLAT_INSTANTIATE(double)

} // namespace tsplat
