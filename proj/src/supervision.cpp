// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/supervision.hpp"

#include "tsplat/errors.hpp"
#include "tsplat/parallel.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace tsplat {

namespace {

template <typename S>
void check_pair(const Image<S>& pred, const Image<S>& gt, const char* what) {
    if (!pred.same_shape(gt))
        throw ShapeMismatch(std::string(what) + ": prediction " + std::to_string(pred.width) + "x" +
                            std::to_string(pred.height) + "x" + std::to_string(pred.channels()) +
                            " differs from target " + std::to_string(gt.width) + "x" + std::to_string(gt.height) +
                            "x" + std::to_string(gt.channels()));
}

template <typename S>
void check_mask(const Image<S>& img, const Mask& mask, const char* what) {
    if (mask.width != img.width || mask.height != img.height || mask.channels() != 1)
        throw ShapeMismatch(std::string(what) + ": mask shape differs from the image");
}

Eigen::Index count_valid(const Mask& valid) {
    Eigen::Index n = 0;
    for (Eigen::Index p = 0; p < valid.pixels(); ++p) n += valid.data(p, 0) != 0;
    return n;
}

double sign(double v) { return static_cast<double>((v > 0) - (v < 0)); }

} // namespace

template <typename S>
LossGrad<S> masked_l1(const Image<S>& pred, const Image<S>& gt, const Mask& valid) {
    check_pair(pred, gt, "masked_l1");
    check_mask(pred, valid, "masked_l1");
    const Eigen::Index n = count_valid(valid);
    if (n == 0) throw EmptyMask("masked_l1: no valid pixels");
    const double denom = static_cast<double>(n) * pred.channels();
    LossGrad<S> out{0.0, Image<S>(pred.width, pred.height, pred.channels())};
    Accum sum = 0;
    for (Eigen::Index p = 0; p < pred.pixels(); ++p) {
        if (!valid.data(p, 0)) continue;
        for (int c = 0; c < pred.channels(); ++c) {
            const double d = static_cast<double>(pred.data(p, c)) - static_cast<double>(gt.data(p, c));
            sum += std::abs(d);
            out.grad.data(p, c) = static_cast<S>(sign(d) / denom);
        }
    }
    out.value = sum / denom;
    return out;
}

template <typename S>
LossGrad<S> depth_loss_disparity(const Image<S>& pred, const Image<S>& gt, const Mask& valid) {
    check_pair(pred, gt, "depth_loss_disparity");
    check_mask(pred, valid, "depth_loss_disparity");
    const Eigen::Index n = count_valid(valid);
    if (n == 0) throw EmptyMask("depth_loss_disparity: no valid pixels");
    LossGrad<S> out{0.0, Image<S>(pred.width, pred.height, 1)};
    Accum sum = 0;
    for (Eigen::Index p = 0; p < pred.pixels(); ++p) {
        if (!valid.data(p, 0)) continue;
        const double g = gt.data(p, 0);
        if (!(g > 0.0)) throw DegenerateInput("depth_loss_disparity: non-positive target depth on a valid pixel");
        const double z = pred.data(p, 0);
        const bool guarded = !(z > kDisparityEps);
        const double d = 1.0 / (guarded ? kDisparityEps : z) - 1.0 / g;
        sum += std::abs(d);
        if (!guarded) out.grad.data(p, 0) = static_cast<S>(-sign(d) / (z * z) / static_cast<double>(n));
    }
    out.value = sum / static_cast<double>(n);
    return out;
}

template <typename S>
LossGrad<S> depth_loss_pearson(const Image<S>& pred, const Image<S>& gt, const Mask& valid) {
    check_pair(pred, gt, "depth_loss_pearson");
    check_mask(pred, valid, "depth_loss_pearson");
    const Eigen::Index n = count_valid(valid);
    if (n == 0) throw EmptyMask("depth_loss_pearson: no valid pixels");
    if (n < 2) throw DegenerateStatistics("depth_loss_pearson: needs at least two valid pixels");
    Accum mp = 0, mg = 0;
    for (Eigen::Index p = 0; p < pred.pixels(); ++p)
        if (valid.data(p, 0)) {
            mp += pred.data(p, 0);
            mg += gt.data(p, 0);
        }
    mp /= static_cast<double>(n);
    mg /= static_cast<double>(n);
    Accum saa = 0, sbb = 0, sab = 0;
    for (Eigen::Index p = 0; p < pred.pixels(); ++p)
        if (valid.data(p, 0)) {
            const double a = pred.data(p, 0) - mp, b = gt.data(p, 0) - mg;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    if (!(saa > 0.0) || !(sbb > 0.0)) throw DegenerateStatistics("depth_loss_pearson: zero variance");
    const double norm = std::sqrt(saa * sbb);
    const double r = sab / norm;
    LossGrad<S> out{1.0 - r, Image<S>(pred.width, pred.height, 1)};
    for (Eigen::Index p = 0; p < pred.pixels(); ++p)
        if (valid.data(p, 0)) {
            const double a = pred.data(p, 0) - mp, b = gt.data(p, 0) - mg;
            out.grad.data(p, 0) = static_cast<S>(-(b / norm - r * a / saa));
        }
    return out;
}

namespace {

constexpr int kHalf = kSsimWindow / 2;

const std::array<double, kSsimWindow>& ssim_kernel() {
    static const auto k = [] {
        std::array<double, kSsimWindow> w{};
        double sum = 0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - kHalf;
            w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
            sum += w[static_cast<std::size_t>(i)];
        }
        for (double& v : w) v /= sum;
        return w;
    }();
    return k;
}

using Plane = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Window-weighted sums at every window fully inside the image.
Plane filter_valid(const Plane& x) {
    const auto& g = ssim_kernel();
    const Eigen::Index H = x.rows(), W = x.cols(), Ho = H - 2 * kHalf, Wo = W - 2 * kHalf;
    Plane tmp = Plane::Zero(H, Wo);
    for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index ox = 0; ox < Wo; ++ox) {
            double s = 0;
            for (int d = 0; d < kSsimWindow; ++d) s += g[static_cast<std::size_t>(d)] * x(y, ox + d);
            tmp(y, ox) = s;
        }
    Plane out = Plane::Zero(Ho, Wo);
    for (Eigen::Index oy = 0; oy < Ho; ++oy)
        for (int d = 0; d < kSsimWindow; ++d) out.row(oy) += g[static_cast<std::size_t>(d)] * tmp.row(oy + d);
    return out;
}

/// Adjoint of filter_valid.
Plane filter_valid_transpose(const Plane& m, Eigen::Index H, Eigen::Index W) {
    const auto& g = ssim_kernel();
    const Eigen::Index Ho = m.rows(), Wo = m.cols();
    Plane tmp = Plane::Zero(H, Wo);
    for (Eigen::Index oy = 0; oy < Ho; ++oy)
        for (int d = 0; d < kSsimWindow; ++d) tmp.row(oy + d) += g[static_cast<std::size_t>(d)] * m.row(oy);
    Plane out = Plane::Zero(H, W);
    for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index ox = 0; ox < Wo; ++ox) {
            const double v = tmp(y, ox);
            if (v == 0.0) continue;
            for (int d = 0; d < kSsimWindow; ++d) out(y, ox + d) += g[static_cast<std::size_t>(d)] * v;
        }
    return out;
}

/// 1 where the window centered at (oy + 5, ox + 5) holds only valid pixels.
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> window_validity(const Mask& valid) {
    const int H = valid.height, W = valid.width;
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> integral =
        Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(H + 1, W + 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            integral(y + 1, x + 1) = (valid(x, y) == 0) + integral(y, x + 1) + integral(y + 1, x) - integral(y, x);
    const int Ho = H - 2 * kHalf, Wo = W - 2 * kHalf;
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ok(Ho, Wo);
    for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
            const int bad = integral(oy + kSsimWindow, ox + kSsimWindow) - integral(oy, ox + kSsimWindow) -
                            integral(oy + kSsimWindow, ox) + integral(oy, ox);
            ok(oy, ox) = bad == 0;
        }
    return ok;
}

template <typename S>
Plane channel_plane(const Image<S>& img, int c) {
    Plane p(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) p(y, x) = img(x, y, c);
    return p;
}

/// Mean SSIM and optionally d(mean SSIM)/d(pred).
template <typename S>
double mean_ssim(const Image<S>& pred, const Image<S>& gt, const Mask& valid, Image<S>* grad) {
    check_pair(pred, gt, "ssim");
    check_mask(pred, valid, "ssim");
    if (pred.width < kSsimWindow || pred.height < kSsimWindow)
        throw NoValidWindow("ssim: image smaller than the 11x11 window");
    const auto ok = window_validity(valid);
    const Eigen::Index windows = ok.template cast<Eigen::Index>().sum();
    if (windows == 0) throw NoValidWindow("ssim: every window touches an invalid pixel");
    const int C = pred.channels();
    const double count = static_cast<double>(windows) * C;
    const Eigen::Index H = pred.height, W = pred.width;

    std::vector<double> sums(static_cast<std::size_t>(C), 0.0);
    std::vector<Plane> grads(static_cast<std::size_t>(C));
    parallel_for(static_cast<std::size_t>(C), [&](std::size_t ci) {
        const int c = static_cast<int>(ci);
        const Plane p = channel_plane(pred, c), g = channel_plane(gt, c);
        const Plane mp = filter_valid(p), mg = filter_valid(g);
        const Plane epp = filter_valid(p.cwiseProduct(p)), egg = filter_valid(g.cwiseProduct(g));
        const Plane epg = filter_valid(p.cwiseProduct(g));
        Plane d_mp, d_epp, d_epg;
        if (grad) {
            d_mp = Plane::Zero(mp.rows(), mp.cols());
            d_epp = d_mp;
            d_epg = d_mp;
        }
        Accum sum = 0;
        for (Eigen::Index oy = 0; oy < mp.rows(); ++oy)
            for (Eigen::Index ox = 0; ox < mp.cols(); ++ox) {
                if (!ok(oy, ox)) continue;
                const double a = mp(oy, ox), b = mg(oy, ox);
                const double a1 = 2 * a * b + kSsimC1;
                const double a2 = 2 * (epg(oy, ox) - a * b) + kSsimC2;
                const double b1 = a * a + b * b + kSsimC1;
                const double b2 = (epp(oy, ox) - a * a) + (egg(oy, ox) - b * b) + kSsimC2;
                const double s = a1 * a2 / (b1 * b2);
                sum += s;
                if (grad) {
                    d_mp(oy, ox) = s * (2 * b / a1 - 2 * b / a2 - 2 * a / b1 + 2 * a / b2) / count;
                    d_epg(oy, ox) = s * 2 / a2 / count;
                    d_epp(oy, ox) = -s / b2 / count;
                }
            }
        sums[ci] = sum;
        if (grad)
            grads[ci] = filter_valid_transpose(d_mp, H, W) + g.cwiseProduct(filter_valid_transpose(d_epg, H, W)) +
                        2.0 * p.cwiseProduct(filter_valid_transpose(d_epp, H, W));
    });
    if (grad) {
        *grad = Image<S>(pred.width, pred.height, C);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < pred.height; ++y)
                for (int x = 0; x < pred.width; ++x)
                    (*grad)(x, y, c) = static_cast<S>(grads[static_cast<std::size_t>(c)](y, x));
    }
    Accum total = 0;
    for (double s : sums) total += s;
    return total / count;
}

} // namespace

template <typename S>
LossGrad<S> ssim_loss(const Image<S>& pred, const Image<S>& gt, const Mask& valid) {
    LossGrad<S> out;
    out.value = 1.0 - mean_ssim(pred, gt, valid, &out.grad);
    out.grad.data = -out.grad.data;
    return out;
}

template <typename S>
double ssim(const Image<S>& pred, const Image<S>& gt, const Mask& valid) {
    return mean_ssim<S>(pred, gt, valid, nullptr);
}

template <typename S>
LossGrad<S> tv_invisible(const Image<S>& pred, const Mask& invisible) {
    check_mask(pred, invisible, "tv_invisible");
    LossGrad<S> out{0.0, Image<S>(pred.width, pred.height, pred.channels())};
    Eigen::Index pairs = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (!invisible(x, y)) continue;
            pairs += (x + 1 < pred.width && invisible(x + 1, y)) + (y + 1 < pred.height && invisible(x, y + 1));
        }
    if (pairs == 0) return out;
    const double denom = static_cast<double>(pairs) * pred.channels();
    Accum sum = 0;
    auto pair = [&](int x0, int y0, int x1, int y1) {
        for (int c = 0; c < pred.channels(); ++c) {
            const double d = static_cast<double>(pred(x1, y1, c)) - static_cast<double>(pred(x0, y0, c));
            sum += d * d;
            const auto g = static_cast<S>(2 * d / denom);
            out.grad(x1, y1, c) += g;
            out.grad(x0, y0, c) -= g;
        }
    };
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (!invisible(x, y)) continue;
            if (x + 1 < pred.width && invisible(x + 1, y)) pair(x, y, x + 1, y);
            if (y + 1 < pred.height && invisible(x, y + 1)) pair(x, y, x, y + 1);
        }
    out.value = sum / denom;
    return out;
}

Mask compute_invisible_mask(const std::vector<Mask>& tool_masks) {
    if (tool_masks.empty()) throw EmptyInput("compute_invisible_mask: no masks");
    const Mask& first = tool_masks.front();
    Mask out(first.width, first.height, 1);
    for (std::size_t i = 0; i < tool_masks.size(); ++i) {
        const Mask& m = tool_masks[i];
        if (!m.same_shape(out)) throw ShapeMismatch("compute_invisible_mask: mask " + std::to_string(i) + " differs in shape");
        for (Eigen::Index p = 0; p < m.pixels(); ++p) out.data(p, 0) |= static_cast<std::uint8_t>(m.data(p, 0) != 0);
    }
    return out;
}

Mask supervision_mask(const Mask& tool_mask, int width, int height, Mode mode) {
    Mask valid(width, height, 1, 1);
    if (mode == Mode::FullScene || tool_mask.pixels() == 0) return valid;
    if (tool_mask.width != width || tool_mask.height != height)
        throw ShapeMismatch("supervision_mask: tool mask shape differs from the image");
    for (Eigen::Index p = 0; p < valid.pixels(); ++p) valid.data(p, 0) = tool_mask.data(p, 0) == 0;
    return valid;
}

template <typename S>
double psnr(const Image<S>& pred, const Image<S>& gt, const Mask& valid) {
    check_pair(pred, gt, "psnr");
    check_mask(pred, valid, "psnr");
    const Eigen::Index n = count_valid(valid);
    if (n == 0) throw EmptyMask("psnr: no valid pixels");
    Accum sum = 0;
    for (Eigen::Index p = 0; p < pred.pixels(); ++p) {
        if (!valid.data(p, 0)) continue;
        for (int c = 0; c < pred.channels(); ++c) {
            const double d = static_cast<double>(pred.data(p, c)) - static_cast<double>(gt.data(p, c));
            sum += d * d;
        }
    }
    const double mse = sum / (static_cast<double>(n) * pred.channels());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

template <typename S>
CompositeLoss<S> composite_loss(const RenderOutput<S>& render, const Target<S>& target, const Mask& invisible,
                                Mode mode, DepthLossKind depth_kind, const LossWeights& weights,
                                const DeformRegularizers& deform_terms) {
    const int W = render.width(), H = render.height();
    const Mask valid = supervision_mask(target.tool_mask, W, H, mode);

    CompositeLoss<S> out;
    auto& b = out.breakdown;
    auto l1 = masked_l1(render.rgb, target.rgb, valid);
    b.l1 = l1.value;
    out.grad_rgb = std::move(l1.grad);

    if (weights.ssim != 0.0) {
        try {
            const auto s = ssim_loss(render.rgb, target.rgb, valid);
            b.ssim = s.value;
            out.grad_rgb.data += static_cast<S>(weights.ssim) * s.grad.data;
        } catch (const NoValidWindow&) {
        }
    }

    if (weights.tv != 0.0 && mode == Mode::TissueOnly && invisible.pixels() > 0) {
        const auto tv = tv_invisible(render.rgb, invisible);
        b.tv = tv.value;
        out.grad_rgb.data += static_cast<S>(weights.tv) * tv.grad.data;
    }

    out.grad_depth = Image<S>(W, H, 1);
    if (weights.depth != 0.0 && target.depth.pixels() > 0) {
        Mask depth_valid = valid;
        for (Eigen::Index p = 0; p < depth_valid.pixels(); ++p)
            depth_valid.data(p, 0) = depth_valid.data(p, 0) && target.depth.data(p, 0) > S(0);
        try {
            const auto d = depth_kind == DepthLossKind::Disparity
                               ? depth_loss_disparity(render.depth, target.depth, depth_valid)
                               : depth_loss_pearson(render.depth, target.depth, depth_valid);
            b.depth = d.value;
            out.grad_depth.data = static_cast<S>(weights.depth) * d.grad.data;
        } catch (const EmptyMask&) {
        } catch (const DegenerateStatistics&) {
        }
    }

    b.deform_reg = weights.deform.time_smooth * deform_terms.time_smooth +
                   weights.deform.l1_time * deform_terms.l1_time + weights.deform.tv_spatial * deform_terms.tv_spatial;
    b.total = b.weighted_sum(weights);
    return out;
}

#define TSPLAT_INSTANTIATE(S)                                                                                  \
    template LossGrad<S> masked_l1(const Image<S>&, const Image<S>&, const Mask&);                             \
    template LossGrad<S> depth_loss_disparity(const Image<S>&, const Image<S>&, const Mask&);                  \
    template LossGrad<S> depth_loss_pearson(const Image<S>&, const Image<S>&, const Mask&);                    \
    template LossGrad<S> ssim_loss(const Image<S>&, const Image<S>&, const Mask&);                             \
    template LossGrad<S> tv_invisible(const Image<S>&, const Mask&);                                           \
    template double psnr(const Image<S>&, const Image<S>&, const Mask&);                                       \
    template double ssim(const Image<S>&, const Image<S>&, const Mask&);                                       \
    template CompositeLoss<S> composite_loss(const RenderOutput<S>&, const Target<S>&, const Mask&, Mode,      \
                                             DepthLossKind, const LossWeights&, const DeformRegularizers&);

TSPLAT_INSTANTIATE(float)
TSPLAT_INSTANTIATE(double)

} // namespace tsplat
