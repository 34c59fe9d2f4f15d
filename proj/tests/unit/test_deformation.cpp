// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "../support/gradcheck.hpp"
#include "test_util.hpp"

#include "tsplat/deformation.hpp"
#include "tsplat/errors.hpp"

#include <gtest/gtest.h>

#include <cstring>

namespace tsplat {
namespace {

using test::Rng;

/// Scalar bilinear-then-product lookup written against the documented layout.
double oracle_feature(const HexPlaneField<double>& f, const Vec3<double>& mu, double t, int level, int channel) {
    double coord[4];
    for (int a = 0; a < 3; ++a) coord[a] = std::min(1.0, std::max(0.0, (mu[a] - f.lo[a]) / (f.hi[a] - f.lo[a])));
    coord[3] = t;
    double prod = 1.0;
    for (int p = 0; p < kNumPlanes; ++p) {
        const int a = kPlaneAxes[p][0], b = kPlaneAxes[p][1];
        const int ra = f.resolution(a, level), rb = f.resolution(b, level);
        const double x = coord[a] * (ra - 1), y = coord[b] * (rb - 1);
        const int x0 = std::min(static_cast<int>(x), ra - 2), y0 = std::min(static_cast<int>(y), rb - 2);
        const double fx = x - x0, fy = y - y0;
        auto v = [&](int i, int j) { return f.plane(p, level)(j * ra + i, channel); };
        prod *= v(x0, y0) * (1 - fx) * (1 - fy) + v(x0 + 1, y0) * fx * (1 - fy) + v(x0, y0 + 1) * (1 - fx) * fy +
                v(x0 + 1, y0 + 1) * fx * fy;
    }
    return prod;
}

TEST(HexPlane, DefaultShapes) {
    DeformationConfig c;
    c.multipliers = {1, 2};  // keep the allocation modest
    auto m = DeformationModel<float>::create(c, Vec3<float>::Zero(), Vec3<float>::Ones(), 1);
    EXPECT_EQ(m.field.plane(0, 0).rows(), 64 * 64);
    EXPECT_EQ(m.field.plane(3, 1).rows(), 128 * 200);
    EXPECT_EQ(m.field.plane(5, 1).cols(), 32);
    EXPECT_EQ(m.decoder.hidden_layers(), 8);
    EXPECT_EQ(m.decoder.input_dim(), 2 * 32 + 3);
    EXPECT_EQ(m.decoder.weights[3].rows(), 256);
    EXPECT_NO_THROW(m.validate());
    const float lo = m.field.plane(2, 0).minCoeff(), hi = m.field.plane(2, 0).maxCoeff();
    EXPECT_GE(lo, 0.05f);
    EXPECT_LE(hi, 0.15f);
}

TEST(HexPlane, ConstantOnePlanesGiveOnes) {
    Rng rng(1);
    auto m = test::small_deform_model<double>(rng, 0.0);
    for (auto& p : m.field.planes) p.setOnes();
    const auto f = query_features(m.field, Vec3<double>(0.3, -0.2, 3.0), 0.37);
    EXPECT_EQ(f.size(), 8);
    for (Eigen::Index i = 0; i < f.size(); ++i) EXPECT_EQ(f[i], 1.0);
}

TEST(HexPlane, GridVertexIsExact) {
    Rng rng(2);
    auto m = test::small_deform_model<double>(rng, 0.0, Vec3<double>::Zero(), Vec3<double>::Ones());
    // spatial resolution 4 at level 0 -> vertices at k/3; time resolution 5 -> k/4
    const Vec3<double> mu(1.0 / 3, 2.0 / 3, 1.0);
    const double t = 0.25;
    const auto f = query_features(m.field, mu, t);
    const int idx[4] = {1, 2, 3, 1};
    for (int c = 0; c < 4; ++c) {
        double prod = 1.0;
        for (int p = 0; p < kNumPlanes; ++p) {
            const int a = kPlaneAxes[p][0], b = kPlaneAxes[p][1];
            prod *= m.field.plane(p, 0)(idx[b] * m.field.resolution(a, 0) + idx[a], c);
        }
        EXPECT_NEAR(f[c], prod, 1e-15);
    }
}

TEST(HexPlane, MatchesScalarOracle) {
    Rng rng(3);
    auto m = test::small_deform_model<double>(rng, 0.0);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec3<double> mu(test::uniform(rng, -1.2, 1.2), test::uniform(rng, -1.2, 1.2), test::uniform(rng, 0, 5));
        const double t = test::uniform(rng, 0, 1);
        const auto f = query_features(m.field, mu, t);
        for (int l = 0; l < 2; ++l)
            for (int c = 0; c < 4; ++c) EXPECT_NEAR(f[l * 4 + c], oracle_feature(m.field, mu, t, l, c), 1e-12);
    }
}

TEST(HexPlane, LipschitzContinuity) {
    Rng rng(4);
    auto m = test::small_deform_model<double>(rng, 0.0);
    // Per-plane values are bounded by B = 1.3 and per-texel slopes by 0.6 * (res - 1) per unit coordinate.
    const double bound = std::pow(1.3, 5) * 0.6 * 9;  // largest resolution at level 1 is 10
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3<double> mu(test::uniform(rng, -0.9, 0.9), test::uniform(rng, -0.9, 0.9), test::uniform(rng, 0, 4));
        const double t = test::uniform(rng, 0.01, 0.99);
        const double eps = 1e-7;
        const Vec3<double> d = Vec3<double>(test::normal(rng), test::normal(rng), test::normal(rng)).normalized() * eps;
        const auto a = query_features(m.field, mu, t);
        const auto b = query_features(m.field, Vec3<double>(mu + d), t + eps);
        const Vec3<double> ext = m.field.hi - m.field.lo;
        const double coord_step = (d.cwiseQuotient(ext).norm() + eps) * 6;
        EXPECT_LE((a - b).cwiseAbs().maxCoeff(), bound * coord_step);
    }
}

TEST(Decoder, ZeroHeadsGiveZeroOffsets) {
    Rng rng(5);
    auto m = test::small_deform_model<float>(rng, 0.0);
    MatX<float> x = MatX<float>::Random(7, m.decoder_input_dim());
    const auto out = decode(m.decoder, x);
    EXPECT_EQ(out.d_means.cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ(out.d_quats.cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ(out.d_opacity_logits.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Decoder, MatchesScalarMatmul) {
    Rng rng(6);
    auto m = test::small_deform_model<float>(rng, 0.5);
    MatX<float> x = MatX<float>::Random(5, m.decoder_input_dim());
    const auto out = decode(m.decoder, x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        std::vector<double> h(x.row(r).data(), x.row(r).data() + x.cols());
        for (int layer = 0; layer < m.decoder.hidden_layers(); ++layer) {
            const auto& w = m.decoder.weights[layer];
            std::vector<double> next(w.rows());
            for (Eigen::Index o = 0; o < w.rows(); ++o) {
                double s = m.decoder.biases[layer][o];
                for (Eigen::Index i = 0; i < w.cols(); ++i) s += w(o, i) * h[i];
                next[o] = std::max(0.0, s);
            }
            h = next;
        }
        auto head = [&](int k, int o) {
            const auto& w = m.decoder.weights[m.decoder.hidden_layers() + k];
            double s = m.decoder.biases[m.decoder.hidden_layers() + k][o];
            for (Eigen::Index i = 0; i < w.cols(); ++i) s += w(o, i) * h[i];
            return s;
        };
        for (int o = 0; o < 3; ++o) EXPECT_NEAR(out.d_means(r, o), head(0, o), 1e-5);
        for (int o = 0; o < 3; ++o) EXPECT_NEAR(out.d_log_scales(r, o), head(1, o), 1e-5);
        for (int o = 0; o < 4; ++o) EXPECT_NEAR(out.d_quats(r, o), head(2, o), 1e-5);
        EXPECT_NEAR(out.d_opacity_logits[r], head(3, 0), 1e-5);
    }
}

TEST(Decoder, RejectsWrongInputWidth) {
    Rng rng(7);
    auto m = test::small_deform_model<float>(rng, 0.0);
    EXPECT_THROW((void)decode(m.decoder, MatX<float>(MatX<float>::Zero(2, 3))), ShapeMismatch);
}

TEST(Deform, ZeroHeadsRenderBitwiseCanonical) {
    Rng rng(8);
    auto cloud = test::random_cloud<float>(rng, 40);
    auto m = test::small_deform_model<float>(rng, 0.0);
    auto cam = test::make_camera<float>(48, 40, 45);
    const auto base = render(snapshot(cloud), cam);
    for (int k = 0; k < 5; ++k) {
        const auto d = deform(cloud, m, float(test::uniform(rng, 0, 1)));
        const auto out = render(d.snap, cam);
        EXPECT_EQ(std::memcmp(base.rgb.data.data(), out.rgb.data.data(), sizeof(float) * base.rgb.data.size()), 0);
        EXPECT_EQ(std::memcmp(base.depth.data.data(), out.depth.data.data(), sizeof(float) * base.depth.data.size()), 0);
    }
}

TEST(Deform, TableGating) {
    Rng rng(9);
    auto cloud = test::random_cloud<float>(rng, 12);
    for (Eigen::Index i = 0; i < 12; i += 2) cloud.deform_table[i] = 0;
    auto m = test::small_deform_model<float>(rng, 0.3);
    const auto d = deform(cloud, m, 0.6f);
    for (Eigen::Index i = 0; i < 12; ++i) {
        const bool same = d.cloud.means.row(i) == cloud.means.row(i) && d.cloud.quats.row(i) == cloud.quats.row(i) &&
                          d.cloud.log_scales.row(i) == cloud.log_scales.row(i) &&
                          d.cloud.opacity_logits[i] == cloud.opacity_logits[i];
        EXPECT_EQ(same, i % 2 == 0) << i;
    }
    cloud.deform_table.setZero();
    const auto none = deform(cloud, m, 0.6f);
    EXPECT_TRUE(none.cloud.means == cloud.means);
    EXPECT_TRUE(none.cloud.opacity_logits == cloud.opacity_logits);
}

TEST(Deform, RejectsTimeOutsideUnitInterval) {
    Rng rng(10);
    auto cloud = test::random_cloud<float>(rng, 2);
    auto m = test::small_deform_model<float>(rng, 0.0);
    EXPECT_THROW((void)deform(cloud, m, 1.5f), DegenerateInput);
}

/// End-to-end objective <upstream, render(deform(cloud, model, t))>.
struct EndToEnd {
    GaussianCloud<double> cloud;
    DeformationModel<double> model;
    Camera<double> cam;
    double t;
    test::Upstream up;

    double loss(const GaussianCloud<double>& c, const DeformationModel<double>& m) const {
        return up.dot(render(deform(c, m, t).snap, cam));
    }
};

TEST(DeformBackward, EndToEndFiniteDifferences) {
    Rng rng(11);
    test::GradCheckStats stats;
    for (int trial = 0; trial < 4; ++trial) {
        auto cloud = test::random_cloud<double>(rng, 5, 0.5, 0.1, 0.3, 0.1);
        cloud.deform_table[4] = 0;
        EndToEnd e{cloud, test::small_deform_model<double>(rng, 0.05), test::make_camera<double>(32, 32, 30),
                   test::uniform(rng, 0.05, 0.95), test::Upstream(32, 32, rng)};
        const auto d = deform(e.cloud, e.model, e.t);
        const auto out = render(d.snap, e.cam);
        auto grads = render_backward(out, e.up.rgb, e.up.depth, e.up.alpha);
        auto dgrads = DeformationGrads<double>::zeros_like(e.model);
        deform_backward(d, e.model, grads, dgrads);
        ASSERT_TRUE(dgrads.all_finite());

        const double h = 1e-6;
        // HexPlane entries near the Gaussians' footprints: pick rows with nonzero gradient.
        for (int s = 0; s < 30; ++s) {
            const auto pi = static_cast<std::size_t>(rng() % dgrads.planes.size());
            const auto& g = dgrads.planes[pi];
            std::vector<Eigen::Index> nz;
            for (Eigen::Index k = 0; k < g.size(); ++k)
                if (g.data()[k] != 0.0) nz.push_back(k);
            if (nz.empty()) continue;
            const Eigen::Index k = nz[rng() % nz.size()];
            auto hi = e.model, lo = e.model;
            hi.field.planes[pi].data()[k] += h;
            lo.field.planes[pi].data()[k] -= h;
            test::record(stats, "plane", g.data()[k], (e.loss(e.cloud, hi) - e.loss(e.cloud, lo)) / (2 * h));
        }
        for (int s = 0; s < 20; ++s) {
            const auto li = static_cast<std::size_t>(rng() % dgrads.weights.size());
            const Eigen::Index k = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(dgrads.weights[li].size()));
            auto hi = e.model, lo = e.model;
            hi.decoder.weights[li].data()[k] += h;
            lo.decoder.weights[li].data()[k] -= h;
            test::record(stats, "weight" + std::to_string(li), dgrads.weights[li].data()[k],
                         (e.loss(e.cloud, hi) - e.loss(e.cloud, lo)) / (2 * h));
            const Eigen::Index kb = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(dgrads.biases[li].size()));
            auto bh = e.model, bl = e.model;
            bh.decoder.biases[li][kb] += h;
            bl.decoder.biases[li][kb] -= h;
            test::record(stats, "bias" + std::to_string(li), dgrads.biases[li][kb],
                         (e.loss(e.cloud, bh) - e.loss(e.cloud, bl)) / (2 * h));
        }
        auto canonical_loss = [&](const GaussianCloud<double>& c) { return e.loss(c, e.model); };
        stats.merge(test::check_cloud_gradients(e.cloud, canonical_loss, grads, 30, rng));
    }
    for (const auto& f : stats.failures) std::cout << "  " << f << "\n";
    EXPECT_GE(stats.pass_rate(), 0.95) << stats.passed << "/" << stats.total;
    EXPECT_GE(stats.total, 300);
    EXPECT_GE(stats.significant, stats.total / 2);
}

/// Scalar regularizer oracle over the documented plane layout.
DeformRegularizers oracle_regularizers(const DeformationModel<double>& m) {
    const auto& f = m.field;
    DeformRegularizers r;
    const int L = f.levels();
    for (int l = 0; l < L; ++l)
        for (int p = 0; p < kNumPlanes; ++p) {
            const int ra = f.resolution(kPlaneAxes[p][0], l), rb = f.resolution(kPlaneAxes[p][1], l);
            const auto& P = f.plane(p, l);
            const int F = f.feature_dim;
            auto v = [&](int jb, int ia, int c) { return P(jb * ra + ia, c); };
            if (p >= 3) {
                double ts = 0, l1 = 0;
                for (int ia = 0; ia < ra; ++ia)
                    for (int c = 0; c < F; ++c) {
                        double mean = 0;
                        for (int jb = 0; jb < rb; ++jb) mean += v(jb, ia, c);
                        mean /= rb;
                        for (int jb = 0; jb < rb; ++jb) l1 += std::abs(v(jb, ia, c) - mean);
                        for (int jb = 1; jb + 1 < rb; ++jb)
                            ts += std::pow(v(jb + 1, ia, c) - 2 * v(jb, ia, c) + v(jb - 1, ia, c), 2);
                    }
                r.time_smooth += ts / ((rb - 2) * ra * F) / (3 * L);
                r.l1_time += l1 / (rb * ra * F) / (3 * L);
            } else {
                double ha = 0, hb = 0;
                for (int jb = 0; jb < rb; ++jb)
                    for (int ia = 0; ia < ra; ++ia)
                        for (int c = 0; c < F; ++c) {
                            if (ia + 1 < ra) ha += std::pow(v(jb, ia + 1, c) - v(jb, ia, c), 2);
                            if (jb + 1 < rb) hb += std::pow(v(jb + 1, ia, c) - v(jb, ia, c), 2);
                        }
                r.tv_spatial += (ha / (rb * (ra - 1) * F) + hb / ((rb - 1) * ra * F)) / (3 * L);
            }
        }
    return r;
}

TEST(Regularizers, ConstantPlanesGiveZero) {
    Rng rng(12);
    auto m = test::small_deform_model<double>(rng, 0.0);
    for (auto& p : m.field.planes) p.setConstant(0.7);
    const auto r = deform_regularizers(m);
    EXPECT_EQ(r.time_smooth, 0.0);
    EXPECT_NEAR(r.l1_time, 0.0, 1e-15);
    EXPECT_EQ(r.tv_spatial, 0.0);
}

TEST(Regularizers, MatchScalarOracle) {
    Rng rng(13);
    auto m = test::small_deform_model<double>(rng, 0.0);
    const auto r = deform_regularizers(m);
    const auto o = oracle_regularizers(m);
    EXPECT_NEAR(r.time_smooth, o.time_smooth, 1e-12);
    EXPECT_NEAR(r.l1_time, o.l1_time, 1e-12);
    EXPECT_NEAR(r.tv_spatial, o.tv_spatial, 1e-12);
    EXPECT_GT(o.tv_spatial, 0.0);
}

TEST(Regularizers, GradientsMatchFiniteDifferences) {
    Rng rng(14);
    auto m = test::small_deform_model<double>(rng, 0.0);
    const DeformRegWeights w{0.3, 0.5, 0.7};
    auto total = [&](const DeformationModel<double>& mm) {
        const auto r = deform_regularizers(mm);
        return w.time_smooth * r.time_smooth + w.l1_time * r.l1_time + w.tv_spatial * r.tv_spatial;
    };
    auto g = DeformationGrads<double>::zeros_like(m);
    (void)deform_regularizers(m, w, &g);
    test::GradCheckStats stats;
    for (int s = 0; s < 200; ++s) {
        const auto pi = static_cast<std::size_t>(rng() % m.field.planes.size());
        const Eigen::Index k = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m.field.planes[pi].size()));
        auto hi = m, lo = m;
        hi.field.planes[pi].data()[k] += 1e-7;
        lo.field.planes[pi].data()[k] -= 1e-7;
        test::record(stats, "reg", g.planes[pi].data()[k], (total(hi) - total(lo)) / 2e-7, 1e-4, 1e-9);
    }
    EXPECT_EQ(stats.passed, stats.total);
}

} // namespace
} // namespace tsplat
