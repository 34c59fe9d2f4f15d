// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/deformation.hpp"

#include "tsplat/errors.hpp"
#include "tsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace tsplat {

const char* plane_name(int plane) {
    static constexpr const char* kNames[kNumPlanes] = {"xy", "xz", "yz", "xt", "yt", "zt"};
    if (plane < 0 || plane >= kNumPlanes) throw ContractViolation("plane index out of range");
    return kNames[plane];
}

void DeformationConfig::validate() const {
    if (feature_dim < 1) throw ConfigError("deformation feature_dim must be positive");
    if (base_spatial < 2 || base_temporal < 2) throw ConfigError("HexPlane base resolutions must be at least 2");
    if (multipliers.empty()) throw ConfigError("HexPlane needs at least one level");
    for (int m : multipliers)
        if (m < 1) throw ConfigError("HexPlane level multipliers must be positive");
    if (hidden_layers < 1 || hidden_width < 1) throw ConfigError("decoder needs at least one hidden layer");
    if (!(init_halfwidth >= 0.0)) throw ConfigError("init_halfwidth must be non-negative");
    if (!(bounds_margin >= 0.0)) throw ConfigError("bounds_margin must be non-negative");
}

template <typename S>
Vec3<S> HexPlaneField<S>::normalize(const Vec3<S>& mu) const {
    Vec3<S> u;
    for (int a = 0; a < 3; ++a) u[a] = std::clamp((mu[a] - lo[a]) / (hi[a] - lo[a]), S(0), S(1));
    return u;
}

template <typename S>
void HexPlaneField<S>::validate() const {
    if (feature_dim < 1 || multipliers.empty()) throw ShapeMismatch("HexPlane field is empty");
    if (planes.size() != static_cast<std::size_t>(levels() * kNumPlanes))
        throw ShapeMismatch("HexPlane field has the wrong number of planes");
    if (!((hi - lo).minCoeff() > S(0))) throw DegenerateInput("HexPlane domain bounds have no extent");
    for (int l = 0; l < levels(); ++l)
        for (int p = 0; p < kNumPlanes; ++p) {
            const auto& m = plane(p, l);
            const int ra = resolution(kPlaneAxes[p][0], l), rb = resolution(kPlaneAxes[p][1], l);
            if (ra < 2 || rb < 2 || m.rows() != static_cast<Eigen::Index>(ra) * rb || m.cols() != feature_dim)
                throw ShapeMismatch(std::string("HexPlane plane ") + plane_name(p) + "." + std::to_string(l) +
                                    " has the wrong shape");
            if (!m.allFinite()) throw NonFiniteParameters("HexPlane field holds non-finite features");
        }
}

template <typename S>
void MLPDecoder<S>::validate() const {
    if (weights.size() != biases.size() || static_cast<int>(weights.size()) < kNumHeads + 1)
        throw ShapeMismatch("decoder layer lists are inconsistent");
    const int hidden = hidden_layers();
    for (int i = 0; i < static_cast<int>(weights.size()); ++i) {
        const auto& w = weights[static_cast<std::size_t>(i)];
        const auto& b = biases[static_cast<std::size_t>(i)];
        if (b.size() != w.rows()) throw ShapeMismatch("decoder bias length differs from layer width");
        const Eigen::Index expected_in = i == 0 ? w.cols() : weights[static_cast<std::size_t>(std::min(i, hidden) - 1)].rows();
        if (w.cols() != expected_in) throw ShapeMismatch("decoder layer " + std::to_string(i) + " input width mismatch");
        if (!w.allFinite() || !b.allFinite()) throw NonFiniteParameters("decoder holds non-finite weights");
    }
    static constexpr int kHeadDims[kNumHeads] = {3, 3, 4, 1};
    for (int h = 0; h < kNumHeads; ++h)
        if (weights[static_cast<std::size_t>(hidden + h)].rows() != kHeadDims[h])
            throw ShapeMismatch("decoder head " + std::to_string(h) + " has the wrong width");
}

template <typename S>
DeformationModel<S> DeformationModel<S>::create(const DeformationConfig& config, const Vec3<S>& lo, const Vec3<S>& hi,
                                                std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    DeformationModel m;
    m.concat_position = config.concat_position;
    m.l1_time_magnitude = config.l1_time_magnitude;

    auto& f = m.field;
    f.feature_dim = config.feature_dim;
    f.base_spatial = config.base_spatial;
    f.base_temporal = config.base_temporal;
    f.multipliers = config.multipliers;
    f.lo = lo;
    f.hi = hi;
    std::uniform_real_distribution<double> plane_init(config.init_center - config.init_halfwidth,
                                                      config.init_center + config.init_halfwidth);
    for (int l = 0; l < f.levels(); ++l)
        for (int p = 0; p < kNumPlanes; ++p) {
            const Eigen::Index rows =
                static_cast<Eigen::Index>(f.resolution(kPlaneAxes[p][0], l)) * f.resolution(kPlaneAxes[p][1], l);
            MatX<S> plane(rows, config.feature_dim);
            for (Eigen::Index k = 0; k < plane.size(); ++k) plane.data()[k] = static_cast<S>(plane_init(rng));
            f.planes.push_back(std::move(plane));
        }

    auto& d = m.decoder;
    int fan_in = m.decoder_input_dim();
    for (int i = 0; i < config.hidden_layers; ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        MatX<S> w(config.hidden_width, fan_in);
        VecX<S> b(config.hidden_width);
        for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<S>(u(rng));
        for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = static_cast<S>(u(rng));
        d.weights.push_back(std::move(w));
        d.biases.push_back(std::move(b));
        fan_in = config.hidden_width;
    }
    for (int dim : {3, 3, 4, 1}) {
        d.weights.push_back(MatX<S>::Zero(dim, fan_in));
        d.biases.push_back(VecX<S>::Zero(dim));
    }
    return m;
}

template <typename S>
void DeformationModel<S>::validate() const {
    field.validate();
    decoder.validate();
    if (decoder.input_dim() != decoder_input_dim())
        throw ShapeMismatch("decoder input width " + std::to_string(decoder.input_dim()) +
                            " does not match the field output " + std::to_string(decoder_input_dim()));
}

template <typename S>
template <typename T>
DeformationModel<T> DeformationModel<S>::cast() const {
    DeformationModel<T> m;
    m.concat_position = concat_position;
    m.l1_time_magnitude = l1_time_magnitude;
    m.field.feature_dim = field.feature_dim;
    m.field.base_spatial = field.base_spatial;
    m.field.base_temporal = field.base_temporal;
    m.field.multipliers = field.multipliers;
    m.field.lo = field.lo.template cast<T>();
    m.field.hi = field.hi.template cast<T>();
    for (const auto& p : field.planes) m.field.planes.push_back(p.template cast<T>());
    for (const auto& w : decoder.weights) m.decoder.weights.push_back(w.template cast<T>());
    for (const auto& b : decoder.biases) m.decoder.biases.push_back(b.template cast<T>());
    return m;
}

template <typename S>
void domain_bounds(const Rows<S, 3>& points, double margin, Vec3<S>& lo, Vec3<S>& hi) {
    if (points.rows() == 0) throw EmptyInput("domain_bounds: no points");
    const Vec3<S> a = points.colwise().minCoeff().transpose();
    const Vec3<S> b = points.colwise().maxCoeff().transpose();
    const S extent = std::max((b - a).maxCoeff(), S(1e-6));
    for (int k = 0; k < 3; ++k) {
        const S pad = S(margin) * std::max(b[k] - a[k], S(1e-3) * extent);
        lo[k] = a[k] - pad - S(1e-6);
        hi[k] = b[k] + pad + S(1e-6);
    }
}

template <typename S>
DeformationGrads<S> DeformationGrads<S>::zeros_like(const DeformationModel<S>& model) {
    DeformationGrads g;
    for (const auto& p : model.field.planes) g.planes.push_back(MatX<S>::Zero(p.rows(), p.cols()));
    for (const auto& w : model.decoder.weights) g.weights.push_back(MatX<S>::Zero(w.rows(), w.cols()));
    for (const auto& b : model.decoder.biases) g.biases.push_back(VecX<S>::Zero(b.size()));
    return g;
}

template <typename S>
void DeformationGrads<S>::set_zero() {
    for (auto& p : planes) p.setZero();
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
}

template <typename S>
bool DeformationGrads<S>::all_finite() const {
    for (const auto& p : planes)
        if (!p.allFinite()) return false;
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

namespace {

/// Bilinear lookup footprint on one plane (align-corners texel centers).
template <typename S>
struct Footprint {
    Eigen::Index r00, r10, r01, r11;  // rows of (ia,jb), (ia+1,jb), (ia,jb+1), (ia+1,jb+1)
    S wa, wb;                          // fractional offsets
    S scale_a, scale_b;                // d grid / d coordinate
};

template <typename S>
Footprint<S> footprint(int ra, int rb, S u, S v) {
    Footprint<S> f;
    const S ga = u * S(ra - 1), gb = v * S(rb - 1);
    const int ia = std::clamp(static_cast<int>(std::floor(ga)), 0, ra - 2);
    const int jb = std::clamp(static_cast<int>(std::floor(gb)), 0, rb - 2);
    f.wa = ga - S(ia);
    f.wb = gb - S(jb);
    f.r00 = static_cast<Eigen::Index>(jb) * ra + ia;
    f.r10 = f.r00 + 1;
    f.r01 = f.r00 + ra;
    f.r11 = f.r01 + 1;
    f.scale_a = S(ra - 1);
    f.scale_b = S(rb - 1);
    return f;
}

template <typename S>
Footprint<S> plane_footprint(const HexPlaneField<S>& field, int p, int level, const Vec4<S>& coord) {
    const int a = kPlaneAxes[static_cast<std::size_t>(p)][0], b = kPlaneAxes[static_cast<std::size_t>(p)][1];
    return footprint(field.resolution(a, level), field.resolution(b, level), coord[a], coord[b]);
}

template <typename S, typename Out>
void sample(const MatX<S>& plane, const Footprint<S>& f, Out&& out) {
    out = (S(1) - f.wa) * (S(1) - f.wb) * plane.row(f.r00) + f.wa * (S(1) - f.wb) * plane.row(f.r10) +
          (S(1) - f.wa) * f.wb * plane.row(f.r01) + f.wa * f.wb * plane.row(f.r11);
}

template <typename S>
Vec4<S> query_coord(const HexPlaneField<S>& field, const Vec3<S>& mu, S t) {
    Vec4<S> c;
    c.template head<3>() = field.normalize(mu);
    c[3] = std::clamp(t, S(0), S(1));
    return c;
}

template <typename S, typename Out>
void features_into(const HexPlaneField<S>& field, const Vec4<S>& coord, Out&& out) {
    const int F = field.feature_dim;
    Eigen::Matrix<S, 1, Eigen::Dynamic> s(F);
    for (int l = 0; l < field.levels(); ++l) {
        auto seg = out.segment(static_cast<Eigen::Index>(l) * F, F);
        seg.setOnes();
        for (int p = 0; p < kNumPlanes; ++p) {
            sample(field.plane(p, l), plane_footprint(field, p, l, coord), s);
            seg.array() *= s.array();
        }
    }
}

bool in_open_unit(double u) { return u > 0.0 && u < 1.0; }

} // namespace

template <typename S>
VecX<S> query_features(const HexPlaneField<S>& field, const Vec3<S>& mu, S t) {
    VecX<S> out(field.output_dim());
    features_into(field, query_coord(field, mu, t), out.transpose());
    return out;
}

template <typename S>
MatX<S> decoder_inputs(const DeformationModel<S>& model, const Rows<S, 3>& means, S t) {
    const auto& field = model.field;
    const Eigen::Index m = means.rows();
    MatX<S> x(m, model.decoder_input_dim());
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Vec4<S> c = query_coord(field, Vec3<S>(means.row(r).transpose()), t);
        features_into(field, c, x.row(r).head(field.output_dim()));
        if (model.concat_position) x.row(r).tail(3) = c.template head<3>().transpose();
    });
    return x;
}

namespace {

template <typename S>
void add_bias(MatX<S>& z, const VecX<S>& b) {
    z.rowwise() += b.transpose();
}

template <typename S>
DecodeOutput<S> heads_forward(const MLPDecoder<S>& dec, const MatX<S>& h) {
    const int hidden = dec.hidden_layers();
    auto head = [&](int k) {
        MatX<S> z = h * dec.weights[static_cast<std::size_t>(hidden + k)].transpose();
        add_bias(z, dec.biases[static_cast<std::size_t>(hidden + k)]);
        return z;
    };
    DecodeOutput<S> out;
    out.d_means = head(0);
    out.d_log_scales = head(1);
    out.d_quats = head(2);
    out.d_opacity_logits = head(3).col(0);
    return out;
}

/// Runs the hidden stack; acts[0] is the input, acts[i+1] the output of layer i.
template <typename S>
std::vector<MatX<S>> hidden_forward(const MLPDecoder<S>& dec, const MatX<S>& inputs) {
    if (inputs.cols() != dec.input_dim())
        throw ShapeMismatch("decoder expects " + std::to_string(dec.input_dim()) + " inputs, got " +
                            std::to_string(inputs.cols()));
    std::vector<MatX<S>> acts;
    acts.reserve(static_cast<std::size_t>(dec.hidden_layers() + 1));
    acts.push_back(inputs);
    for (int i = 0; i < dec.hidden_layers(); ++i) {
        MatX<S> z = acts.back() * dec.weights[static_cast<std::size_t>(i)].transpose();
        add_bias(z, dec.biases[static_cast<std::size_t>(i)]);
        acts.push_back(z.cwiseMax(S(0)));
    }
    return acts;
}

} // namespace

template <typename S>
DecodeOutput<S> decode(const MLPDecoder<S>& decoder, const MatX<S>& inputs) {
    return heads_forward(decoder, hidden_forward(decoder, inputs).back());
}

template <typename S>
DeformedSnapshot<S> deform(const GaussianCloud<S>& cloud, const DeformationModel<S>& model, S t) {
    if (!(t >= S(0) && t <= S(1))) throw DegenerateInput("deform: time must lie in [0, 1]");
    auto cache = std::make_shared<DeformCache<S>>();
    cache->t = t;
    for (Eigen::Index i = 0; i < cloud.size(); ++i)
        if (cloud.deform_table[i]) cache->rows.push_back(i);

    DeformedSnapshot<S> out;
    out.cloud = cloud;
    const auto m = static_cast<Eigen::Index>(cache->rows.size());
    if (m > 0) {
        cache->query_means.resize(m, 3);
        for (Eigen::Index k = 0; k < m; ++k) cache->query_means.row(k) = cloud.means.row(cache->rows[static_cast<std::size_t>(k)]);
        cache->activations = hidden_forward(model.decoder, decoder_inputs(model, cache->query_means, t));
        out.offsets = heads_forward(model.decoder, cache->activations.back());
        for (Eigen::Index k = 0; k < m; ++k) {
            const Eigen::Index r = cache->rows[static_cast<std::size_t>(k)];
            out.cloud.means.row(r) += out.offsets.d_means.row(k);
            out.cloud.log_scales.row(r) += out.offsets.d_log_scales.row(k);
            out.cloud.quats.row(r) += out.offsets.d_quats.row(k);
            out.cloud.opacity_logits[r] += out.offsets.d_opacity_logits[k];
        }
    }
    out.snap = snapshot(out.cloud);
    out.cache = std::move(cache);
    return out;
}

template <typename S>
void deform_backward(const DeformedSnapshot<S>& deformed, const DeformationModel<S>& model, ParamGrads<S>& grads,
                     DeformationGrads<S>& out) {
    if (!deformed.cache) throw ContractViolation("deform_backward: no retained forward state");
    const auto& cache = *deformed.cache;
    const auto m = static_cast<Eigen::Index>(cache.rows.size());
    if (m == 0) return;
    if (grads.size() != deformed.cloud.size()) throw ShapeMismatch("deform_backward: gradient rows differ from cloud");
    const auto& dec = model.decoder;
    const int hidden = dec.hidden_layers();

    // Upstream gradients of the four heads are the deformed-parameter gradients.
    MatX<S> g_heads[kNumHeads] = {MatX<S>(m, 3), MatX<S>(m, 3), MatX<S>(m, 4), MatX<S>(m, 1)};
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index r = cache.rows[static_cast<std::size_t>(k)];
        g_heads[0].row(k) = grads.means.row(r);
        g_heads[1].row(k) = grads.log_scales.row(r);
        g_heads[2].row(k) = grads.quats.row(r);
        g_heads[3](k, 0) = grads.opacity_logits[r];
    }

    const MatX<S>& h_last = cache.activations.back();
    MatX<S> g_h = MatX<S>::Zero(m, h_last.cols());
    for (int k = 0; k < kNumHeads; ++k) {
        const auto idx = static_cast<std::size_t>(hidden + k);
        out.weights[idx].noalias() += g_heads[k].transpose() * h_last;
        out.biases[idx] += g_heads[k].colwise().sum().transpose();
        g_h.noalias() += g_heads[k] * dec.weights[idx];
    }
    for (int i = hidden - 1; i >= 0; --i) {
        const auto idx = static_cast<std::size_t>(i);
        const MatX<S>& a_out = cache.activations[idx + 1];
        const MatX<S> g_z = (a_out.array() > S(0)).select(g_h, S(0));
        out.weights[idx].noalias() += g_z.transpose() * cache.activations[idx];
        out.biases[idx] += g_z.colwise().sum().transpose();
        g_h = g_z * dec.weights[idx];
    }
    // g_h is now d loss / d decoder input.

    const auto& field = model.field;
    const int F = field.feature_dim;
    Rows<S, 3> g_norm = Rows<S, 3>::Zero(m, 3);
    if (model.concat_position) g_norm = g_h.rightCols(3);

    std::vector<Vec4<S>> coords(static_cast<std::size_t>(m));
    for (Eigen::Index k = 0; k < m; ++k)
        coords[static_cast<std::size_t>(k)] = query_coord(field, Vec3<S>(cache.query_means.row(k).transpose()), cache.t);

    MatX<S> g_samples(m, static_cast<Eigen::Index>(kNumPlanes) * F);
    for (int l = 0; l < field.levels(); ++l) {
        // Per Gaussian: gradient of each plane sample (product of the other five)
        // and the coordinate gradient through the bilinear weights.
        parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
            const auto k = static_cast<Eigen::Index>(i);
            const Vec4<S>& c = coords[i];
            Eigen::Matrix<S, kNumPlanes, Eigen::Dynamic> s(kNumPlanes, F);
            Footprint<S> fp[kNumPlanes];
            for (int p = 0; p < kNumPlanes; ++p) {
                fp[p] = plane_footprint(field, p, l, c);
                sample(field.plane(p, l), fp[p], s.row(p));
            }
            const auto g_feat = g_h.row(k).segment(static_cast<Eigen::Index>(l) * F, F);
            Eigen::Matrix<S, 1, Eigen::Dynamic> prefix = Eigen::Matrix<S, 1, Eigen::Dynamic>::Ones(F);
            Eigen::Matrix<S, kNumPlanes, Eigen::Dynamic> others(kNumPlanes, F);
            for (int p = 0; p < kNumPlanes; ++p) {
                others.row(p) = prefix;
                prefix.array() *= s.row(p).array();
            }
            Eigen::Matrix<S, 1, Eigen::Dynamic> suffix = Eigen::Matrix<S, 1, Eigen::Dynamic>::Ones(F);
            for (int p = kNumPlanes - 1; p >= 0; --p) {
                others.row(p).array() *= suffix.array();
                suffix.array() *= s.row(p).array();
            }
            for (int p = 0; p < kNumPlanes; ++p) {
                const auto gs = (g_feat.array() * others.row(p).array()).matrix();
                g_samples.row(k).segment(static_cast<Eigen::Index>(p) * F, F) = gs;
                const auto& P = field.plane(p, l);
                const Footprint<S>& f = fp[p];
                const S da = f.scale_a * ((S(1) - f.wb) * (P.row(f.r10) - P.row(f.r00)) +
                                          f.wb * (P.row(f.r11) - P.row(f.r01))).dot(gs);
                const S db = f.scale_b * ((S(1) - f.wa) * (P.row(f.r01) - P.row(f.r00)) +
                                          f.wa * (P.row(f.r11) - P.row(f.r10))).dot(gs);
                const int axis_a = kPlaneAxes[static_cast<std::size_t>(p)][0];
                const int axis_b = kPlaneAxes[static_cast<std::size_t>(p)][1];
                g_norm(k, axis_a) += da;
                if (axis_b < 3) g_norm(k, axis_b) += db;
            }
        });
        // Scatter in Gaussian order, one plane per task.
        parallel_for(kNumPlanes, [&](std::size_t pi) {
            const int p = static_cast<int>(pi);
            MatX<S>& G = out.planes[static_cast<std::size_t>(l * kNumPlanes + p)];
            for (Eigen::Index k = 0; k < m; ++k) {
                const Footprint<S> f = plane_footprint(field, p, l, coords[static_cast<std::size_t>(k)]);
                const auto gs = g_samples.row(k).segment(static_cast<Eigen::Index>(p) * F, F);
                G.row(f.r00) += (S(1) - f.wa) * (S(1) - f.wb) * gs;
                G.row(f.r10) += f.wa * (S(1) - f.wb) * gs;
                G.row(f.r01) += (S(1) - f.wa) * f.wb * gs;
                G.row(f.r11) += f.wa * f.wb * gs;
            }
        });
    }

    // Canonical mean gradient: identity path plus the query path (zero where clamped).
    const Vec3<S> extent = field.hi - field.lo;
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index r = cache.rows[static_cast<std::size_t>(k)];
        for (int a = 0; a < 3; ++a) {
            const double u = static_cast<double>((cache.query_means(k, a) - field.lo[a]) / extent[a]);
            if (in_open_unit(u)) grads.means(r, a) += g_norm(k, a) / extent[a];
        }
    }
}

namespace {

struct PlaneReg {
    double time_smooth = 0.0, l1_time = 0.0, tv_spatial = 0.0;
};

/// Regularizer values of one plane, with gradient scaled by the given
/// per-term factors accumulated into g (if non-null).
template <typename S>
PlaneReg plane_regularizers(const MatX<S>& P, int ra, int rb, bool temporal, bool magnitude, double w_ts,
                            double w_l1, double w_tv, MatX<S>* g) {
    PlaneReg r;
    const Eigen::Index F = P.cols();
    auto at = [&](int jb, int ia) { return static_cast<Eigen::Index>(jb) * ra + ia; };
    if (temporal) {
        // Axis b is time.
        if (rb >= 3) {
            const double count = static_cast<double>(rb - 2) * ra * static_cast<double>(F);
            Accum sum = 0;
            for (int jb = 1; jb + 1 < rb; ++jb)
                for (int ia = 0; ia < ra; ++ia)
                    for (Eigen::Index f = 0; f < F; ++f) {
                        const double d = static_cast<double>(P(at(jb + 1, ia), f)) - 2.0 * P(at(jb, ia), f) +
                                         static_cast<double>(P(at(jb - 1, ia), f));
                        sum += d * d;
                        if (g) {
                            const S gd = static_cast<S>(w_ts * 2.0 * d / count);
                            (*g)(at(jb + 1, ia), f) += gd;
                            (*g)(at(jb, ia), f) -= S(2) * gd;
                            (*g)(at(jb - 1, ia), f) += gd;
                        }
                    }
            r.time_smooth = sum / count;
        }
        const double count = static_cast<double>(rb) * ra * static_cast<double>(F);
        Accum sum = 0;
        std::vector<double> mean(static_cast<std::size_t>(F)), sign_mean(static_cast<std::size_t>(F));
        for (int ia = 0; ia < ra; ++ia) {
            std::fill(mean.begin(), mean.end(), 0.0);
            std::fill(sign_mean.begin(), sign_mean.end(), 0.0);
            if (!magnitude)
                for (int jb = 0; jb < rb; ++jb)
                    for (Eigen::Index f = 0; f < F; ++f) mean[static_cast<std::size_t>(f)] += P(at(jb, ia), f);
            for (double& v : mean) v /= rb;
            for (int jb = 0; jb < rb; ++jb)
                for (Eigen::Index f = 0; f < F; ++f) {
                    const double d = P(at(jb, ia), f) - mean[static_cast<std::size_t>(f)];
                    sum += std::abs(d);
                    sign_mean[static_cast<std::size_t>(f)] += (d > 0) - (d < 0);
                }
            if (g) {
                for (int jb = 0; jb < rb; ++jb)
                    for (Eigen::Index f = 0; f < F; ++f) {
                        const double d = P(at(jb, ia), f) - mean[static_cast<std::size_t>(f)];
                        double s = (d > 0) - (d < 0);
                        if (!magnitude) s -= sign_mean[static_cast<std::size_t>(f)] / rb;
                        (*g)(at(jb, ia), f) += static_cast<S>(w_l1 * s / count);
                    }
            }
        }
        r.l1_time = sum / count;
    } else {
        const double count_a = static_cast<double>(rb) * (ra - 1) * static_cast<double>(F);
        const double count_b = static_cast<double>(rb - 1) * ra * static_cast<double>(F);
        Accum sum_a = 0, sum_b = 0;
        for (int jb = 0; jb < rb; ++jb)
            for (int ia = 0; ia < ra; ++ia)
                for (Eigen::Index f = 0; f < F; ++f) {
                    if (ia + 1 < ra) {
                        const double d = static_cast<double>(P(at(jb, ia + 1), f)) - P(at(jb, ia), f);
                        sum_a += d * d;
                        if (g) {
                            const S gd = static_cast<S>(w_tv * 2.0 * d / count_a);
                            (*g)(at(jb, ia + 1), f) += gd;
                            (*g)(at(jb, ia), f) -= gd;
                        }
                    }
                    if (jb + 1 < rb) {
                        const double d = static_cast<double>(P(at(jb + 1, ia), f)) - P(at(jb, ia), f);
                        sum_b += d * d;
                        if (g) {
                            const S gd = static_cast<S>(w_tv * 2.0 * d / count_b);
                            (*g)(at(jb + 1, ia), f) += gd;
                            (*g)(at(jb, ia), f) -= gd;
                        }
                    }
                }
        r.tv_spatial = sum_a / count_a + sum_b / count_b;
    }
    return r;
}

} // namespace

template <typename S>
DeformRegularizers deform_regularizers(const DeformationModel<S>& model, const DeformRegWeights& weights,
                                       DeformationGrads<S>* grads) {
    const auto& field = model.field;
    const int levels = field.levels();
    const double per_group = 1.0 / (3.0 * levels);  // three planes of each kind per level
    std::vector<PlaneReg> parts(static_cast<std::size_t>(levels * kNumPlanes));
    parallel_for(parts.size(), [&](std::size_t idx) {
        const int l = static_cast<int>(idx) / kNumPlanes, p = static_cast<int>(idx) % kNumPlanes;
        const int ra = field.resolution(kPlaneAxes[static_cast<std::size_t>(p)][0], l);
        const int rb = field.resolution(kPlaneAxes[static_cast<std::size_t>(p)][1], l);
        parts[idx] = plane_regularizers(field.plane(p, l), ra, rb, is_temporal_plane(p), model.l1_time_magnitude,
                                        weights.time_smooth * per_group, weights.l1_time * per_group,
                                        weights.tv_spatial * per_group, grads ? &grads->planes[idx] : nullptr);
    });
    DeformRegularizers out;
    for (const auto& r : parts) {
        out.time_smooth += r.time_smooth * per_group;
        out.l1_time += r.l1_time * per_group;
        out.tv_spatial += r.tv_spatial * per_group;
    }
    return out;
}

#define TSPLAT_INSTANTIATE(S)                                                                                   \
    template struct HexPlaneField<S>;                                                                           \
    template struct MLPDecoder<S>;                                                                              \
    template struct DeformationModel<S>;                                                                        \
    template struct DeformationGrads<S>;                                                                        \
    template void domain_bounds(const Rows<S, 3>&, double, Vec3<S>&, Vec3<S>&);                                  \
    template VecX<S> query_features(const HexPlaneField<S>&, const Vec3<S>&, S);                                \
    template DecodeOutput<S> decode(const MLPDecoder<S>&, const MatX<S>&);                                      \
    template MatX<S> decoder_inputs(const DeformationModel<S>&, const Rows<S, 3>&, S);                          \
    template DeformedSnapshot<S> deform(const GaussianCloud<S>&, const DeformationModel<S>&, S);                \
    template void deform_backward(const DeformedSnapshot<S>&, const DeformationModel<S>&, ParamGrads<S>&,      \
                                  DeformationGrads<S>&);                                                        \
    template DeformRegularizers deform_regularizers(const DeformationModel<S>&, const DeformRegWeights&,        \
                                                    DeformationGrads<S>*);

TSPLAT_INSTANTIATE(float)
TSPLAT_INSTANTIATE(double)

template DeformationModel<double> DeformationModel<float>::cast<double>() const;
template DeformationModel<float> DeformationModel<double>::cast<float>() const;
template DeformationModel<float> DeformationModel<float>::cast<float>() const;

} // namespace tsplat
