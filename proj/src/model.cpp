// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/model.hpp"

#include "tsplat/errors.hpp"
#include "tsplat/numerics.hpp"
#include "tsplat/parallel.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>

namespace tsplat {

const char* to_string(Mode mode) { return mode == Mode::TissueOnly ? "tissue-only" : "full-scene"; }

Mode mode_from_string(const std::string& s) {
    if (s == "tissue-only" || s == "tissue") return Mode::TissueOnly;
    if (s == "full-scene" || s == "full") return Mode::FullScene;
    throw ConfigError("unknown mode '" + s + "' (expected tissue-only or full-scene)");
}

template <typename S>
void GaussianCloud<S>::validate() const {
    const Eigen::Index n = size();
    if (n < 1) throw EmptyInput("Gaussian cloud is empty");
    if (log_scales.rows() != n || quats.rows() != n || opacity_logits.rows() != n || sh_dc.rows() != n ||
        sh_rest.rows() != n || deform_table.rows() != n)
        throw ShapeMismatch("Gaussian cloud arrays disagree on the number of rows");
    if (!means.allFinite() || !log_scales.allFinite() || !quats.allFinite() || !opacity_logits.allFinite() ||
        !sh_dc.allFinite() || !sh_rest.allFinite())
        throw NonFiniteParameters("Gaussian cloud holds non-finite parameters");
}

template <typename S>
GaussianCloud<S> GaussianCloud<S>::select(const std::vector<Eigen::Index>& rows) const {
    GaussianCloud out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.means.resize(m, 3);
    out.log_scales.resize(m, 3);
    out.quats.resize(m, 4);
    out.opacity_logits.resize(m);
    out.sh_dc.resize(m, 3);
    out.sh_rest.resize(m, 3 * kShRest);
    out.deform_table.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index r = rows[static_cast<std::size_t>(i)];
        out.means.row(i) = means.row(r);
        out.log_scales.row(i) = log_scales.row(r);
        out.quats.row(i) = quats.row(r);
        out.opacity_logits[i] = opacity_logits[r];
        out.sh_dc.row(i) = sh_dc.row(r);
        out.sh_rest.row(i) = sh_rest.row(r);
        out.deform_table[i] = deform_table[r];
    }
    out.scene_scale = scene_scale;
    return out;
}

namespace {

template <typename M>
void append_rows(M& dst, const M& src) {
    const Eigen::Index n = dst.rows();
    M merged(n + src.rows(), dst.cols());
    merged.topRows(n) = dst;
    merged.bottomRows(src.rows()) = src;
    dst = std::move(merged);
}

} // namespace

template <typename S>
void GaussianCloud<S>::append(const GaussianCloud& other) {
    append_rows(means, other.means);
    append_rows(log_scales, other.log_scales);
    append_rows(quats, other.quats);
    append_rows(opacity_logits, other.opacity_logits);
    append_rows(sh_dc, other.sh_dc);
    append_rows(sh_rest, other.sh_rest);
    append_rows(deform_table, other.deform_table);
}

template <typename S>
Snapshot<S> snapshot(const GaussianCloud<S>& cloud) {
    const Eigen::Index n = cloud.size();
    Snapshot<S> snap;
    snap.means = cloud.means;
    snap.scales = cloud.log_scales.array().exp().matrix();
    snap.rotations.resize(n, 4);
    snap.quat_norms.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec4<S> q = cloud.quats.row(i).transpose();
        const S norm = q.norm();
        if (!(norm > S(0))) throw DegenerateInput("Gaussian " + std::to_string(i) + " has a zero quaternion");
        snap.quat_norms[i] = norm;
        snap.rotations.row(i) = (q / norm).transpose();
    }
    snap.opacities = cloud.opacity_logits.unaryExpr([](S x) { return sigmoid(x); });
    snap.sh.resize(n, 3 * kShCoeffs);
    snap.sh.leftCols(3) = cloud.sh_dc;
    snap.sh.rightCols(3 * kShRest) = cloud.sh_rest;
    return snap;
}

namespace {

/// Median-split k-d tree over row indices; enough for one-shot init queries.
template <typename S>
class KdTree {
public:
    explicit KdTree(const Rows<S, 3>& pts) : pts_(pts), order_(static_cast<std::size_t>(pts.rows())) {
        std::iota(order_.begin(), order_.end(), Eigen::Index{0});
        nodes_.reserve(order_.size());
        root_ = build(0, order_.size(), 0);
    }

    /// k nearest neighbours of row `self`, excluding itself; distances ascending.
    std::vector<double> nearest(Eigen::Index self, int k) const {
        std::priority_queue<double> heap;
        search(root_, self, k, heap);
        std::vector<double> d(heap.size());
        for (auto it = d.rbegin(); it != d.rend(); ++it) {
            *it = heap.top();
            heap.pop();
        }
        for (double& v : d) v = std::sqrt(v);
        return d;
    }

private:
    struct Node {
        std::size_t lo, hi;   // range in order_
        int axis;
        double split;
        int left = -1, right = -1;
    };

    int build(std::size_t lo, std::size_t hi, int depth) {
        Node node{lo, hi, depth % 3, 0.0};
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        if (hi - lo <= 8) return id;
        const std::size_t mid = (lo + hi) / 2;
        const int axis = node.axis;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(hi),
                         [&](Eigen::Index a, Eigen::Index b) {
                             return pts_(a, axis) < pts_(b, axis) || (pts_(a, axis) == pts_(b, axis) && a < b);
                         });
        nodes_[static_cast<std::size_t>(id)].split = static_cast<double>(pts_(order_[mid], axis));
        const int l = build(lo, mid, depth + 1);
        const int r = build(mid, hi, depth + 1);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    void search(int id, Eigen::Index self, int k, std::priority_queue<double>& heap) const {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.left < 0) {
            for (std::size_t i = node.lo; i < node.hi; ++i) {
                const Eigen::Index j = order_[i];
                if (j == self) continue;
                const double d2 = (pts_.row(j) - pts_.row(self)).template cast<double>().squaredNorm();
                if (static_cast<int>(heap.size()) < k) {
                    heap.push(d2);
                } else if (d2 < heap.top()) {
                    heap.pop();
                    heap.push(d2);
                }
            }
            return;
        }
        const double diff = static_cast<double>(pts_(self, node.axis)) - node.split;
        const int near = diff < 0 ? node.left : node.right;
        const int far = diff < 0 ? node.right : node.left;
        search(near, self, k, heap);
        if (static_cast<int>(heap.size()) < k || diff * diff < heap.top()) search(far, self, k, heap);
    }

    const Rows<S, 3>& pts_;
    std::vector<Eigen::Index> order_;
    std::vector<Node> nodes_;
    int root_ = 0;
};

} // namespace

template <typename S>
VecX<S> mean_knn_distance(const Rows<S, 3>& points, int k) {
    const Eigen::Index m = points.rows();
    VecX<S> out(m);
    const int kk = static_cast<int>(std::min<Eigen::Index>(k, m - 1));
    if (kk <= 0) {
        out.setConstant(std::numeric_limits<S>::infinity());
        return out;
    }
    const KdTree<S> tree(points);
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
        const auto d = tree.nearest(static_cast<Eigen::Index>(i), kk);
        out[static_cast<Eigen::Index>(i)] = static_cast<S>(std::accumulate(d.begin(), d.end(), 0.0) / kk);
    });
    return out;
}

template <typename S>
S bounding_sphere_radius(const Rows<S, 3>& points) {
    if (points.rows() == 0) return S(0);
    const Vec3<S> lo = points.colwise().minCoeff().transpose();
    const Vec3<S> hi = points.colwise().maxCoeff().transpose();
    const Vec3<S> center = S(0.5) * (lo + hi);
    return (points.rowwise() - center.transpose()).rowwise().norm().maxCoeff();
}

template <typename S>
GaussianCloud<S> init_from_points(const Rows<S, 3>& points, const Rows<S, 3>& colors, S scene_scale,
                                  const InitOptions& options, const Flags& deform_flags) {
    const Eigen::Index m = points.rows();
    if (m == 0) throw EmptyInput("init_from_points: no points");
    if (colors.rows() != m) throw ShapeMismatch("init_from_points: points and colors differ in length");
    if (deform_flags.size() != 0 && deform_flags.size() != m)
        throw ShapeMismatch("init_from_points: deform flags differ in length");
    if (colors.minCoeff() < S(0) || colors.maxCoeff() > S(1))
        throw DegenerateInput("init_from_points: colors must lie in [0, 1]");

    GaussianCloud<S> cloud;
    cloud.scene_scale = scene_scale;
    cloud.means = points;

    const VecX<S> dist = mean_knn_distance(points, options.knn_k);
    const S upper = std::max(S(options.min_scale), S(options.max_scale_factor) * scene_scale);
    cloud.log_scales.resize(m, 3);
    for (Eigen::Index i = 0; i < m; ++i) {
        const S s = std::clamp(dist[i], S(options.min_scale), upper);
        cloud.log_scales.row(i).setConstant(std::log(s));
    }

    cloud.quats.resize(m, 4);
    cloud.quats.setZero();
    cloud.quats.col(0).setOnes();
    cloud.opacity_logits = VecX<S>::Constant(m, logit(S(options.initial_opacity)));
    cloud.sh_dc = ((colors.array() - S(kShOffset)) / S(kShC0)).matrix();
    cloud.sh_rest = Rows<S, 3 * kShRest>::Zero(m, 3 * kShRest);
    cloud.deform_table = deform_flags.size() == 0 ? Flags(Flags::Ones(m)) : deform_flags;
    return cloud;
}

#define TSPLAT_INSTANTIATE(S)                                                                               \
    template struct GaussianCloud<S>;                                                                       \
    template Snapshot<S> snapshot(const GaussianCloud<S>&);                                                 \
    template GaussianCloud<S> init_from_points(const Rows<S, 3>&, const Rows<S, 3>&, S, const InitOptions&, \
                                               const Flags&);                                               \
    template VecX<S> mean_knn_distance(const Rows<S, 3>&, int);                                             \
    template S bounding_sphere_radius(const Rows<S, 3>&);

TSPLAT_INSTANTIATE(float)
TSPLAT_INSTANTIATE(double)

} // namespace tsplat
