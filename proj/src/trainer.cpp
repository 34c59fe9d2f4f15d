// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/trainer.hpp"

#include "tsplat/errors.hpp"
#include "tsplat/numerics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace tsplat {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Adam

template <typename S>
AdamGroup<S> AdamGroup<S>::create(std::string name, double lr, Eigen::Index size, Eigen::Index row_width) {
    AdamGroup g;
    g.name = std::move(name);
    g.lr = lr;
    g.row_width = row_width;
    g.m = VecX<S>::Zero(size);
    g.v = VecX<S>::Zero(size);
    return g;
}

template <typename S>
void AdamGroup<S>::select_rows(const std::vector<Eigen::Index>& rows) {
    if (row_width <= 0) throw ContractViolation("select_rows on a group without rows: " + name);
    VecX<S> nm(static_cast<Eigen::Index>(rows.size()) * row_width), nv(nm.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const Eigen::Index r = rows[k];
        if (r < 0 || r >= this->rows()) throw ContractViolation("select_rows: row out of range in " + name);
        nm.segment(static_cast<Eigen::Index>(k) * row_width, row_width) = m.segment(r * row_width, row_width);
        nv.segment(static_cast<Eigen::Index>(k) * row_width, row_width) = v.segment(r * row_width, row_width);
    }
    m = std::move(nm);
    v = std::move(nv);
}

template <typename S>
void AdamGroup<S>::append_zero_rows(Eigen::Index count) {
    if (row_width <= 0) throw ContractViolation("append_zero_rows on a group without rows: " + name);
    const Eigen::Index old = m.size();
    m.conservativeResize(old + count * row_width);
    v.conservativeResize(old + count * row_width);
    m.tail(count * row_width).setZero();
    v.tail(count * row_width).setZero();
}

template <typename S>
bool adam_step(S* params, const S* grads, Eigen::Index n, AdamGroup<S>& g, const AdamConfig& c) {
    if (g.m.size() != n || g.v.size() != n) throw ShapeMismatch("adam_step: moments not congruent for " + g.name);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(grads[i]))) {
            ++g.consecutive_skips;
            ++g.skipped;
            return false;
        }
    }
    g.consecutive_skips = 0;
    ++g.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(g.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(g.step));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double gi = grads[i];
        const double m = c.beta1 * static_cast<double>(g.m[i]) + (1.0 - c.beta1) * gi;
        const double v = c.beta2 * static_cast<double>(g.v[i]) + (1.0 - c.beta2) * gi * gi;
        g.m[i] = static_cast<S>(m);
        g.v[i] = static_cast<S>(v);
        const double mhat = m / bc1, vhat = v / bc2;
        params[i] = static_cast<S>(static_cast<double>(params[i]) - g.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
    return true;
}

// ---------------------------------------------------------------------------
// Configuration

double TrainConfig::opacity_threshold(int iter) const {
    if (iter <= coarse_iters || fine_iters <= 0) return opacity_threshold_start;
    const double frac = std::clamp(static_cast<double>(iter - coarse_iters) / fine_iters, 0.0, 1.0);
    return opacity_threshold_start + (opacity_threshold_end - opacity_threshold_start) * frac;
}

DepthLossKind TrainConfig::depth_kind(DepthSource source) const {
    if (depth_loss == "disparity") return DepthLossKind::Disparity;
    if (depth_loss == "pearson") return DepthLossKind::Pearson;
    return source == DepthSource::Monocular ? DepthLossKind::Pearson : DepthLossKind::Disparity;
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(coarse_iters > 0 && fine_iters > 0, "iteration counts must be positive");
    require(densify_from > 0 && densify_until >= densify_from, "densify window must satisfy 0 < from <= until");
    require(densify_interval > 0 && opacity_reset_interval > 0, "densify and reset intervals must be positive");
    require(opacity_threshold_start > 0 && opacity_threshold_end > 0, "opacity thresholds must be positive");
    require(opacity_threshold_start >= opacity_threshold_end, "opacity threshold must decay (start >= end)");
    require(grad_threshold > 0 && percent_dense > 0 && split_scale_factor > 1, "densify thresholds must be positive");
    require(opacity_reset_value > 0 && opacity_reset_value < 1, "opacity reset value must lie in (0, 1)");
    require(weights.depth >= 0 && weights.ssim >= 0 && weights.tv >= 0, "loss weights must be non-negative");
    require(weights.deform.time_smooth >= 0 && weights.deform.l1_time >= 0 && weights.deform.tv_spatial >= 0,
            "regularizer weights must be non-negative");
    require(depth_loss == "auto" || depth_loss == "disparity" || depth_loss == "pearson",
            "depth_loss must be auto, disparity or pearson");
    for (double lr : {lr.means, lr.log_scales, lr.opacity, lr.quats, lr.sh_dc, lr.sh_rest, lr.mlp, lr.grid})
        require(lr >= 0 && std::isfinite(lr), "learning rates must be finite and non-negative");
    require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0,
            "Adam requires 0 <= beta < 1 and eps > 0");
    require(adam.max_consecutive_skips > 0, "max_consecutive_skips must be positive");
    require(resolution_scale >= 1, "resolution scale must be a positive integer");
    require(holdout_every >= 0, "holdout_every must be non-negative");
    require(accumulate.stride >= 1 && accumulate.target_count >= 0, "invalid accumulation options");
    try {
        deformation.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("deformation: ") + e.what());
    }
}

json to_json(const TrainConfig& c) {
    return json{
        {"coarse_iters", c.coarse_iters},
        {"fine_iters", c.fine_iters},
        {"weights",
         {{"depth", c.weights.depth},
          {"ssim", c.weights.ssim},
          {"tv", c.weights.tv},
          {"time_smooth", c.weights.deform.time_smooth},
          {"l1_time", c.weights.deform.l1_time},
          {"tv_spatial", c.weights.deform.tv_spatial}}},
        {"depth_loss", c.depth_loss},
        {"densify_from", c.densify_from},
        {"densify_until", c.densify_until},
        {"densify_interval", c.densify_interval},
        {"opacity_reset_interval", c.opacity_reset_interval},
        {"opacity_threshold_start", c.opacity_threshold_start},
        {"opacity_threshold_end", c.opacity_threshold_end},
        {"grad_threshold", c.grad_threshold},
        {"percent_dense", c.percent_dense},
        {"split_scale_factor", c.split_scale_factor},
        {"opacity_reset_value", c.opacity_reset_value},
        {"clone_offset", c.clone_offset},
        {"lr",
         {{"means", c.lr.means},
          {"log_scales", c.lr.log_scales},
          {"opacity", c.lr.opacity},
          {"quats", c.lr.quats},
          {"sh_dc", c.lr.sh_dc},
          {"sh_rest", c.lr.sh_rest},
          {"mlp", c.lr.mlp},
          {"grid", c.lr.grid}}},
        {"adam",
         {{"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"max_consecutive_skips", c.adam.max_consecutive_skips}}},
        {"mode", to_string(c.mode)},
        {"seed", c.seed},
        {"resolution_scale", c.resolution_scale},
        {"deformation",
         {{"feature_dim", c.deformation.feature_dim},
          {"base_spatial", c.deformation.base_spatial},
          {"base_temporal", c.deformation.base_temporal},
          {"multipliers", c.deformation.multipliers},
          {"init_center", c.deformation.init_center},
          {"init_halfwidth", c.deformation.init_halfwidth},
          {"hidden_layers", c.deformation.hidden_layers},
          {"hidden_width", c.deformation.hidden_width},
          {"concat_position", c.deformation.concat_position},
          {"l1_time_magnitude", c.deformation.l1_time_magnitude},
          {"bounds_margin", c.deformation.bounds_margin}}},
        {"deform_tool_gaussians", c.deform_tool_gaussians},
        {"init",
         {{"knn_k", c.init.knn_k},
          {"initial_opacity", c.init.initial_opacity},
          {"min_scale", c.init.min_scale},
          {"max_scale_factor", c.init.max_scale_factor}}},
        {"accumulate",
         {{"target_count", c.accumulate.target_count},
          {"stride", c.accumulate.stride},
          {"tolerance", c.accumulate.tolerance}}},
        {"background", {c.background.x(), c.background.y(), c.background.z()}},
        {"holdout_every", c.holdout_every},
    };
}

namespace {

/// Reads known keys of one JSON object into fields; anything left over is an error.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    template <typename T>
    Reader& get(const char* key, T& out) {
        seen_.push_back(key);
        if (!j_.contains(key)) return *this;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + " has the wrong type");
        }
        return *this;
    }

    template <typename F>
    Reader& object(const char* key, F&& fn) {
        seen_.push_back(key);
        if (j_.contains(key)) {
            Reader sub(j_.at(key), where_ + "." + key);
            fn(sub);
            sub.finish();
        }
        return *this;
    }

    Reader& custom(const char* key) {
        seen_.push_back(key);
        return *this;
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (std::find(seen_.begin(), seen_.end(), item.key()) == seen_.end())
                throw ConfigError("unknown configuration key " + where_ + "." + item.key());
    }

private:
    const json& j_;
    std::string where_;
    std::vector<std::string> seen_;
};

} // namespace

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
    TrainConfig c = base;
    Reader r(j, "config");
    r.get("coarse_iters", c.coarse_iters)
        .get("fine_iters", c.fine_iters)
        .object("weights",
                [&](Reader& w) {
                    w.get("depth", c.weights.depth)
                        .get("ssim", c.weights.ssim)
                        .get("tv", c.weights.tv)
                        .get("time_smooth", c.weights.deform.time_smooth)
                        .get("l1_time", c.weights.deform.l1_time)
                        .get("tv_spatial", c.weights.deform.tv_spatial);
                })
        .get("depth_loss", c.depth_loss)
        .get("densify_from", c.densify_from)
        .get("densify_until", c.densify_until)
        .get("densify_interval", c.densify_interval)
        .get("opacity_reset_interval", c.opacity_reset_interval)
        .get("opacity_threshold_start", c.opacity_threshold_start)
        .get("opacity_threshold_end", c.opacity_threshold_end)
        .get("grad_threshold", c.grad_threshold)
        .get("percent_dense", c.percent_dense)
        .get("split_scale_factor", c.split_scale_factor)
        .get("opacity_reset_value", c.opacity_reset_value)
        .get("clone_offset", c.clone_offset)
        .object("lr",
                [&](Reader& l) {
                    l.get("means", c.lr.means)
                        .get("log_scales", c.lr.log_scales)
                        .get("opacity", c.lr.opacity)
                        .get("quats", c.lr.quats)
                        .get("sh_dc", c.lr.sh_dc)
                        .get("sh_rest", c.lr.sh_rest)
                        .get("mlp", c.lr.mlp)
                        .get("grid", c.lr.grid);
                })
        .object("adam",
                [&](Reader& a) {
                    a.get("beta1", c.adam.beta1)
                        .get("beta2", c.adam.beta2)
                        .get("eps", c.adam.eps)
                        .get("max_consecutive_skips", c.adam.max_consecutive_skips);
                })
        .custom("mode")
        .get("seed", c.seed)
        .get("resolution_scale", c.resolution_scale)
        .object("deformation",
                [&](Reader& d) {
                    d.get("feature_dim", c.deformation.feature_dim)
                        .get("base_spatial", c.deformation.base_spatial)
                        .get("base_temporal", c.deformation.base_temporal)
                        .get("multipliers", c.deformation.multipliers)
                        .get("init_center", c.deformation.init_center)
                        .get("init_halfwidth", c.deformation.init_halfwidth)
                        .get("hidden_layers", c.deformation.hidden_layers)
                        .get("hidden_width", c.deformation.hidden_width)
                        .get("concat_position", c.deformation.concat_position)
                        .get("l1_time_magnitude", c.deformation.l1_time_magnitude)
                        .get("bounds_margin", c.deformation.bounds_margin);
                })
        .get("deform_tool_gaussians", c.deform_tool_gaussians)
        .object("init",
                [&](Reader& i) {
                    i.get("knn_k", c.init.knn_k)
                        .get("initial_opacity", c.init.initial_opacity)
                        .get("min_scale", c.init.min_scale)
                        .get("max_scale_factor", c.init.max_scale_factor);
                })
        .object("accumulate",
                [&](Reader& a) {
                    a.get("target_count", c.accumulate.target_count)
                        .get("stride", c.accumulate.stride)
                        .get("tolerance", c.accumulate.tolerance);
                })
        .custom("background")
        .get("holdout_every", c.holdout_every)
        .finish();
    if (j.contains("mode")) {
        try {
            c.mode = mode_from_string(j.at("mode").get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config.mode: ") + e.what());
        }
    }
    if (j.contains("background")) {
        const auto& b = j.at("background");
        if (!b.is_array() || b.size() != 3) throw ConfigError("config.background must hold 3 numbers");
        for (int k = 0; k < 3; ++k) c.background[k] = b[static_cast<std::size_t>(k)].get<double>();
    }
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) throw MissingFile("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return train_config_from_json(j, base);
}

// ---------------------------------------------------------------------------
// Optimizer state

template <typename S>
OptimState<S> OptimState<S>::create(const GaussianCloud<S>& cloud, const DeformationModel<S>* deformation,
                                    const TrainConfig& config) {
    const double scale = static_cast<double>(cloud.scene_scale);
    const Eigen::Index n = cloud.size();
    OptimState s;
    s.means = AdamGroup<S>::create("means", config.lr.means * scale, n * 3, 3);
    s.log_scales = AdamGroup<S>::create("log_scales", config.lr.log_scales, n * 3, 3);
    s.quats = AdamGroup<S>::create("quats", config.lr.quats, n * 4, 4);
    s.opacity_logits = AdamGroup<S>::create("opacity_logits", config.lr.opacity, n, 1);
    s.sh_dc = AdamGroup<S>::create("sh_dc", config.lr.sh_dc, n * 3, 3);
    s.sh_rest = AdamGroup<S>::create("sh_rest", config.lr.sh_rest, n * 3 * kShRest, 3 * kShRest);
    if (deformation) {
        const auto& f = deformation->field;
        for (int l = 0; l < f.levels(); ++l)
            for (int p = 0; p < kNumPlanes; ++p)
                s.planes.push_back(AdamGroup<S>::create(std::string("hexplane.") + plane_name(p) + "." + std::to_string(l),
                                                        config.lr.grid * scale, f.plane(p, l).size()));
        const auto& d = deformation->decoder;
        for (std::size_t k = 0; k < d.weights.size(); ++k) {
            s.weights.push_back(AdamGroup<S>::create("mlp." + std::to_string(k) + ".w", config.lr.mlp * scale, d.weights[k].size()));
            s.biases.push_back(AdamGroup<S>::create("mlp." + std::to_string(k) + ".b", config.lr.mlp * scale, d.biases[k].size()));
        }
    }
    return s;
}

template <typename S>
std::vector<AdamGroup<S>*> OptimState<S>::gaussian_groups() {
    return {&means, &log_scales, &quats, &opacity_logits, &sh_dc, &sh_rest};
}

template <typename S>
void OptimState<S>::check_congruent(const GaussianCloud<S>& cloud, const DeformationModel<S>* deformation) const {
    auto check = [](const AdamGroup<S>& g, Eigen::Index size) {
        if (g.m.size() != size || g.v.size() != size)
            throw ShapeMismatch("moments of " + g.name + " hold " + std::to_string(g.m.size()) + " values, parameter has " +
                                std::to_string(size));
    };
    check(means, cloud.means.size());
    check(log_scales, cloud.log_scales.size());
    check(quats, cloud.quats.size());
    check(opacity_logits, cloud.opacity_logits.size());
    check(sh_dc, cloud.sh_dc.size());
    check(sh_rest, cloud.sh_rest.size());
    if (!deformation) return;
    if (planes.size() != deformation->field.planes.size() || weights.size() != deformation->decoder.weights.size())
        throw ShapeMismatch("deformation moment count differs from the model");
    for (std::size_t k = 0; k < planes.size(); ++k) check(planes[k], deformation->field.planes[k].size());
    for (std::size_t k = 0; k < weights.size(); ++k) {
        check(weights[k], deformation->decoder.weights[k].size());
        check(biases[k], deformation->decoder.biases[k].size());
    }
}

template <typename S>
void OptimState<S>::select_rows(const std::vector<Eigen::Index>& rows) {
    for (auto* g : gaussian_groups()) g->select_rows(rows);
}

template <typename S>
void OptimState<S>::append_zero_rows(Eigen::Index count) {
    for (auto* g : gaussian_groups()) g->append_zero_rows(count);
}

DensifyStats DensifyStats::zeros(Eigen::Index n) { return DensifyStats{VecX<double>::Zero(n), VecX<double>::Zero(n)}; }

template <typename S>
void DensifyStats::accumulate(const ParamGrads<S>& grads) {
    if (grads.size() != grad_sum.size()) throw ShapeMismatch("densify statistics and gradients differ in size");
    for (Eigen::Index i = 0; i < grad_sum.size(); ++i) {
        if (!grads.visible[i]) continue;
        grad_sum[i] += static_cast<double>(grads.screen_grad_norm[i]);
        count[i] += 1.0;
    }
}

void DensifyStats::select_rows(const std::vector<Eigen::Index>& rows) {
    VecX<double> g(static_cast<Eigen::Index>(rows.size())), c(g.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        g[static_cast<Eigen::Index>(k)] = grad_sum[rows[k]];
        c[static_cast<Eigen::Index>(k)] = count[rows[k]];
    }
    grad_sum = std::move(g);
    count = std::move(c);
}

// ---------------------------------------------------------------------------
// Densification

namespace {

/// A sample from the Gaussian's own distribution: mean + R diag(s) n.
template <typename S>
Vec3<S> sample_within(const GaussianCloud<S>& c, Eigen::Index i, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Vec4<double> q = c.quats.row(i).transpose().template cast<double>();
    const Mat3<double> r = quat_to_rotation(q);
    Vec3<double> n;
    for (int k = 0; k < 3; ++k) n[k] = normal(rng);
    const Vec3<double> s = c.log_scales.row(i).transpose().template cast<double>().array().exp().matrix();
    return (c.means.row(i).transpose().template cast<double>() + r * s.cwiseProduct(n)).template cast<S>();
}

} // namespace

template <typename S>
DensifyReport densify_and_prune(GaussianCloud<S>& cloud, DensifyStats& stats, OptimState<S>& optim, int iter,
                                const TrainConfig& config, std::mt19937_64& rng) {
    DensifyReport rep;
    rep.iter = iter;
    rep.before = rep.after = cloud.size();
    rep.opacity_threshold = config.opacity_threshold(iter);
    if (!config.is_densify_iter(iter)) return rep;

    const Eigen::Index n = cloud.size();
    if (stats.grad_sum.size() != n) throw ShapeMismatch("densify statistics do not match the cloud");
    optim.check_congruent(cloud, nullptr);
    const double clone_limit = config.percent_dense * static_cast<double>(cloud.scene_scale);

    std::vector<Eigen::Index> keep, clone_ids, split_ids;
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool hot = stats.mean(i) > config.grad_threshold;
        const double max_scale = std::exp(static_cast<double>(cloud.log_scales.row(i).maxCoeff()));
        if (hot && max_scale > clone_limit) {
            split_ids.push_back(i);
            continue;
        }
        keep.push_back(i);
        if (hot) clone_ids.push_back(i);
    }

    // Clones: parent and copy share the parent's opacity so the pair composites like the parent.
    GaussianCloud<S> clones = cloud.select(clone_ids);
    for (std::size_t k = 0; k < clone_ids.size(); ++k) {
        const Eigen::Index i = clone_ids[k];
        const double alpha = static_cast<double>(sigmoid(cloud.opacity_logits[i]));
        const S shared = static_cast<S>(logit(std::clamp(1.0 - std::sqrt(1.0 - alpha), 1e-7, 1.0 - 1e-7)));
        cloud.opacity_logits[i] = shared;
        const auto r = static_cast<Eigen::Index>(k);
        clones.opacity_logits[r] = shared;
        if (config.clone_offset) clones.means.row(r) = sample_within(cloud, i, rng).transpose();
    }

    std::vector<Eigen::Index> doubled;
    for (Eigen::Index i : split_ids) {
        doubled.push_back(i);
        doubled.push_back(i);
    }
    GaussianCloud<S> children = cloud.select(doubled);
    const S shrink = static_cast<S>(std::log(config.split_scale_factor));
    for (std::size_t k = 0; k < doubled.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        children.means.row(r) = sample_within(cloud, doubled[k], rng).transpose();
        children.log_scales.row(r).array() -= shrink;
    }

    GaussianCloud<S> next = cloud.select(keep);
    next.append(clones);
    next.append(children);
    optim.select_rows(keep);
    optim.append_zero_rows(clones.size() + children.size());
    rep.cloned = static_cast<int>(clone_ids.size());
    rep.split = static_cast<int>(split_ids.size());

    std::vector<Eigen::Index> survivors;
    const double threshold = rep.opacity_threshold;
    for (Eigen::Index i = 0; i < next.size(); ++i)
        if (!(static_cast<double>(sigmoid(next.opacity_logits[i])) < threshold)) survivors.push_back(i);
    if (survivors.empty())
        throw PopulationError("pruning at iteration " + std::to_string(iter) + " would remove all " +
                              std::to_string(next.size()) + " Gaussians");
    rep.pruned = static_cast<int>(next.size() - static_cast<Eigen::Index>(survivors.size()));
    if (rep.pruned > 0) {
        next = next.select(survivors);
        optim.select_rows(survivors);
    }

    if (iter % config.opacity_reset_interval == 0) {
        next.opacity_logits.setConstant(static_cast<S>(logit(config.opacity_reset_value)));
        optim.opacity_logits.m.setZero();
        optim.opacity_logits.v.setZero();
        rep.opacity_reset = true;
    }

    cloud = std::move(next);
    stats = DensifyStats::zeros(cloud.size());
    rep.after = cloud.size();
    optim.check_congruent(cloud, nullptr);
    return rep;
}

// ---------------------------------------------------------------------------
// Training

const char* to_string(Stage stage) { return stage == Stage::Coarse ? "coarse" : "fine"; }

json IterationRecord::to_json() const {
    json j{{"iter", iter},
           {"stage", tsplat::to_string(stage)},
           {"frame", frame},
           {"t", t},
           {"l1", loss.l1},
           {"depth", loss.depth},
           {"ssim", loss.ssim},
           {"tv", loss.tv},
           {"deform_reg", loss.deform_reg},
           {"total", loss.total},
           {"num_gaussians", num_gaussians},
           {"opacity_threshold", opacity_threshold},
           {"ms", ms}};
    if (skipped_groups > 0) j["skipped_groups"] = skipped_groups;
    if (densify) {
        j["densify"] = {{"cloned", densify->cloned},
                        {"split", densify->split},
                        {"pruned", densify->pruned},
                        {"opacity_reset", densify->opacity_reset},
                        {"before", densify->before},
                        {"after", densify->after}};
    }
    return j;
}

std::vector<int> training_frames(std::size_t count, const TrainConfig& config) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < count; ++i)
        if (config.holdout_every <= 0 || i % static_cast<std::size_t>(config.holdout_every) != 0 || count == 1)
            ids.push_back(static_cast<int>(i));
    return ids;
}

std::vector<int> evaluation_frames(std::size_t count, const TrainConfig& config) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < count; ++i)
        if (config.holdout_every <= 0 || i % static_cast<std::size_t>(config.holdout_every) == 0)
            ids.push_back(static_cast<int>(i));
    return ids;
}

GaussianCloud<float> initialize_cloud(const Dataset& dataset, const TrainConfig& config) {
    if (dataset.frames.empty()) throw EmptyInput("dataset has no frames");
    const AccumulatedCloud acc = accumulate_point_cloud(dataset.frames, config.mode, config.accumulate);
    Flags flags;
    if (!config.deform_tool_gaussians) flags = (acc.points.tool.array() == 0).cast<std::uint8_t>();
    const double scale = acc.scene_scale > 0 ? acc.scene_scale : 1.0;
    return init_from_points<float>(acc.points.points.cast<float>(), acc.points.colors.cast<float>(),
                                   static_cast<float>(scale), config.init, flags);
}

namespace {

template <typename Derived>
void step_group(Eigen::PlainObjectBase<Derived>& params, const Eigen::PlainObjectBase<Derived>& grads,
                AdamGroup<float>& group, const AdamConfig& adam, int& skipped) {
    if (!adam_step(params, grads, group, adam)) {
        ++skipped;
        if (group.consecutive_skips >= adam.max_consecutive_skips)
            throw Divergence("gradients of group " + group.name + " were non-finite for " +
                             std::to_string(group.consecutive_skips) + " consecutive steps");
    }
}

Vec3<float> background_of(const TrainConfig& c) { return c.background.cast<float>(); }

} // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (dataset.frames.empty()) throw EmptyInput("dataset has no frames");
    const auto wall_start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(config.seed);

    GaussianCloud<float> cloud = options.initial_cloud ? *options.initial_cloud : initialize_cloud(dataset, config);
    cloud.validate();
    DeformationModel<float> model;
    if (options.initial_deformation) {
        model = *options.initial_deformation;
    } else {
        Vec3<float> lo, hi;
        domain_bounds(cloud.means, config.deformation.bounds_margin, lo, hi);
        model = DeformationModel<float>::create(config.deformation, lo, hi, config.seed ^ 0x9e3779b97f4a7c15ull);
    }
    model.validate();

    TrainResult result;
    result.initial_deformation = model;
    OptimState<float> optim = OptimState<float>::create(cloud, &model, config);
    DensifyStats stats = DensifyStats::zeros(cloud.size());
    DeformationGrads<float> dgrads = DeformationGrads<float>::zeros_like(model);

    std::vector<Mask> tool_masks;
    for (const auto& f : dataset.frames)
        if (f.tool_mask.pixels() > 0) tool_masks.push_back(f.tool_mask);
    const Mask invisible = tool_masks.empty() ? Mask() : compute_invisible_mask(tool_masks);
    const DepthLossKind depth_kind = config.depth_kind(dataset.depth_source());
    const std::vector<int> fine_frames = training_frames(dataset.frames.size(), config);
    std::uniform_int_distribution<std::size_t> pick(0, fine_frames.size() - 1);

    RenderOptions<float> ropts;
    ropts.background = background_of(config);

    std::ofstream log;
    if (!options.log_path.empty()) {
        if (options.log_path.has_parent_path()) std::filesystem::create_directories(options.log_path.parent_path());
        log.open(options.log_path);
        if (!log) throw IoError("cannot write training log " + options.log_path.string());
    }

    const int total = config.total_iters();
    for (int iter = 1; iter <= total; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        IterationRecord rec;
        rec.iter = iter;
        rec.stage = iter <= config.coarse_iters ? Stage::Coarse : Stage::Fine;
        rec.frame = rec.stage == Stage::Coarse ? 0 : fine_frames[pick(rng)];
        const FrameRecord& frame = dataset.frames[static_cast<std::size_t>(rec.frame)];
        rec.t = frame.t;

        std::optional<DeformedSnapshot<float>> deformed;
        DeformRegularizers regs;
        if (rec.stage == Stage::Fine) {
            deformed = deform(cloud, model, frame.t);
            dgrads.set_zero();
            regs = deform_regularizers(model, config.weights.deform, &dgrads);
        }
        const Snapshot<float> snap = deformed ? deformed->snap : snapshot(cloud);
        const RenderOutput<float> out = render(snap, frame.camera, ropts);
        const Target<float> target{frame.rgb, frame.depth, frame.tool_mask};
        const CompositeLoss<float> loss =
            composite_loss(out, target, invisible, config.mode, depth_kind, config.weights, regs);
        rec.loss = loss.breakdown;

        // Independent recomputation of the objective from its parts.
        const auto& w = config.weights;
        const double expected = rec.loss.l1 + w.depth * rec.loss.depth + w.ssim * rec.loss.ssim + w.tv * rec.loss.tv +
                                w.deform.time_smooth * regs.time_smooth + w.deform.l1_time * regs.l1_time +
                                w.deform.tv_spatial * regs.tv_spatial;
        if (!std::isfinite(rec.loss.total))
            throw Divergence("non-finite loss at iteration " + std::to_string(iter) + " (frame " +
                             std::to_string(rec.frame) + ", l1 " + std::to_string(rec.loss.l1) + ", depth " +
                             std::to_string(rec.loss.depth) + ", ssim " + std::to_string(rec.loss.ssim) + ")");
        if (!(std::abs(rec.loss.total - expected) <= 1e-6))
            throw ContractViolation("loss breakdown total " + std::to_string(rec.loss.total) +
                                    " differs from the weighted sum " + std::to_string(expected) + " at iteration " +
                                    std::to_string(iter));

        ParamGrads<float> grads = render_backward(out, loss.grad_rgb, loss.grad_depth, Image<float>());
        if (deformed) deform_backward(*deformed, model, grads, dgrads);
        stats.accumulate(grads);

        int skipped = 0;
        step_group(cloud.means, grads.means, optim.means, config.adam, skipped);
        step_group(cloud.log_scales, grads.log_scales, optim.log_scales, config.adam, skipped);
        step_group(cloud.quats, grads.quats, optim.quats, config.adam, skipped);
        step_group(cloud.opacity_logits, grads.opacity_logits, optim.opacity_logits, config.adam, skipped);
        step_group(cloud.sh_dc, grads.sh_dc, optim.sh_dc, config.adam, skipped);
        step_group(cloud.sh_rest, grads.sh_rest, optim.sh_rest, config.adam, skipped);
        if (rec.stage == Stage::Fine) {
            for (std::size_t k = 0; k < model.field.planes.size(); ++k)
                step_group(model.field.planes[k], dgrads.planes[k], optim.planes[k], config.adam, skipped);
            for (std::size_t k = 0; k < model.decoder.weights.size(); ++k) {
                step_group(model.decoder.weights[k], dgrads.weights[k], optim.weights[k], config.adam, skipped);
                step_group(model.decoder.biases[k], dgrads.biases[k], optim.biases[k], config.adam, skipped);
            }
        }
        rec.skipped_groups = skipped;

        rec.opacity_threshold = config.opacity_threshold(iter);
        if (config.is_densify_iter(iter)) rec.densify = densify_and_prune(cloud, stats, optim, iter, config, rng);
        rec.num_gaussians = cloud.size();
        rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        if (log) log << rec.to_json().dump() << "\n";
        if (options.on_iteration) options.on_iteration(rec);
        if (options.on_stage_end && (iter == config.coarse_iters || iter == total))
            options.on_stage_end(rec.stage, cloud, model);
        result.log.push_back(std::move(rec));
    }

    result.checkpoint.cloud = std::move(cloud);
    result.checkpoint.deformation = std::move(model);
    result.checkpoint.mode = config.mode;
    result.checkpoint.train_config = to_json(config);
    if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, result.checkpoint);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return result;
}

// ---------------------------------------------------------------------------
// Rendering and evaluation

Vec3<float> checkpoint_background(const Checkpoint& ckpt) {
    Vec3<float> background = Vec3<float>::Zero();
    if (ckpt.train_config.is_object() && ckpt.train_config.contains("background")) {
        const auto& b = ckpt.train_config.at("background");
        if (!b.is_array() || b.size() != 3) throw MalformedCheckpoint("train_config.background must hold 3 numbers");
        for (int k = 0; k < 3; ++k) background[k] = b[static_cast<std::size_t>(k)].get<float>();
    }
    return background;
}

RenderOutput<float> render_frame(const Checkpoint& ckpt, const Camera<float>& camera, float t,
                                 const Vec3<float>& background) {
    RenderOptions<float> opts;
    opts.background = background;
    const DeformedSnapshot<float> deformed = deform(ckpt.cloud, ckpt.deformation, t);
    return render(deformed.snap, camera, opts);
}

namespace {

json number_or_string(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

} // namespace

json EvalReport::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows)
        rows_json.push_back({{"frame", r.frame}, {"t", r.t}, {"psnr", number_or_string(r.psnr)},
                             {"ssim", number_or_string(r.ssim)}});
    return json{{"mode", tsplat::to_string(mode)},
                {"frames", rows_json},
                {"mean_psnr", number_or_string(mean_psnr)},
                {"mean_ssim", number_or_string(mean_ssim)}};
}

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& dataset, Mode mode, const std::vector<int>& frames,
                    const std::filesystem::path& render_dir) {
    std::vector<int> ids = frames;
    if (ids.empty())
        for (std::size_t i = 0; i < dataset.frames.size(); ++i) ids.push_back(static_cast<int>(i));
    if (ids.empty()) throw EmptyInput("no frames to evaluate");
    const Vec3<float> background = checkpoint_background(ckpt);

    EvalReport rep;
    rep.mode = mode;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= dataset.frames.size())
            throw ConfigError("evaluation frame " + std::to_string(id) + " is out of range");
        const FrameRecord& f = dataset.frames[static_cast<std::size_t>(id)];
        const RenderOutput<float> out = render_frame(ckpt, f.camera, f.t, background);
        if (!render_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%03d.png", id);
            write_png_rgb(render_dir / name, out.rgb);
        }
        const Mask valid = supervision_mask(f.tool_mask, f.rgb.width, f.rgb.height, mode);
        EvalRow row;
        row.frame = id;
        row.t = f.t;
        row.psnr = psnr(out.rgb, f.rgb, valid);
        try {
            row.ssim = ssim(out.rgb, f.rgb, valid);
        } catch (const NoValidWindow&) {
            row.ssim = std::numeric_limits<double>::quiet_NaN();
        }
        rep.rows.push_back(row);
    }
    double sp = 0, ss = 0;
    for (const auto& r : rep.rows) {
        sp += r.psnr;
        ss += r.ssim;
    }
    rep.mean_psnr = sp / static_cast<double>(rep.rows.size());
    rep.mean_ssim = ss / static_cast<double>(rep.rows.size());
    return rep;
}

#define TSPLAT_INSTANTIATE(S)                                                                                 \
    template struct AdamGroup<S>;                                                                             \
    template bool adam_step(S*, const S*, Eigen::Index, AdamGroup<S>&, const AdamConfig&);                    \
    template struct OptimState<S>;                                                                            \
    template void DensifyStats::accumulate(const ParamGrads<S>&);                                             \
    template DensifyReport densify_and_prune(GaussianCloud<S>&, DensifyStats&, OptimState<S>&, int,           \
                                             const TrainConfig&, std::mt19937_64&);

TSPLAT_INSTANTIATE(float)
TSPLAT_INSTANTIATE(double)

} // namespace tsplat
