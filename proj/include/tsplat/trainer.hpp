// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/checkpoint.hpp"
#include "tsplat/dataio.hpp"
#include "tsplat/deformation.hpp"
#include "tsplat/model.hpp"
#include "tsplat/rasterizer.hpp"
#include "tsplat/supervision.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace tsplat {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    /// Consecutive skipped steps of one group before training aborts.
    int max_consecutive_skips = 10;
};

/// Moments for one parameter tensor, stored flat in the tensor's row-major
/// order. `row_width` is the number of scalars per Gaussian for per-Gaussian
/// groups (0 for deformation tensors), so densification can edit rows.
template <typename S>
struct AdamGroup {
    std::string name;
    double lr = 0.0;
    Eigen::Index row_width = 0;
    VecX<S> m;
    VecX<S> v;
    std::int64_t step = 0;
    int consecutive_skips = 0;
    std::int64_t skipped = 0;

    static AdamGroup create(std::string name, double lr, Eigen::Index size, Eigen::Index row_width = 0);
    [[nodiscard]] Eigen::Index rows() const { return row_width > 0 ? m.size() / row_width : 0; }
    /// Keeps the listed rows in order (duplicates allowed).
    void select_rows(const std::vector<Eigen::Index>& rows);
    /// Appends zero moments for `count` new rows.
    void append_zero_rows(Eigen::Index count);
};

/// Bias-corrected Adam on n contiguous scalars. Returns false and leaves
/// parameters, moments and the step counter untouched when any gradient is
/// non-finite (the caller decides when repeated skips become fatal).
template <typename S>
bool adam_step(S* params, const S* grads, Eigen::Index n, AdamGroup<S>& group, const AdamConfig& config = {});

template <typename Derived>
bool adam_step(Eigen::PlainObjectBase<Derived>& params, const Eigen::PlainObjectBase<Derived>& grads,
               AdamGroup<typename Derived::Scalar>& group, const AdamConfig& config = {}) {
    if (params.size() != grads.size() || params.size() != group.m.size())
        throw ShapeMismatch("adam_step: parameter, gradient and moment sizes differ for group " + group.name);
    return adam_step(params.data(), grads.data(), params.size(), group, config);
}

// ---------------------------------------------------------------------------
// Configuration

struct LearningRates {
    double means = 1.6e-4;      // times scene_scale
    double log_scales = 5e-3;
    double opacity = 5e-2;
    double quats = 1e-3;
    double sh_dc = 2.5e-3;
    double sh_rest = 1.25e-4;
    double mlp = 1e-5;          // times scene_scale
    double grid = 1e-5;         // times scene_scale
};

struct TrainConfig {
    int coarse_iters = 200;
    int fine_iters = 1500;

    LossWeights weights;
    /// "auto" picks disparity for binocular depth and Pearson for monocular.
    std::string depth_loss = "auto";

    int densify_from = 500;
    int densify_until = 15000;
    int densify_interval = 100;
    int opacity_reset_interval = 3000;
    double opacity_threshold_start = 0.05;
    double opacity_threshold_end = 0.005;
    double grad_threshold = 2e-4;
    double percent_dense = 0.01;
    double split_scale_factor = 1.6;
    double opacity_reset_value = 0.01;
    /// Clones are displaced by a sample from the parent Gaussian; off makes
    /// clone-only steps render-invariant.
    bool clone_offset = true;

    LearningRates lr;
    AdamConfig adam;

    Mode mode = Mode::TissueOnly;
    std::uint64_t seed = 0;
    int resolution_scale = 1;

    DeformationConfig deformation;
    /// When false, Gaussians seeded from tool pixels keep their canonical pose.
    bool deform_tool_gaussians = true;
    InitOptions init;
    AccumulateOptions accumulate;
    Vec3<double> background = Vec3<double>::Zero();
    /// Every n-th frame (by index, starting at 0) is held out from the fine stage; 0 trains on all.
    int holdout_every = 0;

    [[nodiscard]] int total_iters() const { return coarse_iters + fine_iters; }
    /// Last iteration at which densification may run.
    [[nodiscard]] int densify_end() const { return std::min(densify_until, total_iters()); }
    [[nodiscard]] bool is_densify_iter(int iter) const {
        return iter >= densify_from && iter <= densify_end() && iter % densify_interval == 0;
    }
    /// 0.05 through the coarse stage, then linear in fine-stage progress to 0.005.
    [[nodiscard]] double opacity_threshold(int iter) const;
    [[nodiscard]] DepthLossKind depth_kind(DepthSource source) const;
    /// Throws ConfigError.
    void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const TrainConfig& config);
/// Starts from `base` and overrides every key present in j. Unknown keys are an error.
[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});
[[nodiscard]] TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& base = {});

// ---------------------------------------------------------------------------
// Optimizer state and densification

/// Adam groups for the Gaussian parameters and, when present, the deformation tensors.
template <typename S>
struct OptimState {
    AdamGroup<S> means, log_scales, quats, opacity_logits, sh_dc, sh_rest;
    std::vector<AdamGroup<S>> planes;
    std::vector<AdamGroup<S>> weights;
    std::vector<AdamGroup<S>> biases;

    static OptimState create(const GaussianCloud<S>& cloud, const DeformationModel<S>* deformation,
                             const TrainConfig& config);
    /// Throws ShapeMismatch when any moment is not congruent with its parameter.
    void check_congruent(const GaussianCloud<S>& cloud, const DeformationModel<S>* deformation) const;
    void select_rows(const std::vector<Eigen::Index>& rows);
    void append_zero_rows(Eigen::Index count);
    [[nodiscard]] std::vector<AdamGroup<S>*> gaussian_groups();
};

/// Running mean of per-Gaussian screen-space gradient norms since the last refinement.
struct DensifyStats {
    VecX<double> grad_sum;
    VecX<double> count;

    static DensifyStats zeros(Eigen::Index n);
    template <typename S>
    void accumulate(const ParamGrads<S>& grads);
    [[nodiscard]] double mean(Eigen::Index i) const { return count[i] > 0 ? grad_sum[i] / count[i] : 0.0; }
    void select_rows(const std::vector<Eigen::Index>& rows);
};

struct DensifyReport {
    int iter = 0;
    int cloned = 0;
    int split = 0;
    int pruned = 0;
    bool opacity_reset = false;
    double opacity_threshold = 0.0;
    Eigen::Index before = 0;
    Eigen::Index after = 0;
};

/// One refinement step. A no-op (report with zero counts) outside the
/// schedule. Clones split the parent opacity so the pair composites like the
/// parent; splits replace the parent by two children sampled from it with
/// scales divided by split_scale_factor. Throws PopulationError when pruning
/// would remove every Gaussian.
template <typename S>
DensifyReport densify_and_prune(GaussianCloud<S>& cloud, DensifyStats& stats, OptimState<S>& optim, int iter,
                                const TrainConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Training

enum class Stage { Coarse, Fine };
[[nodiscard]] const char* to_string(Stage stage);

struct IterationRecord {
    int iter = 0;
    Stage stage = Stage::Coarse;
    int frame = 0;
    double t = 0.0;
    LossBreakdown loss;
    Eigen::Index num_gaussians = 0;
    double opacity_threshold = 0.0;
    double ms = 0.0;
    int skipped_groups = 0;
    std::optional<DensifyReport> densify;

    [[nodiscard]] nlohmann::json to_json() const;
};

struct TrainOptions {
    /// Overrides point-cloud initialization (the dataset still supplies frames).
    std::optional<GaussianCloud<float>> initial_cloud;
    /// Overrides the freshly created deformation model.
    std::optional<DeformationModel<float>> initial_deformation;
    /// Newline-delimited JSON, one record per iteration.
    std::filesystem::path log_path;
    std::filesystem::path checkpoint_path;
    std::function<void(const IterationRecord&)> on_iteration;
    /// Called after the last iteration of each stage.
    std::function<void(Stage, const GaussianCloud<float>&, const DeformationModel<float>&)> on_stage_end;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<IterationRecord> log;
    DeformationModel<float> initial_deformation;  // as created, before any update
    double wall_seconds = 0.0;
};

/// Frames used by the fine stage and by evaluation under config.holdout_every.
[[nodiscard]] std::vector<int> training_frames(std::size_t count, const TrainConfig& config);
[[nodiscard]] std::vector<int> evaluation_frames(std::size_t count, const TrainConfig& config);

/// Initial canonical cloud from the accumulated point cloud of all frames.
[[nodiscard]] GaussianCloud<float> initialize_cloud(const Dataset& dataset, const TrainConfig& config);

/// Coarse stage on frame 0 without deformation, then the fine stage on random
/// training frames with deformation. Throws EmptyInput, Divergence or
/// ContractViolation (loss identity broken).
[[nodiscard]] TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Rendering and evaluation

/// Background color recorded in the checkpoint's training configuration (black when absent).
[[nodiscard]] Vec3<float> checkpoint_background(const Checkpoint& ckpt);

/// Deforms the canonical cloud at time t and renders it; no gradient state is kept.
[[nodiscard]] RenderOutput<float> render_frame(const Checkpoint& ckpt, const Camera<float>& camera, float t,
                                               const Vec3<float>& background = Vec3<float>::Zero());

struct EvalRow {
    int frame = 0;
    double t = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;  // NaN when the image has no valid 11x11 window
};

struct EvalReport {
    Mode mode = Mode::TissueOnly;
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    /// Non-finite numbers are written as the strings "inf", "-inf" and "nan".
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Renders each listed frame (all when empty) at its timestamp and scores it,
/// masked by the tool mask in tissue-only mode. Optionally writes the renders
/// as frame_%03d.png into render_dir.
[[nodiscard]] EvalReport evaluate(const Checkpoint& ckpt, const Dataset& dataset, Mode mode,
                                  const std::vector<int>& frames = {},
                                  const std::filesystem::path& render_dir = {});

} // namespace tsplat
