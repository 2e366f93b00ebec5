#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "toyfashion/dataset.hpp"
#include "toyfashion/losses.hpp"
#include "toyfashion/pose.hpp"
#include "toyfashion/schedule.hpp"
#include "toyfashion/unet.hpp"

namespace toyfashion {

// One stage of the three-stage protocol:
//   1: base model, local branches silenced (zero masks), denoise loss
//   2: local branches on, ground-truth masks routed, denoise loss
//   3: backbone frozen, heads trained with the region loss only
struct StageConfig {
    int stage = 1;
    int64_t steps = 0;
    int64_t batch_size = 16;
    double lr = 2e-4;
    double weight_decay = 0.0;
    std::string mask_source = "none";  // none | ground_truth
    bool binarize_gt_masks = false;
    bool supervise_encoder_heads = false;
    bool joint_region_loss = false;   // optional stage-2 extra
    double null_prompt_dropout = 0.0;
    int64_t log_every = 25;

    std::vector<ParamGroup> trainable_groups() const;
    void validate() const;
    static StageConfig defaults_for(int stage);
    static StageConfig from_json(int stage, const nlohmann::json& j);
};

struct MetricPoint {
    int64_t step = 0;
    double denoise = 0.0, region = 0.0, total = 0.0, lr = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<MetricPoint> log;
    double first_window_avg = 0.0;  // mean total loss over the first 100 logged steps
    double last_window_avg = 0.0;
    uint64_t frozen_hash_before = 0, frozen_hash_after = 0;
    bool frozen_groups_unchanged = true;
    bool disabled_groups_grad_free = true;  // no gradient touched a non-trainable group
};

// Trains in place; the caller owns checkpoint IO. Throws Numeric on NaN loss.
TrainResult train_stage(DenoiserNet& net, const StageConfig& cfg, const NoiseSchedule& sched,
                        const StoredDataset& ds, const std::vector<int64_t>& train_idx, uint64_t seed,
                        const std::string& metric_log_path);

struct PoseTrainConfig {
    int64_t steps = 1500;
    int64_t batch_size = 16;
    double lr = 2e-4;
    int64_t log_every = 25;
};

TrainResult train_pose(PosePredictor& net, const PoseTrainConfig& cfg, const NoiseSchedule& sched,
                       const StoredDataset& ds, const std::vector<int64_t>& train_idx, uint64_t seed,
                       const std::string& metric_log_path);

struct SmokeOptions {
    int64_t budget_steps = 2000;
    double target = 0.02;
    double lr = 2e-3;
    bool shuffle_labels = false;  // pair each image with another sample's conditions
    int64_t eval_every = 50;
};

struct SmokeReport {
    bool passed = false;
    int64_t steps_used = 0;
    double final_eval_loss = 0.0;
};

// Learnability canary: a tiny net must overfit 8 samples.
SmokeReport overfit_smoke(const DatasetSpec& base_spec, uint64_t seed, const SmokeOptions& opts = {});

void append_metric_line(const std::string& path, const MetricPoint& p);

}  // namespace toyfashion
