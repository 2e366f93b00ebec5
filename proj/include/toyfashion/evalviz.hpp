#pragma once

#include <map>
#include <string>
#include <vector>

#include "toyfashion/dataset.hpp"
#include "toyfashion/sampler.hpp"

namespace toyfashion {

struct EvalConfig {
    uint64_t seed = 0;
    std::string tokens_mode = "random";  // random (counterfactual) | dataset
    bool cmi = true;
    bool masks_to_one = false;  // unmasked dual attention (ablation variant)
    std::string sampler_kind = "ddim";
    int64_t sampler_steps = 50;
    double guidance_scale = 1.0;
    int64_t max_eval = 0;  // 0 = whole split
    int64_t batch = 16;
    int64_t grid_samples = 8;  // images kept for the panel grid
};

// Flat key-value report; stable field names are the acceptance contract.
struct EvalReport {
    std::map<std::string, double> values;

    double at(const std::string& key) const;
    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string to_kv() const;
    static EvalReport from_kv(const std::string& text);
};

// per-category nearest-color check against the requested tokens
double attribute_accuracy(const Tensor& generated, const std::vector<int64_t>& requested,
                          const Tensor& region_masks, const AttributeVocabulary& voc,
                          std::map<std::string, double>* per_category = nullptr);

// intersection-over-union of binarized masks (pred > 0.5, gt >= 0.5);
// returns -1 when both sides are empty
double mask_iou(const Tensor& pred, const Tensor& gt);

// Samples the eval split and computes the full report; stage-1 checkpoints
// report the attention metrics as not applicable. When artifacts_dir is
// non-empty the raw panel inputs are saved for render_diagnostics.
EvalReport evaluate(DenoiserNet& net, int stage_tag, const NoiseSchedule& sched,
                    const StoredDataset& ds, const std::vector<int64_t>& eval_idx,
                    const EvalConfig& cfg, const std::string& artifacts_dir = "");

struct DiagnosticsResult {
    std::vector<std::string> written;
    std::vector<std::string> skipped;  // panel name + reason
};

// Renders attention-overlay, mask-grid (site x timestep bucket) and
// sample-grid panels plus a metrics summary from saved eval artifacts.
// Byte-identical across re-renders of the same run.
DiagnosticsResult render_diagnostics(const std::string& artifacts_dir, const std::string& panels_dir);

}  // namespace toyfashion
