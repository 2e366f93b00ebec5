#pragma once

#include "json.hpp"
#include "toyfashion/schedule.hpp"
#include "toyfashion/unet.hpp"

namespace toyfashion {

struct SamplerConfig {
    std::string kind = "ddim";  // ddim | ddpm
    int64_t steps = 50;
    uint64_t seed = 0;
    bool cmi = true;
    bool uniform_fallback = false;  // first-step 0.5 masks instead of encoder heads
    bool masks_to_one = false;      // force every gate to 1 (unmasked dual attention)
    bool clamp_x0 = true;           // clip the implied x0 to [0,1] each step
    double guidance_scale = 1.0;    // 1 = off

    nlohmann::json to_json() const;
    static SamplerConfig from_json(const nlohmann::json& j);
};

// posterior-mean update with optional noise (noise == nullptr means zero)
Tensor ddpm_step(const Tensor& x_t, int64_t t, const Tensor& eps_pred, const NoiseSchedule& sched,
                 const Tensor* noise);
// deterministic x0-reprojection update; t_prev == -1 projects to x0
Tensor ddim_step(const Tensor& x_t, int64_t t, int64_t t_prev, const Tensor& eps_pred,
                 const NoiseSchedule& sched);

struct SampleResult {
    Tensor images;  // [B,3,H,W] in [0,1]
    ChainLog chain_log;
    // traces captured at requested timesteps, denoising order
    std::vector<std::pair<int64_t, ForwardTrace>> traces;
};

struct SampleRequest {
    std::vector<const ToySample*> conditions;           // garment / mask / pose sources
    std::vector<std::vector<int64_t>> attr_tokens;      // requested tokens, [B][N]
    std::vector<int64_t> global_tokens;
    const Tensor* faces = nullptr;                      // [B,3,fh,fw] when the net wants faces
    std::vector<int64_t> trace_timesteps;               // capture forward traces here
};

// Runs the reverse process with per-step mask-chain routing. The garment
// region is re-imposed from the condition at every step (noised to the
// step's level) and exactly at the end.
SampleResult sample(DenoiserNet& model, const NoiseSchedule& sched, const SamplerConfig& cfg,
                    const SampleRequest& req);

// evenly spaced inference timesteps (ascending)
std::vector<int64_t> inference_timesteps(int64_t T, int64_t steps);

}  // namespace toyfashion
