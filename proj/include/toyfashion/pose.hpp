#pragma once

#include "json.hpp"
#include "toyfashion/schedule.hpp"
#include "toyfashion/unet.hpp"

namespace toyfashion {

// Same U-Net skeleton as the main net but with no attention, no text and no
// face path: 1 noisy pose channel + 3 garment channels in, 1 channel out.
struct PoseNetConfig {
    int64_t height = 64, width = 64;
    int base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 2};
    int norm_groups = 8;

    static constexpr int in_channels = 4;
    static constexpr int out_channels = 1;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int channels(int level) const { return base_channels * channel_multipliers[level]; }
    int time_dim() const { return base_channels * 4; }
    void validate() const;
    nlohmann::json to_json() const;
    static PoseNetConfig from_json(const nlohmann::json& j);
};

class PosePredictor {
public:
    PosePredictor(PoseNetConfig cfg, uint64_t init_seed);

    // x_in: [B,4,H,W] = [noisy pose | garment]; returns eps [B,1,H,W]
    Var forward(const Tensor& x_in, const std::vector<int64_t>& t);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const PoseNetConfig& config() const { return cfg_; }

private:
    PoseNetConfig cfg_;
    ParamStore params_;
    LinearLayer time1_, time2_;
    Conv2dLayer stem_;
    std::vector<UnetResBlock> enc_res_, dec_res_;
    std::vector<Conv2dLayer> downs_, ups_;
    UnetResBlock mid_;
    GroupNormLayer out_gn_;
    Conv2dLayer out_conv_;
};

Tensor pose_net_input(const Tensor& noisy_pose, const Tensor& garment_image);  // batched concat

// full-chain stochastic sampling; output in [0,1], diverse across seeds
Tensor sample_pose(PosePredictor& model, const Tensor& garment_image, const NoiseSchedule& sched,
                   uint64_t seed);

}  // namespace toyfashion
