#include "toyfashion/pose.hpp"

#include <algorithm>
#include <cmath>

#include "toyfashion/sampler.hpp"

namespace toyfashion {

void PoseNetConfig::validate() const {
    require(levels() >= 2, ErrorKind::Config, "pose net needs at least two levels");
    require(height % (1 << (levels() - 1)) == 0 && width % (1 << (levels() - 1)) == 0,
            ErrorKind::Config, "H,W must be divisible by the level count");
    for (int l = 0; l < levels(); ++l)
        require(channels(l) % norm_groups == 0, ErrorKind::Config,
                "pose channels not divisible by norm groups");
}

nlohmann::json PoseNetConfig::to_json() const {
    return {{"height", height},
            {"width", width},
            {"base_channels", base_channels},
            {"channel_multipliers", channel_multipliers},
            {"norm_groups", norm_groups}};
}

PoseNetConfig PoseNetConfig::from_json(const nlohmann::json& j) {
    PoseNetConfig c;
    c.height = j.at("height").get<int64_t>();
    c.width = j.at("width").get<int64_t>();
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.validate();
    return c;
}

PosePredictor::PosePredictor(PoseNetConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);
    int L = cfg_.levels();
    time1_.init(params_, "time.fc1", ParamGroup::Denoiser, cfg_.base_channels, cfg_.time_dim(), rng);
    time2_.init(params_, "time.fc2", ParamGroup::Denoiser, cfg_.time_dim(), cfg_.time_dim(), rng);
    stem_.init(params_, "stem", ParamGroup::Denoiser, PoseNetConfig::in_channels, cfg_.channels(0), 3, 1,
               1, rng);
    enc_res_.resize(L);
    dec_res_.resize(L);
    for (int l = 0; l < L; ++l) {
        enc_res_[l].init(params_, "enc.l" + std::to_string(l) + ".res", ParamGroup::Denoiser,
                         cfg_.channels(l), cfg_.channels(l), cfg_.time_dim(), cfg_.norm_groups, rng);
        if (l + 1 < L) {
            Conv2dLayer down;
            down.init(params_, "down.l" + std::to_string(l), ParamGroup::Denoiser, cfg_.channels(l),
                      cfg_.channels(l + 1), 3, 2, 1, rng);
            downs_.push_back(down);
        }
    }
    mid_.init(params_, "mid.res", ParamGroup::Denoiser, cfg_.channels(L - 1), cfg_.channels(L - 1),
              cfg_.time_dim(), cfg_.norm_groups, rng);
    for (int l = 0; l < L; ++l) {
        dec_res_[l].init(params_, "dec.l" + std::to_string(l) + ".res", ParamGroup::Denoiser,
                         2 * cfg_.channels(l), cfg_.channels(l), cfg_.time_dim(), cfg_.norm_groups, rng);
        if (l > 0) {
            Conv2dLayer up;
            up.init(params_, "up.l" + std::to_string(l), ParamGroup::Denoiser, cfg_.channels(l),
                    cfg_.channels(l - 1), 3, 1, 1, rng);
            ups_.push_back(up);
        }
    }
    out_gn_.init(params_, "out.gn", ParamGroup::Denoiser, cfg_.channels(0), cfg_.norm_groups);
    out_conv_.init(params_, "out.conv", ParamGroup::Denoiser, cfg_.channels(0),
                   PoseNetConfig::out_channels, 3, 1, 1, rng, /*zero_init=*/true);
}

Var PosePredictor::forward(const Tensor& x_in, const std::vector<int64_t>& t) {
    const auto& s = x_in.shape();
    require(s.size() == 4 && s[1] == PoseNetConfig::in_channels && s[2] == cfg_.height &&
                s[3] == cfg_.width,
            ErrorKind::Shape, "pose net input must be [B,4,H,W], got " + x_in.shape_str());
    require(static_cast<int64_t>(t.size()) == s[0], ErrorKind::Shape, "one timestep per batch item");
    Var x = stem_.forward(make_const(x_in));
    Var t_act =
        silu(time2_.forward(silu(time1_.forward(make_const(timestep_features(t, cfg_.base_channels))))));
    std::vector<Var> skips;
    int L = cfg_.levels();
    for (int l = 0; l < L; ++l) {
        x = enc_res_[l].forward(x, t_act);
        skips.push_back(x);
        if (l + 1 < L) x = downs_[static_cast<size_t>(l)].forward(x);
    }
    x = mid_.forward(x, t_act);
    for (int l = L - 1; l >= 0; --l) {
        x = concat_channels(x, skips[static_cast<size_t>(l)]);
        x = dec_res_[l].forward(x, t_act);
        if (l > 0) x = ups_[static_cast<size_t>(l - 1)].forward(upsample_nearest2(x));
    }
    return out_conv_.forward(silu(out_gn_.forward(x)));
}

Tensor pose_net_input(const Tensor& noisy_pose, const Tensor& garment_image) {
    require(noisy_pose.rank() == 4 && garment_image.rank() == 4 && noisy_pose.dim(1) == 1 &&
                garment_image.dim(1) == 3,
            ErrorKind::Shape, "pose_net_input expects pose[B,1,H,W], garment[B,3,H,W]");
    int64_t B = noisy_pose.dim(0), H = noisy_pose.dim(2), W = noisy_pose.dim(3);
    require(garment_image.dim(0) == B && garment_image.dim(2) == H && garment_image.dim(3) == W,
            ErrorKind::Shape, "pose/garment resolution mismatch");
    Tensor out({B, 4, H, W});
    int64_t hw = H * W;
    for (int64_t b = 0; b < B; ++b) {
        std::copy(noisy_pose.data() + b * hw, noisy_pose.data() + (b + 1) * hw, out.data() + b * 4 * hw);
        std::copy(garment_image.data() + b * 3 * hw, garment_image.data() + (b + 1) * 3 * hw,
                  out.data() + b * 4 * hw + hw);
    }
    return out;
}

Tensor sample_pose(PosePredictor& model, const Tensor& garment_image, const NoiseSchedule& sched,
                   uint64_t seed) {
    require(garment_image.rank() == 3 && garment_image.dim(0) == 3, ErrorKind::Shape,
            "sample_pose expects [3,H,W]");
    int64_t H = garment_image.dim(1), W = garment_image.dim(2);
    require(H == model.config().height && W == model.config().width, ErrorKind::Config,
            "garment resolution does not match the pose model");
    Rng rng(seed);
    Tensor x = Tensor::randn({1, 1, H, W}, rng);
    Tensor cond = garment_image.reshaped({1, 3, H, W});
    NoGradGuard ng;
    for (int64_t t = sched.T - 1; t >= 0; --t) {
        Var eps = model.forward(pose_net_input(x, cond), {t});
        {
            // clip the implied pose raster to [0,1]
            double sa = std::sqrt(sched.alpha_bars[t]);
            double sb = std::sqrt(1.0 - sched.alpha_bars[t]);
            for (int64_t i = 0; i < x.numel(); ++i) {
                double x0 = (x[i] - sb * eps->value[i]) / sa;
                double c = std::clamp(x0, 0.0, 1.0);
                if (c != x0) eps->value[i] = (x[i] - sa * c) / sb;
            }
        }
        if (t >= 1) {
            Tensor z = Tensor::randn(x.shape(), rng);
            x = ddpm_step(x, t, eps->value, sched, &z);
        } else {
            x = ddim_step(x, t, -1, eps->value, sched);
        }
    }
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
    return x.reshaped({1, H, W});
}

}  // namespace toyfashion
