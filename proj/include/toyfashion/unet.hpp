#pragma once

#include <optional>

#include "json.hpp"
#include "toyfashion/dataset.hpp"
#include "toyfashion/mask_chain.hpp"
#include "toyfashion/rada.hpp"

namespace toyfashion {

struct NetConfig {
    int64_t height = 64, width = 64;
    int base_channels = 64;
    std::vector<int> channel_multipliers = {1, 2, 4};
    std::vector<int> attention_levels = {1, 2};
    int in_channels = 8;  // 3 noisy + 3 garment + 1 garment mask + 1 pose
    int out_channels = 3;
    int text_dim = 32;
    int n_attributes = 4;
    int norm_groups = 8;
    int64_t n_global_words = 6;  // prompt words + one null row
    int64_t n_attr_values = 0;
    bool face_enabled = false;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int channels(int level) const { return base_channels * channel_multipliers[level]; }
    int time_dim() const { return base_channels * 4; }
    bool has_attention(int level) const;
    int64_t level_h(int level) const { return height >> level; }
    int64_t level_w(int level) const { return width >> level; }
    // spatial face extension width at input resolution (face crop scaled to
    // input height keeps its aspect, so H/4 x W/4 widens the canvas by W)
    int64_t face_ext_width() const { return width; }

    void validate() const;
    nlohmann::json to_json() const;
    static NetConfig from_json(const nlohmann::json& j);
    static NetConfig for_dataset(const DatasetSpec& spec, int base_channels,
                                 std::vector<int> multipliers, std::vector<int> attention_levels,
                                 int text_dim);
};

// per-site mask prediction, still attached to the graph for stage-3 training
struct SiteMasks {
    std::string site;
    Var masks;  // [B,N,h,w] in (0,1)
};

struct DenoiserOutput {
    Var eps;                       // [B,out,H,W], extension columns cropped away
    std::vector<SiteMasks> masks;  // one entry per attention site, forward order
};

struct SiteTraceRecord {
    std::string site;
    int64_t h = 0, w = 0;
    MaskSource source = MaskSource::OwnHead;
    Tensor predicted;  // own-head prediction (when computed)
    Tensor applied;    // gate actually applied to the local branches
    int64_t cache_source_timestep = -1;
};

struct ForwardTrace {
    std::vector<SiteTraceRecord> sites;
};

struct ForwardOptions {
    bool rada_enabled = true;              // stage 1 runs with the local branches absent
    bool compute_heads = true;             // may be disabled when nothing consumes predictions
    const RoutingTable* routing = nullptr; // required when rada_enabled
    const Tensor* face = nullptr;          // [B,3,fh,fw] when the config enables faces
    ForwardTrace* trace = nullptr;
};

// residual block with timestep injection, shared by the main and pose nets
struct UnetResBlock {
    GroupNormLayer gn1, gn2;
    Conv2dLayer conv1, conv2, skip;
    LinearLayer emb;
    bool has_skip = false;
    void init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t in, int64_t out,
              int64_t emb_dim, int groups, Rng& rng);
    Var forward(const Var& x, const Var& t_act) const;
};

struct UnetSelfAttention {
    GroupNormLayer gn;
    LinearLayer q, k, v, o;
    int64_t dim = 0;
    void init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t channels, int groups,
              Rng& rng);
    // queries restricted to main_idx when non-empty; keys/values see all tokens
    Var forward(const Var& x_map, const std::vector<int64_t>& main_idx) const;
};

class DenoiserNet {
public:
    DenoiserNet(NetConfig cfg, uint64_t init_seed);

    // x_in: [B,in,H,W]; t: one timestep per batch item;
    // attr_tokens: [B][N] dense vocabulary ids; global tokens shared
    DenoiserOutput forward(const Tensor& x_in, const std::vector<int64_t>& t,
                           const std::vector<int64_t>& global_tokens,
                           const std::vector<std::vector<int64_t>>& attr_tokens,
                           const ForwardOptions& opts);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const NetConfig& config() const { return cfg_; }
    std::vector<BlockSpec> sites() const;
    BlockSpec last_decoder_site() const;

private:
    struct AttentionSite {
        BlockSpec spec;
        UnetSelfAttention sattn;
        GroupNormLayer rada_gn;
        RadaWeights rada;
        Conv2dLayer head1, head2, head3;
        void init(ParamStore& ps, const NetConfig& cfg, const BlockSpec& s, Rng& rng);
    };

    Var run_site(const AttentionSite& site, Var x, const PromptBundle& prompts,
                 const ForwardOptions& opts, int64_t batch, std::vector<SiteMasks>& out_masks,
                 ForwardTrace* trace);
    PromptBundle build_prompts(int64_t batch, const std::vector<int64_t>& global_tokens,
                               const std::vector<std::vector<int64_t>>& attr_tokens) const;

    NetConfig cfg_;
    ParamStore params_;
    Var global_table_, attr_table_;
    LinearLayer time1_, time2_;
    Conv2dLayer stem_;
    std::vector<UnetResBlock> enc_res_;
    std::vector<Conv2dLayer> downs_;
    UnetResBlock mid_;
    std::vector<UnetResBlock> dec_res_;  // indexed by level
    std::vector<Conv2dLayer> ups_;       // ups_[l] maps level l+1 -> level l
    std::vector<std::optional<AttentionSite>> enc_sites_, dec_sites_;  // per level
    GroupNormLayer out_gn_;
    Conv2dLayer out_conv_;
};

// channel concatenation in the documented order [x_t | garment | mask | pose]
Tensor assemble_conditions(const ToySample& sample, const Tensor& x_t);
Tensor assemble_conditions_batch(const std::vector<const ToySample*>& samples, const Tensor& x_t);

// widens the input canvas with the face crop scaled to input height; face
// pixels occupy the noisy-image channels, all other channels are zero-padded
Tensor attach_face(const Tensor& net_input, const Tensor& face_crop, bool face_mode_enabled);

}  // namespace toyfashion
