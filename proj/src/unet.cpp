#include "toyfashion/unet.hpp"

#include <algorithm>
#include <cmath>

namespace toyfashion {

bool NetConfig::has_attention(int level) const {
    return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void NetConfig::validate() const {
    require(levels() >= 2, ErrorKind::Config, "net needs at least two resolution levels");
    require(height % (1 << (levels() - 1)) == 0 && width % (1 << (levels() - 1)) == 0,
            ErrorKind::Config, "H,W must be divisible by the level count");
    require(level_h(levels() - 1) >= 4 && level_w(levels() - 1) >= 4, ErrorKind::Config,
            "bottom resolution too small");
    for (int l = 0; l < levels(); ++l)
        require(channels(l) % norm_groups == 0, ErrorKind::Config,
                "channels at level " + std::to_string(l) + " not divisible by norm groups");
    for (int l : attention_levels)
        require(l >= 0 && l < levels(), ErrorKind::Config, "attention level out of range");
    require(text_dim > 0 && n_attributes >= 1, ErrorKind::Config, "bad text configuration");
    require(in_channels > 0 && out_channels > 0, ErrorKind::Config, "bad channel configuration");
}

nlohmann::json NetConfig::to_json() const {
    return {{"height", height},
            {"width", width},
            {"base_channels", base_channels},
            {"channel_multipliers", channel_multipliers},
            {"attention_levels", attention_levels},
            {"in_channels", in_channels},
            {"out_channels", out_channels},
            {"text_dim", text_dim},
            {"n_attributes", n_attributes},
            {"norm_groups", norm_groups},
            {"n_global_words", n_global_words},
            {"n_attr_values", n_attr_values},
            {"face_enabled", face_enabled}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
    NetConfig c;
    c.height = j.at("height").get<int64_t>();
    c.width = j.at("width").get<int64_t>();
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.attention_levels = j.at("attention_levels").get<std::vector<int>>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.text_dim = j.at("text_dim").get<int>();
    c.n_attributes = j.at("n_attributes").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.n_global_words = j.at("n_global_words").get<int64_t>();
    c.n_attr_values = j.at("n_attr_values").get<int64_t>();
    c.face_enabled = j.at("face_enabled").get<bool>();
    c.validate();
    return c;
}

NetConfig NetConfig::for_dataset(const DatasetSpec& spec, int base_channels,
                                 std::vector<int> multipliers, std::vector<int> attention_levels,
                                 int text_dim) {
    NetConfig c;
    c.height = spec.height;
    c.width = spec.width;
    c.base_channels = base_channels;
    c.channel_multipliers = std::move(multipliers);
    c.attention_levels = std::move(attention_levels);
    c.text_dim = text_dim;
    c.n_attributes = static_cast<int>(spec.vocabulary.n());
    c.n_global_words = static_cast<int64_t>(global_prompt_words().size()) + 1;  // + null row
    c.n_attr_values = spec.vocabulary.total_values();
    c.face_enabled = spec.face_enabled;
    while (c.norm_groups > 1 && base_channels % c.norm_groups != 0) c.norm_groups /= 2;
    c.validate();
    return c;
}

// ---- shared blocks ----

void UnetResBlock::init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t in, int64_t out,
                        int64_t emb_dim, int groups, Rng& rng) {
    gn1.init(ps, name + ".gn1", g, in, groups);
    conv1.init(ps, name + ".conv1", g, in, out, 3, 1, 1, rng);
    emb.init(ps, name + ".emb", g, emb_dim, out, rng);
    gn2.init(ps, name + ".gn2", g, out, groups);
    conv2.init(ps, name + ".conv2", g, out, out, 3, 1, 1, rng, /*zero_init=*/true);
    has_skip = in != out;
    if (has_skip) skip.init(ps, name + ".skip", g, in, out, 1, 1, 0, rng);
}

Var UnetResBlock::forward(const Var& x, const Var& t_act) const {
    Var h = conv1.forward(silu(gn1.forward(x)));
    h = add_channel_bias(h, emb.forward(t_act));
    h = conv2.forward(silu(gn2.forward(h)));
    return add(h, has_skip ? skip.forward(x) : x);
}

void UnetSelfAttention::init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t channels,
                             int groups, Rng& rng) {
    dim = channels;
    gn.init(ps, name + ".gn", g, channels, groups);
    q.init(ps, name + ".q", g, channels, channels, rng);
    k.init(ps, name + ".k", g, channels, channels, rng);
    v.init(ps, name + ".v", g, channels, channels, rng);
    o.init(ps, name + ".o", g, channels, channels, rng, /*zero_init=*/true);
}

Var UnetSelfAttention::forward(const Var& x_map, const std::vector<int64_t>& main_idx) const {
    const auto& s = x_map->value.shape();
    int64_t h = s[2], w = s[3], tokens = h * w;
    Var tk = tokens_from_map(gn.forward(x_map));
    Var qin = main_idx.empty() ? tk : gather_tokens(tk, main_idx);
    Var qq = q.forward(qin);
    Var kk = k.forward(tk);
    Var vv = v.forward(tk);
    Var attn = softmax_lastdim(scale(bmm_nt(qq, kk), 1.0 / std::sqrt(static_cast<double>(dim))));
    Var out = o.forward(bmm_nn(attn, vv));
    if (!main_idx.empty()) out = scatter_tokens(out, main_idx, tokens);
    return add(x_map, map_from_tokens(out, h, w));
}

void DenoiserNet::AttentionSite::init(ParamStore& ps, const NetConfig& cfg, const BlockSpec& s,
                                      Rng& rng) {
    spec = s;
    std::string name = s.site_id();
    int64_t ch = cfg.channels(s.level);
    sattn.init(ps, name + ".sa", ParamGroup::Denoiser, ch, cfg.norm_groups, rng);
    rada_gn.init(ps, name + ".rada.gn", ParamGroup::Denoiser, ch, cfg.norm_groups);
    rada.init(ps, name + ".rada", ch, cfg.text_dim, ch, rng);
    int64_t hc = std::max<int64_t>(8, ch / 2);
    head1.init(ps, name + ".head.c1", ParamGroup::MaskHead, ch, hc, 3, 1, 1, rng);
    head2.init(ps, name + ".head.c2", ParamGroup::MaskHead, hc, hc, 3, 1, 1, rng);
    head3.init(ps, name + ".head.c3", ParamGroup::MaskHead, hc, cfg.n_attributes, 3, 1, 1, rng,
               /*zero_init=*/true);
}

// ---- net assembly ----

DenoiserNet::DenoiserNet(NetConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    require(cfg_.n_attr_values >= cfg_.n_attributes, ErrorKind::Config,
            "attribute value table smaller than category count");
    Rng rng(init_seed);
    int L = cfg_.levels();

    Tensor gt({cfg_.n_global_words, cfg_.text_dim});
    for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = 0.02 * rng.normal();
    global_table_ = params_.add("text.global", ParamGroup::Denoiser, std::move(gt));
    Tensor at({cfg_.n_attr_values, cfg_.text_dim});
    for (int64_t i = 0; i < at.numel(); ++i) at[i] = 0.02 * rng.normal();
    attr_table_ = params_.add("text.attr", ParamGroup::Local, std::move(at));

    time1_.init(params_, "time.fc1", ParamGroup::Denoiser, cfg_.base_channels, cfg_.time_dim(), rng);
    time2_.init(params_, "time.fc2", ParamGroup::Denoiser, cfg_.time_dim(), cfg_.time_dim(), rng);
    stem_.init(params_, "stem", ParamGroup::Denoiser, cfg_.in_channels, cfg_.channels(0), 3, 1, 1, rng);

    enc_res_.resize(L);
    enc_sites_.resize(L);
    dec_res_.resize(L);
    dec_sites_.resize(L);
    for (int l = 0; l < L; ++l) {
        enc_res_[l].init(params_, "enc.l" + std::to_string(l) + ".res", ParamGroup::Denoiser,
                         cfg_.channels(l), cfg_.channels(l), cfg_.time_dim(), cfg_.norm_groups, rng);
        if (cfg_.has_attention(l)) {
            BlockSpec s{BlockSpec::Side::Encoder, l, cfg_.level_h(l), cfg_.level_w(l), true};
            enc_sites_[l].emplace();
            enc_sites_[l]->init(params_, cfg_, s, rng);
        }
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
        if (cfg_.has_attention(l)) {
            BlockSpec s{BlockSpec::Side::Decoder, l, cfg_.level_h(l), cfg_.level_w(l), true};
            dec_sites_[l].emplace();
            dec_sites_[l]->init(params_, cfg_, s, rng);
        }
        if (l > 0) {
            Conv2dLayer up;
            up.init(params_, "up.l" + std::to_string(l), ParamGroup::Denoiser, cfg_.channels(l),
                    cfg_.channels(l - 1), 3, 1, 1, rng);
            ups_.push_back(up);  // ups_[l-1]
        }
    }
    out_gn_.init(params_, "out.gn", ParamGroup::Denoiser, cfg_.channels(0), cfg_.norm_groups);
    out_conv_.init(params_, "out.conv", ParamGroup::Denoiser, cfg_.channels(0), cfg_.out_channels, 3, 1,
                   1, rng, /*zero_init=*/true);
}

std::vector<BlockSpec> DenoiserNet::sites() const {
    std::vector<BlockSpec> out;
    for (int l = 0; l < cfg_.levels(); ++l)
        if (enc_sites_[l]) out.push_back(enc_sites_[l]->spec);
    for (int l = cfg_.levels() - 1; l >= 0; --l)
        if (dec_sites_[l]) out.push_back(dec_sites_[l]->spec);
    return out;
}

BlockSpec DenoiserNet::last_decoder_site() const {
    for (int l = 0; l < cfg_.levels(); ++l)
        if (dec_sites_[l]) return dec_sites_[l]->spec;
    fail(ErrorKind::Config, "net has no decoder attention site");
}

PromptBundle DenoiserNet::build_prompts(int64_t batch, const std::vector<int64_t>& global_tokens,
                                        const std::vector<std::vector<int64_t>>& attr_tokens) const {
    require(!global_tokens.empty(), ErrorKind::Config, "empty global prompt");
    require(static_cast<int64_t>(attr_tokens.size()) == batch, ErrorKind::Shape,
            "attr token batch mismatch");
    PromptBundle p;
    p.global_emb = tile_batch(embedding(global_table_, global_tokens), batch);
    for (int i = 0; i < cfg_.n_attributes; ++i) {
        std::vector<int64_t> ids(batch);
        for (int64_t b = 0; b < batch; ++b) {
            require(static_cast<int64_t>(attr_tokens[b].size()) == cfg_.n_attributes, ErrorKind::Shape,
                    "each sample needs one token per attribute");
            ids[b] = attr_tokens[b][i];
        }
        p.attr_embs.push_back(reshape(embedding(attr_table_, ids), {batch, 1, cfg_.text_dim}));
    }
    return p;
}

namespace {

// token indices of the main canvas inside a widened map
std::vector<int64_t> main_token_indices(int64_t h, int64_t w_main, int64_t w_full) {
    std::vector<int64_t> idx;
    if (w_main == w_full) return idx;  // empty means "all"
    idx.reserve(static_cast<size_t>(h * w_main));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w_main; ++x) idx.push_back(y * w_full + x);
    return idx;
}

}  // namespace

Var DenoiserNet::run_site(const AttentionSite& site, Var x, const PromptBundle& prompts,
                          const ForwardOptions& opts, int64_t batch, std::vector<SiteMasks>& out_masks,
                          ForwardTrace* trace) {
    const std::string id = site.spec.site_id();
    int64_t h = x->value.dim(2), w_full = x->value.dim(3), w_main = site.spec.width;
    auto main_idx = main_token_indices(h, w_main, w_full);

    x = site.sattn.forward(x, main_idx);

    require(opts.routing != nullptr, ErrorKind::Config, "forward needs a routing table");
    const RouteEntry& entry = opts.routing->at(id);

    // heads are probes: they read the self-attention output but never push
    // gradient back into the backbone
    Var pred;
    if (opts.compute_heads || entry.source == MaskSource::OwnHead) {
        Var hx = stop_gradient(x);
        Var p = sigmoid(site.head3.forward(silu(site.head2.forward(silu(site.head1.forward(hx))))));
        pred = (w_main == w_full) ? p : crop_cols(p, w_main);
        out_masks.push_back({id, pred});
    }

    Tensor gate;  // [B,N,h,w_main]
    if (entry.source == MaskSource::OwnHead) {
        gate = pred->value;
    } else {
        gate = entry.mask;
        std::vector<int64_t> want{batch, cfg_.n_attributes, h, w_main};
        require(gate.shape() == want, ErrorKind::Shape,
                "routed mask for " + id + " has shape " + gate.shape_str());
    }
    if (trace) {
        SiteTraceRecord rec;
        rec.site = id;
        rec.h = h;
        rec.w = w_main;
        rec.source = entry.source;
        rec.predicted = pred ? pred->value : Tensor();
        rec.applied = gate;
        trace->sites.push_back(std::move(rec));
    }

    Var f_norm = site.rada_gn.forward(x);
    Var f_tokens = tokens_from_map(f_norm);
    Var f_main = main_idx.empty() ? f_tokens : gather_tokens(f_tokens, main_idx);
    Var gates = make_const(gate.reshaped({batch, cfg_.n_attributes, h * w_main}));
    Var r = rada(f_main, prompts, gates, site.rada);
    if (!main_idx.empty()) r = scatter_tokens(r, main_idx, h * w_full);
    return add(x, map_from_tokens(r, h, w_full));
}

DenoiserOutput DenoiserNet::forward(const Tensor& x_in, const std::vector<int64_t>& t,
                                    const std::vector<int64_t>& global_tokens,
                                    const std::vector<std::vector<int64_t>>& attr_tokens,
                                    const ForwardOptions& opts) {
    const auto& s = x_in.shape();
    require(s.size() == 4 && s[1] == cfg_.in_channels && s[2] == cfg_.height && s[3] == cfg_.width,
            ErrorKind::Shape, "net input must be [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                                  x_in.shape_str());
    int64_t B = s[0];
    require(static_cast<int64_t>(t.size()) == B, ErrorKind::Shape, "one timestep per batch item");

    Tensor input = x_in;
    if (cfg_.face_enabled) {
        require(opts.face != nullptr, ErrorKind::Config, "face-enabled net needs a face crop");
        input = attach_face(x_in, *opts.face, true);
    } else {
        require(opts.face == nullptr, ErrorKind::Config, "face conditioning is disabled");
    }

    Var x = stem_.forward(make_const(input));
    Var t_feat = make_const(timestep_features(t, cfg_.base_channels));
    Var t_act = silu(time2_.forward(silu(time1_.forward(t_feat))));
    PromptBundle prompts = build_prompts(B, global_tokens, attr_tokens);

    DenoiserOutput out;
    std::vector<Var> skips;
    int L = cfg_.levels();
    for (int l = 0; l < L; ++l) {
        x = enc_res_[l].forward(x, t_act);
        if (enc_sites_[l]) x = run_site(*enc_sites_[l], x, prompts, opts, B, out.masks, opts.trace);
        skips.push_back(x);
        if (l + 1 < L) x = downs_[static_cast<size_t>(l)].forward(x);
    }
    x = mid_.forward(x, t_act);
    for (int l = L - 1; l >= 0; --l) {
        x = concat_channels(x, skips[static_cast<size_t>(l)]);
        x = dec_res_[l].forward(x, t_act);
        if (dec_sites_[l]) x = run_site(*dec_sites_[l], x, prompts, opts, B, out.masks, opts.trace);
        if (l > 0) x = ups_[static_cast<size_t>(l - 1)].forward(upsample_nearest2(x));
    }
    x = out_conv_.forward(silu(out_gn_.forward(x)));
    out.eps = (x->value.dim(3) == cfg_.width) ? x : crop_cols(x, cfg_.width);
    return out;
}

Tensor assemble_conditions(const ToySample& sample, const Tensor& x_t) {
    std::vector<const ToySample*> one{&sample};
    require(x_t.rank() == 3, ErrorKind::Shape, "x_t must be [3,H,W]");
    Tensor batched = x_t.reshaped({1, x_t.dim(0), x_t.dim(1), x_t.dim(2)});
    Tensor out = assemble_conditions_batch(one, batched);
    return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
}

Tensor assemble_conditions_batch(const std::vector<const ToySample*>& samples, const Tensor& x_t) {
    require(x_t.rank() == 4 && x_t.dim(1) == 3, ErrorKind::Shape, "x_t must be [B,3,H,W]");
    int64_t B = x_t.dim(0), H = x_t.dim(2), W = x_t.dim(3);
    require(static_cast<int64_t>(samples.size()) == B, ErrorKind::Shape, "sample count mismatch");
    Tensor out({B, 8, H, W});
    int64_t hw = H * W;
    for (int64_t b = 0; b < B; ++b) {
        const ToySample& sm = *samples[b];
        require(sm.image.dim(1) == H && sm.image.dim(2) == W, ErrorKind::Shape,
                "condition resolution mismatch");
        double* dst = out.data() + b * 8 * hw;
        const double* xs = x_t.data() + b * 3 * hw;
        std::copy(xs, xs + 3 * hw, dst);
        std::copy(sm.garment_image.data(), sm.garment_image.data() + 3 * hw, dst + 3 * hw);
        std::copy(sm.garment_mask.data(), sm.garment_mask.data() + hw, dst + 6 * hw);
        std::copy(sm.pose_raster.data(), sm.pose_raster.data() + hw, dst + 7 * hw);
    }
    return out;
}

Tensor attach_face(const Tensor& net_input, const Tensor& face_crop, bool face_mode_enabled) {
    require(face_mode_enabled, ErrorKind::Config, "attach_face called with face mode disabled");
    require(net_input.rank() == 4 && face_crop.rank() == 4 && face_crop.dim(1) == 3, ErrorKind::Shape,
            "attach_face expects net_input[B,C,H,W], face[B,3,fh,fw]");
    int64_t B = net_input.dim(0), C = net_input.dim(1), H = net_input.dim(2), W = net_input.dim(3);
    require(face_crop.dim(0) == B, ErrorKind::Shape, "face batch mismatch");
    int64_t fh = face_crop.dim(2), fw = face_crop.dim(3);
    require(fh > 0 && (fw * H) % fh == 0, ErrorKind::Shape, "face aspect does not scale to input height");
    int64_t wext = fw * H / fh;
    Tensor face_big = resize_mask(face_crop, H, wext);  // bilinear; [0,1] preserved
    Tensor out({B, C, H, W + wext}, 0.0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y) {
                double* row = out.data() + ((b * C + c) * H + y) * (W + wext);
                const double* src = net_input.data() + ((b * C + c) * H + y) * W;
                std::copy(src, src + W, row);
                if (c < 3) {
                    const double* fsrc = face_big.data() + ((b * 3 + c) * H + y) * wext;
                    std::copy(fsrc, fsrc + wext, row + W);
                }
            }
    return out;
}

}  // namespace toyfashion
