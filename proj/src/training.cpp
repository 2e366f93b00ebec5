#include "toyfashion/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace toyfashion {

std::vector<ParamGroup> StageConfig::trainable_groups() const {
    switch (stage) {
        case 1: return {ParamGroup::Denoiser};
        case 2: return {ParamGroup::Denoiser, ParamGroup::Local};
        case 3: return {ParamGroup::MaskHead};
    }
    fail(ErrorKind::Config, "stage must be 1, 2 or 3");
}

void StageConfig::validate() const {
    require(stage >= 1 && stage <= 3, ErrorKind::Config, "stage must be 1, 2 or 3");
    require(steps >= 1 && batch_size >= 1 && lr > 0.0, ErrorKind::Config, "bad stage budget");
    require(mask_source == "none" || mask_source == "ground_truth", ErrorKind::Config,
            "mask_source must be none or ground_truth");
    if (stage == 1)
        require(mask_source == "none", ErrorKind::Config, "stage 1 runs without local attention");
    if (stage >= 2)
        require(mask_source == "ground_truth", ErrorKind::Config,
                "stages 2 and 3 route ground-truth masks");
}

StageConfig StageConfig::defaults_for(int stage) {
    StageConfig c;
    c.stage = stage;
    switch (stage) {
        case 1:
            c.steps = 8000;
            c.lr = 2e-4;
            c.mask_source = "none";
            break;
        case 2:
            c.steps = 1500;
            c.lr = 2e-4;
            c.mask_source = "ground_truth";
            break;
        case 3:
            c.steps = 2000;
            c.lr = 1e-3;
            c.mask_source = "ground_truth";
            break;
        default: fail(ErrorKind::Config, "stage must be 1, 2 or 3");
    }
    c.batch_size = 16;
    return c;
}

StageConfig StageConfig::from_json(int stage, const nlohmann::json& j) {
    StageConfig c = defaults_for(stage);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.binarize_gt_masks = j.value("binarize_gt_masks", c.binarize_gt_masks);
    c.supervise_encoder_heads = j.value("supervise_encoder_heads", c.supervise_encoder_heads);
    c.joint_region_loss = j.value("joint_region_loss", c.joint_region_loss);
    c.null_prompt_dropout = j.value("null_prompt_dropout", c.null_prompt_dropout);
    c.log_every = j.value("log_every", c.log_every);
    c.validate();
    return c;
}

void append_metric_line(const std::string& path, const MetricPoint& p) {
    if (path.empty()) return;
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path, std::ios::app);
    require(f.good(), ErrorKind::Config, "cannot append metric log: " + path);
    nlohmann::json j{{"step", p.step},   {"denoise", p.denoise}, {"region", p.region},
                     {"total", p.total}, {"lr", p.lr},           {"wall_ms", p.wall_ms}};
    f << j.dump() << "\n";
}

namespace {

std::vector<Var> collect_trainable(const ParamStore& ps, const std::vector<ParamGroup>& groups) {
    std::vector<Var> out;
    for (ParamGroup g : groups) {
        auto vars = ps.group_vars(g);
        out.insert(out.end(), vars.begin(), vars.end());
    }
    return out;
}

bool groups_grad_free(const ParamStore& ps, const std::vector<ParamGroup>& trainable) {
    auto is_trainable = [&](ParamGroup g) {
        for (ParamGroup t : trainable)
            if (t == g) return true;
        return false;
    };
    for (const auto& e : ps.entries()) {
        if (is_trainable(e.group)) continue;
        if (!e.var->has_grad()) continue;
        for (int64_t i = 0; i < e.var->grad.numel(); ++i)
            if (e.var->grad[i] != 0.0) return false;
    }
    return true;
}

uint64_t frozen_groups_hash(const ParamStore& ps, const std::vector<ParamGroup>& trainable) {
    uint64_t h = fnv1a64(nullptr, 0);
    auto is_trainable = [&](ParamGroup g) {
        for (ParamGroup t : trainable)
            if (t == g) return true;
        return false;
    };
    for (const auto& e : ps.entries()) {
        if (is_trainable(e.group)) continue;
        h = fnv1a64(e.name.data(), e.name.size(), h);
        h = fnv1a64(e.var->value.data(), e.var->value.numel() * sizeof(double), h);
    }
    return h;
}

// ground-truth masks resized per attention site (area average, soft unless
// binarized); returned as a routing table
RoutingTable gt_routing(const std::vector<BlockSpec>& sites, const Tensor& gt_batch, bool binarize) {
    RoutingTable table;
    for (const auto& s : sites)
        table.entries[s.site_id()] = {MaskSource::GroundTruth,
                                      downsample_area(gt_batch, s.height, s.width, binarize)};
    return table;
}

RoutingTable zero_routing(const std::vector<BlockSpec>& sites, int64_t batch, int64_t n) {
    RoutingTable table;
    for (const auto& s : sites)
        table.entries[s.site_id()] = {MaskSource::GroundTruth,
                                      Tensor::zeros({batch, n, s.height, s.width})};
    return table;
}

}  // namespace

TrainResult train_stage(DenoiserNet& net, const StageConfig& cfg, const NoiseSchedule& sched,
                        const StoredDataset& ds, const std::vector<int64_t>& train_idx, uint64_t seed,
                        const std::string& metric_log_path) {
    cfg.validate();
    require(!train_idx.empty(), ErrorKind::Config, "empty training split");
    const NetConfig& nc = net.config();
    int64_t B = cfg.batch_size, N = nc.n_attributes, H = nc.height, W = nc.width;
    auto sites = net.sites();
    require(!sites.empty(), ErrorKind::Config, "net has no attention sites");

    auto trainable = cfg.trainable_groups();
    AdamW opt(collect_trainable(net.params(), trainable), cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
    TrainResult result;
    result.frozen_hash_before = frozen_groups_hash(net.params(), trainable);

    Rng rng(mix_seed(seed, 0x7214));
    auto clock = [] { return std::chrono::steady_clock::now(); };
    auto t_start = clock();

    std::vector<double> firsts, lasts;
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        // batch assembly
        std::vector<const ToySample*> batch(static_cast<size_t>(B));
        std::vector<std::vector<int64_t>> attr_tokens(static_cast<size_t>(B));
        Tensor x0({B, 3, H, W}), eps({B, 3, H, W}), gt_masks({B, N, H, W});
        Tensor faces = nc.face_enabled ? Tensor({B, 3, H / 4, W / 4}) : Tensor();
        std::vector<int64_t> tvec(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) {
            const ToySample& sm =
                ds.samples[static_cast<size_t>(train_idx[rng.uniform_int(train_idx.size())])];
            batch[static_cast<size_t>(b)] = &sm;
            attr_tokens[static_cast<size_t>(b)] = sm.attr_tokens;
            std::copy(sm.image.data(), sm.image.data() + 3 * H * W, x0.data() + b * 3 * H * W);
            std::copy(sm.region_masks.data(), sm.region_masks.data() + N * H * W,
                      gt_masks.data() + b * N * H * W);
            if (nc.face_enabled) {
                require(!sm.face_crop.empty(), ErrorKind::Config, "face-enabled net needs face crops");
                std::copy(sm.face_crop.data(), sm.face_crop.data() + sm.face_crop.numel(),
                          faces.data() + b * sm.face_crop.numel());
            }
            tvec[static_cast<size_t>(b)] = static_cast<int64_t>(rng.uniform_int(sched.T));
        }
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
        Tensor x_t = x0;
        for (int64_t b = 0; b < B; ++b) {
            double sa = std::sqrt(sched.alpha_bars[tvec[static_cast<size_t>(b)]]);
            double sb = std::sqrt(1.0 - sched.alpha_bars[tvec[static_cast<size_t>(b)]]);
            for (int64_t i = 0; i < 3 * H * W; ++i) {
                int64_t k = b * 3 * H * W + i;
                x_t[k] = sa * x0[k] + sb * eps[k];
            }
        }

        std::vector<int64_t> global_tokens = default_global_tokens();
        if (cfg.null_prompt_dropout > 0.0 && rng.uniform() < cfg.null_prompt_dropout)
            global_tokens = {nc.n_global_words - 1};

        RoutingTable routing = cfg.mask_source == "none"
                                   ? zero_routing(sites, B, N)
                                   : gt_routing(sites, gt_masks, cfg.binarize_gt_masks);
        bool need_heads = cfg.stage == 3 || cfg.joint_region_loss;
        ForwardOptions opts;
        opts.routing = &routing;
        opts.compute_heads = need_heads;
        opts.face = nc.face_enabled ? &faces : nullptr;

        Tensor net_in = assemble_conditions_batch(batch, x_t);
        DenoiserOutput out = net.forward(net_in, tvec, global_tokens, attr_tokens, opts);

        Var loss;
        double denoise_v = 0.0, region_v = 0.0;
        if (cfg.stage != 3) {
            loss = denoise_loss(out.eps, make_const(eps));
            denoise_v = loss->value[0];
            if (cfg.joint_region_loss && cfg.stage == 2) {
                std::vector<Var> preds;
                std::vector<Tensor> targets;
                for (const auto& m : out.masks) {
                    bool decoder = m.site.rfind("dec.", 0) == 0;
                    if (!decoder && !cfg.supervise_encoder_heads) continue;
                    preds.push_back(m.masks);
                    targets.push_back(downsample_area(gt_masks, m.masks->value.dim(2),
                                                      m.masks->value.dim(3), cfg.binarize_gt_masks));
                }
                Var rl = region_loss_sites(preds, targets);
                region_v = rl->value[0];
                loss = add(loss, rl);
            }
        } else {
            std::vector<Var> preds;
            std::vector<Tensor> targets;
            for (const auto& m : out.masks) {
                bool decoder = m.site.rfind("dec.", 0) == 0;
                if (!decoder && !cfg.supervise_encoder_heads) continue;
                preds.push_back(m.masks);
                targets.push_back(downsample_area(gt_masks, m.masks->value.dim(2),
                                                  m.masks->value.dim(3), cfg.binarize_gt_masks));
            }
            require(!preds.empty(), ErrorKind::Config, "stage 3 found no supervised heads");
            loss = region_loss_sites(preds, targets);
            region_v = loss->value[0];
        }
        double total = loss->value[0];
        if (!std::isfinite(total))
            fail(ErrorKind::Numeric, "loss diverged at step " + std::to_string(step));

        net.params().zero_grads();
        backward(loss);
        if (step == 1) result.disabled_groups_grad_free = groups_grad_free(net.params(), trainable);
        opt.step();

        if (static_cast<int64_t>(firsts.size()) < 100) firsts.push_back(total);
        lasts.push_back(total);
        if (static_cast<int64_t>(lasts.size()) > 100) lasts.erase(lasts.begin());

        if (step % cfg.log_every == 0 || step == 1 || step == cfg.steps) {
            MetricPoint p;
            p.step = step;
            p.denoise = denoise_v;
            p.region = region_v;
            p.total = total;
            p.lr = cfg.lr;
            p.wall_ms = std::chrono::duration<double, std::milli>(clock() - t_start).count();
            result.log.push_back(p);
            append_metric_line(metric_log_path, p);
        }
    }
    result.frozen_hash_after = frozen_groups_hash(net.params(), trainable);
    result.frozen_groups_unchanged = result.frozen_hash_before == result.frozen_hash_after;
    auto avg = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    result.first_window_avg = avg(firsts);
    result.last_window_avg = avg(lasts);
    return result;
}

TrainResult train_pose(PosePredictor& net, const PoseTrainConfig& cfg, const NoiseSchedule& sched,
                       const StoredDataset& ds, const std::vector<int64_t>& train_idx, uint64_t seed,
                       const std::string& metric_log_path) {
    require(!train_idx.empty(), ErrorKind::Config, "empty training split");
    int64_t B = cfg.batch_size, H = net.config().height, W = net.config().width;
    AdamW opt(net.params().all_vars(), cfg.lr);
    TrainResult result;
    Rng rng(mix_seed(seed, 0x705e));
    auto t_start = std::chrono::steady_clock::now();
    std::vector<double> firsts, lasts;
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        Tensor p0({B, 1, H, W}), eps({B, 1, H, W}), garment({B, 3, H, W});
        std::vector<int64_t> tvec(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) {
            const ToySample& sm =
                ds.samples[static_cast<size_t>(train_idx[rng.uniform_int(train_idx.size())])];
            std::copy(sm.pose_raster.data(), sm.pose_raster.data() + H * W, p0.data() + b * H * W);
            std::copy(sm.garment_image.data(), sm.garment_image.data() + 3 * H * W,
                      garment.data() + b * 3 * H * W);
            tvec[static_cast<size_t>(b)] = static_cast<int64_t>(rng.uniform_int(sched.T));
        }
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
        Tensor p_t = p0;
        for (int64_t b = 0; b < B; ++b) {
            double sa = std::sqrt(sched.alpha_bars[tvec[static_cast<size_t>(b)]]);
            double sb = std::sqrt(1.0 - sched.alpha_bars[tvec[static_cast<size_t>(b)]]);
            for (int64_t i = 0; i < H * W; ++i) {
                int64_t k = b * H * W + i;
                p_t[k] = sa * p0[k] + sb * eps[k];
            }
        }
        Var pred = net.forward(pose_net_input(p_t, garment), tvec);
        Var loss = pose_loss(pred, make_const(eps));
        double total = loss->value[0];
        if (!std::isfinite(total))
            fail(ErrorKind::Numeric, "pose loss diverged at step " + std::to_string(step));
        net.params().zero_grads();
        backward(loss);
        opt.step();
        if (static_cast<int64_t>(firsts.size()) < 100) firsts.push_back(total);
        lasts.push_back(total);
        if (static_cast<int64_t>(lasts.size()) > 100) lasts.erase(lasts.begin());
        if (step % cfg.log_every == 0 || step == 1 || step == cfg.steps) {
            MetricPoint p;
            p.step = step;
            p.denoise = total;
            p.total = total;
            p.lr = cfg.lr;
            p.wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
                    .count();
            result.log.push_back(p);
            append_metric_line(metric_log_path, p);
        }
    }
    auto avg = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    result.first_window_avg = avg(firsts);
    result.last_window_avg = avg(lasts);
    return result;
}

SmokeReport overfit_smoke(const DatasetSpec& base_spec, uint64_t seed, const SmokeOptions& opts) {
    DatasetSpec spec = base_spec;
    spec.size = 8;
    spec.face_enabled = false;
    spec.validate();
    StoredDataset ds;
    ds.spec = spec;
    for (int64_t i = 0; i < spec.size; ++i) ds.samples.push_back(generate_sample(spec, i));

    // pair images with rotated conditions when the negative control is on
    std::vector<const ToySample*> conds(static_cast<size_t>(spec.size));
    for (int64_t i = 0; i < spec.size; ++i) {
        int64_t src = opts.shuffle_labels ? (i + 1) % spec.size : i;
        conds[static_cast<size_t>(i)] = &ds.samples[static_cast<size_t>(src)];
    }

    NetConfig nc = NetConfig::for_dataset(spec, /*base=*/16, {1, 2, 2}, {1, 2}, /*text_dim=*/16);
    nc.norm_groups = 8;
    DenoiserNet net(nc, mix_seed(seed, 0xca11));
    NoiseSchedule sched = make_schedule(400, 1e-4, 0.02);
    auto sites = net.sites();
    int64_t B = spec.size, N = nc.n_attributes, H = nc.height, W = nc.width;

    AdamW opt(collect_trainable(net.params(), {ParamGroup::Denoiser}), opts.lr);
    Rng rng(mix_seed(seed, 0x0f17));

    // fixed probe: one (t, eps) pair per sample, reused at every evaluation
    std::vector<int64_t> probe_t(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) probe_t[static_cast<size_t>(b)] = (b * sched.T) / B + sched.T / (2 * B);
    Rng probe_rng(mix_seed(seed, 0x9e0b));
    Tensor probe_eps = Tensor::randn({B, 3, H, W}, probe_rng);

    Tensor x0({B, 3, H, W}), gt({B, N, H, W});
    std::vector<std::vector<int64_t>> attr_tokens(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        const ToySample& img = ds.samples[static_cast<size_t>(b)];
        std::copy(img.image.data(), img.image.data() + 3 * H * W, x0.data() + b * 3 * H * W);
        attr_tokens[static_cast<size_t>(b)] = conds[static_cast<size_t>(b)]->attr_tokens;
        std::copy(conds[static_cast<size_t>(b)]->region_masks.data(),
                  conds[static_cast<size_t>(b)]->region_masks.data() + N * H * W,
                  gt.data() + b * N * H * W);
    }
    RoutingTable routing = zero_routing(sites, B, N);
    ForwardOptions fopts;
    fopts.routing = &routing;
    fopts.compute_heads = false;

    auto eval_probe = [&]() {
        NoGradGuard ng;
        Tensor x_t = x0;
        for (int64_t b = 0; b < B; ++b) {
            double sa = std::sqrt(sched.alpha_bars[probe_t[static_cast<size_t>(b)]]);
            double sb = std::sqrt(1.0 - sched.alpha_bars[probe_t[static_cast<size_t>(b)]]);
            for (int64_t i = 0; i < 3 * H * W; ++i) {
                int64_t k = b * 3 * H * W + i;
                x_t[k] = sa * x0[k] + sb * probe_eps[k];
            }
        }
        DenoiserOutput out =
            net.forward(assemble_conditions_batch(conds, x_t), probe_t, default_global_tokens(),
                        attr_tokens, fopts);
        return denoise_loss(out.eps->value, probe_eps);
    };

    SmokeReport report;
    for (int64_t step = 1; step <= opts.budget_steps; ++step) {
        std::vector<int64_t> tvec(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b)
            tvec[static_cast<size_t>(b)] = static_cast<int64_t>(rng.uniform_int(sched.T));
        Tensor eps({B, 3, H, W});
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
        Tensor x_t = x0;
        for (int64_t b = 0; b < B; ++b) {
            double sa = std::sqrt(sched.alpha_bars[tvec[static_cast<size_t>(b)]]);
            double sb = std::sqrt(1.0 - sched.alpha_bars[tvec[static_cast<size_t>(b)]]);
            for (int64_t i = 0; i < 3 * H * W; ++i) {
                int64_t k = b * 3 * H * W + i;
                x_t[k] = sa * x0[k] + sb * eps[k];
            }
        }
        DenoiserOutput out = net.forward(assemble_conditions_batch(conds, x_t), tvec,
                                         default_global_tokens(), attr_tokens, fopts);
        Var loss = denoise_loss(out.eps, make_const(eps));
        if (!std::isfinite(loss->value[0]))
            fail(ErrorKind::Numeric, "smoke loss diverged at step " + std::to_string(step));
        net.params().zero_grads();
        backward(loss);
        opt.step();

        if (step % opts.eval_every == 0 || step == opts.budget_steps) {
            report.final_eval_loss = eval_probe();
            report.steps_used = step;
            if (report.final_eval_loss < opts.target) {
                report.passed = true;
                return report;
            }
        }
    }
    return report;
}

}  // namespace toyfashion
