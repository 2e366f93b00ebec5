#include "toyfashion/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace toyfashion {

nlohmann::json SamplerConfig::to_json() const {
    return {{"kind", kind},
            {"steps", steps},
            {"seed", seed},
            {"cmi", cmi},
            {"uniform_fallback", uniform_fallback},
            {"masks_to_one", masks_to_one},
            {"clamp_x0", clamp_x0},
            {"guidance_scale", guidance_scale}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
    SamplerConfig c;
    c.kind = j.value("kind", c.kind);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.cmi = j.value("cmi", c.cmi);
    c.uniform_fallback = j.value("uniform_fallback", c.uniform_fallback);
    c.masks_to_one = j.value("masks_to_one", c.masks_to_one);
    c.clamp_x0 = j.value("clamp_x0", c.clamp_x0);
    c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
    return c;
}

Tensor ddpm_step(const Tensor& x_t, int64_t t, const Tensor& eps_pred, const NoiseSchedule& sched,
                 const Tensor* noise) {
    require(t >= 1 && t < sched.T, ErrorKind::Bounds, "ddpm_step: t must be in [1,T)");
    require(x_t.same_shape(eps_pred), ErrorKind::Shape, "ddpm_step: shape mismatch");
    double beta = sched.betas[t];
    double abar = sched.alpha_bars[t];
    double abar_prev = sched.alpha_bars[t - 1];
    double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alphas[t]);
    double coef = beta / std::sqrt(1.0 - abar);
    double sigma = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
    Tensor out = x_t;
    double* d = out.data();
    const double* e = eps_pred.data();
    const double* z = noise ? noise->data() : nullptr;
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        d[i] = inv_sqrt_alpha * (d[i] - coef * e[i]);
        if (z) d[i] += sigma * z[i];
    }
    return out;
}

Tensor ddim_step(const Tensor& x_t, int64_t t, int64_t t_prev, const Tensor& eps_pred,
                 const NoiseSchedule& sched) {
    require(t >= 0 && t < sched.T, ErrorKind::Bounds, "ddim_step: t out of range");
    require(t_prev < t, ErrorKind::Bounds, "ddim_step: t_prev must be smaller than t");
    require(x_t.same_shape(eps_pred), ErrorKind::Shape, "ddim_step: shape mismatch");
    double abar = sched.alpha_bars[t];
    double abar_prev = t_prev >= 0 ? sched.alpha_bars[t_prev] : 1.0;
    double sa = std::sqrt(abar), sb = std::sqrt(1.0 - abar);
    double sap = std::sqrt(abar_prev), sbp = std::sqrt(1.0 - abar_prev);
    Tensor out = x_t;
    double* d = out.data();
    const double* e = eps_pred.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        double x0 = (d[i] - sb * e[i]) / sa;
        d[i] = sap * x0 + sbp * e[i];
    }
    return out;
}

std::vector<int64_t> inference_timesteps(int64_t T, int64_t steps) {
    require(steps >= 1 && steps <= T, ErrorKind::Config, "steps must be in [1,T]");
    // evenly spaced, strictly increasing, ending at T-1
    std::vector<int64_t> ts(steps);
    for (int64_t i = 0; i < steps; ++i) ts[i] = ((i + 1) * T) / steps - 1;
    return ts;
}

namespace {

// blend the garment condition (noised to level t, or clean when t < 0) into
// the masked region
void impose_garment(Tensor& x, const Tensor& garment, const Tensor& mask, int64_t t,
                    const NoiseSchedule& sched, Rng& rng) {
    int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
                if (mask.at4(b, 0, y, xx) <= 0.0) continue;
                for (int64_t c = 0; c < 3; ++c) {
                    double g = garment.at4(b, c, y, xx);
                    if (t >= 0) {
                        double sa = std::sqrt(sched.alpha_bars[t]);
                        double sb = std::sqrt(1.0 - sched.alpha_bars[t]);
                        x.at4(b, c, y, xx) = sa * g + sb * rng.normal();
                    } else {
                        x.at4(b, c, y, xx) = g;
                    }
                }
            }
}

// Replaces eps with the value consistent with the implied x0 clipped to the
// image range; pixel-space trajectories stay inside the data domain.
void clamp_implied_x0(Tensor& eps, const Tensor& x_t, int64_t t, const NoiseSchedule& sched) {
    double sa = std::sqrt(sched.alpha_bars[t]);
    double sb = std::sqrt(1.0 - sched.alpha_bars[t]);
    double* e = eps.data();
    const double* x = x_t.data();
    int64_t n = eps.numel();
    for (int64_t i = 0; i < n; ++i) {
        double x0 = (x[i] - sb * e[i]) / sa;
        double c = std::clamp(x0, 0.0, 1.0);
        if (c != x0) e[i] = (x[i] - sa * c) / sb;
    }
}

}  // namespace

SampleResult sample(DenoiserNet& model, const NoiseSchedule& sched, const SamplerConfig& cfg,
                    const SampleRequest& req) {
    const NetConfig& nc = model.config();
    int64_t B = static_cast<int64_t>(req.conditions.size());
    require(B >= 1, ErrorKind::Config, "sample: empty batch");
    require(req.attr_tokens.size() == req.conditions.size(), ErrorKind::Config,
            "sample: one token set per condition");
    require(cfg.kind == "ddim" || cfg.kind == "ddpm", ErrorKind::Config,
            "sample: unknown sampler kind " + cfg.kind);
    if (cfg.kind == "ddpm")
        require(cfg.steps == sched.T, ErrorKind::Config, "ddpm sampling runs the full chain");
    for (const auto* c : req.conditions)
        require(c->image.dim(1) == nc.height && c->image.dim(2) == nc.width, ErrorKind::Config,
                "sample: condition resolution does not match the model");

    int64_t H = nc.height, W = nc.width, N = nc.n_attributes;
    Rng rng(cfg.seed);

    Tensor garment({B, 3, H, W}), gmask({B, 1, H, W});
    for (int64_t b = 0; b < B; ++b) {
        std::copy(req.conditions[b]->garment_image.data(), req.conditions[b]->garment_image.data() + 3 * H * W,
                  garment.data() + b * 3 * H * W);
        std::copy(req.conditions[b]->garment_mask.data(), req.conditions[b]->garment_mask.data() + H * W,
                  gmask.data() + b * H * W);
    }

    Tensor x = Tensor::randn({B, 3, H, W}, rng);
    auto ts = inference_timesteps(sched.T, cfg.steps);
    impose_garment(x, garment, gmask, ts.back(), sched, rng);

    MaskCache cache = begin_run();
    SampleResult result;
    std::string last_decoder = model.last_decoder_site().site_id();
    auto sites = model.sites();


    for (int64_t i = static_cast<int64_t>(ts.size()) - 1; i >= 0; --i) {
        int64_t t = ts[i];
        int64_t t_prev = i > 0 ? ts[i - 1] : -1;

        RoutingTable routing = route(cache, t, sites, cfg.cmi, cfg.uniform_fallback, B, N);
        if (cfg.masks_to_one)
            for (const auto& s : sites)
                routing.entries[s.site_id()] = {MaskSource::GroundTruth,
                                                Tensor::full({B, N, s.height, s.width}, 1.0)};
        for (const auto& [site, entry] : routing.entries) {
            ChainEvent ev;
            ev.timestep = t;
            ev.site = site;
            ev.source = mask_source_name(entry.source);
            ev.checksum = entry.source == MaskSource::Cache ? cache.stored.content_hash() : 0;
            ev.cache_source_timestep = entry.source == MaskSource::Cache ? cache.source_timestep : -1;
            result.chain_log.push_back(std::move(ev));
        }

        bool want_trace = std::find(req.trace_timesteps.begin(), req.trace_timesteps.end(), t) !=
                          req.trace_timesteps.end();
        ForwardTrace trace;

        NoGradGuard ng;
        ForwardOptions opts;
        opts.routing = &routing;
        opts.compute_heads = true;
        opts.face = req.faces;
        opts.trace = want_trace ? &trace : nullptr;
        Tensor net_in = assemble_conditions_batch(req.conditions, x);
        std::vector<int64_t> tvec(static_cast<size_t>(B), t);
        DenoiserOutput out = model.forward(net_in, tvec, req.global_tokens, req.attr_tokens, opts);
        Tensor eps = out.eps->value;

        if (cfg.guidance_scale != 1.0) {
            // Unconditional pass: same global prompt, every local gate zeroed.
            // Guidance then amplifies exactly the mask-gated attribute
            // direction, which the stage-1 objective trained directly.
            RoutingTable null_routing;
            for (const auto& s : sites)
                null_routing.entries[s.site_id()] = {MaskSource::GroundTruth,
                                                     Tensor::zeros({B, N, s.height, s.width})};
            ForwardOptions uopts;
            uopts.routing = &null_routing;
            uopts.compute_heads = false;
            uopts.face = req.faces;
            DenoiserOutput uncond =
                model.forward(net_in, tvec, req.global_tokens, req.attr_tokens, uopts);
            const double* eu = uncond.eps->value.data();
            double* ec = eps.data();
            for (int64_t k = 0; k < eps.numel(); ++k)
                ec[k] = eu[k] + cfg.guidance_scale * (ec[k] - eu[k]);
        }

        if (cfg.clamp_x0) clamp_implied_x0(eps, x, t, sched);

        if (want_trace) result.traces.emplace_back(t, std::move(trace));

        // cache update comes from the designated last decoder block
        const SiteMasks* last = nullptr;
        for (const auto& m : out.masks)
            if (m.site == last_decoder) last = &m;
        require(last != nullptr, ErrorKind::Provenance, "forward did not yield the last decoder mask");
        cache = update(cache, BlockMaskSet{last->site, last->masks->value}, t, last_decoder);
        {
            ChainEvent ev;
            ev.timestep = t;
            ev.site = "update";
            ev.source = "update";
            ev.checksum = cache.stored.content_hash();
            ev.cache_source_timestep = t;
            result.chain_log.push_back(std::move(ev));
        }

        if (cfg.kind == "ddim") {
            x = ddim_step(x, t, t_prev, eps, sched);
        } else {
            if (t >= 1) {
                Tensor z = Tensor::randn(x.shape(), rng);
                x = ddpm_step(x, t, eps, sched, &z);
            } else {
                x = ddim_step(x, t, -1, eps, sched);  // final projection to x0
            }
        }
        if (t_prev >= 0) {
            impose_garment(x, garment, gmask, t_prev, sched, rng);
        } else {
            for (int64_t k = 0; k < x.numel(); ++k) x[k] = std::clamp(x[k], 0.0, 1.0);
            impose_garment(x, garment, gmask, -1, sched, rng);
        }
    }
    result.images = std::move(x);
    return result;
}

}  // namespace toyfashion
