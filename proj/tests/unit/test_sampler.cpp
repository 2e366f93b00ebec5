#include "doctest.h"

#include <cmath>
#include <map>

#include "toyfashion/sampler.hpp"

using namespace toyfashion;

namespace {

DatasetSpec tiny_spec() {
    DatasetSpec s;
    s.seed = 2;
    s.size = 8;
    s.height = 32;
    s.width = 32;
    s.vocabulary = AttributeVocabulary::default4();
    s.face_enabled = false;
    return s;
}

NetConfig tiny_cfg(const DatasetSpec& s) {
    NetConfig c = NetConfig::for_dataset(s, 8, {1, 2, 2}, {1, 2}, 8);
    c.norm_groups = 4;
    return c;
}

}  // namespace

namespace {
// zero-initialized residual projections make an untrained net the identity;
// scrambling every weight lets information actually flow in structural tests
void scramble_params(ParamStore& ps, uint64_t seed, double scale = 0.05) {
    Rng rng(seed);
    for (const auto& e : ps.entries())
        for (int64_t i = 0; i < e.var->value.numel(); ++i) e.var->value[i] += scale * rng.normal();
}
}  // namespace

TEST_CASE("inference timesteps are evenly spaced and end at T-1") {
    auto ts = inference_timesteps(1000, 50);
    CHECK(ts.size() == 50);
    CHECK(ts.back() == 999);
    for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] > ts[i - 1]);
    CHECK_THROWS_AS(inference_timesteps(10, 11), Error);
}

TEST_CASE("ddim with a perfect oracle reconstructs x0") {
    NoiseSchedule sched = make_schedule(100, 1e-4, 0.03);
    Rng rng(5);
    Tensor x0 = Tensor::uniform({1, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor eps0 = Tensor::randn(x0.shape(), rng);
    auto ts = inference_timesteps(sched.T, 10);
    Tensor x = forward_noise(x0, ts.back(), eps0, sched);
    for (int64_t i = static_cast<int64_t>(ts.size()) - 1; i >= 0; --i) {
        int64_t t = ts[i], t_prev = i > 0 ? ts[i - 1] : -1;
        double sa = std::sqrt(sched.alpha_bars[t]), sb = std::sqrt(1.0 - sched.alpha_bars[t]);
        Tensor eps(x.shape());
        for (int64_t k = 0; k < x.numel(); ++k) eps[k] = (x[k] - sa * x0[k]) / sb;
        x = ddim_step(x, t, t_prev, eps, sched);
    }
    for (int64_t k = 0; k < x.numel(); ++k) CHECK(std::abs(x[k] - x0[k]) < 1e-4);
}

TEST_CASE("two identical ddim runs are bit-identical") {
    NoiseSchedule sched = make_schedule(50, 1e-4, 0.05);
    Rng rng(7);
    Tensor x = Tensor::randn({1, 3, 4, 4}, rng);
    Tensor eps = Tensor::randn(x.shape(), rng);
    Tensor a = ddim_step(x, 30, 20, eps, sched);
    Tensor b = ddim_step(x, 30, 20, eps, sched);
    for (int64_t k = 0; k < a.numel(); ++k) CHECK(a[k] == b[k]);
}

TEST_CASE("ddpm posterior mean matches an independent recomputation") {
    NoiseSchedule sched = make_schedule(60, 1e-3, 0.04);
    Rng rng(9);
    Tensor x = Tensor::randn({2, 1, 3, 3}, rng);
    Tensor eps = Tensor::randn(x.shape(), rng);
    int64_t t = 37;
    Tensor got = ddpm_step(x, t, eps, sched, nullptr);
    // brute-force recompute of 1/sqrt(alpha) * (x - beta/sqrt(1-abar) eps)
    double alpha = 1.0 - sched.betas[t];
    double abar = 1.0;
    for (int64_t s = 0; s <= t; ++s) abar *= (1.0 - sched.betas[s]);
    for (int64_t k = 0; k < x.numel(); ++k) {
        double want = (x[k] - sched.betas[t] / std::sqrt(1.0 - abar) * eps[k]) / std::sqrt(alpha);
        CHECK(got[k] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ddpm_step(x, 0, eps, sched, nullptr), Error);
    CHECK_THROWS_AS(ddim_step(x, 10, 10, eps, sched), Error);
}

TEST_CASE("sampling is deterministic, preserves the garment exactly and logs the chain") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_cfg(spec);
    DenoiserNet net(cfg, 21);
    NoiseSchedule sched = make_schedule(40, 1e-4, 0.04);

    std::vector<ToySample> samples;
    for (int64_t i = 0; i < 2; ++i) samples.push_back(generate_sample(spec, i));
    SampleRequest req;
    for (auto& s : samples) req.conditions.push_back(&s);
    for (auto& s : samples) req.attr_tokens.push_back(s.attr_tokens);
    req.global_tokens = default_global_tokens();

    SamplerConfig scfg;
    scfg.kind = "ddim";
    scfg.steps = 6;
    scfg.seed = 77;
    scfg.cmi = true;

    SampleResult a = sample(net, sched, scfg, req);
    SampleResult b = sample(net, sched, scfg, req);
    for (int64_t i = 0; i < a.images.numel(); ++i) CHECK(a.images[i] == b.images[i]);

    // outpainting contract: garment pixels equal the condition exactly
    int64_t H = spec.height, W = spec.width;
    for (int64_t bi = 0; bi < 2; ++bi)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                if (samples[static_cast<size_t>(bi)].garment_mask.at3(0, y, x) > 0)
                    for (int64_t c = 0; c < 3; ++c)
                        CHECK(a.images.at4(bi, c, y, x) ==
                              samples[static_cast<size_t>(bi)].garment_image.at3(c, y, x));

    // range contract
    for (int64_t i = 0; i < a.images.numel(); ++i) {
        CHECK(a.images[i] >= 0.0);
        CHECK(a.images[i] <= 1.0);
    }

    // chain audit: one update per step; encoders use the cache except at the
    // first step; decoders always use their own heads
    std::map<int64_t, std::map<std::string, ChainEvent>> by_step;
    int64_t updates = 0;
    for (const auto& ev : a.chain_log) {
        if (ev.site == "update") {
            ++updates;
            continue;
        }
        by_step[ev.timestep][ev.site] = ev;
    }
    CHECK(updates == scfg.steps);
    auto ts = inference_timesteps(sched.T, scfg.steps);
    int64_t cache_steps = 0;
    for (size_t i = 0; i < ts.size(); ++i) {
        const auto& step_events = by_step.at(ts[i]);
        for (const auto& [site, ev] : step_events) {
            bool encoder = site.rfind("enc.", 0) == 0;
            if (!encoder) {
                CHECK(ev.source == "own_head");
            } else if (i + 1 == ts.size()) {
                CHECK(ev.source == "own_head");  // first (highest-t) step fallback
            } else {
                CHECK(ev.source == "cache");
                CHECK(ev.cache_source_timestep == ts[i + 1]);
                ++cache_steps;
            }
        }
    }
    CHECK(cache_steps == 2 * (scfg.steps - 1));
}

TEST_CASE("chain on/off and masks-to-one change the outputs once heads are distinctive") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_cfg(spec);
    DenoiserNet net(cfg, 23);
    // scramble so the decoder-head cache differs from the encoder heads and
    // the local branches actually contribute
    scramble_params(net.params(), 3, 0.2);
    NoiseSchedule sched = make_schedule(40, 1e-4, 0.04);
    std::vector<ToySample> samples{generate_sample(spec, 0)};
    SampleRequest req;
    req.conditions = {&samples[0]};
    req.attr_tokens = {samples[0].attr_tokens};
    req.global_tokens = default_global_tokens();

    SamplerConfig on;
    on.steps = 5;
    on.seed = 3;
    on.cmi = true;
    SamplerConfig off = on;
    off.cmi = false;
    SamplerConfig ones = on;
    ones.masks_to_one = true;

    Tensor img_on = sample(net, sched, on, req).images;
    Tensor img_off = sample(net, sched, off, req).images;
    Tensor img_ones = sample(net, sched, ones, req).images;
    double d1 = 0.0, d2 = 0.0;
    for (int64_t i = 0; i < img_on.numel(); ++i) {
        d1 = std::max(d1, std::abs(img_on[i] - img_off[i]));
        d2 = std::max(d2, std::abs(img_on[i] - img_ones[i]));
    }
    CHECK(d1 > 0.0);
    CHECK(d2 > 0.0);
}

TEST_CASE("ddpm sampling requires the full chain and runs it") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_cfg(spec);
    DenoiserNet net(cfg, 29);
    NoiseSchedule sched = make_schedule(6, 1e-3, 0.05);
    std::vector<ToySample> samples{generate_sample(spec, 1)};
    SampleRequest req;
    req.conditions = {&samples[0]};
    req.attr_tokens = {samples[0].attr_tokens};
    req.global_tokens = default_global_tokens();
    SamplerConfig bad;
    bad.kind = "ddpm";
    bad.steps = 3;
    CHECK_THROWS_AS(sample(net, sched, bad, req), Error);
    SamplerConfig good;
    good.kind = "ddpm";
    good.steps = 6;
    good.seed = 5;
    SampleResult r = sample(net, sched, good, req);
    CHECK(r.images.all_finite());
}
