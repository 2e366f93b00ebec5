#include "doctest.h"

#include <cmath>
#include <fstream>

#include "toyfashion/unet.hpp"

using namespace toyfashion;

namespace {

DatasetSpec tiny_spec() {
    DatasetSpec s;
    s.seed = 1;
    s.size = 8;
    s.height = 32;
    s.width = 32;
    s.vocabulary = AttributeVocabulary::default4();
    s.face_enabled = false;
    return s;
}

NetConfig tiny_net_config(bool face = false) {
    DatasetSpec s = tiny_spec();
    s.face_enabled = face;
    NetConfig c = NetConfig::for_dataset(s, /*base=*/8, {1, 2, 2}, {1, 2}, /*text_dim=*/8);
    c.norm_groups = 4;
    return c;
}

RoutingTable all_gt(const std::vector<BlockSpec>& sites, const Tensor& gt_full) {
    RoutingTable t;
    for (const auto& s : sites)
        t.entries[s.site_id()] = {MaskSource::GroundTruth, downsample_area(gt_full, s.height, s.width)};
    return t;
}

struct Batch {
    Tensor x_in;
    std::vector<int64_t> tvec;
    std::vector<std::vector<int64_t>> attr_tokens;
    Tensor gt;
    std::vector<ToySample> samples;
};

Batch make_batch(const DatasetSpec& spec, int64_t B, uint64_t seed) {
    Batch b;
    Rng rng(seed);
    Tensor x_t({B, 3, spec.height, spec.width});
    for (int64_t i = 0; i < x_t.numel(); ++i) x_t[i] = rng.normal();
    b.samples.reserve(static_cast<size_t>(B));
    std::vector<const ToySample*> ptrs;
    b.gt = Tensor({B, spec.vocabulary.n(), spec.height, spec.width});
    for (int64_t i = 0; i < B; ++i) {
        b.samples.push_back(generate_sample(spec, i));
        b.attr_tokens.push_back(b.samples.back().attr_tokens);
        b.tvec.push_back(static_cast<int64_t>(rng.uniform_int(50)));
        std::copy(b.samples.back().region_masks.data(),
                  b.samples.back().region_masks.data() + b.gt.numel() / B,
                  b.gt.data() + i * (b.gt.numel() / B));
    }
    for (auto& s : b.samples) ptrs.push_back(&s);
    b.x_in = assemble_conditions_batch(ptrs, x_t);
    return b;
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

TEST_CASE("assemble_conditions produces the documented channel layout") {
    DatasetSpec spec = tiny_spec();
    spec.height = spec.width = 64;
    ToySample s = generate_sample(spec, 0);
    Rng rng(5);
    Tensor x_t = Tensor::randn({3, 64, 64}, rng);
    Tensor in = assemble_conditions(s, x_t);
    CHECK(in.shape() == std::vector<int64_t>{8, 64, 64});
    // golden checksum of the canonical order [x_t | garment | mask | pose]
    uint64_t golden = in.content_hash();
    // a permuted order must break the checksum
    Tensor permuted({8, 64, 64});
    int64_t hw = 64 * 64;
    std::copy(in.data() + 3 * hw, in.data() + 6 * hw, permuted.data());            // garment first
    std::copy(in.data(), in.data() + 3 * hw, permuted.data() + 3 * hw);            // then x_t
    std::copy(in.data() + 6 * hw, in.data() + 8 * hw, permuted.data() + 6 * hw);
    CHECK(permuted.content_hash() != golden);
    // order is [x_t | garment | garment_mask | pose]
    for (int64_t i = 0; i < hw; ++i) {
        CHECK(in[i] == x_t[i]);
        CHECK(in[3 * hw + i] == s.garment_image[i]);
        CHECK(in[6 * hw + i] == s.garment_mask[i]);
        CHECK(in[7 * hw + i] == s.pose_raster[i]);
    }
}

TEST_CASE("layer shapes are a pure function of the config") {
    NetConfig cfg = tiny_net_config();
    DenoiserNet a(cfg, 1), b(cfg, 999);
    CHECK(a.params().shapes_manifest() == b.params().shapes_manifest());
    CHECK(a.params().total_parameters() == b.params().total_parameters());
    NetConfig other = cfg;
    other.base_channels = 16;
    DenoiserNet c(other, 1);
    CHECK(a.params().shapes_manifest() != c.params().shapes_manifest());
}

TEST_CASE("default-config shape manifest matches the committed golden file") {
    DatasetSpec spec;
    spec.seed = 0;
    spec.size = 1;
    spec.height = spec.width = 64;
    spec.vocabulary = AttributeVocabulary::default4();
    spec.face_enabled = false;
    NetConfig cfg = NetConfig::for_dataset(spec, 64, {1, 2, 4}, {1, 2}, 32);
    DenoiserNet net(cfg, 0);
    std::ifstream f(std::string(TOYFASHION_SOURCE_DIR) + "/tests/data/shapes.manifest");
    REQUIRE(f.good());
    std::string golden((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(net.params().shapes_manifest() == golden);
}

TEST_CASE("sites are mirror-ordered and the last decoder block is the highest-resolution one") {
    NetConfig cfg = tiny_net_config();
    DenoiserNet net(cfg, 3);
    auto sites = net.sites();
    REQUIRE(sites.size() == 4);
    CHECK(sites[0].site_id() == "enc.l1");
    CHECK(sites[1].site_id() == "enc.l2");
    CHECK(sites[2].site_id() == "dec.l2");
    CHECK(sites[3].site_id() == "dec.l1");
    CHECK(net.last_decoder_site().site_id() == "dec.l1");
    CHECK(net.last_decoder_site().height == 16);
}

TEST_CASE("forward output matches the input resolution and is deterministic") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_net_config();
    DenoiserNet net(cfg, 7);
    Batch b = make_batch(spec, 2, 11);
    RoutingTable routing = all_gt(net.sites(), b.gt);
    ForwardOptions opts;
    opts.routing = &routing;
    NoGradGuard ng;
    DenoiserOutput o1 = net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts);
    DenoiserOutput o2 = net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts);
    CHECK(o1.eps->value.shape() == std::vector<int64_t>{2, 3, 32, 32});
    for (int64_t i = 0; i < o1.eps->value.numel(); ++i) CHECK(o1.eps->value[i] == o2.eps->value[i]);
    CHECK(o1.masks.size() == 4);
    for (const auto& m : o1.masks) {
        CHECK(m.masks->value.dim(1) == 4);
        for (int64_t i = 0; i < m.masks->value.numel(); ++i) {
            CHECK(m.masks->value[i] > 0.0);
            CHECK(m.masks->value[i] < 1.0);
        }
    }
}

TEST_CASE("zero masks silence the local branches entirely") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_net_config();
    Batch b = make_batch(spec, 2, 13);
    RoutingTable zero;
    DenoiserNet net(cfg, 7);
    for (const auto& s : net.sites())
        zero.entries[s.site_id()] = {MaskSource::GroundTruth,
                                     Tensor::zeros({2, cfg.n_attributes, s.height, s.width})};
    ForwardOptions opts;
    opts.routing = &zero;
    opts.compute_heads = false;
    NoGradGuard ng;
    DenoiserOutput base = net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts);
    // scrambling every local-branch parameter must not change the output
    Rng rng(99);
    for (const auto& e : net.params().entries())
        if (e.group == ParamGroup::Local)
            for (int64_t i = 0; i < e.var->value.numel(); ++i) e.var->value[i] = rng.normal();
    DenoiserOutput scrambled = net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts);
    for (int64_t i = 0; i < base.eps->value.numel(); ++i)
        CHECK(base.eps->value[i] == scrambled.eps->value[i]);
}

TEST_CASE("routing table must cover every site") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_net_config();
    DenoiserNet net(cfg, 7);
    Batch b = make_batch(spec, 1, 17);
    RoutingTable partial = all_gt(net.sites(), b.gt);
    partial.entries.erase("dec.l1");
    ForwardOptions opts;
    opts.routing = &partial;
    NoGradGuard ng;
    CHECK_THROWS_AS(net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts), Error);
}

TEST_CASE("ground-truth routing applies exactly the resized masks") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_net_config();
    DenoiserNet net(cfg, 7);
    Batch b = make_batch(spec, 2, 19);
    RoutingTable routing = all_gt(net.sites(), b.gt);
    ForwardTrace trace;
    ForwardOptions opts;
    opts.routing = &routing;
    opts.trace = &trace;
    opts.compute_heads = true;
    NoGradGuard ng;
    net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts);
    REQUIRE(trace.sites.size() == 4);
    for (const auto& rec : trace.sites) {
        Tensor want = downsample_area(b.gt, rec.h, rec.w);
        REQUIRE(rec.applied.shape() == want.shape());
        for (int64_t i = 0; i < want.numel(); ++i) CHECK(rec.applied[i] == want[i]);
        CHECK(rec.source == MaskSource::GroundTruth);
        CHECK_FALSE(rec.predicted.empty());
    }
}

TEST_CASE("zero garment mask still runs (full outpaint degenerate case)") {
    DatasetSpec spec = tiny_spec();
    NetConfig cfg = tiny_net_config();
    DenoiserNet net(cfg, 7);
    Batch b = make_batch(spec, 1, 23);
    // zero out the garment channels (3..6) and the mask channel
    int64_t hw = spec.height * spec.width;
    for (int64_t i = 3 * hw; i < 7 * hw; ++i) b.x_in[i] = 0.0;
    RoutingTable routing = all_gt(net.sites(), b.gt);
    ForwardOptions opts;
    opts.routing = &routing;
    NoGradGuard ng;
    DenoiserOutput out = net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts);
    CHECK(out.eps->value.all_finite());
}

TEST_CASE("face attach widens the canvas and the net discards the extension") {
    DatasetSpec spec = tiny_spec();
    spec.face_enabled = true;
    NetConfig cfg = tiny_net_config(/*face=*/true);
    DenoiserNet net(cfg, 7);
    scramble_params(net.params(), 71, 0.1);
    int64_t B = 2, H = spec.height, W = spec.width;
    Batch b = make_batch(spec, B, 29);
    Tensor faces({B, 3, H / 4, W / 4});
    for (int64_t i = 0; i < B; ++i) {
        ToySample s = generate_sample(spec, i);
        std::copy(s.face_crop.data(), s.face_crop.data() + s.face_crop.numel(),
                  faces.data() + i * s.face_crop.numel());
    }

    Tensor widened = attach_face(b.x_in, faces, true);
    CHECK(widened.shape() == std::vector<int64_t>{B, 8, H, 2 * W});
    // main canvas preserved; extension zero outside the image channels
    for (int64_t c = 0; c < 8; ++c)
        for (int64_t y = 0; y < H; ++y) {
            CHECK(widened.at4(0, c, y, 0) == b.x_in.at4(0, c, y, 0));
            if (c >= 3) CHECK(widened.at4(0, c, y, W + 3) == 0.0);
        }
    CHECK_THROWS_AS(attach_face(b.x_in, faces, false), Error);

    RoutingTable routing = all_gt(net.sites(), b.gt);
    ForwardOptions opts;
    opts.routing = &routing;
    opts.face = &faces;
    NoGradGuard ng;
    DenoiserOutput out = net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts);
    CHECK(out.eps->value.shape() == std::vector<int64_t>{B, 3, H, W});
    for (const auto& m : out.masks)
        CHECK(m.masks->value.dim(3) == W >> ((m.site == "enc.l1" || m.site == "dec.l1") ? 1 : 2));

    // face information flows: zeroed faces change the output
    Tensor zeros = Tensor::zeros(faces.shape());
    ForwardOptions opts2;
    opts2.routing = &routing;
    opts2.face = &zeros;
    DenoiserOutput out2 = net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts2);
    double diff = 0.0;
    for (int64_t i = 0; i < out.eps->value.numel(); ++i)
        diff = std::max(diff, std::abs(out.eps->value[i] - out2.eps->value[i]));
    CHECK(diff > 0.0);

    // missing face crop on a face-enabled net is a configuration error
    ForwardOptions opts3;
    opts3.routing = &routing;
    CHECK_THROWS_AS(net.forward(b.x_in, b.tvec, default_global_tokens(), b.attr_tokens, opts3), Error);
}

TEST_CASE("doubling the local output projection shifts rada by exactly the gated delta") {
    Rng rng(61);
    ParamStore ps;
    RadaWeights w;
    w.init(ps, "s", 6, 5, 6, rng);
    for (const char* n : {"s.gca.o.w", "s.lca.o.w"}) {
        Var v = ps.find(n);
        for (int64_t i = 0; i < v->value.numel(); ++i) v->value[i] = 0.5 * rng.normal();
    }
    Var f = make_const(Tensor::randn({1, 4, 6}, rng));
    PromptBundle prompts;
    prompts.global_emb = make_const(Tensor::randn({1, 2, 5}, rng));
    prompts.attr_embs.push_back(make_const(Tensor::randn({1, 1, 5}, rng)));
    Tensor mask = Tensor::uniform({1, 1, 4}, rng, 0.0, 1.0);

    Var base = rada(f, prompts, make_const(mask), w);
    Var g = gca(f, prompts.global_emb, w);
    for (const char* n : {"s.lca.o.w", "s.lca.o.b"}) {
        Var v = ps.find(n);
        for (int64_t i = 0; i < v->value.numel(); ++i) v->value[i] *= 2.0;
    }
    Var doubled = rada(f, prompts, make_const(mask), w);
    for (int64_t i = 0; i < base->value.numel(); ++i) {
        double local = base->value[i] - g->value[i];
        CHECK(doubled->value[i] - base->value[i] == doctest::Approx(local).epsilon(1e-9));
    }
}
