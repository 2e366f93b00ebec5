#include "doctest.h"

#include <cmath>

#include "toyfashion/losses.hpp"
#include "toyfashion/nn.hpp"

using namespace toyfashion;

TEST_CASE("denoise loss basics and brute-force agreement") {
    Rng rng(3);
    Tensor a = Tensor::randn({2, 3, 5, 5}, rng);
    CHECK(denoise_loss(a, a) == 0.0);

    Tensor zero = Tensor::zeros({4, 4});
    Tensor ones = Tensor::full({4, 4}, 1.0);
    CHECK(denoise_loss(zero, ones) == doctest::Approx(1.0).epsilon(1e-15));

    Tensor b = Tensor::randn(a.shape(), rng);
    double brute = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) brute += (a[i] - b[i]) * (a[i] - b[i]);
    brute /= static_cast<double>(a.numel());
    CHECK(std::abs(denoise_loss(a, b) - brute) <= 1e-12);

    Tensor c = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(denoise_loss(a, c), Error);
}

TEST_CASE("pose loss is the same formula") {
    Rng rng(5);
    Tensor a = Tensor::randn({1, 1, 8, 8}, rng);
    Tensor b = Tensor::randn({1, 1, 8, 8}, rng);
    CHECK(pose_loss(a, b) == denoise_loss(a, b));
    CHECK(pose_loss(a, a) == 0.0);
}

TEST_CASE("area downsampling of masks") {
    // 2x2 checker -> 1x1 mean 0.5; binarize option thresholds at 0.5
    Tensor m = Tensor::from_vector({1, 2, 2}, {0, 1, 0, 1});
    Tensor d = downsample_area(m, 1, 1);
    CHECK(d[0] == doctest::Approx(0.5).epsilon(1e-15));
    Tensor db = downsample_area(m, 1, 1, true);
    CHECK(db[0] == 1.0);  // >= 0.5 rounds up
    CHECK_THROWS_AS(downsample_area(m, 3, 3), Error);
}

TEST_CASE("region loss conventions") {
    // pred == resized gt -> 0
    Tensor gt = Tensor::zeros({2, 4, 4});
    for (int64_t i = 0; i < 8; ++i) gt[i] = 1.0;  // half of channel 0
    std::vector<BlockMaskSet> sites;
    sites.push_back({"dec.l1", downsample_area(gt, 2, 2)});
    CHECK(region_loss(sites, gt) == doctest::Approx(0.0).epsilon(1e-15));

    // pred = 0.5 everywhere on balanced binary gt -> 0.25 under the
    // spatial-mean convention
    Tensor gt_bal = Tensor::from_vector({1, 2, 2}, {1, 1, 0, 0});
    std::vector<BlockMaskSet> half;
    half.push_back({"dec.l0", Tensor::full({1, 2, 2}, 0.5)});
    CHECK(region_loss(half, gt_bal) == doctest::Approx(0.25).epsilon(1e-12));

    // single site, N=1, 1x1, pred 0.2 vs gt 1 -> 0.64
    std::vector<BlockMaskSet> tiny;
    tiny.push_back({"dec.l0", Tensor::full({1, 1, 1}, 0.2)});
    Tensor gt_one = Tensor::full({1, 1, 1}, 1.0);
    CHECK(region_loss(tiny, gt_one) == doctest::Approx(0.64).epsilon(1e-12));

    // several sites average
    std::vector<BlockMaskSet> two;
    two.push_back({"dec.l0", Tensor::full({1, 1, 1}, 0.2)});
    two.push_back({"dec.l1", Tensor::full({1, 1, 1}, 1.0)});
    CHECK(region_loss(two, gt_one) == doctest::Approx(0.32).epsilon(1e-12));

    // channel-count mismatch
    std::vector<BlockMaskSet> bad;
    bad.push_back({"dec.l0", Tensor::full({3, 2, 2}, 0.5)});
    CHECK_THROWS_AS(region_loss(bad, gt_bal), Error);

    // brute-force agreement on random inputs
    Rng rng(11);
    Tensor gtr({3, 8, 8});
    for (int64_t i = 0; i < gtr.numel(); ++i) gtr[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    std::vector<BlockMaskSet> rnd;
    rnd.push_back({"dec.l0", Tensor::uniform({3, 4, 4}, rng, 0.0, 1.0)});
    rnd.push_back({"dec.l1", Tensor::uniform({3, 2, 2}, rng, 0.0, 1.0)});
    double brute = 0.0;
    for (const auto& s : rnd) {
        Tensor g = downsample_area(gtr, s.masks.dim(1), s.masks.dim(2));
        double acc = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) acc += (s.masks[i] - g[i]) * (s.masks[i] - g[i]);
        brute += acc / static_cast<double>(g.numel());
    }
    brute /= 2.0;
    CHECK(std::abs(region_loss(rnd, gtr) - brute) <= 1e-12);
}

TEST_CASE("loss gradients through a small conv net match finite differences") {
    Rng rng(21);
    ParamStore ps;
    Conv2dLayer c1, c2, head;
    GroupNormLayer gn;
    c1.init(ps, "c1", ParamGroup::Denoiser, 3, 8, 3, 1, 1, rng);
    gn.init(ps, "gn", ParamGroup::Denoiser, 8, 4);
    c2.init(ps, "c2", ParamGroup::Denoiser, 8, 3, 3, 1, 1, rng);
    head.init(ps, "head", ParamGroup::MaskHead, 8, 2, 3, 1, 1, rng);

    Tensor x = Tensor::randn({1, 3, 6, 6}, rng);
    Tensor eps_true = Tensor::randn({1, 3, 6, 6}, rng);
    Tensor gt({1, 2, 6, 6});
    for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;

    auto build = [&] {
        Var h = silu(gn.forward(c1.forward(make_const(x))));
        Var eps = c2.forward(h);
        Var masks = sigmoid(head.forward(h));
        Var l1 = denoise_loss(eps, make_const(eps_true));
        Var l2 = region_loss_sites({masks}, {gt});
        return add(l1, l2);
    };

    Var loss = build();
    ps.zero_grads();
    backward(loss);

    double h = 1e-6;
    for (const auto& e : ps.entries()) {
        for (int64_t i = 0; i < e.var->value.numel(); ++i) {
            double keep = e.var->value[i];
            e.var->value[i] = keep + h;
            double up = build()->value[0];
            e.var->value[i] = keep - h;
            double dn = build()->value[0];
            e.var->value[i] = keep;
            double numeric = (up - dn) / (2.0 * h);
            double analytic = e.var->has_grad() ? e.var->grad[i] : 0.0;
            // relative error <= 1e-4 in double precision
            CHECK(std::abs(analytic - numeric) <= 1e-4 * (1.0 + std::abs(numeric)));
        }
    }
}

TEST_CASE("adamw updates only parameters that received gradients") {
    Rng rng(31);
    Var a = make_leaf(Tensor::randn({4}, rng));
    Var b = make_leaf(Tensor::randn({4}, rng));
    Tensor a_before = a->value;
    Tensor b_before = b->value;
    AdamW opt({a, b}, 1e-2);
    Var loss = mse(a, make_const(Tensor::zeros({4})));
    backward(loss);
    opt.step();
    for (int64_t i = 0; i < 4; ++i) CHECK(b->value[i] == b_before[i]);
    for (int64_t i = 0; i < 4; ++i) CHECK(a->value[i] != a_before[i]);
}
