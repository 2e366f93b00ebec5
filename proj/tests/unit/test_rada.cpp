#include "doctest.h"

#include <cmath>
#include <vector>

#include "toyfashion/rada.hpp"

using namespace toyfashion;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat tensor_rows(const Tensor& t, int64_t rows, int64_t cols, int64_t offset = 0) {
    Mat m(static_cast<size_t>(rows), std::vector<double>(static_cast<size_t>(cols)));
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) m[r][c] = t[offset + r * cols + c];
    return m;
}

// brute-force single-head cross-attention, plain loops, no shared code
Mat bf_attention(const Mat& f, const Mat& ctx, const Tensor& wq, const Tensor& bq, const Tensor& wk,
                 const Tensor& bk, const Tensor& wv, const Tensor& bv, const Tensor& wo,
                 const Tensor& bo, int64_t d) {
    size_t P = f.size(), L = ctx.size(), C = f[0].size(), D = ctx[0].size();
    auto lin = [](const Mat& x, const Tensor& w, const Tensor& b, size_t in, size_t out) {
        Mat y(x.size(), std::vector<double>(out, 0.0));
        for (size_t r = 0; r < x.size(); ++r)
            for (size_t o = 0; o < out; ++o) {
                double s = b[static_cast<int64_t>(o)];
                for (size_t i = 0; i < in; ++i)
                    s += x[r][i] * w[static_cast<int64_t>(i * out + o)];
                y[r][o] = s;
            }
        return y;
    };
    Mat q = lin(f, wq, bq, C, static_cast<size_t>(d));
    Mat k = lin(ctx, wk, bk, D, static_cast<size_t>(d));
    Mat v = lin(ctx, wv, bv, D, static_cast<size_t>(d));
    Mat h(P, std::vector<double>(static_cast<size_t>(d), 0.0));
    for (size_t p = 0; p < P; ++p) {
        std::vector<double> s(L);
        double mx = -1e300;
        for (size_t l = 0; l < L; ++l) {
            double dot = 0.0;
            for (size_t i = 0; i < static_cast<size_t>(d); ++i) dot += q[p][i] * k[l][i];
            s[l] = dot / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[l]);
        }
        double sum = 0.0;
        for (size_t l = 0; l < L; ++l) {
            s[l] = std::exp(s[l] - mx);
            sum += s[l];
        }
        for (size_t l = 0; l < L; ++l)
            for (size_t i = 0; i < static_cast<size_t>(d); ++i) h[p][i] += (s[l] / sum) * v[l][i];
    }
    return lin(h, wo, bo, static_cast<size_t>(d), C);
}

struct Case {
    ParamStore ps;
    RadaWeights w;
    int64_t B = 2, P = 4, C = 8, D = 8, d = 8;
    Var f;
    PromptBundle prompts;
    Tensor masks;
    int64_t N = 3, Lg = 3, Ll = 2;

    explicit Case(uint64_t seed, int64_t attr_len = 2) {
        Ll = attr_len;
        Rng rng(seed);
        w.init(ps, "site", C, D, d, rng);
        // non-degenerate output projections (zero-initialized by default)
        for (const char* n : {"site.gca.o.w", "site.lca.o.w"}) {
            Var v = ps.find(n);
            for (int64_t i = 0; i < v->value.numel(); ++i) v->value[i] = 0.3 * rng.normal();
        }
        f = make_const(Tensor::randn({B, P, C}, rng));
        prompts.global_emb = make_const(Tensor::randn({B, Lg, D}, rng));
        for (int64_t i = 0; i < N; ++i)
            prompts.attr_embs.push_back(make_const(Tensor::randn({B, Ll, D}, rng)));
        masks = Tensor::uniform({B, N, P}, rng, 0.0, 1.0);
    }

    Tensor brute_force() const {
        auto& pw = const_cast<ParamStore&>(ps);
        auto t = [&](const char* n) { return pw.find(n)->value; };
        Tensor out({B, P, C});
        for (int64_t b = 0; b < B; ++b) {
            Mat fb = tensor_rows(f->value, P, C, b * P * C);
            Mat g = bf_attention(fb, tensor_rows(prompts.global_emb->value, Lg, D, b * Lg * D),
                                 t("site.gca.q.w"), t("site.gca.q.b"), t("site.gca.k.w"),
                                 t("site.gca.k.b"), t("site.gca.v.w"), t("site.gca.v.b"),
                                 t("site.gca.o.w"), t("site.gca.o.b"), d);
            for (int64_t i = 0; i < N; ++i) {
                Mat l = bf_attention(fb, tensor_rows(prompts.attr_embs[static_cast<size_t>(i)]->value,
                                                     Ll, D, b * Ll * D),
                                     t("site.lca.q.w"), t("site.lca.q.b"), t("site.lca.k.w"),
                                     t("site.lca.k.b"), t("site.lca.v.w"), t("site.lca.v.b"),
                                     t("site.lca.o.w"), t("site.lca.o.b"), d);
                for (int64_t p = 0; p < P; ++p)
                    for (int64_t c = 0; c < C; ++c)
                        g[static_cast<size_t>(p)][static_cast<size_t>(c)] +=
                            l[static_cast<size_t>(p)][static_cast<size_t>(c)] * masks.at3(b, i, p);
            }
            for (int64_t p = 0; p < P; ++p)
                for (int64_t c = 0; c < C; ++c) out.at3(b, p, c) = g[static_cast<size_t>(p)][static_cast<size_t>(c)];
        }
        return out;
    }
};

}  // namespace

TEST_CASE("rada matches the brute-force oracle on 1000 random cases") {
    for (uint64_t seed = 1; seed <= 500; ++seed) {
        Case tc(seed, /*attr_len=*/2);
        Var out = rada(tc.f, tc.prompts, make_const(tc.masks), tc.w);
        Tensor bf = tc.brute_force();
        double worst = 0.0;
        for (int64_t i = 0; i < bf.numel(); ++i) worst = std::max(worst, std::abs(out->value[i] - bf[i]));
        CAPTURE(seed);
        CHECK(worst <= 1e-6);
    }
    // length-1 attribute prompts exercise the broadcast fast path
    for (uint64_t seed = 501; seed <= 1000; ++seed) {
        Case tc(seed, /*attr_len=*/1);
        Var out = rada(tc.f, tc.prompts, make_const(tc.masks), tc.w);
        Tensor bf = tc.brute_force();
        double worst = 0.0;
        for (int64_t i = 0; i < bf.numel(); ++i) worst = std::max(worst, std::abs(out->value[i] - bf[i]));
        CAPTURE(seed);
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("all-zero masks reduce rada to the global branch exactly") {
    Case tc(42);
    Var g = gca(tc.f, tc.prompts.global_emb, tc.w);
    Var out = rada(tc.f, tc.prompts, make_const(Tensor::zeros({tc.B, tc.N, tc.P})), tc.w);
    for (int64_t i = 0; i < g->value.numel(); ++i) CHECK(out->value[i] == g->value[i]);
}

TEST_CASE("N=1 with unit mask is exactly gca + lca") {
    Case tc(43);
    PromptBundle one;
    one.global_emb = tc.prompts.global_emb;
    one.attr_embs.push_back(tc.prompts.attr_embs[0]);
    Var g = gca(tc.f, one.global_emb, tc.w);
    Var l = lca(tc.f, one.attr_embs[0], tc.w);
    Var expect = add(g, mul_token_gate(l, make_const(Tensor::full({tc.B, tc.P}, 1.0))));
    Var out = rada(tc.f, one, make_const(Tensor::full({tc.B, 1, tc.P}, 1.0)), tc.w);
    for (int64_t i = 0; i < out->value.numel(); ++i) CHECK(out->value[i] == expect->value[i]);
}

TEST_CASE("single key: output equals the projected value row") {
    Case tc(44, /*attr_len=*/1);
    Var l = lca(tc.f, tc.prompts.attr_embs[0], tc.w);
    // manual o(v(ctx)) for each batch item, broadcast across tokens
    Var v = tc.w.lca.v.forward(tc.prompts.attr_embs[0]);
    Var expect = tc.w.lca.o.forward(v);
    for (int64_t b = 0; b < tc.B; ++b)
        for (int64_t p = 0; p < tc.P; ++p)
            for (int64_t c = 0; c < tc.C; ++c)
                CHECK(l->value.at3(b, p, c) == doctest::Approx(expect->value.at3(b, 0, c)).epsilon(1e-12));
}

TEST_CASE("uniform keys give the mean of values") {
    Case tc(45);
    // make every context row identical
    Tensor ctx({tc.B, 4, tc.D});
    Rng rng(9);
    for (int64_t b = 0; b < tc.B; ++b) {
        std::vector<double> row(static_cast<size_t>(tc.D));
        for (auto& x : row) x = rng.normal();
        for (int64_t l = 0; l < 4; ++l)
            for (int64_t i = 0; i < tc.D; ++i) ctx.at3(b, l, i) = row[static_cast<size_t>(i)];
    }
    Var out = gca(tc.f, make_const(ctx), tc.w);
    // with identical keys the attention is uniform, so output = o(v(row))
    Var v = tc.w.gca.v.forward(make_const(ctx));
    Var o1 = tc.w.gca.o.forward(v);
    for (int64_t b = 0; b < tc.B; ++b)
        for (int64_t p = 0; p < tc.P; ++p)
            for (int64_t c = 0; c < tc.C; ++c)
                CHECK(out->value.at3(b, p, c) == doctest::Approx(o1->value.at3(b, 0, c)).epsilon(1e-9));
}

TEST_CASE("weight sharing: identical attribute embeddings give identical branches") {
    Case tc(46);
    Var l0 = lca(tc.f, tc.prompts.attr_embs[0], tc.w);
    Var l1 = lca(tc.f, tc.prompts.attr_embs[0], tc.w);
    for (int64_t i = 0; i < l0->value.numel(); ++i) CHECK(l0->value[i] == l1->value[i]);
}

TEST_CASE("mask homogeneity: scaling masks scales the local contribution") {
    Case tc(47);
    double alpha = 0.37;
    Tensor scaled = tc.masks;
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= alpha;
    Var base = rada(tc.f, tc.prompts, make_const(tc.masks), tc.w);
    Var got = rada(tc.f, tc.prompts, make_const(scaled), tc.w);
    Var g = gca(tc.f, tc.prompts.global_emb, tc.w);
    for (int64_t i = 0; i < base->value.numel(); ++i) {
        double local = base->value[i] - g->value[i];
        CHECK(got->value[i] - g->value[i] == doctest::Approx(alpha * local).epsilon(1e-9));
    }
}

TEST_CASE("spatial locality of mask edits") {
    Case tc(48);
    Tensor edited = tc.masks;
    int64_t pe = 2;
    for (int64_t b = 0; b < tc.B; ++b) edited.at3(b, 1, pe) = 1.0 - edited.at3(b, 1, pe);
    Var base = rada(tc.f, tc.prompts, make_const(tc.masks), tc.w);
    Var got = rada(tc.f, tc.prompts, make_const(edited), tc.w);
    for (int64_t b = 0; b < tc.B; ++b)
        for (int64_t p = 0; p < tc.P; ++p)
            for (int64_t c = 0; c < tc.C; ++c) {
                if (p == pe) continue;
                CHECK(got->value.at3(b, p, c) == base->value.at3(b, p, c));
            }
}

TEST_CASE("attribute permutation symmetry") {
    Case tc(49);
    std::vector<int64_t> perm{2, 0, 1};
    PromptBundle permuted;
    permuted.global_emb = tc.prompts.global_emb;
    Tensor pmask({tc.B, tc.N, tc.P});
    for (int64_t i = 0; i < tc.N; ++i) {
        permuted.attr_embs.push_back(tc.prompts.attr_embs[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
        for (int64_t b = 0; b < tc.B; ++b)
            for (int64_t p = 0; p < tc.P; ++p)
                pmask.at3(b, i, p) = tc.masks.at3(b, perm[static_cast<size_t>(i)], p);
    }
    Var base = rada(tc.f, tc.prompts, make_const(tc.masks), tc.w);
    Var got = rada(tc.f, permuted, make_const(pmask), tc.w);
    for (int64_t i = 0; i < base->value.numel(); ++i)
        CHECK(got->value[i] == doctest::Approx(base->value[i]).epsilon(1e-12));
}

TEST_CASE("mask channel count mismatch is a shape error") {
    Case tc(50);
    CHECK_THROWS_AS(rada(tc.f, tc.prompts, make_const(Tensor::zeros({tc.B, tc.N + 1, tc.P})), tc.w),
                    Error);
}

TEST_CASE("rada gradients flow to both branches under a partial mask") {
    Rng rng(51);
    ParamStore ps;
    RadaWeights w;
    w.init(ps, "site", 6, 5, 6, rng);
    Var f = make_leaf(Tensor::randn({1, 3, 6}, rng));
    PromptBundle prompts;
    prompts.global_emb = make_leaf(Tensor::randn({1, 2, 5}, rng));
    prompts.attr_embs.push_back(make_leaf(Tensor::randn({1, 1, 5}, rng)));
    Tensor masks = Tensor::uniform({1, 1, 3}, rng, 0.1, 0.9);
    Tensor target = Tensor::randn({1, 3, 6}, rng);

    auto build = [&] { return mse(rada(f, prompts, make_const(masks), w), make_const(target)); };
    Var loss = build();
    ps.zero_grads();
    f->zero_grad();
    prompts.global_emb->zero_grad();
    prompts.attr_embs[0]->zero_grad();
    backward(loss);

    double h = 1e-6;
    std::vector<Var> leaves{f, prompts.global_emb, prompts.attr_embs[0],
                            ps.find("site.lca.v.w"), ps.find("site.gca.q.w"), ps.find("site.gca.o.b")};
    for (const auto& leaf : leaves) {
        for (int64_t i = 0; i < leaf->value.numel(); ++i) {
            double keep = leaf->value[i];
            leaf->value[i] = keep + h;
            double up = build()->value[0];
            leaf->value[i] = keep - h;
            double dn = build()->value[0];
            leaf->value[i] = keep;
            double numeric = (up - dn) / (2 * h);
            double analytic = leaf->has_grad() ? leaf->grad[i] : 0.0;
            CHECK(std::abs(analytic - numeric) <= 1e-6 * (1.0 + std::abs(numeric)));
        }
    }
}
