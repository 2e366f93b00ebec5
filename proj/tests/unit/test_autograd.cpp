#include "doctest.h"

#include <cmath>
#include <functional>

#include "toyfashion/autograd.hpp"

using namespace toyfashion;

namespace {

// central finite differences against the analytic gradient of a scalar graph
void gradcheck(const std::vector<Var>& leaves, const std::function<Var()>& build,
               double h = 1e-6, double tol = 2e-6) {
    Var loss = build();
    for (const auto& l : leaves) l->zero_grad();
    backward(loss);
    for (const auto& leaf : leaves) {
        Tensor analytic = leaf->has_grad() ? leaf->grad : Tensor::zeros(leaf->value.shape());
        for (int64_t i = 0; i < leaf->value.numel(); ++i) {
            double keep = leaf->value[i];
            leaf->value[i] = keep + h;
            double up = build()->value[0];
            leaf->value[i] = keep - h;
            double dn = build()->value[0];
            leaf->value[i] = keep;
            double numeric = (up - dn) / (2.0 * h);
            CAPTURE(i);
            CHECK(std::abs(analytic[i] - numeric) <= tol * (1.0 + std::abs(numeric)));
        }
    }
}

Var leaf_randn(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::randn(std::move(shape), rng);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] *= scale;
    return make_leaf(t);
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(7);
    Var a = leaf_randn({2, 3}, rng);
    Var b = leaf_randn({2, 3}, rng);
    Var t = leaf_randn({2, 3}, rng);
    gradcheck({a, b}, [&] { return mse(mul(add(a, b), sub(a, b)), stop_gradient(t)); });
    gradcheck({a}, [&] { return mean_all(silu(scale(a, 1.7))); });
    gradcheck({a}, [&] { return mean_all(sigmoid(a)); });
    gradcheck({a}, [&] { return sum_all(mul(a, a)); });
}

TEST_CASE("matmul/linear/softmax gradients") {
    Rng rng(11);
    Var x = leaf_randn({3, 4}, rng);
    Var w = leaf_randn({4, 5}, rng, 0.5);
    Var b = leaf_randn({5}, rng, 0.1);
    Var tgt = make_const(Tensor::randn({3, 5}, rng));
    gradcheck({x, w}, [&] { return mse(matmul(x, w), tgt); });
    gradcheck({x, w, b}, [&] { return mse(linear(x, w, b), tgt); });
    gradcheck({x}, [&] { return mse(softmax_lastdim(x), make_const(Tensor::full({3, 4}, 0.25))); });

    Var bx = leaf_randn({2, 3, 4}, rng);
    Var by = leaf_randn({2, 4, 2}, rng);
    Var bt = make_const(Tensor::randn({2, 3, 2}, rng));
    gradcheck({bx, by}, [&] { return mse(bmm_nn(bx, by), bt); });
    Var bz = leaf_randn({2, 2, 4}, rng);
    gradcheck({bx, bz}, [&] { return mse(bmm_nt(bx, bz), bt); });
}

TEST_CASE("conv2d gradients, stride 1 and 2") {
    Rng rng(13);
    Var x = leaf_randn({2, 3, 6, 6}, rng);
    Var w = leaf_randn({4, 3, 3, 3}, rng, 0.3);
    Var b = leaf_randn({4}, rng, 0.1);
    Var t1 = make_const(Tensor::randn({2, 4, 6, 6}, rng));
    gradcheck({x, w, b}, [&] { return mse(conv2d(x, w, b, 1, 1), t1); });
    Var t2 = make_const(Tensor::randn({2, 4, 3, 3}, rng));
    gradcheck({x, w, b}, [&] { return mse(conv2d(x, w, b, 2, 1), t2); });
    Var w1 = leaf_randn({2, 3, 1, 1}, rng, 0.5);
    Var b1 = leaf_randn({2}, rng, 0.1);
    Var t3 = make_const(Tensor::randn({2, 2, 6, 6}, rng));
    gradcheck({x, w1, b1}, [&] { return mse(conv2d(x, w1, b1, 1, 0), t3); });
}

TEST_CASE("group norm gradients") {
    Rng rng(17);
    Var x = leaf_randn({2, 4, 3, 3}, rng);
    Var g = leaf_randn({4}, rng, 0.5);
    Var b = leaf_randn({4}, rng, 0.5);
    Var t = make_const(Tensor::randn({2, 4, 3, 3}, rng));
    gradcheck({x, g, b}, [&] { return mse(group_norm(x, g, b, 2), t); }, 1e-6, 5e-6);
}

TEST_CASE("shape/copy op gradients") {
    Rng rng(19);
    Var x = leaf_randn({2, 3, 4, 4}, rng);
    Var y = leaf_randn({2, 2, 4, 4}, rng);
    Var t = make_const(Tensor::randn({2, 5, 4, 4}, rng));
    gradcheck({x, y}, [&] { return mse(concat_channels(x, y), t); });
    Var tu = make_const(Tensor::randn({2, 3, 8, 8}, rng));
    gradcheck({x}, [&] { return mse(upsample_nearest2(x), tu); });
    Var tc = make_const(Tensor::randn({2, 3, 4, 2}, rng));
    gradcheck({x}, [&] { return mse(crop_cols(x, 2), tc); });

    Var tok = leaf_randn({2, 6, 3}, rng);
    std::vector<int64_t> idx{0, 2, 5};
    Var tg = make_const(Tensor::randn({2, 3, 3}, rng));
    gradcheck({tok}, [&] { return mse(gather_tokens(tok, idx), tg); });
    Var small = leaf_randn({2, 3, 3}, rng);
    Var ts = make_const(Tensor::randn({2, 6, 3}, rng));
    gradcheck({small}, [&] { return mse(scatter_tokens(small, idx, 6), ts); });
    Var tok2 = leaf_randn({2, 2, 3}, rng);
    Var tcat = make_const(Tensor::randn({2, 8, 3}, rng));
    gradcheck({tok, tok2}, [&] { return mse(concat_tokens(tok, tok2), tcat); });

    Var flat = leaf_randn({4, 3}, rng);
    Var tt = make_const(Tensor::randn({3, 4, 3}, rng));
    gradcheck({flat}, [&] { return mse(tile_batch(flat, 3), tt); });

    Var m = leaf_randn({2, 3, 4, 4}, rng);
    Var tm = make_const(Tensor::randn({2, 16, 3}, rng));
    gradcheck({m}, [&] { return mse(tokens_from_map(m), tm); });
    Var tk = leaf_randn({2, 16, 3}, rng);
    Var tmap = make_const(Tensor::randn({2, 3, 4, 4}, rng));
    gradcheck({tk}, [&] { return mse(map_from_tokens(tk, 4, 4), tmap); });
}

TEST_CASE("broadcast helper gradients") {
    Rng rng(23);
    Var x = leaf_randn({2, 3, 4, 4}, rng);
    Var v = leaf_randn({2, 3}, rng);
    Var t = make_const(Tensor::randn({2, 3, 4, 4}, rng));
    gradcheck({x, v}, [&] { return mse(add_channel_bias(x, v), t); });

    Var tok = leaf_randn({2, 5, 3}, rng);
    Var gate = leaf_randn({2, 5}, rng);
    Var tt = make_const(Tensor::randn({2, 5, 3}, rng));
    gradcheck({tok, gate}, [&] { return mse(mul_token_gate(tok, gate), tt); });

    Var table = leaf_randn({6, 4}, rng);
    std::vector<int64_t> ids{1, 3, 1, 5};
    Var te = make_const(Tensor::randn({4, 4}, rng));
    gradcheck({table}, [&] { return mse(embedding(table, ids), te); });

    Var a = leaf_randn({2, 3}, rng);
    Var b = leaf_randn({2, 3}, rng);
    Tensor w({2, 3});
    for (int64_t i = 0; i < 6; ++i) w[i] = (i % 2) ? 1.0 : 0.25;
    gradcheck({a, b}, [&] { return weighted_mse(a, b, w); });
}

TEST_CASE("no-grad mode builds no backward graph") {
    Rng rng(29);
    Var a = make_leaf(Tensor::randn({2, 2}, rng));
    NoGradGuard ng;
    Var y = mul(a, a);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}

TEST_CASE("grad accumulation across shared subexpressions") {
    Rng rng(31);
    Var a = make_leaf(Tensor::full({1}, 1.5));
    Var s = mul(a, a);
    Var loss = add(s, s);  // d/da = 2 * 2a = 6
    backward(loss);
    CHECK(a->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}
