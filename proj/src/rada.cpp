#include "toyfashion/rada.hpp"

#include <cmath>

namespace toyfashion {

void RadaWeights::init(ParamStore& ps, const std::string& name, int64_t feat_dim, int64_t text_dim,
                       int64_t attn_dim_, Rng& rng) {
    attn_dim = attn_dim_;
    gca.q.init(ps, name + ".gca.q", ParamGroup::Denoiser, feat_dim, attn_dim, rng);
    gca.k.init(ps, name + ".gca.k", ParamGroup::Denoiser, text_dim, attn_dim, rng);
    gca.v.init(ps, name + ".gca.v", ParamGroup::Denoiser, text_dim, attn_dim, rng);
    gca.o.init(ps, name + ".gca.o", ParamGroup::Denoiser, attn_dim, feat_dim, rng, /*zero_init=*/true);
    lca.q.init(ps, name + ".lca.q", ParamGroup::Local, feat_dim, attn_dim, rng);
    lca.k.init(ps, name + ".lca.k", ParamGroup::Local, text_dim, attn_dim, rng);
    lca.v.init(ps, name + ".lca.v", ParamGroup::Local, text_dim, attn_dim, rng);
    lca.o.init(ps, name + ".lca.o", ParamGroup::Local, attn_dim, feat_dim, rng, /*zero_init=*/true);
}

Var cross_attention(const Var& f, const Var& ctx, const AttnProj& p, int64_t attn_dim) {
    require(f->value.rank() == 3, ErrorKind::Shape, "cross_attention: f must be [B,P,C]");
    require(ctx->value.rank() == 3, ErrorKind::Shape, "cross_attention: ctx must be [B,L,D]");
    require(f->value.dim(0) == ctx->value.dim(0), ErrorKind::Shape, "cross_attention: batch mismatch");
    int64_t B = f->value.dim(0), P = f->value.dim(1), L = ctx->value.dim(1);
    Var v = p.v.forward(ctx);
    if (L == 1) {
        // softmax over a single key is identically one, so the value row is
        // broadcast to every query token; the query path is skipped as it
        // cannot influence the output
        Var ones = make_const(Tensor::full({B, P, 1}, 1.0));
        return p.o.forward(bmm_nn(ones, v));
    }
    Var q = p.q.forward(f);
    Var k = p.k.forward(ctx);
    Var scores = scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(attn_dim)));
    Var attn = softmax_lastdim(scores);
    return p.o.forward(bmm_nn(attn, v));
}

Var gca(const Var& f, const Var& global_emb, const RadaWeights& w) {
    return cross_attention(f, global_emb, w.gca, w.attn_dim);
}

Var lca(const Var& f, const Var& attr_emb, const RadaWeights& w) {
    return cross_attention(f, attr_emb, w.lca, w.attn_dim);
}

Var rada(const Var& f, const PromptBundle& prompts, const Var& masks, const RadaWeights& w,
         RadaTrace* trace) {
    int64_t B = f->value.dim(0), P = f->value.dim(1);
    int64_t N = static_cast<int64_t>(prompts.attr_embs.size());
    const auto& ms = masks->value.shape();
    require(ms.size() == 3 && ms[0] == B && ms[1] == N && ms[2] == P, ErrorKind::Shape,
            "rada: masks must be [B,N,P] with N matching the prompt bundle");
    // Masks are consumed as data: no gradient flows through the gate, whether
    // the mask came from ground truth, a head prediction, or the chain cache.
    require(!masks->requires_grad, ErrorKind::Config, "rada: masks must be detached");
    Var out = gca(f, prompts.global_emb, w);
    for (int64_t i = 0; i < N; ++i) {
        // one scalar gate per spatial token scales the whole feature vector
        Tensor gate({B, P});
        bool all_zero = true;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t p = 0; p < P; ++p) {
                double g = masks->value.at3(b, i, p);
                gate.at2(b, p) = g;
                all_zero &= (g == 0.0);
            }
        // a fully zero gate contributes exact zeros; the branch is skipped so
        // disabled local attention leaves no trace in the graph
        if (all_zero) continue;
        Var branch = lca(f, prompts.attr_embs[i], w);
        out = add(out, mul_token_gate(branch, make_const(gate)));
    }
    if (trace) trace->gates = masks->value;
    return out;
}

}  // namespace toyfashion
