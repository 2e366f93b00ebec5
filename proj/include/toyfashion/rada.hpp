#pragma once

#include <vector>

#include "toyfashion/nn.hpp"

namespace toyfashion {

// Token embeddings for the overall prompt and the N fine-grained attribute
// prompts. All sequences share text_dim; attribute sequences may have any
// length (length 1 in toy mode).
struct PromptBundle {
    Var global_emb;               // [B, Lg, text_dim]
    std::vector<Var> attr_embs;   // N entries, each [B, Li, text_dim]
};

// single-head scaled-dot-product projection set
struct AttnProj {
    LinearLayer q;  // feature width  -> attn dim
    LinearLayer k;  // text width     -> attn dim
    LinearLayer v;  // text width     -> attn dim
    LinearLayer o;  // attn dim       -> feature width
};

// One global branch plus one local branch shared across all N attributes;
// per-attribute behavior is carried by embeddings and masks.
struct RadaWeights {
    AttnProj gca;
    AttnProj lca;
    int64_t attn_dim = 0;

    void init(ParamStore& ps, const std::string& name, int64_t feat_dim, int64_t text_dim,
              int64_t attn_dim, Rng& rng);
};

// optional capture of what a rada() call actually applied
struct RadaTrace {
    Tensor gates;  // [B,N,P] token gates after routing
};

// f: [B,P,C] feature tokens; ctx: [B,L,text_dim]
Var cross_attention(const Var& f, const Var& ctx, const AttnProj& p, int64_t attn_dim);

Var gca(const Var& f, const Var& global_emb, const RadaWeights& w);
Var lca(const Var& f, const Var& attr_emb, const RadaWeights& w);

// gca(f, tau_g) + sum_i lca(f, tau_li) * gate_i, gate broadcast per token.
// masks: [B,N,P] with values in [0,1] at the site's token resolution.
Var rada(const Var& f, const PromptBundle& prompts, const Var& masks, const RadaWeights& w,
         RadaTrace* trace = nullptr);

}  // namespace toyfashion
