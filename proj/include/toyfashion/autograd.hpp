#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "toyfashion/tensor.hpp"

namespace toyfashion {

// Dynamic-graph reverse-mode autodiff over Tensor. A fresh graph is built
// per forward pass; backward() walks it once in reverse topological order.
// All ops are double precision and bitwise deterministic for a fixed
// thread count (every output element is owned by exactly one thread).

struct VarNode;
using Var = std::shared_ptr<VarNode>;

struct VarNode {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(VarNode&)> backward_fn;

    void accum_grad(const Tensor& g);
    bool has_grad() const { return !grad.empty(); }
    void zero_grad() { grad = Tensor(); }
};

Var make_var(Tensor value, bool requires_grad = false);
Var make_leaf(Tensor value);      // trainable parameter
Var make_const(Tensor value);     // data / non-trainable input

// Runs reverse-mode on a scalar root.
void backward(const Var& root);

// While alive, newly built nodes never require grad (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};
bool grad_enabled();

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);        // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);        // Hadamard, same shape
Var scale(const Var& a, double s);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var stop_gradient(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var concat_channels(const Var& a, const Var& b);          // [B,Ca,H,W]+[B,Cb,H,W]
Var tokens_from_map(const Var& x);                        // [B,C,H,W] -> [B,HW,C]
Var map_from_tokens(const Var& x, int64_t h, int64_t w);  // [B,HW,C] -> [B,C,H,W]
Var gather_tokens(const Var& x, const std::vector<int64_t>& idx);  // [B,P,C] -> [B,|idx|,C]
// inverse of gather: place src rows at idx in a zero [B,P,C] tensor
Var scatter_tokens(const Var& src, const std::vector<int64_t>& idx, int64_t tokens);
Var concat_tokens(const Var& a, const Var& b);            // [B,Pa,C]+[B,Pb,C]
Var tile_batch(const Var& x, int64_t b);                  // [P,C] -> [b,P,C]
Var crop_cols(const Var& x, int64_t w_keep);              // [B,C,H,W] -> [B,C,H,w_keep]

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                   // [M,K]x[K,N]
Var bmm_nn(const Var& a, const Var& b);                   // [B,M,K]x[B,K,N]
Var bmm_nt(const Var& a, const Var& b);                   // [B,M,K]x[B,N,K] -> [B,M,N]
// rows of x (any leading dims) times w[in,out] plus bias[out]
Var linear(const Var& x, const Var& w, const Var& b);
Var softmax_lastdim(const Var& x);

// ---- nnet ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var upsample_nearest2(const Var& x);
Var add_channel_bias(const Var& x, const Var& v);          // x[B,C,H,W] + v[B,C]
Var mul_token_gate(const Var& x, const Var& m);            // x[B,P,C] * m[B,P]
Var embedding(const Var& table, const std::vector<int64_t>& ids);  // -> [n,D]

// ---- reductions / losses ----
Var mean_all(const Var& x);
Var sum_all(const Var& x);
Var mse(const Var& a, const Var& b);                       // mean((a-b)^2)
// sum(w*(a-b)^2)/sum(w); w is a constant weight map
Var weighted_mse(const Var& a, const Var& b, const Tensor& w);

}  // namespace toyfashion
