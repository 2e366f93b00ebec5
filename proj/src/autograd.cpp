#include "toyfashion/autograd.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <unordered_set>

namespace toyfashion {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

void VarNode::accum_grad(const Tensor& g) {
    if (grad.empty()) {
        grad = g;
        return;
    }
    double* d = grad.data();
    const double* s = g.data();
    int64_t n = grad.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_var(Tensor value, bool requires_grad) {
    auto n = std::make_shared<VarNode>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && g_grad_enabled;
    return n;
}

Var make_leaf(Tensor value) { return make_var(std::move(value), true); }
Var make_const(Tensor value) { return make_var(std::move(value), false); }

void backward(const Var& root) {
    require(root->value.numel() == 1, ErrorKind::Shape, "backward: root must be scalar");
    // iterative post-order DFS
    std::vector<VarNode*> order;
    std::unordered_set<VarNode*> seen;
    std::vector<std::pair<VarNode*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            VarNode* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->accum_grad(Tensor::full({1}, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        VarNode* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

namespace {

bool any_grad(std::initializer_list<const Var*> vars) {
    for (auto* v : vars)
        if ((*v)->requires_grad) return true;
    return false;
}

Var unary(const Var& a, Tensor value, std::function<void(VarNode&)> fn) {
    Var out = make_var(std::move(value), a->requires_grad);
    if (out->requires_grad) {
        out->parents = {a};
        out->backward_fn = std::move(fn);
    }
    return out;
}

Var binary(const Var& a, const Var& b, Tensor value, std::function<void(VarNode&)> fn) {
    Var out = make_var(std::move(value), any_grad({&a, &b}));
    if (out->requires_grad) {
        out->parents = {a, b};
        out->backward_fn = std::move(fn);
    }
    return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), ErrorKind::Shape,
            "add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    {
        double* d = y.data();
        const double* s = b->value.data();
        int64_t n = y.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) d[i] += s[i];
    }
    return binary(a, b, std::move(y), [a, b](VarNode& o) {
        if (a->requires_grad) a->accum_grad(o.grad);
        if (b->requires_grad) b->accum_grad(o.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), ErrorKind::Shape,
            "sub: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    {
        double* d = y.data();
        const double* s = b->value.data();
        int64_t n = y.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) d[i] -= s[i];
    }
    return binary(a, b, std::move(y), [a, b](VarNode& o) {
        if (a->requires_grad) a->accum_grad(o.grad);
        if (b->requires_grad) {
            Tensor g = o.grad;
            double* d = g.data();
            int64_t n = g.numel();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] = -d[i];
            b->accum_grad(g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), ErrorKind::Shape,
            "mul: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    {
        double* d = y.data();
        const double* s = b->value.data();
        int64_t n = y.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) d[i] *= s[i];
    }
    return binary(a, b, std::move(y), [a, b](VarNode& o) {
        int64_t n = o.grad.numel();
        if (a->requires_grad) {
            Tensor g = o.grad;
            double* d = g.data();
            const double* s = b->value.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] *= s[i];
            a->accum_grad(g);
        }
        if (b->requires_grad) {
            Tensor g = o.grad;
            double* d = g.data();
            const double* s = a->value.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] *= s[i];
            b->accum_grad(g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor y = a->value;
    {
        double* d = y.data();
        int64_t n = y.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) d[i] *= s;
    }
    return unary(a, std::move(y), [a, s](VarNode& o) {
        Tensor g = o.grad;
        double* d = g.data();
        int64_t n = g.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) d[i] *= s;
        a->accum_grad(g);
    });
}

Var silu(const Var& a) {
    Tensor y = a->value;
    {
        double* d = y.data();
        int64_t n = y.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            double s = 1.0 / (1.0 + std::exp(-d[i]));
            d[i] = d[i] * s;
        }
    }
    return unary(a, std::move(y), [a](VarNode& o) {
        Tensor g = o.grad;
        double* d = g.data();
        const double* x = a->value.data();
        int64_t n = g.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            double s = 1.0 / (1.0 + std::exp(-x[i]));
            d[i] *= s * (1.0 + x[i] * (1.0 - s));
        }
        a->accum_grad(g);
    });
}

Var sigmoid(const Var& a) {
    Tensor y = a->value;
    {
        double* d = y.data();
        int64_t n = y.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) d[i] = 1.0 / (1.0 + std::exp(-d[i]));
    }
    Var out = make_var(std::move(y), a->requires_grad);
    if (out->requires_grad) {
        out->parents = {a};
        VarNode* ov = out.get();
        out->backward_fn = [a, ov](VarNode& o) {
            Tensor g = o.grad;
            double* d = g.data();
            const double* s = ov->value.data();
            int64_t n = g.numel();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] *= s[i] * (1.0 - s[i]);
            a->accum_grad(g);
        };
    }
    return out;
}

Var stop_gradient(const Var& a) { return make_const(a->value); }

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor y = a->value.reshaped(shape);
    return unary(a, std::move(y), [a](VarNode& o) {
        a->accum_grad(o.grad.reshaped(a->value.shape()));
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    require(sa.size() == 4 && sb.size() == 4 && sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
            ErrorKind::Shape, "concat_channels: incompatible shapes");
    int64_t B = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3], hw = H * W;
    Tensor y({B, Ca + Cb, H, W});
    for (int64_t bi = 0; bi < B; ++bi) {
        std::copy(a->value.data() + bi * Ca * hw, a->value.data() + (bi + 1) * Ca * hw,
                  y.data() + bi * (Ca + Cb) * hw);
        std::copy(b->value.data() + bi * Cb * hw, b->value.data() + (bi + 1) * Cb * hw,
                  y.data() + bi * (Ca + Cb) * hw + Ca * hw);
    }
    return binary(a, b, std::move(y), [a, b, B, Ca, Cb, hw](VarNode& o) {
        if (a->requires_grad) {
            Tensor g(a->value.shape());
            for (int64_t bi = 0; bi < B; ++bi)
                std::copy(o.grad.data() + bi * (Ca + Cb) * hw, o.grad.data() + bi * (Ca + Cb) * hw + Ca * hw,
                          g.data() + bi * Ca * hw);
            a->accum_grad(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            for (int64_t bi = 0; bi < B; ++bi)
                std::copy(o.grad.data() + bi * (Ca + Cb) * hw + Ca * hw,
                          o.grad.data() + (bi + 1) * (Ca + Cb) * hw, g.data() + bi * Cb * hw);
            b->accum_grad(g);
        }
    });
}

Var tokens_from_map(const Var& x) {
    const auto& s = x->value.shape();
    require(s.size() == 4, ErrorKind::Shape, "tokens_from_map: rank-4 input expected");
    int64_t B = s[0], C = s[1], H = s[2], W = s[3], P = H * W;
    Tensor y({B, P, C});
    const double* xd = x->value.data();
    double* yd = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < P; ++p) yd[(bi * P + p) * C + c] = xd[(bi * C + c) * P + p];
    return unary(x, std::move(y), [x, B, C, P](VarNode& o) {
        Tensor g(x->value.shape());
        const double* od = o.grad.data();
        double* gd = g.data();
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t p = 0; p < P; ++p) gd[(bi * C + c) * P + p] = od[(bi * P + p) * C + c];
        x->accum_grad(g);
    });
}

Var map_from_tokens(const Var& x, int64_t h, int64_t w) {
    const auto& s = x->value.shape();
    require(s.size() == 3 && s[1] == h * w, ErrorKind::Shape, "map_from_tokens: token count mismatch");
    int64_t B = s[0], P = s[1], C = s[2];
    Tensor y({B, C, h, w});
    const double* xd = x->value.data();
    double* yd = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < P; ++p) yd[(bi * C + c) * P + p] = xd[(bi * P + p) * C + c];
    return unary(x, std::move(y), [x, B, C, P](VarNode& o) {
        Tensor g(x->value.shape());
        const double* od = o.grad.data();
        double* gd = g.data();
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t p = 0; p < P; ++p) gd[(bi * P + p) * C + c] = od[(bi * C + c) * P + p];
        x->accum_grad(g);
    });
}

Var gather_tokens(const Var& x, const std::vector<int64_t>& idx) {
    const auto& s = x->value.shape();
    require(s.size() == 3, ErrorKind::Shape, "gather_tokens: rank-3 input expected");
    int64_t B = s[0], P = s[1], C = s[2], n = static_cast<int64_t>(idx.size());
    Tensor y({B, n, C});
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < n; ++i) {
            require(idx[i] >= 0 && idx[i] < P, ErrorKind::Bounds, "gather_tokens: index out of range");
            std::copy(x->value.data() + (bi * P + idx[i]) * C, x->value.data() + (bi * P + idx[i] + 1) * C,
                      y.data() + (bi * n + i) * C);
        }
    auto ids = idx;
    return unary(x, std::move(y), [x, ids, B, P, C](VarNode& o) {
        Tensor g(x->value.shape());
        int64_t n = static_cast<int64_t>(ids.size());
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t i = 0; i < n; ++i) {
                double* dst = g.data() + (bi * P + ids[i]) * C;
                const double* src = o.grad.data() + (bi * n + i) * C;
                for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
            }
        x->accum_grad(g);
    });
}

Var scatter_tokens(const Var& src, const std::vector<int64_t>& idx, int64_t tokens) {
    const auto& s = src->value.shape();
    require(s.size() == 3 && s[1] == static_cast<int64_t>(idx.size()), ErrorKind::Shape,
            "scatter_tokens: row count must equal index count");
    int64_t B = s[0], n = s[1], C = s[2];
    Tensor y({B, tokens, C}, 0.0);
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < n; ++i) {
            require(idx[i] >= 0 && idx[i] < tokens, ErrorKind::Bounds, "scatter_tokens: index out of range");
            std::copy(src->value.data() + (bi * n + i) * C, src->value.data() + (bi * n + i + 1) * C,
                      y.data() + (bi * tokens + idx[i]) * C);
        }
    auto ids = idx;
    return unary(src, std::move(y), [src, ids, B, n, C, tokens](VarNode& o) {
        Tensor g(src->value.shape());
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t i = 0; i < n; ++i)
                std::copy(o.grad.data() + (bi * tokens + ids[i]) * C,
                          o.grad.data() + (bi * tokens + ids[i] + 1) * C, g.data() + (bi * n + i) * C);
        src->accum_grad(g);
    });
}

Var concat_tokens(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2], ErrorKind::Shape,
            "concat_tokens: incompatible shapes");
    int64_t B = sa[0], Pa = sa[1], Pb = sb[1], C = sa[2];
    Tensor y({B, Pa + Pb, C});
    for (int64_t bi = 0; bi < B; ++bi) {
        std::copy(a->value.data() + bi * Pa * C, a->value.data() + (bi + 1) * Pa * C,
                  y.data() + bi * (Pa + Pb) * C);
        std::copy(b->value.data() + bi * Pb * C, b->value.data() + (bi + 1) * Pb * C,
                  y.data() + bi * (Pa + Pb) * C + Pa * C);
    }
    return binary(a, b, std::move(y), [a, b, B, Pa, Pb, C](VarNode& o) {
        if (a->requires_grad) {
            Tensor g(a->value.shape());
            for (int64_t bi = 0; bi < B; ++bi)
                std::copy(o.grad.data() + bi * (Pa + Pb) * C, o.grad.data() + bi * (Pa + Pb) * C + Pa * C,
                          g.data() + bi * Pa * C);
            a->accum_grad(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            for (int64_t bi = 0; bi < B; ++bi)
                std::copy(o.grad.data() + bi * (Pa + Pb) * C + Pa * C, o.grad.data() + (bi + 1) * (Pa + Pb) * C,
                          g.data() + bi * Pb * C);
            b->accum_grad(g);
        }
    });
}

Var tile_batch(const Var& x, int64_t b) {
    const auto& s = x->value.shape();
    require(s.size() == 2, ErrorKind::Shape, "tile_batch: rank-2 input expected");
    int64_t P = s[0], C = s[1];
    Tensor y({b, P, C});
    for (int64_t bi = 0; bi < b; ++bi)
        std::copy(x->value.data(), x->value.data() + P * C, y.data() + bi * P * C);
    return unary(x, std::move(y), [x, b, P, C](VarNode& o) {
        Tensor g({P, C}, 0.0);
        for (int64_t bi = 0; bi < b; ++bi) {
            const double* src = o.grad.data() + bi * P * C;
            double* dst = g.data();
            for (int64_t i = 0; i < P * C; ++i) dst[i] += src[i];
        }
        x->accum_grad(g);
    });
}

Var crop_cols(const Var& x, int64_t w_keep) {
    const auto& s = x->value.shape();
    require(s.size() == 4 && w_keep > 0 && w_keep <= s[3], ErrorKind::Shape, "crop_cols: bad width");
    int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    if (w_keep == W) return x;
    Tensor y({B, C, H, w_keep});
    const double* xd = x->value.data();
    double* yd = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t bch = 0; bch < B * C * H; ++bch)
        for (int64_t w = 0; w < w_keep; ++w) yd[bch * w_keep + w] = xd[bch * W + w];
    return unary(x, std::move(y), [x, B, C, H, W, w_keep](VarNode& o) {
        Tensor g(x->value.shape(), 0.0);
        const double* od = o.grad.data();
        double* gd = g.data();
#pragma omp parallel for schedule(static)
        for (int64_t bch = 0; bch < B * C * H; ++bch)
            for (int64_t w = 0; w < w_keep; ++w) gd[bch * W + w] = od[bch * w_keep + w];
        x->accum_grad(g);
    });
}

Var matmul(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], ErrorKind::Shape,
            "matmul: incompatible shapes " + a->value.shape_str() + " x " + b->value.shape_str());
    int64_t M = sa[0], K = sa[1], N = sb[1];
    Tensor y({M, N});
    MapM(y.data(), M, N) = CMapM(a->value.data(), M, K) * CMapM(b->value.data(), K, N);
    return binary(a, b, std::move(y), [a, b, M, K, N](VarNode& o) {
        CMapM go(o.grad.data(), M, N);
        if (a->requires_grad) {
            Tensor g({M, K});
            MapM(g.data(), M, K) = go * CMapM(b->value.data(), K, N).transpose();
            a->accum_grad(g);
        }
        if (b->requires_grad) {
            Tensor g({K, N});
            MapM(g.data(), K, N) = CMapM(a->value.data(), M, K).transpose() * go;
            b->accum_grad(g);
        }
    });
}

namespace {

Var bmm_impl(const Var& a, const Var& b, bool trans_b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0], ErrorKind::Shape, "bmm: rank/batch mismatch");
    int64_t B = sa[0], M = sa[1], K = sa[2];
    int64_t N = trans_b ? sb[1] : sb[2];
    require(trans_b ? sb[2] == K : sb[1] == K, ErrorKind::Shape, "bmm: inner dimension mismatch");
    Tensor y({B, M, N});
    for (int64_t bi = 0; bi < B; ++bi) {
        CMapM A(a->value.data() + bi * M * K, M, K);
        MapM Y(y.data() + bi * M * N, M, N);
        if (trans_b)
            Y = A * CMapM(b->value.data() + bi * N * K, N, K).transpose();
        else
            Y = A * CMapM(b->value.data() + bi * K * N, K, N);
    }
    return binary(a, b, std::move(y), [a, b, B, M, K, N, trans_b](VarNode& o) {
        if (a->requires_grad) {
            Tensor g({B, M, K});
            for (int64_t bi = 0; bi < B; ++bi) {
                CMapM GO(o.grad.data() + bi * M * N, M, N);
                MapM G(g.data() + bi * M * K, M, K);
                if (trans_b)
                    G = GO * CMapM(b->value.data() + bi * N * K, N, K);
                else
                    G = GO * CMapM(b->value.data() + bi * K * N, K, N).transpose();
            }
            a->accum_grad(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            for (int64_t bi = 0; bi < B; ++bi) {
                CMapM GO(o.grad.data() + bi * M * N, M, N);
                CMapM A(a->value.data() + bi * M * K, M, K);
                if (trans_b)
                    MapM(g.data() + bi * N * K, N, K) = GO.transpose() * A;
                else
                    MapM(g.data() + bi * K * N, K, N) = A.transpose() * GO;
            }
            b->accum_grad(g);
        }
    });
}

}  // namespace

Var bmm_nn(const Var& a, const Var& b) { return bmm_impl(a, b, false); }
Var bmm_nt(const Var& a, const Var& b) { return bmm_impl(a, b, true); }

Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    require(sw.size() == 2 && !sx.empty() && sx.back() == sw[0], ErrorKind::Shape,
            "linear: width mismatch " + x->value.shape_str() + " x " + w->value.shape_str());
    int64_t in = sw[0], out = sw[1];
    int64_t rows = x->value.numel() / in;
    require(b->value.numel() == out, ErrorKind::Shape, "linear: bias width mismatch");
    std::vector<int64_t> out_shape(sx.begin(), sx.end() - 1);
    out_shape.push_back(out);
    Tensor y(out_shape);
    {
        MapM Y(y.data(), rows, out);
        Y = CMapM(x->value.data(), rows, in) * CMapM(w->value.data(), in, out);
        Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), out);
    }
    Var node = make_var(std::move(y), any_grad({&x, &w, &b}));
    if (node->requires_grad) {
        node->parents = {x, w, b};
        node->backward_fn = [x, w, b, rows, in, out](VarNode& o) {
            CMapM GO(o.grad.data(), rows, out);
            if (x->requires_grad) {
                Tensor g(x->value.shape());
                MapM(g.data(), rows, in) = GO * CMapM(w->value.data(), in, out).transpose();
                x->accum_grad(g);
            }
            if (w->requires_grad) {
                Tensor g({in, out});
                MapM(g.data(), in, out) = CMapM(x->value.data(), rows, in).transpose() * GO;
                w->accum_grad(g);
            }
            if (b->requires_grad) {
                Tensor g(b->value.shape());
                Eigen::Map<Eigen::RowVectorXd>(g.data(), out) = GO.colwise().sum();
                b->accum_grad(g);
            }
        };
    }
    return node;
}

Var softmax_lastdim(const Var& x) {
    const auto& s = x->value.shape();
    require(!s.empty(), ErrorKind::Shape, "softmax: empty shape");
    int64_t L = s.back();
    int64_t rows = x->value.numel() / L;
    Tensor y = x->value;
    {
        double* d = y.data();
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; ++r) {
            double* row = d + r * L;
            double mx = row[0];
            for (int64_t i = 1; i < L; ++i) mx = std::max(mx, row[i]);
            double sum = 0.0;
            for (int64_t i = 0; i < L; ++i) {
                row[i] = std::exp(row[i] - mx);
                sum += row[i];
            }
            double inv = 1.0 / sum;
            for (int64_t i = 0; i < L; ++i) row[i] *= inv;
        }
    }
    Var out = make_var(std::move(y), x->requires_grad);
    if (out->requires_grad) {
        out->parents = {x};
        VarNode* ov = out.get();
        out->backward_fn = [x, ov, rows, L](VarNode& o) {
            Tensor g(x->value.shape());
            const double* a = ov->value.data();
            const double* go = o.grad.data();
            double* gd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t r = 0; r < rows; ++r) {
                const double* arow = a + r * L;
                const double* grow = go + r * L;
                double dot = 0.0;
                for (int64_t i = 0; i < L; ++i) dot += arow[i] * grow[i];
                double* out_row = gd + r * L;
                for (int64_t i = 0; i < L; ++i) out_row[i] = arow[i] * (grow[i] - dot);
            }
            x->accum_grad(g);
        };
    }
    return out;
}

namespace {

// im2col with zero padding; row = (b, oh, ow), col = (c, ki, kj)
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int64_t oh, int64_t ow, Tensor& col) {
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t ckk = C * kh * kw;
    const double* xd = x.data();
    double* cd = col.data();
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                double* row = cd + ((bi * oh + oy) * ow + ox) * ckk;
                for (int64_t c = 0; c < C; ++c)
                    for (int ki = 0; ki < kh; ++ki) {
                        int64_t iy = oy * stride - pad + ki;
                        for (int kj = 0; kj < kw; ++kj) {
                            int64_t ix = ox * stride - pad + kj;
                            double v = 0.0;
                            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                v = xd[((bi * C + c) * H + iy) * W + ix];
                            row[(c * kh + ki) * kw + kj] = v;
                        }
                    }
            }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    require(sx.size() == 4 && sw.size() == 4 && sx[1] == sw[1], ErrorKind::Shape,
            "conv2d: shape mismatch " + x->value.shape_str() + " w " + w->value.shape_str());
    int64_t B = sx[0], C = sx[1], H = sx[2], W = sx[3];
    int64_t O = sw[0];
    int kh = static_cast<int>(sw[2]), kw = static_cast<int>(sw[3]);
    int64_t oh = (H + 2 * pad - kh) / stride + 1;
    int64_t ow = (W + 2 * pad - kw) / stride + 1;
    int64_t rows = B * oh * ow, ckk = C * kh * kw;
    require(b->value.numel() == O, ErrorKind::Shape, "conv2d: bias width mismatch");

    auto col = std::make_shared<Tensor>(Tensor({rows, ckk}));
    im2col(x->value, kh, kw, stride, pad, oh, ow, *col);
    Tensor rowsy({rows, O});
    {
        MapM Y(rowsy.data(), rows, O);
        Y = CMapM(col->data(), rows, ckk) * CMapM(w->value.data(), O, ckk).transpose();
        Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), O);
    }
    // rows layout (b,oh,ow,o) -> (b,o,oh,ow)
    Tensor y({B, O, oh, ow});
    {
        const double* src = rowsy.data();
        double* dst = y.data();
        int64_t p = oh * ow;
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t pp = 0; pp < p; ++pp)
                for (int64_t o = 0; o < O; ++o) dst[(bi * O + o) * p + pp] = src[(bi * p + pp) * O + o];
    }
    Var node = make_var(std::move(y), any_grad({&x, &w, &b}));
    if (node->requires_grad) {
        node->parents = {x, w, b};
        node->backward_fn = [x, w, b, col, B, C, H, W, O, kh, kw, stride, pad, oh, ow](VarNode& o) {
            int64_t rows = B * oh * ow, ckk = C * kh * kw, p = oh * ow;
            Tensor go_rows({rows, O});
            {
                const double* src = o.grad.data();
                double* dst = go_rows.data();
#pragma omp parallel for schedule(static)
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t pp = 0; pp < p; ++pp)
                        for (int64_t oc = 0; oc < O; ++oc)
                            dst[(bi * p + pp) * O + oc] = src[(bi * O + oc) * p + pp];
            }
            CMapM GO(go_rows.data(), rows, O);
            if (b->requires_grad) {
                Tensor g(b->value.shape());
                Eigen::Map<Eigen::RowVectorXd>(g.data(), O) = GO.colwise().sum();
                b->accum_grad(g);
            }
            if (w->requires_grad) {
                Tensor g(w->value.shape());
                MapM(g.data(), O, ckk) = GO.transpose() * CMapM(col->data(), rows, ckk);
                w->accum_grad(g);
            }
            if (x->requires_grad) {
                Tensor dcol({rows, ckk});
                MapM(dcol.data(), rows, ckk) = GO * CMapM(w->value.data(), O, ckk);
                Tensor g(x->value.shape(), 0.0);
                double* gd = g.data();
                const double* cd = dcol.data();
#pragma omp parallel for schedule(static)
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t oy = 0; oy < oh; ++oy)
                        for (int64_t ox = 0; ox < ow; ++ox) {
                            const double* row = cd + ((bi * oh + oy) * ow + ox) * ckk;
                            for (int64_t c = 0; c < C; ++c)
                                for (int ki = 0; ki < kh; ++ki) {
                                    int64_t iy = oy * stride - pad + ki;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int kj = 0; kj < kw; ++kj) {
                                        int64_t ix = ox * stride - pad + kj;
                                        if (ix < 0 || ix >= W) continue;
                                        gd[((bi * C + c) * H + iy) * W + ix] += row[(c * kh + ki) * kw + kj];
                                    }
                                }
                        }
                x->accum_grad(g);
            }
        };
    }
    return node;
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    const auto& s = x->value.shape();
    require(s.size() == 4 && s[1] % groups == 0, ErrorKind::Shape, "group_norm: channels not divisible by groups");
    int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    require(gamma->value.numel() == C && beta->value.numel() == C, ErrorKind::Shape, "group_norm: affine width");
    int64_t cg = C / groups, m = cg * H * W, hw = H * W;

    auto xhat = std::make_shared<Tensor>(Tensor(x->value.shape()));
    auto istd = std::make_shared<Tensor>(Tensor({B, static_cast<int64_t>(groups)}));
    Tensor y(x->value.shape());
    {
        const double* xd = x->value.data();
        double* hd = xhat->data();
        double* yd = y.data();
        const double* gm = gamma->value.data();
        const double* bt = beta->value.data();
#pragma omp parallel for schedule(static) collapse(2)
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t g = 0; g < groups; ++g) {
                const double* base = xd + (bi * C + g * cg) * hw;
                double mean = 0.0;
                for (int64_t i = 0; i < m; ++i) mean += base[i];
                mean /= static_cast<double>(m);
                double var = 0.0;
                for (int64_t i = 0; i < m; ++i) {
                    double d = base[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(m);
                double is = 1.0 / std::sqrt(var + eps);
                (*istd)[bi * groups + g] = is;
                double* hbase = hd + (bi * C + g * cg) * hw;
                double* ybase = yd + (bi * C + g * cg) * hw;
                for (int64_t c = 0; c < cg; ++c) {
                    double gc = gm[g * cg + c], bc = bt[g * cg + c];
                    for (int64_t i = 0; i < hw; ++i) {
                        double h = (base[c * hw + i] - mean) * is;
                        hbase[c * hw + i] = h;
                        ybase[c * hw + i] = gc * h + bc;
                    }
                }
            }
    }
    Var node = make_var(std::move(y), any_grad({&x, &gamma, &beta}));
    if (node->requires_grad) {
        node->parents = {x, gamma, beta};
        node->backward_fn = [x, gamma, beta, xhat, istd, B, C, H, W, groups, cg, m, hw](VarNode& o) {
            const double* go = o.grad.data();
            const double* hd = xhat->data();
            if (gamma->requires_grad || beta->requires_grad) {
                Tensor dg({C}, 0.0), db({C}, 0.0);
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* grow = go + (bi * C + c) * hw;
                        const double* hrow = hd + (bi * C + c) * hw;
                        double sg = 0.0, sb = 0.0;
                        for (int64_t i = 0; i < hw; ++i) {
                            sg += grow[i] * hrow[i];
                            sb += grow[i];
                        }
                        dg[c] += sg;
                        db[c] += sb;
                    }
                if (gamma->requires_grad) gamma->accum_grad(dg);
                if (beta->requires_grad) beta->accum_grad(db);
            }
            if (x->requires_grad) {
                Tensor g(x->value.shape());
                double* gd = g.data();
                const double* gm = gamma->value.data();
#pragma omp parallel for schedule(static) collapse(2)
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t gr = 0; gr < groups; ++gr) {
                        double is = (*istd)[bi * groups + gr];
                        const double* hbase = hd + (bi * C + gr * cg) * hw;
                        const double* gbase = go + (bi * C + gr * cg) * hw;
                        double* obase = gd + (bi * C + gr * cg) * hw;
                        double s1 = 0.0, s2 = 0.0;
                        for (int64_t c = 0; c < cg; ++c) {
                            double gc = gm[gr * cg + c];
                            for (int64_t i = 0; i < hw; ++i) {
                                double dh = gbase[c * hw + i] * gc;
                                s1 += dh;
                                s2 += dh * hbase[c * hw + i];
                            }
                        }
                        s1 /= static_cast<double>(m);
                        s2 /= static_cast<double>(m);
                        for (int64_t c = 0; c < cg; ++c) {
                            double gc = gm[gr * cg + c];
                            for (int64_t i = 0; i < hw; ++i) {
                                double dh = gbase[c * hw + i] * gc;
                                obase[c * hw + i] = is * (dh - s1 - hbase[c * hw + i] * s2);
                            }
                        }
                    }
                x->accum_grad(g);
            }
        };
    }
    return node;
}

Var upsample_nearest2(const Var& x) {
    const auto& s = x->value.shape();
    require(s.size() == 4, ErrorKind::Shape, "upsample: rank-4 input expected");
    int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    Tensor y({B, C, H * 2, W * 2});
    const double* xd = x->value.data();
    double* yd = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t h = 0; h < H * 2; ++h)
            for (int64_t w = 0; w < W * 2; ++w)
                yd[(bc * H * 2 + h) * W * 2 + w] = xd[(bc * H + h / 2) * W + w / 2];
    return unary(x, std::move(y), [x, B, C, H, W](VarNode& o) {
        Tensor g(x->value.shape(), 0.0);
        const double* od = o.grad.data();
        double* gd = g.data();
#pragma omp parallel for schedule(static)
        for (int64_t bc = 0; bc < B * C; ++bc)
            for (int64_t h = 0; h < H * 2; ++h)
                for (int64_t w = 0; w < W * 2; ++w)
                    gd[(bc * H + h / 2) * W + w / 2] += od[(bc * H * 2 + h) * W * 2 + w];
        x->accum_grad(g);
    });
}

Var add_channel_bias(const Var& x, const Var& v) {
    const auto& s = x->value.shape();
    const auto& sv = v->value.shape();
    require(s.size() == 4 && sv.size() == 2 && sv[0] == s[0] && sv[1] == s[1], ErrorKind::Shape,
            "add_channel_bias: expected x[B,C,H,W], v[B,C]");
    int64_t B = s[0], C = s[1], hw = s[2] * s[3];
    Tensor y = x->value;
    {
        double* d = y.data();
        const double* vd = v->value.data();
#pragma omp parallel for schedule(static)
        for (int64_t bc = 0; bc < B * C; ++bc) {
            double bias = vd[bc];
            double* row = d + bc * hw;
            for (int64_t i = 0; i < hw; ++i) row[i] += bias;
        }
    }
    return binary(x, v, std::move(y), [x, v, B, C, hw](VarNode& o) {
        if (x->requires_grad) x->accum_grad(o.grad);
        if (v->requires_grad) {
            Tensor g({B, C});
            const double* od = o.grad.data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                double s = 0.0;
                const double* row = od + bc * hw;
                for (int64_t i = 0; i < hw; ++i) s += row[i];
                g[bc] = s;
            }
            v->accum_grad(g);
        }
    });
}

Var mul_token_gate(const Var& x, const Var& m) {
    const auto& s = x->value.shape();
    const auto& sm = m->value.shape();
    require(s.size() == 3 && sm.size() == 2 && sm[0] == s[0] && sm[1] == s[1], ErrorKind::Shape,
            "mul_token_gate: expected x[B,P,C], m[B,P]");
    int64_t B = s[0], P = s[1], C = s[2];
    Tensor y = x->value;
    {
        double* d = y.data();
        const double* md = m->value.data();
#pragma omp parallel for schedule(static)
        for (int64_t bp = 0; bp < B * P; ++bp) {
            double g = md[bp];
            double* row = d + bp * C;
            for (int64_t c = 0; c < C; ++c) row[c] *= g;
        }
    }
    return binary(x, m, std::move(y), [x, m, B, P, C](VarNode& o) {
        if (x->requires_grad) {
            Tensor g = o.grad;
            double* d = g.data();
            const double* md = m->value.data();
#pragma omp parallel for schedule(static)
            for (int64_t bp = 0; bp < B * P; ++bp) {
                double gg = md[bp];
                double* row = d + bp * C;
                for (int64_t c = 0; c < C; ++c) row[c] *= gg;
            }
            x->accum_grad(g);
        }
        if (m->requires_grad) {
            Tensor g({B, P});
            const double* od = o.grad.data();
            const double* xd = x->value.data();
            for (int64_t bp = 0; bp < B * P; ++bp) {
                double s = 0.0;
                for (int64_t c = 0; c < C; ++c) s += od[bp * C + c] * xd[bp * C + c];
                g[bp] = s;
            }
            m->accum_grad(g);
        }
    });
}

Var embedding(const Var& table, const std::vector<int64_t>& ids) {
    const auto& s = table->value.shape();
    require(s.size() == 2, ErrorKind::Shape, "embedding: table must be rank 2");
    int64_t V = s[0], D = s[1], n = static_cast<int64_t>(ids.size());
    Tensor y({n, D});
    for (int64_t i = 0; i < n; ++i) {
        require(ids[i] >= 0 && ids[i] < V, ErrorKind::Vocabulary, "embedding: token id out of vocabulary");
        std::copy(table->value.data() + ids[i] * D, table->value.data() + (ids[i] + 1) * D, y.data() + i * D);
    }
    auto idv = ids;
    return unary(table, std::move(y), [table, idv, D](VarNode& o) {
        Tensor g(table->value.shape(), 0.0);
        for (size_t i = 0; i < idv.size(); ++i) {
            double* dst = g.data() + idv[i] * D;
            const double* src = o.grad.data() + static_cast<int64_t>(i) * D;
            for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
        }
        table->accum_grad(g);
    });
}

Var mean_all(const Var& x) {
    int64_t n = x->value.numel();
    double s = 0.0;
    const double* d = x->value.data();
    for (int64_t i = 0; i < n; ++i) s += d[i];
    Tensor y = Tensor::full({1}, s / static_cast<double>(n));
    return unary(x, std::move(y), [x, n](VarNode& o) {
        Tensor g(x->value.shape(), o.grad[0] / static_cast<double>(n));
        x->accum_grad(g);
    });
}

Var sum_all(const Var& x) {
    int64_t n = x->value.numel();
    double s = 0.0;
    const double* d = x->value.data();
    for (int64_t i = 0; i < n; ++i) s += d[i];
    Tensor y = Tensor::full({1}, s);
    return unary(x, std::move(y), [x](VarNode& o) {
        Tensor g(x->value.shape(), o.grad[0]);
        x->accum_grad(g);
    });
}

Var mse(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), ErrorKind::Shape,
            "mse: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    int64_t n = a->value.numel();
    const double* ad = a->value.data();
    const double* bd = b->value.data();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = ad[i] - bd[i];
        s += d * d;
    }
    Tensor y = Tensor::full({1}, s / static_cast<double>(n));
    return binary(a, b, std::move(y), [a, b, n](VarNode& o) {
        double c = 2.0 * o.grad[0] / static_cast<double>(n);
        const double* ad = a->value.data();
        const double* bd = b->value.data();
        if (a->requires_grad) {
            Tensor g(a->value.shape());
            double* gd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) gd[i] = c * (ad[i] - bd[i]);
            a->accum_grad(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            double* gd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) gd[i] = -c * (ad[i] - bd[i]);
            b->accum_grad(g);
        }
    });
}

Var weighted_mse(const Var& a, const Var& b, const Tensor& w) {
    require(a->value.same_shape(b->value) && a->value.same_shape(w), ErrorKind::Shape,
            "weighted_mse: shape mismatch");
    int64_t n = a->value.numel();
    const double* ad = a->value.data();
    const double* bd = b->value.data();
    const double* wd = w.data();
    double s = 0.0, wsum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = ad[i] - bd[i];
        s += wd[i] * d * d;
        wsum += wd[i];
    }
    require(wsum > 0.0, ErrorKind::Config, "weighted_mse: zero total weight");
    Tensor y = Tensor::full({1}, s / wsum);
    auto wt = std::make_shared<Tensor>(w);
    return binary(a, b, std::move(y), [a, b, wt, n, wsum](VarNode& o) {
        double c = 2.0 * o.grad[0] / wsum;
        const double* ad = a->value.data();
        const double* bd = b->value.data();
        const double* wd = wt->data();
        if (a->requires_grad) {
            Tensor g(a->value.shape());
            double* gd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) gd[i] = c * wd[i] * (ad[i] - bd[i]);
            a->accum_grad(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            double* gd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) gd[i] = -c * wd[i] * (ad[i] - bd[i]);
            b->accum_grad(g);
        }
    });
}

}  // namespace toyfashion
