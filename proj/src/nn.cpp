#include "toyfashion/nn.hpp"

#include <cmath>
#include <sstream>

namespace toyfashion {

std::string param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Denoiser: return "denoiser";
        case ParamGroup::Local: return "local";
        case ParamGroup::MaskHead: return "mask_head";
    }
    return "?";
}

Var ParamStore::add(const std::string& name, ParamGroup group, Tensor init) {
    require(!index_.count(name), ErrorKind::Config, "duplicate parameter name: " + name);
    Var v = make_leaf(std::move(init));
    index_[name] = entries_.size();
    entries_.push_back({name, group, v});
    return v;
}

Var ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::Config, "unknown parameter: " + name);
    return entries_[it->second].var;
}

std::vector<Var> ParamStore::group_vars(ParamGroup g) const {
    std::vector<Var> out;
    for (const auto& e : entries_)
        if (e.group == g) out.push_back(e.var);
    return out;
}

std::vector<Var> ParamStore::all_vars() const {
    std::vector<Var> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.var);
    return out;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.var->zero_grad();
}

int64_t ParamStore::total_parameters() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.var->value.numel();
    return n;
}

std::string ParamStore::shapes_manifest() const {
    std::ostringstream os;
    for (const auto& e : entries_)
        os << e.name << " " << param_group_name(e.group) << " " << e.var->value.shape_str() << "\n";
    return os.str();
}

uint64_t ParamStore::weights_hash() const {
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& e : entries_) {
        h = fnv1a64(e.name.data(), e.name.size(), h);
        h = fnv1a64(e.var->value.data(), e.var->value.numel() * sizeof(double), h);
    }
    return h;
}

uint64_t ParamStore::group_hash(ParamGroup g) const {
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& e : entries_) {
        if (e.group != g) continue;
        h = fnv1a64(e.name.data(), e.name.size(), h);
        h = fnv1a64(e.var->value.data(), e.var->value.numel() * sizeof(double), h);
    }
    return h;
}

void LinearLayer::init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t in, int64_t out,
                       Rng& rng, bool zero_init) {
    double s = zero_init ? 0.0 : std::sqrt(2.0 / static_cast<double>(in));
    Tensor wt({in, out});
    for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = s * rng.normal();
    w = ps.add(name + ".w", g, std::move(wt));
    b = ps.add(name + ".b", g, Tensor::zeros({out}));
}

void Conv2dLayer::init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t in, int64_t out,
                       int k, int stride_, int pad_, Rng& rng, bool zero_init) {
    stride = stride_;
    pad = pad_;
    double s = zero_init ? 0.0 : std::sqrt(2.0 / static_cast<double>(in * k * k));
    Tensor wt({out, in, k, k});
    for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = s * rng.normal();
    w = ps.add(name + ".w", g, std::move(wt));
    b = ps.add(name + ".b", g, Tensor::zeros({out}));
}

void GroupNormLayer::init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t channels,
                          int groups_) {
    groups = groups_;
    gamma = ps.add(name + ".g", g, Tensor::full({channels}, 1.0));
    beta = ps.add(name + ".b", g, Tensor::zeros({channels}));
}

AdamW::AdamW(std::vector<Var> params, double lr, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    slots_.reserve(params_.size());
    for (const auto& p : params_)
        slots_.push_back({Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())});
}

void AdamW::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        if (!p->has_grad()) continue;
        auto& s = slots_[pi];
        double* w = p->value.data();
        const double* g = p->grad.data();
        double* m = s.m.data();
        double* v = s.v.data();
        int64_t n = p->value.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

Tensor timestep_features(const std::vector<int64_t>& t, int64_t dim, int64_t max_period) {
    require(dim % 2 == 0, ErrorKind::Config, "timestep feature dim must be even");
    int64_t B = static_cast<int64_t>(t.size());
    int64_t half = dim / 2;
    Tensor out({B, dim});
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(static_cast<double>(max_period)) *
                                   static_cast<double>(i) / static_cast<double>(half));
            double arg = static_cast<double>(t[bi]) * freq;
            out[bi * dim + i] = std::cos(arg);
            out[bi * dim + half + i] = std::sin(arg);
        }
    return out;
}

}  // namespace toyfashion
