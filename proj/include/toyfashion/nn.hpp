#pragma once

#include <map>
#include <string>
#include <vector>

#include "toyfashion/autograd.hpp"
#include "toyfashion/rng.hpp"

namespace toyfashion {

// Trainable-parameter groups used by the staged training protocol.
enum class ParamGroup {
    Denoiser,  // backbone + self-attention + global cross-attention + global text table
    Local,     // local cross-attention branches + attribute text table
    MaskHead,  // mask prediction heads
};

std::string param_group_name(ParamGroup g);

struct ParamEntry {
    std::string name;
    ParamGroup group;
    Var var;
};

class ParamStore {
public:
    Var add(const std::string& name, ParamGroup group, Tensor init);
    const std::vector<ParamEntry>& entries() const { return entries_; }
    Var find(const std::string& name) const;
    std::vector<Var> group_vars(ParamGroup g) const;
    std::vector<Var> all_vars() const;
    void zero_grads();
    int64_t total_parameters() const;
    // one "name shape" line per parameter, in registration order
    std::string shapes_manifest() const;
    uint64_t weights_hash() const;
    uint64_t group_hash(ParamGroup g) const;

private:
    std::vector<ParamEntry> entries_;
    std::map<std::string, size_t> index_;
};

// ---- layers ----

struct LinearLayer {
    Var w, b;
    void init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t in, int64_t out, Rng& rng,
              bool zero_init = false);
    Var forward(const Var& x) const { return linear(x, w, b); }
};

struct Conv2dLayer {
    Var w, b;
    int stride = 1, pad = 1;
    void init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t in, int64_t out, int k,
              int stride, int pad, Rng& rng, bool zero_init = false);
    Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

struct GroupNormLayer {
    Var gamma, beta;
    int groups = 8;
    void init(ParamStore& ps, const std::string& name, ParamGroup g, int64_t channels, int groups);
    Var forward(const Var& x) const { return group_norm(x, gamma, beta, groups); }
};

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
public:
    AdamW(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8, double weight_decay = 0.0);
    void step();
    void zero_grad();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    struct Slot {
        Tensor m, v;
    };
    std::vector<Var> params_;
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_, wd_;
    int64_t t_ = 0;
};

// sinusoidal timestep features, dim must be even; not trainable
Tensor timestep_features(const std::vector<int64_t>& t, int64_t dim, int64_t max_period = 10000);

}  // namespace toyfashion
