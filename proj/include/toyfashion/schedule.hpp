#pragma once

#include <string>
#include <vector>

#include "toyfashion/tensor.hpp"

namespace toyfashion {

// beta/alpha/alpha_bar tables over T timesteps.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // cumulative product of alphas
};

// linear is the only supported kind
NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end,
                            const std::string& kind = "linear");

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
Tensor forward_noise(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched);

}  // namespace toyfashion
