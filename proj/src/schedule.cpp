#include "toyfashion/schedule.hpp"

#include <cmath>

namespace toyfashion {

NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end, const std::string& kind) {
    require(T >= 2, ErrorKind::Config, "schedule: T must be >= 2");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::Config,
            "schedule: need 0 < beta_start <= beta_end < 1");
    require(kind == "linear", ErrorKind::Config, "schedule: unsupported kind '" + kind + "'");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    double abar = 1.0;
    for (int64_t t = 0; t < T; ++t) {
        s.betas[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
        s.alphas[t] = 1.0 - s.betas[t];
        abar *= s.alphas[t];
        s.alpha_bars[t] = abar;
    }
    return s;
}

Tensor forward_noise(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched) {
    require(t >= 0 && t < sched.T, ErrorKind::Bounds, "forward_noise: timestep out of range");
    require(x0.same_shape(eps), ErrorKind::Shape, "forward_noise: x0/eps shape mismatch");
    double sa = std::sqrt(sched.alpha_bars[t]);
    double sb = std::sqrt(1.0 - sched.alpha_bars[t]);
    Tensor out = x0;
    double* d = out.data();
    const double* e = eps.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) d[i] = sa * d[i] + sb * e[i];
    return out;
}

}  // namespace toyfashion
