#include "doctest.h"

#include <cmath>

#include "toyfashion/schedule.hpp"

using namespace toyfashion;

TEST_CASE("standard 1000-step linear schedule matches an independent cumprod") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    // independent oracle in extended precision
    long double abar = 1.0L;
    for (int64_t t = 0; t < 1000; ++t) {
        long double beta = 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t) / 999.0L;
        abar *= (1.0L - beta);
        CHECK(std::abs(s.alpha_bars[t] - static_cast<double>(abar)) <= 1e-12);
    }
    CHECK(s.alpha_bars[999] == doctest::Approx(4.035830e-05).epsilon(1e-5));
}

TEST_CASE("two-step constant-beta schedule by hand") {
    NoiseSchedule s = make_schedule(2, 0.5, 0.5);
    CHECK(s.alpha_bars[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.alpha_bars[1] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("alpha_bar is strictly decreasing for any valid schedule") {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        int64_t T = 2 + static_cast<int64_t>(rng.uniform_int(200));
        double b0 = rng.uniform(1e-5, 0.1);
        double b1 = b0 + rng.uniform(0.0, 0.5);
        NoiseSchedule s = make_schedule(T, b0, std::min(b1, 0.999));
        for (int64_t t = 1; t < T; ++t) CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
    }
}

TEST_CASE("schedule rejects invalid ranges") {
    CHECK_THROWS_AS(make_schedule(1, 1e-4, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.5, 1.0), Error);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 0.02, "cosine"), Error);
}

TEST_CASE("forward_noise closed form") {
    NoiseSchedule s = make_schedule(2, 0.5, 0.5);
    Rng rng(3);
    Tensor x0 = Tensor::randn({2, 3, 4, 4}, rng);

    SUBCASE("zero noise keeps the scaled signal") {
        Tensor eps = Tensor::zeros(x0.shape());
        Tensor n = forward_noise(x0, 0, eps, s);
        for (int64_t i = 0; i < n.numel(); ++i)
            CHECK(n[i] == doctest::Approx(std::sqrt(0.5) * x0[i]).epsilon(1e-14));
    }
    SUBCASE("zero signal keeps the scaled noise: sqrt(1-abar_1)=sqrt(0.75)") {
        Tensor zero = Tensor::zeros({1, 4});
        Tensor ones = Tensor::full({1, 4}, 1.0);
        Tensor n = forward_noise(zero, 1, ones, s);
        for (int64_t i = 0; i < n.numel(); ++i)
            CHECK(n[i] == doctest::Approx(std::sqrt(0.75)).epsilon(1e-14));
    }
    SUBCASE("near-zero abar returns nearly the noise") {
        NoiseSchedule big = make_schedule(500, 0.05, 0.2);
        Tensor eps = Tensor::randn(x0.shape(), rng);
        Tensor n = forward_noise(x0, 499, eps, big);
        for (int64_t i = 0; i < n.numel(); ++i) CHECK(std::abs(n[i] - eps[i]) < 1e-4);
    }
    SUBCASE("timestep bounds are enforced") {
        Tensor eps = Tensor::zeros(x0.shape());
        CHECK_THROWS_AS(forward_noise(x0, 2, eps, s), Error);
        CHECK_THROWS_AS(forward_noise(x0, -1, eps, s), Error);
    }
    SUBCASE("shape mismatch is a shape error") {
        Tensor eps = Tensor::zeros({1, 2});
        CHECK_THROWS_AS(forward_noise(x0, 0, eps, s), Error);
    }
}

TEST_CASE("forward_noise empirical variance tracks 1-abar") {
    NoiseSchedule s = make_schedule(100, 1e-3, 0.05);
    Rng rng(17);
    Tensor x0 = Tensor::full({1, 64}, 0.37);
    int64_t t = 60;
    int64_t draws = 4000;
    double mean = 0.0, m2 = 0.0;
    int64_t n = 0;
    for (int64_t d = 0; d < draws; ++d) {
        Tensor eps = Tensor::randn(x0.shape(), rng);
        Tensor xt = forward_noise(x0, t, eps, s);
        for (int64_t i = 0; i < xt.numel(); ++i) {
            ++n;
            double delta = xt[i] - mean;
            mean += delta / static_cast<double>(n);
            m2 += delta * (xt[i] - mean);
        }
    }
    double var = m2 / static_cast<double>(n - 1);
    double want = 1.0 - s.alpha_bars[t];
    CHECK(std::abs(var - want) / want < 0.05);
}
