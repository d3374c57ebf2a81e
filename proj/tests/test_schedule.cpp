#include <catch2/catch_amalgamated.hpp>

#include "dpmlat/rng.hpp"
#include "dpmlat/schedule.hpp"

using namespace dpmlat;
using Catch::Matchers::WithinAbs;

TEST_CASE("linear schedule endpoints and products", "[schedule]") {
    auto s = linear_schedule(1e-4, 0.02, 1000);
    CHECK_THAT(s.beta(1), WithinAbs(1e-4, 0.0));
    CHECK_THAT(s.beta(1000), WithinAbs(0.02, 0.0));

    auto s2 = linear_schedule(0.1, 0.2, 2);
    CHECK_THAT(s2.beta(1), WithinAbs(0.1, 0.0));
    CHECK_THAT(s2.beta(2), WithinAbs(0.2, 0.0));
    CHECK_THAT(s2.alpha(1), WithinAbs(0.9, 1e-15));
    CHECK_THAT(s2.alpha(2), WithinAbs(0.8, 1e-15));
    CHECK_THAT(s2.alpha_bar(1), WithinAbs(0.9, 1e-15));
    CHECK_THAT(s2.alpha_bar(2), WithinAbs(0.72, 1e-15));

    auto s1 = linear_schedule(0.5, 0.5, 1);
    CHECK_THAT(s1.alpha_bar(1), WithinAbs(0.5, 0.0));
    CHECK_THAT(s1.alpha_bar(0), WithinAbs(1.0, 0.0));
}

TEST_CASE("linear schedule rejects bad ranges", "[schedule]") {
    CHECK_THROWS_AS(linear_schedule(0.0, 0.1, 10), ValidationError);
    CHECK_THROWS_AS(linear_schedule(0.2, 0.1, 10), ValidationError);
    CHECK_THROWS_AS(linear_schedule(0.1, 1.0, 10), ValidationError);
    CHECK_THROWS_AS(linear_schedule(0.1, 0.2, 0), ValidationError);
    CHECK_THROWS_AS(NoiseSchedule(std::vector<double>{1.5}, 1.5, 1.5), ValidationError);
}

TEST_CASE("schedule invariants hold for a long ladder", "[schedule]") {
    auto s = linear_schedule(1e-4, 0.02, 1000);
    double prev = 1.0;
    for (int t = 1; t <= s.steps(); ++t) {
        CHECK(s.alpha_bar(t) > 0.0);
        CHECK(s.alpha_bar(t) < prev);
        CHECK_THAT(s.alpha_bar(t), WithinAbs(s.alpha_bar(t - 1) * s.alpha(t), 1e-18));
        prev = s.alpha_bar(t);
    }
    CHECK_THROWS_AS(s.beta(0), IndexOutOfRange);
    CHECK_THROWS_AS(s.beta(1001), IndexOutOfRange);
}

TEST_CASE("ddim sigma closed form", "[schedule]") {
    auto s = linear_schedule(0.1, 0.2, 2);
    // Hand evaluation of sigma_2(1) = sqrt(0.1/0.28) * sqrt(1 - 0.72/0.9).
    CHECK_THAT(ddim_sigma(s, 2, 1.0), WithinAbs(0.26726124191242438, 1e-15));
    CHECK_THAT(ddim_sigma(s, 1, 1.0), WithinAbs(0.0, 0.0));

    auto s3 = linear_schedule(1e-4, 0.02, 50);
    for (int t = 1; t <= 50; ++t) {
        CHECK(ddim_sigma(s3, t, 0.0) == 0.0);
        // Scale-linearity in eta.
        double base = ddim_sigma(s3, t, 1.0);
        for (double eta : {0.1, 0.3, 0.7}) {
            CHECK_THAT(ddim_sigma(s3, t, eta), WithinAbs(eta * base, 1e-15));
        }
    }
    CHECK_THROWS_AS(ddim_sigma(s3, 0, 1.0), IndexOutOfRange);
    CHECK_THROWS_AS(ddim_sigma(s3, 51, 1.0), IndexOutOfRange);
    CHECK_THROWS_AS(ddim_sigma(s3, 1, -0.5), ValidationError);
}

TEST_CASE("forward marginal formula", "[schedule]") {
    // abar_1 = 0.64.
    auto s = NoiseSchedule(std::vector<double>{0.36}, 0.36, 0.36);
    CHECK_THAT(forward_marginal(s, {1.0}, 1, {0.0})[0], WithinAbs(0.8, 1e-15));

    auto s2 = NoiseSchedule(std::vector<double>{0.75}, 0.75, 0.75);  // abar = 0.25
    // Zero signal: sqrt(1-abar) * n.
    CHECK_THAT(forward_marginal(s2, {0.0}, 1, {2.0})[0], WithinAbs(std::sqrt(0.75) * 2.0, 1e-15));
    // sqrt(.25)*2 + sqrt(.75)*1 (frozen from an independent evaluation).
    CHECK_THAT(forward_marginal(s2, {2.0}, 1, {1.0})[0], WithinAbs(1.8660254037844386, 1e-15));

    CHECK_THROWS_AS(forward_marginal(s2, {1.0, 2.0}, 1, {0.0}), DimensionMismatch);
}

TEST_CASE("forward marginal empirical moments", "[schedule]") {
    auto s = linear_schedule(1e-4, 0.02, 100);
    int t = 60;
    double ab = s.alpha_bar(t);
    Rng rng(7, 0);
    const int n = 100000;
    double sum = 0, sum2 = 0;
    double x0 = 1.5;
    for (int i = 0; i < n; ++i) {
        double v = forward_marginal(s, {x0}, t, {rng.normal()})[0];
        sum += v;
        sum2 += v * v;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    double se_mean = std::sqrt((1.0 - ab) / n);
    double se_var = (1.0 - ab) * std::sqrt(2.0 / n);
    CHECK(std::abs(mean - std::sqrt(ab) * x0) < 3.0 * se_mean);
    CHECK(std::abs(var - (1.0 - ab)) < 3.0 * se_var);
}
