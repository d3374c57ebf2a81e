#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/latent.hpp"
#include "dpmlat/model.hpp"

namespace dpmlat {

struct SamplerConfig {
    double eta = 0.0;      // DDIM stochasticity
    int t_g = 0;           // gradient-time step count (0 = full T)
    std::uint64_t seed = 0;
};

namespace detail {

inline void check_finite_state(const char* module, const Vec& x, int t) {
    if (!all_finite(x))
        throw NumericalError(module, "non-finite state", t, norm_inf(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// x = G(z): the deterministic map of a stochastic reverse chain,
//   x_{t-1} = mu(x_t, t | cond) + sigma_t * eps_t,  t = T..1.
// Pure function of its inputs; identical inputs give bit-identical outputs.
// ---------------------------------------------------------------------------

inline Vec generate(const MeanEstimator& m, const LatentCode& z, ConditionLabel cond = {}) {
    z.validate();
    if (z.steps != m.schedule().steps())
        throw DimensionMismatch("sampler", "latent steps vs schedule T");
    if (z.data_dim != m.dim())
        throw DimensionMismatch("sampler", "latent data_dim vs model dim");
    Vec x = z.x_T;
    for (int t = z.steps; t >= 1; --t) {
        Vec mu = m.mean(x, t, cond);
        double s = m.sigma(t);
        const Vec& e = z.eps_at(t);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = mu[i] + s * e[i];
        detail::check_finite_state("sampler", x, t);
    }
    return x;
}

// Reverse chain with retained intermediate states x_T..x_0 (x[t] = state at
// level t). Used by gradient passes and trajectory inspection.
inline std::vector<Vec> generate_trajectory(const MeanEstimator& m, const LatentCode& z,
                                            ConditionLabel cond = {}) {
    z.validate();
    if (z.steps != m.schedule().steps())
        throw DimensionMismatch("sampler", "latent steps vs schedule T");
    std::vector<Vec> traj(static_cast<std::size_t>(z.steps) + 1);
    traj[static_cast<std::size_t>(z.steps)] = z.x_T;
    for (int t = z.steps; t >= 1; --t) {
        const Vec& x = traj[static_cast<std::size_t>(t)];
        Vec mu = m.mean(x, t, cond);
        double s = m.sigma(t);
        const Vec& e = z.eps_at(t);
        Vec next(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) next[i] = mu[i] + s * e[i];
        detail::check_finite_state("sampler", next, t);
        traj[static_cast<std::size_t>(t - 1)] = std::move(next);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Coarse step ladder for few-step deterministic sampling: an evenly spaced
// subsequence of 1..T that always contains T (and 1..T itself when t_g = T).
// Returned ascending.
// ---------------------------------------------------------------------------

inline std::vector<int> coarse_ladder(int T, int t_g) {
    if (t_g < 1 || t_g > T)
        throw ValidationError("sampler", "need 1 <= T_g <= T");
    std::vector<int> ladder(static_cast<std::size_t>(t_g));
    for (int i = 1; i <= t_g; ++i) {
        int level = static_cast<int>(std::lround(static_cast<double>(i) * T / t_g));
        ladder[static_cast<std::size_t>(i - 1)] = std::max(1, std::min(T, level));
    }
    // Rounding can collide when t_g is close to T; restore strictness from the
    // top (always possible since t_g <= T).
    ladder.back() = T;
    for (int i = t_g - 2; i >= 0; --i)
        ladder[static_cast<std::size_t>(i)] =
            std::min(ladder[static_cast<std::size_t>(i)], ladder[static_cast<std::size_t>(i + 1)] - 1);
    return ladder;
}

// One noiseless DDIM step between arbitrary ladder levels:
//   x_lo = sqrt(abar_lo) x0_hat(x_hi, hi) + sqrt(1 - abar_lo) eps_hat(x_hi, hi),
// with abar_0 = 1 so the final step returns the x0 prediction.
inline Vec ddim_jump(const X0PredictingEstimator& m, const Vec& x, int level_hi, int level_lo,
                     ConditionLabel cond = {}) {
    double ab_lo = m.schedule().alpha_bar(level_lo);
    Vec x0 = m.x0_hat(x, level_hi, cond);
    Vec e = m.eps_hat(x, level_hi, cond);
    double a = std::sqrt(ab_lo), b = std::sqrt(1.0 - ab_lo);
    Vec r(x.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = a * x0[i] + b * e[i];
    return r;
}

// Pullback of a cotangent through one ddim_jump.
inline Vec ddim_jump_vjp(const X0PredictingEstimator& m, const Vec& x, int level_hi,
                         int level_lo, ConditionLabel cond, const Vec& cot) {
    double ab_lo = m.schedule().alpha_bar(level_lo);
    double a = std::sqrt(ab_lo), b = std::sqrt(1.0 - ab_lo);
    Vec xv = m.x0_vjp(x, level_hi, cond, cot);
    Vec ev = m.eps_vjp(x, level_hi, cond, cot);
    Vec r(cot.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = a * xv[i] + b * ev[i];
    return r;
}

// Deterministic map x = G(x_T) over a t_g-step ladder (noiseless recursion).
inline Vec generate_deterministic(const X0PredictingEstimator& m, const Vec& x_T, int t_g,
                                  ConditionLabel cond = {}) {
    int T = m.schedule().steps();
    if (static_cast<int>(x_T.size()) != m.dim())
        throw DimensionMismatch("sampler", "x_T dim vs model dim");
    std::vector<int> ladder = coarse_ladder(T, t_g);
    Vec x = x_T;
    for (int i = t_g - 1; i >= 0; --i) {
        int hi = ladder[static_cast<std::size_t>(i)];
        int lo = (i == 0) ? 0 : ladder[static_cast<std::size_t>(i - 1)];
        x = ddim_jump(m, x, hi, lo, cond);
        detail::check_finite_state("sampler", x, hi);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Forward value plus pullback of a cotangent onto the whole latent code.
// The forward pass matches generate() bit-exactly (same step arithmetic).
// Gradient structure per step: x_{t-1} = mu(x_t) + sigma_t eps_t, so
//   d/d eps_t = sigma_t * u_{t-1},   u_t = mean_vjp(x_t, t, u_{t-1}).
// ---------------------------------------------------------------------------

struct GenerateGrad {
    Vec x0;
    LatentCode grad;  // same shape as the latent code
};

inline GenerateGrad generate_with_grad(const MeanEstimator& m, const LatentCode& z,
                                       ConditionLabel cond, const Vec& cotangent) {
    std::vector<Vec> traj = generate_trajectory(m, z, cond);
    if (static_cast<int>(cotangent.size()) != z.data_dim)
        throw DimensionMismatch("sampler", "cotangent dim vs data dim");

    GenerateGrad out;
    out.x0 = traj[0];
    out.grad.data_dim = z.data_dim;
    out.grad.steps = z.steps;
    out.grad.eps.resize(static_cast<std::size_t>(z.steps));

    Vec u = cotangent;
    for (int t = 1; t <= z.steps; ++t) {
        out.grad.eps_at(t) = m.sigma(t) * u;
        u = m.mean_vjp(traj[static_cast<std::size_t>(t)], t, cond, u);
    }
    out.grad.x_T = std::move(u);
    return out;
}

// Same for the deterministic ladder: value and d(cot . x0)/d x_T.
inline std::pair<Vec, Vec> generate_deterministic_with_grad(const X0PredictingEstimator& m,
                                                            const Vec& x_T, int t_g,
                                                            ConditionLabel cond,
                                                            const Vec& cotangent) {
    int T = m.schedule().steps();
    std::vector<int> ladder = coarse_ladder(T, t_g);
    std::vector<Vec> states(static_cast<std::size_t>(t_g) + 1);
    states[static_cast<std::size_t>(t_g)] = x_T;
    for (int i = t_g - 1; i >= 0; --i) {
        int hi = ladder[static_cast<std::size_t>(i)];
        int lo = (i == 0) ? 0 : ladder[static_cast<std::size_t>(i - 1)];
        states[static_cast<std::size_t>(i)] =
            ddim_jump(m, states[static_cast<std::size_t>(i + 1)], hi, lo, cond);
        detail::check_finite_state("sampler", states[static_cast<std::size_t>(i)], hi);
    }
    Vec u = cotangent;
    for (int i = 0; i < t_g; ++i) {
        int hi = ladder[static_cast<std::size_t>(i)];
        int lo = (i == 0) ? 0 : ladder[static_cast<std::size_t>(i - 1)];
        const Vec& x = states[static_cast<std::size_t>(i + 1)];
        double ab_lo = m.schedule().alpha_bar(lo);
        double a = std::sqrt(ab_lo), b = std::sqrt(1.0 - ab_lo);
        Vec xv = m.x0_vjp(x, hi, cond, u);
        Vec ev = m.eps_vjp(x, hi, cond, u);
        for (std::size_t k = 0; k < u.size(); ++k) u[k] = a * xv[k] + b * ev[k];
    }
    return {states[0], std::move(u)};
}

}  // namespace dpmlat
