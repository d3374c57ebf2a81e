#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/encoder.hpp"
#include "dpmlat/model.hpp"
#include "dpmlat/rng.hpp"
#include "dpmlat/sampler.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// CycleDiffusion: encode the source under (m_src, cond_src), replay the same
// residuals under (m_tgt, cond_tgt), optionally truncated at encoding step
// T_es. With identical source and target this collapses to encode-decode and
// returns the input exactly.
// ---------------------------------------------------------------------------

struct TranslationResult {
    Vec source;
    Vec output;
    int t_es = 0;
    // distances[j] = ||x_t - x_hat_t||_2 at level t = t_es - j (top-down,
    // ending with the output distance at level 0). distances[0] == 0 always.
    Vec distances;
    std::uint64_t seed = 0;
};

namespace detail {

inline void check_compatible(const MeanEstimator& a, const MeanEstimator& b) {
    if (a.dim() != b.dim())
        throw DimensionMismatch("translation", "source/target model dims differ");
    if (a.schedule().steps() != b.schedule().steps())
        throw ValidationError("translation", "schedule mismatch: different T");
    for (int t = 1; t <= a.schedule().steps(); ++t) {
        if (std::abs(a.schedule().beta(t) - b.schedule().beta(t)) > 1e-15)
            throw ValidationError("translation", "schedule mismatch at step " + std::to_string(t));
        if (std::abs(a.sigma(t) - b.sigma(t)) > 1e-12)
            throw ValidationError("translation",
                                  "noise-scale mismatch at step " + std::to_string(t) +
                                      " (families must agree)");
    }
}

}  // namespace detail

inline TranslationResult cycle_translate(const MeanEstimator& m_src, const MeanEstimator& m_tgt,
                                         const NoiseSchedule& s, const Vec& x0, int t_es,
                                         StepKind family, Rng& rng,
                                         ConditionLabel cond_src = {},
                                         ConditionLabel cond_tgt = {}) {
    if (t_es < 0 || t_es > s.steps())
        throw IndexOutOfRange("translation", "T_es outside 0..T");
    detail::check_compatible(m_src, m_tgt);
    if (static_cast<int>(x0.size()) != m_src.dim())
        throw DimensionMismatch("translation", "input dim vs model dim");

    TranslationResult res;
    res.source = x0;
    res.t_es = t_es;
    res.seed = rng.seed();
    if (t_es == 0) {
        res.output = x0;
        res.distances = {0.0};
        return res;
    }

    Trajectory traj = posterior_sample(s, x0, family, rng, t_es);
    Vec x_hat = traj.x[static_cast<std::size_t>(t_es)];  // shared x_hat_{T_es} = x_{T_es}
    res.distances.reserve(static_cast<std::size_t>(t_es) + 1);
    res.distances.push_back(0.0);
    for (int t = t_es; t >= 1; --t) {
        Vec eps = extract_residual(m_src, traj, t, cond_src);
        Vec mu = m_tgt.mean(x_hat, t, cond_tgt);
        double sg = m_tgt.sigma(t);
        for (std::size_t i = 0; i < x_hat.size(); ++i) x_hat[i] = mu[i] + sg * eps[i];
        if (!all_finite(x_hat))
            throw NumericalError("translation", "non-finite replay state", t, norm_inf(x_hat));
        res.distances.push_back(norm2(x_hat - traj.x[static_cast<std::size_t>(t - 1)]));
    }
    res.output = std::move(x_hat);
    return res;
}

// ---------------------------------------------------------------------------
// SDEdit: noise the input up to level T_sd via the forward marginal, then run
// the stochastic reverse chain back down with fresh randomness.
// ---------------------------------------------------------------------------

inline Vec sdedit_refine(const MeanEstimator& m, const NoiseSchedule& s, const Vec& x, int t_sd,
                         ConditionLabel cond, Rng& rng) {
    if (t_sd < 0 || t_sd > s.steps())
        throw IndexOutOfRange("translation", "T_sd outside 0..T");
    if (t_sd == 0) return x;
    Vec cur = forward_marginal(s, x, t_sd, rng.normal_vec(x.size()));
    for (int t = t_sd; t >= 1; --t) {
        Vec mu = m.mean(cur, t, cond);
        double sg = m.sigma(t);
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = mu[i] + sg * rng.normal();
        if (!all_finite(cur))
            throw NumericalError("translation", "non-finite sdedit state", t, norm_inf(cur));
    }
    return cur;
}

// ---------------------------------------------------------------------------
// DDIB baseline: exact forward-ODE encode under the source model (each
// noiseless step inverted by fixed-point iteration, Newton / bisection as
// fallbacks), then deterministic decode under the target model.
// ---------------------------------------------------------------------------

namespace detail {

// Solve ddim_jump(m, x, hi, lo) = target for x.
inline Vec invert_ddim_jump(const X0PredictingEstimator& m, const Vec& target, int hi, int lo,
                            ConditionLabel cond) {
    const int max_iter = 50;
    const double tol = 1e-10;
    std::size_t d = target.size();
    double ab_hi = m.schedule().alpha_bar(hi);
    double ab_lo = m.schedule().alpha_bar(lo);

    Vec x = target;
    if (lo >= 1) {
        // x = sqrt(abar_hi) x0(x) + sqrt(1-abar_hi) * (target - sqrt(abar_lo) x0(x)) / sqrt(1-abar_lo)
        double a = std::sqrt(ab_hi), b = std::sqrt(1.0 - ab_hi);
        double c = std::sqrt(ab_lo), e = std::sqrt(1.0 - ab_lo);
        for (int it = 0; it < max_iter; ++it) {
            Vec x0 = m.x0_hat(x, hi, cond);
            Vec next(d);
            for (std::size_t i = 0; i < d; ++i)
                next[i] = a * x0[i] + b * (target[i] - c * x0[i]) / e;
            double delta = norm_inf(next - x);
            x = std::move(next);
            if (delta < tol) return x;
        }
    }

    // Newton on g(x) = jump(x) - target, Jacobian rows from unit cotangents.
    x = target;
    for (int it = 0; it < max_iter; ++it) {
        Vec g = ddim_jump(m, x, hi, lo, cond) - target;
        if (norm_inf(g) < tol) return x;
        std::vector<double> J(d * d);
        Vec unit(d, 0.0);
        for (std::size_t r = 0; r < d; ++r) {
            unit[r] = 1.0;
            Vec row = ddim_jump_vjp(m, x, hi, lo, cond, unit);
            unit[r] = 0.0;
            // vjp with e_r returns row r of J.
            for (std::size_t kcol = 0; kcol < d; ++kcol) J[r * d + kcol] = row[kcol];
        }
        Vec step;
        try {
            step = solve_dense(std::move(J), g);
        } catch (const NumericalError&) {
            break;
        }
        for (std::size_t i = 0; i < d; ++i) x[i] -= step[i];
        if (!all_finite(x)) break;
    }
    {
        Vec g = ddim_jump(m, x, hi, lo, cond) - target;
        if (all_finite(x) && norm_inf(g) < tol) return x;
    }

    if (d == 1) {
        // Bisection with an expanding bracket.
        auto f = [&](double v) { return ddim_jump(m, {v}, hi, lo, cond)[0] - target[0]; };
        double rad = 1.0;
        double lo_x = target[0] - rad, hi_x = target[0] + rad;
        double flo = f(lo_x), fhi = f(hi_x);
        for (int grow = 0; grow < 60 && flo * fhi > 0.0; ++grow) {
            rad *= 2.0;
            lo_x = target[0] - rad;
            hi_x = target[0] + rad;
            flo = f(lo_x);
            fhi = f(hi_x);
        }
        if (flo * fhi <= 0.0) {
            for (int it = 0; it < 200; ++it) {
                double mid = 0.5 * (lo_x + hi_x);
                double fm = f(mid);
                if (std::abs(fm) < tol || hi_x - lo_x < tol) return {mid};
                if (flo * fm <= 0.0) {
                    hi_x = mid;
                } else {
                    lo_x = mid;
                    flo = fm;
                }
            }
            return {0.5 * (lo_x + hi_x)};
        }
    }
    throw NonConvergenceError("translation", "ddib step inversion failed", hi, norm_inf(x));
}

}  // namespace detail

inline Vec ddib_translate(const X0PredictingEstimator& m_src, const X0PredictingEstimator& m_tgt,
                          const Vec& x0, int t_g, ConditionLabel cond_src = {},
                          ConditionLabel cond_tgt = {}) {
    if (m_src.kind().family != StepFamily::Ddim || m_src.kind().eta != 0.0 ||
        m_tgt.kind().family != StepFamily::Ddim || m_tgt.kind().eta != 0.0)
        throw ValidationError("translation", "ddib requires deterministic (ddim eta=0) estimators");
    detail::check_compatible(m_src, m_tgt);
    int T = m_src.schedule().steps();
    std::vector<int> ladder = coarse_ladder(T, t_g);

    // Forward-ODE encode: invert each noiseless step from level lo up to hi.
    Vec x = x0;
    for (int i = 0; i < t_g; ++i) {
        int hi = ladder[static_cast<std::size_t>(i)];
        int lo = (i == 0) ? 0 : ladder[static_cast<std::size_t>(i - 1)];
        x = detail::invert_ddim_jump(m_src, x, hi, lo, cond_src);
    }
    // Decode under the target model over the same ladder.
    for (int i = t_g - 1; i >= 0; --i) {
        int hi = ladder[static_cast<std::size_t>(i)];
        int lo = (i == 0) ? 0 : ladder[static_cast<std::size_t>(i - 1)];
        x = ddim_jump(m_tgt, x, hi, lo, cond_tgt);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Regional Lipschitz / condition-gap probes and the distance-bound recursion
//   B_{t-1} = (K_t + 1) B_t + S_t,   B_{T_es} = 0.
// Mixture posterior means are not globally Lipschitz, so the estimates are
// explicitly regional (probe box) and reported as empirical lower estimates.
// ---------------------------------------------------------------------------

struct ProbeRegion {
    Vec lo, hi;

    void validate() const {
        check_same_dim("translation", lo, hi);
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (!(lo[i] < hi[i])) throw ValidationError("translation", "empty probe region");
    }

    Vec sample(Rng& rng) const {
        Vec x(lo.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
        return x;
    }

    // Box covering +-span posterior standard deviations of a mixture.
    static ProbeRegion for_mixture(const GaussianMixture& gm, double span = 4.0) {
        std::size_t d = static_cast<std::size_t>(gm.dim());
        ProbeRegion r;
        r.lo.assign(d, 1e300);
        r.hi.assign(d, -1e300);
        for (const auto& c : gm.components) {
            for (std::size_t i = 0; i < d; ++i) {
                double sd = std::sqrt(c.var[i]);
                r.lo[i] = std::min(r.lo[i], c.mean[i] - span * sd);
                r.hi[i] = std::max(r.hi[i], c.mean[i] + span * sd);
            }
        }
        return r;
    }
};

struct ProbeConfig {
    int n_probes = 256;
    double pair_step = 1e-4;  // local pair separation, relative to region size
};

// max ||mu(x) - mu(x')|| / ||x - x'|| over probe pairs (half local pairs,
// half independent pairs). An empirical lower estimate of the regional
// Lipschitz modulus.
inline double estimate_lipschitz(const MeanEstimator& m, int t, ConditionLabel cond,
                                 const ProbeConfig& cfg, const ProbeRegion& region, Rng& rng) {
    region.validate();
    if (cfg.n_probes < 1) throw ValidationError("translation", "probe count must be >= 1");
    double diam = 0.0;
    for (std::size_t i = 0; i < region.lo.size(); ++i)
        diam = std::max(diam, region.hi[i] - region.lo[i]);
    double best = 0.0;
    for (int p = 0; p < cfg.n_probes; ++p) {
        Vec x = region.sample(rng);
        Vec x2;
        if (p % 2 == 0) {
            Vec dir = rng.normal_vec(x.size());
            double n = norm2(dir);
            if (n < 1e-12) continue;
            x2 = x;
            axpy(cfg.pair_step * diam / n, dir, x2);
        } else {
            x2 = region.sample(rng);
        }
        double dx = norm2(x - x2);
        if (dx < 1e-15) continue;
        double dmu = norm2(m.mean(x, t, cond) - m.mean(x2, t, cond));
        best = std::max(best, dmu / dx);
    }
    return best;
}

// max ||mu(x | a) - mu(x | b)|| over probes.
inline double estimate_condition_gap(const MeanEstimator& m, int t, ConditionLabel cond_a,
                                     ConditionLabel cond_b, const ProbeConfig& cfg,
                                     const ProbeRegion& region, Rng& rng) {
    region.validate();
    if (cfg.n_probes < 1) throw ValidationError("translation", "probe count must be >= 1");
    double best = 0.0;
    for (int p = 0; p < cfg.n_probes; ++p) {
        Vec x = region.sample(rng);
        best = std::max(best, norm2(m.mean(x, t, cond_a) - m.mean(x, t, cond_b)));
    }
    return best;
}

struct BoundProfile {
    Vec K, S;              // per-step moduli, K[i] = K_{i+1}
    Vec B;                 // B[j] = bound at level t_es - j (top-down), B[0] = 0
    std::vector<int> violated_levels;  // levels where a measured norm exceeded B
};

inline BoundProfile propagate_bound(const Vec& K, const Vec& S, const Vec& measured = {}) {
    if (K.size() != S.size())
        throw DimensionMismatch("translation", "K and S must have equal length");
    for (double v : K)
        if (v < 0.0 || !std::isfinite(v))
            throw ValidationError("translation", "K entries must be >= 0");
    for (double v : S)
        if (v < 0.0 || !std::isfinite(v))
            throw ValidationError("translation", "S entries must be >= 0");
    int t_es = static_cast<int>(K.size());

    BoundProfile prof;
    prof.K = K;
    prof.S = S;
    prof.B.assign(static_cast<std::size_t>(t_es) + 1, 0.0);
    // B stored top-down: B[j] is the bound at level t_es - j.
    for (int j = 1; j <= t_es; ++j) {
        int t = t_es - j + 1;  // the step consumed between levels t and t-1
        double Kt = K[static_cast<std::size_t>(t - 1)];
        double St = S[static_cast<std::size_t>(t - 1)];
        prof.B[static_cast<std::size_t>(j)] = (Kt + 1.0) * prof.B[static_cast<std::size_t>(j - 1)] + St;
    }
    if (!measured.empty()) {
        if (measured.size() != prof.B.size())
            throw DimensionMismatch("translation", "measured trace length vs bound length");
        for (std::size_t j = 0; j < measured.size(); ++j)
            if (measured[j] > prof.B[j] + 1e-12)
                prof.violated_levels.push_back(t_es - static_cast<int>(j));
    }
    return prof;
}

}  // namespace dpmlat
