#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/latent.hpp"
#include "dpmlat/model.hpp"
#include "dpmlat/rng.hpp"
#include "dpmlat/sampler.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Fixed-posterior trajectory x_0..x_{T_enc} given a data point, and the
// residual extraction that turns it into a latent code. Reconstruction is
// exact by construction: the residuals are whatever makes each reverse step
// reproduce the sampled trajectory.
// ---------------------------------------------------------------------------

struct Trajectory {
    std::vector<Vec> x;  // x[t] = state at level t, t = 0..T_enc

    int levels() const { return static_cast<int>(x.size()) - 1; }

    void validate(const Vec& x0) const {
        if (x.empty() || x[0] != x0)
            throw ValidationError("encoder", "trajectory must start at the input");
        for (const auto& v : x)
            if (!all_finite(v)) throw NumericalError("encoder", "non-finite trajectory entry");
    }

    void to_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw ValidationError("encoder", "cannot open " + path);
        f << "step";
        for (std::size_t i = 0; i < x[0].size(); ++i) f << ",x" << i;
        f << "\n";
        for (std::size_t t = 0; t < x.size(); ++t) {
            f << t;
            for (double v : x[t]) f << "," << v;
            f << "\n";
        }
    }
};

// Sample x_1..x_{T_enc} from the fixed posterior q(x_{1:T_enc} | x_0).
//   ddpm families: the forward chain q(x_t | x_{t-1}) = N(sqrt(1-beta_t) x_{t-1}, beta_t I).
//   ddim(eta):     x_{T_enc} from the marginal, then the reversed conditionals
//                  q(x_{t-1} | x_t, x_0) for t = T_enc..2.
// Both factorizations realize the same joint law.
inline Trajectory posterior_sample(const NoiseSchedule& s, const Vec& x0, StepKind family,
                                   Rng& rng, int t_enc = -1) {
    if (!all_finite(x0)) throw NumericalError("encoder", "non-finite input");
    if (t_enc < 0) t_enc = s.steps();
    if (t_enc > s.steps()) throw IndexOutOfRange("encoder", "t_enc exceeds schedule T");
    std::size_t d = x0.size();

    Trajectory traj;
    traj.x.resize(static_cast<std::size_t>(t_enc) + 1);
    traj.x[0] = x0;
    if (t_enc == 0) return traj;

    if (family.family != StepFamily::Ddim) {
        for (int t = 1; t <= t_enc; ++t) {
            double a = std::sqrt(1.0 - s.beta(t)), b = std::sqrt(s.beta(t));
            const Vec& prev = traj.x[static_cast<std::size_t>(t - 1)];
            Vec cur(d);
            for (std::size_t i = 0; i < d; ++i) cur[i] = a * prev[i] + b * rng.normal();
            traj.x[static_cast<std::size_t>(t)] = std::move(cur);
        }
        return traj;
    }

    // DDIM-form posterior.
    {
        double ab = s.alpha_bar(t_enc);
        double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        Vec top(d);
        for (std::size_t i = 0; i < d; ++i) top[i] = a * x0[i] + b * rng.normal();
        traj.x[static_cast<std::size_t>(t_enc)] = std::move(top);
    }
    for (int t = t_enc; t >= 2; --t) {
        double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
        double sf = ddim_sigma(s, t, family.eta);
        double dir = 1.0 - ab_prev - sf * sf;
        if (dir < 0.0) dir = 0.0;
        double a0 = std::sqrt(ab_prev), ae = std::sqrt(dir) / std::sqrt(1.0 - ab);
        const Vec& cur = traj.x[static_cast<std::size_t>(t)];
        Vec prev(d);
        for (std::size_t i = 0; i < d; ++i)
            prev[i] = a0 * x0[i] + ae * (cur[i] - std::sqrt(ab) * x0[i]) + sf * rng.normal();
        traj.x[static_cast<std::size_t>(t - 1)] = std::move(prev);
    }
    return traj;
}

// Residual extraction (the encoder core): eps_t = (x_{t-1} - mu(x_t, t)) / sigma_t.
// Shared by the full encoder and the truncated translation loop.
inline Vec extract_residual(const MeanEstimator& m, const Trajectory& traj, int t,
                            ConditionLabel cond) {
    double s = m.sigma(t);
    if (s < 1e-12)
        throw ZeroSigmaError("encoder",
                             "sigma_" + std::to_string(t) +
                                 " vanishes; residuals need a strictly stochastic family",
                             t, s);
    const Vec& x_t = traj.x[static_cast<std::size_t>(t)];
    const Vec& x_prev = traj.x[static_cast<std::size_t>(t - 1)];
    Vec mu = m.mean(x_t, t, cond);
    Vec e(x_t.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (x_prev[i] - mu[i]) / s;
    return e;
}

// DPM-Encoder: z ~ DPMEnc(z | x0, G). Stochastic (fresh trajectory per call);
// every returned code reconstructs x0 exactly under generate().
inline LatentCode dpm_encode(const MeanEstimator& m, const NoiseSchedule& s, const Vec& x0,
                             ConditionLabel cond, StepKind family, Rng& rng) {
    if (static_cast<int>(x0.size()) != m.dim())
        throw DimensionMismatch("encoder", "x0 dim vs model dim");
    int T = s.steps();
    if (T != m.schedule().steps())
        throw DimensionMismatch("encoder", "schedule T vs model schedule T");
    Trajectory traj = posterior_sample(s, x0, family, rng, T);

    LatentCode z;
    z.data_dim = static_cast<int>(x0.size());
    z.steps = T;
    z.x_T = traj.x[static_cast<std::size_t>(T)];
    z.eps.resize(static_cast<std::size_t>(T));
    for (int t = T; t >= 1; --t) z.eps_at(t) = extract_residual(m, traj, t, cond);
    return z;
}

// Convenience overload for estimators that carry their own step family.
inline LatentCode dpm_encode(const X0PredictingEstimator& m, const Vec& x0, ConditionLabel cond,
                             Rng& rng) {
    return dpm_encode(m, m.schedule(), x0, cond, m.kind(), rng);
}

}  // namespace dpmlat
