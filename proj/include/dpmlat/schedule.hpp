#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dpmlat/common.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Noise schedule: the beta/alpha/alpha_bar ladder shared by every sampler and
// encoder. Steps are 1-based (t = 1..T) with the convention alpha_bar(0) = 1,
// so the terminal reverse step needs no special-casing. Immutable after
// construction; safe to share across threads.
// ---------------------------------------------------------------------------

class NoiseSchedule {
public:
    NoiseSchedule(std::vector<double> betas, double beta_start, double beta_end)
        : betas_(std::move(betas)), beta_start_(beta_start), beta_end_(beta_end) {
        if (betas_.empty()) throw ValidationError("schedule", "T must be >= 1");
        alphas_.resize(betas_.size());
        alpha_bars_.resize(betas_.size());
        double prod = 1.0;
        for (std::size_t i = 0; i < betas_.size(); ++i) {
            double b = betas_[i];
            if (!(b > 0.0 && b < 1.0))
                throw ValidationError("schedule", "beta[" + std::to_string(i + 1) +
                                                      "] = " + std::to_string(b) +
                                                      " outside (0,1)");
            alphas_[i] = 1.0 - b;
            prod *= alphas_[i];
            alpha_bars_[i] = prod;
            if (!(alpha_bars_[i] > 0.0 && alpha_bars_[i] < 1.0))
                throw ValidationError("schedule", "alpha_bar left (0,1) at step " +
                                                      std::to_string(i + 1));
        }
    }

    int steps() const noexcept { return static_cast<int>(betas_.size()); }

    double beta(int t) const { return betas_[index(t)]; }
    double alpha(int t) const { return alphas_[index(t)]; }

    // t in [0, T]; alpha_bar(0) = 1 by convention.
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        return alpha_bars_[index(t)];
    }

    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }

private:
    std::size_t index(int t) const {
        if (t < 1 || t > steps())
            throw IndexOutOfRange("schedule", "step " + std::to_string(t) +
                                                  " outside 1.." + std::to_string(steps()));
        return static_cast<std::size_t>(t - 1);
    }

    std::vector<double> betas_, alphas_, alpha_bars_;
    double beta_start_, beta_end_;
};

inline NoiseSchedule linear_schedule(double beta_start, double beta_end, int T) {
    if (T < 1) throw ValidationError("schedule", "T must be >= 1");
    if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
        throw ValidationError("schedule", "need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(T));
    if (T == 1) {
        betas[0] = beta_start;
    } else {
        for (int i = 0; i < T; ++i)
            betas[static_cast<std::size_t>(i)] =
                beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                 static_cast<double>(T - 1);
    }
    return NoiseSchedule(std::move(betas), beta_start, beta_end);
}

// sigma_t(eta) = eta * sqrt((1-abar_{t-1})/(1-abar_t)) * sqrt(1 - abar_t/abar_{t-1}).
// Zero for eta = 0, and zero at t = 1 because alpha_bar(0) = 1.
inline double ddim_sigma(const NoiseSchedule& s, int t, double eta) {
    if (eta < 0.0) throw ValidationError("schedule", "eta must be >= 0");
    double ab_prev = s.alpha_bar(t - 1);
    double ab = s.alpha_bar(t);
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

// q(x_t | x_0) reparameterized: sqrt(abar_t) x0 + sqrt(1-abar_t) noise.
inline Vec forward_marginal(const NoiseSchedule& s, const Vec& x0, int t, const Vec& noise) {
    check_same_dim("schedule", x0, noise);
    double ab = s.alpha_bar(t);
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Vec r(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) r[i] = a * x0[i] + b * noise[i];
    return r;
}

}  // namespace dpmlat
