#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/schedule.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Conditioning: a small discrete label selecting a sub-population of the
// model (absent = unconditional).
// ---------------------------------------------------------------------------

class ConditionLabel {
public:
    ConditionLabel() = default;
    explicit ConditionLabel(int label) : label_(label) {
        if (label < 0) throw ValidationError("model", "condition label must be >= 0");
    }
    bool has_value() const noexcept { return label_.has_value(); }
    int value() const { return label_.value(); }
    bool operator==(const ConditionLabel& o) const noexcept { return label_ == o.label_; }

private:
    std::optional<int> label_;
};

// ---------------------------------------------------------------------------
// Reverse-step family: which mean/noise formulas the chain uses.
// ---------------------------------------------------------------------------

enum class StepFamily { DdpmOpt1, DdpmOpt2, Ddim };

struct StepKind {
    StepFamily family = StepFamily::DdpmOpt2;
    double eta = 0.0;  // only meaningful for Ddim

    static StepKind ddpm_opt1() { return {StepFamily::DdpmOpt1, 0.0}; }
    static StepKind ddpm_opt2() { return {StepFamily::DdpmOpt2, 0.0}; }
    static StepKind ddim(double eta) {
        if (eta < 0.0 || eta > 1.0)
            throw ValidationError("model", "ddim eta must lie in [0, 1]");
        return {StepFamily::Ddim, eta};
    }
    bool stochastic() const noexcept { return family != StepFamily::Ddim || eta > 0.0; }
    std::string name() const {
        switch (family) {
            case StepFamily::DdpmOpt1: return "ddpm-opt1";
            case StepFamily::DdpmOpt2: return "ddpm-opt2";
            default: return "ddim(" + std::to_string(eta) + ")";
        }
    }
};

// ---------------------------------------------------------------------------
// MeanEstimator: mu_T(x_t, t | cond) with per-step noise scale and a
// vector-Jacobian product for gradient propagation. Implementations are
// immutable and safe to share read-only.
// ---------------------------------------------------------------------------

class MeanEstimator {
public:
    virtual ~MeanEstimator() = default;
    virtual int dim() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual Vec mean(const Vec& x_t, int t, ConditionLabel cond = {}) const = 0;
    virtual double sigma(int t) const = 0;
    // Returns J^T cotangent where J = d mean / d x_t.
    virtual Vec mean_vjp(const Vec& x_t, int t, ConditionLabel cond, const Vec& cotangent) const = 0;
    virtual bool supports(ConditionLabel) const { return true; }
};

// ---------------------------------------------------------------------------
// Estimators built on an epsilon-predictor (or equivalently an x0-predictor).
// The DDPM/DDIM step formulas live here; concrete models only supply
// eps_hat / x0_hat and their pullbacks.
//
// Chain noise scales: the reverse chain keeps a strictly positive scale at
// the terminal step (sqrt(beta_1) for ddpm-opt2, eta*sqrt(beta_1) for ddim),
// where the raw option-2/DDIM formulas degenerate to zero via alpha_bar(0)=1.
// Residual extraction divides by these scales, so the whole ladder must stay
// stochastic for eta > 0; the ddpm-opt1 value sqrt(beta_1) is the natural
// terminal scale (note 1 - alpha_bar(1) = beta_1 exactly).
// ---------------------------------------------------------------------------

class X0PredictingEstimator : public MeanEstimator {
public:
    X0PredictingEstimator(std::shared_ptr<const NoiseSchedule> s, StepKind kind)
        : sched_(std::move(s)), kind_(kind) {}

    const NoiseSchedule& schedule() const override { return *sched_; }
    std::shared_ptr<const NoiseSchedule> schedule_ptr() const { return sched_; }
    StepKind kind() const noexcept { return kind_; }

    virtual Vec eps_hat(const Vec& x_t, int t, ConditionLabel cond = {}) const {
        // eps = (x - sqrt(abar) x0) / sqrt(1 - abar)
        double ab = sched_->alpha_bar(t);
        Vec x0 = x0_hat(x_t, t, cond);
        double a = std::sqrt(ab), b = 1.0 / std::sqrt(1.0 - ab);
        Vec r(x_t.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = (x_t[i] - a * x0[i]) * b;
        return r;
    }

    virtual Vec x0_hat(const Vec& x_t, int t, ConditionLabel cond = {}) const = 0;
    virtual Vec x0_vjp(const Vec& x_t, int t, ConditionLabel cond, const Vec& cot) const = 0;

    virtual Vec eps_vjp(const Vec& x_t, int t, ConditionLabel cond, const Vec& cot) const {
        double ab = sched_->alpha_bar(t);
        double a = std::sqrt(ab), b = 1.0 / std::sqrt(1.0 - ab);
        Vec xv = x0_vjp(x_t, t, cond, cot);
        Vec r(cot.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = (cot[i] - a * xv[i]) * b;
        return r;
    }

    Vec mean(const Vec& x_t, int t, ConditionLabel cond = {}) const override {
        switch (kind_.family) {
            case StepFamily::DdpmOpt1:
            case StepFamily::DdpmOpt2: {
                double c = sched_->beta(t) / std::sqrt(1.0 - sched_->alpha_bar(t));
                double inv = 1.0 / std::sqrt(sched_->alpha(t));
                Vec e = eps_hat(x_t, t, cond);
                Vec r(x_t.size());
                for (std::size_t i = 0; i < r.size(); ++i) r[i] = (x_t[i] - c * e[i]) * inv;
                return r;
            }
            case StepFamily::Ddim: {
                auto [a, b] = ddim_mean_coeffs(t);
                Vec x0 = x0_hat(x_t, t, cond);
                Vec e = eps_hat(x_t, t, cond);
                Vec r(x_t.size());
                for (std::size_t i = 0; i < r.size(); ++i) r[i] = a * x0[i] + b * e[i];
                return r;
            }
        }
        throw ValidationError("model", "unsupported step kind");
    }

    double sigma(int t) const override {
        double b1 = sched_->beta(1);
        switch (kind_.family) {
            case StepFamily::DdpmOpt1:
                return std::sqrt(sched_->beta(t));
            case StepFamily::DdpmOpt2:
                if (t == 1) return std::sqrt(b1);
                return std::sqrt((1.0 - sched_->alpha_bar(t - 1)) * sched_->beta(t) /
                                 (1.0 - sched_->alpha_bar(t)));
            case StepFamily::Ddim:
                if (t == 1) return kind_.eta * std::sqrt(b1);
                return ddim_sigma(*sched_, t, kind_.eta);
        }
        throw ValidationError("model", "unsupported step kind");
    }

    Vec mean_vjp(const Vec& x_t, int t, ConditionLabel cond, const Vec& cot) const override {
        switch (kind_.family) {
            case StepFamily::DdpmOpt1:
            case StepFamily::DdpmOpt2: {
                double c = sched_->beta(t) / std::sqrt(1.0 - sched_->alpha_bar(t));
                double inv = 1.0 / std::sqrt(sched_->alpha(t));
                Vec ev = eps_vjp(x_t, t, cond, cot);
                Vec r(cot.size());
                for (std::size_t i = 0; i < r.size(); ++i) r[i] = (cot[i] - c * ev[i]) * inv;
                return r;
            }
            case StepFamily::Ddim: {
                auto [a, b] = ddim_mean_coeffs(t);
                Vec xv = x0_vjp(x_t, t, cond, cot);
                Vec ev = eps_vjp(x_t, t, cond, cot);
                Vec r(cot.size());
                for (std::size_t i = 0; i < r.size(); ++i) r[i] = a * xv[i] + b * ev[i];
                return r;
            }
        }
        throw ValidationError("model", "unsupported step kind");
    }

private:
    // mu = a * x0_hat + b * eps_hat with a = sqrt(abar_{t-1}),
    // b = sqrt(1 - abar_{t-1} - sigma_t^2); sigma here is the raw DDIM formula
    // value, which vanishes at t = 1 so the mean collapses to x0_hat.
    std::pair<double, double> ddim_mean_coeffs(int t) const {
        double ab_prev = sched_->alpha_bar(t - 1);
        double sf = ddim_sigma(*sched_, t, kind_.eta);
        double inner = 1.0 - ab_prev - sf * sf;
        if (inner < 0.0) inner = 0.0;  // guards roundoff at eta = 1
        return {std::sqrt(ab_prev), std::sqrt(inner)};
    }

    std::shared_ptr<const NoiseSchedule> sched_;
    StepKind kind_;
};

// ---------------------------------------------------------------------------
// Gaussian mixture with diagonal covariance; mixtures are the analytic
// stand-in for a trained data distribution. Components may carry a label so
// a single mixture can serve as a conditional model (condition = restrict to
// that label's components and renormalize weights).
// ---------------------------------------------------------------------------

struct GaussianMixture {
    struct Component {
        double weight = 1.0;
        Vec mean;
        Vec var;             // per-dimension variance, all > 0
        int label = -1;      // -1 = unlabeled
    };

    std::vector<Component> components;

    int dim() const { return components.empty() ? 0 : static_cast<int>(components[0].mean.size()); }

    void validate() const {
        if (components.empty()) throw ValidationError("model", "mixture has no components");
        double wsum = 0.0;
        std::size_t d = components[0].mean.size();
        for (const auto& c : components) {
            if (c.weight < 0.0) throw ValidationError("model", "mixture weight < 0");
            wsum += c.weight;
            if (c.mean.size() != d || c.var.size() != d)
                throw DimensionMismatch("model", "mixture component dims disagree");
            for (double v : c.var)
                if (!(v > 0.0)) throw ValidationError("model", "mixture variance must be > 0");
        }
        if (std::abs(wsum - 1.0) > 1e-12)
            throw ValidationError("model", "mixture weights sum to " + std::to_string(wsum));
    }

    std::vector<int> labels() const {
        std::vector<int> ls;
        for (const auto& c : components)
            if (c.label >= 0 &&
                std::find(ls.begin(), ls.end(), c.label) == ls.end())
                ls.push_back(c.label);
        return ls;
    }

    // Component indices active under a condition, with renormalized weights.
    std::pair<std::vector<int>, std::vector<double>> active(ConditionLabel cond) const {
        std::vector<int> idx;
        std::vector<double> w;
        double wsum = 0.0;
        for (int i = 0; i < static_cast<int>(components.size()); ++i) {
            const auto& c = components[static_cast<std::size_t>(i)];
            if (!cond.has_value() || c.label == cond.value()) {
                idx.push_back(i);
                w.push_back(c.weight);
                wsum += c.weight;
            }
        }
        if (idx.empty() || wsum <= 0.0)
            throw ValidationError("model", "condition label selects no mixture component");
        for (auto& x : w) x /= wsum;
        return {idx, w};
    }
};

namespace detail {

// Responsibilities r_i(x_t) and posterior per-component means m_hat_i under
// the forward marginal q(x_t|x0) = N(sqrt(abar) x0, (1-abar) I). Log-space
// throughout so far-tail inputs do not underflow.
struct GmPosterior {
    std::vector<double> resp;            // r_i, normalized
    std::vector<Vec> comp_mean;          // m_hat_i
    std::vector<Vec> comp_gain;          // a_i = d m_hat_i / d x (diagonal)
    std::vector<Vec> score_term;         // g_i = -(x - sqrt(abar) m_i) / v_i
    std::vector<int> idx;
};

inline GmPosterior gm_posterior(const GaussianMixture& gm, const NoiseSchedule& s,
                                const Vec& x_t, int t, ConditionLabel cond) {
    if (!all_finite(x_t)) throw NumericalError("model", "non-finite x_t in posterior mean");
    double ab = s.alpha_bar(t);
    double sab = std::sqrt(ab);
    auto [idx, w] = gm.active(cond);
    std::size_t d = x_t.size();
    if (gm.dim() != static_cast<int>(d))
        throw DimensionMismatch("model", "x_t dim vs mixture dim");

    GmPosterior post;
    post.idx = idx;
    std::vector<double> logp(idx.size());
    post.comp_mean.resize(idx.size());
    post.comp_gain.resize(idx.size());
    post.score_term.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& c = gm.components[static_cast<std::size_t>(idx[k])];
        double lp = std::log(w[k]);
        Vec mhat(d), gain(d), g(d);
        for (std::size_t i = 0; i < d; ++i) {
            double v = ab * c.var[i] + (1.0 - ab);  // marginal variance per dim
            double diff = x_t[i] - sab * c.mean[i];
            lp += -0.5 * (diff * diff / v + std::log(v));
            mhat[i] = (sab * c.var[i] * x_t[i] + (1.0 - ab) * c.mean[i]) / v;
            gain[i] = sab * c.var[i] / v;
            g[i] = -diff / v;
        }
        logp[k] = lp;
        post.comp_mean[k] = std::move(mhat);
        post.comp_gain[k] = std::move(gain);
        post.score_term[k] = std::move(g);
    }
    double lse = log_sum_exp(logp);
    post.resp.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) post.resp[k] = std::exp(logp[k] - lse);
    return post;
}

}  // namespace detail

// Exact Bayes posterior mean E[x_0 | x_t] under the forward marginal and the
// mixture prior.
inline Vec gm_posterior_x0_mean(const GaussianMixture& gm, const NoiseSchedule& s,
                                const Vec& x_t, int t, ConditionLabel cond = {}) {
    auto post = detail::gm_posterior(gm, s, x_t, t, cond);
    Vec r(x_t.size(), 0.0);
    for (std::size_t k = 0; k < post.resp.size(); ++k)
        axpy(post.resp[k], post.comp_mean[k], r);
    return r;
}

class GmMeanEstimator : public X0PredictingEstimator {
public:
    GmMeanEstimator(std::shared_ptr<const GaussianMixture> gm,
                    std::shared_ptr<const NoiseSchedule> s, StepKind kind)
        : X0PredictingEstimator(std::move(s), kind), gm_(std::move(gm)) {
        gm_->validate();
    }

    int dim() const override { return gm_->dim(); }
    const GaussianMixture& mixture() const { return *gm_; }

    bool supports(ConditionLabel cond) const override {
        if (!cond.has_value()) return true;
        for (const auto& c : gm_->components)
            if (c.label == cond.value()) return true;
        return false;
    }

    Vec x0_hat(const Vec& x_t, int t, ConditionLabel cond = {}) const override {
        return gm_posterior_x0_mean(*gm_, schedule(), x_t, t, cond);
    }

    // J^T u for J = d x0_hat / d x_t:
    //   J = sum_i [ m_hat_i (dr_i/dx)^T + r_i diag(a_i) ],
    //   dr_i/dx = r_i (g_i - gbar), gbar = sum_j r_j g_j.
    Vec x0_vjp(const Vec& x_t, int t, ConditionLabel cond, const Vec& cot) const override {
        check_same_dim("model", x_t, cot);
        auto post = detail::gm_posterior(*gm_, schedule(), x_t, t, cond);
        std::size_t d = x_t.size();
        Vec gbar(d, 0.0), gain(d, 0.0);
        for (std::size_t k = 0; k < post.resp.size(); ++k) {
            axpy(post.resp[k], post.score_term[k], gbar);
            for (std::size_t i = 0; i < d; ++i) gain[i] += post.resp[k] * post.comp_gain[k][i];
        }
        Vec out(d, 0.0);
        for (std::size_t k = 0; k < post.resp.size(); ++k) {
            double um = dot(cot, post.comp_mean[k]);
            for (std::size_t i = 0; i < d; ++i)
                out[i] += um * post.resp[k] * (post.score_term[k][i] - gbar[i]);
        }
        for (std::size_t i = 0; i < d; ++i) out[i] += cot[i] * gain[i];
        return out;
    }

private:
    std::shared_ptr<const GaussianMixture> gm_;
};

inline GmMeanEstimator gm_mean_estimator(std::shared_ptr<const GaussianMixture> gm,
                                         std::shared_ptr<const NoiseSchedule> s,
                                         StepKind kind) {
    return GmMeanEstimator(std::move(gm), std::move(s), kind);
}

// ---------------------------------------------------------------------------
// Hand-specified affine estimator mu(x, t | c) = slope_t * x + intercept_t(c),
// with explicit noise scales. Used as an exactly analyzable reference model.
// ---------------------------------------------------------------------------

class AffineMeanEstimator : public MeanEstimator {
public:
    AffineMeanEstimator(std::shared_ptr<const NoiseSchedule> s, int dim,
                        std::vector<double> slopes, std::vector<Vec> intercepts,
                        std::vector<double> sigmas)
        : sched_(std::move(s)), dim_(dim), slopes_(std::move(slopes)),
          intercepts_(std::move(intercepts)), sigmas_(std::move(sigmas)) {
        std::size_t T = static_cast<std::size_t>(sched_->steps());
        if (slopes_.size() != T || intercepts_.size() != T || sigmas_.size() != T)
            throw DimensionMismatch("model", "affine estimator needs one coefficient per step");
    }

    // Convenience: same scalar coefficients at every step, zero intercept.
    static AffineMeanEstimator uniform(std::shared_ptr<const NoiseSchedule> s, int dim,
                                       double slope, double intercept, double sigma) {
        std::size_t T = static_cast<std::size_t>(s->steps());
        return AffineMeanEstimator(std::move(s), dim, std::vector<double>(T, slope),
                                   std::vector<Vec>(T, Vec(static_cast<std::size_t>(dim), intercept)),
                                   std::vector<double>(T, sigma));
    }

    int dim() const override { return dim_; }
    const NoiseSchedule& schedule() const override { return *sched_; }

    Vec mean(const Vec& x_t, int t, ConditionLabel = {}) const override {
        const Vec& b = intercepts_[static_cast<std::size_t>(t - 1)];
        check_same_dim("model", x_t, b);
        double a = slopes_[static_cast<std::size_t>(t - 1)];
        Vec r(x_t.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = a * x_t[i] + b[i];
        return r;
    }

    double sigma(int t) const override { return sigmas_[static_cast<std::size_t>(t - 1)]; }

    Vec mean_vjp(const Vec&, int t, ConditionLabel, const Vec& cot) const override {
        return slopes_[static_cast<std::size_t>(t - 1)] * cot;
    }

private:
    std::shared_ptr<const NoiseSchedule> sched_;
    int dim_;
    std::vector<double> slopes_;
    std::vector<Vec> intercepts_;
    std::vector<double> sigmas_;
};

// ---------------------------------------------------------------------------
// ScoreSDE reverse-diffusion adapter:
//   mu(x_t, t) = x_t - f_t(x_t) + sigma_t^2 * s(x_t, t).
// ---------------------------------------------------------------------------

class ScoreMeanEstimator : public MeanEstimator {
public:
    using Field = std::function<Vec(const Vec&, int)>;
    using Pullback = std::function<Vec(const Vec&, int, const Vec&)>;

    ScoreMeanEstimator(std::shared_ptr<const NoiseSchedule> s, int dim, Field score,
                       Field drift, std::vector<double> sigmas,
                       Pullback score_vjp = nullptr, Pullback drift_vjp = nullptr)
        : sched_(std::move(s)), dim_(dim), score_(std::move(score)), drift_(std::move(drift)),
          sigmas_(std::move(sigmas)), score_vjp_(std::move(score_vjp)),
          drift_vjp_(std::move(drift_vjp)) {
        if (!score_ || !drift_) throw ValidationError("model", "score and drift required");
        if (sigmas_.size() != static_cast<std::size_t>(sched_->steps()))
            throw DimensionMismatch("model", "one sigma per step required");
    }

    int dim() const override { return dim_; }
    const NoiseSchedule& schedule() const override { return *sched_; }

    Vec mean(const Vec& x_t, int t, ConditionLabel = {}) const override {
        Vec f = drift_(x_t, t);
        Vec sc = score_(x_t, t);
        check_same_dim("model", x_t, f);
        check_same_dim("model", x_t, sc);
        double s2 = sigma(t) * sigma(t);
        Vec r(x_t.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = x_t[i] - f[i] + s2 * sc[i];
        return r;
    }

    double sigma(int t) const override {
        if (t < 1 || t > sched_->steps()) throw IndexOutOfRange("model", "sigma step");
        return sigmas_[static_cast<std::size_t>(t - 1)];
    }

    Vec mean_vjp(const Vec& x_t, int t, ConditionLabel, const Vec& cot) const override {
        if (!score_vjp_ || !drift_vjp_)
            throw ValidationError("model", "score estimator was built without vjp fields");
        double s2 = sigma(t) * sigma(t);
        Vec fv = drift_vjp_(x_t, t, cot);
        Vec sv = score_vjp_(x_t, t, cot);
        Vec r(cot.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = cot[i] - fv[i] + s2 * sv[i];
        return r;
    }

private:
    std::shared_ptr<const NoiseSchedule> sched_;
    int dim_;
    Field score_, drift_;
    std::vector<double> sigmas_;
    Pullback score_vjp_, drift_vjp_;
};

inline ScoreMeanEstimator score_to_mean(std::shared_ptr<const NoiseSchedule> s, int dim,
                                        ScoreMeanEstimator::Field score,
                                        ScoreMeanEstimator::Field drift,
                                        std::vector<double> sigmas) {
    return ScoreMeanEstimator(std::move(s), dim, std::move(score), std::move(drift),
                              std::move(sigmas));
}

}  // namespace dpmlat
