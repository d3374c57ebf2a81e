#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/denoiser.hpp"
#include "dpmlat/model.hpp"
#include "dpmlat/rng.hpp"
#include "dpmlat/sampler.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Differentiable pieces: maps with pullbacks, energies with gradients, and
// generators z -> x. Everything immutable and shareable read-only.
// ---------------------------------------------------------------------------

class DifferentiableMap {
public:
    virtual ~DifferentiableMap() = default;
    virtual int in_dim() const = 0;
    virtual int out_dim() const = 0;
    virtual Vec value(const Vec& x) const = 0;
    virtual Vec pullback(const Vec& x, const Vec& cot) const = 0;
};

class AffineMap : public DifferentiableMap {
public:
    AffineMap(int in, int out, std::vector<double> A, Vec b)
        : in_(in), out_(out), A_(std::move(A)), b_(std::move(b)) {
        if (A_.size() != static_cast<std::size_t>(in) * static_cast<std::size_t>(out) ||
            b_.size() != static_cast<std::size_t>(out))
            throw DimensionMismatch("guidance", "affine map shapes");
    }

    // Near-identity jitter map on R^d (the desk-scale differentiable
    // augmentation): A = I + scale * G with a seeded Gaussian G.
    static AffineMap random_jitter(int dim, double scale, std::uint64_t seed) {
        Rng rng(seed, 0);
        std::vector<double> A(static_cast<std::size_t>(dim) * dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                A[static_cast<std::size_t>(i) * dim + j] =
                    (i == j ? 1.0 : 0.0) + scale * rng.normal();
        Vec b(static_cast<std::size_t>(dim));
        for (auto& v : b) v = scale * rng.normal();
        return AffineMap(dim, dim, std::move(A), std::move(b));
    }

    static AffineMap identity(int dim) {
        std::vector<double> A(static_cast<std::size_t>(dim) * dim, 0.0);
        for (int i = 0; i < dim; ++i) A[static_cast<std::size_t>(i) * dim + i] = 1.0;
        return AffineMap(dim, dim, std::move(A), Vec(static_cast<std::size_t>(dim), 0.0));
    }

    int in_dim() const override { return in_; }
    int out_dim() const override { return out_; }

    Vec value(const Vec& x) const override {
        if (static_cast<int>(x.size()) != in_) throw DimensionMismatch("guidance", "affine input");
        Vec y = b_;
        for (int i = 0; i < out_; ++i) {
            const double* row = A_.data() + static_cast<std::size_t>(i) * in_;
            for (int j = 0; j < in_; ++j) y[static_cast<std::size_t>(i)] += row[j] * x[static_cast<std::size_t>(j)];
        }
        return y;
    }

    Vec pullback(const Vec&, const Vec& cot) const override {
        Vec g(static_cast<std::size_t>(in_), 0.0);
        for (int i = 0; i < out_; ++i) {
            const double* row = A_.data() + static_cast<std::size_t>(i) * in_;
            double c = cot[static_cast<std::size_t>(i)];
            for (int j = 0; j < in_; ++j) g[static_cast<std::size_t>(j)] += row[j] * c;
        }
        return g;
    }

private:
    int in_, out_;
    std::vector<double> A_;
    Vec b_;
};

// Fixed random smooth feature map tanh(Wx + b): the desk-scale stand-in for a
// pretrained perception embedding.
class RandomFeatureMap : public DifferentiableMap {
public:
    RandomFeatureMap(int in, int out, std::uint64_t seed) : in_(in), out_(out) {
        Rng rng(seed, 0);
        double a = std::sqrt(2.0 / in);
        W_.resize(static_cast<std::size_t>(in) * out);
        for (auto& w : W_) w = a * rng.normal();
        b_.resize(static_cast<std::size_t>(out));
        for (auto& v : b_) v = 0.1 * rng.normal();
    }

    int in_dim() const override { return in_; }
    int out_dim() const override { return out_; }

    Vec value(const Vec& x) const override {
        if (static_cast<int>(x.size()) != in_) throw DimensionMismatch("guidance", "embed input");
        Vec y(static_cast<std::size_t>(out_));
        for (int i = 0; i < out_; ++i) {
            double s = b_[static_cast<std::size_t>(i)];
            const double* row = W_.data() + static_cast<std::size_t>(i) * in_;
            for (int j = 0; j < in_; ++j) s += row[j] * x[static_cast<std::size_t>(j)];
            y[static_cast<std::size_t>(i)] = std::tanh(s);
        }
        return y;
    }

    Vec pullback(const Vec& x, const Vec& cot) const override {
        Vec y(static_cast<std::size_t>(out_));
        Vec pre(static_cast<std::size_t>(out_));
        for (int i = 0; i < out_; ++i) {
            double s = b_[static_cast<std::size_t>(i)];
            const double* row = W_.data() + static_cast<std::size_t>(i) * in_;
            for (int j = 0; j < in_; ++j) s += row[j] * x[static_cast<std::size_t>(j)];
            double th = std::tanh(s);
            pre[static_cast<std::size_t>(i)] = (1.0 - th * th) * cot[static_cast<std::size_t>(i)];
        }
        Vec g(static_cast<std::size_t>(in_), 0.0);
        for (int i = 0; i < out_; ++i) {
            const double* row = W_.data() + static_cast<std::size_t>(i) * in_;
            double c = pre[static_cast<std::size_t>(i)];
            for (int j = 0; j < in_; ++j) g[static_cast<std::size_t>(j)] += row[j] * c;
        }
        return g;
    }

private:
    int in_, out_;
    std::vector<double> W_;
    Vec b_;
};

// Toy classifier: probs = softmax(Wx + b).
class SoftmaxLinearClassifier : public DifferentiableMap {
public:
    SoftmaxLinearClassifier(int in, int classes, std::vector<double> W, Vec b)
        : in_(in), classes_(classes), W_(std::move(W)), b_(std::move(b)) {
        if (W_.size() != static_cast<std::size_t>(in) * classes || b_.size() != static_cast<std::size_t>(classes))
            throw DimensionMismatch("guidance", "classifier shapes");
    }

    static SoftmaxLinearClassifier random(int in, int classes, std::uint64_t seed) {
        Rng rng(seed, 0);
        std::vector<double> W(static_cast<std::size_t>(in) * classes);
        for (auto& w : W) w = rng.normal() / std::sqrt(in);
        Vec b(static_cast<std::size_t>(classes), 0.0);
        return SoftmaxLinearClassifier(in, classes, std::move(W), std::move(b));
    }

    int in_dim() const override { return in_; }
    int out_dim() const override { return classes_; }

    Vec value(const Vec& x) const override {
        if (static_cast<int>(x.size()) != in_)
            throw DimensionMismatch("guidance", "classifier input");
        std::vector<double> logits(static_cast<std::size_t>(classes_));
        for (int i = 0; i < classes_; ++i) {
            double s = b_[static_cast<std::size_t>(i)];
            const double* row = W_.data() + static_cast<std::size_t>(i) * in_;
            for (int j = 0; j < in_; ++j) s += row[j] * x[static_cast<std::size_t>(j)];
            logits[static_cast<std::size_t>(i)] = s;
        }
        double lse = log_sum_exp(logits);
        Vec p(static_cast<std::size_t>(classes_));
        for (int i = 0; i < classes_; ++i) p[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - lse);
        return p;
    }

    Vec pullback(const Vec& x, const Vec& cot) const override {
        // d p / d logits = diag(p) - p p^T, then logits are affine in x.
        Vec p = value(x);
        double pc = dot(p, cot);
        Vec dlogit(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) dlogit[i] = p[i] * (cot[i] - pc);
        Vec g(static_cast<std::size_t>(in_), 0.0);
        for (int i = 0; i < classes_; ++i) {
            const double* row = W_.data() + static_cast<std::size_t>(i) * in_;
            double c = dlogit[static_cast<std::size_t>(i)];
            for (int j = 0; j < in_; ++j) g[static_cast<std::size_t>(j)] += row[j] * c;
        }
        return g;
    }

private:
    int in_, classes_;
    std::vector<double> W_;
    Vec b_;
};

// ---------------------------------------------------------------------------
// Energies E(x | C) >= 0 with exact gradients.
// ---------------------------------------------------------------------------

class EnergyFunction {
public:
    virtual ~EnergyFunction() = default;
    virtual int dim() const = 0;
    virtual double value(const Vec& x) const = 0;
    virtual Vec grad(const Vec& x) const = 0;
};

class QuadraticEnergy : public EnergyFunction {
public:
    QuadraticEnergy(Vec center, double weight = 1.0) : c_(std::move(center)), w_(weight) {
        if (w_ < 0.0) throw ValidationError("guidance", "quadratic weight must be >= 0");
    }
    int dim() const override { return static_cast<int>(c_.size()); }
    double value(const Vec& x) const override {
        check_same_dim("guidance", x, c_);
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - c_[i]) * (x[i] - c_[i]);
        return 0.5 * w_ * s;
    }
    Vec grad(const Vec& x) const override {
        check_same_dim("guidance", x, c_);
        Vec g(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = w_ * (x[i] - c_[i]);
        return g;
    }

private:
    Vec c_;
    double w_;
};

// Hard indicator: 0 inside the box, +inf outside (rejection-only energy).
class BoxIndicatorEnergy : public EnergyFunction {
public:
    BoxIndicatorEnergy(Vec lo, Vec hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
        check_same_dim("guidance", lo_, hi_);
    }
    int dim() const override { return static_cast<int>(lo_.size()); }
    double value(const Vec& x) const override {
        check_same_dim("guidance", x, lo_);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] < lo_[i] || x[i] > hi_[i]) return HUGE_VAL;
        return 0.0;
    }
    Vec grad(const Vec& x) const override { return Vec(x.size(), 0.0); }

private:
    Vec lo_, hi_;
};

namespace detail {

// 1 - cos<e, ref_unit> with e = embed(x) normalized; gradient via the embed
// pullback. Shared by the cosine energies.
inline double cosine_term(const DifferentiableMap& embed, const Vec& x, const Vec& ref_unit,
                          Vec* grad_out) {
    Vec e = embed.value(x);
    double n = norm2(e);
    if (n < 1e-12) throw NumericalError("guidance", "zero-norm embedding");
    double c = dot(e, ref_unit) / n;
    if (grad_out) {
        Vec de(e.size());
        for (std::size_t i = 0; i < e.size(); ++i)
            de[i] = -(ref_unit[i] / n - c * e[i] / (n * n));
        *grad_out = embed.pullback(x, de);
    }
    return 1.0 - c;
}

}  // namespace detail

class EmbeddingCosineEnergy : public EnergyFunction {
public:
    EmbeddingCosineEnergy(std::shared_ptr<const DifferentiableMap> embed, Vec reference)
        : embed_(std::move(embed)) {
        double n = norm2(reference);
        if (n < 1e-12) throw ValidationError("guidance", "reference must be nonzero");
        ref_unit_ = (1.0 / n) * reference;
        if (static_cast<int>(ref_unit_.size()) != embed_->out_dim())
            throw DimensionMismatch("guidance", "reference dim vs embed output");
    }
    int dim() const override { return embed_->in_dim(); }
    double value(const Vec& x) const override {
        return detail::cosine_term(*embed_, x, ref_unit_, nullptr);
    }
    Vec grad(const Vec& x) const override {
        Vec g;
        detail::cosine_term(*embed_, x, ref_unit_, &g);
        return g;
    }

private:
    std::shared_ptr<const DifferentiableMap> embed_;
    Vec ref_unit_;
};

inline EmbeddingCosineEnergy embedding_cosine_energy(std::shared_ptr<const DifferentiableMap> embed,
                                                     Vec reference) {
    return EmbeddingCosineEnergy(std::move(embed), std::move(reference));
}

// (1/L) sum_l (1 - cos<embed(aug_l(x)), target>).
class AugmentedCosineEnergy : public EnergyFunction {
public:
    AugmentedCosineEnergy(std::shared_ptr<const DifferentiableMap> embed, Vec target,
                          std::vector<AffineMap> augmentations)
        : embed_(std::move(embed)), augs_(std::move(augmentations)) {
        if (augs_.empty()) throw ValidationError("guidance", "need at least one augmentation");
        double n = norm2(target);
        if (n < 1e-12) throw ValidationError("guidance", "target must be nonzero");
        target_unit_ = (1.0 / n) * target;
    }
    int dim() const override { return augs_[0].in_dim(); }
    double value(const Vec& x) const override {
        double s = 0.0;
        for (const auto& aug : augs_)
            s += detail::cosine_term(*embed_, aug.value(x), target_unit_, nullptr);
        return s / static_cast<double>(augs_.size());
    }
    Vec grad(const Vec& x) const override {
        Vec g(x.size(), 0.0);
        for (const auto& aug : augs_) {
            Vec y = aug.value(x);
            Vec gy;
            detail::cosine_term(*embed_, y, target_unit_, &gy);
            axpy(1.0 / static_cast<double>(augs_.size()), aug.pullback(x, gy), g);
        }
        return g;
    }

private:
    std::shared_ptr<const DifferentiableMap> embed_;
    Vec target_unit_;
    std::vector<AffineMap> augs_;
};

inline AugmentedCosineEnergy augmented_cosine_energy(
    std::shared_ptr<const DifferentiableMap> embed, Vec target, std::vector<AffineMap> augs) {
    return AugmentedCosineEnergy(std::move(embed), std::move(target), std::move(augs));
}

// -log P(target | x), clamped at e_max (gradient is zero in the clamp).
class ClassifierEnergy : public EnergyFunction {
public:
    ClassifierEnergy(std::shared_ptr<const DifferentiableMap> classifier, int target_class,
                     double e_max = 50.0)
        : cls_(std::move(classifier)), target_(target_class), e_max_(e_max) {
        if (target_ < 0 || target_ >= cls_->out_dim())
            throw ValidationError("guidance", "target class outside classifier range");
        if (e_max_ <= 0.0) throw ValidationError("guidance", "energy clamp must be positive");
    }
    int dim() const override { return cls_->in_dim(); }
    double e_max() const { return e_max_; }

    double value(const Vec& x) const override { return value_checked(probs(x)); }

    Vec grad(const Vec& x) const override {
        Vec p = probs(x);
        double pt = p[static_cast<std::size_t>(target_)];
        if (-std::log(pt) >= e_max_) return Vec(x.size(), 0.0);
        Vec dp(p.size(), 0.0);
        dp[static_cast<std::size_t>(target_)] = -1.0 / pt;
        return cls_->pullback(x, dp);
    }

private:
    Vec probs(const Vec& x) const {
        Vec p = cls_->value(x);
        double sum = 0.0;
        for (double v : p) {
            if (!(v >= -1e-12) || !std::isfinite(v))
                throw ValidationError("guidance", "classifier emitted an invalid probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ValidationError("guidance", "classifier probabilities sum to " + std::to_string(sum));
        return p;
    }
    double value_checked(const Vec& p) const {
        double pt = std::max(p[static_cast<std::size_t>(target_)], 0.0);
        if (pt <= std::exp(-e_max_)) return e_max_;
        return -std::log(pt);
    }

    std::shared_ptr<const DifferentiableMap> cls_;
    int target_;
    double e_max_;
};

inline ClassifierEnergy classifier_energy(std::shared_ptr<const DifferentiableMap> classifier,
                                          int target_class, double e_max = 50.0) {
    return ClassifierEnergy(std::move(classifier), target_class, e_max);
}

// ---------------------------------------------------------------------------
// Generators z -> x with pullbacks.
// ---------------------------------------------------------------------------

class DifferentiableGenerator {
public:
    virtual ~DifferentiableGenerator() = default;
    virtual int latent_dim() const = 0;
    virtual int output_dim() const = 0;
    virtual Vec value(const Vec& z) const = 0;
    virtual Vec pullback(const Vec& z, const Vec& cot) const = 0;
};

class IdentityGenerator : public DifferentiableGenerator {
public:
    explicit IdentityGenerator(int dim) : dim_(dim) {}
    int latent_dim() const override { return dim_; }
    int output_dim() const override { return dim_; }
    Vec value(const Vec& z) const override { return z; }
    Vec pullback(const Vec&, const Vec& cot) const override { return cot; }

private:
    int dim_;
};

// Full-latent stochastic chain: z has dimension d_I * (T + 1).
class StochasticChainGenerator : public DifferentiableGenerator {
public:
    StochasticChainGenerator(std::shared_ptr<const MeanEstimator> m, ConditionLabel cond = {})
        : m_(std::move(m)), cond_(cond) {}
    int latent_dim() const override { return m_->dim() * (m_->schedule().steps() + 1); }
    int output_dim() const override { return m_->dim(); }
    Vec value(const Vec& z) const override {
        return generate(*m_, LatentCode::unpack(z, m_->dim(), m_->schedule().steps()), cond_);
    }
    Vec pullback(const Vec& z, const Vec& cot) const override {
        auto res = generate_with_grad(
            *m_, LatentCode::unpack(z, m_->dim(), m_->schedule().steps()), cond_, cot);
        return res.grad.pack();
    }

private:
    std::shared_ptr<const MeanEstimator> m_;
    ConditionLabel cond_;
};

// x_T-only deterministic path over a coarse ladder.
class DeterministicChainGenerator : public DifferentiableGenerator {
public:
    DeterministicChainGenerator(std::shared_ptr<const X0PredictingEstimator> m, int t_g,
                                ConditionLabel cond = {})
        : m_(std::move(m)), t_g_(t_g), cond_(cond) {
        coarse_ladder(m_->schedule().steps(), t_g_);  // validates
    }
    int latent_dim() const override { return m_->dim(); }
    int output_dim() const override { return m_->dim(); }
    Vec value(const Vec& z) const override { return generate_deterministic(*m_, z, t_g_, cond_); }
    Vec pullback(const Vec& z, const Vec& cot) const override {
        return generate_deterministic_with_grad(*m_, z, t_g_, cond_, cot).second;
    }

private:
    std::shared_ptr<const X0PredictingEstimator> m_;
    int t_g_;
    ConditionLabel cond_;
};

// ---------------------------------------------------------------------------
// Langevin dynamics over p(z | C) ∝ p(z) exp(-lambda E(G(z) | C)):
//   z <- z + (sigma/2) (-z - lambda * dE(G(z))/dz) + sqrt(sigma) w.
// Unadjusted update, exactly the sampling rule the formulation prescribes;
// the rejection oracle below quantifies the residual bias.
// ---------------------------------------------------------------------------

struct GuidanceConfig {
    double lambda = 1.0;
    int n_steps = 200;
    double step_size = 0.05;
    std::uint64_t seed = 0;
    double guard_radius = 1e4;  // divergence guard on ||z||_inf

    void validate() const {
        if (lambda < 0.0) throw ValidationError("guidance", "lambda must be >= 0");
        if (n_steps < 0) throw ValidationError("guidance", "n_steps must be >= 0");
        if (n_steps > 0 && step_size <= 0.0)
            throw ValidationError("guidance", "step_size must be > 0 when n_steps > 0");
        if (guard_radius <= 0.0) throw ValidationError("guidance", "guard radius must be > 0");
    }
};

inline Vec langevin_chain(const DifferentiableGenerator& gen, const EnergyFunction& energy,
                          const GuidanceConfig& cfg, Rng& rng) {
    cfg.validate();
    std::size_t d = static_cast<std::size_t>(gen.latent_dim());
    Vec z = rng.normal_vec(d);
    double half = 0.5 * cfg.step_size;
    double noise_scale = std::sqrt(cfg.step_size);
    for (int k = 0; k < cfg.n_steps; ++k) {
        Vec gz(d, 0.0);
        if (cfg.lambda > 0.0) {
            Vec x = gen.value(z);
            gz = gen.pullback(z, energy.grad(x));
        }
        for (std::size_t i = 0; i < d; ++i)
            z[i] += half * (-z[i] - cfg.lambda * gz[i]) + noise_scale * rng.normal();
        if (norm_inf(z) > cfg.guard_radius)
            throw DivergenceError("guidance", "langevin state left the guard radius", k,
                                  norm_inf(z));
    }
    return z;
}

// Independent chains; chain c uses the stream split(c) of the supplied rng.
inline std::vector<Vec> langevin_guide(const DifferentiableGenerator& gen,
                                       const EnergyFunction& energy, const GuidanceConfig& cfg,
                                       int n_chains, const Rng& rng) {
    if (n_chains < 1) throw ValidationError("guidance", "need at least one chain");
    std::vector<Vec> out(static_cast<std::size_t>(n_chains));
    for (int c = 0; c < n_chains; ++c) {
        Rng chain_rng = rng.split(static_cast<std::uint64_t>(c));
        out[static_cast<std::size_t>(c)] = langevin_chain(gen, energy, cfg, chain_rng);
    }
    return out;
}

// Exact sampler from the same law: propose z ~ N(0, I), accept with
// probability exp(-lambda E(G(z))). Valid because E >= 0 bounds the
// acceptance ratio by 1.
struct RejectionStats {
    std::int64_t trials = 0;
    std::int64_t accepted = 0;
    double acceptance_rate() const {
        return trials > 0 ? static_cast<double>(accepted) / static_cast<double>(trials) : 0.0;
    }
};

inline std::vector<Vec> rejection_oracle(const DifferentiableGenerator& gen,
                                         const EnergyFunction& energy, double lambda, Rng& rng,
                                         int n_accepted, std::int64_t max_trials = 50000000,
                                         RejectionStats* stats = nullptr) {
    if (lambda < 0.0) throw ValidationError("guidance", "lambda must be >= 0");
    if (n_accepted < 1) throw ValidationError("guidance", "need at least one sample");
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(n_accepted));
    std::int64_t trials = 0;
    while (static_cast<int>(out.size()) < n_accepted) {
        if (trials >= max_trials ||
            (trials >= 1000000 && static_cast<double>(out.size()) < 1e-6 * static_cast<double>(trials)))
            throw StarvationError("guidance", "rejection acceptance rate too low", -1,
                                  static_cast<double>(trials));
        ++trials;
        Vec z = rng.normal_vec(static_cast<std::size_t>(gen.latent_dim()));
        double e = energy.value(gen.value(z));
        if (e < -1e-9)
            throw ValidationError("guidance", "rejection oracle requires a nonnegative energy");
        double acc = std::exp(-lambda * std::max(e, 0.0));
        if (rng.uniform() < acc) out.push_back(std::move(z));
    }
    if (stats) {
        stats->trials = trials;
        stats->accepted = static_cast<std::int64_t>(out.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Latent-direction editing: minimize over ||n|| = r the averaged objective
//   lambda_cls * E_cls(G(z + n)) + (1 - cos<R(G(z + n)), R(G(z))>)
// over a fixed set of base latents. Projected gradient descent; the returned
// direction is renormalized after every step.
// ---------------------------------------------------------------------------

class EditObjective {
public:
    EditObjective(const DifferentiableGenerator& gen, const EnergyFunction& cls_energy,
                  const DifferentiableMap& id_embed, double lambda_cls,
                  std::vector<Vec> base_z)
        : gen_(gen), cls_(cls_energy), embed_(id_embed), lambda_cls_(lambda_cls),
          base_z_(std::move(base_z)) {
        if (base_z_.empty()) throw ValidationError("guidance", "need base latent samples");
        base_ref_unit_.reserve(base_z_.size());
        for (const auto& z : base_z_) {
            Vec e = embed_.value(gen_.value(z));
            double n = norm2(e);
            if (n < 1e-12) throw NumericalError("guidance", "zero-norm base embedding");
            base_ref_unit_.push_back((1.0 / n) * e);
        }
    }

    int dim() const { return gen_.latent_dim(); }

    double value(const Vec& n) const {
        double s = 0.0;
        for (std::size_t i = 0; i < base_z_.size(); ++i) s += sample_term(i, n, nullptr);
        return s / static_cast<double>(base_z_.size());
    }

    Vec grad(const Vec& n) const {
        Vec g(n.size(), 0.0);
        for (std::size_t i = 0; i < base_z_.size(); ++i) {
            Vec gi;
            sample_term(i, n, &gi);
            axpy(1.0 / static_cast<double>(base_z_.size()), gi, g);
        }
        return g;
    }

private:
    double sample_term(std::size_t i, const Vec& n, Vec* grad_out) const {
        Vec z = base_z_[i] + n;
        Vec x = gen_.value(z);
        double term = lambda_cls_ * cls_.value(x) +
                      detail::cosine_term(embed_, x, base_ref_unit_[i], nullptr);
        if (grad_out) {
            Vec gx = lambda_cls_ * cls_.grad(x);
            Vec gcos;
            detail::cosine_term(embed_, x, base_ref_unit_[i], &gcos);
            gx += gcos;
            *grad_out = gen_.pullback(z, gx);
        }
        return term;
    }

    const DifferentiableGenerator& gen_;
    const EnergyFunction& cls_;
    const DifferentiableMap& embed_;
    double lambda_cls_;
    std::vector<Vec> base_z_;
    std::vector<Vec> base_ref_unit_;
};

struct EditOptConfig {
    int steps = 200;
    double lr = 0.1;
    std::uint64_t seed = 0;
};

inline Vec optimize_edit_direction(const DifferentiableGenerator& gen,
                                   const EnergyFunction& cls_energy,
                                   const DifferentiableMap& id_embed, double r,
                                   double lambda_cls, const std::vector<Vec>& base_z,
                                   const EditOptConfig& cfg) {
    if (r <= 0.0) throw ValidationError("guidance", "edit radius must be > 0");
    EditObjective obj(gen, cls_energy, id_embed, lambda_cls, base_z);

    auto project = [&](Vec v) {
        double n = norm2(v);
        if (n < 1e-300) throw NumericalError("guidance", "degenerate edit direction");
        return (r / n) * v;
    };

    Rng rng(cfg.seed, 0);
    Vec n = project(rng.normal_vec(static_cast<std::size_t>(gen.latent_dim())));
    Vec best = n;
    double best_val = obj.value(n);
    if (!std::isfinite(best_val)) throw NumericalError("guidance", "non-finite edit objective");
    for (int it = 0; it < cfg.steps; ++it) {
        Vec g = obj.grad(n);
        axpy(-cfg.lr, g, n);
        n = project(n);
        double v = obj.value(n);
        if (!std::isfinite(v)) throw NumericalError("guidance", "non-finite edit objective", it, v);
        if (v < best_val) {
            best_val = v;
            best = n;
        }
    }
    return project(best);
}

}  // namespace dpmlat
