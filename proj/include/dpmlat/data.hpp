#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/metrics.hpp"
#include "dpmlat/model.hpp"
#include "dpmlat/rng.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Synthetic domains. A spec fully determines a domain: same spec, same seed,
// same sample stream.
// ---------------------------------------------------------------------------

enum class DomainKind { GaussianMixtureDomain, ToyImages };

struct DomainSpec {
    DomainKind kind = DomainKind::GaussianMixtureDomain;
    std::uint64_t seed = 0;

    // Gaussian-mixture domains.
    std::vector<GaussianMixture::Component> components;

    // Toy-image domains (16x16 grayscale by default, anti-aliased shapes on a
    // flat background; squares in domain A, discs in domain B).
    int height = 16, width = 16;
    double peak = 1.0;
    int jitter = 3;        // integer center offsets in [-jitter, jitter]^2
    double radius = 3.5;   // shape half-extent in pixels
    double bg_lo = 0.05, bg_hi = 0.25;
    double fg_lo = 0.75, fg_hi = 1.0;

    void validate() const {
        if (kind == DomainKind::GaussianMixtureDomain) {
            GaussianMixture gm{components};
            gm.validate();
        } else {
            if (height < 4 || width < 4) throw ValidationError("data", "image too small");
            if (peak <= 0.0) throw ValidationError("data", "peak must be positive");
            if (jitter < 0 || 2 * jitter >= std::min(height, width))
                throw ValidationError("data", "jitter outside the image");
            if (radius <= 0.0) throw ValidationError("data", "radius must be positive");
            if (!(0.0 <= bg_lo && bg_lo <= bg_hi && bg_hi <= peak))
                throw ValidationError("data", "background range invalid");
            if (!(0.0 <= fg_lo && fg_lo <= fg_hi && fg_hi <= peak))
                throw ValidationError("data", "foreground range invalid");
        }
    }
};

// ---------------------------------------------------------------------------
// Mixture domain: the mixture object doubles as the analytic model; the
// sampler draws i.i.d. data vectors from it.
// ---------------------------------------------------------------------------

class GmSampler {
public:
    GmSampler(std::shared_ptr<const GaussianMixture> gm, Rng rng)
        : gm_(std::move(gm)), rng_(rng) {}

    Vec sample(ConditionLabel cond = {}) {
        auto [idx, w] = gm_->active(cond);
        double u = rng_.uniform();
        std::size_t pick = idx.size() - 1;
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            acc += w[k];
            if (u <= acc) {
                pick = k;
                break;
            }
        }
        const auto& c = gm_->components[static_cast<std::size_t>(idx[pick])];
        Vec x(c.mean.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = c.mean[i] + std::sqrt(c.var[i]) * rng_.normal();
        return x;
    }

    const GaussianMixture& mixture() const { return *gm_; }

private:
    std::shared_ptr<const GaussianMixture> gm_;
    Rng rng_;
};

struct MixtureDomain {
    std::shared_ptr<const GaussianMixture> gm;
    GmSampler sampler;
};

inline MixtureDomain make_gaussian_mixture_domain(const DomainSpec& spec) {
    if (spec.kind != DomainKind::GaussianMixtureDomain)
        throw ValidationError("data", "spec is not a gaussian-mixture domain");
    spec.validate();
    auto gm = std::make_shared<const GaussianMixture>(GaussianMixture{spec.components});
    return MixtureDomain{gm, GmSampler(gm, Rng(spec.seed, 0))};
}

// ---------------------------------------------------------------------------
// Toy-image domain pair: disjoint shape classes (square vs disc) sharing the
// nuisance distribution (position, background, foreground), so faithfulness
// of a translation is measurable by SSIM against the source.
// ---------------------------------------------------------------------------

struct ImageNuisance {
    int dx = 0, dy = 0;
    double bg = 0.0, fg = 1.0;
};

class ToyImageDomains {
public:
    explicit ToyImageDomains(const DomainSpec& spec) : spec_(spec), rng_(spec.seed, 1) {
        if (spec.kind != DomainKind::ToyImages)
            throw ValidationError("data", "spec is not a toy-image domain");
        spec.validate();
    }

    int data_dim() const { return spec_.height * spec_.width; }

    ImageNuisance sample_nuisance() {
        ImageNuisance n;
        n.dx = static_cast<int>(rng_.uniform_int(-spec_.jitter, spec_.jitter));
        n.dy = static_cast<int>(rng_.uniform_int(-spec_.jitter, spec_.jitter));
        n.bg = rng_.uniform(spec_.bg_lo, spec_.bg_hi);
        n.fg = rng_.uniform(spec_.fg_lo, spec_.fg_hi);
        return n;
    }

    ImageGrid render_square(const ImageNuisance& n) const { return render(n, true); }
    ImageGrid render_disc(const ImageNuisance& n) const { return render(n, false); }

    ImageGrid sample_a() { return render_square(sample_nuisance()); }
    ImageGrid sample_b() { return render_disc(sample_nuisance()); }

    // Joint mode: both domains rendered with one nuisance draw.
    std::pair<ImageGrid, ImageGrid> sample_pair() {
        ImageNuisance n = sample_nuisance();
        return {render_square(n), render_disc(n)};
    }

private:
    ImageGrid render(const ImageNuisance& n, bool square) const {
        ImageGrid img(spec_.height, spec_.width, 1, spec_.peak);
        double cy = (spec_.height - 1) / 2.0 + n.dy;
        double cx = (spec_.width - 1) / 2.0 + n.dx;
        for (int y = 0; y < spec_.height; ++y) {
            for (int x = 0; x < spec_.width; ++x) {
                double ddx = x - cx, ddy = y - cy;
                double dist = square ? std::max(std::abs(ddx), std::abs(ddy))
                                     : std::sqrt(ddx * ddx + ddy * ddy);
                // 1-pixel smoothstep edge keeps shapes differentiable-ish.
                double cov = std::clamp(0.5 + (spec_.radius - dist), 0.0, 1.0);
                double v = n.bg + (n.fg - n.bg) * cov;
                img.at(y, x) = std::clamp(v, 0.0, spec_.peak);
            }
        }
        return img;
    }

    DomainSpec spec_;
    Rng rng_;
};

inline ToyImageDomains make_toy_image_domains(const DomainSpec& spec) {
    return ToyImageDomains(spec);
}

}  // namespace dpmlat
