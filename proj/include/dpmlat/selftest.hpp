#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dpmlat/data.hpp"
#include "dpmlat/denoiser.hpp"
#include "dpmlat/encoder.hpp"
#include "dpmlat/guidance.hpp"
#include "dpmlat/metrics.hpp"
#include "dpmlat/model.hpp"
#include "dpmlat/sampler.hpp"
#include "dpmlat/schedule.hpp"
#include "dpmlat/translation.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Smoke suite: closed-form anchor cases for every module, runnable from the
// CLI without any config. Deterministic; two invocations print identical
// summaries.
// ---------------------------------------------------------------------------

struct SelftestResult {
    struct ModuleCount {
        std::string module;
        int passed = 0;
        int failed = 0;
        std::vector<std::string> failures;
    };
    std::vector<ModuleCount> modules;

    bool ok() const {
        for (const auto& m : modules)
            if (m.failed > 0) return false;
        return true;
    }
    int total_passed() const {
        int n = 0;
        for (const auto& m : modules) n += m.passed;
        return n;
    }
};

namespace detail {

class SelftestRunner {
public:
    explicit SelftestRunner(SelftestResult& out) : out_(out) {}

    void module(const std::string& name) { out_.modules.push_back({name, 0, 0, {}}); }

    void check(const std::string& name, bool cond) {
        auto& m = out_.modules.back();
        if (cond) {
            ++m.passed;
        } else {
            ++m.failed;
            m.failures.push_back(name);
        }
    }

    void check_close(const std::string& name, double got, double want, double tol) {
        check(name, std::isfinite(got) && std::abs(got - want) <= tol);
    }

    template <typename E, typename F>
    void check_throws(const std::string& name, F&& f) {
        bool threw = false;
        try {
            f();
        } catch (const E&) {
            threw = true;
        } catch (...) {
        }
        check(name, threw);
    }

private:
    SelftestResult& out_;
};

}  // namespace detail

inline SelftestResult selftest() {
    SelftestResult out;
    detail::SelftestRunner r(out);

    auto sched = [](double b0, double b1, int T) {
        return std::make_shared<const NoiseSchedule>(linear_schedule(b0, b1, T));
    };
    auto single = [](double m, double v, int dim = 1) {
        auto gm = std::make_shared<GaussianMixture>();
        gm->components.push_back({1.0, Vec(static_cast<std::size_t>(dim), m),
                                  Vec(static_cast<std::size_t>(dim), v), -1});
        return gm;
    };

    // ----- schedule ---------------------------------------------------------
    r.module("schedule");
    {
        auto s = linear_schedule(1e-4, 0.02, 1000);
        r.check_close("linear endpoints lo", s.beta(1), 1e-4, 0.0);
        r.check_close("linear endpoints hi", s.beta(1000), 0.02, 0.0);
        auto s2 = linear_schedule(0.1, 0.2, 2);
        r.check_close("two-step alpha_bar", s2.alpha_bar(2), 0.72, 1e-15);
        auto s1 = linear_schedule(0.5, 0.5, 1);
        r.check_close("one-step alpha_bar", s1.alpha_bar(1), 0.5, 0.0);
        r.check_close("ddim sigma eta 0", ddim_sigma(s2, 2, 0.0), 0.0, 0.0);
        r.check_close("ddim sigma terminal", ddim_sigma(s2, 1, 1.0), 0.0, 0.0);
        auto s64 = NoiseSchedule(std::vector<double>{0.36}, 0.36, 0.36);
        r.check_close("forward marginal zero noise", forward_marginal(s64, {1.0}, 1, {0.0})[0],
                      0.8, 1e-15);
        auto s25 = NoiseSchedule(std::vector<double>{0.75}, 0.75, 0.75);
        r.check_close("forward marginal zero signal",
                      forward_marginal(s25, {0.0}, 1, {2.0})[0], std::sqrt(0.75) * 2.0, 1e-15);
        r.check_throws<ValidationError>("rejects beta 1.5", [] {
            return NoiseSchedule(std::vector<double>{1.5}, 1.5, 1.5);
        });
    }

    // ----- models -----------------------------------------------------------
    r.module("models");
    {
        auto s = sched(0.5, 0.5, 1);
        auto tight = single(3.0, 1e-12);
        r.check_close("point-mass prior pins the posterior",
                      gm_posterior_x0_mean(*tight, *s, {-5.0}, 1)[0], 3.0, 1e-9);
        auto gm = std::make_shared<GaussianMixture>();
        gm->components.push_back({0.5, {2.0}, {0.25}, -1});
        gm->components.push_back({0.5, {-2.0}, {0.25}, -1});
        r.check_close("symmetric mixture posterior at zero",
                      gm_posterior_x0_mean(*gm, *s, {0.0}, 1)[0], 0.0, 1e-14);

        auto s30 = sched(1e-3, 0.03, 30);
        GmMeanEstimator opt1(single(0.0, 1.0), s30, StepKind::ddpm_opt1());
        bool ok = true;
        for (int t = 1; t <= 30; ++t)
            ok = ok && std::abs(opt1.sigma(t) - std::sqrt(s30->beta(t))) < 1e-15;
        r.check("option-1 sigma is sqrt(beta)", ok);

        GmMeanEstimator det(single(0.4, 0.81), sched(0.1, 0.2, 2), StepKind::ddim(0.0));
        Vec x = {1.3};
        r.check_close("ddim mean at t=1 is the x0 prediction", det.mean(x, 1)[0],
                      det.x0_hat(x, 1)[0], 1e-14);

        auto zero = [](const Vec& v, int) { return Vec(v.size(), 0.0); };
        auto sc = [](const Vec& v, int) { return Vec(v.size(), 0.5); };
        auto dr = [](const Vec& v, int) { return Vec(v.size(), 0.1); };
        auto s3 = sched(0.01, 0.01, 3);
        auto sm = score_to_mean(s3, 1, sc, dr, {0.2, 0.2, 0.2});
        r.check_close("score adapter arithmetic", sm.mean({1.0}, 2)[0], 0.92, 1e-15);
        auto id = score_to_mean(s3, 1, zero, zero, {0.3, 0.3, 0.3});
        r.check_close("zero score and drift is identity", id.mean({1.7}, 1)[0], 1.7, 0.0);
    }

    // ----- denoiser ---------------------------------------------------------
    r.module("denoiser");
    {
        TinyDenoiser zero_net(3, 8, 8, 5);
        Vec o = zero_net.forward({0.3, -0.7, 2.0}, 2);
        r.check("zero-initialized net predicts zero", o == Vec{0.0, 0.0, 0.0});

        auto s = sched(1e-3, 0.05, 6);
        std::vector<Vec> data;
        Rng drng(3, 0);
        for (int i = 0; i < 32; ++i) data.push_back({0.5 * drng.normal()});
        TrainConfig cfg;
        cfg.steps = 20;
        cfg.batch = 8;
        cfg.seed = 4;
        cfg.hidden1 = 8;
        cfg.hidden2 = 8;
        auto a = denoiser_train(data, *s, cfg);
        auto b = denoiser_train(data, *s, cfg);
        r.check("same seed trains bit-identically", a.net.params == b.net.params);

        Rng prng(5, 0);
        TinyDenoiser net(2, 8, 8, 5);
        for (auto& p : net.params) p = 0.3 * prng.normal();
        r.check("zero cotangent gives zero vjp",
                net.input_vjp({0.1, 0.2}, 3, {}, {0.0, 0.0}) == Vec{0.0, 0.0});

        const double e = 1e-4;
        TinyDenoiser ident(2, 2, 2, 1);
        for (int i = 0; i < 2; ++i) {
            ident.params[ident.o_w1() + static_cast<std::size_t>(i) * 2 + i] = e;
            ident.params[ident.o_w2() + static_cast<std::size_t>(i) * 2 + i] = 1.0;
            ident.params[ident.o_w3() + static_cast<std::size_t>(i) * 2 + i] = 1.0 / e;
        }
        Vec got = ident.input_vjp({0.05, -0.02}, 1, {}, {0.3, -1.1});
        r.check_close("identity-like net returns cotangent (0)", got[0], 0.3, 1e-6);
        r.check_close("identity-like net returns cotangent (1)", got[1], -1.1, 1e-6);
    }

    // ----- sampler ----------------------------------------------------------
    r.module("sampler");
    {
        Rng rng(5, 0);
        LatentCode z = sample_latent(2, 3, rng);
        r.check("latent dimension bookkeeping", z.total_dim() == 8);
        Rng r1(42, 3), r2(42, 3);
        r.check("same seed gives the same latent",
                sample_latent(4, 7, r1).pack() == sample_latent(4, 7, r2).pack());

        auto s1 = sched(0.1, 0.1, 1);
        AffineMeanEstimator aff = AffineMeanEstimator::uniform(s1, 1, 0.5, 0.0, 0.1);
        LatentCode z1;
        z1.data_dim = 1;
        z1.steps = 1;
        z1.x_T = {2.0};
        z1.eps = {{1.0}};
        r.check_close("single-step chain unrolls", generate(aff, z1)[0], 1.1, 1e-15);

        auto s12 = sched(1e-3, 0.02, 12);
        GmMeanEstimator det(single(0.3, 1.0), s12, StepKind::ddim(0.0));
        LatentCode z2 = sample_latent(1, 12, rng);
        Vec base = generate(det, z2);
        for (int t = 1; t <= 12; ++t) z2.eps_at(t) = {321.0};
        r.check("zero sigma ignores eps slots", generate(det, z2) == base);

        auto res = generate_with_grad(det, z2, {}, {0.0});
        r.check("zero cotangent gives zero gradient", norm_inf(res.grad.pack()) == 0.0);
        auto res1 = generate_with_grad(det, z2, {}, {1.0});
        bool eps_zero = true;
        for (int t = 1; t <= 12; ++t) eps_zero = eps_zero && norm_inf(res1.grad.eps_at(t)) == 0.0;
        r.check("zero sigma kills eps gradients", eps_zero);

        auto s64b = sched(1e-3, 0.03, 64);
        GmMeanEstimator m64(single(0.4, 0.49), s64b, StepKind::ddim(0.0));
        Vec xT = {0.9};
        r.check_close("one-rung ladder is the x0 prediction",
                      generate_deterministic(m64, xT, 1)[0], m64.x0_hat(xT, 64)[0], 1e-14);
        r.check("deterministic replay is bit-identical",
                generate_deterministic(m64, xT, 10) == generate_deterministic(m64, xT, 10));
    }

    // ----- encoder ----------------------------------------------------------
    r.module("encoder");
    {
        auto s1 = sched(0.36, 0.36, 1);
        Rng rng(7, 0);
        Trajectory tr = posterior_sample(*s1, {1.0}, StepKind::ddpm_opt1(), rng);
        r.check("one-step trajectory is (x0, x1)", tr.x.size() == 2 && tr.x[0][0] == 1.0);

        auto s10 = sched(1e-3, 0.05, 10);
        GmMeanEstimator det(single(0.0, 1.0), s10, StepKind::ddim(0.0));
        Rng rng2(13, 0);
        r.check_throws<ZeroSigmaError>("eta=0 encoding raises zero-sigma", [&] {
            return dpm_encode(det, {0.5}, {}, rng2);
        });

        auto s1b = sched(0.3, 0.3, 1);
        GmMeanEstimator m1(single(0.5, 0.8), s1b, StepKind::ddpm_opt1());
        Rng rng3(17, 0);
        LatentCode z = dpm_encode(m1, {0.33}, {}, rng3);
        r.check("one-step latent layout", z.total_dim() == 2);
        r.check_close("one-step reconstruction", generate(m1, z)[0], 0.33, 1e-12);

        auto s25 = sched(1e-3, 0.03, 25);
        GmMeanEstimator m25(single(0.0, 1.0, 3), s25, StepKind::ddpm_opt2());
        Rng rng4(23, 0);
        LatentCode z25 = dpm_encode(m25, {0.1, -0.2, 0.3}, {}, rng4);
        r.check("latent dimension d(T+1)", z25.total_dim() == 3 * 26);
    }

    // ----- translation ------------------------------------------------------
    r.module("translation");
    {
        auto s = sched(1e-3, 0.02, 32);
        GmMeanEstimator m(single(0.5, 0.8), s, StepKind::ddim(0.1));
        Rng rng(3, 0);
        TranslationResult tr = cycle_translate(m, m, *s, {0.37}, 32, m.kind(), rng);
        r.check_close("identity translation returns the input", tr.output[0], 0.37, 1e-9);
        TranslationResult t0 = cycle_translate(m, m, *s, {0.37}, 0, m.kind(), rng);
        r.check("t_es zero is a no-op", t0.output == t0.source);

        GmMeanEstimator opt1(single(0.0, 1.0), s, StepKind::ddpm_opt1());
        Vec x = {1.4};
        r.check("sdedit depth zero is identity", sdedit_refine(opt1, *s, x, 0, {}, rng) == x);

        GmMeanEstimator da(single(0.4, 0.49), s, StepKind::ddim(0.0));
        Vec round = ddib_translate(da, da, {0.2}, 8);
        r.check_close("ddib same-model round trip", round[0], 0.2, 1e-6);

        ProbeRegion region{{-3.0}, {3.0}};
        ProbeConfig pcfg;
        AffineMeanEstimator aff = AffineMeanEstimator::uniform(s, 1, -0.62, 0.4, 0.1);
        Rng rng5(23, 0);
        r.check_close("lipschitz of an affine map", estimate_lipschitz(aff, 4, {}, pcfg, region, rng5),
                      0.62, 1e-10);
        AffineMeanEstimator ident = AffineMeanEstimator::uniform(s, 1, 1.0, 0.0, 0.1);
        r.check_close("lipschitz of identity", estimate_lipschitz(ident, 4, {}, pcfg, region, rng5),
                      1.0, 1e-10);
        auto gm2 = std::make_shared<GaussianMixture>();
        gm2->components.push_back({0.5, {-1.0}, {0.2}, 0});
        gm2->components.push_back({0.5, {1.0}, {0.2}, 1});
        GmMeanEstimator cm(gm2, s, StepKind::ddpm_opt2());
        r.check_close("gap of identical conditions",
                      estimate_condition_gap(cm, 5, ConditionLabel(0), ConditionLabel(0), pcfg,
                                             region, rng5),
                      0.0, 0.0);

        BoundProfile p = propagate_bound({1.0, 1.0}, {0.1, 0.1});
        r.check("bound recursion anchor",
                std::abs(p.B[1] - 0.1) < 1e-15 && std::abs(p.B[2] - 0.3) < 1e-15);
        BoundProfile q = propagate_bound(Vec(7, 0.0), Vec(7, 0.25));
        r.check_close("bound telescopes at K=0", q.B.back(), 1.75, 1e-12);
        BoundProfile zp = propagate_bound({2.0, 3.0}, {0.0, 0.0});
        r.check("zero gap keeps the bound at zero", zp.B[2] == 0.0);
    }

    // ----- guidance ---------------------------------------------------------
    r.module("guidance");
    {
        IdentityGenerator gen(1);
        QuadraticEnergy quad(Vec{0.0});
        Rng rng(11, 0);
        auto zs = rejection_oracle(gen, quad, 0.0, rng, 512);
        r.check("lambda zero accepts every proposal", zs.size() == 512);

        BoxIndicatorEnergy box(Vec{-0.5}, Vec{1.0});
        Rng rng2(13, 0);
        auto trunc = rejection_oracle(gen, box, 1.0, rng2, 256);
        bool inside = true;
        for (const auto& z : trunc) inside = inside && z[0] >= -0.5 && z[0] <= 1.0;
        r.check("indicator energy truncates the prior", inside);

        auto embed = std::make_shared<AffineMap>(AffineMap::identity(2));
        EmbeddingCosineEnergy ec(embed, Vec{1.0, 0.0});
        r.check_close("cosine energy aligned", ec.value({0.7, 0.0}), 0.0, 1e-12);
        r.check_close("cosine energy orthogonal", ec.value({0.0, 1.3}), 1.0, 1e-12);
        r.check_close("cosine energy antipodal", ec.value({-2.0, 0.0}), 2.0, 1e-12);

        auto rf = std::make_shared<RandomFeatureMap>(3, 5, 99);
        Vec tgt = {0.3, -0.2, 0.8, 0.1, -0.5};
        std::vector<AffineMap> ident_aug;
        ident_aug.push_back(AffineMap::identity(3));
        AugmentedCosineEnergy a1(rf, tgt, ident_aug);
        EmbeddingCosineEnergy plain(rf, tgt);
        r.check_close("single identity augmentation reduces to plain cosine",
                      a1.value({0.4, -1.0, 0.2}), plain.value({0.4, -1.0, 0.2}), 1e-14);
        std::vector<AffineMap> same;
        for (int i = 0; i < 4; ++i) same.push_back(AffineMap::random_jitter(3, 0.05, 7));
        AugmentedCosineEnergy a4(rf, tgt, same);
        std::vector<AffineMap> one;
        one.push_back(AffineMap::random_jitter(3, 0.05, 7));
        AugmentedCosineEnergy aone(rf, tgt, one);
        r.check_close("identical augmentations collapse to one",
                      a4.value({0.4, -1.0, 0.2}), aone.value({0.4, -1.0, 0.2}), 1e-14);

        class Fixed : public DifferentiableMap {
        public:
            explicit Fixed(Vec p) : p_(std::move(p)) {}
            int in_dim() const override { return 1; }
            int out_dim() const override { return static_cast<int>(p_.size()); }
            Vec value(const Vec&) const override { return p_; }
            Vec pullback(const Vec& x, const Vec&) const override { return Vec(x.size(), 0.0); }

        private:
            Vec p_;
        };
        auto onehot = std::make_shared<Fixed>(Vec{1.0, 0.0});
        r.check_close("classifier energy at certainty", ClassifierEnergy(onehot, 0).value({0.0}),
                      0.0, 1e-15);
        auto half = std::make_shared<Fixed>(Vec{0.5, 0.5});
        r.check_close("classifier energy at one half",
                      ClassifierEnergy(half, 1).value({0.0}), std::log(2.0), 1e-12);
        auto tiny = std::make_shared<Fixed>(Vec{1.0 - 1e-30, 1e-30});
        r.check_close("classifier energy clamps", ClassifierEnergy(tiny, 1).value({0.0}), 50.0,
                      0.0);

        auto cls = std::make_shared<SoftmaxLinearClassifier>(
            SoftmaxLinearClassifier::random(3, 2, 9));
        ClassifierEnergy ce(cls, 0);
        AffineMap id_embed = AffineMap::identity(3);
        Rng rngb(41, 0);
        std::vector<Vec> base;
        for (int i = 0; i < 8; ++i) base.push_back(rngb.normal_vec(3));
        EditOptConfig ecfg;
        ecfg.steps = 10;
        ecfg.lr = 0.3;
        IdentityGenerator gen3(3);
        Vec dir = optimize_edit_direction(gen3, ce, id_embed, 1.7, 1.0, base, ecfg);
        r.check_close("edit direction norm is pinned", norm2(dir), 1.7, 1e-12);
    }

    // ----- metrics ----------------------------------------------------------
    r.module("metrics");
    {
        ImageGrid c1(3, 3, 1, 1.0), c2(3, 3, 1, 1.0);
        for (auto& p : c2.pix) p = 0.1;
        r.check_close("psnr formula case", psnr(c1, c2), 20.0, 1e-9);
        r.check_close("psnr cap on identical images", psnr(c1, c1), 100.0, 0.0);
        r.check("psnr symmetry", psnr(c1, c2) == psnr(c2, c1));

        Rng rng(3, 0);
        ImageGrid x(10, 12, 1, 1.0), y(10, 12, 1, 1.0);
        for (auto& p : x.pix) p = rng.uniform();
        for (auto& p : y.pix) p = rng.uniform();
        r.check_close("ssim of identical images", ssim(x, x), 1.0, 1e-12);
        r.check("ssim symmetry", ssim(x, y) == ssim(y, x));
        ImageGrid ca(8, 8, 1, 1.0), cb(8, 8, 1, 1.0);
        for (auto& p : ca.pix) p = 0.42;
        for (auto& p : cb.pix) p = 0.42;
        r.check_close("ssim of constant images", ssim(ca, cb), 1.0, 1e-12);

        std::vector<Vec> X = {{0.0}}, Y = {{1.0}};
        r.check_close("mmd identical sets", mmd2(X, X, 1.0), 0.0, 1e-15);
        r.check_close("mmd hand case", mmd2(X, Y, 1.0), 2.0 - 2.0 * std::exp(-0.5), 1e-9);
        Rng prj(7, 0);
        r.check_close("sliced w1 identical sets", sliced_w1(X, X, 10, prj), 0.0, 0.0);
        r.check_close("sliced w1 unit transport", sliced_w1(X, Y, 100, prj), 1.0, 1e-12);
    }

    // ----- data -------------------------------------------------------------
    r.module("data");
    {
        DomainSpec spec;
        spec.kind = DomainKind::GaussianMixtureDomain;
        spec.seed = 11;
        spec.components.push_back({0.5, {-2.0}, {0.25}, -1});
        spec.components.push_back({0.5, {2.0}, {0.25}, -1});
        MixtureDomain dom = make_gaussian_mixture_domain(spec);
        r.check("mixture echoes the spec weights", dom.gm->components[0].weight == 0.5 &&
                                                       dom.gm->components[1].weight == 0.5);
        MixtureDomain dom2 = make_gaussian_mixture_domain(spec);
        bool same = true;
        for (int i = 0; i < 32; ++i) same = same && dom.sampler.sample() == dom2.sampler.sample();
        r.check("same seed gives identical streams", same);

        DomainSpec img;
        img.kind = DomainKind::ToyImages;
        img.seed = 5;
        img.jitter = 0;
        img.bg_lo = img.bg_hi = 0.1;
        img.fg_lo = img.fg_hi = 0.9;
        ToyImageDomains frozen = make_toy_image_domains(img);
        ImageGrid first = frozen.sample_a();
        bool identical = true;
        for (int i = 0; i < 4; ++i) identical = identical && frozen.sample_a().pix == first.pix;
        r.check("zero jitter freezes the domain", identical);

        DomainSpec img2;
        img2.kind = DomainKind::ToyImages;
        img2.seed = 6;
        ToyImageDomains dom3 = make_toy_image_domains(img2);
        bool in_range = true;
        for (int i = 0; i < 16; ++i) {
            ImageGrid g = dom3.sample_b();
            for (double p : g.pix) in_range = in_range && p >= 0.0 && p <= g.peak;
        }
        r.check("pixels stay inside the dynamic range", in_range);
    }

    return out;
}

}  // namespace dpmlat
