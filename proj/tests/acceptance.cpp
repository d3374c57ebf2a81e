// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion pins its tolerances in code; runtime budgets are
// printed alongside.

#include <chrono>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dpmlat/experiment.hpp"
#include "dpmlat/selftest.hpp"
#include "testutil.hpp"

using namespace dpmlat;

namespace {

struct Criterion {
    int id;
    std::string name;
    std::function<bool(std::string&)> body;
};

std::shared_ptr<const NoiseSchedule> make_sched(double b0, double b1, int T) {
    return std::make_shared<const NoiseSchedule>(linear_schedule(b0, b1, T));
}

std::shared_ptr<const GaussianMixture> single_gaussian(double m, double var, int dim = 1) {
    auto gm = std::make_shared<GaussianMixture>();
    gm->components.push_back({1.0, Vec(static_cast<std::size_t>(dim), m),
                              Vec(static_cast<std::size_t>(dim), var), -1});
    return gm;
}

std::shared_ptr<const GaussianMixture> mix_2d() {
    auto gm = std::make_shared<GaussianMixture>();
    gm->components.push_back({0.5, {-1.0, 0.4}, {0.3, 0.5}, -1});
    gm->components.push_back({0.5, {1.1, -0.3}, {0.4, 0.25}, -1});
    return gm;
}

int acceptance_threads() { return resolve_threads(4); }

// ---------------------------------------------------------------------------
// 1. Exact reconstruction across families, depths and models.
// ---------------------------------------------------------------------------

bool criterion_reconstruction(std::string& detail) {
    const std::vector<StepKind> kinds = {StepKind::ddpm_opt1(), StepKind::ddpm_opt2(),
                                         StepKind::ddim(0.1), StepKind::ddim(1.0)};
    double worst_analytic = 0.0;
    for (int T : {10, 100, 1000}) {
        auto s = make_sched(1e-4, 0.02, T);
        for (const StepKind& kind : kinds) {
            for (int dim : {1, 2}) {
                auto gm = dim == 1 ? single_gaussian(0.3, 0.7) : mix_2d();
                GmMeanEstimator m(gm, s, kind);
                const int runs = 100;
                std::vector<double> errs(runs);
                parallel_for(runs, acceptance_threads(), [&](int i) {
                    Rng rng =
                        Rng(1000 + T, static_cast<std::uint64_t>(dim)).split(static_cast<std::uint64_t>(i));
                    Vec x0 = rng.normal_vec(static_cast<std::size_t>(dim));
                    LatentCode z = dpm_encode(m, x0, {}, rng);
                    errs[static_cast<std::size_t>(i)] = norm_inf(generate(m, z) - x0);
                });
                for (double e : errs) worst_analytic = std::max(worst_analytic, e);
            }
        }
    }

    // d_I = 256 toy images with a trained denoiser at T = 100.
    const int T = 100;
    auto s = make_sched(1e-4, 0.02, T);
    DomainSpec spec;
    spec.kind = DomainKind::ToyImages;
    spec.seed = 7;
    ToyImageDomains dom = make_toy_image_domains(spec);
    std::vector<Vec> data;
    for (int i = 0; i < 1500; ++i) data.push_back(dom.sample_a().pix);
    TrainConfig tc;
    tc.steps = 1500;
    tc.batch = 32;
    tc.seed = 3;
    tc.hidden1 = 64;
    tc.hidden2 = 64;
    auto trained = denoiser_train(data, *s, tc);
    DenoiserMeanEstimator dm(std::make_shared<const TinyDenoiser>(std::move(trained.net)), s,
                             StepKind::ddim(0.1));
    const int img_runs = 100;
    std::vector<double> img_errs(img_runs);
    std::vector<Vec> img_inputs;
    for (int i = 0; i < img_runs; ++i) img_inputs.push_back(dom.sample_a().pix);
    parallel_for(img_runs, acceptance_threads(), [&](int i) {
        Rng rng = Rng(77, 0).split(static_cast<std::uint64_t>(i));
        LatentCode z = dpm_encode(dm, img_inputs[static_cast<std::size_t>(i)], {}, rng);
        img_errs[static_cast<std::size_t>(i)] =
            norm_inf(generate(dm, z) - img_inputs[static_cast<std::size_t>(i)]);
    });
    double worst_img = 0.0;
    for (double e : img_errs) worst_img = std::max(worst_img, e);

    std::ostringstream os;
    os << "analytic max err " << worst_analytic << " (<= 1e-9), image max err " << worst_img
       << " (<= 1e-7)";
    detail = os.str();
    return worst_analytic <= 1e-9 && worst_img <= 1e-7;
}

// ---------------------------------------------------------------------------
// 2. Identity translation at several encoding depths.
// ---------------------------------------------------------------------------

bool criterion_identity_translation(std::string& detail) {
    const int T = 100;
    auto s = make_sched(1e-4, 0.02, T);
    double worst = 0.0;
    for (int dim : {1, 2}) {
        auto gm = dim == 1 ? single_gaussian(0.3, 0.7) : mix_2d();
        GmMeanEstimator m(gm, s, StepKind::ddim(0.1));
        for (int t_es : {T / 4, T / 2, T}) {
            const int runs = 100;
            std::vector<double> errs(runs);
            parallel_for(runs, acceptance_threads(), [&](int i) {
                Rng rng = Rng(2000 + t_es, static_cast<std::uint64_t>(dim))
                              .split(static_cast<std::uint64_t>(i));
                Vec x0 = rng.normal_vec(static_cast<std::size_t>(dim));
                TranslationResult r = cycle_translate(m, m, *s, x0, t_es, m.kind(), rng);
                errs[static_cast<std::size_t>(i)] = norm_inf(r.output - x0);
            });
            for (double e : errs) worst = std::max(worst, e);
        }
    }
    std::ostringstream os;
    os << "max identity-translation err " << worst << " (<= 1e-9)";
    detail = os.str();
    return worst <= 1e-9;
}

// ---------------------------------------------------------------------------
// 3. Bound soundness with analytic K_t, S_t on two-label affine estimators.
// ---------------------------------------------------------------------------

bool criterion_bound_soundness(std::string& detail) {
    const int T = 60, t_es = 40;
    const double var = 0.3, mean_a = -1.5, mean_b = 1.5;
    auto s = make_sched(1e-3, 0.03, T);
    auto gm = std::make_shared<GaussianMixture>();
    gm->components.push_back({0.5, {mean_a}, {var}, 0});
    gm->components.push_back({0.5, {mean_b}, {var}, 1});
    GmMeanEstimator m(gm, s, StepKind::ddpm_opt2());

    // Exact per-step moduli from the conjugate closed form: with shared
    // variance the label-conditional estimators are affine with equal slopes,
    // so K_t = |slope| and S_t = |intercept gap| are attained.
    Vec K(static_cast<std::size_t>(t_es)), S(static_cast<std::size_t>(t_es));
    for (int t = 1; t <= t_es; ++t) {
        double ab = s->alpha_bar(t);
        double den = ab * var + 1.0 - ab;
        double x0_slope = std::sqrt(ab) * var / den;
        double x0_icpt_a = (1.0 - ab) * mean_a / den;
        double x0_icpt_b = (1.0 - ab) * mean_b / den;
        double eps_slope = (1.0 - std::sqrt(ab) * x0_slope) / std::sqrt(1.0 - ab);
        double c = s->beta(t) / std::sqrt(1.0 - ab);
        double inv = 1.0 / std::sqrt(s->alpha(t));
        K[static_cast<std::size_t>(t - 1)] = std::abs((1.0 - c * eps_slope) * inv);
        double icpt_gap = std::abs(c * std::sqrt(ab) / std::sqrt(1.0 - ab) * inv *
                                   (x0_icpt_a - x0_icpt_b));
        S[static_cast<std::size_t>(t - 1)] = icpt_gap;
    }

    MixtureDomain dom_hack{gm, GmSampler(gm, Rng(5, 0))};
    int violations = 0;
    double max_slack = 0.0;
    Rng root(3000, 0);
    for (int run = 0; run < 100; ++run) {
        Rng rng = root.split(static_cast<std::uint64_t>(run));
        Vec x0 = {mean_a + std::sqrt(var) * rng.normal()};
        TranslationResult tr = cycle_translate(m, m, *s, x0, t_es, m.kind(), rng,
                                               ConditionLabel(0), ConditionLabel(1));
        BoundProfile prof = propagate_bound(K, S, tr.distances);
        violations += static_cast<int>(prof.violated_levels.size());
        for (std::size_t j = 0; j < tr.distances.size(); ++j)
            max_slack = std::max(max_slack, tr.distances[j] - prof.B[j]);
    }
    std::ostringstream os;
    os << "violations " << violations << " over 100 runs x " << (t_es + 1)
       << " levels (max realized-minus-bound " << max_slack << ")";
    detail = os.str();
    return violations == 0;
}

// ---------------------------------------------------------------------------
// 4. Faithfulness dominance on paired toy-image domains.
// ---------------------------------------------------------------------------

bool criterion_faithfulness(std::string& detail) {
    const int T = 100, t_es = 50;
    auto s = make_sched(1e-4, 0.02, T);
    DomainSpec spec;
    spec.kind = DomainKind::ToyImages;
    spec.seed = 21;
    ToyImageDomains dom = make_toy_image_domains(spec);

    ToyImageDomains train_dom = make_toy_image_domains(spec);
    std::vector<Vec> data_a, data_b;
    for (int i = 0; i < 2000; ++i) {
        data_a.push_back(train_dom.sample_a().pix);
        data_b.push_back(train_dom.sample_b().pix);
    }
    TrainConfig tc;
    tc.steps = 2500;
    tc.batch = 32;
    tc.seed = 9;
    tc.hidden1 = 64;
    tc.hidden2 = 64;
    auto net_a = denoiser_train(data_a, *s, tc);
    TrainConfig tcb = tc;
    tcb.seed = 10;
    auto net_b = denoiser_train(data_b, *s, tcb);
    StepKind kind = StepKind::ddim(0.1);
    DenoiserMeanEstimator ma(std::make_shared<const TinyDenoiser>(std::move(net_a.net)), s, kind);
    DenoiserMeanEstimator mb(std::make_shared<const TinyDenoiser>(std::move(net_b.net)), s, kind);

    const int runs = 200;
    std::vector<Vec> sources;
    for (int i = 0; i < runs; ++i) sources.push_back(dom.sample_a().pix);

    auto to_img = [&](Vec v) {
        for (auto& x : v) x = std::clamp(x, 0.0, spec.peak);
        return ImageGrid::from_vec(v, spec.height, spec.width, 1, spec.peak);
    };

    std::vector<double> ssim_cd(runs), ssim_uncond(runs), ssim_sdedit(runs);
    Rng root(4000, 0);
    parallel_for(runs, acceptance_threads(), [&](int i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        const Vec& src = sources[static_cast<std::size_t>(i)];
        ImageGrid src_img = to_img(src);

        TranslationResult tr = cycle_translate(ma, mb, *s, src, t_es, kind, rng);
        ssim_cd[static_cast<std::size_t>(i)] = ssim(src_img, to_img(tr.output));

        LatentCode z = sample_latent(mb.dim(), T, rng);
        ssim_uncond[static_cast<std::size_t>(i)] = ssim(src_img, to_img(generate(mb, z)));

        Vec sd = sdedit_refine(mb, *s, src, T, {}, rng);
        ssim_sdedit[static_cast<std::size_t>(i)] = ssim(src_img, to_img(sd));
    });

    double mean_cd = 0, mean_un = 0, mean_sd = 0;
    int wins_un = 0, wins_sd = 0;
    for (int i = 0; i < runs; ++i) {
        mean_cd += ssim_cd[static_cast<std::size_t>(i)];
        mean_un += ssim_uncond[static_cast<std::size_t>(i)];
        mean_sd += ssim_sdedit[static_cast<std::size_t>(i)];
        if (ssim_cd[static_cast<std::size_t>(i)] > ssim_uncond[static_cast<std::size_t>(i)]) ++wins_un;
        if (ssim_cd[static_cast<std::size_t>(i)] > ssim_sdedit[static_cast<std::size_t>(i)]) ++wins_sd;
    }
    mean_cd /= runs;
    mean_un /= runs;
    mean_sd /= runs;
    double p_un = testutil::sign_test_pvalue(wins_un, runs);
    double p_sd = testutil::sign_test_pvalue(wins_sd, runs);

    std::ostringstream os;
    os << "mean ssim: cyclediff " << mean_cd << ", uncond " << mean_un << ", sdedit " << mean_sd
       << "; sign tests p_uncond " << p_un << ", p_sdedit " << p_sd << " (< 0.01)";
    detail = os.str();
    return mean_cd > mean_un && mean_cd > mean_sd && p_un < 0.01 && p_sd < 0.01;
}

// ---------------------------------------------------------------------------
// 5. Langevin correctness: closed-form moments and oracle agreement.
// ---------------------------------------------------------------------------

bool criterion_langevin(std::string& detail) {
    IdentityGenerator gen(1);
    GuidanceConfig cfg;
    cfg.n_steps = 500;
    cfg.step_size = 0.05;
    const int chains = 10000;

    auto var_of = [](const std::vector<Vec>& zs) {
        double s1 = 0, s2 = 0;
        for (const auto& z : zs) {
            s1 += z[0];
            s2 += z[0] * z[0];
        }
        double m = s1 / static_cast<double>(zs.size());
        return std::make_pair(m, s2 / static_cast<double>(zs.size()) - m * m);
    };

    QuadraticEnergy e0(Vec{0.0});
    cfg.lambda = 1.0;
    auto [m_q, v_q] = var_of(langevin_guide(gen, e0, cfg, chains, Rng(5000, 0)));
    bool ok_q = v_q > 0.45 && v_q < 0.55;

    cfg.lambda = 0.0;
    auto [m_p, v_p] = var_of(langevin_guide(gen, e0, cfg, chains, Rng(5001, 0)));
    bool ok_p = v_p > 0.95 && v_p < 1.05;

    QuadraticEnergy e2(Vec{2.0});
    cfg.lambda = 1.0;
    auto [m_s, v_s] = var_of(langevin_guide(gen, e2, cfg, chains, Rng(5002, 0)));
    bool ok_s = m_s > 0.95 && m_s < 1.05;
    (void)m_q;
    (void)m_p;
    (void)v_s;

    // Langevin vs rejection on the identity generator.
    cfg.lambda = 1.0;
    auto lang_id = langevin_guide(gen, e0, cfg, 1000, Rng(5003, 0));
    Rng orac_id(5004, 0);
    auto orc_id = rejection_oracle(gen, e0, 1.0, orac_id, 1000);
    double mmd_id = mmd2(lang_id, orc_id, 1.0);

    // Langevin vs rejection through a T = 5 analytic chain generator.
    const int T = 5;
    auto s = make_sched(0.02, 0.1, T);
    auto est = std::make_shared<const GmMeanEstimator>(single_gaussian(0.0, 1.0), s,
                                                       StepKind::ddpm_opt2());
    StochasticChainGenerator chain_gen(est);
    QuadraticEnergy ex(Vec{1.0}, 0.5);
    GuidanceConfig ccfg;
    ccfg.lambda = 1.0;
    ccfg.n_steps = 400;
    ccfg.step_size = 0.05;
    std::vector<Vec> lang_x(1000), orc_x;
    {
        Rng root(5005, 0);
        std::vector<Vec> finals(1000);
        parallel_for(1000, acceptance_threads(), [&](int c) {
            Rng rng = root.split(static_cast<std::uint64_t>(c));
            finals[static_cast<std::size_t>(c)] = langevin_chain(chain_gen, ex, ccfg, rng);
        });
        for (int c = 0; c < 1000; ++c)
            lang_x[static_cast<std::size_t>(c)] = chain_gen.value(finals[static_cast<std::size_t>(c)]);
        Rng orac(5006, 0);
        auto zs = rejection_oracle(chain_gen, ex, 1.0, orac, 1000);
        for (const auto& z : zs) orc_x.push_back(chain_gen.value(z));
    }
    double mmd_chain = mmd2(lang_x, orc_x, 1.0);

    std::ostringstream os;
    os << "var(lam=1) " << v_q << " in [0.45,0.55], var(lam=0) " << v_p
       << " in [0.95,1.05], mean(shifted) " << m_s << " in [0.95,1.05], mmd2 identity " << mmd_id
       << ", mmd2 chain " << mmd_chain << " (< 0.01)";
    detail = os.str();
    return ok_q && ok_p && ok_s && mmd_id < 0.01 && mmd_chain < 0.01;
}

// ---------------------------------------------------------------------------
// 6. Gradient fidelity everywhere, against central finite differences.
// ---------------------------------------------------------------------------

bool criterion_gradients(std::string& detail) {
    double worst = 0.0;
    auto track = [&](double rel) { worst = std::max(worst, rel); };

    // TinyDenoiser input VJP.
    {
        Rng rng(6000, 0);
        TinyDenoiser net(3, 12, 10, 7, 2);
        for (auto& p : net.params) p = 0.4 * rng.normal();
        for (int probe = 0; probe < 20; ++probe) {
            int t = 1 + static_cast<int>(rng.uniform_int(0, 6));
            ConditionLabel cond(static_cast<int>(rng.uniform_int(0, 1)));
            Vec x = rng.normal_vec(3), u = rng.normal_vec(3);
            track(testutil::rel_err(
                net.input_vjp(x, t, cond, u),
                testutil::fd_vjp([&](const Vec& p) { return net.forward(p, t, cond); }, x, u)));
        }
    }

    // Generator pullbacks (stochastic full latent at T = 8; deterministic ladder).
    {
        const int T = 8;
        auto s = make_sched(1e-3, 0.05, T);
        auto est = std::make_shared<const GmMeanEstimator>(mix_2d(), s, StepKind::ddpm_opt2());
        auto det = std::make_shared<const GmMeanEstimator>(mix_2d(), s, StepKind::ddim(0.0));
        StochasticChainGenerator sg(est);
        DeterministicChainGenerator dg(det, 5);
        Rng rng(6001, 0);
        for (const DifferentiableGenerator* g :
             {static_cast<const DifferentiableGenerator*>(&sg),
              static_cast<const DifferentiableGenerator*>(&dg)}) {
            for (int probe = 0; probe < 20; ++probe) {
                Vec z = rng.normal_vec(static_cast<std::size_t>(g->latent_dim()));
                Vec cot = rng.normal_vec(static_cast<std::size_t>(g->output_dim()));
                track(testutil::rel_err(
                    g->pullback(z, cot),
                    testutil::fd_vjp([&](const Vec& p) { return g->value(p); }, z, cot)));
            }
        }
    }

    // Every built-in energy gradient.
    {
        Rng rng(6002, 0);
        const int d = 4;
        auto embed = std::make_shared<RandomFeatureMap>(d, 6, 3);
        Rng ref_rng(6003, 0);
        Vec ref = ref_rng.normal_vec(6);
        EmbeddingCosineEnergy cos_e(embed, ref);
        std::vector<AffineMap> augs;
        for (std::uint64_t i = 0; i < 3; ++i)
            augs.push_back(AffineMap::random_jitter(d, 0.1, 40 + i));
        AugmentedCosineEnergy aug_e(embed, ref, augs);
        auto cls = std::make_shared<SoftmaxLinearClassifier>(
            SoftmaxLinearClassifier::random(d, 3, 5));
        ClassifierEnergy cls_e(cls, 1);
        QuadraticEnergy quad(ref_rng.normal_vec(d), 0.7);
        for (const EnergyFunction* e :
             {static_cast<const EnergyFunction*>(&cos_e),
              static_cast<const EnergyFunction*>(&aug_e),
              static_cast<const EnergyFunction*>(&cls_e),
              static_cast<const EnergyFunction*>(&quad)}) {
            for (int probe = 0; probe < 20; ++probe) {
                Vec x = rng.normal_vec(d);
                track(testutil::rel_err(
                    e->grad(x),
                    testutil::fd_gradient([&](const Vec& p) { return e->value(p); }, x)));
            }
        }
    }

    // Edit-direction objective.
    {
        const int d = 3;
        IdentityGenerator gen(d);
        auto cls = std::make_shared<SoftmaxLinearClassifier>(
            SoftmaxLinearClassifier::random(d, 2, 9));
        ClassifierEnergy cls_e(cls, 0);
        RandomFeatureMap embed(d, 5, 77);
        Rng rng(6004, 0);
        std::vector<Vec> base;
        for (int i = 0; i < 8; ++i) base.push_back(rng.normal_vec(d));
        EditObjective obj(gen, cls_e, embed, 0.8, base);
        for (int probe = 0; probe < 20; ++probe) {
            Vec n = rng.normal_vec(d);
            track(testutil::rel_err(
                obj.grad(n), testutil::fd_gradient([&](const Vec& p) { return obj.value(p); }, n)));
        }
    }

    std::ostringstream os;
    os << "worst relative error " << worst << " (< 1e-4) over 140 probes";
    detail = os.str();
    return worst < 1e-4;
}

// ---------------------------------------------------------------------------
// 7. Sampler marginal correctness on the unit Gaussian.
// ---------------------------------------------------------------------------

bool criterion_marginals(std::string& detail) {
    const int T = 100, n = 10000;
    auto s = make_sched(1e-4, 0.02, T);
    GmMeanEstimator stoch(single_gaussian(0.0, 1.0), s, StepKind::ddpm_opt1());
    GmMeanEstimator det(single_gaussian(0.0, 1.0), s, StepKind::ddim(0.0));

    std::vector<double> xs(n), xd(n);
    Rng root(7000, 0);
    parallel_for(n, acceptance_threads(), [&](int i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        LatentCode z = sample_latent(1, T, rng);
        xs[static_cast<std::size_t>(i)] = generate(stoch, z)[0];
        xd[static_cast<std::size_t>(i)] = generate_deterministic(det, {rng.normal()}, T)[0];
    });
    double ks_s = testutil::ks_statistic(xs, [](double v) { return testutil::normal_cdf(v); });
    double ks_d = testutil::ks_statistic(xd, [](double v) { return testutil::normal_cdf(v); });
    std::ostringstream os;
    os << "KS stochastic " << ks_s << ", deterministic " << ks_d << " (< 0.02)";
    detail = os.str();
    return ks_s < 0.02 && ks_d < 0.02;
}

// ---------------------------------------------------------------------------
// 8. Metric self-consistency.
// ---------------------------------------------------------------------------

bool criterion_metrics(std::string& detail) {
    bool ok = true;
    ImageGrid a(2, 2, 1, 255.0), b(2, 2, 1, 255.0);
    for (auto& p : b.pix) p = 1.0;
    ok = ok && std::abs(psnr(a, b) - 20.0 * std::log10(255.0)) < 1e-9;
    ImageGrid c(3, 3, 1, 1.0), d(3, 3, 1, 1.0);
    for (auto& p : d.pix) p = 0.1;
    ok = ok && std::abs(psnr(c, d) - 20.0) < 1e-9;

    Rng rng(8000, 0);
    ImageGrid x(9, 9, 1, 1.0);
    for (auto& p : x.pix) p = rng.uniform();
    ok = ok && std::abs(ssim(x, x) - 1.0) < 1e-12;

    std::vector<Vec> X = {{0.0}}, Y = {{1.0}};
    double mmd = mmd2(X, Y, 1.0);
    ok = ok && std::abs(mmd - (2.0 - 2.0 * std::exp(-0.5))) < 1e-9;

    Rng prj(8001, 0);
    double sw = sliced_w1(X, Y, 128, prj);
    ok = ok && std::abs(sw - 1.0) < 1e-12;

    std::ostringstream os;
    os << "psnr/ssim/mmd2/sliced_w1 anchors exact (mmd2 " << mmd << ")";
    detail = os.str();
    return ok;
}

// ---------------------------------------------------------------------------
// 9. Determinism across runs and worker counts.
// ---------------------------------------------------------------------------

bool criterion_determinism(std::string& detail) {
    json comp_a = {{"weight", 1.0}, {"mean", {-1.0}}, {"var", {0.3}}};
    json comp_b = {{"weight", 1.0}, {"mean", {1.0}}, {"var", {0.3}}};
    json cfg = {{"kind", "translate"},
                {"seed", 99},
                {"schedule", {{"T", 30}, {"beta_start", 1e-3}, {"beta_end", 0.03}}},
                {"model", {{"family", "ddim"}, {"eta", 0.5}}},
                {"domain_a",
                 {{"kind", "gaussian-mixture"}, {"seed", 5}, {"components", json::array({comp_a})}}},
                {"domain_b",
                 {{"kind", "gaussian-mixture"}, {"seed", 6}, {"components", json::array({comp_b})}}},
                {"t_es", {10, 30}},
                {"runs", 16}};

    // Same config, repeated run: identical bodies.
    RunReport r1 = run_experiment(cfg, "", std::nullopt, true, false);
    RunReport r2 = run_experiment(cfg, "", std::nullopt, true, false);
    bool same_repeat = r1.metrics_csv() == r2.metrics_csv() &&
                       report_body_without_timing(r1.report) == report_body_without_timing(r2.report);

    // Different worker counts via the environment knob.
    setenv("DPM_LATENT_THREADS", "1", 1);
    RunReport t1 = run_experiment(cfg, "", std::nullopt, true, false);
    setenv("DPM_LATENT_THREADS", "4", 1);
    RunReport t4 = run_experiment(cfg, "", std::nullopt, true, false);
    unsetenv("DPM_LATENT_THREADS");
    bool same_threads = t1.metrics_csv() == t4.metrics_csv();

    detail = std::string("repeat-identical ") + (same_repeat ? "yes" : "NO") +
             ", thread-count-invariant " + (same_threads ? "yes" : "NO");
    return same_repeat && same_threads;
}

}  // namespace

int main() {
    std::vector<Criterion> criteria = {
        {1, "exact reconstruction (families x depths x models)", criterion_reconstruction},
        {2, "identity translation", criterion_identity_translation},
        {3, "distance-bound soundness", criterion_bound_soundness},
        {4, "faithfulness dominance on toy images", criterion_faithfulness},
        {5, "langevin correctness vs closed forms and rejection", criterion_langevin},
        {6, "gradient fidelity", criterion_gradients},
        {7, "sampler marginal correctness", criterion_marginals},
        {8, "metric self-consistency", criterion_metrics},
        {9, "determinism across runs and worker counts", criterion_determinism},
    };

    int failures = 0;
    for (auto& c : criteria) {
        auto t0 = std::chrono::steady_clock::now();
        std::string det;
        bool pass = false;
        try {
            pass = c.body(det);
        } catch (const std::exception& e) {
            det = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d: %s — %s (%.1fs)\n", pass ? "PASS" : "FAIL", c.id,
                    c.name.c_str(), det.c_str(), secs);
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    if (failures > 0) std::printf("%d criterion(s) FAILED\n", failures);
    return failures == 0 ? 0 : 1;
}
