#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dpmlat/data.hpp"
#include "dpmlat/denoiser.hpp"
#include "dpmlat/encoder.hpp"
#include "dpmlat/guidance.hpp"
#include "dpmlat/metrics.hpp"
#include "dpmlat/sampler.hpp"
#include "dpmlat/serialize.hpp"
#include "dpmlat/translation.hpp"
#include "dpmlat/version.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Experiment runner: config in, deterministic report out. All randomness is
// derived from the config seed via per-task stream splits, so results are
// byte-identical for any worker count.
// ---------------------------------------------------------------------------

inline int resolve_threads(int config_threads) {
    int n = config_threads;
    if (n <= 0) {
        if (const char* env = std::getenv("DPM_LATENT_THREADS")) n = std::atoi(env);
    }
    if (n <= 0) n = 1;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw > 0) n = std::min<int>(n, static_cast<int>(hw));
    return std::max(1, n);
}

// Index-sharded parallel loop. Tasks own preassigned slots; scheduling order
// never reaches the results.
template <typename Fn>
inline void parallel_for(int n_tasks, int threads, Fn&& fn) {
    if (n_tasks <= 0) return;
    threads = std::min(threads, n_tasks);
    if (threads <= 1) {
        for (int i = 0; i < n_tasks; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n_tasks) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Report assembly.
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string run;
    std::string metric;
    double value = 0.0;
};

struct RunReport {
    json report;                  // full report body (config echo, rows, extras)
    std::vector<MetricRow> rows;
    std::string outdir;

    std::string metrics_csv() const {
        std::string out = "run,metric,value\n";
        for (const auto& r : rows)
            out += r.run + "," + r.metric + "," + format_double(r.value) + "\n";
        return out;
    }
};

// The determinism contract covers everything except wall-clock timing.
inline json report_body_without_timing(json report) {
    report.erase("timing");
    return report;
}

namespace detail {

struct Trace {
    std::string name;     // file stem under traces/
    std::string header;
    std::vector<std::string> lines;
};

struct ReportBuilder {
    std::vector<MetricRow> rows;
    std::vector<Trace> traces;
    std::vector<ImageGrid> samples;
    json extras = json::object();

    void add(const std::string& run, const std::string& metric, double value) {
        rows.push_back({run, metric, value});
    }
};

inline void write_samples_bin(const std::string& path, const std::vector<ImageGrid>& imgs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("experiment", "cannot open " + path);
    auto put_u32 = [&](std::uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
        f.write(b, 4);
    };
    f.write("DPMI", 4);
    put_u32(static_cast<std::uint32_t>(imgs.size()));
    put_u32(static_cast<std::uint32_t>(imgs.empty() ? 0 : imgs[0].height));
    put_u32(static_cast<std::uint32_t>(imgs.empty() ? 0 : imgs[0].width));
    put_u32(static_cast<std::uint32_t>(imgs.empty() ? 0 : imgs[0].channels));
    for (const auto& img : imgs)
        for (double v : img.pix) {
            float x = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &x, 4);
            char b[4];
            for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
            f.write(b, 4);
        }
}

// --------- config access with field-path diagnostics ----------------------

inline const json& need(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key))
        throw ValidationError("config", path + ": missing required field '" + key + "'");
    return j.at(key);
}

inline double need_num(const json& j, const char* key, const std::string& path) {
    const json& v = need(j, key, path);
    if (!v.is_number())
        throw ValidationError("config", path + "." + key + ": expected a number");
    return v.get<double>();
}

inline int need_int(const json& j, const char* key, const std::string& path) {
    const json& v = need(j, key, path);
    if (!v.is_number_integer())
        throw ValidationError("config", path + "." + key + ": expected an integer");
    return v.get<int>();
}

inline std::vector<int> int_list(const json& j, const char* key, const std::string& path) {
    const json& v = need(j, key, path);
    std::vector<int> out;
    if (v.is_number_integer()) {
        out.push_back(v.get<int>());
    } else if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_number_integer())
                throw ValidationError("config", path + "." + key + ": expected integers");
            out.push_back(e.get<int>());
        }
    } else {
        throw ValidationError("config", path + "." + key + ": expected integer or list");
    }
    if (out.empty()) throw ValidationError("config", path + "." + key + ": empty list");
    return out;
}

inline std::vector<double> num_list(const json& j, const char* key, const std::string& path) {
    const json& v = need(j, key, path);
    std::vector<double> out;
    if (v.is_number()) {
        out.push_back(v.get<double>());
    } else if (v.is_array()) {
        for (const auto& e : v) out.push_back(e.get<double>());
    } else {
        throw ValidationError("config", path + "." + key + ": expected number or list");
    }
    if (out.empty()) throw ValidationError("config", path + "." + key + ": empty list");
    return out;
}

// --------- model construction ----------------------------------------------

inline TrainConfig train_config_from_json(const json& j, std::uint64_t fallback_seed) {
    TrainConfig cfg;
    cfg.steps = j.value("steps", 3000);
    cfg.lr = j.value("lr", 2e-3);
    cfg.batch = j.value("batch", 32);
    cfg.seed = j.value("seed", fallback_seed);
    cfg.hidden1 = j.value("hidden1", 64);
    cfg.hidden2 = j.value("hidden2", 64);
    cfg.validate();
    return cfg;
}

struct BuiltModel {
    std::shared_ptr<const NoiseSchedule> sched;
    std::shared_ptr<const X0PredictingEstimator> est;
    std::shared_ptr<const GaussianMixture> gm;  // set when analytic
    int dim = 0;
};

inline BuiltModel build_mixture_model(const DomainSpec& spec,
                                      std::shared_ptr<const NoiseSchedule> sched,
                                      StepKind kind) {
    auto gm = std::make_shared<const GaussianMixture>(GaussianMixture{spec.components});
    BuiltModel m;
    m.sched = sched;
    m.gm = gm;
    m.dim = gm->dim();
    m.est = std::make_shared<const GmMeanEstimator>(gm, sched, kind);
    return m;
}

inline BuiltModel build_trained_model(const std::vector<Vec>& data,
                                      std::shared_ptr<const NoiseSchedule> sched, StepKind kind,
                                      const TrainConfig& cfg) {
    auto trained = denoiser_train(data, *sched, cfg);
    BuiltModel m;
    m.sched = sched;
    m.dim = trained.net.data_dim;
    m.est = std::make_shared<const DenoiserMeanEstimator>(
        std::make_shared<const TinyDenoiser>(std::move(trained.net)), sched, kind);
    return m;
}

inline std::vector<Vec> draw_mixture_data(const DomainSpec& spec, int n) {
    MixtureDomain dom = make_gaussian_mixture_domain(spec);
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(dom.sampler.sample());
    return out;
}

// ---------------------------------------------------------------------------
// Kind runners.
// ---------------------------------------------------------------------------

inline void run_reconstruct(const json& cfg, std::uint64_t seed, int threads, ReportBuilder& rb) {
    auto sched = std::make_shared<const NoiseSchedule>(
        schedule_from_json(need(cfg, "schedule", "config")));
    StepKind kind = step_kind_from_json(need(cfg, "model", "config"), "config.model");
    DomainSpec domain = domain_from_json(need(cfg, "domain", "config"), "config.domain");
    int runs = need_int(cfg, "runs", "config");
    if (runs < 1) throw ValidationError("config", "config.runs: must be >= 1");
    if (!kind.stochastic())
        throw ValidationError("config", "config.model: reconstruction needs a stochastic family");

    BuiltModel model;
    std::vector<Vec> inputs;
    if (domain.kind == DomainKind::GaussianMixtureDomain) {
        if (cfg.contains("train")) {
            model = build_trained_model(
                draw_mixture_data(domain, cfg.at("train").value("samples", 2000)), sched, kind,
                train_config_from_json(cfg.at("train"), seed));
        } else {
            model = build_mixture_model(domain, sched, kind);
        }
        MixtureDomain dom = make_gaussian_mixture_domain(domain);
        for (int i = 0; i < runs; ++i) inputs.push_back(dom.sampler.sample());
    } else {
        if (!cfg.contains("train"))
            throw ValidationError("config", "config.train: toy-image models must be trained");
        ToyImageDomains dom = make_toy_image_domains(domain);
        std::vector<Vec> data;
        int n_train = cfg.at("train").value("samples", 2000);
        for (int i = 0; i < n_train; ++i) data.push_back(dom.sample_a().pix);
        model = build_trained_model(data, sched, kind, train_config_from_json(cfg.at("train"), seed));
        for (int i = 0; i < runs; ++i) inputs.push_back(dom.sample_a().pix);
    }

    std::vector<double> errs(static_cast<std::size_t>(runs));
    Rng root(seed, 0);
    parallel_for(runs, threads, [&](int i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        LatentCode z = dpm_encode(*model.est, *sched, inputs[static_cast<std::size_t>(i)], {},
                                  kind, rng);
        Vec rec = generate(*model.est, z);
        errs[static_cast<std::size_t>(i)] = norm_inf(rec - inputs[static_cast<std::size_t>(i)]);
    });
    double worst = 0.0;
    for (int i = 0; i < runs; ++i) {
        rb.add("run" + std::to_string(i), "recon_error", errs[static_cast<std::size_t>(i)]);
        worst = std::max(worst, errs[static_cast<std::size_t>(i)]);
    }
    rb.add("summary", "max_abs_recon_error", worst);
}

inline void run_translate(const json& cfg, std::uint64_t seed, int threads, ReportBuilder& rb) {
    auto sched = std::make_shared<const NoiseSchedule>(
        schedule_from_json(need(cfg, "schedule", "config")));
    StepKind kind = step_kind_from_json(need(cfg, "model", "config"), "config.model");
    std::vector<int> t_es_list = int_list(cfg, "t_es", "config");
    int runs = need_int(cfg, "runs", "config");
    for (int t : t_es_list)
        if (t < 0 || t > sched->steps())
            throw ValidationError("config", "config.t_es: outside 0..T");

    bool image_domain = cfg.contains("domain");
    BuiltModel src, tgt;
    std::vector<Vec> inputs;
    std::optional<ToyImageDomains> img_dom;
    DomainSpec img_spec;

    if (image_domain) {
        img_spec = domain_from_json(cfg.at("domain"), "config.domain");
        if (img_spec.kind != DomainKind::ToyImages)
            throw ValidationError("config",
                                  "config.domain: translate with a single domain expects toy-images");
        if (!cfg.contains("train"))
            throw ValidationError("config", "config.train: toy-image models must be trained");
        img_dom.emplace(make_toy_image_domains(img_spec));
        int n_train = cfg.at("train").value("samples", 2000);
        ToyImageDomains train_dom = make_toy_image_domains(img_spec);
        std::vector<Vec> data_a, data_b;
        for (int i = 0; i < n_train; ++i) {
            data_a.push_back(train_dom.sample_a().pix);
            data_b.push_back(train_dom.sample_b().pix);
        }
        TrainConfig tc = train_config_from_json(cfg.at("train"), seed);
        src = build_trained_model(data_a, sched, kind, tc);
        TrainConfig tc_b = tc;
        tc_b.seed = tc.seed + 1;
        tgt = build_trained_model(data_b, sched, kind, tc_b);
        for (int i = 0; i < runs; ++i) inputs.push_back(img_dom->sample_a().pix);
    } else {
        DomainSpec da = domain_from_json(need(cfg, "domain_a", "config"), "config.domain_a");
        DomainSpec db = domain_from_json(need(cfg, "domain_b", "config"), "config.domain_b");
        if (da.kind != DomainKind::GaussianMixtureDomain ||
            db.kind != DomainKind::GaussianMixtureDomain)
            throw ValidationError("config", "config.domain_a/b: expected gaussian-mixture domains");
        src = build_mixture_model(da, sched, kind);
        tgt = build_mixture_model(db, sched, kind);
        MixtureDomain dom = make_gaussian_mixture_domain(da);
        for (int i = 0; i < runs; ++i) inputs.push_back(dom.sampler.sample());
    }

    Rng root(seed, 1);
    int n_tasks = runs * static_cast<int>(t_es_list.size());
    std::vector<TranslationResult> results(static_cast<std::size_t>(n_tasks));
    parallel_for(n_tasks, threads, [&](int task) {
        int ti = task / runs;
        int run = task % runs;
        Rng rng = root.split(static_cast<std::uint64_t>(task));
        results[static_cast<std::size_t>(task)] =
            cycle_translate(*src.est, *tgt.est, *sched, inputs[static_cast<std::size_t>(run)],
                            t_es_list[static_cast<std::size_t>(ti)], kind, rng);
    });

    for (std::size_t ti = 0; ti < t_es_list.size(); ++ti) {
        double sum_l2 = 0.0, sum_ssim = 0.0;
        for (int run = 0; run < runs; ++run) {
            const auto& res = results[ti * static_cast<std::size_t>(runs) +
                                      static_cast<std::size_t>(run)];
            std::string id = "tes" + std::to_string(t_es_list[ti]) + "/run" + std::to_string(run);
            double l2 = norm2(res.output - res.source);
            rb.add(id, "l2_to_source", l2);
            sum_l2 += l2;
            if (image_domain) {
                ImageGrid a = ImageGrid::from_vec(res.source, img_spec.height, img_spec.width, 1,
                                                  img_spec.peak);
                Vec clipped = res.output;
                for (auto& v : clipped) v = std::clamp(v, 0.0, img_spec.peak);
                ImageGrid b = ImageGrid::from_vec(clipped, img_spec.height, img_spec.width, 1,
                                                  img_spec.peak);
                double sv = ssim(a, b);
                rb.add(id, "ssim_to_source", sv);
                rb.add(id, "psnr_to_source", psnr(a, b));
                sum_ssim += sv;
            }
        }
        std::string sid = "summary/tes" + std::to_string(t_es_list[ti]);
        rb.add(sid, "mean_l2_to_source", sum_l2 / runs);
        if (image_domain) rb.add(sid, "mean_ssim_to_source", sum_ssim / runs);
    }

    // Distance traces for the first runs of the first sweep point.
    for (int run = 0; run < std::min(runs, 3); ++run) {
        const auto& res = results[static_cast<std::size_t>(run)];
        Trace tr;
        tr.name = "distance_run" + std::to_string(run);
        tr.header = "level,distance";
        for (std::size_t j = 0; j < res.distances.size(); ++j)
            tr.lines.push_back(std::to_string(res.t_es - static_cast<int>(j)) + "," +
                               format_double(res.distances[j]));
        rb.traces.push_back(std::move(tr));
    }

    int dump = cfg.value("dump_samples", 0);
    if (image_domain && dump > 0) {
        for (int run = 0; run < std::min(runs, dump); ++run) {
            const auto& res = results[static_cast<std::size_t>(run)];
            rb.samples.push_back(ImageGrid::from_vec(res.source, img_spec.height, img_spec.width,
                                                     1, img_spec.peak));
            Vec clipped = res.output;
            for (auto& v : clipped) v = std::clamp(v, 0.0, img_spec.peak);
            rb.samples.push_back(ImageGrid::from_vec(clipped, img_spec.height, img_spec.width, 1,
                                                     img_spec.peak));
        }
    }
}

inline void run_sdedit(const json& cfg, std::uint64_t seed, int threads, ReportBuilder& rb) {
    auto sched = std::make_shared<const NoiseSchedule>(
        schedule_from_json(need(cfg, "schedule", "config")));
    StepKind kind = step_kind_from_json(need(cfg, "model", "config"), "config.model");
    DomainSpec domain = domain_from_json(need(cfg, "domain", "config"), "config.domain");
    if (domain.kind != DomainKind::GaussianMixtureDomain)
        throw ValidationError("config", "config.domain: sdedit runner expects gaussian-mixture");
    std::vector<int> t_sd_list = int_list(cfg, "t_sd", "config");
    int runs = need_int(cfg, "runs", "config");
    for (int t : t_sd_list)
        if (t < 0 || t > sched->steps())
            throw ValidationError("config", "config.t_sd: outside 0..T");

    BuiltModel model = build_mixture_model(domain, sched, kind);
    MixtureDomain dom = make_gaussian_mixture_domain(domain);
    std::vector<Vec> inputs;
    for (int i = 0; i < runs; ++i) inputs.push_back(dom.sampler.sample());

    Rng root(seed, 2);
    int n_tasks = runs * static_cast<int>(t_sd_list.size());
    std::vector<double> drift(static_cast<std::size_t>(n_tasks));
    parallel_for(n_tasks, threads, [&](int task) {
        int ti = task / runs;
        int run = task % runs;
        Rng rng = root.split(static_cast<std::uint64_t>(task));
        Vec out = sdedit_refine(*model.est, *sched, inputs[static_cast<std::size_t>(run)],
                                t_sd_list[static_cast<std::size_t>(ti)], {}, rng);
        drift[static_cast<std::size_t>(task)] = norm2(out - inputs[static_cast<std::size_t>(run)]);
    });
    for (std::size_t ti = 0; ti < t_sd_list.size(); ++ti) {
        double sum = 0.0;
        for (int run = 0; run < runs; ++run) {
            double d = drift[ti * static_cast<std::size_t>(runs) + static_cast<std::size_t>(run)];
            rb.add("tsd" + std::to_string(t_sd_list[ti]) + "/run" + std::to_string(run),
                   "l2_drift", d);
            sum += d;
        }
        rb.add("summary/tsd" + std::to_string(t_sd_list[ti]), "mean_l2_drift", sum / runs);
    }
}

inline void run_ddib(const json& cfg, std::uint64_t seed, int threads, ReportBuilder& rb) {
    auto sched = std::make_shared<const NoiseSchedule>(
        schedule_from_json(need(cfg, "schedule", "config")));
    DomainSpec da = domain_from_json(need(cfg, "domain_a", "config"), "config.domain_a");
    DomainSpec db = domain_from_json(need(cfg, "domain_b", "config"), "config.domain_b");
    if (da.kind != DomainKind::GaussianMixtureDomain ||
        db.kind != DomainKind::GaussianMixtureDomain)
        throw ValidationError("config", "config.domain_a/b: expected gaussian-mixture domains");
    int t_g = need_int(cfg, "t_g", "config");
    int runs = need_int(cfg, "runs", "config");

    BuiltModel src = build_mixture_model(da, sched, StepKind::ddim(0.0));
    BuiltModel tgt = build_mixture_model(db, sched, StepKind::ddim(0.0));
    MixtureDomain dom = make_gaussian_mixture_domain(da);
    std::vector<Vec> inputs;
    for (int i = 0; i < runs; ++i) inputs.push_back(dom.sampler.sample());

    std::vector<double> change(static_cast<std::size_t>(runs));
    parallel_for(runs, threads, [&](int i) {
        Vec out = ddib_translate(*src.est, *tgt.est, inputs[static_cast<std::size_t>(i)], t_g);
        change[static_cast<std::size_t>(i)] = norm2(out - inputs[static_cast<std::size_t>(i)]);
    });
    double sum = 0.0;
    for (int i = 0; i < runs; ++i) {
        rb.add("run" + std::to_string(i), "l2_change", change[static_cast<std::size_t>(i)]);
        sum += change[static_cast<std::size_t>(i)];
    }
    rb.add("summary", "mean_l2_change", sum / runs);
    (void)seed;
}

inline std::shared_ptr<const EnergyFunction> build_energy(const json& j, int dim,
                                                          const std::string& path) {
    std::string type = need(j, "type", path).get<std::string>();
    if (type == "quadratic") {
        Vec center = j.value("center", Vec(static_cast<std::size_t>(dim), 0.0));
        if (static_cast<int>(center.size()) != dim)
            throw ValidationError("config", path + ".center: dimension mismatch");
        return std::make_shared<QuadraticEnergy>(center, j.value("weight", 1.0));
    }
    if (type == "embedding-cosine") {
        int edim = j.value("embed_dim", 6);
        auto embed = std::make_shared<RandomFeatureMap>(dim, edim, j.value("embed_seed", 7ull));
        Vec ref;
        if (j.contains("reference")) {
            ref = j.at("reference").get<Vec>();
        } else {
            Rng r(j.value("reference_seed", 15ull), 0);
            ref = r.normal_vec(static_cast<std::size_t>(edim));
        }
        return std::make_shared<EmbeddingCosineEnergy>(embed, ref);
    }
    if (type == "augmented-cosine") {
        int edim = j.value("embed_dim", 6);
        auto embed = std::make_shared<RandomFeatureMap>(dim, edim, j.value("embed_seed", 7ull));
        Rng r(j.value("reference_seed", 15ull), 0);
        Vec ref = j.contains("reference") ? j.at("reference").get<Vec>()
                                          : r.normal_vec(static_cast<std::size_t>(edim));
        int L = j.value("augmentations", 4);
        if (L < 1) throw ValidationError("config", path + ".augmentations: must be >= 1");
        std::vector<AffineMap> augs;
        for (int l = 0; l < L; ++l)
            augs.push_back(AffineMap::random_jitter(dim, j.value("aug_scale", 0.05),
                                                    j.value("aug_seed", 3ull) + static_cast<std::uint64_t>(l)));
        return std::make_shared<AugmentedCosineEnergy>(embed, ref, augs);
    }
    if (type == "classifier") {
        int classes = j.value("classes", 2);
        int target = j.value("target", 0);
        auto cls = std::make_shared<SoftmaxLinearClassifier>(
            SoftmaxLinearClassifier::random(dim, classes, j.value("classifier_seed", 5ull)));
        return std::make_shared<ClassifierEnergy>(cls, target, j.value("e_max", 50.0));
    }
    throw ValidationError("config", path + ".type: unknown energy '" + type + "'");
}

struct BuiltGenerator {
    std::shared_ptr<const DifferentiableGenerator> gen;
    BuiltModel model;  // kept alive for chain generators
};

inline BuiltGenerator build_generator(const json& cfg, const json& j, const std::string& path) {
    std::string type = need(j, "type", path).get<std::string>();
    BuiltGenerator out;
    if (type == "identity") {
        int dim = need_int(j, "dim", path);
        if (dim < 1) throw ValidationError("config", path + ".dim: must be >= 1");
        out.gen = std::make_shared<IdentityGenerator>(dim);
        return out;
    }
    auto sched = std::make_shared<const NoiseSchedule>(
        schedule_from_json(need(cfg, "schedule", "config")));
    StepKind kind = step_kind_from_json(need(cfg, "model", "config"), "config.model");
    DomainSpec domain = domain_from_json(need(cfg, "domain", "config"), "config.domain");
    if (domain.kind != DomainKind::GaussianMixtureDomain)
        throw ValidationError("config", path + ": chain generators need a gaussian-mixture domain");
    out.model = build_mixture_model(domain, sched, kind);
    if (type == "stochastic") {
        // Full-latent guidance cost scales with T; the chain is capped at 10
        // steps (the latent z then has dimension d * 11).
        if (sched->steps() > 10)
            throw ValidationError("config",
                                  path + ": stochastic-latent guidance requires T <= 10");
        out.gen = std::make_shared<StochasticChainGenerator>(out.model.est);
        return out;
    }
    if (type == "deterministic") {
        if (kind.family != StepFamily::Ddim || kind.eta != 0.0)
            throw ValidationError("config", path + ": deterministic generator needs ddim eta=0");
        int t_g = j.value("t_g", sched->steps());
        out.gen = std::make_shared<DeterministicChainGenerator>(out.model.est, t_g);
        return out;
    }
    throw ValidationError("config", path + ".type: unknown generator '" + type + "'");
}

inline void run_guide(const json& cfg, std::uint64_t seed, int threads, ReportBuilder& rb) {
    const json& gj = need(cfg, "guidance", "config");
    std::vector<double> lambdas = num_list(gj, "lambda", "config.guidance");
    int chains = gj.value("chains", 256);
    if (chains < 1) throw ValidationError("config", "config.guidance.chains: must be >= 1");

    BuiltGenerator built = build_generator(cfg, need(cfg, "generator", "config"),
                                           "config.generator");
    auto energy = build_energy(need(cfg, "energy", "config"), built.gen->output_dim(),
                               "config.energy");

    GuidanceConfig gc;
    gc.n_steps = gj.value("n_steps", 200);
    gc.step_size = gj.value("step_size", 0.05);
    gc.guard_radius = gj.value("guard_radius", 1e4);
    gc.seed = seed;
    gc.validate();

    json per_lambda = json::array();
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        gc.lambda = lambdas[li];
        Rng root = Rng(seed, 3).split(li);
        std::vector<Vec> finals(static_cast<std::size_t>(chains));
        parallel_for(chains, threads, [&](int c) {
            Rng rng = root.split(static_cast<std::uint64_t>(c));
            finals[static_cast<std::size_t>(c)] = langevin_chain(*built.gen, *energy, gc, rng);
        });
        double sum = 0.0, sum2 = 0.0;
        json energies = json::array();
        for (const auto& z : finals) {
            double e = energy->value(built.gen->value(z));
            energies.push_back(e);
            sum += e;
            sum2 += e * e;
        }
        double mean = sum / chains;
        std::string id = "lambda" + format_double(gc.lambda);
        rb.add(id, "mean_energy", mean);
        rb.add(id, "var_energy", sum2 / chains - mean * mean);
        per_lambda.push_back(json{{"lambda", gc.lambda}, {"chain_energies", energies}});

        if (gj.value("oracle", false)) {
            Rng orac = Rng(seed, 4).split(li);
            std::int64_t budget = gj.value("oracle_budget", static_cast<std::int64_t>(10000000));
            int want = gj.value("oracle_samples", chains);
            auto samples = rejection_oracle(*built.gen, *energy, gc.lambda, orac, want, budget);
            std::vector<Vec> lx, ox;
            for (const auto& z : finals) lx.push_back(built.gen->value(z));
            for (const auto& z : samples) ox.push_back(built.gen->value(z));
            rb.add(id, "mmd2_langevin_vs_oracle", mmd2(lx, ox, gj.value("mmd_bandwidth", 1.0)));
        }
    }
    rb.extras["guide"] = std::move(per_lambda);
}

inline void run_bound_check(const json& cfg, std::uint64_t seed, int threads, ReportBuilder& rb) {
    auto sched = std::make_shared<const NoiseSchedule>(
        schedule_from_json(need(cfg, "schedule", "config")));
    StepKind kind = step_kind_from_json(need(cfg, "model", "config"), "config.model");
    DomainSpec domain = domain_from_json(need(cfg, "domain", "config"), "config.domain");
    if (domain.kind != DomainKind::GaussianMixtureDomain)
        throw ValidationError("config", "config.domain: bound-check expects gaussian-mixture");
    int t_es = need_int(cfg, "t_es", "config");
    int runs = need_int(cfg, "runs", "config");
    int probes = cfg.value("probes", 256);

    BuiltModel model = build_mixture_model(domain, sched, kind);
    auto labels = model.gm->labels();
    if (labels.size() != 2)
        throw ValidationError("config", "config.domain: bound-check needs exactly two labels");
    ConditionLabel ca(labels[0]), cb(labels[1]);

    ProbeRegion region = ProbeRegion::for_mixture(*model.gm);
    ProbeConfig pcfg;
    pcfg.n_probes = probes;
    Vec K(static_cast<std::size_t>(t_es)), S(static_cast<std::size_t>(t_es));
    Rng probe_rng(seed, 5);
    for (int t = 1; t <= t_es; ++t) {
        double ka = estimate_lipschitz(*model.est, t, ca, pcfg, region, probe_rng);
        double kb = estimate_lipschitz(*model.est, t, cb, pcfg, region, probe_rng);
        K[static_cast<std::size_t>(t - 1)] = std::max(ka, kb);
        S[static_cast<std::size_t>(t - 1)] =
            estimate_condition_gap(*model.est, t, ca, cb, pcfg, region, probe_rng);
    }

    MixtureDomain dom = make_gaussian_mixture_domain(domain);
    std::vector<Vec> inputs;
    for (int i = 0; i < runs; ++i) {
        // Sources come from the first label's sub-mixture.
        inputs.push_back(dom.sampler.sample(ca));
    }
    Rng root(seed, 6);
    std::vector<TranslationResult> results(static_cast<std::size_t>(runs));
    parallel_for(runs, threads, [&](int i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        results[static_cast<std::size_t>(i)] = cycle_translate(
            *model.est, *model.est, *sched, inputs[static_cast<std::size_t>(i)], t_es, kind, rng,
            ca, cb);
    });

    Vec max_realized(static_cast<std::size_t>(t_es) + 1, 0.0);
    int violations = 0;
    for (const auto& res : results) {
        BoundProfile prof = propagate_bound(K, S, res.distances);
        violations += static_cast<int>(prof.violated_levels.size());
        for (std::size_t j = 0; j < res.distances.size(); ++j)
            max_realized[j] = std::max(max_realized[j], res.distances[j]);
    }
    BoundProfile prof = propagate_bound(K, S);
    Trace tr;
    tr.name = "bound_profile";
    tr.header = "level,K,S,B,max_realized";
    for (int j = 0; j <= t_es; ++j) {
        int level = t_es - j;
        double kv = level >= 1 ? K[static_cast<std::size_t>(level - 1)] : 0.0;
        double sv = level >= 1 ? S[static_cast<std::size_t>(level - 1)] : 0.0;
        tr.lines.push_back(std::to_string(level) + "," + format_double(kv) + "," +
                           format_double(sv) + "," + format_double(prof.B[static_cast<std::size_t>(j)]) +
                           "," + format_double(max_realized[static_cast<std::size_t>(j)]));
        rb.add("level" + std::to_string(level), "bound_B", prof.B[static_cast<std::size_t>(j)]);
        rb.add("level" + std::to_string(level), "max_realized",
               max_realized[static_cast<std::size_t>(j)]);
    }
    rb.traces.push_back(std::move(tr));
    rb.add("summary", "bound_violations", violations);
}

inline void run_local_edit(const json& cfg, std::uint64_t seed, int threads, ReportBuilder& rb) {
    BuiltGenerator built = build_generator(cfg, need(cfg, "generator", "config"),
                                           "config.generator");
    const json& ej = need(cfg, "edit", "config");
    double r = ej.value("r", 1.0);
    double lambda_cls = ej.value("lambda_cls", 1.0);
    int n_base = ej.value("base_samples", 64);
    if (n_base < 1) throw ValidationError("config", "config.edit.base_samples: must be >= 1");

    int xdim = built.gen->output_dim();
    auto cls = std::make_shared<SoftmaxLinearClassifier>(SoftmaxLinearClassifier::random(
        xdim, ej.value("classes", 2), ej.value("classifier_seed", 5ull)));
    int target = ej.value("target", 0);
    ClassifierEnergy cls_e(cls, target);
    RandomFeatureMap embed(xdim, ej.value("embed_dim", 6), ej.value("embed_seed", 7ull));

    Rng rng(seed, 7);
    std::vector<Vec> base;
    for (int i = 0; i < n_base; ++i)
        base.push_back(rng.normal_vec(static_cast<std::size_t>(built.gen->latent_dim())));

    EditOptConfig oc;
    oc.steps = ej.value("steps", 150);
    oc.lr = ej.value("lr", 0.2);
    oc.seed = seed;
    EditObjective obj(*built.gen, cls_e, embed, lambda_cls, base);
    Rng dir_rng(seed, 8);
    Vec random_dir = dir_rng.normal_vec(static_cast<std::size_t>(built.gen->latent_dim()));
    random_dir = (r / norm2(random_dir)) * random_dir;
    double before = obj.value(random_dir);

    Vec n = optimize_edit_direction(*built.gen, cls_e, embed, r, lambda_cls, base, oc);
    double after = obj.value(n);
    double neg_log_p = 0.0;
    for (const auto& z : base) neg_log_p += cls_e.value(built.gen->value(z + n));
    neg_log_p /= n_base;

    rb.add("edit", "direction_norm", norm2(n));
    rb.add("edit", "objective_random_direction", before);
    rb.add("edit", "objective_optimized", after);
    rb.add("edit", "mean_neg_log_p_target", neg_log_p);
    rb.extras["edit_direction"] = n;
    (void)threads;
}

inline void run_metrics_selftest(const json&, std::uint64_t, int, ReportBuilder& rb) {
    ImageGrid a(2, 2, 1, 255.0), b(2, 2, 1, 255.0);
    for (auto& p : b.pix) p = 1.0;
    rb.add("psnr", "mse1_peak255_db", psnr(a, b));
    rb.add("psnr", "mse1_peak255_expected", 20.0 * std::log10(255.0));
    ImageGrid c(3, 3, 1, 1.0), d(3, 3, 1, 1.0);
    for (auto& p : d.pix) p = 0.1;
    rb.add("psnr", "mse0.01_peak1_db", psnr(c, d));
    rb.add("psnr", "identical_cap_db", psnr(c, c));
    Rng rng(3, 0);
    ImageGrid x(8, 8, 1, 1.0);
    for (auto& p : x.pix) p = rng.uniform();
    rb.add("ssim", "self_similarity", ssim(x, x));
    std::vector<Vec> X = {{0.0}}, Y = {{1.0}};
    rb.add("mmd2", "hand_case", mmd2(X, Y, 1.0));
    rb.add("mmd2", "hand_case_expected", 2.0 - 2.0 * std::exp(-0.5));
    Rng prj(7, 0);
    rb.add("sliced_w1", "unit_transport", sliced_w1(X, Y, 64, prj));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point: validate, run, write <outdir>/report.json, metrics.csv,
// traces/*.csv and optional samples.bin.
// ---------------------------------------------------------------------------

inline RunReport run_experiment(json config, const std::string& outdir_override = "",
                                std::optional<std::uint64_t> seed_override = std::nullopt,
                                bool quiet = true, bool write_files = true) {
    auto t0 = std::chrono::steady_clock::now();
    if (!config.is_object()) throw ValidationError("config", "top level must be a JSON object");
    std::string kind = detail::need(config, "kind", "config").get<std::string>();
    if (!config.contains("seed"))
        throw ValidationError("config", "config.seed: required (no ambient randomness)");
    if (seed_override) config["seed"] = *seed_override;
    std::uint64_t seed = config.at("seed").get<std::uint64_t>();
    if (!outdir_override.empty()) config["outdir"] = outdir_override;
    std::string outdir = config.value("outdir", std::string("out/") + kind);
    int threads = resolve_threads(config.value("threads", 0));

    detail::ReportBuilder rb;
    if (kind == "reconstruct") {
        detail::run_reconstruct(config, seed, threads, rb);
    } else if (kind == "translate") {
        detail::run_translate(config, seed, threads, rb);
    } else if (kind == "sdedit") {
        detail::run_sdedit(config, seed, threads, rb);
    } else if (kind == "ddib") {
        detail::run_ddib(config, seed, threads, rb);
    } else if (kind == "guide") {
        detail::run_guide(config, seed, threads, rb);
    } else if (kind == "bound-check") {
        detail::run_bound_check(config, seed, threads, rb);
    } else if (kind == "local-edit") {
        detail::run_local_edit(config, seed, threads, rb);
    } else if (kind == "metrics-selftest") {
        detail::run_metrics_selftest(config, seed, threads, rb);
    } else {
        throw ValidationError("config", "config.kind: unknown experiment kind '" + kind + "'");
    }

    RunReport out;
    out.rows = std::move(rb.rows);
    out.outdir = outdir;
    json rows = json::array();
    for (const auto& r : out.rows)
        rows.push_back(json{{"run", r.run}, {"metric", r.metric}, {"value", r.value}});
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.report = json{{"version", std::string("dpmlat ") + kVersion},
                      {"config_hash", fnv1a_hex(config.dump())},
                      {"config", config},
                      {"metrics", std::move(rows)},
                      {"extras", rb.extras},
                      {"timing", json{{"seconds", secs}}}};

    if (write_files) {
        namespace fs = std::filesystem;
        fs::create_directories(outdir);
        std::ofstream rf(outdir + "/report.json");
        rf << out.report.dump(2) << "\n";
        std::ofstream mf(outdir + "/metrics.csv");
        mf << out.metrics_csv();
        if (!rb.traces.empty()) {
            fs::create_directories(outdir + "/traces");
            for (const auto& tr : rb.traces) {
                std::ofstream tf(outdir + "/traces/" + tr.name + ".csv");
                tf << tr.header << "\n";
                for (const auto& line : tr.lines) tf << line << "\n";
            }
        }
        if (!rb.samples.empty())
            detail::write_samples_bin(outdir + "/samples.bin", rb.samples);
    }
    if (!quiet) {
        std::string msg = "wrote " + outdir + " (" + std::to_string(out.rows.size()) + " rows)\n";
        std::fputs(msg.c_str(), stdout);
    }
    return out;
}

inline RunReport run_experiment_file(const std::string& path, const std::string& outdir_override = "",
                                     std::optional<std::uint64_t> seed_override = std::nullopt,
                                     bool quiet = true) {
    std::ifstream f(path);
    if (!f) throw ValidationError("config", "cannot open config file " + path);
    json config;
    try {
        config = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ValidationError("config", std::string("parse error in ") + path + ": " + e.what());
    }
    return run_experiment(std::move(config), outdir_override, seed_override, quiet);
}

}  // namespace dpmlat
