#pragma once

#include <charconv>
#include <string>

#include <json.hpp>

#include "dpmlat/common.hpp"
#include "dpmlat/data.hpp"
#include "dpmlat/denoiser.hpp"
#include "dpmlat/model.hpp"
#include "dpmlat/schedule.hpp"
#include "dpmlat/translation.hpp"

namespace dpmlat {

using nlohmann::json;

// Shortest-round-trip decimal text for a double (deterministic CSV cells).
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    static const char* hex = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[i] = hex[h & 0xF];
        h >>= 4;
    }
    return std::string(buf, 16);
}

// ---------------------------------------------------------------------------
// JSON layouts. Matrices are row-major arrays of 64-bit decimals; every field
// round-trips exactly, so serialized models reproduce runs bit for bit.
// ---------------------------------------------------------------------------

inline json to_json(const NoiseSchedule& s) {
    return json{{"T", s.steps()}, {"beta_start", s.beta_start()}, {"beta_end", s.beta_end()}};
}

inline NoiseSchedule schedule_from_json(const json& j) {
    if (!j.contains("T") || !j.contains("beta_start") || !j.contains("beta_end"))
        throw ValidationError("config", "schedule needs T, beta_start, beta_end");
    return linear_schedule(j.at("beta_start").get<double>(), j.at("beta_end").get<double>(),
                           j.at("T").get<int>());
}

inline json to_json(const GaussianMixture& gm) {
    json comps = json::array();
    for (const auto& c : gm.components) {
        json jc{{"weight", c.weight}, {"mean", c.mean}, {"var", c.var}};
        if (c.label >= 0) jc["label"] = c.label;
        comps.push_back(std::move(jc));
    }
    return json{{"components", std::move(comps)}};
}

inline GaussianMixture mixture_from_json(const json& j) {
    GaussianMixture gm;
    for (const auto& jc : j.at("components")) {
        GaussianMixture::Component c;
        c.weight = jc.at("weight").get<double>();
        c.mean = jc.at("mean").get<Vec>();
        c.var = jc.at("var").get<Vec>();
        c.label = jc.value("label", -1);
        gm.components.push_back(std::move(c));
    }
    gm.validate();
    return gm;
}

inline json to_json(const TinyDenoiser& d) {
    return json{{"data_dim", d.data_dim}, {"hidden1", d.hidden1},   {"hidden2", d.hidden2},
                {"steps", d.steps},       {"n_labels", d.n_labels}, {"params", d.params}};
}

inline TinyDenoiser denoiser_from_json(const json& j) {
    TinyDenoiser d(j.at("data_dim").get<int>(), j.at("hidden1").get<int>(),
                   j.at("hidden2").get<int>(), j.at("steps").get<int>(),
                   j.value("n_labels", 0));
    Vec params = j.at("params").get<Vec>();
    if (params.size() != d.param_count())
        throw ValidationError("config", "denoiser parameter count mismatch");
    d.params = std::move(params);
    return d;
}

inline json to_json(const DomainSpec& s) {
    if (s.kind == DomainKind::GaussianMixtureDomain) {
        GaussianMixture gm{s.components};
        json j = to_json(gm);
        j["kind"] = "gaussian-mixture";
        j["seed"] = s.seed;
        return j;
    }
    return json{{"kind", "toy-images"}, {"seed", s.seed},     {"height", s.height},
                {"width", s.width},     {"peak", s.peak},     {"jitter", s.jitter},
                {"radius", s.radius},   {"bg", {s.bg_lo, s.bg_hi}}, {"fg", {s.fg_lo, s.fg_hi}}};
}

inline DomainSpec domain_from_json(const json& j, const std::string& path) {
    if (!j.contains("kind"))
        throw ValidationError("config", path + ": domain needs a kind");
    DomainSpec spec;
    std::string kind = j.at("kind").get<std::string>();
    spec.seed = j.value("seed", 0ull);
    if (kind == "gaussian-mixture") {
        spec.kind = DomainKind::GaussianMixtureDomain;
        if (!j.contains("components"))
            throw ValidationError("config", path + ": gaussian-mixture needs components");
        spec.components = mixture_from_json(j).components;
    } else if (kind == "toy-images") {
        spec.kind = DomainKind::ToyImages;
        spec.height = j.value("height", 16);
        spec.width = j.value("width", 16);
        spec.peak = j.value("peak", 1.0);
        spec.jitter = j.value("jitter", 3);
        spec.radius = j.value("radius", 3.5);
        if (j.contains("bg")) {
            spec.bg_lo = j.at("bg").at(0).get<double>();
            spec.bg_hi = j.at("bg").at(1).get<double>();
        }
        if (j.contains("fg")) {
            spec.fg_lo = j.at("fg").at(0).get<double>();
            spec.fg_hi = j.at("fg").at(1).get<double>();
        }
    } else {
        throw ValidationError("config", path + ": unknown domain kind '" + kind + "'");
    }
    try {
        spec.validate();
    } catch (const Error& e) {
        throw ValidationError("config", path + ": " + e.what());
    }
    return spec;
}

inline json to_json(const TranslationResult& r) {
    return json{{"source", r.source},       {"output", r.output}, {"t_es", r.t_es},
                {"distances", r.distances}, {"seed", r.seed}};
}

inline json to_json(const BoundProfile& p) {
    return json{{"K", p.K}, {"S", p.S}, {"B", p.B}, {"violated_levels", p.violated_levels}};
}

inline StepKind step_kind_from_json(const json& j, const std::string& path) {
    std::string family = j.value("family", "ddpm-opt2");
    try {
        if (family == "ddpm-opt1") return StepKind::ddpm_opt1();
        if (family == "ddpm-opt2") return StepKind::ddpm_opt2();
        if (family == "ddim") return StepKind::ddim(j.value("eta", 0.1));
    } catch (const Error& e) {
        throw ValidationError("config", path + ": " + e.what());
    }
    throw ValidationError("config", path + ": unknown model family '" + family + "'");
}

}  // namespace dpmlat
