// dpmlat: experiment runner for the Gaussian-latent diffusion toolkit.
//
//   dpmlat run <config.json> [--outdir DIR] [--seed-override N] [--quiet]
//   dpmlat selftest
//
// Exit codes: 0 success, 1 selftest failure, 2 config validation error,
// 3 numerical failure.

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dpmlat/experiment.hpp"
#include "dpmlat/selftest.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Gaussian-latent diffusion toolkit"};
    app.require_subcommand(1);

    std::string config_path, outdir;
    std::optional<std::uint64_t> seed_override;
    std::uint64_t seed_value = 0;
    bool quiet = false;

    CLI::App* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--outdir", outdir, "output directory (overrides the config)");
    CLI::Option* seed_opt =
        run->add_option("--seed-override", seed_value, "replace the config seed");
    run->add_flag("--quiet", quiet, "suppress progress output");

    CLI::App* self = app.add_subcommand("selftest", "run the built-in smoke suite");
    self->add_flag("--quiet", quiet, "only print the final summary");

    CLI11_PARSE(app, argc, argv);

    if (self->parsed()) {
        dpmlat::SelftestResult res = dpmlat::selftest();
        for (const auto& m : res.modules) {
            std::printf("%-12s %3d passed %3d failed\n", m.module.c_str(), m.passed, m.failed);
            if (!quiet)
                for (const auto& f : m.failures) std::printf("  FAILED: %s\n", f.c_str());
        }
        std::printf("selftest: %d checks, %s\n", res.total_passed(),
                    res.ok() ? "all passed" : "FAILURES");
        return res.ok() ? 0 : 1;
    }

    try {
        if (seed_opt->count() > 0) seed_override = seed_value;
        dpmlat::RunReport report =
            dpmlat::run_experiment_file(config_path, outdir, seed_override, quiet);
        if (!quiet)
            std::printf("report: %s/report.json (%zu metric rows)\n", report.outdir.c_str(),
                        report.rows.size());
        return 0;
    } catch (const dpmlat::ValidationError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const dpmlat::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
