#include "hypergrad/config.hpp"
#include "hypergrad/diagnostics.hpp"
#include "hypergrad/errors.hpp"
#include "hypergrad/log.hpp"
#include "hypergrad/metaloop.hpp"
#include "hypergrad/records.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fmt/core.h>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace hypergrad;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kDiverged = 3 };

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Config file or preset name")->required();
    cmd->add_option("--out", c.out, "Output directory")->required();
    cmd->add_option("--seed", c.seed, "Override the config seed");
    cmd->add_option("--workers", c.workers, "Worker threads (default: meta_batch)");
    cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

ExperimentConfig load(const Common& c) {
    ExperimentConfig cfg = load_config(c.config);
    if (c.seed) {
        cfg.meta.seed = *c.seed;
        cfg.meta.task.seed = *c.seed;
    }
    if (c.workers) cfg.meta.workers = *c.workers;
    return cfg;
}

// Refuses to clobber existing files unless --force.
fs::path claim(const Common& c, const fs::path& rel) {
    const fs::path p = fs::path(c.out) / rel;
    if (fs::exists(p) && !c.force) {
        throw ConfigError(fmt::format("{} exists (pass --force to overwrite)", p.string()));
    }
    fs::create_directories(p.parent_path());
    return p;
}

template <class Fn>
void write_file(const fs::path& p, Fn&& fn) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", p.string()));
    fn(out);
}

int cmd_run(const Common& c, bool skip_meta_test) {
    const ExperimentConfig cfg = load(c);
    const fs::path csv = claim(c, "run.csv");
    const fs::path summary = claim(c, "summary.json");

    const RunRecord record = meta_train(cfg.meta);
    std::optional<MetaTestResult> test;
    if (!record.diverged && !skip_meta_test && cfg.meta.meta_test_tasks > 0) {
        test = meta_test(cfg.meta, record.lambda, record.phi, cfg.meta.meta_test_tasks);
    }
    write_file(csv, [&](std::ostream& o) { write_run_csv(o, record); });
    write_file(summary, [&](std::ostream& o) { o << summary_json(cfg, record, test); });
    if (record.diverged) {
        fmt::print(stderr, "run diverged: {}\n", record.failure);
        return kDiverged;
    }
    fmt::print("{}: {} inner-optimizations, final val loss {:.6g}", record.config.strategy.label(),
               record.series.size(), record.series.back().val_loss);
    if (test) fmt::print(", meta-test loss {:.6g}", test->mean_loss);
    fmt::print("\n");
    return kOk;
}

int cmd_diagnose(const Common& c, const std::string& kind, const std::vector<double>& gammas) {
    ExperimentConfig cfg = load(c);
    if (!gammas.empty()) cfg.diagnostics.gammas = gammas;
    if (kind == "cossim") {
        const fs::path p = claim(c, "diagnostics/cossim.csv");
        const auto rows = cossim_series(cfg.meta, all_strategies(cfg.meta), cfg.diagnostics.probe_index);
        write_file(p, [&](std::ostream& o) { write_cossim_csv(o, rows); });
    } else if (kind == "estimator") {
        const fs::path scatter = claim(c, "diagnostics/estimator_scatter.csv");
        const fs::path history = claim(c, "diagnostics/estimator_history.csv");
        MetaConfig meta = cfg.meta;
        meta.strategy.kind = StrategyKind::HyperDistill;
        const RunRecord record = meta_train(meta);
        const EstimatorTables tables = estimator_diagnostics(record);
        write_file(scatter, [&](std::ostream& o) { write_estimator_scatter_csv(o, tables); });
        write_file(history, [&](std::ostream& o) { write_estimator_history_csv(o, tables); });
        if (record.diverged) {
            fmt::print(stderr, "run diverged: {}\n", record.failure);
            return kDiverged;
        }
    } else {
        const fs::path p = claim(c, "diagnostics/gamma_sweep.csv");
        const auto rows = gamma_sweep(cfg.meta, cfg.diagnostics.gammas);
        write_file(p, [&](std::ostream& o) { write_gamma_sweep_csv(o, rows); });
    }
    return kOk;
}

int cmd_bench(const Common& c, const std::vector<std::uint64_t>& seeds) {
    ExperimentConfig cfg = load(c);
    if (!seeds.empty()) cfg.diagnostics.bench_seeds = seeds;
    const fs::path p = claim(c, "diagnostics/bench.csv");
    const auto rows = bench(cfg.meta, all_strategies(cfg.meta), cfg.diagnostics.bench_seeds);
    write_file(p, [&](std::ostream& o) { write_bench_csv(o, rows); });
    for (const auto& r : rows) {
        fmt::print("{:<18} {:>12.6g} +/- {:<10.3g} jvps/inner-opt {:>8.2f}  {:.2f}s\n", r.strategy, r.metric_mean,
                   r.metric_ci, r.jvps_per_inner_opt, r.wall_seconds);
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    init_logging_from_env();

    CLI::App app{"Online hypergradient distillation experiments"};
    app.require_subcommand(1);

    Common run_opts, diag_opts, bench_opts;
    bool skip_meta_test = false;
    std::string kind;
    std::vector<double> gammas;
    std::vector<std::uint64_t> seeds;

    auto* run = app.add_subcommand("run", "Meta-train with the configured strategy");
    add_common(run, run_opts);
    run->add_flag("--skip-meta-test", skip_meta_test, "Do not evaluate on held-out tasks");

    auto* diagnose = app.add_subcommand("diagnose", "Write a diagnostics table");
    add_common(diagnose, diag_opts);
    diagnose->add_option("--kind", kind, "cossim, estimator or gamma-sweep")
        ->required()
        ->check(CLI::IsMember({"cossim", "estimator", "gamma-sweep"}));
    diagnose->add_option("--gammas", gammas, "Decay factors for gamma-sweep");

    auto* benchmark = app.add_subcommand("bench", "Compare every strategy over a seed set");
    add_common(benchmark, bench_opts);
    benchmark->add_option("--seeds", seeds, "Seeds (default: from config)");

    auto* presets = app.add_subcommand("presets", "List built-in presets, or print one");
    std::string preset;
    presets->add_option("name", preset, "Preset to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*run) return cmd_run(run_opts, skip_meta_test);
        if (*diagnose) return cmd_diagnose(diag_opts, kind, gammas);
        if (*benchmark) return cmd_bench(bench_opts, seeds);
        if (preset.empty()) {
            for (const auto& n : preset_names()) fmt::print("{}\n", n);
        } else {
            fmt::print("{}", preset_text(preset));
        }
        return kOk;
    } catch (const ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsage;
    } catch (const DivergenceError& e) {
        fmt::print(stderr, "diverged: {}\n", e.what());
        return kDiverged;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kFailure;
    }
}
