#include "hypergrad/diagnostics.hpp"

#include "hypergrad/errors.hpp"

#include <cmath>
#include <limits>
#include <spdlog/spdlog.h>

namespace hypergrad {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
enum : std::uint64_t { kProbeDistillTag = 21, kProbeEstimationTag = 22 };

double safe_cosine(const ParamVector& a, const ParamVector& b) {
    try {
        return cosine_similarity(a, b);
    } catch (const NormalizationError&) {
        return kNaN;
    }
}

double probe_theta(const MetaConfig& config, const ParamVector& lambda, const ParamVector& w0) {
    if (config.fixed_theta) return *config.fixed_theta;
    const TaskSampler sampler = TaskSampler(config.task).stream(kEstimationStream);
    const auto task = sampler.sample_task(0);
    Rng rng = make_rng(config.seed, {kProbeEstimationTag});
    try {
        return linear_estimation(*task, config.gamma, lambda, w0, batch_stream(sampler, *task),
                                 val_batch(sampler, *task), rng)
            .theta;
    } catch (const EstimationError& e) {
        spdlog::warn("cossim probe: estimation failed ({}), using theta = 1", e.what());
        return 1.0;
    }
}

} // namespace

std::vector<CossimRow> cossim_series(const InnerProblem& problem, const MetaConfig& config,
                                     const std::vector<Strategy>& strategies, const ParamVector& lambda,
                                     const ParamVector& w0) {
    validate(config);
    const TaskSampler sampler(config.task);
    const Trajectory traj = run_inner(problem, lambda, w0, batch_stream(sampler, problem), true);
    const Batch vb = val_batch(sampler, problem);
    const std::size_t T = traj.T();

    bool wants_distill = false;
    for (const auto& s : strategies) wants_distill |= s.kind == StrategyKind::HyperDistill;
    EstimatorState est;
    est.gamma = config.gamma;
    if (wants_distill && !config.fixed_pi) est.theta = probe_theta(config, lambda, w0);
    const DistillOptions options{config.fixed_pi};

    DistillState distill = make_distill_state(config.gamma, config.task.batch_size);
    Rng rng = make_rng(config.seed, {kProbeDistillTag});

    std::vector<CossimRow> rows;
    rows.reserve(T * (strategies.size() + 1));
    for (std::size_t t = 1; t <= T; ++t) {
        const ParamVector& w_prev = traj.weight_at(t - 1);
        const ParamVector& w_t = traj.weight_at(t);
        const Batch& batch = traj.batches[t - 1];
        distill = distill_forward_update(std::move(distill), w_prev, batch, rng);

        const Trajectory prefix = traj.prefix(t);
        const Hypergradient exact = rmd_exact(problem, prefix, lambda, vb);
        const ParamVector exact_total = exact.total();
        const ValGradients vg = val_grads(problem, w_t, lambda, vb);

        auto emit = [&](const std::string& label, const Hypergradient& hg) {
            rows.push_back({t, label, safe_cosine(hg.total(), exact_total), safe_cosine(hg.g_so, exact.g_so),
                            hg.jvp_count});
        };
        emit(kRmdLabel, exact);
        for (const auto& s : strategies) {
            switch (s.kind) {
            case StrategyKind::FO: emit(s.label(), fo_hypergradient(problem, w_t, lambda, vb)); break;
            case StrategyKind::OneStep: emit(s.label(), one_step(problem, w_prev, lambda, batch, vg)); break;
            case StrategyKind::DrMAD:
                emit(s.label(), drmad(problem, traj.w0, w_t, std::span(traj.batches).first(t), lambda, vb));
                break;
            case StrategyKind::NeumannIFT:
                emit(s.label(), neumann_ift(problem, w_t, lambda, batch, vg, s.neumann_N));
                break;
            case StrategyKind::HyperDistill:
                emit(s.label(), hyperdistill_hypergradient(problem, distill, est, lambda, vg, options));
                break;
            }
        }
    }
    return rows;
}

std::vector<CossimRow> cossim_series(const MetaConfig& config, const std::vector<Strategy>& strategies,
                                     std::size_t probe_index) {
    const TaskSampler probes = TaskSampler(config.task).stream(kProbeStream);
    const auto task = probes.sample_task(probe_index);
    return cossim_series(*task, config, strategies, task->initial_hyper(config.seed),
                         task->initial_weights(config.seed));
}

EstimatorTables estimator_diagnostics(const RunRecord& record) {
    EstimatorTables out;
    for (const auto& event : record.estimations) {
        EstimatorEventRow row;
        row.m = event.m;
        row.theta_after = event.theta_after;
        row.error = event.error;
        if (!event.error.empty()) {
            row.theta_fit = kNaN;
            out.history.push_back(row);
            continue;
        }
        row.theta_fit = event.state.theta;
        row.samples = event.state.samples.size();
        out.history.push_back(row);
        for (const auto& s : event.state.samples) {
            out.scatter.push_back({event.m, s.s, s.x, s.y, event.state.theta, s.y - event.state.theta * s.x});
        }
    }
    return out;
}

EstimatorTables estimator_diagnostics(const MetaConfig& config) {
    if (config.strategy.kind != StrategyKind::HyperDistill) {
        throw ConfigError("estimator diagnostics require the HyperDistill strategy");
    }
    if (config.fixed_theta || config.fixed_pi) {
        throw ConfigError("estimator diagnostics require estimation (fixed_theta and fixed_pi unset)");
    }
    const RunRecord record = meta_train(config);
    if (record.diverged) throw DivergenceError(record.failure, 0);
    return estimator_diagnostics(record);
}

std::vector<GammaSweepRow> gamma_sweep(const MetaConfig& config, const std::vector<double>& gammas) {
    std::vector<GammaSweepRow> rows;
    for (double gamma : gammas) {
        MetaConfig c = config;
        c.strategy.kind = StrategyKind::HyperDistill;
        c.gamma = gamma;
        c.fixed_pi.reset();
        c.fixed_theta = 1.0;
        const RunRecord record = meta_train(c);
        if (record.diverged) spdlog::warn("gamma sweep: gamma = {} diverged: {}", gamma, record.failure);
        for (const auto& r : record.series) rows.push_back({gamma, r.m, r.val_loss});
    }
    return rows;
}

std::pair<double, double> mean_ci95(const std::vector<double>& xs) {
    if (xs.empty()) return {kNaN, kNaN};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, kNaN};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    return {mean, 1.96 * sd / std::sqrt(static_cast<double>(xs.size()))};
}

std::vector<Strategy> all_strategies(const MetaConfig& config) {
    Strategy neumann{StrategyKind::NeumannIFT, config.strategy.neumann_N,
                     std::min(config.strategy.neumann_K, config.T())};
    return {{StrategyKind::FO}, {StrategyKind::OneStep}, {StrategyKind::DrMAD}, neumann,
            {StrategyKind::HyperDistill}};
}

std::vector<BenchRow> bench(const MetaConfig& config, const std::vector<Strategy>& strategies,
                            const std::vector<std::uint64_t>& seeds) {
    std::vector<BenchRow> rows;
    for (const auto& strategy : strategies) {
        BenchRow row;
        row.strategy = strategy.label();
        row.seeds = seeds.size();
        double jvps = 0.0, wall = 0.0;
        std::size_t inner_opts = 0;
        for (std::uint64_t seed : seeds) {
            MetaConfig c = config;
            c.strategy = strategy;
            c.seed = seed;
            c.task.seed = seed;
            const RunRecord record = meta_train(c);
            wall += record.wall_seconds;
            for (const auto& r : record.series) jvps += static_cast<double>(r.jvp_online + r.jvp_estimation);
            inner_opts += record.series.size();
            if (record.diverged) {
                ++row.diverged;
                continue;
            }
            try {
                row.per_seed.push_back(meta_test(c, record.lambda, record.phi, c.meta_test_tasks).mean_loss);
            } catch (const DivergenceError& e) {
                spdlog::warn("bench {} seed {}: meta-test diverged: {}", row.strategy, seed, e.what());
                ++row.diverged;
                continue;
            }
            spdlog::info("bench {} seed {}: meta-test loss {:.6g}", row.strategy, seed, row.per_seed.back());
        }
        std::tie(row.metric_mean, row.metric_ci) = mean_ci95(row.per_seed);
        row.jvps_per_inner_opt = inner_opts ? jvps / static_cast<double>(inner_opts) : 0.0;
        row.wall_seconds = seeds.empty() ? 0.0 : wall / static_cast<double>(seeds.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace hypergrad
