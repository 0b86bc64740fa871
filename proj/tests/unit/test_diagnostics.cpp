#include "doctest.h"
#include "testkit.hpp"

#include "hypergrad/diagnostics.hpp"
#include "hypergrad/errors.hpp"

#include <cmath>
#include <map>

using namespace hypergrad;

namespace {

MetaConfig quadratic_config(double noise = 0.3) {
    MetaConfig c;
    c.task.family = TaskFamily::Quadratic;
    c.task.seed = 1;
    c.task.batch_size = 2;
    c.task.T = 8;
    c.task.quadratic.dim = 4;
    c.task.quadratic.inner_lr = 0.25;
    c.task.quadratic.noise_scale = noise;
    c.task.quadratic.dataset_size = 8;
    c.M = 6;
    c.gamma = 0.75; // 1 - eta k
    c.estimation_period = 2;
    c.eta_hyper = 0.1;
    c.meta_batch = 2;
    c.strategy.neumann_N = 3;
    c.strategy.neumann_K = 4;
    c.meta_test_tasks = 4;
    c.seed = 2;
    return c;
}

MetaConfig sinusoid_config() {
    MetaConfig c;
    c.task.family = TaskFamily::Sinusoid;
    c.task.seed = 4;
    c.task.batch_size = 5;
    c.task.T = 10;
    c.task.sinusoid.hidden = 20;
    c.task.sinusoid.inner_lr = 0.01;
    c.task.sinusoid.val_points = 40;
    c.task.sinusoid.backend = Backend::Analytic;
    c.M = 21;
    c.gamma = 0.9;
    c.estimation_period = 2;
    c.eta_hyper = 1e-4;
    c.hyper_optimizer = HyperOptimizerKind::Adam;
    c.meta_batch = 2;
    c.strategy.kind = StrategyKind::HyperDistill;
    c.seed = 6;
    return c;
}

std::size_t expected_jvps(const Strategy& s, std::size_t t) {
    switch (s.kind) {
    case StrategyKind::FO: return 0;
    case StrategyKind::OneStep: return 1;
    case StrategyKind::DrMAD: return 2 * t - 1;
    case StrategyKind::NeumannIFT: return s.neumann_N + 1;
    case StrategyKind::HyperDistill: return 1;
    }
    return 0;
}

} // namespace

TEST_CASE("diagnostics: cosine series shape, range and accounting") {
    const MetaConfig c = quadratic_config();
    const std::vector<Strategy> strategies = all_strategies(c);
    const std::vector<CossimRow> rows = cossim_series(c, strategies);
    REQUIRE(rows.size() == c.T() * (strategies.size() + 1));
    std::size_t i = 0;
    for (std::size_t t = 1; t <= c.T(); ++t) {
        CHECK(rows[i].strategy == kRmdLabel);
        CHECK(rows[i].cos_total == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rows[i].jvp_count == 2 * t - 1);
        ++i;
        for (const Strategy& s : strategies) {
            const CossimRow& r = rows[i++];
            CHECK(r.t == t);
            CHECK(r.strategy == s.label());
            CHECK(r.jvp_count == expected_jvps(s, t));
            if (!std::isnan(r.cos_total)) {
                CHECK(r.cos_total >= -1.0);
                CHECK(r.cos_total <= 1.0);
            }
        }
    }
    // FO has neither a direct nor a second-order term on the quadratic.
    for (const auto& r : rows) {
        if (r.strategy == "FO") CHECK(std::isnan(r.cos_so));
    }
}

TEST_CASE("diagnostics: isotropic quadratic makes the decayed sum exact") {
    // B is the constant eta*k*I here, so every second-order estimate built
    // from alpha_t B is parallel to the exact one.
    const MetaConfig c = quadratic_config(0.0);
    const auto task = TaskSampler(c.task).stream(kProbeStream).sample_task(0);
    const ParamVector lambda = task->initial_hyper(c.seed), w0 = task->initial_weights(c.seed);
    const TaskSampler sampler(c.task);
    const Trajectory traj = run_inner(*task, lambda, w0, batch_stream(sampler, *task), true);
    const Batch vb = val_batch(sampler, *task);
    for (std::size_t t = 1; t <= traj.T(); ++t) {
        const Trajectory pre = traj.prefix(t);
        const ParamVector exact = rmd_exact(*task, pre, lambda, vb).g_so;
        const ParamVector geo = so_geometric_reference(*task, pre, lambda, vb, 1.0 - 0.25);
        CHECK(testkit::max_abs_diff(geo, exact) < 1e-12);
    }
    for (const auto& r : cossim_series(c, {{StrategyKind::OneStep}, {StrategyKind::HyperDistill}})) {
        CHECK(r.cos_so == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(r.cos_so <= 1.0 + 1e-15);
    }
}

TEST_CASE("diagnostics: HyperDistill beats one-step on the sinusoid probe") {
    MetaConfig c = sinusoid_config();
    c.task.T = 30;
    c.task.sinusoid.hidden = 40;
    double hd = 0.0, os = 0.0;
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        c.seed = c.task.seed = seed;
        std::map<std::string, double> tail;
        for (const auto& r : cossim_series(c, {{StrategyKind::OneStep}, {StrategyKind::HyperDistill}})) {
            if (r.t >= c.T() / 2) tail[r.strategy] += r.cos_total;
        }
        hd += tail["HyperDistill"];
        os += tail["OneStep"];
        wins += tail["HyperDistill"] > tail["OneStep"];
    }
    CHECK(hd > os);
    CHECK(wins >= 2);
}

TEST_CASE("diagnostics: estimator tables") {
    SUBCASE("quadratic points are colinear") {
        MetaConfig c = quadratic_config(0.0);
        c.strategy.kind = StrategyKind::HyperDistill;
        const EstimatorTables t = estimator_diagnostics(c);
        CHECK(t.history.size() == 3);
        CHECK(t.scatter.size() == 3 * c.T());
        for (const auto& row : t.scatter) {
            CHECK(std::abs(row.residual) < 1e-8);
            CHECK(row.residual == row.y - row.theta_fit * row.x);
        }
        for (const auto& h : t.history) {
            CHECK(h.samples == c.T());
            CHECK(h.error.empty());
        }
    }
    SUBCASE("failed estimations become rows") {
        RunRecord r;
        EstimationEvent ok;
        ok.m = 1;
        ok.state.theta = 2.0;
        ok.state.samples = {{1, 1.0, 2.5}, {2, 2.0, 3.5}};
        ok.theta_after = 2.0;
        EstimationEvent bad;
        bad.m = 3;
        bad.error = "fit_theta: x is identically zero";
        bad.theta_after = 2.0;
        r.estimations = {ok, bad};
        const EstimatorTables t = estimator_diagnostics(r);
        REQUIRE(t.history.size() == 2);
        CHECK(std::isnan(t.history[1].theta_fit));
        CHECK(t.history[1].error == bad.error);
        CHECK(t.history[1].theta_after == 2.0);
        REQUIRE(t.scatter.size() == 2);
        CHECK(t.scatter[0].residual == 0.5);
        CHECK(t.scatter[1].residual == -0.5);
    }
    SUBCASE("configs without estimation are rejected") {
        MetaConfig c = quadratic_config();
        c.strategy.kind = StrategyKind::OneStep;
        CHECK_THROWS_AS(estimator_diagnostics(c), ConfigError);
        c.strategy.kind = StrategyKind::HyperDistill;
        c.fixed_pi = 1.0;
        CHECK_THROWS_AS(estimator_diagnostics(c), ConfigError);
    }
}

TEST_CASE("diagnostics: theta stays positive on the sinusoid") {
    const EstimatorTables t = estimator_diagnostics(sinusoid_config());
    REQUIRE(t.history.size() == 11);
    std::size_t positive = 0;
    for (std::size_t i = 1; i < t.history.size(); ++i) positive += t.history[i].theta_fit > 0.0;
    CHECK(double(positive) >= 0.9 * double(t.history.size() - 1));
}

TEST_CASE("diagnostics: gamma sweep") {
    // One shared optimum and plain SGD on lambda, so the terminal loss
    // reflects hypergradient quality rather than task spread.
    MetaConfig c = quadratic_config();
    c.M = 12;
    c.task.quadratic_target_spread = 0.0;
    c.hyper_momentum = 0.0;
    c.eta_hyper = 0.05;
    const std::vector<GammaSweepRow> rows = gamma_sweep(c, {0.0, 0.5, 0.75});
    REQUIRE(rows.size() == 3 * c.M);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].m == i % c.M + 1);

    MetaConfig os = c;
    os.strategy.kind = StrategyKind::OneStep;
    const RunRecord one = meta_train(os);
    for (std::size_t i = 0; i < c.M; ++i) {
        CHECK(rows[i].gamma == 0.0);
        CHECK(rows[i].val_loss == doctest::Approx(one.series[i].val_loss).epsilon(1e-10));
    }
    // gamma = 1 - eta k recovers the exact second-order term.
    CHECK(rows[3 * c.M - 1].val_loss <= rows[c.M - 1].val_loss);
}

TEST_CASE("diagnostics: diagnostics leave later runs untouched") {
    MetaConfig c = quadratic_config();
    c.strategy.kind = StrategyKind::HyperDistill;
    const RunRecord before = meta_train(c);
    (void)cossim_series(c, all_strategies(c));
    (void)estimator_diagnostics(c);
    (void)gamma_sweep(c, {0.0});
    const RunRecord after = meta_train(c);
    REQUIRE(before.series.size() == after.series.size());
    for (std::size_t i = 0; i < before.series.size(); ++i) CHECK(before.series[i].val_loss == after.series[i].val_loss);
    CHECK(before.lambda == after.lambda);
}

TEST_CASE("diagnostics: confidence intervals") {
    const auto [m, ci] = mean_ci95({1.0, 2.0, 3.0, 4.0, 5.0});
    CHECK(m == 3.0);
    // sd = sqrt(2.5)
    CHECK(ci == doctest::Approx(1.96 * std::sqrt(2.5) / std::sqrt(5.0)).epsilon(1e-15));
    CHECK(std::isnan(mean_ci95({}).first));
    CHECK(std::isnan(mean_ci95({2.0}).second));
}

TEST_CASE("diagnostics: bench table") {
    MetaConfig c = quadratic_config();
    c.M = 3;
    const std::vector<Strategy> strategies = all_strategies(c);
    CHECK(strategies.size() == 5);
    const std::vector<BenchRow> rows = bench(c, strategies, {0, 1, 2});
    REQUIRE(rows.size() == 5);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        MetaConfig s = c;
        s.strategy = strategies[i];
        CHECK(rows[i].strategy == strategies[i].label());
        CHECK(rows[i].seeds == 3);
        CHECK(rows[i].diverged == 0);
        CHECK(rows[i].per_seed.size() == 3);
        const auto [m, ci] = mean_ci95(rows[i].per_seed);
        CHECK(rows[i].metric_mean == m);
        CHECK(rows[i].metric_ci == ci);
        double expect = double(online_jvp_budget(s));
        if (strategies[i].kind == StrategyKind::HyperDistill) {
            // Events at m = 1 and 3 of 3.
            expect += 2.0 * double(estimation_jvp_budget(s)) / 3.0;
        }
        CHECK(rows[i].jvps_per_inner_opt == doctest::Approx(expect).epsilon(1e-12));
    }
    MetaConfig t100 = c;
    t100.task.T = 100;
    t100.strategy.kind = StrategyKind::OneStep;
    CHECK(online_jvp_budget(t100) == 100);
}
