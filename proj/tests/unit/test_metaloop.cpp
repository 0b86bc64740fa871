#include "doctest.h"
#include "testkit.hpp"

#include "hypergrad/errors.hpp"
#include "hypergrad/metaloop.hpp"

#include <atomic>
#include <cmath>

using namespace hypergrad;

namespace {

MetaConfig quadratic_config(StrategyKind kind) {
    MetaConfig c;
    c.task.family = TaskFamily::Quadratic;
    c.task.seed = 3;
    c.task.batch_size = 2;
    c.task.T = 5;
    c.task.quadratic.dim = 3;
    c.task.quadratic.k = 1.0;
    c.task.quadratic.inner_lr = 0.3;
    c.task.quadratic.noise_scale = 0.2;
    c.task.quadratic.dataset_size = 8;
    c.M = 7;
    c.gamma = 0.7;
    c.estimation_period = 3;
    c.eta_hyper = 0.1;
    c.meta_batch = 2;
    c.strategy.kind = kind;
    c.strategy.neumann_N = 2;
    c.strategy.neumann_K = 3;
    c.meta_test_tasks = 6;
    c.seed = 9;
    return c;
}

void check_same(const RunRecord& a, const RunRecord& b) {
    REQUIRE(a.series.size() == b.series.size());
    for (std::size_t i = 0; i < a.series.size(); ++i) {
        CHECK(a.series[i].val_loss == b.series[i].val_loss);
        CHECK(a.series[i].hypergrad_norm == b.series[i].hypergrad_norm);
        CHECK(a.series[i].theta == b.series[i].theta);
    }
    CHECK(a.lambda == b.lambda);
    CHECK(a.phi == b.phi);
}

} // namespace

TEST_CASE("metaloop: names and labels") {
    for (auto k : {StrategyKind::FO, StrategyKind::OneStep, StrategyKind::DrMAD, StrategyKind::NeumannIFT,
                   StrategyKind::HyperDistill}) {
        CHECK(parse_strategy_kind(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_strategy_kind("RMD"), ConfigError);
    Strategy s;
    s.kind = StrategyKind::NeumannIFT;
    s.neumann_N = 5;
    s.neumann_K = 10;
    CHECK(s.label() == "NeumannIFT(5,10)");
    CHECK(parse_hyper_optimizer("adam") == HyperOptimizerKind::Adam);
    CHECK(parse_hyper_optimizer(to_string(HyperOptimizerKind::SgdMomentum)) == HyperOptimizerKind::SgdMomentum);
    CHECK_THROWS_AS(parse_hyper_optimizer("rmsprop"), ConfigError);
}

TEST_CASE("metaloop: validation") {
    const MetaConfig ok = quadratic_config(StrategyKind::HyperDistill);
    CHECK_NOTHROW(validate(ok));
    auto rejects = [&](auto mutate) {
        MetaConfig c = ok;
        mutate(c);
        CHECK_THROWS_AS(validate(c), ConfigError);
    };
    rejects([](MetaConfig& c) { c.M = 0; });
    rejects([](MetaConfig& c) { c.task.T = 0; });
    rejects([](MetaConfig& c) { c.gamma = 1.0; });
    rejects([](MetaConfig& c) { c.gamma = -0.1; });
    rejects([](MetaConfig& c) { c.estimation_period = 0; });
    rejects([](MetaConfig& c) { c.hyper_momentum = 1.0; });
    rejects([](MetaConfig& c) { c.meta_batch = 0; });
    rejects([](MetaConfig& c) { c.eta_hyper = NAN; });
    rejects([](MetaConfig& c) {
        c.strategy.kind = StrategyKind::NeumannIFT;
        c.strategy.neumann_K = 6;
    });
    try {
        MetaConfig c = ok;
        c.estimation_period = 0;
        validate(c);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("estimation_period") != std::string::npos);
    }
}

TEST_CASE("metaloop: hyper learning-rate schedule") {
    MetaConfig c = quadratic_config(StrategyKind::FO);
    c.M = 4;
    c.eta_hyper = 0.2;
    CHECK(hyper_lr_schedule(c, 1) == 0.2);
    CHECK(hyper_lr_schedule(c, 3) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(hyper_lr_schedule(c, 4) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK_THROWS_AS(hyper_lr_schedule(c, 0), ConfigError);
    CHECK_THROWS_AS(hyper_lr_schedule(c, 5), ConfigError);
    c.lr_decay = false;
    CHECK(hyper_lr_schedule(c, 4) == 0.2);
}

TEST_CASE("metaloop: reptile update") {
    const ParamVector phi{1.0, 2.0}, wT{3.0, -2.0};
    CHECK(reptile_update(phi, wT, 1.0) == wT);
    CHECK(reptile_update(phi, wT, 0.0) == phi);
    CHECK(reptile_update(phi, wT, 0.25) == ParamVector{1.5, 1.0});
    CHECK_THROWS_AS(reptile_update(phi, {1.0}, 0.5), DimensionError);
}

TEST_CASE("metaloop: hyper-optimizers") {
    Rng rng(1);
    MetaConfig c;
    c.hyper_momentum = 0.8;
    HyperOptimizer sgd(c, 3);
    ParamVector lambda{1.0, 1.0, 1.0};
    std::vector<double> ref{1.0, 1.0, 1.0}, buf{0.0, 0.0, 0.0};
    for (int step = 0; step < 20; ++step) {
        const ParamVector g = testkit::gaussian(rng, 3);
        sgd.step(lambda, g, 0.05);
        for (std::size_t i = 0; i < 3; ++i) {
            buf[i] = 0.8 * buf[i] + g[i];
            ref[i] -= 0.05 * buf[i];
        }
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(lambda[i] == doctest::Approx(ref[i]).epsilon(1e-14));

    c.hyper_optimizer = HyperOptimizerKind::Adam;
    HyperOptimizer adam(c, 2);
    ParamVector l2{0.0, 0.0};
    adam.step(l2, {4.0, -1e-3}, 0.01);
    // Bias correction makes the first step lr * sign(g).
    CHECK(l2[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(l2[1] == doctest::Approx(0.01).epsilon(1e-4));
    CHECK_THROWS_AS(adam.step(l2, {1.0}, 0.01), DimensionError);
}

TEST_CASE("metaloop: jvp budgets and estimation schedule") {
    MetaConfig c = quadratic_config(StrategyKind::FO);
    c.task.T = 20;
    CHECK(online_jvp_budget(c) == 0);
    c.strategy.kind = StrategyKind::OneStep;
    CHECK(online_jvp_budget(c) == 20);
    c.strategy.kind = StrategyKind::DrMAD;
    CHECK(online_jvp_budget(c) == 39);
    c.strategy.kind = StrategyKind::NeumannIFT;
    c.strategy.neumann_N = 4;
    c.strategy.neumann_K = 5;
    CHECK(online_jvp_budget(c) == 25);
    c.strategy.kind = StrategyKind::HyperDistill;
    CHECK(online_jvp_budget(c) == 20);
    CHECK(estimation_jvp_budget(c) == 59);
    c.estimation_period = 10;
    std::vector<std::size_t> events;
    for (std::size_t m = 1; m <= 30; ++m) {
        if (is_estimation_event(c, m)) events.push_back(m);
    }
    CHECK(events == std::vector<std::size_t>{1, 11, 21});
    CHECK_FALSE(is_estimation_event(c, 0));
}

TEST_CASE("metaloop: parallel_for") {
    for (std::size_t workers : {0u, 1u, 3u, 8u}) {
        std::vector<std::atomic<int>> hits(17);
        parallel_for(17, workers, [&](std::size_t i) { hits[i]++; });
        for (auto& h : hits) CHECK(h.load() == 1);
    }
    CHECK_THROWS_AS(parallel_for(5, 2, [](std::size_t i) {
                        if (i == 3) throw DomainError("boom");
                    }),
                    DomainError);
}

TEST_CASE("metaloop: run records follow the protocol") {
    for (auto kind : {StrategyKind::FO, StrategyKind::OneStep, StrategyKind::DrMAD, StrategyKind::NeumannIFT,
                      StrategyKind::HyperDistill}) {
        CAPTURE(to_string(kind));
        const MetaConfig c = quadratic_config(kind);
        const RunRecord r = meta_train(c);
        CHECK_FALSE(r.diverged);
        REQUIRE(r.series.size() == c.M);
        const std::size_t updates = kind == StrategyKind::DrMAD        ? 1
                                    : kind == StrategyKind::NeumannIFT ? c.strategy.neumann_K
                                                                       : c.T();
        for (std::size_t i = 0; i < c.M; ++i) {
            const InnerOptRecord& rec = r.series[i];
            CHECK(rec.m == i + 1);
            CHECK(rec.jvp_online == online_jvp_budget(c));
            CHECK(rec.lambda_updates == updates);
            CHECK(std::isfinite(rec.val_loss));
            CHECK(rec.gamma == c.gamma);
            const bool event = kind == StrategyKind::HyperDistill && is_estimation_event(c, rec.m);
            CHECK(rec.jvp_estimation == (event ? estimation_jvp_budget(c) : 0));
        }
        CHECK(r.estimations.size() == (kind == StrategyKind::HyperDistill ? 3u : 0u));
        check_same(r, meta_train(c));
    }
}

TEST_CASE("metaloop: estimation events carry their samples") {
    const MetaConfig c = quadratic_config(StrategyKind::HyperDistill);
    const RunRecord r = meta_train(c);
    REQUIRE(r.estimations.size() == 3);
    for (const EstimationEvent& e : r.estimations) {
        CHECK(e.error.empty());
        CHECK(e.state.samples.size() == c.T());
        CHECK(e.theta_after == e.state.theta);
        CHECK(r.series[e.m - 1].theta == e.theta_after);
    }
    // theta is held between events.
    CHECK(r.series[1].theta == r.series[0].theta);
    CHECK(r.series[2].theta == r.series[0].theta);

    MetaConfig ema = c;
    ema.theta_ema = 0.5;
    const RunRecord re = meta_train(ema);
    REQUIRE(re.estimations.size() == 3);
    CHECK(re.estimations[0].theta_after == re.estimations[0].state.theta);
    const double expect = 0.5 * re.estimations[0].theta_after + 0.5 * re.estimations[1].state.theta;
    CHECK(re.estimations[1].theta_after == doctest::Approx(expect).epsilon(1e-14));

    MetaConfig fixed = c;
    fixed.fixed_theta = 0.5;
    const RunRecord rf = meta_train(fixed);
    CHECK(rf.estimations.empty());
    for (const auto& rec : rf.series) {
        CHECK(rec.theta == 0.5);
        CHECK(rec.jvp_estimation == 0);
    }
}

TEST_CASE("metaloop: distillation at gamma 0 with unit theta tracks one-step") {
    MetaConfig hd = quadratic_config(StrategyKind::HyperDistill);
    hd.gamma = 0.0;
    hd.fixed_theta = 1.0;
    MetaConfig os = hd;
    os.strategy.kind = StrategyKind::OneStep;
    os.fixed_theta.reset();
    const RunRecord a = meta_train(hd), b = meta_train(os);
    CHECK(testkit::max_abs_diff(a.lambda, b.lambda) < 1e-10);
    CHECK(testkit::max_abs_diff(a.phi, b.phi) < 1e-10);
    for (std::size_t i = 0; i < a.series.size(); ++i) {
        CHECK(a.series[i].val_loss == doctest::Approx(b.series[i].val_loss).epsilon(1e-10));
    }
}

TEST_CASE("metaloop: results do not depend on the worker count") {
    MetaConfig c = quadratic_config(StrategyKind::HyperDistill);
    c.meta_batch = 4;
    c.workers = 1;
    const RunRecord serial = meta_train(c);
    c.workers = 4;
    check_same(serial, meta_train(c));
    const MetaTestResult t1 = meta_test(c, serial.lambda, serial.phi, 5);
    c.workers = 1;
    const MetaTestResult t2 = meta_test(c, serial.lambda, serial.phi, 5);
    CHECK(t1.task_losses == t2.task_losses);
    CHECK(t1.task_losses.size() == 5);
}

TEST_CASE("metaloop: meta-training improves the quadratic validation loss") {
    for (auto kind : {StrategyKind::OneStep, StrategyKind::HyperDistill}) {
        MetaConfig c = quadratic_config(kind);
        c.M = 20;
        c.estimation_period = 10;
        const RunRecord r = meta_train(c);
        const auto proto = TaskSampler(c.task).sample_task(0);
        const MetaTestResult before = meta_test(c, proto->initial_hyper(c.seed), proto->initial_weights(c.seed), 10);
        const MetaTestResult after = meta_test(c, r.lambda, r.phi, 10);
        CHECK(after.mean_loss < before.mean_loss);
        CHECK(r.series.back().val_loss < r.series.front().val_loss);
    }
}

TEST_CASE("metaloop: Reptile leaves phi alone at zero step") {
    MetaConfig c = quadratic_config(StrategyKind::FO);
    c.eta_reptile = 0.0;
    const RunRecord r = meta_train(c);
    const auto proto = TaskSampler(c.task).sample_task(0);
    CHECK(r.phi == proto->initial_weights(c.seed));
    // FO has no direct gradient on the quadratic: lambda never moves.
    CHECK(r.lambda == proto->initial_hyper(c.seed));
}

TEST_CASE("metaloop: divergence yields a partial record") {
    MetaConfig c = quadratic_config(StrategyKind::OneStep);
    c.task.quadratic.inner_lr = 1e10;
    c.task.T = 40;
    const RunRecord r = meta_train(c);
    CHECK(r.diverged);
    CHECK(r.series.empty());
    CHECK_FALSE(r.failure.empty());

    MetaConfig n = quadratic_config(StrategyKind::NeumannIFT);
    n.task.quadratic.inner_lr = 2.5;
    n.strategy.neumann_N = 20;
    const RunRecord rn = meta_train(n);
    CHECK(rn.diverged);
}

TEST_CASE("metaloop: entry points check the strategy") {
    const MetaConfig hd = quadratic_config(StrategyKind::HyperDistill);
    const MetaConfig fo = quadratic_config(StrategyKind::FO);
    CHECK_THROWS_AS(baseline_run(hd, TaskSampler(hd.task)), ConfigError);
    CHECK_THROWS_AS(hyperdistill_run(fo, TaskSampler(fo.task)), ConfigError);
}
