#include <benchmark/benchmark.h>

#include "hypergrad/distill.hpp"
#include "hypergrad/hypergrad.hpp"

#include <memory>

using namespace hypergrad;

namespace {

std::unique_ptr<SinusoidTask> sinusoid(std::size_t hidden, Backend backend) {
    SinusoidTask::Params p;
    p.hidden = hidden;
    p.inner_lr = 0.01;
    p.backend = backend;
    return std::make_unique<SinusoidTask>(p, 2.0, 0.5, 7);
}

struct Rollout {
    std::unique_ptr<SinusoidTask> owner;
    const SinusoidTask& task;
    ParamVector lambda;
    Trajectory traj;
    Batch val;
};

Rollout rollout(std::size_t hidden, std::size_t T, Backend backend = Backend::Analytic) {
    auto task = sinusoid(hidden, backend);
    ParamVector lambda = task->initial_hyper(0);
    std::vector<Batch> batches(T, Batch::range(task->dataset_size()));
    Trajectory traj = run_inner(*task, lambda, task->initial_weights(0), batches, true);
    Batch val = Batch::range(task->val_size());
    const SinusoidTask& ref = *task;
    return {std::move(task), ref, std::move(lambda), std::move(traj), std::move(val)};
}

} // namespace

static void BM_VjpA(benchmark::State& state) {
    const auto backend = state.range(1) ? Backend::FiniteDifference : Backend::Analytic;
    const auto r = rollout(state.range(0), 1, backend);
    const ParamVector alpha = val_grads(r.task, r.traj.wT, r.lambda, r.val).alpha;
    for (auto _ : state) {
        benchmark::DoNotOptimize(vjp_A(r.task, {alpha, r.traj.w0, r.lambda, r.traj.batches[0]}));
    }
}
BENCHMARK(BM_VjpA)->ArgsProduct({{20, 100}, {0, 1}});

static void BM_VjpB(benchmark::State& state) {
    const auto backend = state.range(1) ? Backend::FiniteDifference : Backend::Analytic;
    const auto r = rollout(state.range(0), 1, backend);
    const ParamVector alpha = val_grads(r.task, r.traj.wT, r.lambda, r.val).alpha;
    for (auto _ : state) {
        benchmark::DoNotOptimize(vjp_B(r.task, {alpha, r.traj.w0, r.lambda, r.traj.batches[0]}));
    }
}
BENCHMARK(BM_VjpB)->ArgsProduct({{20, 100}, {0, 1}});

static void BM_ReverseMode(benchmark::State& state) {
    const auto r = rollout(100, state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(rmd_exact(r.task, r.traj, r.lambda, r.val));
}
BENCHMARK(BM_ReverseMode)->Arg(10)->Arg(30);

static void BM_DrMAD(benchmark::State& state) {
    const auto r = rollout(100, state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(drmad(r.task, r.traj.w0, r.traj.wT, r.traj.batches, r.lambda, r.val));
    }
}
BENCHMARK(BM_DrMAD)->Arg(10)->Arg(30);

static void BM_OneStep(benchmark::State& state) {
    const auto r = rollout(100, 30);
    const ValGradients vg = val_grads(r.task, r.traj.wT, r.lambda, r.val);
    for (auto _ : state) {
        benchmark::DoNotOptimize(one_step(r.task, r.traj.weight_at(29), r.lambda, r.traj.batches[29], vg));
    }
}
BENCHMARK(BM_OneStep);

static void BM_NeumannIFT(benchmark::State& state) {
    const auto r = rollout(100, 30);
    const ValGradients vg = val_grads(r.task, r.traj.wT, r.lambda, r.val);
    for (auto _ : state) {
        benchmark::DoNotOptimize(neumann_ift(r.task, r.traj.wT, r.lambda, r.traj.batches[29], vg, state.range(0)));
    }
}
BENCHMARK(BM_NeumannIFT)->Arg(5)->Arg(20);

static void BM_HyperDistillStep(benchmark::State& state) {
    const auto r = rollout(100, 30);
    Rng rng(3);
    DistillState st = make_distill_state(0.99, r.task.dataset_size());
    for (std::size_t t = 0; t < 30; ++t) st = distill_forward_update(st, r.traj.weight_at(t), r.traj.batches[t], rng);
    EstimatorState est;
    est.gamma = 0.99;
    est.theta = 0.5;
    const ValGradients vg = val_grads(r.task, r.traj.wT, r.lambda, r.val);
    for (auto _ : state) benchmark::DoNotOptimize(hyperdistill_hypergradient(r.task, st, est, r.lambda, vg));
}
BENCHMARK(BM_HyperDistillStep);

static void BM_LinearEstimation(benchmark::State& state) {
    const auto r = rollout(100, state.range(0));
    for (auto _ : state) {
        Rng rng(5);
        benchmark::DoNotOptimize(
            linear_estimation(r.task, 0.99, r.lambda, r.traj.w0, r.traj.batches, r.val, rng));
    }
}
BENCHMARK(BM_LinearEstimation)->Arg(10)->Arg(30)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
