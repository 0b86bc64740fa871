#include "hypergrad/metaloop.hpp"

#include "hypergrad/errors.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <fmt/format.h>
#include <mutex>
#include <spdlog/spdlog.h>
#include <thread>

namespace hypergrad {

std::string_view to_string(StrategyKind k) {
    switch (k) {
    case StrategyKind::FO: return "FO";
    case StrategyKind::OneStep: return "OneStep";
    case StrategyKind::DrMAD: return "DrMAD";
    case StrategyKind::NeumannIFT: return "NeumannIFT";
    case StrategyKind::HyperDistill: return "HyperDistill";
    }
    return "unknown";
}

StrategyKind parse_strategy_kind(std::string_view name) {
    for (auto k : {StrategyKind::FO, StrategyKind::OneStep, StrategyKind::DrMAD, StrategyKind::NeumannIFT,
                   StrategyKind::HyperDistill}) {
        if (name == to_string(k)) return k;
    }
    throw ConfigError(fmt::format("unknown strategy '{}'", name));
}

std::string Strategy::label() const {
    if (kind == StrategyKind::NeumannIFT) return fmt::format("NeumannIFT({},{})", neumann_N, neumann_K);
    return std::string(to_string(kind));
}

std::string_view to_string(HyperOptimizerKind k) { return k == HyperOptimizerKind::Adam ? "adam" : "sgd_momentum"; }

HyperOptimizerKind parse_hyper_optimizer(std::string_view name) {
    if (name == "sgd_momentum") return HyperOptimizerKind::SgdMomentum;
    if (name == "adam") return HyperOptimizerKind::Adam;
    throw ConfigError(fmt::format("unknown hyper_optimizer '{}'", name));
}

void validate(const MetaConfig& c) {
    auto fail = [](std::string_view field, std::string_view why) {
        throw ConfigError(fmt::format("{}: {}", field, why));
    };
    if (c.M == 0) fail("M", "must be positive");
    if (c.T() == 0) fail("T", "must be positive");
    if (c.task.batch_size == 0) fail("batch_size", "must be positive");
    if (!(c.gamma >= 0.0 && c.gamma < 1.0)) fail("gamma", "must lie in [0, 1)");
    if (c.estimation_period == 0) fail("estimation_period", "must be at least 1");
    if (!(c.eta_hyper >= 0.0) || !std::isfinite(c.eta_hyper)) fail("eta_hyper", "must be finite and nonnegative");
    if (!std::isfinite(c.eta_reptile)) fail("eta_reptile", "must be finite");
    if (!(c.hyper_momentum >= 0.0 && c.hyper_momentum < 1.0)) fail("hyper_momentum", "must lie in [0, 1)");
    if (c.meta_batch == 0) fail("meta_batch", "must be positive");
    if (!(c.theta_ema >= 0.0 && c.theta_ema < 1.0)) fail("theta_ema", "must lie in [0, 1)");
    if (c.fixed_pi && !std::isfinite(*c.fixed_pi)) fail("fixed_pi", "must be finite");
    if (c.fixed_theta && !std::isfinite(*c.fixed_theta)) fail("fixed_theta", "must be finite");
    if (c.strategy.kind == StrategyKind::NeumannIFT && (c.strategy.neumann_K == 0 || c.strategy.neumann_K > c.T())) {
        fail("neumann.K", "must lie in [1, T]");
    }
}

double hyper_lr_schedule(const MetaConfig& config, std::size_t m) {
    if (m < 1 || m > config.M) throw ConfigError(fmt::format("hyper_lr_schedule: m = {} outside [1, {}]", m, config.M));
    if (!config.lr_decay) return config.eta_hyper;
    return config.eta_hyper * (1.0 - static_cast<double>(m - 1) / static_cast<double>(config.M));
}

ParamVector reptile_update(const ParamVector& phi, const ParamVector& wT, double eta) {
    require_same_size(phi, wT, "reptile_update");
    ParamVector out = phi;
    out.axpy(-eta, phi - wT);
    return out;
}

HyperOptimizer::HyperOptimizer(const MetaConfig& config, std::size_t dim)
    : kind_(config.hyper_optimizer),
      momentum_(config.hyper_momentum),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps),
      m1_(dim),
      m2_(dim) {}

void HyperOptimizer::step(ParamVector& lambda, const ParamVector& grad, double lr) {
    require_same_size(lambda, grad, "HyperOptimizer::step");
    ++steps_;
    if (kind_ == HyperOptimizerKind::SgdMomentum) {
        m1_ *= momentum_;
        m1_ += grad;
        lambda.axpy(-lr, m1_);
        return;
    }
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        m1_[i] = beta1_ * m1_[i] + (1.0 - beta1_) * grad[i];
        m2_[i] = beta2_ * m2_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        lambda[i] -= lr * (m1_[i] / c1) / (std::sqrt(m2_[i] / c2) + eps_);
    }
    lambda.check_finite("HyperOptimizer::step");
}

std::size_t online_jvp_budget(const MetaConfig& c) {
    const std::size_t T = c.T();
    switch (c.strategy.kind) {
    case StrategyKind::FO: return 0;
    case StrategyKind::OneStep: return T;
    case StrategyKind::DrMAD: return 2 * T - 1;
    case StrategyKind::NeumannIFT: return (c.strategy.neumann_N + 1) * c.strategy.neumann_K;
    case StrategyKind::HyperDistill: return T;
    }
    return 0;
}

std::size_t estimation_jvp_budget(const MetaConfig& c) { return 3 * c.T() - 1; }

bool is_estimation_event(const MetaConfig& c, std::size_t m) {
    return m >= 1 && (m - 1) % c.estimation_period == 0;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = std::min(workers, n);
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t k = 0; k < workers; ++k) {
            pool.emplace_back([&, k] {
                try {
                    for (std::size_t i = k; i < n; i += workers) fn(i);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

namespace {

enum : std::uint64_t { kDistillRngTag = 11, kEstimationRngTag = 12 };

bool online_at(const Strategy& s, std::size_t t, std::size_t T) {
    switch (s.kind) {
    case StrategyKind::DrMAD: return false;
    case StrategyKind::NeumannIFT: return t + s.neumann_K > T;
    default: return true;
    }
}

// Per-task state of one inner-optimization.
struct Worker {
    std::shared_ptr<const InnerProblem> problem;
    std::vector<Batch> batches;
    Batch val;
    ParamVector w;
    DistillState distill;
    Rng rng;
    ParamVector grad;
    std::size_t jvps = 0;
};

ParamVector mean_of(const std::vector<Worker>& workers, ParamVector Worker::*field) {
    ParamVector acc = ParamVector::zeros((workers.front().*field).size());
    for (const auto& w : workers) acc += w.*field;
    acc *= 1.0 / static_cast<double>(workers.size());
    return acc;
}

RunRecord run_meta(const MetaConfig& config, const TaskSampler& sampler) {
    validate(config);
    const auto run_start = std::chrono::steady_clock::now();
    const TaskSampler train = sampler.stream(kTrainStream);
    const TaskSampler estimation = sampler.stream(kEstimationStream);
    const std::size_t T = config.T();
    const std::size_t B = config.meta_batch;
    const std::size_t threads = config.workers ? config.workers : B;
    const Strategy& strategy = config.strategy;
    const bool distill = strategy.kind == StrategyKind::HyperDistill;
    const bool estimate = distill && !config.fixed_pi && !config.fixed_theta;

    RunRecord record;
    record.config = config;
    {
        const auto proto = train.sample_task(0);
        record.lambda = proto->initial_hyper(config.seed);
        record.phi = proto->initial_weights(config.seed);
    }
    ParamVector& lambda = record.lambda;
    ParamVector& phi = record.phi;
    HyperOptimizer optimizer(config, lambda.size());

    EstimatorState estimator;
    estimator.gamma = config.gamma;
    estimator.theta = config.fixed_theta.value_or(1.0);
    DistillOptions distill_options{config.fixed_pi};

    try {
        for (std::size_t m = 1; m <= config.M; ++m) {
            const auto start = std::chrono::steady_clock::now();
            const double lr = hyper_lr_schedule(config, m);
            InnerOptRecord rec;
            rec.m = m;
            rec.gamma = config.gamma;

            if (estimate && is_estimation_event(config, m)) {
                EstimationEvent event;
                event.m = m;
                const auto task = estimation.sample_task(m);
                Rng rng = make_rng(config.seed, {kEstimationRngTag, m});
                std::size_t jvps = 0;
                try {
                    EstimatorState fresh = linear_estimation(*task, config.gamma, lambda, phi,
                                                             batch_stream(estimation, *task),
                                                             val_batch(estimation, *task), rng, &jvps);
                    const bool first = record.estimations.empty() ||
                                       std::all_of(record.estimations.begin(), record.estimations.end(),
                                                   [](const EstimationEvent& e) { return !e.error.empty(); });
                    const double ema = first ? 0.0 : config.theta_ema;
                    estimator.theta = ema * estimator.theta + (1.0 - ema) * fresh.theta;
                    event.state = std::move(fresh);
                } catch (const EstimationError& e) {
                    event.error = e.what();
                    spdlog::warn("estimation at inner-optimization {} failed: {}", m, e.what());
                }
                // A failed estimation still spent its rollout.
                rec.jvp_estimation = estimation_jvp_budget(config);
                event.theta_after = estimator.theta;
                record.estimations.push_back(std::move(event));
            }
            rec.theta = estimator.theta;

            std::vector<Worker> workers(B);
            for (std::size_t b = 0; b < B; ++b) {
                Worker& wk = workers[b];
                wk.problem = train.sample_task((m - 1) * B + b);
                wk.batches = batch_stream(train, *wk.problem);
                wk.val = val_batch(train, *wk.problem);
                wk.w = phi;
                wk.distill = make_distill_state(config.gamma, config.task.batch_size);
                wk.rng = make_rng(config.seed, {kDistillRngTag, m, b});
            }

            double norm_acc = 0.0;
            for (std::size_t t = 1; t <= T; ++t) {
                const bool online = online_at(strategy, t, T);
                parallel_for(B, threads, [&](std::size_t b) {
                    Worker& wk = workers[b];
                    const InnerProblem& p = *wk.problem;
                    const Batch& batch = wk.batches[t - 1];
                    if (distill) wk.distill = distill_forward_update(std::move(wk.distill), wk.w, batch, wk.rng);
                    ParamVector w_next;
                    try {
                        w_next = sgd_step(p, wk.w, lambda, batch);
                    } catch (const NonFiniteError& e) {
                        throw DivergenceError(e.what(), t);
                    }
                    if (online) {
                        const ValGradients vg = val_grads(p, w_next, lambda, wk.val);
                        Hypergradient hg;
                        switch (strategy.kind) {
                        case StrategyKind::FO: hg = {vg.g_fo, ParamVector::zeros(p.hyper_dim()), 0}; break;
                        case StrategyKind::OneStep: hg = one_step(p, wk.w, lambda, batch, vg); break;
                        case StrategyKind::NeumannIFT:
                            hg = neumann_ift(p, w_next, lambda, batch, vg, strategy.neumann_N);
                            break;
                        case StrategyKind::HyperDistill:
                            hg = hyperdistill_hypergradient(p, wk.distill, estimator, lambda, vg, distill_options);
                            break;
                        case StrategyKind::DrMAD: break;
                        }
                        wk.grad = hg.total();
                        wk.jvps += hg.jvp_count;
                    }
                    wk.w = std::move(w_next);
                });
                if (online) {
                    const ParamVector g = mean_of(workers, &Worker::grad);
                    norm_acc += norm(g);
                    optimizer.step(lambda, g, lr);
                    ++rec.lambda_updates;
                }
            }

            if (strategy.kind == StrategyKind::DrMAD) {
                parallel_for(B, threads, [&](std::size_t b) {
                    Worker& wk = workers[b];
                    const Hypergradient hg = drmad(*wk.problem, phi, wk.w, wk.batches, lambda, wk.val);
                    wk.grad = hg.total();
                    wk.jvps += hg.jvp_count;
                });
                const ParamVector g = mean_of(workers, &Worker::grad);
                norm_acc += norm(g);
                optimizer.step(lambda, g, lr);
                ++rec.lambda_updates;
            }

            double loss = 0.0;
            std::size_t jvp_total = 0;
            for (const Worker& wk : workers) {
                loss += wk.problem->val_loss(wk.w, lambda, wk.val);
                jvp_total += wk.jvps;
            }
            rec.val_loss = loss / static_cast<double>(B);
            rec.jvp_online = jvp_total / B;
            rec.hypergrad_norm = rec.lambda_updates ? norm_acc / static_cast<double>(rec.lambda_updates) : 0.0;
            if (!std::isfinite(rec.val_loss)) throw DivergenceError("validation loss is not finite", T);

            phi = reptile_update(phi, mean_of(workers, &Worker::w), config.eta_reptile);
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            record.series.push_back(rec);
            spdlog::debug("[{}] m={} val_loss={:.6g} |g|={:.3g} theta={:.4g}", strategy.label(), m, rec.val_loss,
                          rec.hypergrad_norm, rec.theta);
        }
    } catch (const DivergenceError& e) {
        record.diverged = true;
        record.failure = e.what();
    } catch (const NonFiniteError& e) {
        record.diverged = true;
        record.failure = e.what();
    } catch (const NeumannDivergence& e) {
        record.diverged = true;
        record.failure = e.what();
    }
    if (record.diverged) spdlog::error("run aborted after {} inner-optimizations: {}", record.series.size(), record.failure);
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    return record;
}

} // namespace

RunRecord hyperdistill_run(const MetaConfig& config, const TaskSampler& sampler) {
    if (config.strategy.kind != StrategyKind::HyperDistill) {
        throw ConfigError("hyperdistill_run: strategy must be HyperDistill");
    }
    return run_meta(config, sampler);
}

RunRecord baseline_run(const MetaConfig& config, const TaskSampler& sampler) {
    if (config.strategy.kind == StrategyKind::HyperDistill) {
        throw ConfigError("baseline_run: strategy must be a baseline");
    }
    return run_meta(config, sampler);
}

RunRecord meta_train(const MetaConfig& config) {
    TaskSampler sampler(config.task);
    return config.strategy.kind == StrategyKind::HyperDistill ? hyperdistill_run(config, sampler)
                                                              : baseline_run(config, sampler);
}

MetaTestResult meta_test(const MetaConfig& config, const ParamVector& lambda, const ParamVector& phi,
                         std::size_t tasks) {
    const TaskSampler sampler = TaskSampler(config.task).stream(kMetaTestStream);
    MetaTestResult result;
    result.task_losses.assign(tasks, 0.0);
    const std::size_t threads = config.workers ? config.workers : config.meta_batch;
    parallel_for(tasks, threads, [&](std::size_t i) {
        const auto task = sampler.sample_task(i);
        const Trajectory traj = run_inner(*task, lambda, phi, batch_stream(sampler, *task), false);
        result.task_losses[i] = task->val_loss(traj.wT, lambda, val_batch(sampler, *task));
    });
    double acc = 0.0;
    for (double l : result.task_losses) acc += l;
    result.mean_loss = tasks ? acc / static_cast<double>(tasks) : 0.0;
    return result;
}

} // namespace hypergrad
