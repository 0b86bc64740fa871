#pragma once

#include "hypergrad/distill.hpp"
#include "hypergrad/hypergrad.hpp"
#include "hypergrad/problems.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hypergrad {

enum class StrategyKind { FO, OneStep, DrMAD, NeumannIFT, HyperDistill };

std::string_view to_string(StrategyKind k);
StrategyKind parse_strategy_kind(std::string_view name); // ConfigError on unknown names

struct Strategy {
    StrategyKind kind = StrategyKind::HyperDistill;
    std::size_t neumann_N = 5; // inversion steps
    std::size_t neumann_K = 10; // online steps at the end of each rollout

    std::string label() const;
};

enum class HyperOptimizerKind { SgdMomentum, Adam };

std::string_view to_string(HyperOptimizerKind k);
HyperOptimizerKind parse_hyper_optimizer(std::string_view name);

struct MetaConfig {
    TaskSpec task;
    std::size_t M = 30;
    double gamma = 0.9;
    std::size_t estimation_period = 50;
    double eta_hyper = 1e-3;
    double eta_reptile = 1.0;
    double hyper_momentum = 0.9;
    HyperOptimizerKind hyper_optimizer = HyperOptimizerKind::SgdMomentum;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool lr_decay = true;
    std::size_t meta_batch = 4;
    Strategy strategy{};
    std::uint64_t seed = 0;
    // Constant pi* in place of the estimator (HyperDistill only).
    std::optional<double> fixed_pi;
    // Constant theta in place of periodic estimation (HyperDistill only).
    std::optional<double> fixed_theta;
    // theta <- ema * theta + (1 - ema) * theta_new at each estimation; 0 = replace.
    double theta_ema = 0.0;
    // Tasks solved by meta_test().
    std::size_t meta_test_tasks = 100;
    // 0 = meta_batch.
    std::size_t workers = 0;

    std::size_t T() const noexcept { return task.T; }
};

// Throws ConfigError naming the offending field.
void validate(const MetaConfig& config);

struct InnerOptRecord {
    std::size_t m = 0;
    double val_loss = 0.0;       // mean L_val(w_T, lambda) over the meta-batch
    double hypergrad_norm = 0.0; // mean norm of the applied hypergradients
    std::size_t jvp_online = 0;  // per task
    std::size_t jvp_estimation = 0;
    std::size_t lambda_updates = 0;
    double theta = 0.0;
    double gamma = 0.0;
    double wall_seconds = 0.0;
};

struct EstimationEvent {
    std::size_t m = 0;
    EstimatorState state;
    double theta_after = 0.0;
    std::string error; // nonempty when the estimation failed
};

struct RunRecord {
    MetaConfig config;
    std::vector<InnerOptRecord> series;
    std::vector<EstimationEvent> estimations;
    ParamVector lambda;
    ParamVector phi;
    bool diverged = false;
    std::string failure;
    double wall_seconds = 0.0;
};

// eta_hyper * (1 - (m - 1) / M) for 1 <= m <= M (constant if lr_decay is off).
double hyper_lr_schedule(const MetaConfig& config, std::size_t m);

// phi - eta (phi - wT)
ParamVector reptile_update(const ParamVector& phi, const ParamVector& wT, double eta);

// SGD-with-momentum or Adam on the hyperparameters.
class HyperOptimizer {
public:
    HyperOptimizer(const MetaConfig& config, std::size_t dim);
    void step(ParamVector& lambda, const ParamVector& grad, double lr);

private:
    HyperOptimizerKind kind_;
    double momentum_, beta1_, beta2_, eps_;
    std::size_t steps_ = 0;
    ParamVector m1_, m2_;
};

// Online HyperDistill meta-training with periodic theta estimation and a
// Reptile update of the initialisation after every inner-optimization.
RunRecord hyperdistill_run(const MetaConfig& config, const TaskSampler& sampler);

// Same protocol with a baseline hypergradient.
RunRecord baseline_run(const MetaConfig& config, const TaskSampler& sampler);

// Dispatches on config.strategy.
RunRecord meta_train(const MetaConfig& config);

// Task stream ids used by the driver.
inline constexpr std::uint64_t kTrainStream = 0;
inline constexpr std::uint64_t kEstimationStream = 1;
inline constexpr std::uint64_t kMetaTestStream = 2;
inline constexpr std::uint64_t kProbeStream = 3;

struct MetaTestResult {
    double mean_loss = 0.0;
    std::vector<double> task_losses;
};

// Solves `tasks` unseen tasks from w0 = phi with lambda frozen and reports
// the validation loss after T steps.
MetaTestResult meta_test(const MetaConfig& config, const ParamVector& lambda, const ParamVector& phi,
                         std::size_t tasks);

// Closed-form JVPs per task for one inner-optimization (estimation excluded).
std::size_t online_jvp_budget(const MetaConfig& config);
// JVPs for one estimation pass: 3T - 1.
std::size_t estimation_jvp_budget(const MetaConfig& config);
bool is_estimation_event(const MetaConfig& config, std::size_t m);

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

} // namespace hypergrad
