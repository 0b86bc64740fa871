#pragma once

#include "hypergrad/grad_engine.hpp"
#include "hypergrad/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hypergrad {

// ---------------------------------------------------------------------------
// Built-in task families
// ---------------------------------------------------------------------------

// L_train(w, lambda; D) = k/2 ||w - lambda||^2 + noise(D).w
// L_val(w)             = 1/2 ||w - target||^2
// noise(D) is the batch mean of fixed per-example Gaussian vectors times
// noise_scale, so the Hessian is exactly k*I for every batch.
class QuadraticTask final : public InnerProblem {
public:
    struct Params {
        std::size_t dim = 5;
        double k = 1.0;
        double inner_lr = 0.5;
        double noise_scale = 0.0;
        std::size_t dataset_size = 32;
        Backend backend = Backend::Analytic;
    };

    QuadraticTask(const Params& params, ParamVector val_target, std::uint64_t task_seed);

    std::string_view family() const override { return "quadratic"; }
    std::size_t weight_dim() const override { return params_.dim; }
    std::size_t hyper_dim() const override { return params_.dim; }
    std::size_t dataset_size() const override { return params_.dataset_size; }
    std::size_t val_size() const override { return 1; }

    double k() const noexcept { return params_.k; }
    const ParamVector& val_target() const noexcept { return target_; }
    ParamVector batch_noise(const Batch& batch) const;

    double train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    double val_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ParamVector train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    TrainGradients train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ValGradients val_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;

    bool has_analytic() const override { return true; }
    ParamVector analytic_hvp(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                             const Batch& batch) const override;
    ParamVector analytic_mixed(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                               const Batch& batch) const override;

    ParamVector initial_weights(std::uint64_t seed) const override;
    ParamVector initial_hyper(std::uint64_t seed) const override;

private:
    Params params_;
    ParamVector target_;
    std::vector<ParamVector> example_noise_;
};

// L_train(w, lambda) = (c + coupling * lambda).w, zero Hessian in w.
// L_val(w)          = 1/2 ||w - target||^2
class LinearTask final : public InnerProblem {
public:
    LinearTask(ParamVector c, double coupling, ParamVector val_target, double inner_lr,
               Backend backend = Backend::Analytic, std::size_t dataset_size = 1);

    std::string_view family() const override { return "linear"; }
    std::size_t weight_dim() const override { return c_.size(); }
    std::size_t hyper_dim() const override { return c_.size(); }
    std::size_t dataset_size() const override { return dataset_size_; }
    std::size_t val_size() const override { return 1; }

    double train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    double val_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ParamVector train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    TrainGradients train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ValGradients val_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;

    bool has_analytic() const override { return true; }
    ParamVector analytic_hvp(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                             const Batch& batch) const override;
    ParamVector analytic_mixed(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                               const Batch& batch) const override;

    ParamVector initial_weights(std::uint64_t seed) const override;
    ParamVector initial_hyper(std::uint64_t seed) const override;

private:
    ParamVector c_;
    double coupling_;
    ParamVector target_;
    std::size_t dataset_size_;
};

// Few-shot sinusoid regression with an ANIL split: the three hidden ReLU
// layers of a 1-H-H-H-1 network are the hyperparameters, the linear head is
// the inner weight. Both splits use mean squared error.
class SinusoidTask final : public InnerProblem {
public:
    struct Params {
        std::size_t hidden = 100;
        std::size_t shots = 10;
        std::size_t val_points = 100;
        double inner_lr = 0.1;
        Backend backend = Backend::FiniteDifference;
    };

    SinusoidTask(const Params& params, double amplitude, double phase, std::uint64_t task_seed);

    std::string_view family() const override { return "sinusoid"; }
    std::size_t weight_dim() const override { return params_.hidden + 1; }
    std::size_t hyper_dim() const override;
    std::size_t dataset_size() const override { return params_.shots; }
    std::size_t val_size() const override { return params_.val_points; }

    double amplitude() const noexcept { return amplitude_; }
    double phase() const noexcept { return phase_; }
    std::span<const double> train_inputs() const noexcept { return train_x_; }
    std::span<const double> train_targets() const noexcept { return train_y_; }

    // Network output at arbitrary inputs.
    std::vector<double> predict(const ParamVector& w, const ParamVector& lambda, std::span<const double> xs) const;

    double train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    double val_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ParamVector train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    TrainGradients train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ValGradients val_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;

    bool has_analytic() const override { return true; }
    ParamVector analytic_hvp(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                             const Batch& batch) const override;
    ParamVector analytic_mixed(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                               const Batch& batch) const override;

    ParamVector initial_weights(std::uint64_t seed) const override;
    ParamVector initial_hyper(std::uint64_t seed) const override;

private:
    Params params_;
    double amplitude_;
    double phase_;
    std::vector<double> train_x_, train_y_, val_x_, val_y_;
};

// Synthetic loss-reweighting problem: a 2-16-1 tanh classifier (weights w)
// trained on label-corrupted two-class Gaussian blobs with per-example losses
// reweighted by a 1-H-1 ReLU network (hyperparameters lambda) whose output is
// floored at `weight_floor`. The validation split is clean and does not
// depend on lambda.
class ReweightTask final : public InnerProblem {
public:
    struct Params {
        std::size_t train_size = 200;
        std::size_t val_size = 100;
        std::size_t classifier_hidden = 16;
        std::size_t weight_hidden = 200;
        double corruption_prob = 0.4;
        double separation = 2.0;
        double weight_floor = 0.1;
        double inner_lr = 0.1;
        Backend backend = Backend::FiniteDifference;
    };

    ReweightTask(const Params& params, std::uint64_t task_seed);

    std::string_view family() const override { return "reweight"; }
    std::size_t weight_dim() const override;
    std::size_t hyper_dim() const override;
    std::size_t dataset_size() const override { return params_.train_size; }
    std::size_t val_size() const override { return params_.val_size; }

    double flipped_fraction() const;
    std::span<const int> train_labels() const noexcept { return train_label_; }
    std::span<const int> clean_train_labels() const noexcept { return clean_label_; }

    // Weighting-network output for a per-example loss value.
    double example_weight(const ParamVector& lambda, double loss) const;
    // Per-example unweighted classification losses on the training split.
    std::vector<double> example_losses(const ParamVector& w, const Batch& batch) const;

    double train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    double val_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ParamVector train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    TrainGradients train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;
    ValGradients val_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const override;

    ParamVector initial_weights(std::uint64_t seed) const override;
    ParamVector initial_hyper(std::uint64_t seed) const override;

    double val_accuracy(const ParamVector& w) const;

private:
    TrainGradients train_grads_impl(const ParamVector& w, const ParamVector& lambda, const Batch& batch,
                                    bool need_lambda) const;

    Params params_;
    std::vector<double> train_x_, val_x_; // row-major n x 2
    std::vector<int> train_label_, clean_label_, val_label_;
};

// ---------------------------------------------------------------------------
// Task distribution and rollouts
// ---------------------------------------------------------------------------

enum class TaskFamily { Quadratic, Sinusoid, Reweight };

std::string_view to_string(TaskFamily f);
TaskFamily parse_task_family(std::string_view name); // ConfigError on unknown names

struct TaskSpec {
    TaskFamily family = TaskFamily::Quadratic;
    std::uint64_t seed = 0;
    std::size_t batch_size = 4;
    std::size_t T = 10;
    // 0 means the full validation split.
    std::size_t val_batch_size = 0;

    QuadraticTask::Params quadratic{};
    double quadratic_target_spread = 1.0;
    SinusoidTask::Params sinusoid{};
    ReweightTask::Params reweight{};
};

class TaskSampler {
public:
    explicit TaskSampler(TaskSpec spec);

    const TaskSpec& spec() const noexcept { return spec_; }

    // Deterministic in (seed, stream, task_index).
    std::shared_ptr<const InnerProblem> sample_task(std::uint64_t task_index) const;

    // Independent task stream sharing every other setting (meta-test,
    // estimation, probes).
    TaskSampler stream(std::uint64_t stream_id) const;

    std::uint64_t stream_id() const noexcept { return stream_; }

private:
    TaskSpec spec_;
    std::uint64_t stream_ = 0;
};

// T minibatches drawn epoch-wise without replacement, deterministic in the
// task seed.
std::vector<Batch> batch_stream(const TaskSampler& sampler, const InnerProblem& task);

// Held-out validation batch fixed for one inner-optimization.
Batch val_batch(const TaskSampler& sampler, const InnerProblem& task);

struct Trajectory {
    ParamVector w0;
    ParamVector wT;
    std::vector<ParamVector> intermediates; // w_1 .. w_{T-1} when recorded
    std::vector<Batch> batches;             // D_1 .. D_T
    bool recorded = false;

    std::size_t T() const noexcept { return batches.size(); }
    // w_t for t in [0, T]; TrajectoryError if t is an unrecorded intermediate.
    const ParamVector& weight_at(std::size_t t) const;
    // Trajectory truncated to its first t steps (requires recording).
    Trajectory prefix(std::size_t t) const;
};

// Applies T SGD steps. DivergenceError (with the failing step) on non-finite
// weights.
Trajectory run_inner(const InnerProblem& task, const ParamVector& lambda, const ParamVector& w0,
                     std::vector<Batch> batches, bool record);

} // namespace hypergrad
