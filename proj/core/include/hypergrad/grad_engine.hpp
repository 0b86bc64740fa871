#pragma once

#include "hypergrad/vecmath.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace hypergrad {

enum class Backend { Analytic, FiniteDifference };

std::string_view to_string(Backend b);

// A set of unique example indices into a task's dataset.
class Batch {
public:
    Batch() = default;
    explicit Batch(std::vector<std::size_t> indices);

    static Batch range(std::size_t n);

    std::span<const std::size_t> indices() const noexcept { return indices_; }
    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }
    bool contains(std::size_t index) const;

    // Throws DimensionError if any index is outside [0, dataset_size).
    void require_within(std::size_t dataset_size) const;

    friend bool operator==(const Batch&, const Batch&) = default;

private:
    std::vector<std::size_t> indices_;
};

struct TrainGradients {
    ParamVector dw;      // d L_train / d w
    ParamVector dlambda; // d L_train / d lambda
};

struct ValGradients {
    ParamVector alpha; // d L_val / d w
    ParamVector g_fo;  // d L_val / d lambda (all zeros when lambda is absent)
};

// A bilevel task instance: training/validation losses over indexed data, the
// SGD update map, and optional closed-form second-order products. Instances
// are immutable once built and may be shared across threads.
class InnerProblem {
public:
    InnerProblem(double inner_lr, Backend backend, std::uint64_t task_seed);
    virtual ~InnerProblem() = default;

    InnerProblem(const InnerProblem&) = delete;
    InnerProblem& operator=(const InnerProblem&) = delete;

    virtual std::string_view family() const = 0;
    virtual std::size_t weight_dim() const = 0;
    virtual std::size_t hyper_dim() const = 0;
    virtual std::size_t dataset_size() const = 0;
    virtual std::size_t val_size() const = 0;

    double inner_lr() const noexcept { return inner_lr_; }
    Backend backend() const noexcept { return backend_; }
    std::uint64_t task_seed() const noexcept { return task_seed_; }

    virtual double train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const = 0;
    virtual double val_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const = 0;

    virtual ParamVector train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const = 0;
    virtual TrainGradients train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const = 0;
    virtual ValGradients val_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const = 0;

    // Closed-form alpha * d2L/dw2 and alpha * d2L/(dw dlambda). Only
    // problems reporting has_analytic() implement these.
    virtual bool has_analytic() const { return false; }
    virtual ParamVector analytic_hvp(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                                     const Batch& batch) const;
    virtual ParamVector analytic_mixed(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                                       const Batch& batch) const;

    // Deterministic fan-in initialisation shared by every task of a family.
    virtual ParamVector initial_weights(std::uint64_t seed) const = 0;
    virtual ParamVector initial_hyper(std::uint64_t seed) const = 0;

protected:
    void require_backend_supported() const;

private:
    double inner_lr_;
    Backend backend_;
    std::uint64_t task_seed_;
};

// Arguments of a left vector-Jacobian product alpha * A or alpha * B.
struct JvpRequest {
    const ParamVector& alpha;
    const ParamVector& w;
    const ParamVector& lambda;
    const Batch& batch;
};

ParamVector grad_train(const InnerProblem& problem, const ParamVector& w, const ParamVector& lambda,
                       const Batch& batch);

ValGradients val_grads(const InnerProblem& problem, const ParamVector& w, const ParamVector& lambda,
                       const Batch& batch);

// Phi(w, lambda; batch) = w - eta * grad_train.
ParamVector sgd_step(const InnerProblem& problem, const ParamVector& w, const ParamVector& lambda,
                     const Batch& batch);

// alpha * dPhi/dw = alpha - eta * alpha * H.
ParamVector vjp_A(const InnerProblem& problem, const JvpRequest& req);

// alpha * dPhi/dlambda = -eta * alpha * d2L/(dw dlambda).
ParamVector vjp_B(const InnerProblem& problem, const JvpRequest& req);

// Step used by the finite-difference backend: sqrt(machine eps) * (1 + ||w||_inf).
double fd_epsilon(const ParamVector& w);

} // namespace hypergrad
