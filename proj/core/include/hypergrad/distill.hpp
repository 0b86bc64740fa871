#pragma once

#include "hypergrad/grad_engine.hpp"
#include "hypergrad/hypergrad.hpp"
#include "hypergrad/rng.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace hypergrad {

// Running distilled point (w*, D*) for online step t. t == 0 means no step
// has been folded in yet.
struct DistillState {
    ParamVector w_star;
    Batch d_star;
    std::size_t t = 0;
    double gamma = 0.0;
    std::size_t batch_size = 0;
};

DistillState make_distill_state(double gamma, std::size_t batch_size);

// Forward mixing weight p_t = (gamma - gamma^t) / (1 - gamma^t) for t >= 2.
double forward_mixing(double gamma, std::size_t t);

// Backward mixing weight p_s = (1 - gamma^{s-1}) / (1 - gamma^s); p_1 = 0.
double backward_mixing(double gamma, std::size_t s);

// sum_{i=1}^{t} gamma^{t-i}; equals t at gamma = 1.
double geometric_sum(double gamma, std::size_t t);

// Uniform sample without replacement of round(|batch| * p) indices.
Batch subsample(const Batch& batch, double p, Rng& rng);

// SS(older, p) u SS(newer, 1 - p): `older` contributes round(p * batch_size)
// indices and `newer` fills the rest. Indices drawn from `newer` that are
// already present are replaced by unused indices of `newer`.
Batch mix_batches(const Batch& older, const Batch& newer, double p, std::size_t batch_size, Rng& rng);

// Folds w_{t-1} and D_t into the state and advances t.
DistillState distill_forward_update(DistillState state, const ParamVector& w_prev, const Batch& batch_t, Rng& rng);

struct EstimationSample {
    std::size_t s = 0;
    double x = 0.0;
    double y = 0.0;
};

struct EstimatorState {
    double theta = 1.0;
    double gamma = 0.0;
    std::vector<EstimationSample> samples;
};

// c_gamma(t; theta) = theta * ||v_t|| * sum_{i=1}^t gamma^{t-i}.
double estimator_predict(const EstimatorState& est, std::size_t t, double v_norm);

// Through-origin least squares slope x.y / x.x.
double fit_theta(std::span<const double> x, std::span<const double> y);

struct DistillOptions {
    // Bypasses the estimator with a constant scale (pi* = 1 for tasks with
    // no direct gradient).
    std::optional<double> fixed_pi;
};

// g = g_fo + pi* . normalize(v_t), with v_t = alpha_t dPhi(w*, lambda; D*)/dlambda.
// One JVP.
Hypergradient hyperdistill_hypergradient(const InnerProblem& problem, const DistillState& state,
                                         const EstimatorState& est, const ParamVector& lambda,
                                         const ValGradients& at_wt, const DistillOptions& options = {});

// Fresh rollout from phi keeping only (w0, wT, batches); walks the DrMAD
// interpolation backwards collecting (x_s, y_s) for s = 1..T and fits theta.
// EstimationError if every v_s vanishes.
EstimatorState linear_estimation(const InnerProblem& problem, double gamma, const ParamVector& lambda,
                                 const ParamVector& phi, std::vector<Batch> batches, const Batch& val_batch,
                                 Rng& rng, std::size_t* jvp_count = nullptr);

} // namespace hypergrad
