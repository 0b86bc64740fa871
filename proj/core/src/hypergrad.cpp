#include "hypergrad/hypergrad.hpp"

#include "hypergrad/errors.hpp"

#include <cmath>
#include <fmt/format.h>

namespace hypergrad {

namespace {

// Backward pass shared by RMD and DrMAD; weight_before(t) is w_{t-1}.
template <typename WeightAt>
Hypergradient unroll_backward(const InnerProblem& problem, std::span<const Batch> batches, const ParamVector& wT,
                              const ParamVector& lambda, const Batch& val_batch, WeightAt&& weight_before) {
    ValGradients vg = val_grads(problem, wT, lambda, val_batch);
    Hypergradient hg{std::move(vg.g_fo), ParamVector::zeros(problem.hyper_dim()), 0};
    ParamVector alpha = std::move(vg.alpha);
    const std::size_t T = batches.size();
    for (std::size_t t = T; t >= 1; --t) {
        const ParamVector& w_prev = weight_before(t);
        const Batch& batch = batches[t - 1];
        hg.g_so += vjp_B(problem, {alpha, w_prev, lambda, batch});
        ++hg.jvp_count;
        if (t > 1) {
            alpha = vjp_A(problem, {alpha, w_prev, lambda, batch});
            ++hg.jvp_count;
        }
    }
    return hg;
}

} // namespace

Hypergradient rmd_exact(const InnerProblem& problem, const Trajectory& trajectory, const ParamVector& lambda,
                        const Batch& val_batch) {
    if (trajectory.T() > 1 && !trajectory.recorded) {
        throw TrajectoryError("rmd_exact: trajectory intermediates were not recorded");
    }
    return unroll_backward(problem, trajectory.batches, trajectory.wT, lambda, val_batch,
                           [&](std::size_t t) -> const ParamVector& { return trajectory.weight_at(t - 1); });
}

Hypergradient drmad(const InnerProblem& problem, const ParamVector& w0, const ParamVector& wT,
                    std::span<const Batch> batches, const ParamVector& lambda, const Batch& val_batch) {
    const std::size_t T = batches.size();
    if (T == 0) throw TrajectoryError("drmad: empty trajectory");
    ParamVector scratch;
    return unroll_backward(problem, batches, wT, lambda, val_batch, [&](std::size_t t) -> const ParamVector& {
        scratch = lerp(w0, wT, static_cast<double>(t - 1) / static_cast<double>(T));
        return scratch;
    });
}

Hypergradient fo_hypergradient(const InnerProblem& problem, const ParamVector& wT, const ParamVector& lambda,
                               const Batch& val_batch) {
    ValGradients vg = val_grads(problem, wT, lambda, val_batch);
    return {std::move(vg.g_fo), ParamVector::zeros(problem.hyper_dim()), 0};
}

Hypergradient one_step(const InnerProblem& problem, const ParamVector& w_prev, const ParamVector& lambda,
                       const Batch& batch, const Batch& val_batch) {
    const ParamVector w_t = sgd_step(problem, w_prev, lambda, batch);
    return one_step(problem, w_prev, lambda, batch, val_grads(problem, w_t, lambda, val_batch));
}

Hypergradient one_step(const InnerProblem& problem, const ParamVector& w_prev, const ParamVector& lambda,
                       const Batch& batch, const ValGradients& at_wt) {
    ParamVector g_so = vjp_B(problem, {at_wt.alpha, w_prev, lambda, batch});
    return {at_wt.g_fo, std::move(g_so), 1};
}

Hypergradient neumann_ift(const InnerProblem& problem, const ParamVector& wT, const ParamVector& lambda,
                          const Batch& batch, const Batch& val_batch, std::size_t N) {
    return neumann_ift(problem, wT, lambda, batch, val_grads(problem, wT, lambda, val_batch), N);
}

Hypergradient neumann_ift(const InnerProblem& problem, const ParamVector& wT, const ParamVector& lambda,
                          const Batch& batch, const ValGradients& at_wT, std::size_t N) {
    const ParamVector& alpha = at_wT.alpha;
    const double limit = 10.0 * norm(alpha);
    ParamVector p = alpha;
    ParamVector v = alpha;
    for (std::size_t j = 0; j < N; ++j) {
        v = vjp_A(problem, {v, wT, lambda, batch});
        if (norm(v) > limit) {
            throw NeumannDivergence(
                fmt::format("neumann_ift: series term {} grew beyond 10x the initial norm (spectral radius of A >= 1)",
                            j + 1));
        }
        p += v;
    }
    ParamVector g_so = vjp_B(problem, {p, wT, lambda, batch});
    return {at_wT.g_fo, std::move(g_so), N + 1};
}

ParamVector so_geometric_reference(const InnerProblem& problem, const Trajectory& trajectory,
                                   const ParamVector& lambda, const Batch& val_batch, double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("so_geometric_reference: gamma must lie in [0, 1)");
    const std::size_t T = trajectory.T();
    if (T > 1 && !trajectory.recorded) {
        throw TrajectoryError("so_geometric_reference: trajectory intermediates were not recorded");
    }
    const ValGradients vg = val_grads(problem, trajectory.wT, lambda, val_batch);
    ParamVector out = ParamVector::zeros(problem.hyper_dim());
    double decay = 1.0;
    for (std::size_t i = T; i >= 1; --i) {
        if (decay == 0.0) break;
        out.axpy(decay, vjp_B(problem, {vg.alpha, trajectory.weight_at(i - 1), lambda, trajectory.batches[i - 1]}));
        decay *= gamma;
    }
    return out;
}

} // namespace hypergrad
