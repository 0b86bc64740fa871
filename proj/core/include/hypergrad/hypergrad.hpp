#pragma once

#include "hypergrad/grad_engine.hpp"
#include "hypergrad/problems.hpp"

#include <cstddef>
#include <span>

namespace hypergrad {

// First-order (direct) and second-order (through the response) parts of
// dL_val/dlambda, plus the number of vjp_A/vjp_B calls spent on it.
struct Hypergradient {
    ParamVector g_fo;
    ParamVector g_so;
    std::size_t jvp_count = 0;

    ParamVector total() const { return g_fo + g_so; }
};

// Reverse-mode unroll over the stored trajectory:
//   g_so = sum_t alpha_T A_T ... A_{t+1} B_t, 2T-1 products.
Hypergradient rmd_exact(const InnerProblem& problem, const Trajectory& trajectory, const ParamVector& lambda,
                        const Batch& val_batch);

// Same recursion with every Jacobian taken on the straight line w0 -> wT.
Hypergradient drmad(const InnerProblem& problem, const ParamVector& w0, const ParamVector& wT,
                    std::span<const Batch> batches, const ParamVector& lambda, const Batch& val_batch);

Hypergradient fo_hypergradient(const InnerProblem& problem, const ParamVector& wT, const ParamVector& lambda,
                               const Batch& val_batch);

// alpha_t * B_t with alpha_t taken at w_t = Phi(w_prev) and B_t at w_prev.
Hypergradient one_step(const InnerProblem& problem, const ParamVector& w_prev, const ParamVector& lambda,
                       const Batch& batch, const Batch& val_batch);

// Variant reusing validation gradients already evaluated at w_t.
Hypergradient one_step(const InnerProblem& problem, const ParamVector& w_prev, const ParamVector& lambda,
                       const Batch& batch, const ValGradients& at_wt);

// alpha (I + A + ... + A^N) B with A and B evaluated at (wT, batch).
// Throws NeumannDivergence if the series term grows beyond 10x ||alpha||.
Hypergradient neumann_ift(const InnerProblem& problem, const ParamVector& wT, const ParamVector& lambda,
                          const Batch& batch, const Batch& val_batch, std::size_t N);

Hypergradient neumann_ift(const InnerProblem& problem, const ParamVector& wT, const ParamVector& lambda,
                          const Batch& batch, const ValGradients& at_wT, std::size_t N);

// sum_i gamma^{T-i} alpha_T B_i over the stored trajectory (identity-Hessian
// approximation of the second-order term).
ParamVector so_geometric_reference(const InnerProblem& problem, const Trajectory& trajectory,
                                   const ParamVector& lambda, const Batch& val_batch, double gamma);

} // namespace hypergrad
