#include "hypergrad/grad_engine.hpp"

#include "hypergrad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <unordered_set>

namespace hypergrad {

std::string_view to_string(Backend b) {
    return b == Backend::Analytic ? "analytic" : "finite-difference";
}

Batch::Batch(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
    std::unordered_set<std::size_t> seen(indices_.begin(), indices_.end());
    if (seen.size() != indices_.size()) throw DomainError("Batch: duplicate indices");
}

Batch Batch::range(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return Batch(std::move(idx));
}

bool Batch::contains(std::size_t index) const {
    return std::find(indices_.begin(), indices_.end(), index) != indices_.end();
}

void Batch::require_within(std::size_t dataset_size) const {
    for (std::size_t i : indices_) {
        if (i >= dataset_size) {
            throw DimensionError(fmt::format("Batch: index {} outside dataset of size {}", i, dataset_size));
        }
    }
}

InnerProblem::InnerProblem(double inner_lr, Backend backend, std::uint64_t task_seed)
    : inner_lr_(inner_lr), backend_(backend), task_seed_(task_seed) {
    if (!(inner_lr > 0.0) || !std::isfinite(inner_lr)) throw ConfigError("inner learning rate must be positive");
}

void InnerProblem::require_backend_supported() const {
    if (backend_ == Backend::Analytic && !has_analytic()) {
        throw ConfigError(fmt::format("{} problem has no analytic backend", family()));
    }
}

ParamVector InnerProblem::analytic_hvp(const ParamVector&, const ParamVector&, const ParamVector&,
                                       const Batch&) const {
    throw ConfigError(fmt::format("{} problem has no analytic backend", family()));
}

ParamVector InnerProblem::analytic_mixed(const ParamVector&, const ParamVector&, const ParamVector&,
                                         const Batch&) const {
    throw ConfigError(fmt::format("{} problem has no analytic backend", family()));
}

namespace {

void check_dims(const InnerProblem& p, const ParamVector& w, const ParamVector& lambda, const char* where) {
    if (w.size() != p.weight_dim()) {
        throw DimensionError(fmt::format("{}: weight length {} but problem expects {}", where, w.size(), p.weight_dim()));
    }
    if (lambda.size() != p.hyper_dim()) {
        throw DimensionError(
            fmt::format("{}: hyperparameter length {} but problem expects {}", where, lambda.size(), p.hyper_dim()));
    }
}

void check_request(const InnerProblem& p, const JvpRequest& req, const char* where) {
    check_dims(p, req.w, req.lambda, where);
    if (req.alpha.size() != p.weight_dim()) {
        throw DimensionError(fmt::format("{}: cotangent length {} but problem expects {}", where, req.alpha.size(),
                                         p.weight_dim()));
    }
}

// Symmetric difference of the training-gradient map along alpha, scaled back
// to alpha's magnitude. Returns {alpha * d2L/dw2, alpha * d2L/(dw dlambda)}.
struct DirectionalPair {
    ParamVector hvp;
    ParamVector mixed;
};

DirectionalPair fd_directional(const InnerProblem& p, const JvpRequest& req, bool need_w, bool need_lambda) {
    const double a_norm = norm(req.alpha);
    const double eps = fd_epsilon(req.w);
    const ParamVector dir = normalize(req.alpha);
    const ParamVector w_plus = req.w + eps * dir;
    const ParamVector w_minus = req.w - eps * dir;
    const double scale = a_norm / (2.0 * eps);

    DirectionalPair out;
    if (need_w && !need_lambda) {
        ParamVector gp = p.train_grad_w(w_plus, req.lambda, req.batch);
        ParamVector gm = p.train_grad_w(w_minus, req.lambda, req.batch);
        out.hvp = scale * (gp - gm);
        return out;
    }
    TrainGradients gp = p.train_grads(w_plus, req.lambda, req.batch);
    TrainGradients gm = p.train_grads(w_minus, req.lambda, req.batch);
    if (need_w) out.hvp = scale * (gp.dw - gm.dw);
    if (need_lambda) out.mixed = scale * (gp.dlambda - gm.dlambda);
    return out;
}

} // namespace

double fd_epsilon(const ParamVector& w) {
    return std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + norm_inf(w));
}

ParamVector grad_train(const InnerProblem& problem, const ParamVector& w, const ParamVector& lambda,
                       const Batch& batch) {
    check_dims(problem, w, lambda, "grad_train");
    return problem.train_grad_w(w, lambda, batch);
}

ValGradients val_grads(const InnerProblem& problem, const ParamVector& w, const ParamVector& lambda,
                       const Batch& batch) {
    check_dims(problem, w, lambda, "val_grads");
    return problem.val_grads(w, lambda, batch);
}

ParamVector sgd_step(const InnerProblem& problem, const ParamVector& w, const ParamVector& lambda,
                     const Batch& batch) {
    ParamVector next = w;
    next.axpy(-problem.inner_lr(), grad_train(problem, w, lambda, batch));
    return next;
}

ParamVector vjp_A(const InnerProblem& problem, const JvpRequest& req) {
    check_request(problem, req, "vjp_A");
    if (norm_inf(req.alpha) == 0.0) return ParamVector::zeros(problem.weight_dim());

    ParamVector hvp = problem.backend() == Backend::Analytic
                          ? problem.analytic_hvp(req.alpha, req.w, req.lambda, req.batch)
                          : fd_directional(problem, req, true, false).hvp;
    ParamVector out = req.alpha;
    out.axpy(-problem.inner_lr(), hvp);
    return out;
}

ParamVector vjp_B(const InnerProblem& problem, const JvpRequest& req) {
    check_request(problem, req, "vjp_B");
    if (norm_inf(req.alpha) == 0.0) return ParamVector::zeros(problem.hyper_dim());

    ParamVector mixed = problem.backend() == Backend::Analytic
                            ? problem.analytic_mixed(req.alpha, req.w, req.lambda, req.batch)
                            : fd_directional(problem, req, false, true).mixed;
    mixed *= -problem.inner_lr();
    return mixed;
}

} // namespace hypergrad
