#include "hypergrad/errors.hpp"
#include "hypergrad/problems.hpp"

#include <fmt/format.h>

namespace hypergrad {

namespace {

ParamVector uniform_vector(std::size_t n, double bound, Rng& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    ParamVector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

} // namespace

QuadraticTask::QuadraticTask(const Params& params, ParamVector val_target, std::uint64_t task_seed)
    : InnerProblem(params.inner_lr, params.backend, task_seed), params_(params), target_(std::move(val_target)) {
    if (params_.dim == 0) throw ConfigError("quadratic: dim must be positive");
    if (!(params_.k > 0.0)) throw ConfigError("quadratic: k must be positive");
    if (params_.noise_scale < 0.0) throw ConfigError("quadratic: noise_scale must be nonnegative");
    if (params_.dataset_size == 0) throw ConfigError("quadratic: dataset_size must be positive");
    if (target_.size() != params_.dim) throw DimensionError("quadratic: target length differs from dim");
    require_backend_supported();

    Rng rng = make_rng(task_seed, {0x9a11});
    std::normal_distribution<double> normal(0.0, 1.0);
    example_noise_.reserve(params_.dataset_size);
    for (std::size_t i = 0; i < params_.dataset_size; ++i) {
        ParamVector xi(params_.dim);
        for (std::size_t j = 0; j < params_.dim; ++j) xi[j] = normal(rng);
        example_noise_.push_back(std::move(xi));
    }
}

ParamVector QuadraticTask::batch_noise(const Batch& batch) const {
    ParamVector out(params_.dim);
    batch.require_within(params_.dataset_size);
    if (params_.noise_scale == 0.0 || batch.empty()) return out;
    const double c = params_.noise_scale / static_cast<double>(batch.size());
    for (std::size_t i : batch.indices()) out.axpy(c, example_noise_[i]);
    return out;
}

double QuadraticTask::train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    const ParamVector d = w - lambda;
    return 0.5 * params_.k * dot(d, d) + dot(batch_noise(batch), w);
}

double QuadraticTask::val_loss(const ParamVector& w, const ParamVector&, const Batch&) const {
    const ParamVector d = w - target_;
    return 0.5 * dot(d, d);
}

ParamVector QuadraticTask::train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    ParamVector g = params_.k * (w - lambda);
    g += batch_noise(batch);
    return g;
}

TrainGradients QuadraticTask::train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    return {train_grad_w(w, lambda, batch), -params_.k * (w - lambda)};
}

ValGradients QuadraticTask::val_grads(const ParamVector& w, const ParamVector&, const Batch&) const {
    return {w - target_, ParamVector::zeros(params_.dim)};
}

ParamVector QuadraticTask::analytic_hvp(const ParamVector& alpha, const ParamVector&, const ParamVector&,
                                        const Batch&) const {
    return params_.k * alpha;
}

ParamVector QuadraticTask::analytic_mixed(const ParamVector& alpha, const ParamVector&, const ParamVector&,
                                          const Batch&) const {
    return -params_.k * alpha;
}

ParamVector QuadraticTask::initial_weights(std::uint64_t seed) const {
    Rng rng = make_rng(seed, {0x71a1, 1});
    return uniform_vector(params_.dim, 1.0, rng);
}

ParamVector QuadraticTask::initial_hyper(std::uint64_t seed) const {
    Rng rng = make_rng(seed, {0x71a1, 2});
    return uniform_vector(params_.dim, 1.0, rng);
}

// ---------------------------------------------------------------------------

LinearTask::LinearTask(ParamVector c, double coupling, ParamVector val_target, double inner_lr, Backend backend,
                       std::size_t dataset_size)
    : InnerProblem(inner_lr, backend, 0),
      c_(std::move(c)),
      coupling_(coupling),
      target_(std::move(val_target)),
      dataset_size_(dataset_size) {
    if (c_.empty()) throw ConfigError("linear: dimension must be positive");
    if (target_.size() != c_.size()) throw DimensionError("linear: target length differs from c");
    if (dataset_size_ == 0) throw ConfigError("linear: dataset_size must be positive");
}

double LinearTask::train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    batch.require_within(dataset_size_);
    return dot(c_ + coupling_ * lambda, w);
}

double LinearTask::val_loss(const ParamVector& w, const ParamVector&, const Batch&) const {
    const ParamVector d = w - target_;
    return 0.5 * dot(d, d);
}

ParamVector LinearTask::train_grad_w(const ParamVector&, const ParamVector& lambda, const Batch& batch) const {
    batch.require_within(dataset_size_);
    return c_ + coupling_ * lambda;
}

TrainGradients LinearTask::train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    return {train_grad_w(w, lambda, batch), coupling_ * w};
}

ValGradients LinearTask::val_grads(const ParamVector& w, const ParamVector&, const Batch&) const {
    return {w - target_, ParamVector::zeros(c_.size())};
}

ParamVector LinearTask::analytic_hvp(const ParamVector&, const ParamVector&, const ParamVector&, const Batch&) const {
    return ParamVector::zeros(c_.size());
}

ParamVector LinearTask::analytic_mixed(const ParamVector& alpha, const ParamVector&, const ParamVector&,
                                       const Batch&) const {
    return coupling_ * alpha;
}

ParamVector LinearTask::initial_weights(std::uint64_t seed) const {
    Rng rng = make_rng(seed, {0x11ea, 1});
    return uniform_vector(c_.size(), 1.0, rng);
}

ParamVector LinearTask::initial_hyper(std::uint64_t seed) const {
    Rng rng = make_rng(seed, {0x11ea, 2});
    return uniform_vector(c_.size(), 1.0, rng);
}

} // namespace hypergrad
