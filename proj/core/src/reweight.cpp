#include "hypergrad/errors.hpp"
#include "hypergrad/problems.hpp"

#include <cmath>
#include <numbers>

namespace hypergrad {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Offsets into the classifier vector: V1 (hc x 2, column-major), c1, u, c2.
struct ClassifierLayout {
    std::size_t hc;
    std::size_t V1() const { return 0; }
    std::size_t c1() const { return 2 * hc; }
    std::size_t u() const { return 3 * hc; }
    std::size_t c2() const { return 4 * hc; }
    std::size_t size() const { return 4 * hc + 1; }
};

// Offsets into the weighting-network vector: U1, d1, U2, d2.
struct WeightNetLayout {
    std::size_t hw;
    std::size_t U1() const { return 0; }
    std::size_t d1() const { return hw; }
    std::size_t U2() const { return 2 * hw; }
    std::size_t d2() const { return 3 * hw; }
    std::size_t size() const { return 3 * hw + 1; }
};

struct ClassifierPass {
    std::vector<double> hidden; // tanh activations
    double logit = 0.0;
};

ClassifierPass classify(const ClassifierLayout& L, const ParamVector& w, double x0, double x1) {
    ClassifierPass p;
    p.hidden.resize(L.hc);
    double z = w[L.c2()];
    for (std::size_t j = 0; j < L.hc; ++j) {
        const double a = w[L.V1() + j] * x0 + w[L.V1() + L.hc + j] * x1 + w[L.c1() + j];
        p.hidden[j] = std::tanh(a);
        z += w[L.u() + j] * p.hidden[j];
    }
    p.logit = z;
    return p;
}

double bce(double logit, int label) { return softplus(logit) - static_cast<double>(label) * logit; }

// Accumulates upstream * d(logit)/dw into grad.
void classifier_backward(const ClassifierLayout& L, const ParamVector& w, const ClassifierPass& p, double x0,
                         double x1, double upstream, ParamVector& grad) {
    grad[L.c2()] += upstream;
    for (std::size_t j = 0; j < L.hc; ++j) {
        grad[L.u() + j] += upstream * p.hidden[j];
        const double da = upstream * w[L.u() + j] * (1.0 - p.hidden[j] * p.hidden[j]);
        grad[L.V1() + j] += da * x0;
        grad[L.V1() + L.hc + j] += da * x1;
        grad[L.c1() + j] += da;
    }
}

struct WeightPass {
    double value = 0.0; // floored weight
    double dvalue_dq = 0.0;
    double dvalue_dloss = 0.0;
};

WeightPass weigh(const WeightNetLayout& L, const ParamVector& lambda, double loss, double floor) {
    double q = lambda[L.d2()];
    double dq_dloss = 0.0;
    for (std::size_t j = 0; j < L.hw; ++j) {
        const double a = lambda[L.U1() + j] * loss + lambda[L.d1() + j];
        if (a > 0.0) {
            q += lambda[L.U2() + j] * a;
            dq_dloss += lambda[L.U2() + j] * lambda[L.U1() + j];
        }
    }
    const double s = sigmoid(q);
    WeightPass out;
    out.value = floor + (1.0 - floor) * s;
    out.dvalue_dq = (1.0 - floor) * s * (1.0 - s);
    out.dvalue_dloss = out.dvalue_dq * dq_dloss;
    return out;
}

// Accumulates upstream * d(q)/dlambda into grad.
void weight_backward(const WeightNetLayout& L, const ParamVector& lambda, double loss, double upstream,
                     ParamVector& grad) {
    grad[L.d2()] += upstream;
    for (std::size_t j = 0; j < L.hw; ++j) {
        const double a = lambda[L.U1() + j] * loss + lambda[L.d1() + j];
        if (a > 0.0) {
            grad[L.U2() + j] += upstream * a;
            const double da = upstream * lambda[L.U2() + j];
            grad[L.U1() + j] += da * loss;
            grad[L.d1() + j] += da;
        }
    }
}

} // namespace

ReweightTask::ReweightTask(const Params& params, std::uint64_t task_seed)
    : InnerProblem(params.inner_lr, params.backend, task_seed), params_(params) {
    if (params_.train_size == 0 || params_.val_size == 0 || params_.classifier_hidden == 0 ||
        params_.weight_hidden == 0) {
        throw ConfigError("reweight: sizes must be positive");
    }
    if (params_.corruption_prob < 0.0 || params_.corruption_prob > 1.0) {
        throw ConfigError("reweight: corruption_prob must lie in [0, 1]");
    }
    if (params_.weight_floor < 0.0 || params_.weight_floor >= 1.0) {
        throw ConfigError("reweight: weight_floor must lie in [0, 1)");
    }
    require_backend_supported();

    Rng rng = make_rng(task_seed, {0x3e3e});
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    const double theta = angle(rng);
    const double ux = std::cos(theta);
    const double uy = std::sin(theta);
    const double half = 0.5 * params_.separation;

    auto draw = [&](std::size_t n, std::vector<double>& xs, std::vector<int>& ys) {
        xs.resize(2 * n);
        ys.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int y = coin(rng) ? 1 : 0;
            const double sign = y == 1 ? 1.0 : -1.0;
            xs[2 * i] = sign * half * ux + normal(rng);
            xs[2 * i + 1] = sign * half * uy + normal(rng);
            ys[i] = y;
        }
    };
    draw(params_.train_size, train_x_, clean_label_);
    draw(params_.val_size, val_x_, val_label_);

    std::bernoulli_distribution corrupt(params_.corruption_prob);
    train_label_ = clean_label_;
    for (int& y : train_label_) {
        if (corrupt(rng)) y = 1 - y;
    }
}

std::size_t ReweightTask::weight_dim() const { return ClassifierLayout{params_.classifier_hidden}.size(); }
std::size_t ReweightTask::hyper_dim() const { return WeightNetLayout{params_.weight_hidden}.size(); }

double ReweightTask::flipped_fraction() const {
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < train_label_.size(); ++i) flipped += train_label_[i] != clean_label_[i] ? 1 : 0;
    return static_cast<double>(flipped) / static_cast<double>(train_label_.size());
}

double ReweightTask::example_weight(const ParamVector& lambda, double loss) const {
    if (lambda.size() != hyper_dim()) throw DimensionError("reweight: hyperparameter length mismatch");
    return weigh(WeightNetLayout{params_.weight_hidden}, lambda, loss, params_.weight_floor).value;
}

std::vector<double> ReweightTask::example_losses(const ParamVector& w, const Batch& batch) const {
    batch.require_within(params_.train_size);
    const ClassifierLayout CL{params_.classifier_hidden};
    std::vector<double> out;
    out.reserve(batch.size());
    for (std::size_t i : batch.indices()) {
        const auto p = classify(CL, w, train_x_[2 * i], train_x_[2 * i + 1]);
        out.push_back(bce(p.logit, train_label_[i]));
    }
    return out;
}

double ReweightTask::train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    const WeightNetLayout WL{params_.weight_hidden};
    const auto losses = example_losses(w, batch);
    double acc = 0.0;
    for (double l : losses) acc += weigh(WL, lambda, l, params_.weight_floor).value * l;
    return acc / static_cast<double>(batch.size());
}

double ReweightTask::val_loss(const ParamVector& w, const ParamVector&, const Batch& batch) const {
    batch.require_within(params_.val_size);
    const ClassifierLayout CL{params_.classifier_hidden};
    double acc = 0.0;
    for (std::size_t i : batch.indices()) {
        acc += bce(classify(CL, w, val_x_[2 * i], val_x_[2 * i + 1]).logit, val_label_[i]);
    }
    return acc / static_cast<double>(batch.size());
}

TrainGradients ReweightTask::train_grads_impl(const ParamVector& w, const ParamVector& lambda, const Batch& batch,
                                              bool need_lambda) const {
    batch.require_within(params_.train_size);
    const ClassifierLayout CL{params_.classifier_hidden};
    const WeightNetLayout WL{params_.weight_hidden};
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    std::vector<double> gw(CL.size(), 0.0);
    std::vector<double> gl(need_lambda ? WL.size() : 0, 0.0);
    ParamVector grad_w(std::move(gw));
    ParamVector grad_l(std::move(gl));
    for (std::size_t i : batch.indices()) {
        const double x0 = train_x_[2 * i];
        const double x1 = train_x_[2 * i + 1];
        const int y = train_label_[i];
        const auto p = classify(CL, w, x0, x1);
        const double loss = bce(p.logit, y);
        const auto wp = weigh(WL, lambda, loss, params_.weight_floor);
        // d(weight(l) * l)/dl = weight + weight'(l) * l
        const double dl = (wp.value + wp.dvalue_dloss * loss) * inv_n;
        classifier_backward(CL, w, p, x0, x1, dl * (sigmoid(p.logit) - static_cast<double>(y)), grad_w);
        if (need_lambda) weight_backward(WL, lambda, loss, wp.dvalue_dq * loss * inv_n, grad_l);
    }
    grad_w.check_finite("reweight train gradient");
    return {std::move(grad_w), std::move(grad_l)};
}

ParamVector ReweightTask::train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    return train_grads_impl(w, lambda, batch, false).dw;
}

TrainGradients ReweightTask::train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    return train_grads_impl(w, lambda, batch, true);
}

ValGradients ReweightTask::val_grads(const ParamVector& w, const ParamVector&, const Batch& batch) const {
    batch.require_within(params_.val_size);
    const ClassifierLayout CL{params_.classifier_hidden};
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    ParamVector alpha(CL.size());
    for (std::size_t i : batch.indices()) {
        const double x0 = val_x_[2 * i];
        const double x1 = val_x_[2 * i + 1];
        const auto p = classify(CL, w, x0, x1);
        classifier_backward(CL, w, p, x0, x1, inv_n * (sigmoid(p.logit) - static_cast<double>(val_label_[i])), alpha);
    }
    alpha.check_finite("reweight validation gradient");
    return {std::move(alpha), ParamVector::zeros(hyper_dim())};
}

double ReweightTask::val_accuracy(const ParamVector& w) const {
    const ClassifierLayout CL{params_.classifier_hidden};
    std::size_t correct = 0;
    for (std::size_t i = 0; i < params_.val_size; ++i) {
        const int pred = classify(CL, w, val_x_[2 * i], val_x_[2 * i + 1]).logit > 0.0 ? 1 : 0;
        correct += pred == val_label_[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(params_.val_size);
}

ParamVector ReweightTask::initial_weights(std::uint64_t seed) const {
    const ClassifierLayout CL{params_.classifier_hidden};
    Rng rng = make_rng(seed, {0x3e3f, 1});
    std::uniform_real_distribution<double> first(-1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0));
    const double b = 1.0 / std::sqrt(static_cast<double>(CL.hc));
    std::uniform_real_distribution<double> second(-b, b);
    ParamVector w(CL.size());
    for (std::size_t i = 0; i < CL.u(); ++i) w[i] = first(rng);
    for (std::size_t i = CL.u(); i < CL.size(); ++i) w[i] = second(rng);
    return w;
}

ParamVector ReweightTask::initial_hyper(std::uint64_t seed) const {
    const WeightNetLayout WL{params_.weight_hidden};
    Rng rng = make_rng(seed, {0x3e3f, 2});
    std::uniform_real_distribution<double> first(-1.0, 1.0);
    const double b = 1.0 / std::sqrt(static_cast<double>(WL.hw));
    std::uniform_real_distribution<double> second(-b, b);
    ParamVector lambda(WL.size());
    for (std::size_t i = 0; i < WL.U2(); ++i) lambda[i] = first(rng);
    for (std::size_t i = WL.U2(); i < WL.size(); ++i) lambda[i] = second(rng);
    return lambda;
}

} // namespace hypergrad
