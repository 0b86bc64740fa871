#include "hypergrad/errors.hpp"
#include "hypergrad/problems.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace hypergrad {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using CMap = Eigen::Map<const Eigen::MatrixXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

// Views into the flat hyperparameter vector: W1 (H x 1), b1, W2 (H x H), b2,
// W3 (H x H), b3. Matrices are column-major.
struct FeatureParams {
    CMap W1, W2, W3;
    CVecMap b1, b2, b3;

    FeatureParams(const ParamVector& lambda, Eigen::Index h)
        : W1(lambda.raw().data(), h, 1),
          W2(lambda.raw().data() + 2 * h, h, h),
          W3(lambda.raw().data() + 3 * h + h * h, h, h),
          b1(lambda.raw().data() + h, h),
          b2(lambda.raw().data() + 2 * h + h * h, h),
          b3(lambda.raw().data() + 3 * h + 2 * h * h, h) {}
};

struct Forward {
    Mat Z1, Z2, Z3; // pre-activations, H x n
    Mat H1, H2, H3; // activations
    RowVec x;
};

Forward features(const FeatureParams& fp, RowVec x) {
    Forward f;
    f.x = std::move(x);
    f.Z1 = (fp.W1 * f.x).colwise() + fp.b1;
    f.H1 = f.Z1.cwiseMax(0.0);
    f.Z2 = (fp.W2 * f.H1).colwise() + fp.b2;
    f.H2 = f.Z2.cwiseMax(0.0);
    f.Z3 = (fp.W3 * f.H2).colwise() + fp.b3;
    f.H3 = f.Z3.cwiseMax(0.0);
    return f;
}

Mat relu_mask(const Mat& z) { return (z.array() > 0.0).cast<double>().matrix(); }

// Pulls an upstream gradient on the last hidden layer back to the feature
// parameters, laid out like lambda.
ParamVector backprop_features(const FeatureParams& fp, const Forward& f, const Mat& dH3, Eigen::Index h) {
    std::vector<double> g(static_cast<std::size_t>(3 * h + 2 * h * h + h), 0.0);
    Eigen::Map<Mat> gW1(g.data(), h, 1);
    Eigen::Map<Vec> gb1(g.data() + h, h);
    Eigen::Map<Mat> gW2(g.data() + 2 * h, h, h);
    Eigen::Map<Vec> gb2(g.data() + 2 * h + h * h, h);
    Eigen::Map<Mat> gW3(g.data() + 3 * h + h * h, h, h);
    Eigen::Map<Vec> gb3(g.data() + 3 * h + 2 * h * h, h);

    const Mat dZ3 = dH3.cwiseProduct(relu_mask(f.Z3));
    gW3.noalias() = dZ3 * f.H2.transpose();
    gb3 = dZ3.rowwise().sum();
    const Mat dZ2 = (fp.W3.transpose() * dZ3).cwiseProduct(relu_mask(f.Z2));
    gW2.noalias() = dZ2 * f.H1.transpose();
    gb2 = dZ2.rowwise().sum();
    const Mat dZ1 = (fp.W2.transpose() * dZ2).cwiseProduct(relu_mask(f.Z1));
    gW1.noalias() = dZ1 * f.x.transpose();
    gb1 = dZ1.rowwise().sum();
    return ParamVector(std::move(g));
}

RowVec gather(std::span<const double> values, const Batch& batch) {
    RowVec out(static_cast<Eigen::Index>(batch.size()));
    Eigen::Index j = 0;
    for (std::size_t i : batch.indices()) out(j++) = values[i];
    return out;
}

struct Head {
    CVecMap v;
    double c;
    explicit Head(const ParamVector& w, Eigen::Index h) : v(w.raw().data(), h), c(w[static_cast<std::size_t>(h)]) {}
};

} // namespace

SinusoidTask::SinusoidTask(const Params& params, double amplitude, double phase, std::uint64_t task_seed)
    : InnerProblem(params.inner_lr, params.backend, task_seed), params_(params), amplitude_(amplitude), phase_(phase) {
    if (params_.hidden == 0 || params_.shots == 0 || params_.val_points == 0) {
        throw ConfigError("sinusoid: hidden, shots and val_points must be positive");
    }
    Rng rng = make_rng(task_seed, {0x5151});
    std::uniform_real_distribution<double> input(-5.0, 5.0);
    auto fill = [&](std::vector<double>& xs, std::vector<double>& ys, std::size_t n) {
        xs.resize(n);
        ys.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            xs[i] = input(rng);
            ys[i] = amplitude_ * std::sin(xs[i] - phase_);
        }
    };
    fill(train_x_, train_y_, params_.shots);
    fill(val_x_, val_y_, params_.val_points);
}

std::size_t SinusoidTask::hyper_dim() const {
    const std::size_t h = params_.hidden;
    return 3 * h + 2 * h * h + h;
}

std::vector<double> SinusoidTask::predict(const ParamVector& w, const ParamVector& lambda,
                                          std::span<const double> xs) const {
    const auto h = static_cast<Eigen::Index>(params_.hidden);
    FeatureParams fp(lambda, h);
    Head head(w, h);
    RowVec x = Eigen::Map<const RowVec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    const Forward f = features(fp, std::move(x));
    RowVec out = (head.v.transpose() * f.H3).array() + head.c;
    return {out.data(), out.data() + out.size()};
}

namespace {

struct Residuals {
    Forward f;
    RowVec r;
    double n;
};

Residuals residuals(const ParamVector& w, const ParamVector& lambda, std::span<const double> xs,
                    std::span<const double> ys, const Batch& batch, Eigen::Index h) {
    FeatureParams fp(lambda, h);
    Head head(w, h);
    Residuals res{features(fp, gather(xs, batch)), {}, static_cast<double>(batch.size())};
    res.r = ((head.v.transpose() * res.f.H3).array() + head.c).matrix() - gather(ys, batch);
    return res;
}

} // namespace

double SinusoidTask::train_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    batch.require_within(train_x_.size());
    const auto res = residuals(w, lambda, train_x_, train_y_, batch, static_cast<Eigen::Index>(params_.hidden));
    return res.r.squaredNorm() / res.n;
}

double SinusoidTask::val_loss(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    batch.require_within(val_x_.size());
    const auto res = residuals(w, lambda, val_x_, val_y_, batch, static_cast<Eigen::Index>(params_.hidden));
    return res.r.squaredNorm() / res.n;
}

ParamVector SinusoidTask::train_grad_w(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    batch.require_within(train_x_.size());
    const auto h = static_cast<Eigen::Index>(params_.hidden);
    const auto res = residuals(w, lambda, train_x_, train_y_, batch, h);
    const RowVec dout = (2.0 / res.n) * res.r;
    std::vector<double> g(params_.hidden + 1);
    Eigen::Map<Vec>(g.data(), h) = res.f.H3 * dout.transpose();
    g.back() = dout.sum();
    return ParamVector(std::move(g));
}

TrainGradients SinusoidTask::train_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    batch.require_within(train_x_.size());
    const auto h = static_cast<Eigen::Index>(params_.hidden);
    const auto res = residuals(w, lambda, train_x_, train_y_, batch, h);
    const RowVec dout = (2.0 / res.n) * res.r;
    std::vector<double> g(params_.hidden + 1);
    Eigen::Map<Vec>(g.data(), h) = res.f.H3 * dout.transpose();
    g.back() = dout.sum();

    FeatureParams fp(lambda, h);
    Head head(w, h);
    const Mat dH3 = head.v * dout;
    return {ParamVector(std::move(g)), backprop_features(fp, res.f, dH3, h)};
}

ValGradients SinusoidTask::val_grads(const ParamVector& w, const ParamVector& lambda, const Batch& batch) const {
    batch.require_within(val_x_.size());
    const auto h = static_cast<Eigen::Index>(params_.hidden);
    const auto res = residuals(w, lambda, val_x_, val_y_, batch, h);
    const RowVec dout = (2.0 / res.n) * res.r;
    std::vector<double> g(params_.hidden + 1);
    Eigen::Map<Vec>(g.data(), h) = res.f.H3 * dout.transpose();
    g.back() = dout.sum();

    FeatureParams fp(lambda, h);
    Head head(w, h);
    const Mat dH3 = head.v * dout;
    return {ParamVector(std::move(g)), backprop_features(fp, res.f, dH3, h)};
}

ParamVector SinusoidTask::analytic_hvp(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                                       const Batch& batch) const {
    batch.require_within(train_x_.size());
    const auto h = static_cast<Eigen::Index>(params_.hidden);
    const auto res = residuals(w, lambda, train_x_, train_y_, batch, h);
    Head a(alpha, h);
    // The loss is quadratic in the head: H = (2/n) sum_i [h_i;1][h_i;1]^T.
    const RowVec s = ((a.v.transpose() * res.f.H3).array() + a.c).matrix() * (2.0 / res.n);
    std::vector<double> g(params_.hidden + 1);
    Eigen::Map<Vec>(g.data(), h) = res.f.H3 * s.transpose();
    g.back() = s.sum();
    return ParamVector(std::move(g));
}

ParamVector SinusoidTask::analytic_mixed(const ParamVector& alpha, const ParamVector& w, const ParamVector& lambda,
                                         const Batch& batch) const {
    batch.require_within(train_x_.size());
    const auto h = static_cast<Eigen::Index>(params_.hidden);
    const auto res = residuals(w, lambda, train_x_, train_y_, batch, h);
    FeatureParams fp(lambda, h);
    Head head(w, h);
    Head a(alpha, h);
    // d/dlambda of alpha . grad_w L = (2/n) sum_i (s_i r_i), s_i = alpha.[h_i;1].
    const RowVec s = ((a.v.transpose() * res.f.H3).array() + a.c).matrix();
    const Mat dH3 = (2.0 / res.n) * (head.v * s + a.v * res.r);
    return backprop_features(fp, res.f, dH3, h);
}

ParamVector SinusoidTask::initial_weights(std::uint64_t seed) const {
    Rng rng = make_rng(seed, {0x5157, 1});
    const double bound = 1.0 / std::sqrt(static_cast<double>(params_.hidden));
    std::uniform_real_distribution<double> u(-bound, bound);
    ParamVector w(weight_dim());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = u(rng);
    return w;
}

ParamVector SinusoidTask::initial_hyper(std::uint64_t seed) const {
    Rng rng = make_rng(seed, {0x5157, 2});
    const std::size_t h = params_.hidden;
    ParamVector lambda(hyper_dim());
    // First layer and its bias have fan-in 1; the two hidden layers fan-in h.
    std::uniform_real_distribution<double> first(-1.0, 1.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    std::uniform_real_distribution<double> hidden(-bound, bound);
    for (std::size_t i = 0; i < 2 * h; ++i) lambda[i] = first(rng);
    for (std::size_t i = 2 * h; i < lambda.size(); ++i) lambda[i] = hidden(rng);
    return lambda;
}

} // namespace hypergrad
