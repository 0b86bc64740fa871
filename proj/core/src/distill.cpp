#include "hypergrad/distill.hpp"

#include "hypergrad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace hypergrad {

namespace {

void require_gamma(double gamma, const char* where) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError(fmt::format("{}: gamma must lie in [0, 1)", where));
}

std::size_t round_off(double v) { return static_cast<std::size_t>(std::llround(v)); }

std::vector<std::size_t> draw_without_replacement(std::span<const std::size_t> pool, std::size_t count, Rng& rng) {
    std::vector<std::size_t> v(pool.begin(), pool.end());
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
        std::swap(v[i], v[pick(rng)]);
    }
    v.resize(count);
    return v;
}

} // namespace

DistillState make_distill_state(double gamma, std::size_t batch_size) {
    require_gamma(gamma, "make_distill_state");
    DistillState s;
    s.gamma = gamma;
    s.batch_size = batch_size;
    return s;
}

double forward_mixing(double gamma, std::size_t t) {
    require_gamma(gamma, "forward_mixing");
    if (t <= 1) return 0.0;
    const double gt = std::pow(gamma, static_cast<double>(t));
    return (gamma - gt) / (1.0 - gt);
}

double backward_mixing(double gamma, std::size_t s) {
    require_gamma(gamma, "backward_mixing");
    if (s <= 1) return 0.0;
    const double g1 = std::pow(gamma, static_cast<double>(s - 1));
    const double g2 = std::pow(gamma, static_cast<double>(s));
    return (1.0 - g1) / (1.0 - g2);
}

double geometric_sum(double gamma, std::size_t t) {
    if (gamma == 1.0) return static_cast<double>(t);
    return (1.0 - std::pow(gamma, static_cast<double>(t))) / (1.0 - gamma);
}

Batch subsample(const Batch& batch, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("subsample: p must lie in [0, 1]");
    const std::size_t count = std::min(batch.size(), round_off(static_cast<double>(batch.size()) * p));
    return Batch(draw_without_replacement(batch.indices(), count, rng));
}

Batch mix_batches(const Batch& older, const Batch& newer, double p, std::size_t batch_size, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("mix_batches: p must lie in [0, 1]");
    if (newer.size() < batch_size) {
        throw DomainError(fmt::format("mix_batches: newer batch has {} < {} indices", newer.size(), batch_size));
    }
    const std::size_t from_older = std::min(older.size(), round_off(static_cast<double>(batch_size) * p));
    const std::size_t from_newer = batch_size - from_older;

    std::vector<std::size_t> out = draw_without_replacement(older.indices(), from_older, rng);
    // Shuffle all of `newer`; the first from_newer non-duplicates are the
    // subsample, later entries refill collisions.
    const std::vector<std::size_t> order = draw_without_replacement(newer.indices(), newer.size(), rng);
    std::size_t taken = 0;
    for (std::size_t idx : order) {
        if (taken == from_newer) break;
        if (std::find(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(from_older), idx) !=
            out.begin() + static_cast<std::ptrdiff_t>(from_older)) {
            continue;
        }
        out.push_back(idx);
        ++taken;
    }
    return Batch(std::move(out));
}

DistillState distill_forward_update(DistillState state, const ParamVector& w_prev, const Batch& batch_t, Rng& rng) {
    if (state.t == 0) {
        state.w_star = w_prev;
        state.d_star = batch_t;
        state.batch_size = batch_t.size();
        state.t = 1;
        return state;
    }
    const std::size_t t = state.t + 1;
    const double p = forward_mixing(state.gamma, t);
    ParamVector w = p * state.w_star;
    w.axpy(1.0 - p, w_prev);
    state.w_star = std::move(w);
    state.d_star = mix_batches(state.d_star, batch_t, p, state.batch_size, rng);
    state.t = t;
    return state;
}

double estimator_predict(const EstimatorState& est, std::size_t t, double v_norm) {
    if (t == 0) throw DomainError("estimator_predict: t must be positive");
    if (v_norm < 0.0) throw DomainError("estimator_predict: negative norm");
    return est.theta * v_norm * geometric_sum(est.gamma, t);
}

double fit_theta(std::span<const double> x, std::span<const double> y) {
    if (x.empty() || x.size() != y.size()) throw EstimationError("fit_theta: need equal, nonempty samples");
    double xx = 0.0;
    double xy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx += x[i] * x[i];
        xy += x[i] * y[i];
    }
    if (xx == 0.0) throw EstimationError("fit_theta: x is identically zero");
    return xy / xx;
}

Hypergradient hyperdistill_hypergradient(const InnerProblem& problem, const DistillState& state,
                                         const EstimatorState& est, const ParamVector& lambda,
                                         const ValGradients& at_wt, const DistillOptions& options) {
    if (state.t == 0) throw DomainError("hyperdistill_hypergradient: distill state has not been updated");
    const ParamVector v = vjp_B(problem, {at_wt.alpha, state.w_star, lambda, state.d_star});
    const double v_norm = norm(v);
    if (v_norm == 0.0) {
        spdlog::warn("hyperdistill: distilled JVP vanished at step {}; second-order term set to zero", state.t);
        return {at_wt.g_fo, ParamVector::zeros(problem.hyper_dim()), 1};
    }
    const double pi = options.fixed_pi ? *options.fixed_pi : estimator_predict(est, state.t, v_norm);
    ParamVector g_so = v;
    g_so *= pi / v_norm;
    return {at_wt.g_fo, std::move(g_so), 1};
}

EstimatorState linear_estimation(const InnerProblem& problem, double gamma, const ParamVector& lambda,
                                 const ParamVector& phi, std::vector<Batch> batches, const Batch& val_batch,
                                 Rng& rng, std::size_t* jvp_count) {
    require_gamma(gamma, "linear_estimation");
    const std::size_t T = batches.size();
    if (T == 0) throw TrajectoryError("linear_estimation: empty batch sequence");

    const Trajectory traj = run_inner(problem, lambda, phi, std::move(batches), false);
    const ParamVector& w0 = traj.w0;
    const ParamVector& wT = traj.wT;
    auto interpolated = [&](std::size_t t) { return lerp(w0, wT, static_cast<double>(t) / static_cast<double>(T)); };

    const ValGradients vg = val_grads(problem, wT, lambda, val_batch);
    const ParamVector& alpha_T = vg.alpha;
    ParamVector alpha = alpha_T;
    ParamVector g_so = ParamVector::zeros(problem.hyper_dim());
    std::size_t jvps = 0;

    EstimatorState est;
    est.gamma = gamma;
    est.samples.reserve(T);
    ParamVector w_star;
    Batch d_star;
    std::vector<double> xs, ys;

    for (std::size_t t = T; t >= 1; --t) {
        const ParamVector w_hat = interpolated(t - 1);
        const Batch& batch = traj.batches[t - 1];
        g_so += vjp_B(problem, {alpha, w_hat, lambda, batch});
        ++jvps;
        if (t > 1) {
            alpha = vjp_A(problem, {alpha, w_hat, lambda, batch});
            ++jvps;
        }

        // Horizon s ends at T; its distilled point folds in w_{T-s}, D_{T-s+1}.
        const std::size_t s = T - t + 1;
        if (s == 1) {
            w_star = w_hat;
            d_star = batch;
        } else {
            const double p = backward_mixing(gamma, s);
            ParamVector w = p * w_star;
            w.axpy(1.0 - p, w_hat);
            w_star = std::move(w);
            d_star = mix_batches(d_star, batch, p, batch.size(), rng);
        }

        const ParamVector v = vjp_B(problem, {alpha_T, w_star, lambda, d_star});
        ++jvps;
        const double v_norm = norm(v);
        const double x = v_norm * geometric_sum(gamma, s);
        const double y = v_norm > 0.0 ? dot(v, g_so) / v_norm : 0.0;
        est.samples.push_back({s, x, y});
        xs.push_back(x);
        ys.push_back(y);
    }
    if (jvp_count) *jvp_count = jvps;
    est.theta = fit_theta(xs, ys);
    return est;
}

} // namespace hypergrad
