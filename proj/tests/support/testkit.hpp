#pragma once

// Generators and independent oracles shared by the unit and acceptance tests.

#include "hypergrad/grad_engine.hpp"
#include "hypergrad/problems.hpp"
#include "hypergrad/rng.hpp"
#include "hypergrad/vecmath.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

namespace testkit {

using hypergrad::Batch;
using hypergrad::InnerProblem;
using hypergrad::ParamVector;
using hypergrad::Rng;

inline ParamVector gaussian(Rng& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return ParamVector(std::move(v));
}

inline ParamVector unit(Rng& rng, std::size_t n) { return hypergrad::normalize(gaussian(rng, n)); }

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Plain loops, no library helpers.
inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l2(const ParamVector& a) {
    double s = 0.0;
    for (double x : a.values()) s += x * x;
    return std::sqrt(s);
}

inline double rel_err(const ParamVector& got, const ParamVector& want) {
    double num = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) num += (got[i] - want[i]) * (got[i] - want[i]);
    return std::sqrt(num) / std::max(l2(want), 1e-300);
}

inline double cosine(const ParamVector& a, const ParamVector& b) {
    double ab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i];
    return ab / (l2(a) * l2(b));
}

// Unrolls T plain gradient steps without touching the library's rollout code.
inline ParamVector unroll(const InnerProblem& p, const ParamVector& lambda, ParamVector w,
                          const std::vector<Batch>& batches) {
    for (const auto& b : batches) {
        const ParamVector g = p.train_grad_w(w, lambda, b);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= p.inner_lr() * g[i];
    }
    return w;
}

// d L_val(w_T(lambda), lambda) / d lambda by central differences through the
// whole unrolled training run: the reference every reverse-mode result is
// held against.
inline ParamVector unrolled_hypergradient_fd(const InnerProblem& p, const ParamVector& lambda, const ParamVector& w0,
                                             const std::vector<Batch>& batches, const Batch& val, double h = 1e-5) {
    ParamVector out(lambda.size());
    for (std::size_t j = 0; j < lambda.size(); ++j) {
        ParamVector up = lambda, dn = lambda;
        up[j] += h;
        dn[j] -= h;
        const double fu = p.val_loss(unroll(p, up, w0, batches), up, val);
        const double fd = p.val_loss(unroll(p, dn, w0, batches), dn, val);
        out[j] = (fu - fd) / (2 * h);
    }
    return out;
}

// Central differences of a scalar function of w.
template <class F>
ParamVector fd_gradient(F&& f, const ParamVector& x, double h = 1e-6) {
    ParamVector g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        ParamVector up = x, dn = x;
        up[i] += h;
        dn[i] -= h;
        g[i] = (f(up) - f(dn)) / (2 * h);
    }
    return g;
}

inline std::vector<Batch> full_batches(std::size_t n, std::size_t T) { return std::vector<Batch>(T, Batch::range(n)); }

} // namespace testkit
