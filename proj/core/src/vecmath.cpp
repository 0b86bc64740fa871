#include "hypergrad/vecmath.hpp"

#include "hypergrad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace hypergrad {

ParamVector::ParamVector(std::size_t n, double fill) : data_(n, fill) {
    check_finite("ParamVector");
}

ParamVector::ParamVector(std::vector<double> values) : data_(std::move(values)) {
    check_finite("ParamVector");
}

ParamVector::ParamVector(std::initializer_list<double> values) : data_(values) {
    check_finite("ParamVector");
}

void ParamVector::check_finite(const char* where) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw NonFiniteError(fmt::format("{}: non-finite entry {} at index {}", where, data_[i], i));
        }
    }
}

void require_same_size(const ParamVector& a, const ParamVector& b, const char* where) {
    if (a.size() != b.size()) {
        throw DimensionError(fmt::format("{}: length mismatch {} vs {}", where, a.size(), b.size()));
    }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
    require_same_size(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    check_finite("operator+=");
    return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
    require_same_size(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    check_finite("operator-=");
    return *this;
}

ParamVector& ParamVector::operator*=(double s) {
    for (double& v : data_) v *= s;
    check_finite("operator*=");
    return *this;
}

ParamVector& ParamVector::axpy(double s, const ParamVector& x) {
    require_same_size(*this, x, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * x.data_[i];
    check_finite("axpy");
    return *this;
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double s, ParamVector a) { return a *= s; }
ParamVector operator*(ParamVector a, double s) { return a *= s; }

double dot(const ParamVector& a, const ParamVector& b) {
    require_same_size(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm(const ParamVector& x) {
    // Scaled accumulation keeps tiny and huge vectors representable.
    double scale = norm_inf(x);
    if (scale == 0.0) return 0.0;
    double acc = 0.0;
    for (double v : x.values()) {
        const double r = v / scale;
        acc += r * r;
    }
    return scale * std::sqrt(acc);
}

double norm_inf(const ParamVector& x) {
    double m = 0.0;
    for (double v : x.values()) m = std::max(m, std::abs(v));
    return m;
}

ParamVector normalize(const ParamVector& x) {
    const double n = norm(x);
    if (n == 0.0) throw NormalizationError("normalize: zero vector");
    ParamVector out = x;
    for (double& v : out.values()) v /= n;
    return out;
}

double cosine_similarity(const ParamVector& a, const ParamVector& b) {
    require_same_size(a, b, "cosine_similarity");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw NormalizationError("cosine_similarity: zero vector");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] / na) * (b[i] / nb);
    return std::clamp(acc, -1.0, 1.0);
}

ParamVector lerp(const ParamVector& a, const ParamVector& b, double t) {
    require_same_size(a, b, "lerp");
    ParamVector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - t) * a[i] + t * b[i];
    out.check_finite("lerp");
    return out;
}

ParamVector weighted_average(std::span<const ParamVector> points, std::span<const double> weights) {
    if (points.empty()) throw DomainError("weighted_average: empty input");
    if (points.size() != weights.size()) {
        throw DimensionError(fmt::format("weighted_average: {} points but {} weights", points.size(), weights.size()));
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weighted_average: weights must be finite and nonnegative");
        total += w;
    }
    if (total <= 0.0) throw DomainError("weighted_average: weights sum to zero");

    ParamVector out(points.front().size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        require_same_size(out, points[i], "weighted_average");
        const double c = weights[i] / total;
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += c * points[i][j];
    }
    out.check_finite("weighted_average");
    return out;
}

} // namespace hypergrad
