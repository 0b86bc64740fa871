#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace hypergrad {

// Flat real vector used for weights, hyperparameters, gradients and VJP
// results. Length is fixed at construction; every entry is finite at every
// operation boundary (NonFiniteError otherwise).
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::size_t n, double fill = 0.0);
    explicit ParamVector(std::vector<double> values);
    ParamVector(std::initializer_list<double> values);

    static ParamVector zeros(std::size_t n) { return ParamVector(n, 0.0); }

    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    // Throws NonFiniteError naming `where` if any entry is NaN/Inf.
    void check_finite(const char* where) const;

    ParamVector& operator+=(const ParamVector& other);
    ParamVector& operator-=(const ParamVector& other);
    ParamVector& operator*=(double s);
    // this += s * x
    ParamVector& axpy(double s, const ParamVector& x);

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    std::vector<double> data_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double s, ParamVector a);
ParamVector operator*(ParamVector a, double s);

double dot(const ParamVector& a, const ParamVector& b);
double norm(const ParamVector& x);
double norm_inf(const ParamVector& x);

// x / ||x||_2. Zero input throws NormalizationError.
ParamVector normalize(const ParamVector& x);

// a.b / (||a|| ||b||), clamped to [-1, 1].
double cosine_similarity(const ParamVector& a, const ParamVector& b);

// (1 - t) * a + t * b
ParamVector lerp(const ParamVector& a, const ParamVector& b, double t);

// sum_i (w_i / sum_j w_j) * points_i. Weights must be nonnegative with a
// positive sum.
ParamVector weighted_average(std::span<const ParamVector> points, std::span<const double> weights);

void require_same_size(const ParamVector& a, const ParamVector& b, const char* where);

} // namespace hypergrad
