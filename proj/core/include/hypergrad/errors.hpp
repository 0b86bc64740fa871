#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hypergrad {

// Root of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NormalizationError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

// NaN or Inf produced or supplied at an operation boundary.
class NonFiniteError : public DomainError {
public:
    using DomainError::DomainError;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class TrajectoryError : public Error {
public:
    using Error::Error;
};

class EstimationError : public Error {
public:
    using Error::Error;
};

class NeumannDivergence : public Error {
public:
    using Error::Error;
};

// Inner rollout produced non-finite weights.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : Error(what + " (inner step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace hypergrad
