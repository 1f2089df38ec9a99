#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ampcs {

/// Base class for every error raised by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class dimension_error : public error {
public:
    using error::error;
};

class parameter_error : public error {
public:
    using error::error;
};

/// A requested evaluation path does not support the given prior/nonlinearity.
class capability_error : public error {
public:
    using error::error;
};

/// An iterative computation hit its iteration cap.
class convergence_error : public error {
public:
    using error::error;
};

/// A target lies outside the achievable interval [lo, hi].
class range_error : public error {
public:
    range_error(const std::string& what, double lo, double hi)
        : error(what + " (achievable interval [" + std::to_string(lo) + ", " + std::to_string(hi) + "])"),
          lo_(lo), hi_(hi) {}

    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }

private:
    double lo_;
    double hi_;
};

/// Calibration requested outside the region where lambda(tau) >= 0.
class validity_error : public error {
public:
    using error::error;
};

/// Least squares with lambda = 0 and n < N has no unique solution.
class underdetermined_error : public error {
public:
    using error::error;
};

class config_error : public error {
public:
    using error::error;
};

/// Raised by a single AMP step; run_amp rethrows it as amp_divergence with the trace attached.
class divergence_error : public error {
public:
    divergence_error(const std::string& what, std::size_t iteration)
        : error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

} // namespace ampcs
