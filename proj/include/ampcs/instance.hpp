#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ampcs/operator.hpp"
#include "ampcs/prior.hpp"

namespace ampcs {

/// y = A s0 + w, with the realized delta = n / N.
struct ProblemInstance {
    MeasurementOperator op;
    Vec s0;
    Vec w;
    Vec y;
    double v = 0.0;
    double delta = 1.0;

    Eigen::Index n() const noexcept { return op.rows(); }
    Eigen::Index big_n() const noexcept { return op.cols(); }
};

/// round-half-up of delta * N.
inline Eigen::Index rows_for(double delta, Eigen::Index big_n) {
    return static_cast<Eigen::Index>(std::floor(delta * static_cast<double>(big_n) + 0.5));
}

/// Assembles an instance from an explicit operator and signal; noise drawn from `noise_seed`.
inline ProblemInstance make_instance(MeasurementOperator op, Vec s0, double v, std::uint64_t noise_seed) {
    if (s0.size() != op.cols()) throw dimension_error("make_instance: s0 length must equal N");
    if (!(v >= 0.0)) throw parameter_error("noise variance v must be >= 0");
    Vec w = Vec::Zero(op.rows());
    if (v > 0.0) {
        Engine rng(noise_seed);
        std::normal_distribution<double> gauss(0.0, std::sqrt(v));
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = gauss(rng);
    }
    Vec y = op.apply(s0) + w;
    const double delta = op.delta();
    return ProblemInstance{std::move(op), std::move(s0), std::move(w), std::move(y), v, delta};
}

inline ProblemInstance generate_instance(const PriorDistribution& prior, double delta, Eigen::Index big_n, double v,
                                         OperatorKind kind, std::uint64_t seed) {
    if (!(delta > 0.0 && delta <= 1.0)) throw parameter_error("delta must lie in (0, 1]");
    if (!(v >= 0.0)) throw parameter_error("noise variance v must be >= 0");
    if (big_n < 1) throw dimension_error("N must be >= 1");
    const Eigen::Index n = rows_for(delta, big_n);
    if (n < 1) throw dimension_error("round(delta * N) must be >= 1");
    auto op = MeasurementOperator::build(kind, n, big_n, derive_seed(seed, {stream::matrix}));
    Vec s0 = sample_prior(prior, static_cast<std::size_t>(big_n), derive_seed(seed, {stream::signal}));
    return make_instance(std::move(op), std::move(s0), v, derive_seed(seed, {stream::noise}));
}

} // namespace ampcs
