#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace ampcs {

/// Standard normal density.
inline double normal_pdf(double x) noexcept {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Standard normal CDF, accurate in both tails.
inline double normal_cdf(double x) noexcept {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Upper tail 1 - Phi(x).
inline double normal_sf(double x) noexcept {
    return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

/// Phi(hi) - Phi(lo) for lo <= hi without cancellation in the tails.
inline double normal_interval(double lo, double hi) noexcept {
    if (lo >= 0.0) return normal_sf(lo) - normal_sf(hi);
    if (hi <= 0.0) return normal_cdf(hi) - normal_cdf(lo);
    return 1.0 - normal_cdf(lo) - normal_sf(hi);
}

/// Gauss-Hermite rule for E[g(Z)], Z ~ N(0,1) (probabilists' weight).
/// Weights sum to one.
struct HermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Golub-Welsch: eigen-decomposition of the Jacobi matrix of the
/// probabilists' Hermite recurrence (off-diagonal sqrt(k)).
inline HermiteRule make_hermite_rule(int n) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    HermiteRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = eig.eigenvalues()(i);
        const double v0 = eig.eigenvectors()(0, i);
        rule.weights[i] = v0 * v0;
    }
    return rule;
}

/// Cached rules, shared read-only across threads.
inline std::shared_ptr<const HermiteRule> hermite_rule(int n) {
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const HermiteRule>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_shared<const HermiteRule>(make_hermite_rule(n));
    return slot;
}

} // namespace ampcs
