#pragma once

#include <cmath>
#include <limits>
#include <variant>
#include <vector>

#include "ampcs/errors.hpp"
#include "ampcs/prior.hpp"

namespace ampcs {

/// eta(x; theta) = sign(x) max(|x| - theta, 0).
inline double soft_threshold(double x, double theta) noexcept {
    if (x > theta) return x - theta;
    if (x < -theta) return x + theta;
    return 0.0;
}

/// Slope of the soft threshold; 0 on the closed set |x| <= theta.
inline double soft_threshold_deriv(double x, double theta) noexcept {
    return std::abs(x) > theta ? 1.0 : 0.0;
}

struct SoftThreshold {};

/// Bayes conditional mean E{X | X + sigma Z = x} for a point-mass prior, with theta = sigma.
class PosteriorMean {
public:
    explicit PosteriorMean(PointMassMixture prior) : prior_(std::move(prior)) {}

    const PointMassMixture& prior() const noexcept { return prior_; }

    struct Moments {
        double mean;
        double variance;
    };

    Moments posterior(double x, double sigma) const {
        const auto& atoms = prior_.atoms();
        if (sigma == 0.0) {
            double best = atoms.front().value;
            double best_dist = std::numeric_limits<double>::infinity();
            double best_prob = -1.0;
            for (const auto& a : atoms) {
                if (a.prob <= 0.0) continue;
                const double d = std::abs(x - a.value);
                if (d < best_dist || (d == best_dist && a.prob > best_prob)) {
                    best = a.value;
                    best_dist = d;
                    best_prob = a.prob;
                }
            }
            return {best, 0.0};
        }
        // log-sum-exp over atoms.
        double max_log = -std::numeric_limits<double>::infinity();
        for (const auto& a : atoms) {
            if (a.prob <= 0.0) continue;
            const double r = (x - a.value) / sigma;
            max_log = std::max(max_log, std::log(a.prob) - 0.5 * r * r);
        }
        double total = 0.0, first = 0.0;
        for (const auto& a : atoms) {
            if (a.prob <= 0.0) continue;
            const double r = (x - a.value) / sigma;
            const double w = std::exp(std::log(a.prob) - 0.5 * r * r - max_log);
            total += w;
            first += w * a.value;
        }
        const double mean = first / total;
        double second = 0.0;
        for (const auto& a : atoms) {
            if (a.prob <= 0.0) continue;
            const double r = (x - a.value) / sigma;
            const double w = std::exp(std::log(a.prob) - 0.5 * r * r - max_log);
            second += w * (a.value - mean) * (a.value - mean);
        }
        return {mean, second / total};
    }

private:
    PointMassMixture prior_;
};

/// Scalar denoiser eta(x; theta) applied componentwise.
class Nonlinearity {
public:
    using Variant = std::variant<SoftThreshold, PosteriorMean>;

    Nonlinearity() : v_(SoftThreshold{}) {}
    Nonlinearity(SoftThreshold s) : v_(s) {}
    Nonlinearity(PosteriorMean p) : v_(std::move(p)) {}

    static Nonlinearity soft() { return SoftThreshold{}; }

    static Nonlinearity posterior_mean(const PriorDistribution& prior) {
        const auto* m = prior.atoms();
        if (!m) throw capability_error("posterior-mean denoiser requires a point-mass mixture prior");
        return PosteriorMean(*m);
    }

    bool is_soft_threshold() const noexcept { return std::holds_alternative<SoftThreshold>(v_); }
    const PosteriorMean* posterior() const noexcept { return std::get_if<PosteriorMean>(&v_); }

    double eval(double x, double theta) const {
        check_theta(theta);
        if (is_soft_threshold()) return soft_threshold(x, theta);
        return std::get<PosteriorMean>(v_).posterior(x, theta).mean;
    }

    double deriv(double x, double theta) const {
        check_theta(theta);
        if (is_soft_threshold()) return soft_threshold_deriv(x, theta);
        if (theta == 0.0) return 0.0;
        return std::get<PosteriorMean>(v_).posterior(x, theta).variance / (theta * theta);
    }

    /// out_i = eta(u_i; theta); returns <eta'(u; theta)>.
    double apply(const Vec& u, double theta, Vec& out) const {
        check_theta(theta);
        out.resize(u.size());
        double dsum = 0.0;
        if (is_soft_threshold()) {
            for (Eigen::Index i = 0; i < u.size(); ++i) {
                const double x = u(i);
                out(i) = soft_threshold(x, theta);
                dsum += soft_threshold_deriv(x, theta);
            }
        } else {
            const auto& pm = std::get<PosteriorMean>(v_);
            for (Eigen::Index i = 0; i < u.size(); ++i) {
                const auto m = pm.posterior(u(i), theta);
                out(i) = m.mean;
                dsum += theta == 0.0 ? 0.0 : m.variance / (theta * theta);
            }
        }
        return u.size() > 0 ? dsum / static_cast<double>(u.size()) : 0.0;
    }

    double mean_deriv(const Vec& u, double theta) const {
        double s = 0.0;
        for (Eigen::Index i = 0; i < u.size(); ++i) s += deriv(u(i), theta);
        return u.size() > 0 ? s / static_cast<double>(u.size()) : 0.0;
    }

private:
    static void check_theta(double theta) {
        if (!(theta >= 0.0)) throw parameter_error("nonlinearity parameter theta must be >= 0");
    }

    Variant v_;
};

} // namespace ampcs
