#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <variant>

#include "ampcs/errors.hpp"

namespace ampcs {

/// theta_t = tau(delta) sigma_hat_t, tau from the minimax computation.
struct MinimaxPolicy {
    double tau;
};

/// theta_t = tau sigma_hat_t.
struct FixedTauPolicy {
    double tau;
};

/// theta_{t+1} = lambda + (theta_t / delta) <eta'(u_t; theta_t)>.
struct LassoPolicy {
    double lambda;
};

/// theta_{t+1} = lambda_t + (theta_t / delta) <eta'(u_t; theta_t)>, lambda_t nonincreasing to 0.
/// The schedule receives t and sigma_hat_0.
struct BasisPursuitPolicy {
    std::function<double(std::size_t, double)> schedule;

    /// lambda_t = lambda_0 gamma^t with lambda_0 = fraction * sigma_hat_0.
    static BasisPursuitPolicy geometric(double fraction = 0.1, double gamma = 0.9) {
        if (!(fraction >= 0.0)) throw parameter_error("basis-pursuit schedule: fraction must be >= 0");
        if (!(gamma > 0.0 && gamma < 1.0)) throw parameter_error("basis-pursuit schedule: gamma must lie in (0,1)");
        return {[fraction, gamma](std::size_t t, double sigma0) {
            return fraction * sigma0 * std::pow(gamma, static_cast<double>(t));
        }};
    }
};

class ThresholdPolicy {
public:
    using Variant = std::variant<MinimaxPolicy, FixedTauPolicy, LassoPolicy, BasisPursuitPolicy>;

    ThresholdPolicy(MinimaxPolicy p) : v_(p) { check_tau(p.tau); }
    ThresholdPolicy(FixedTauPolicy p) : v_(p) { check_tau(p.tau); }
    ThresholdPolicy(LassoPolicy p) : v_(p) {
        if (!(p.lambda >= 0.0) || !std::isfinite(p.lambda)) throw parameter_error("lasso policy: lambda must be >= 0");
    }
    ThresholdPolicy(BasisPursuitPolicy p) : v_(std::move(p)) {
        if (!std::get<BasisPursuitPolicy>(v_).schedule) throw parameter_error("basis-pursuit policy needs a schedule");
    }

    const Variant& variant() const noexcept { return v_; }

    /// Policies of the form theta = tau * sigma_hat.
    bool proportional() const noexcept {
        return std::holds_alternative<MinimaxPolicy>(v_) || std::holds_alternative<FixedTauPolicy>(v_);
    }

    /// tau for proportional policies.
    double tau() const {
        if (auto m = std::get_if<MinimaxPolicy>(&v_)) return m->tau;
        if (auto f = std::get_if<FixedTauPolicy>(&v_)) return f->tau;
        throw parameter_error("policy has no tau");
    }

    std::string name() const {
        switch (v_.index()) {
        case 0: return "minimax";
        case 1: return "fixed-tau";
        case 2: return "lasso";
        default: return "basis-pursuit";
        }
    }

private:
    static void check_tau(double tau) {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw parameter_error("threshold policy: tau must be > 0");
    }

    Variant v_;
};

} // namespace ampcs
