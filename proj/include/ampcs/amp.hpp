#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ampcs/errors.hpp"
#include "ampcs/instance.hpp"
#include "ampcs/nonlinearity.hpp"
#include "ampcs/policy.hpp"

namespace ampcs {

/// Iterate (x^t, z^t) of AMP / IST together with the threshold bookkeeping.
struct AmpState {
    Vec x;
    Vec z;
    double theta = 0.0;
    double sigma_hat = 0.0;
    double sigma_hat0 = 0.0;
    /// <eta'(u; theta)> over the pseudo-data that produced x (0 at t = 0).
    double mean_deriv = 0.0;
    std::size_t t = 0;
};

/// Empirical observables of x^t against the truth.
struct ObservableRecord {
    std::size_t t = 0;
    double mse = 0.0;
    double mse_nz = 0.0;
    double far = 0.0;
    double mdr = 0.0;
    double dr = 0.0;
    double sigma_hat = 0.0;
    double sigma_true = 0.0;
    double theta = 0.0;
};

struct AmpTrace {
    std::vector<ObservableRecord> records;
    Vec x;
    double theta = 0.0;
    double mean_deriv = 0.0; // <eta'> of the last step
    bool converged = false;

    std::size_t iterations() const noexcept { return records.empty() ? 0 : records.size() - 1; }
};

/// Divergence raised from run_amp, carrying the trace up to the failure.
class amp_divergence : public divergence_error {
public:
    amp_divergence(const divergence_error& e, AmpTrace trace)
        : divergence_error(e), trace_(std::move(trace)) {}

    const AmpTrace& trace() const noexcept { return trace_; }

private:
    AmpTrace trace_;
};

struct StepConfig {
    bool onsager = true;
    /// Gradient step kappa of the IST baseline: u = x + kappa A* z, x = eta(u; kappa theta).
    double step = 1.0;
};

struct AmpOptions {
    bool onsager = true;
    double step = 1.0;
    std::size_t max_iters = 1000;
    double rel_tol = 1e-8;
    /// Ignore rel_tol and run exactly max_iters iterations.
    bool fixed_iterations = false;
};

/// sqrt(||z||^2 / n).
inline double estimate_sigma(const Vec& z, Eigen::Index n) {
    if (n < 1) throw parameter_error("estimate_sigma: n must be >= 1");
    return std::sqrt(z.squaredNorm() / static_cast<double>(n));
}

/// v + ||x - s0||^2 / (N delta). Needs the truth; validation only.
inline double effective_variance(const Vec& x, const Vec& s0, double v, double delta) {
    if (x.size() != s0.size()) throw dimension_error("effective_variance: length mismatch");
    return v + (x - s0).squaredNorm() / (static_cast<double>(x.size()) * delta);
}

inline ObservableRecord measure_observables(const Vec& x, const ProblemInstance& inst, std::size_t t,
                                            double sigma_hat, double theta) {
    const Vec& s0 = inst.s0;
    ObservableRecord r;
    r.t = t;
    r.sigma_hat = sigma_hat;
    r.theta = theta;
    double se = 0.0, se_nz = 0.0;
    std::size_t support = 0, detected = 0, nulls = 0, alarms = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double e = x(i) - s0(i);
        se += e * e;
        if (s0(i) != 0.0) {
            ++support;
            se_nz += e * e;
            if (x(i) != 0.0) ++detected;
        } else {
            ++nulls;
            if (x(i) != 0.0) ++alarms;
        }
    }
    const double big_n = static_cast<double>(x.size());
    r.mse = se / big_n;
    r.mse_nz = support ? se_nz / static_cast<double>(support) : 0.0;
    r.dr = support ? static_cast<double>(detected) / static_cast<double>(support) : 0.0;
    r.mdr = support ? 1.0 - r.dr : 0.0;
    r.far = nulls ? static_cast<double>(alarms) / static_cast<double>(nulls) : 0.0;
    r.sigma_true = std::sqrt(inst.v + se / (big_n * inst.delta));
    return r;
}

/// x = 0, z = y, sigma_hat_0 from y; theta_0 per policy.
inline AmpState initial_state(const ProblemInstance& inst, const ThresholdPolicy& policy) {
    AmpState s;
    s.x = Vec::Zero(inst.big_n());
    s.z = inst.y;
    s.sigma_hat = estimate_sigma(s.z, inst.n());
    s.sigma_hat0 = s.sigma_hat;
    s.t = 0;
    const auto& pv = policy.variant();
    if (policy.proportional()) {
        s.theta = policy.tau() * s.sigma_hat;
    } else if (auto l = std::get_if<LassoPolicy>(&pv)) {
        s.theta = l->lambda + s.sigma_hat;
    } else {
        const auto& bp = std::get<BasisPursuitPolicy>(pv);
        s.theta = bp.schedule(0, s.sigma_hat0) + s.sigma_hat;
    }
    return s;
}

/// theta_{t+1} given the pre-step state (theta_t, t), the pseudo-data u^t, and sigma_hat_{t+1}.
/// `mean_deriv` is <eta'(u; theta_t)> when already known (negative: recompute).
inline double update_threshold(const ThresholdPolicy& policy, const AmpState& prev, const Vec& u,
                               const Nonlinearity& nl, double sigma_hat_next, double delta,
                               double mean_deriv = -1.0) {
    double theta = 0.0;
    const auto& pv = policy.variant();
    if (policy.proportional()) {
        theta = policy.tau() * sigma_hat_next;
    } else {
        if (mean_deriv < 0.0) mean_deriv = nl.mean_deriv(u, prev.theta);
        double lambda = 0.0;
        if (auto l = std::get_if<LassoPolicy>(&pv)) {
            lambda = l->lambda;
        } else {
            const auto& bp = std::get<BasisPursuitPolicy>(pv);
            lambda = bp.schedule(prev.t + 1, prev.sigma_hat0);
            const double before = bp.schedule(prev.t, prev.sigma_hat0);
            if (!(lambda >= 0.0) || lambda > before) {
                throw parameter_error("basis-pursuit schedule must be nonnegative and nonincreasing");
            }
        }
        theta = lambda + prev.theta / delta * mean_deriv;
    }
    if (!std::isfinite(theta)) throw divergence_error("non-finite threshold", prev.t + 1);
    return theta;
}

/// One iteration: u = x + A* z, x' = eta(u; theta_t),
/// z' = y - A x' + (1/delta) z <eta'(u; theta_t)> (Onsager term only when enabled).
inline AmpState amp_step(const AmpState& s, const ProblemInstance& inst, const Nonlinearity& nl,
                         const ThresholdPolicy& policy, const StepConfig& cfg = {}) {
    const auto& op = inst.op;
    if (s.x.size() != op.cols() || s.z.size() != op.rows()) throw dimension_error("amp_step: state does not match instance");
    if (cfg.onsager && cfg.step != 1.0) throw parameter_error("amp_step: the Onsager correction requires unit step");
    if (!(cfg.step > 0.0)) throw parameter_error("amp_step: step must be > 0");

    Vec u;
    op.apply_adjoint(s.z, u);
    if (cfg.step != 1.0) u *= cfg.step;
    u += s.x;

    AmpState next;
    next.t = s.t + 1;
    next.sigma_hat0 = s.sigma_hat0;
    const double mean_deriv = nl.apply(u, cfg.step * s.theta, next.x);
    next.mean_deriv = mean_deriv;

    op.apply(next.x, next.z);
    next.z = inst.y - next.z;
    if (cfg.onsager) next.z += (mean_deriv / inst.delta) * s.z;

    next.sigma_hat = estimate_sigma(next.z, inst.n());
    if (!std::isfinite(next.sigma_hat) || !next.x.allFinite()) throw divergence_error("non-finite iterate", next.t);
    if (s.sigma_hat0 > 0.0 && next.sigma_hat > 1e3 * s.sigma_hat0) {
        throw divergence_error("residual exceeded 1e3 x its initial level", next.t);
    }
    next.theta = update_threshold(policy, s, u, nl, next.sigma_hat, inst.delta, mean_deriv);
    return next;
}

inline AmpTrace run_amp(const ProblemInstance& inst, const Nonlinearity& nl, const ThresholdPolicy& policy,
                        const AmpOptions& opt = {}) {
    if (opt.max_iters < 1) throw parameter_error("run_amp: max_iters must be >= 1");
    AmpTrace trace;
    AmpState s = initial_state(inst, policy);
    trace.records.push_back(measure_observables(s.x, inst, 0, s.sigma_hat, s.theta));
    const StepConfig cfg{opt.onsager, opt.step};
    for (std::size_t it = 0; it < opt.max_iters; ++it) {
        AmpState next;
        try {
            next = amp_step(s, inst, nl, policy, cfg);
        } catch (const divergence_error& e) {
            trace.x = s.x;
            trace.theta = s.theta;
            throw amp_divergence(e, std::move(trace));
        }
        trace.records.push_back(measure_observables(next.x, inst, next.t, next.sigma_hat, next.theta));
        const double change = (next.x - s.x).norm() / std::max(s.x.norm(), 1e-12);
        s = std::move(next);
        if (!opt.fixed_iterations && change < opt.rel_tol) {
            trace.converged = true;
            break;
        }
    }
    trace.x = s.x;
    trace.theta = s.theta;
    trace.mean_deriv = s.mean_deriv;
    return trace;
}

/// Largest eigenvalue of A* A by power iteration.
inline double operator_norm_squared(const MeasurementOperator& op, std::size_t iters = 200, std::uint64_t seed = 7) {
    Engine rng(seed);
    std::normal_distribution<double> gauss;
    Vec x(op.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = gauss(rng);
    x.normalize();
    double lambda = 0.0;
    Vec ax, atax;
    for (std::size_t k = 0; k < iters; ++k) {
        op.apply(x, ax);
        op.apply_adjoint(ax, atax);
        const double next = atax.norm();
        x = atax / next;
        if (std::abs(next - lambda) <= 1e-10 * next) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    return lambda;
}

} // namespace ampcs
