#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "ampcs/errors.hpp"
#include "ampcs/gaussian.hpp"
#include "ampcs/nonlinearity.hpp"
#include "ampcs/policy.hpp"
#include "ampcs/prior.hpp"
#include "ampcs/rng.hpp"

namespace ampcs {

// ---------------------------------------------------------------------------
// Expectation engines
// ---------------------------------------------------------------------------

/// Exact Gaussian integrals for the soft threshold. Atoms are summed exactly;
/// a generalized-Gaussian prior is integrated by adaptive quadrature over X.
struct ClosedForm {};

/// Gauss-Hermite over the Gaussian noise; the prior is handled as in ClosedForm.
struct GaussQuadrature {
    int nodes = 61;
};

struct MonteCarlo {
    std::size_t samples = 1'000'000;
    std::uint64_t seed = 1;
};

class ExpectationEngine {
public:
    using Variant = std::variant<ClosedForm, GaussQuadrature, MonteCarlo>;

    ExpectationEngine() : v_(ClosedForm{}) {}
    ExpectationEngine(ClosedForm c) : v_(c) {}
    ExpectationEngine(GaussQuadrature g) : v_(g) {
        if (g.nodes < 31) throw parameter_error("Gauss-Hermite engine needs at least 31 nodes");
        rule_ = hermite_rule(g.nodes);
    }
    ExpectationEngine(MonteCarlo m) : v_(m) {
        if (m.samples < 2) throw parameter_error("Monte Carlo engine needs at least 2 samples");
    }

    static ExpectationEngine closed_form() { return ClosedForm{}; }
    static ExpectationEngine quadrature(int nodes = 61) { return GaussQuadrature{nodes}; }
    static ExpectationEngine monte_carlo(std::size_t samples, std::uint64_t seed) { return MonteCarlo{samples, seed}; }

    const Variant& variant() const noexcept { return v_; }
    bool is_closed_form() const noexcept { return std::holds_alternative<ClosedForm>(v_); }
    bool is_quadrature() const noexcept { return std::holds_alternative<GaussQuadrature>(v_); }
    bool is_monte_carlo() const noexcept { return std::holds_alternative<MonteCarlo>(v_); }
    const HermiteRule& rule() const { return *rule_; }
    const MonteCarlo& mc() const { return std::get<MonteCarlo>(v_); }

private:
    Variant v_;
    std::shared_ptr<const HermiteRule> rule_;
};

/// A value with its Monte Carlo standard error (0 for deterministic engines).
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

// ---------------------------------------------------------------------------
// Per-signal-value Gaussian moments
// ---------------------------------------------------------------------------

/// Moments of eta(x + sigma Z; theta) for a fixed signal value x, Z ~ N(0,1).
struct ScalarMoments {
    double sq_err = 0.0;    // E (eta - x)^2
    double p_nonzero = 0.0; // P(eta != 0)
    double deriv = 0.0;     // E eta'
};

/// Closed form for the soft threshold, in terms of Phi and phi at
/// a = (theta - x)/sigma and b = (-theta - x)/sigma.
inline ScalarMoments soft_threshold_moments(double x, double sigma, double theta) {
    ScalarMoments m;
    if (sigma == 0.0) {
        const double e = soft_threshold(x, theta) - x;
        m.sq_err = e * e;
        m.p_nonzero = std::abs(x) > theta ? 1.0 : 0.0;
        m.deriv = m.p_nonzero;
        return m;
    }
    const double a = (theta - x) / sigma;
    const double b = (-theta - x) / sigma;
    const double qa = normal_sf(a), pb = normal_cdf(b);
    const double fa = normal_pdf(a), fb = normal_pdf(b);
    const double upper = sigma * sigma * (a * fa + qa) - 2.0 * sigma * theta * fa + theta * theta * qa;
    const double lower = sigma * sigma * (pb - b * fb) - 2.0 * sigma * theta * fb + theta * theta * pb;
    const double dead = x * x * normal_interval(b, a);
    m.sq_err = std::max(0.0, upper + lower + dead);
    m.p_nonzero = qa + pb;
    m.deriv = m.p_nonzero;
    return m;
}

namespace detail {

inline ScalarMoments hermite_moments(double x, double sigma, double theta, const Nonlinearity& nl,
                                     const HermiteRule& rule) {
    ScalarMoments m;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
        const double y = x + sigma * rule.nodes[k];
        const double eta = nl.eval(y, theta);
        const double w = rule.weights[k];
        m.sq_err += w * (eta - x) * (eta - x);
        m.p_nonzero += w * (eta != 0.0 ? 1.0 : 0.0);
        m.deriv += w * nl.deriv(y, theta);
    }
    return m;
}

inline ScalarMoments inner_moments(double x, double sigma, double theta, const Nonlinearity& nl,
                                   const ExpectationEngine& engine) {
    if (engine.is_closed_form()) {
        if (!nl.is_soft_threshold()) {
            throw capability_error("closed-form expectations are available only for the soft threshold");
        }
        return soft_threshold_moments(x, sigma, theta);
    }
    return hermite_moments(x, sigma, theta, nl, engine.rule());
}

/// Prior averages of per-value moments: over all X, and over X != 0.
struct PriorMoments {
    ScalarMoments all;
    ScalarMoments nonzero; // conditional on X != 0 (zeros if P(X != 0) = 0)
    double nonzero_mass = 0.0;
};

inline PriorMoments deterministic_moments(const PriorDistribution& prior, double sigma, double theta,
                                          const Nonlinearity& nl, const ExpectationEngine& engine) {
    PriorMoments out;
    if (const auto* mix = prior.atoms()) {
        for (const auto& a : mix->atoms()) {
            if (a.prob == 0.0) continue;
            const auto m = inner_moments(a.value, sigma, theta, nl, engine);
            out.all.sq_err += a.prob * m.sq_err;
            out.all.p_nonzero += a.prob * m.p_nonzero;
            out.all.deriv += a.prob * m.deriv;
            if (a.value != 0.0) {
                out.nonzero_mass += a.prob;
                out.nonzero.sq_err += a.prob * m.sq_err;
                out.nonzero.p_nonzero += a.prob * m.p_nonzero;
                out.nonzero.deriv += a.prob * m.deriv;
            }
        }
        if (out.nonzero_mass > 0.0) {
            out.nonzero.sq_err /= out.nonzero_mass;
            out.nonzero.p_nonzero /= out.nonzero_mass;
            out.nonzero.deriv /= out.nonzero_mass;
        }
        return out;
    }
    const auto& gg = *prior.generalized();
    std::vector<double> kinks;
    if (theta > 0.0) kinks.push_back(theta);
    out.all.sq_err = gg.expect([&](double x) { return inner_moments(x, sigma, theta, nl, engine).sq_err; }, kinks);
    out.all.p_nonzero =
        gg.expect([&](double x) { return inner_moments(x, sigma, theta, nl, engine).p_nonzero; }, kinks);
    out.all.deriv = gg.expect([&](double x) { return inner_moments(x, sigma, theta, nl, engine).deriv; }, kinks);
    out.nonzero = out.all;
    out.nonzero_mass = 1.0;
    return out;
}

/// Monte Carlo moments with standard errors. Conditional quantities are ratio estimates.
struct MonteCarloMoments {
    Estimate sq_err, p_nonzero, deriv, far;
    Estimate sq_err_nz, miss_nz;
};

inline Estimate mean_and_error(double sum, double sum_sq, double count) {
    if (count <= 1.0) return {count > 0.0 ? sum / count : 0.0, 0.0};
    const double mean = sum / count;
    const double var = std::max(0.0, (sum_sq - count * mean * mean) / (count - 1.0));
    return {mean, std::sqrt(var / count)};
}

inline MonteCarloMoments monte_carlo_moments(const PriorDistribution& prior, double sigma, double theta,
                                             const Nonlinearity& nl, const MonteCarlo& mc) {
    Engine rng(mc.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double s_sq = 0, s_sq2 = 0, s_nz = 0, s_d = 0, s_d2 = 0, s_far = 0;
    double s_sqnz = 0, s_sqnz2 = 0, s_miss = 0, n_nz = 0;
    for (std::size_t i = 0; i < mc.samples; ++i) {
        const double x = prior.sample(rng);
        const double z = gauss(rng);
        const double y = x + sigma * z;
        const double eta = nl.eval(y, theta);
        const double e2 = (eta - x) * (eta - x);
        const double nz = eta != 0.0 ? 1.0 : 0.0;
        const double d = nl.deriv(y, theta);
        s_sq += e2;
        s_sq2 += e2 * e2;
        s_nz += nz;
        s_d += d;
        s_d2 += d * d;
        s_far += nl.eval(sigma * z, theta) != 0.0 ? 1.0 : 0.0;
        if (x != 0.0) {
            n_nz += 1.0;
            s_sqnz += e2;
            s_sqnz2 += e2 * e2;
            s_miss += 1.0 - nz;
        }
    }
    const double n = static_cast<double>(mc.samples);
    MonteCarloMoments out;
    out.sq_err = mean_and_error(s_sq, s_sq2, n);
    out.p_nonzero = mean_and_error(s_nz, s_nz, n);
    out.deriv = mean_and_error(s_d, s_d2, n);
    out.far = mean_and_error(s_far, s_far, n);
    out.sq_err_nz = mean_and_error(s_sqnz, s_sqnz2, n_nz);
    out.miss_nz = mean_and_error(s_miss, s_miss, n_nz);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// MSE map and state
// ---------------------------------------------------------------------------

/// Psi(sigma^2) = v + (1/delta) E[(eta(X + sigma Z; theta) - X)^2], with its MC error.
inline Estimate psi_estimate(double sigma2, double v, double delta, double theta, const PriorDistribution& prior,
                             const Nonlinearity& nl, const ExpectationEngine& engine) {
    if (!(sigma2 >= 0.0)) throw parameter_error("psi: sigma^2 must be >= 0");
    if (!(theta >= 0.0)) throw parameter_error("psi: theta must be >= 0");
    if (!(delta > 0.0)) throw parameter_error("psi: delta must be > 0");
    const double sigma = std::sqrt(sigma2);
    if (engine.is_monte_carlo()) {
        const auto m = detail::monte_carlo_moments(prior, sigma, theta, nl, engine.mc());
        return {v + m.sq_err.value / delta, m.sq_err.std_error / delta};
    }
    const auto m = detail::deterministic_moments(prior, sigma, theta, nl, engine);
    return {v + m.all.sq_err / delta, 0.0};
}

inline double psi(double sigma2, double v, double delta, double theta, const PriorDistribution& prior,
                  const Nonlinearity& nl = {}, const ExpectationEngine& engine = {}) {
    return psi_estimate(sigma2, v, delta, theta, prior, nl, engine).value;
}

/// E[eta'(X + sigma Z; theta)].
inline double mean_derivative(double sigma2, double theta, const PriorDistribution& prior, const Nonlinearity& nl = {},
                              const ExpectationEngine& engine = {}) {
    const double sigma = std::sqrt(sigma2);
    if (engine.is_monte_carlo()) return detail::monte_carlo_moments(prior, sigma, theta, nl, engine.mc()).deriv.value;
    return detail::deterministic_moments(prior, sigma, theta, nl, engine).all.deriv;
}

/// (sigma_t^2; v, delta, theta_t, F).
struct SEState {
    double sigma2 = 0.0;
    double v = 0.0;
    double delta = 1.0;
    double theta = 0.0;
    PriorDistribution prior = PriorDistribution::point_mass(0.0);
};

/// sigma_0^2 = v + mu_2(F) / delta.
inline SEState initial_se_state(const PriorDistribution& prior, double v, double delta, double theta0 = 0.0) {
    return SEState{v + second_moment(prior) / delta, v, delta, theta0, prior};
}

/// sigma -> sigma^2 map for a proportional policy theta = tau sigma.
inline std::function<double(double)> psi_curve(double tau, double v, double delta, const PriorDistribution& prior,
                                               const Nonlinearity& nl = {}, const ExpectationEngine& engine = {}) {
    return [=](double m) { return psi(m, v, delta, tau * std::sqrt(std::max(m, 0.0)), prior, nl, engine); };
}

/// Iterates the state T times; result has T + 1 entries.
/// Proportional policies use theta_t = tau sigma_t; the lasso policy evolves
/// theta_{t+1} = lambda + (theta_t / delta) E[eta'(X + sigma_t Z; theta_t)] from initial.theta.
inline std::vector<SEState> evolve(const SEState& initial, const ThresholdPolicy& policy, std::size_t steps,
                                   const Nonlinearity& nl = {}, const ExpectationEngine& engine = {}) {
    if (steps < 1) throw parameter_error("evolve: T must be >= 1");
    if (std::holds_alternative<BasisPursuitPolicy>(policy.variant())) {
        throw parameter_error("evolve: state evolution is defined for minimax, fixed-tau and lasso policies");
    }
    std::vector<SEState> out;
    out.reserve(steps + 1);
    SEState s = initial;
    if (policy.proportional()) s.theta = policy.tau() * std::sqrt(s.sigma2);
    out.push_back(s);
    for (std::size_t t = 0; t < steps; ++t) {
        SEState next = s;
        next.sigma2 = psi(s.sigma2, s.v, s.delta, s.theta, s.prior, nl, engine);
        if (policy.proportional()) {
            next.theta = policy.tau() * std::sqrt(next.sigma2);
        } else {
            const double lambda = std::get<LassoPolicy>(policy.variant()).lambda;
            next.theta = lambda + s.theta / s.delta * mean_derivative(s.sigma2, s.theta, s.prior, nl, engine);
        }
        out.push_back(next);
        s = next;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixed points
// ---------------------------------------------------------------------------

struct HfpResult {
    double value = 0.0;
    /// Psi(m) >= m held at the top of the search range (degenerate or range too small).
    bool at_upper_bound = false;
};

/// HFP(Psi) = sup{m : Psi(m) >= m} on [0, upper]: grid scan (uniform plus
/// log-spaced points) for the largest sign change, refined by bisection.
inline HfpResult hfp(const std::function<double(double)>& curve, double upper, std::size_t grid_points = 512) {
    if (!(upper > 0.0)) throw parameter_error("hfp: search_upper must be > 0");
    std::vector<double> grid;
    grid.reserve(2 * grid_points);
    for (std::size_t i = 1; i <= grid_points; ++i) {
        grid.push_back(upper * static_cast<double>(i) / static_cast<double>(grid_points));
    }
    const double lo_exp = -12.0;
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double e = lo_exp * (1.0 - static_cast<double>(i) / static_cast<double>(grid_points));
        grid.push_back(upper * std::pow(10.0, e));
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    auto gap = [&](double m) { return curve(m) - m; };
    if (gap(upper) >= 0.0) return {upper, true};
    std::optional<std::size_t> last;
    for (std::size_t i = grid.size(); i-- > 0;) {
        if (gap(grid[i]) >= 0.0) {
            last = i;
            break;
        }
    }
    if (!last) return {0.0, false};
    double lo = grid[*last], hi = grid[*last + 1];
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (gap(mid) >= 0.0) lo = mid;
        else hi = mid;
    }
    return {lo, false};
}

/// dPsi/dm at the highest fixed point; one-sided from above when it is 0.
inline double stability_coefficient(const std::function<double(double)>& curve, double hfp_value) {
    const double h = std::max(1e-6, 1e-6 * hfp_value);
    if (hfp_value <= 0.0) return (curve(h) - curve(0.0)) / h;
    return (curve(hfp_value + h) - curve(hfp_value - h)) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// State-conditional expectations
// ---------------------------------------------------------------------------

enum class Observable { Mse, MseNz, Far, Mdr, Dr };

/// zeta(u, v, w, x) with x = eta(u + v + w).
using CustomObservable = std::function<double(double, double, double, double)>;

/// E(zeta | S) for the standard observables: U ~ F, V + W ~ N(0, sigma^2).
/// FAR and MDR are rates conditional on U = 0 and U != 0 respectively.
inline Estimate state_expectation_estimate(Observable kind, const SEState& s, const Nonlinearity& nl = {},
                                           const ExpectationEngine& engine = {}) {
    if (s.sigma2 < s.v) throw parameter_error("state_expectation: sigma^2 must be >= v");
    const double sigma = std::sqrt(s.sigma2);
    if (engine.is_monte_carlo()) {
        const auto m = detail::monte_carlo_moments(s.prior, sigma, s.theta, nl, engine.mc());
        switch (kind) {
        case Observable::Mse: return m.sq_err;
        case Observable::MseNz: return m.sq_err_nz;
        case Observable::Far: return m.far;
        case Observable::Mdr: return m.miss_nz;
        case Observable::Dr: return m.p_nonzero;
        }
    }
    if (kind == Observable::Far) {
        return {detail::inner_moments(0.0, sigma, s.theta, nl, engine).p_nonzero, 0.0};
    }
    const auto m = detail::deterministic_moments(s.prior, sigma, s.theta, nl, engine);
    switch (kind) {
    case Observable::Mse: return {m.all.sq_err, 0.0};
    case Observable::MseNz: return {m.nonzero.sq_err, 0.0};
    case Observable::Mdr: return {m.nonzero_mass > 0.0 ? 1.0 - m.nonzero.p_nonzero : 0.0, 0.0};
    case Observable::Dr: return {m.all.p_nonzero, 0.0};
    default: break;
    }
    return {};
}

inline double state_expectation(Observable kind, const SEState& s, const Nonlinearity& nl = {},
                                const ExpectationEngine& engine = {}) {
    return state_expectation_estimate(kind, s, nl, engine).value;
}

/// Custom bounded zeta; Gauss-Hermite over (V, W) or Monte Carlo. No closed form.
inline Estimate state_expectation_estimate(const CustomObservable& zeta, const SEState& s, const Nonlinearity& nl,
                                           const ExpectationEngine& engine) {
    if (s.sigma2 < s.v) throw parameter_error("state_expectation: sigma^2 must be >= v");
    if (engine.is_closed_form()) throw capability_error("custom observables need a quadrature or Monte Carlo engine");
    const double sv = std::sqrt(s.v), sw = std::sqrt(s.sigma2 - s.v);
    if (engine.is_monte_carlo()) {
        const auto& mc = engine.mc();
        Engine rng(mc.seed);
        std::normal_distribution<double> gauss;
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t i = 0; i < mc.samples; ++i) {
            const double u = s.prior.sample(rng);
            const double v = sv * gauss(rng);
            const double w = sw * gauss(rng);
            const double val = zeta(u, v, w, nl.eval(u + v + w, s.theta));
            sum += val;
            sum2 += val * val;
        }
        return detail::mean_and_error(sum, sum2, static_cast<double>(mc.samples));
    }
    const auto& rule = engine.rule();
    auto inner = [&](double u) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double v = sv * rule.nodes[i];
            for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
                const double w = sw * rule.nodes[j];
                acc += rule.weights[i] * rule.weights[j] * zeta(u, v, w, nl.eval(u + v + w, s.theta));
            }
        }
        return acc;
    };
    if (const auto* mix = s.prior.atoms()) {
        double total = 0.0;
        for (const auto& a : mix->atoms()) total += a.prob * inner(a.value);
        return {total, 0.0};
    }
    return {s.prior.generalized()->expect(inner, {s.theta}), 0.0};
}

inline double state_expectation(const CustomObservable& zeta, const SEState& s, const Nonlinearity& nl,
                                const ExpectationEngine& engine) {
    return state_expectation_estimate(zeta, s, nl, engine).value;
}

// ---------------------------------------------------------------------------
// Minimax threshold and the SE phase transition
// ---------------------------------------------------------------------------

/// Amplitude (in noise standard deviations) standing in for mu -> infinity.
inline constexpr double least_favorable_amplitude = 1e3;

/// Largest eps for which HFP = 0 under theta = tau sigma, v = 0, against the
/// least-favorable prior (1 - eps) delta_0 + (eps/2)(delta_{+mu} + delta_{-mu}).
/// Psi(m)/m is maximal as m -> 0, where it equals ((1 - eps) r0 + eps r_mu) / delta
/// with r0, r_mu the unit-noise risks at 0 and at mu.
inline double recoverable_eps(double tau, double delta, double mu = least_favorable_amplitude) {
    const double r0 = soft_threshold_moments(0.0, 1.0, tau).sq_err;
    const double rmu = soft_threshold_moments(mu, 1.0, tau).sq_err;
    if (rmu <= r0) return 0.0;
    return std::clamp((delta - r0) / (rmu - r0), 0.0, 1.0);
}

/// tau(delta) maximizing the recoverable sparsity against the least-favorable prior.
inline double minimax_tau(double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw parameter_error("minimax_tau: delta must lie in (0, 1)");
    auto neg = [delta](double tau) { return -recoverable_eps(tau, delta); };
    const auto r = boost::math::tools::brent_find_minima(neg, 1e-3, 10.0, std::numeric_limits<double>::digits / 2);
    return r.first;
}

/// Closed-form counterpart of se_phase_transition: max_tau recoverable_eps / delta.
inline double minimax_rho(double delta) { return recoverable_eps(minimax_tau(delta), delta) / delta; }

/// HFP of the minimax-tau map, v = 0, for the least-favorable prior at eps = rho delta.
inline HfpResult least_favorable_hfp(double rho, double delta, double tau, double mu = least_favorable_amplitude) {
    const double eps = rho * delta;
    const auto prior = PriorDistribution::three_point(eps, mu);
    const auto curve = psi_curve(tau, 0.0, delta, prior);
    return hfp(curve, 4.0 * second_moment(prior) / delta);
}

/// rho_SE(delta): bisection on rho for the HFP = 0 / HFP > 0 boundary, to 1e-3.
inline double se_phase_transition(double delta, double mu = least_favorable_amplitude) {
    if (!(delta > 0.0 && delta < 1.0)) throw parameter_error("se_phase_transition: delta must lie in (0, 1)");
    const double tau = minimax_tau(delta);
    double lo = 0.0, hi = 1.0;
    while (hi - lo > 1e-4) {
        const double mid = 0.5 * (lo + hi);
        if (least_favorable_hfp(mid, delta, tau, mu).value > 0.0) hi = mid;
        else lo = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Equilibrium and lambda <-> tau calibration
// ---------------------------------------------------------------------------

struct Equilibrium {
    double sigma = 0.0;
    double theta = 0.0;
    std::size_t iterations = 0;
};

/// Fixed-tau state evolution from sigma_0^2 = v + mu_2/delta until
/// |sigma_{t+1}^2 - sigma_t^2| < 1e-12 max(sigma_t^2, 1).
inline Equilibrium equilibrium(double tau, double v, double delta, const PriorDistribution& prior,
                               const ExpectationEngine& engine = {}, const Nonlinearity& nl = {},
                               std::size_t max_iters = 100'000) {
    if (!(tau > 0.0)) throw parameter_error("equilibrium: tau must be > 0");
    const double start = v + second_moment(prior) / delta;
    double s2 = start;
    for (std::size_t t = 0; t < max_iters; ++t) {
        const double next = psi(s2, v, delta, tau * std::sqrt(s2), prior, nl, engine);
        if (!std::isfinite(next) || next > 1e12 * std::max(start, 1.0)) {
            throw convergence_error("equilibrium: state evolution diverges (no finite fixed point) for tau = " +
                                    std::to_string(tau));
        }
        if (std::abs(next - s2) < 1e-12 * std::max(s2, 1.0)) {
            const double sigma = std::sqrt(next);
            return {sigma, tau * sigma, t + 1};
        }
        s2 = next;
    }
    throw convergence_error("equilibrium: no convergence within " + std::to_string(max_iters) +
                            " iterations (last sigma^2 = " + std::to_string(s2) + ")");
}

/// EqDR(tau) = P{eta(U + V + W; theta_inf) != 0}.
inline double eq_detection_rate(double tau, double v, double delta, const PriorDistribution& prior,
                                const ExpectationEngine& engine = {}) {
    const auto eq = equilibrium(tau, v, delta, prior, engine);
    const SEState s{std::max(eq.sigma * eq.sigma, v), v, delta, eq.theta, prior};
    return state_expectation(Observable::Dr, s, {}, engine);
}

/// lambda(tau) = (1 - EqDR(tau)/delta) theta_inf(tau), with its components.
struct Calibration {
    double lambda = 0.0;
    double eq_dr = 0.0;
    double sigma_inf = 0.0;
    double theta_inf = 0.0;
};

inline Calibration calibrate(double tau, double v, double delta, const PriorDistribution& prior,
                             const ExpectationEngine& engine = {}) {
    const auto eq = equilibrium(tau, v, delta, prior, engine);
    const SEState s{std::max(eq.sigma * eq.sigma, v), v, delta, eq.theta, prior};
    const double dr = state_expectation(Observable::Dr, s, {}, engine);
    return {(1.0 - dr / delta) * eq.theta, dr, eq.sigma, eq.theta};
}

inline double calibrate_lambda(double tau, double v, double delta, const PriorDistribution& prior,
                               const ExpectationEngine& engine = {}) {
    const auto c = calibrate(tau, v, delta, prior, engine);
    if (c.lambda < 0.0) {
        throw validity_error("calibrate_lambda: tau = " + std::to_string(tau) +
                             " is below the validity threshold (lambda = " + std::to_string(c.lambda) + ")");
    }
    return c.lambda;
}

/// lambda(tau) or nullopt where the equilibrium does not exist or lambda < 0.
inline std::optional<double> try_lambda(double tau, double v, double delta, const PriorDistribution& prior,
                                        const ExpectationEngine& engine) {
    try {
        const auto c = calibrate(tau, v, delta, prior, engine);
        if (c.lambda < 0.0) return std::nullopt;
        return c.lambda;
    } catch (const convergence_error&) {
        return std::nullopt;
    }
}

/// Smallest tau with a valid (finite equilibrium, lambda >= 0) calibration:
/// coarse scan upward, then bisection to 1e-10.
inline double tau_validity_threshold(double v, double delta, const PriorDistribution& prior,
                                     const ExpectationEngine& engine = {}) {
    double prev = 0.0;
    for (double tau = 0.05; tau <= 20.0; tau += 0.05) {
        if (try_lambda(tau, v, delta, prior, engine)) {
            double lo = prev, hi = tau;
            while (hi - lo > 1e-10) {
                const double mid = 0.5 * (lo + hi);
                if (mid > 0.0 && try_lambda(mid, v, delta, prior, engine)) hi = mid;
                else lo = mid;
            }
            return hi;
        }
        prev = tau;
    }
    throw validity_error("no valid tau found in (0, 20]");
}

/// Inverse of calibrate_lambda by monotone bisection over the validity region.
inline double calibrate_tau(double lambda, double v, double delta, const PriorDistribution& prior,
                            const ExpectationEngine& engine = {}, std::optional<double> tau_min = std::nullopt) {
    if (!(lambda >= 0.0)) throw range_error("calibrate_tau: lambda must be >= 0", 0.0, 0.0);
    const double lo_tau = tau_min ? *tau_min : tau_validity_threshold(v, delta, prior, engine);
    const double lambda_lo = try_lambda(lo_tau, v, delta, prior, engine).value_or(0.0);
    if (lambda <= lambda_lo) {
        if (lambda < lambda_lo - 1e-12) throw range_error("calibrate_tau: lambda below achievable range", lambda_lo, lambda_lo);
        return lo_tau;
    }
    constexpr double tau_cap = 200.0;
    double lo = lo_tau, hi = std::max(2.0 * lo_tau, lo_tau + 0.5);
    double lambda_hi = 0.0;
    while (true) {
        const auto l = try_lambda(hi, v, delta, prior, engine);
        if (!l) throw validity_error("calibrate_tau: calibration invalid at tau = " + std::to_string(hi));
        lambda_hi = *l;
        if (lambda_hi >= lambda) break;
        lo = hi;
        hi *= 2.0;
        if (hi > tau_cap) throw range_error("calibrate_tau: lambda above achievable range", lambda_lo, lambda_hi);
    }
    while (hi - lo > 1e-12 * std::max(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        const auto l = try_lambda(mid, v, delta, prior, engine);
        if (l && *l >= lambda) hi = mid;
        else lo = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace ampcs
