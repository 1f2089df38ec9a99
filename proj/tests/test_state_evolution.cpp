#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ampcs/state_evolution.hpp"

using namespace ampcs;

namespace {
const auto sparse_prior = PriorDistribution::bernoulli(0.045);
const auto zero_prior = PriorDistribution::point_mass(0.0);
const double sparse_delta = 0.3;
} // namespace

TEST(Psi, Examples) {
    EXPECT_EQ(psi(0.0, 0.0, 0.3, 1.0, zero_prior), 0.0);
    for (double m : {0.0, 0.1, 2.0}) {
        EXPECT_NEAR(psi(m, 0.2, 0.4, 0.0, sparse_prior), 0.2 + m / 0.4, 1e-14);
    }
}

TEST(Psi, RejectsBadArguments) {
    EXPECT_THROW(psi(-1.0, 0.0, 0.3, 1.0, sparse_prior), parameter_error);
    EXPECT_THROW(psi(1.0, 0.0, 0.3, -1.0, sparse_prior), parameter_error);
}

TEST(Psi, ClosedFormMatchesMonteCarloAtProbe) {
    const double s2 = 0.15, theta = 1.14 * std::sqrt(s2);
    const double exact = psi(s2, 0.0, sparse_delta, theta, sparse_prior);
    const auto mc = psi_estimate(s2, 0.0, sparse_delta, theta, sparse_prior, Nonlinearity::soft(),
                                 ExpectationEngine::monte_carlo(10'000'000, 3));
    EXPECT_LE(std::abs(mc.value - exact), 3.0 * mc.std_error);
}

TEST(Psi, ThreeEnginesAgree) {
    const std::vector<PriorDistribution> priors{sparse_prior, PriorDistribution::three_point(0.1, 2.0),
                                                PriorDistribution::mixture({{-1.0, 0.2}, {0.0, 0.7}, {0.5, 0.1}}),
                                                PriorDistribution::generalized_gaussian(1.0),
                                                PriorDistribution::generalized_gaussian(0.5, 0.3)};
    const auto gh = ExpectationEngine::quadrature(61);
    const auto mc = ExpectationEngine::monte_carlo(2'000'000, 5);
    for (const auto& prior : priors) {
        for (double s2 : {0.05, 0.5}) {
            const double theta = 1.3 * std::sqrt(s2);
            const double cf = psi(s2, 0.01, 0.4, theta, prior);
            // Gauss-Hermite is not exact across the soft-threshold kink.
            EXPECT_NEAR(psi(s2, 0.01, 0.4, theta, prior, {}, gh), cf, 3e-3 * cf) << prior.describe();
            const auto m = psi_estimate(s2, 0.01, 0.4, theta, prior, {}, mc);
            EXPECT_LE(std::abs(m.value - cf), 4.0 * m.std_error) << prior.describe();
        }
    }
}

TEST(Psi, PosteriorMeanNeedsNonClosedEngine) {
    const auto nl = Nonlinearity::posterior_mean(sparse_prior);
    EXPECT_THROW(psi(0.1, 0.0, 0.3, 0.3, sparse_prior, nl, ExpectationEngine::closed_form()), capability_error);
    const double gh = psi(0.1, 0.0, 0.3, std::sqrt(0.1), sparse_prior, nl, ExpectationEngine::quadrature());
    const auto mc = psi_estimate(0.1, 0.0, 0.3, std::sqrt(0.1), sparse_prior, nl, ExpectationEngine::monte_carlo(1'000'000, 2));
    EXPECT_LE(std::abs(mc.value - gh), 4.0 * mc.std_error + 1e-6);
}

TEST(Psi, MonotoneAndAboveNoise) {
    for (const auto& prior : {sparse_prior, PriorDistribution::generalized_gaussian(0.65)}) {
        for (double tau : {0.5, 1.2, 2.5}) {
            const auto curve = psi_curve(tau, 0.05, 0.35, prior);
            double prev = -1.0;
            for (double m = 0.0; m <= 3.0; m += 0.01) {
                const double p = curve(m);
                EXPECT_GE(p, 0.05);
                EXPECT_GE(p, prev - 1e-14);
                prev = p;
            }
        }
    }
}

TEST(Evolve, InitialState) {
    const auto s = initial_se_state(sparse_prior, 0.1, 0.3);
    EXPECT_DOUBLE_EQ(s.sigma2, 0.1 + 0.045 / 0.3);
}

TEST(Evolve, NoSignalStaysAtZero) {
    const auto states = evolve(initial_se_state(zero_prior, 0.0, 0.3), FixedTauPolicy{1.5}, 10);
    ASSERT_EQ(states.size(), 11u);
    for (std::size_t t = 1; t < states.size(); ++t) EXPECT_EQ(states[t].sigma2, 0.0);
}

TEST(Evolve, SparseBernoulliConvergesToZero) {
    const auto states = evolve(initial_se_state(sparse_prior, 0.0, sparse_delta), FixedTauPolicy{minimax_tau(sparse_delta)}, 200);
    for (std::size_t t = 1; t < states.size(); ++t) {
        if (states[t - 1].sigma2 > 1e-300) EXPECT_LT(states[t].sigma2, states[t - 1].sigma2);
    }
    EXPECT_LT(states.back().sigma2, 1e-12);
}

TEST(Evolve, RejectsBasisPursuitAndZeroSteps) {
    const auto s = initial_se_state(sparse_prior, 0.0, 0.3);
    EXPECT_THROW(evolve(s, BasisPursuitPolicy::geometric(), 3), parameter_error);
    EXPECT_THROW(evolve(s, FixedTauPolicy{1.0}, 0), parameter_error);
}

TEST(Evolve, LassoPolicyThetaRecursion) {
    SEState s = initial_se_state(sparse_prior, 0.01, 0.5);
    s.theta = 0.7;
    const auto states = evolve(s, LassoPolicy{0.1}, 3);
    const double d0 = mean_derivative(states[0].sigma2, states[0].theta, sparse_prior);
    EXPECT_NEAR(states[1].theta, 0.1 + 0.7 / 0.5 * d0, 1e-14);
    EXPECT_NEAR(states[1].sigma2, psi(states[0].sigma2, 0.01, 0.5, 0.7, sparse_prior), 1e-14);
}

TEST(Hfp, AnalyticCurves) {
    const auto half = [](double m) { return m / 2.0; };
    const auto h = hfp(half, 10.0);
    EXPECT_EQ(h.value, 0.0);
    EXPECT_FALSE(h.at_upper_bound);
    EXPECT_NEAR(stability_coefficient(half, h.value), 0.5, 1e-9);

    const auto ident = [](double m) { return m; };
    const auto d = hfp(ident, 10.0);
    EXPECT_EQ(d.value, 10.0);
    EXPECT_TRUE(d.at_upper_bound);

    const auto affine = [](double m) { return 0.4 + 0.6 * m; };
    const auto a = hfp(affine, 10.0);
    EXPECT_NEAR(a.value, 1.0, 1e-9);
    EXPECT_NEAR(stability_coefficient(affine, a.value), 0.6, 1e-8);
}

TEST(Hfp, ZeroBelowTransitionAndBoundHolds) {
    const double tau = minimax_tau(sparse_delta);
    const auto curve = psi_curve(tau, 0.0, sparse_delta, sparse_prior);
    const auto s0 = initial_se_state(sparse_prior, 0.0, sparse_delta);
    const auto h = hfp(curve, 4.0 * s0.sigma2);
    EXPECT_EQ(h.value, 0.0);
    const double sc = stability_coefficient(curve, h.value);
    EXPECT_GT(sc, 0.0);
    EXPECT_LT(sc, 1.0);
    const auto states = evolve(s0, FixedTauPolicy{tau}, 100);
    for (std::size_t t = 0; t < states.size(); ++t) {
        EXPECT_LE(states[t].sigma2 - h.value, std::pow(sc, t) * (s0.sigma2 - h.value) * (1 + 1e-9)) << t;
    }
}

TEST(Hfp, PositiveHfpWithNoiseAndBoundHolds) {
    const double tau = 1.5, v = 0.05, delta = 0.4;
    const auto prior = PriorDistribution::bernoulli(0.1, 2.0);
    const auto curve = psi_curve(tau, v, delta, prior);
    const auto s0 = initial_se_state(prior, v, delta);
    const auto h = hfp(curve, 4.0 * s0.sigma2);
    EXPECT_GT(h.value, v);
    EXPECT_NEAR(curve(h.value), h.value, 1e-9);
    const double sc = stability_coefficient(curve, h.value);
    EXPECT_LT(sc, 1.0);
    const auto states = evolve(s0, FixedTauPolicy{tau}, 60);
    for (std::size_t t = 0; t < states.size(); ++t) {
        EXPECT_LE(states[t].sigma2 - h.value, std::pow(sc, t) * (s0.sigma2 - h.value) + 1e-9) << t;
    }
}

TEST(StateExpectation, TrivialState) {
    const SEState s{0.0, 0.0, 0.3, 1.0, zero_prior};
    EXPECT_EQ(state_expectation(Observable::Mse, s), 0.0);
    EXPECT_EQ(state_expectation(Observable::Far, s), 0.0);
    EXPECT_EQ(state_expectation(Observable::Dr, s), 0.0);
}

TEST(StateExpectation, RequiresSigmaAboveNoise) {
    const SEState s{0.01, 0.1, 0.3, 1.0, sparse_prior};
    EXPECT_THROW(state_expectation(Observable::Mse, s), parameter_error);
}

TEST(StateExpectation, FalseAlarmTail) {
    const SEState s{0.2, 0.05, 0.3, 0.9, sparse_prior};
    const double expected = 2.0 * normal_cdf(-0.9 / std::sqrt(0.2));
    EXPECT_NEAR(state_expectation(Observable::Far, s), expected, 1e-14);
    const auto mc = state_expectation_estimate(Observable::Far, s, {}, ExpectationEngine::monte_carlo(2'000'000, 4));
    EXPECT_LE(std::abs(mc.value - expected), 4.0 * mc.std_error);
}

TEST(StateExpectation, ObservablesAgreeAcrossEngines) {
    const SEState s{0.3, 0.05, 0.3, 0.6, PriorDistribution::three_point(0.2, 1.5)};
    const auto mc = ExpectationEngine::monte_carlo(2'000'000, 6);
    for (auto kind : {Observable::Mse, Observable::MseNz, Observable::Far, Observable::Mdr, Observable::Dr}) {
        const double cf = state_expectation(kind, s);
        const auto m = state_expectation_estimate(kind, s, {}, mc);
        EXPECT_LE(std::abs(m.value - cf), 4.0 * m.std_error + 1e-12) << static_cast<int>(kind);
        const double gh61 = state_expectation(kind, s, {}, ExpectationEngine::quadrature(61));
        if (kind == Observable::Mse || kind == Observable::MseNz) {
            EXPECT_NEAR(gh61, cf, 3e-3 * cf) << static_cast<int>(kind);
        } else {
            // Indicator integrands: Gauss-Hermite converges slowly across the jump at |y| = theta.
            const double gh181 = state_expectation(kind, s, {}, ExpectationEngine::quadrature(181));
            EXPECT_NEAR(gh61, cf, 0.05) << static_cast<int>(kind);
            EXPECT_LT(std::abs(gh181 - cf), std::abs(gh61 - cf)) << static_cast<int>(kind);
        }
    }
}

TEST(StateExpectation, CustomObservableMatchesBuiltIn) {
    const SEState s{0.3, 0.05, 0.3, 0.6, sparse_prior};
    const CustomObservable sq = [](double u, double, double, double x) { return (x - u) * (x - u); };
    EXPECT_THROW(state_expectation(sq, s, {}, ExpectationEngine::closed_form()), capability_error);
    const double gh = state_expectation(sq, s, {}, ExpectationEngine::quadrature());
    EXPECT_NEAR(gh, state_expectation(Observable::Mse, s), 2e-3 * gh);
    const auto mc = state_expectation_estimate(sq, s, {}, ExpectationEngine::monte_carlo(1'000'000, 8));
    EXPECT_LE(std::abs(mc.value - state_expectation(Observable::Mse, s)), 4.0 * mc.std_error);
}

TEST(Minimax, TauPositiveAndDecreasing) {
    const double t1 = minimax_tau(0.1), t5 = minimax_tau(0.5), t9 = minimax_tau(0.9);
    EXPECT_GT(t1, t5);
    EXPECT_GT(t5, t9);
    EXPECT_GT(t9, 0.0);
    EXPECT_THROW(minimax_tau(0.0), parameter_error);
    EXPECT_THROW(minimax_tau(1.0), parameter_error);
}

TEST(Minimax, PhaseTransitionIncreasingAndConsistent) {
    double prev = 0.0;
    for (double delta : {0.1, 0.3, 0.5, 0.7}) {
        const double rho = se_phase_transition(delta);
        EXPECT_GT(rho, prev);
        EXPECT_LT(rho, 1.0);
        EXPECT_NEAR(rho, minimax_rho(delta), 2e-4);
        const double tau = minimax_tau(delta);
        EXPECT_EQ(least_favorable_hfp(rho - 0.01, delta, tau).value, 0.0);
        EXPECT_GT(least_favorable_hfp(rho + 0.01, delta, tau).value, 0.0);
        prev = rho;
    }
    EXPECT_LT(0.15, se_phase_transition(0.3));
}

TEST(Minimax, AmplitudeSensitivity) {
    for (double delta : {0.1, 0.3, 0.5}) {
        const double tau = minimax_tau(delta);
        const double shift = std::abs(recoverable_eps(tau, delta, 2e3) - recoverable_eps(tau, delta, 1e3)) / delta;
        EXPECT_LT(shift, 1e-4);
    }
}

TEST(Minimax, EvolveStallsOnlyAboveTransition) {
    const double delta = 0.3, tau = minimax_tau(delta), rho = se_phase_transition(delta);
    for (double r : {rho - 0.02, rho + 0.02}) {
        const auto prior = PriorDistribution::three_point(r * delta, least_favorable_amplitude);
        const auto states = evolve(initial_se_state(prior, 0.0, delta), FixedTauPolicy{tau}, 3000);
        const double h = least_favorable_hfp(r, delta, tau).value;
        if (r < rho) {
            EXPECT_EQ(h, 0.0);
            EXPECT_LT(states.back().sigma2, 1e-6 * states.front().sigma2);
        } else {
            EXPECT_GT(h, 0.0);
            EXPECT_GE(states.back().sigma2, h * (1.0 - 1e-6));
        }
    }
}

TEST(Equilibrium, NoiselessSubTransitionIsZero) {
    const auto eq = equilibrium(minimax_tau(sparse_delta), 0.0, sparse_delta, sparse_prior);
    EXPECT_LT(eq.sigma, 1e-5);
    EXPECT_LT(eq.theta, 1e-5);
    EXPECT_NEAR(calibrate_lambda(minimax_tau(sparse_delta), 0.0, sparse_delta, sparse_prior), 0.0, 1e-5);
}

TEST(Equilibrium, NoisyAboveNoiseLevelAndGeometricApproach) {
    const double tau = 1.4, v = 0.02, delta = 0.5;
    const auto prior = PriorDistribution::bernoulli(0.1);
    const auto eq = equilibrium(tau, v, delta, prior);
    EXPECT_GE(eq.sigma * eq.sigma, v);
    const auto curve = psi_curve(tau, v, delta, prior);
    const double s_inf = eq.sigma * eq.sigma;
    const double sc = stability_coefficient(curve, s_inf);
    const auto states = evolve(initial_se_state(prior, v, delta), FixedTauPolicy{tau}, 40);
    double ratio = 0.0;
    for (std::size_t t = 25; t < 30; ++t) ratio = (states[t + 1].sigma2 - s_inf) / (states[t].sigma2 - s_inf);
    EXPECT_NEAR(ratio, sc, 1e-3);
}

TEST(Equilibrium, RequiresPositiveTau) {
    EXPECT_THROW(equilibrium(0.0, 0.0, 0.3, sparse_prior), parameter_error);
}

TEST(Calibration, EqDetectionRateLimits) {
    const double v = 0.01, delta = 0.3;
    EXPECT_LT(eq_detection_rate(8.0, v, delta, sparse_prior), 1e-6);
    const auto mc = ExpectationEngine::monte_carlo(10'000'000, 12);
    const auto eq = equilibrium(1.6, v, delta, sparse_prior);
    const SEState s{eq.sigma * eq.sigma, v, delta, eq.theta, sparse_prior};
    const double cf = state_expectation(Observable::Dr, s);
    const auto est = state_expectation_estimate(Observable::Dr, s, {}, mc);
    EXPECT_LE(std::abs(est.value - cf), 3.0 * est.std_error);
}

// theta = 0 with positive sigma passes every coordinate.
TEST(Calibration, ZeroThresholdDetectsEverything) {
    const SEState s{0.5, 0.1, 0.3, 0.0, sparse_prior};
    EXPECT_NEAR(state_expectation(Observable::Dr, s), 1.0, 1e-15);
}

TEST(Calibration, LambdaNondecreasingAndRoundTrip) {
    const double v = 0.01, delta = 0.3;
    const double tau0 = tau_validity_threshold(v, delta, sparse_prior);
    EXPECT_THROW(calibrate_lambda(tau0 * 0.9, v, delta, sparse_prior), validity_error);
    double prev = -1.0;
    for (double tau = tau0 + 0.05; tau < tau0 + 3.0; tau += 0.25) {
        const double lambda = calibrate_lambda(tau, v, delta, sparse_prior);
        EXPECT_GE(lambda, prev);
        prev = lambda;
        EXPECT_NEAR(calibrate_tau(lambda, v, delta, sparse_prior, {}, tau0), tau, 1e-6);
    }
}

TEST(Calibration, OutOfRangeLambda) {
    const auto prior = PriorDistribution::generalized_gaussian(1.0);
    EXPECT_THROW(calibrate_tau(1e9, 0.0, 0.3, prior), range_error);
    EXPECT_THROW(calibrate_tau(-1.0, 0.0, 0.3, prior), range_error);
}

TEST(Calibration, ZeroLambdaGivesSmallestValidTau) {
    const double tau0 = tau_validity_threshold(0.0, 0.5, sparse_prior);
    EXPECT_NEAR(calibrate_tau(0.0, 0.0, 0.5, sparse_prior, {}, tau0), tau0, 1e-9);
}
