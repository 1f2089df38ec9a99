#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ampcs/amp.hpp"
#include "ampcs/experiments.hpp"
#include "ampcs/state_evolution.hpp"
#include "oracles.hpp"

using namespace ampcs;

namespace {

const auto sparse_prior = PriorDistribution::bernoulli(0.045);

double median_of(std::vector<double> v) { return median(std::move(v)); }

} // namespace

TEST(AmpStep, MatchesDenseTranscription) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (Eigen::Index big_n : {100, 200}) {
            const auto inst = generate_instance(PriorDistribution::bernoulli(0.1), 0.5, big_n, 0.01,
                                                OperatorKind::DenseGaussian, seed);
            const Mat a = inst.op.dense();
            const double tau = 1.3;
            const ThresholdPolicy policy = FixedTauPolicy{tau};
            for (bool onsager : {true, false}) {
                AmpState s = initial_state(inst, policy);
                Vec x = Vec::Zero(big_n), z = inst.y;
                double theta = tau * std::sqrt(z.squaredNorm() / inst.n());
                EXPECT_NEAR(s.theta, theta, 1e-14);
                for (int t = 0; t < 5; ++t) {
                    s = amp_step(s, inst, Nonlinearity::soft(), policy, {onsager, 1.0});
                    const auto d = oracle::dense_amp_step(a, inst.y, x, z, theta, tau, onsager);
                    x = d.x;
                    z = d.z;
                    theta = d.theta;
                    EXPECT_LE((s.x - x).cwiseAbs().maxCoeff(), 1e-12);
                    EXPECT_LE((s.z - z).cwiseAbs().maxCoeff(), 1e-12);
                    EXPECT_NEAR(s.theta, theta, 1e-12);
                }
            }
        }
    }
}

TEST(AmpStep, ZeroDataIsAFixedPoint) {
    Mat a(1, 2);
    a << 1.0, -1.0;
    const auto inst = make_instance(MeasurementOperator::from_dense(a), Vec::Zero(2), 0.0, 1);
    for (const ThresholdPolicy& policy :
         {ThresholdPolicy(FixedTauPolicy{1.0}), ThresholdPolicy(LassoPolicy{0.5}), ThresholdPolicy(MinimaxPolicy{1.2})}) {
        AmpState s = initial_state(inst, policy);
        for (int t = 0; t < 5; ++t) {
            s = amp_step(s, inst, Nonlinearity::soft(), policy);
            EXPECT_EQ(s.x, Vec::Zero(2));
            EXPECT_EQ(s.z, Vec::Zero(1));
        }
    }
}

TEST(AmpStep, DimensionMismatchThrows) {
    const auto inst = generate_instance(sparse_prior, 0.5, 50, 0.0, OperatorKind::DenseGaussian, 1);
    AmpState s = initial_state(inst, FixedTauPolicy{1.0});
    s.x = Vec::Zero(49);
    EXPECT_THROW(amp_step(s, inst, Nonlinearity::soft(), FixedTauPolicy{1.0}), dimension_error);
}

TEST(AmpStep, DivergenceCarriesIteration) {
    // A huge IST step overshoots without bound.
    const auto inst = generate_instance(PriorDistribution::bernoulli(0.3), 0.5, 200, 0.0, OperatorKind::DenseGaussian, 4);
    AmpOptions opt;
    opt.onsager = false;
    opt.step = 50.0;
    opt.max_iters = 200;
    try {
        run_amp(inst, Nonlinearity::soft(), FixedTauPolicy{0.1}, opt);
        FAIL() << "expected divergence";
    } catch (const amp_divergence& e) {
        EXPECT_GE(e.iteration(), 1u);
        EXPECT_EQ(e.trace().records.size(), e.iteration());
    }
}

TEST(EstimateSigma, Examples) {
    EXPECT_EQ(estimate_sigma(Vec::Zero(5), 5), 0.0);
    EXPECT_DOUBLE_EQ(estimate_sigma(Vec::Constant(7, -1.5), 7), 1.5);
    EXPECT_THROW(estimate_sigma(Vec::Zero(1), 0), parameter_error);
}

TEST(EffectiveVariance, Examples) {
    const Vec s0 = Vec::LinSpaced(10, -1.0, 1.0);
    EXPECT_EQ(effective_variance(s0, s0, 0.0, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(effective_variance(Vec::Zero(10), s0, 0.0, 0.5), s0.squaredNorm() / 5.0);
    // ||e||^2 = N delta.
    Vec e = Vec::Zero(10);
    e(0) = std::sqrt(10 * 0.5);
    EXPECT_DOUBLE_EQ(effective_variance(s0 + e, s0, 0.5, 0.5), 1.5);
    EXPECT_THROW(effective_variance(Vec::Zero(3), s0, 0.0, 0.5), dimension_error);
}

TEST(UpdateThreshold, Examples) {
    const auto inst = generate_instance(sparse_prior, 0.5, 20, 0.0, OperatorKind::DenseGaussian, 1);
    AmpState prev;
    prev.theta = 1.0;
    prev.t = 0;
    const Vec u = Vec::Constant(20, 0.5);
    EXPECT_DOUBLE_EQ(update_threshold(FixedTauPolicy{2.0}, prev, u, Nonlinearity::soft(), 0.5, inst.delta), 1.0);
    EXPECT_DOUBLE_EQ(update_threshold(LassoPolicy{0.1}, prev, u, Nonlinearity::soft(), 0.5, 0.5), 0.1);
    Vec big = u;
    big.head(10).setConstant(3.0);
    EXPECT_DOUBLE_EQ(update_threshold(LassoPolicy{0.1}, prev, big, Nonlinearity::soft(), 0.5, 0.5), 0.1 + 1.0 / 0.5 * 0.5);
}

TEST(UpdateThreshold, RejectsIncreasingSchedule) {
    AmpState prev;
    prev.theta = 1.0;
    prev.sigma_hat0 = 1.0;
    const BasisPursuitPolicy bad{[](std::size_t t, double) { return 0.1 * static_cast<double>(t); }};
    EXPECT_THROW(update_threshold(bad, prev, Vec::Zero(4), Nonlinearity::soft(), 1.0, 0.5), parameter_error);
}

TEST(Policy, Validation) {
    EXPECT_THROW(ThresholdPolicy(FixedTauPolicy{0.0}), parameter_error);
    EXPECT_THROW(ThresholdPolicy(LassoPolicy{-1.0}), parameter_error);
    EXPECT_THROW(ThresholdPolicy(BasisPursuitPolicy{}), parameter_error);
    EXPECT_THROW(BasisPursuitPolicy::geometric(0.1, 1.0), parameter_error);
}

TEST(RunAmp, ZeroSignalStopsAfterOneStep) {
    const auto inst = generate_instance(PriorDistribution::point_mass(0.0), 0.5, 100, 0.0, OperatorKind::DenseGaussian, 2);
    const auto tr = run_amp(inst, Nonlinearity::soft(), MinimaxPolicy{minimax_tau(0.5)});
    EXPECT_TRUE(tr.converged);
    EXPECT_EQ(tr.iterations(), 1u);
    for (const auto& r : tr.records) {
        EXPECT_EQ(r.mse, 0.0);
        EXPECT_EQ(r.far, 0.0);
    }
}

TEST(RunAmp, ObservablesAreBoundedAndTraceHasInitialRecord) {
    const auto inst = generate_instance(sparse_prior, 0.3, 1000, 0.01, OperatorKind::DenseGaussian, 3);
    AmpOptions opt;
    opt.max_iters = 15;
    opt.fixed_iterations = true;
    const auto tr = run_amp(inst, Nonlinearity::soft(), MinimaxPolicy{minimax_tau(0.3)}, opt);
    ASSERT_EQ(tr.records.size(), 16u);
    EXPECT_EQ(tr.records[0].t, 0u);
    EXPECT_EQ(tr.records[0].mdr, 1.0);
    for (const auto& r : tr.records) {
        EXPECT_GE(r.mse, 0.0);
        for (double p : {r.far, r.mdr, r.dr}) {
            EXPECT_GE(p, 0.0);
            EXPECT_LE(p, 1.0);
        }
    }
}

TEST(RunAmp, DeterministicTrace) {
    const auto inst = generate_instance(sparse_prior, 0.3, 500, 0.0, OperatorKind::PartialFourier, 5);
    const auto a = run_amp(inst, Nonlinearity::soft(), MinimaxPolicy{minimax_tau(0.3)});
    const auto b = run_amp(inst, Nonlinearity::soft(), MinimaxPolicy{minimax_tau(0.3)});
    ASSERT_EQ(a.records.size(), b.records.size());
    EXPECT_EQ(a.x, b.x);
    for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].mse, b.records[i].mse);
}

TEST(RunAmp, RecoversSparseBernoulliSignal) {
    const auto inst = generate_instance(sparse_prior, 0.3, 5000, 0.0, OperatorKind::DenseGaussian, 7);
    AmpOptions opt;
    opt.max_iters = 100;
    const auto tr = run_amp(inst, Nonlinearity::soft(), MinimaxPolicy{minimax_tau(0.3)}, opt);
    EXPECT_LT(tr.records.back().mse, 1e-6);
    for (std::size_t t = 1; t < std::min<std::size_t>(tr.records.size(), 30); ++t) {
        EXPECT_LT(tr.records[t].mse, tr.records[t - 1].mse) << "t = " << t;
    }
}

TEST(RunAmp, SigmaHatTracksEffectiveVariance) {
    const auto inst = generate_instance(sparse_prior, 0.3, 5000, 0.0, OperatorKind::DenseGaussian, 8);
    AmpOptions opt;
    opt.max_iters = 12;
    opt.fixed_iterations = true;
    const auto tr = run_amp(inst, Nonlinearity::soft(), MinimaxPolicy{minimax_tau(0.3)}, opt);
    for (std::size_t t = 1; t < tr.records.size(); ++t) {
        EXPECT_NEAR(tr.records[t].sigma_hat / tr.records[t].sigma_true, 1.0, 0.05) << "t = " << t;
    }
}

TEST(RunAmp, IstIsWorseThanAmpMedian) {
    const double delta = 0.3;
    const ThresholdPolicy policy = MinimaxPolicy{minimax_tau(delta)};
    AmpOptions opt;
    opt.max_iters = 20;
    opt.fixed_iterations = true;
    std::vector<std::vector<double>> amp_mse(21), ist_mse(21);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = generate_instance(sparse_prior, delta, 1000, 0.0, OperatorKind::DenseGaussian, 100 + seed);
        const auto a = run_amp(inst, Nonlinearity::soft(), policy, opt);
        // The baseline used by the phase-transition harness.
        AmpOptions ist = opt;
        ist.onsager = false;
        ist.step = 1.9 / operator_norm_squared(inst.op);
        const auto b = run_amp(inst, Nonlinearity::soft(), FixedTauPolicy{2.5}, ist);
        for (std::size_t t = 0; t <= 20; ++t) {
            amp_mse[t].push_back(a.records[t].mse);
            ist_mse[t].push_back(b.records[t].mse);
        }
    }
    for (std::size_t t = 2; t <= 20; ++t) {
        EXPECT_GT(median_of(ist_mse[t]), median_of(amp_mse[t])) << "t = " << t;
    }
}

// With the Onsager term off and a fixed threshold the update is classical IST:
// x <- eta(x + kappa A*(y - Ax); kappa theta).
TEST(RunAmp, OnsagerOffIsClassicalIst) {
    const auto inst = generate_instance(sparse_prior, 0.5, 200, 0.0, OperatorKind::DenseGaussian, 9);
    const Mat a = inst.op.dense();
    const double kappa = 0.9 / operator_norm_squared(inst.op);
    AmpState s = initial_state(inst, FixedTauPolicy{1.0});
    s.theta = 0.3;
    Vec x = Vec::Zero(200);
    for (int t = 0; t < 10; ++t) {
        AmpState next = amp_step(s, inst, Nonlinearity::soft(), FixedTauPolicy{1.0}, {false, kappa});
        Vec u = x + kappa * a.transpose() * (inst.y - a * x);
        for (Eigen::Index i = 0; i < u.size(); ++i) x(i) = soft_threshold(u(i), kappa * 0.3);
        EXPECT_LE((next.x - x).cwiseAbs().maxCoeff(), 1e-12);
        next.theta = 0.3;
        s = next;
    }
}

TEST(RunAmp, OnsagerNeedsUnitStep) {
    const auto inst = generate_instance(sparse_prior, 0.5, 50, 0.0, OperatorKind::DenseGaussian, 1);
    const auto s = initial_state(inst, FixedTauPolicy{1.0});
    EXPECT_THROW(amp_step(s, inst, Nonlinearity::soft(), FixedTauPolicy{1.0}, {true, 0.5}), parameter_error);
}

TEST(RunAmp, LassoPolicyFixedPointIdentity) {
    const auto inst = generate_instance(PriorDistribution::bernoulli(0.1), 0.5, 1000, 0.01, OperatorKind::DenseGaussian, 10);
    const double lambda = 0.2;
    AmpOptions opt;
    opt.max_iters = 5000;
    opt.rel_tol = 1e-12;
    const auto tr = run_amp(inst, Nonlinearity::soft(), LassoPolicy{lambda}, opt);
    ASSERT_TRUE(tr.converged);
    EXPECT_NEAR(tr.theta * (1.0 - tr.mean_deriv / inst.delta), lambda, 1e-6);
}

TEST(RunAmp, MaxItersMustBePositive) {
    const auto inst = generate_instance(sparse_prior, 0.5, 50, 0.0, OperatorKind::DenseGaussian, 1);
    AmpOptions opt;
    opt.max_iters = 0;
    EXPECT_THROW(run_amp(inst, Nonlinearity::soft(), FixedTauPolicy{1.0}, opt), parameter_error);
}

TEST(RunAmp, BasisPursuitPolicyRecoversSparseSignal) {
    const auto inst = generate_instance(PriorDistribution::bernoulli(0.05), 0.5, 1000, 0.0, OperatorKind::DenseGaussian, 11);
    AmpOptions opt;
    opt.max_iters = 3000;
    const auto tr = run_amp(inst, Nonlinearity::soft(), BasisPursuitPolicy::geometric(), opt);
    EXPECT_LT((tr.x - inst.s0).norm() / inst.s0.norm(), 1e-3);
}

// Statistical consistency with state evolution: the gap between the empirical
// MSE at a fixed iteration and its SE prediction shrinks as N grows.
TEST(RunAmp, EmpiricalMseApproachesStateEvolutionWithN) {
    const double delta = 0.3;
    const double tau = minimax_tau(delta);
    const auto states = evolve(initial_se_state(sparse_prior, 0.0, delta), MinimaxPolicy{tau}, 4);
    const std::size_t t = 3;
    const double predicted = state_expectation(Observable::Mse, states[t - 1]);
    std::vector<double> gaps;
    for (Eigen::Index big_n : {250, 1000, 4000}) {
        std::vector<double> g;
        for (std::uint64_t seed = 0; seed < 15; ++seed) {
            const auto inst = generate_instance(sparse_prior, delta, big_n, 0.0, OperatorKind::DenseGaussian, 500 + seed);
            AmpOptions opt;
            opt.max_iters = t;
            opt.fixed_iterations = true;
            const auto tr = run_amp(inst, Nonlinearity::soft(), MinimaxPolicy{tau}, opt);
            g.push_back(std::abs(tr.records[t].mse - predicted));
        }
        gaps.push_back(median_of(g));
    }
    EXPECT_GT(gaps[0], gaps[1]);
    EXPECT_GT(gaps[1], gaps[2]);
}

TEST(OperatorNorm, PowerIterationMatchesSvd) {
    const auto op = MeasurementOperator::dense_gaussian(40, 100, 3);
    const Mat a = op.dense();
    const Eigen::JacobiSVD<Mat> svd(a);
    EXPECT_NEAR(operator_norm_squared(op), svd.singularValues()(0) * svd.singularValues()(0), 1e-6);
}
