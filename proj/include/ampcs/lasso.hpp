#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ampcs/errors.hpp"
#include "ampcs/instance.hpp"
#include "ampcs/nonlinearity.hpp"

namespace ampcs {

struct LassoOptions {
    double tol = 1e-9;
    std::size_t max_sweeps = 100'000;
    /// Keep the objective value after every full sweep.
    bool record_objective = false;
};

struct LassoSolution {
    Vec x_hat;
    double lambda = 0.0;
    std::size_t iterations = 0;
    double kkt_residual = 0.0;
    std::vector<double> objective_trace;
};

class lasso_nonconvergence : public convergence_error {
public:
    lasso_nonconvergence(const std::string& what, LassoSolution best)
        : convergence_error(what), best_(std::move(best)) {}

    const LassoSolution& best() const noexcept { return best_; }

private:
    LassoSolution best_;
};

/// 1/2 ||y - A x||^2 + lambda ||x||_1.
inline double lasso_objective(const Mat& a, const Vec& y, const Vec& x, double lambda) {
    return 0.5 * (y - a * x).squaredNorm() + lambda * x.lpNorm<1>();
}

inline double lasso_objective(const ProblemInstance& inst, const Vec& x, double lambda) {
    return 0.5 * (inst.y - inst.op.apply(x)).squaredNorm() + lambda * x.lpNorm<1>();
}

/// max_i of |A_i*(y - Ax) - lambda sign(x_i)| on the support and max(0, |A_i*(y - Ax)| - lambda) off it.
inline double verify_kkt(const ProblemInstance& inst, const Vec& x, double lambda) {
    if (x.size() != inst.big_n()) throw dimension_error("verify_kkt: x must have length N");
    const Vec g = inst.op.apply_adjoint(inst.y - inst.op.apply(x));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double r = x(i) != 0.0 ? std::abs(g(i) - lambda * (x(i) > 0.0 ? 1.0 : -1.0))
                                     : std::max(0.0, std::abs(g(i)) - lambda);
        worst = std::max(worst, r);
    }
    return worst;
}

/// Cyclic coordinate descent for (BPDN) with unit-norm columns: each update is
/// x_j <- eta(x_j + A_j*(y - Ax); lambda). Full sweeps alternate with sweeps over
/// the current support; stops when the KKT residual is <= tol.
inline LassoSolution solve_lasso(const ProblemInstance& inst, double lambda, const LassoOptions& opt = {}) {
    if (!(lambda >= 0.0)) throw parameter_error("solve_lasso: lambda must be >= 0");
    if (lambda == 0.0 && inst.n() < inst.big_n()) {
        throw underdetermined_error("solve_lasso: lambda = 0 with n < N is basis pursuit; use the AMP basis-pursuit policy");
    }
    const Mat owned = inst.op.dense_matrix() ? Mat() : inst.op.dense();
    const Mat& a = inst.op.dense_matrix() ? *inst.op.dense_matrix() : owned;
    const Eigen::Index big_n = a.cols();

    LassoSolution sol;
    sol.lambda = lambda;
    sol.x_hat = Vec::Zero(big_n);
    Vec& x = sol.x_hat;
    Vec r = inst.y;

    auto update = [&](Eigen::Index j) {
        const double old = x(j);
        const double rho = a.col(j).dot(r) + old;
        const double nw = soft_threshold(rho, lambda);
        if (nw != old) {
            r.noalias() -= (nw - old) * a.col(j);
            x(j) = nw;
        }
        return std::abs(nw - old);
    };

    std::vector<Eigen::Index> active;
    std::size_t sweeps = 0;
    while (sweeps < opt.max_sweeps) {
        for (Eigen::Index j = 0; j < big_n; ++j) update(j);
        ++sweeps;
        if (opt.record_objective) sol.objective_trace.push_back(0.5 * r.squaredNorm() + lambda * x.lpNorm<1>());

        active.clear();
        for (Eigen::Index j = 0; j < big_n; ++j) {
            if (x(j) != 0.0) active.push_back(j);
        }
        for (std::size_t inner = 0; inner < 1000 && sweeps < opt.max_sweeps; ++inner) {
            double biggest = 0.0;
            for (auto j : active) biggest = std::max(biggest, update(j));
            ++sweeps;
            if (biggest <= 1e-3 * opt.tol) break;
        }

        r = inst.y - a * x;
        sol.iterations = sweeps;
        const Vec g = a.transpose() * r;
        double worst = 0.0;
        for (Eigen::Index i = 0; i < big_n; ++i) {
            const double res = x(i) != 0.0 ? std::abs(g(i) - lambda * (x(i) > 0.0 ? 1.0 : -1.0))
                                           : std::max(0.0, std::abs(g(i)) - lambda);
            worst = std::max(worst, res);
        }
        sol.kkt_residual = worst;
        if (worst <= opt.tol) return sol;
    }
    throw lasso_nonconvergence("solve_lasso: KKT residual " + std::to_string(sol.kkt_residual) + " after " +
                                   std::to_string(sweeps) + " sweeps",
                               sol);
}

} // namespace ampcs
