#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "ampcs/errors.hpp"
#include "ampcs/rng.hpp"

namespace ampcs {

using Vec = Eigen::VectorXd;

struct Atom {
    double value;
    double prob;
};

/// Finite mixture of point masses, sum_i p_i delta_{x_i}.
class PointMassMixture {
public:
    explicit PointMassMixture(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
        if (atoms_.empty()) throw parameter_error("point-mass mixture needs at least one atom");
        double total = 0.0;
        for (const auto& a : atoms_) {
            if (!(a.prob >= 0.0) || !std::isfinite(a.value)) {
                throw parameter_error("point-mass mixture: probabilities must be nonnegative and atoms finite");
            }
            total += a.prob;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw parameter_error("point-mass mixture: probabilities sum to " + std::to_string(total) + ", not 1");
        }
        cumulative_.reserve(atoms_.size());
        double c = 0.0;
        for (const auto& a : atoms_) {
            c += a.prob;
            cumulative_.push_back(c);
        }
    }

    const std::vector<Atom>& atoms() const noexcept { return atoms_; }

    double second_moment() const noexcept {
        double m = 0.0;
        for (const auto& a : atoms_) m += a.prob * a.value * a.value;
        return m;
    }

    double mass_at_zero() const noexcept {
        double m = 0.0;
        for (const auto& a : atoms_) {
            if (a.value == 0.0) m += a.prob;
        }
        return m;
    }

    bool symmetric() const {
        for (const auto& a : atoms_) {
            double mirrored = 0.0;
            for (const auto& b : atoms_) {
                if (b.value == -a.value) mirrored += b.prob;
            }
            double self = 0.0;
            for (const auto& b : atoms_) {
                if (b.value == a.value) self += b.prob;
            }
            if (std::abs(mirrored - self) > 1e-15) return false;
        }
        return true;
    }

    template <class Rng>
    double sample(Rng& rng) const {
        std::uniform_real_distribution<double> unif(0.0, cumulative_.back());
        const double u = unif(rng);
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        if (it == cumulative_.end()) --it;
        return atoms_[static_cast<std::size_t>(it - cumulative_.begin())].value;
    }

private:
    std::vector<Atom> atoms_;
    std::vector<double> cumulative_;
};

/// Density exp(-|x/scale|^alpha) / Z, Z = 2 scale Gamma(1 + 1/alpha).
class GeneralizedGaussian {
public:
    GeneralizedGaussian(double alpha, double scale) : alpha_(alpha), scale_(scale) {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw parameter_error("generalized Gaussian: alpha must be > 0");
        if (!(scale > 0.0) || !std::isfinite(scale)) throw parameter_error("generalized Gaussian: scale must be > 0");
    }

    double alpha() const noexcept { return alpha_; }
    double scale() const noexcept { return scale_; }

    double normalizer() const { return 2.0 * scale_ * std::tgamma(1.0 + 1.0 / alpha_); }

    double pdf(double x) const { return std::exp(-std::pow(std::abs(x / scale_), alpha_)) / normalizer(); }

    double cdf(double x) const {
        const double tail = boost::math::gamma_p(1.0 / alpha_, std::pow(std::abs(x) / scale_, alpha_));
        return x >= 0.0 ? 0.5 + 0.5 * tail : 0.5 - 0.5 * tail;
    }

    /// |X/scale|^alpha ~ Gamma(1/alpha, 1) with an independent random sign.
    template <class Rng>
    double sample(Rng& rng) const {
        std::gamma_distribution<double> g(1.0 / alpha_, 1.0);
        std::bernoulli_distribution sign(0.5);
        const double magnitude = scale_ * std::pow(g(rng), 1.0 / alpha_);
        return sign(rng) ? magnitude : -magnitude;
    }

    /// E[h(X)] by quadrature in u = |X/scale|^alpha, where u ~ Gamma(1/alpha, 1).
    /// `kinks` are magnitudes |x| at which h may be non-smooth; the u-range is split there.
    template <class F>
    double expect(F&& h, std::vector<double> kinks = {}) const {
        const double shape = 1.0 / alpha_;
        const double log_norm = std::lgamma(shape);
        auto integrand = [&](double u) {
            if (u <= 0.0) return 0.0;
            const double x = scale_ * std::pow(u, shape);
            const double w = std::exp((shape - 1.0) * std::log(u) - u - log_norm);
            if (w == 0.0) return 0.0;
            return 0.5 * (h(x) + h(-x)) * w;
        };
        std::vector<double> cuts;
        for (double k : kinks) {
            const double u = std::pow(std::abs(k) / scale_, alpha_);
            if (u > 1e-10 && std::isfinite(u) && u < 700.0) cuts.push_back(u);
        }
        // Bulk of the Gamma mass.
        cuts.push_back(std::max(shape, 1.0));
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

        constexpr double tol = 1e-13;
        boost::math::quadrature::tanh_sinh<double> finite;
        boost::math::quadrature::exp_sinh<double> tail;
        double total = 0.0;
        double lo = 0.0;
        for (double c : cuts) {
            // Nearly coincident cuts make a degenerate tanh-sinh interval; merge them.
            if (c <= lo * (1.0 + 1e-9)) continue;
            // Integrate over [0, c - lo]: Boost's tanh_sinh mishandles left endpoints with |a| >= 0.5.
            total += finite.integrate([&, lo](double s) { return integrand(lo + s); }, 0.0, c - lo, tol);
            lo = c;
        }
        total += tail.integrate(integrand, lo, std::numeric_limits<double>::infinity(), tol);
        return total;
    }

private:
    double alpha_;
    double scale_;
};

/// Signal law F of the iid entries of s0.
class PriorDistribution {
public:
    using Variant = std::variant<PointMassMixture, GeneralizedGaussian>;

    PriorDistribution(PointMassMixture m) : v_(std::move(m)) {}
    PriorDistribution(GeneralizedGaussian g) : v_(std::move(g)) {}

    static PriorDistribution point_mass(double x) { return PointMassMixture({{x, 1.0}}); }

    static PriorDistribution mixture(std::vector<Atom> atoms) { return PointMassMixture(std::move(atoms)); }

    /// (1 - eps) delta_0 + eps delta_value.
    static PriorDistribution bernoulli(double eps, double value = 1.0) {
        if (!(eps >= 0.0 && eps <= 1.0)) throw parameter_error("bernoulli prior: eps must lie in [0,1]");
        if (eps == 0.0) return point_mass(0.0);
        if (eps == 1.0) return point_mass(value);
        return PointMassMixture({{0.0, 1.0 - eps}, {value, eps}});
    }

    /// (1 - eps) delta_0 + (eps/2)(delta_{+mu} + delta_{-mu}).
    static PriorDistribution three_point(double eps, double mu) {
        if (!(eps >= 0.0 && eps <= 1.0)) throw parameter_error("three-point prior: eps must lie in [0,1]");
        return PointMassMixture({{0.0, 1.0 - eps}, {mu, 0.5 * eps}, {-mu, 0.5 * eps}});
    }

    static PriorDistribution generalized_gaussian(double alpha, double scale = 1.0) {
        return GeneralizedGaussian(alpha, scale);
    }

    const Variant& variant() const noexcept { return v_; }

    const PointMassMixture* atoms() const noexcept { return std::get_if<PointMassMixture>(&v_); }
    const GeneralizedGaussian* generalized() const noexcept { return std::get_if<GeneralizedGaussian>(&v_); }

    bool symmetric() const {
        if (auto m = atoms()) return m->symmetric();
        return true;
    }

    /// Probability of a nonzero draw.
    double nonzero_mass() const noexcept {
        if (auto m = atoms()) return 1.0 - m->mass_at_zero();
        return 1.0;
    }

    template <class Rng>
    double sample(Rng& rng) const {
        return std::visit([&](const auto& d) { return d.sample(rng); }, v_);
    }

    std::string describe() const {
        if (auto m = atoms()) {
            std::string s = "mixture:";
            for (std::size_t i = 0; i < m->atoms().size(); ++i) {
                if (i) s += ",";
                s += std::to_string(m->atoms()[i].prob) + "@" + std::to_string(m->atoms()[i].value);
            }
            return s;
        }
        const auto* g = generalized();
        return "gg:" + std::to_string(g->alpha()) + ":" + std::to_string(g->scale());
    }

private:
    Variant v_;
};

/// mu_2(F) = int x^2 dF. Exact for atoms; quadrature for the generalized Gaussian.
inline double second_moment(const PriorDistribution& prior) {
    if (auto m = prior.atoms()) return m->second_moment();
    return prior.generalized()->expect([](double x) { return x * x; });
}

/// N iid draws from F; deterministic in `seed`.
inline Vec sample_prior(const PriorDistribution& prior, std::size_t count, std::uint64_t seed) {
    if (count < 1) throw parameter_error("sample_prior: N must be >= 1");
    Engine rng(seed);
    Vec out(static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = prior.sample(rng);
    return out;
}

} // namespace ampcs
