#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>

#include "ampcs/errors.hpp"
#include "ampcs/rng.hpp"

namespace ampcs {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace detail {

// FFTW's planner is not thread-safe; execution with the new-array API is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex mu;
    return mu;
}

class R2RPlan {
public:
    R2RPlan(int n, fftw_r2r_kind kind) {
        std::vector<double> in(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
        std::lock_guard lock(fftw_planner_mutex());
        plan_ = fftw_plan_r2r_1d(n, in.data(), out.data(), kind, FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (!plan_) throw error("fftw: failed to create r2r plan");
    }
    R2RPlan(const R2RPlan&) = delete;
    R2RPlan& operator=(const R2RPlan&) = delete;
    ~R2RPlan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan_);
    }

    void execute(double* in, double* out) const { fftw_execute_r2r(plan_, in, out); }

private:
    fftw_plan plan_ = nullptr;
};

struct DenseImpl {
    Mat matrix;
};

// Rows `rows` of the orthonormal DCT-II matrix C (C_kj = c_k sqrt(2/N) cos(pi (2j+1) k / 2N),
// c_0 = 1/sqrt 2), followed by per-column rescaling to unit norm: A = S C diag(col_scale).
struct PartialDctImpl {
    std::vector<Eigen::Index> rows;
    Vec col_scale;
    std::shared_ptr<R2RPlan> forward;  // REDFT10 (DCT-II, unnormalized)
    std::shared_ptr<R2RPlan> backward; // REDFT01 (DCT-III, unnormalized)

    double row_weight(Eigen::Index k, Eigen::Index big_n) const {
        return k == 0 ? std::sqrt(1.0 / static_cast<double>(big_n)) : std::sqrt(2.0 / static_cast<double>(big_n));
    }
};

} // namespace detail

enum class OperatorKind { DenseGaussian, PartialFourier };

/// Linear map A : R^N -> R^n with unit-norm columns. Immutable; copies share storage.
class MeasurementOperator {
public:
    /// iid Gaussian entries; every column divided by its computed norm.
    static MeasurementOperator dense_gaussian(Eigen::Index n, Eigen::Index big_n, std::uint64_t seed) {
        check_dims(n, big_n);
        Engine rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Mat a(n, big_n);
        for (Eigen::Index j = 0; j < big_n; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) a(i, j) = gauss(rng);
        }
        for (Eigen::Index j = 0; j < big_n; ++j) a.col(j) /= a.col(j).norm();
        return MeasurementOperator(detail::DenseImpl{std::move(a)}, OperatorKind::DenseGaussian, n, big_n);
    }

    /// n distinct rows of the N x N orthonormal DCT-II matrix, columns rescaled to unit norm.
    static MeasurementOperator partial_fourier(Eigen::Index n, Eigen::Index big_n, std::uint64_t seed) {
        check_dims(n, big_n);
        Engine rng(seed);
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(big_n));
        for (Eigen::Index i = 0; i < big_n; ++i) perm[static_cast<std::size_t>(i)] = i;
        // Partial Fisher-Yates.
        for (Eigen::Index i = 0; i < n; ++i) {
            std::uniform_int_distribution<Eigen::Index> pick(i, big_n - 1);
            std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
        }
        detail::PartialDctImpl impl;
        impl.rows.assign(perm.begin(), perm.begin() + n);
        std::sort(impl.rows.begin(), impl.rows.end());

        const double nn = static_cast<double>(big_n);
        impl.col_scale.resize(big_n);
        for (Eigen::Index j = 0; j < big_n; ++j) {
            double s = 0.0;
            for (auto k : impl.rows) {
                const double c = impl.row_weight(k, big_n) *
                                 std::cos(std::numbers::pi * static_cast<double>((2 * j + 1) * k) / (2.0 * nn));
                s += c * c;
            }
            if (!(s > 0.0)) throw error("partial Fourier operator: zero column");
            impl.col_scale(j) = 1.0 / std::sqrt(s);
        }
        impl.forward = std::make_shared<detail::R2RPlan>(static_cast<int>(big_n), FFTW_REDFT10);
        impl.backward = std::make_shared<detail::R2RPlan>(static_cast<int>(big_n), FFTW_REDFT01);
        return MeasurementOperator(std::move(impl), OperatorKind::PartialFourier, n, big_n);
    }

    static MeasurementOperator build(OperatorKind kind, Eigen::Index n, Eigen::Index big_n, std::uint64_t seed) {
        return kind == OperatorKind::DenseGaussian ? dense_gaussian(n, big_n, seed) : partial_fourier(n, big_n, seed);
    }

    /// Wraps an explicit matrix; its columns must already have unit norm.
    static MeasurementOperator from_dense(Mat a) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (std::abs(a.col(j).norm() - 1.0) > 1e-10) {
                throw parameter_error("from_dense: column " + std::to_string(j) + " does not have unit norm");
            }
        }
        const auto n = a.rows(), big_n = a.cols();
        check_dims(n, big_n);
        return MeasurementOperator(detail::DenseImpl{std::move(a)}, OperatorKind::DenseGaussian, n, big_n);
    }

    Eigen::Index rows() const noexcept { return n_; }
    Eigen::Index cols() const noexcept { return big_n_; }
    OperatorKind kind() const noexcept { return kind_; }

    /// Realized undersampling ratio n / N.
    double delta() const noexcept { return static_cast<double>(n_) / static_cast<double>(big_n_); }

    void apply(const Vec& x, Vec& out) const {
        if (x.size() != big_n_) throw dimension_error("apply: expected a vector of length N");
        out.resize(n_);
        if (auto d = std::get_if<detail::DenseImpl>(impl_.get())) {
            out.noalias() = d->matrix * x;
            return;
        }
        const auto& p = std::get<detail::PartialDctImpl>(*impl_);
        Vec in = x.cwiseProduct(p.col_scale);
        Vec full(big_n_);
        p.forward->execute(in.data(), full.data());
        for (Eigen::Index i = 0; i < n_; ++i) {
            const auto k = p.rows[static_cast<std::size_t>(i)];
            out(i) = 0.5 * p.row_weight(k, big_n_) * full(k);
        }
    }

    void apply_adjoint(const Vec& z, Vec& out) const {
        if (z.size() != n_) throw dimension_error("apply_adjoint: expected a vector of length n");
        out.resize(big_n_);
        if (auto d = std::get_if<detail::DenseImpl>(impl_.get())) {
            out.noalias() = d->matrix.transpose() * z;
            return;
        }
        const auto& p = std::get<detail::PartialDctImpl>(*impl_);
        Vec coeffs = Vec::Zero(big_n_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            const auto k = p.rows[static_cast<std::size_t>(i)];
            coeffs(k) = (k == 0 ? 1.0 : 0.5) * p.row_weight(k, big_n_) * z(i);
        }
        p.backward->execute(coeffs.data(), out.data());
        out.array() *= p.col_scale.array();
    }

    Vec apply(const Vec& x) const {
        Vec out;
        apply(x, out);
        return out;
    }

    Vec apply_adjoint(const Vec& z) const {
        Vec out;
        apply_adjoint(z, out);
        return out;
    }

    /// Explicit n x N matrix. Free for dense operators, O(N^2 log N) otherwise.
    Mat dense() const {
        if (auto d = std::get_if<detail::DenseImpl>(impl_.get())) return d->matrix;
        Mat a(n_, big_n_);
        Vec e = Vec::Zero(big_n_);
        for (Eigen::Index j = 0; j < big_n_; ++j) {
            e(j) = 1.0;
            a.col(j) = apply(e);
            e(j) = 0.0;
        }
        return a;
    }

    /// Borrowed matrix for dense operators, nullptr otherwise.
    const Mat* dense_matrix() const noexcept {
        auto d = std::get_if<detail::DenseImpl>(impl_.get());
        return d ? &d->matrix : nullptr;
    }

private:
    using Impl = std::variant<detail::DenseImpl, detail::PartialDctImpl>;

    MeasurementOperator(Impl impl, OperatorKind kind, Eigen::Index n, Eigen::Index big_n)
        : impl_(std::make_shared<const Impl>(std::move(impl))), kind_(kind), n_(n), big_n_(big_n) {}

    static void check_dims(Eigen::Index n, Eigen::Index big_n) {
        if (n < 1 || big_n < 1) throw dimension_error("operator dimensions must be positive");
        if (n > big_n) throw dimension_error("operator needs n <= N (got n=" + std::to_string(n) + ", N=" + std::to_string(big_n) + ")");
    }

    std::shared_ptr<const Impl> impl_;
    OperatorKind kind_;
    Eigen::Index n_;
    Eigen::Index big_n_;
};

} // namespace ampcs
