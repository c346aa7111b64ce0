#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fmgeig/errors.hpp"
#include "fmgeig/vector_ops.hpp"
#include "fmgeig/work.hpp"

namespace fmgeig {

/// Row-major dense matrix for the small reduced problems.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix I(n, n);
        for (std::size_t i = 0; i < n; ++i) I(i, i) = 1.0;
        return I;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> data() const noexcept { return data_; }

    void multiply(std::span<const double> x, std::span<double> y, WorkReport* work = nullptr) const {
        require_same_size(x.size(), cols_, "DenseMatrix::multiply (x)");
        require_same_size(y.size(), rows_, "DenseMatrix::multiply (y)");
        for (std::size_t i = 0; i < rows_; ++i) {
            double s = 0.0;
            const double* r = data_.data() + i * cols_;
            for (std::size_t j = 0; j < cols_; ++j) s += r[j] * x[j];
            y[i] = s;
        }
        if (work) work->matvec_nonzeros += rows_ * cols_;
    }

    Vector operator*(std::span<const double> x) const {
        Vector y(rows_);
        multiply(x, y);
        return y;
    }

    double quadratic_form(std::span<const double> x, WorkReport* work = nullptr) const {
        Vector y(rows_);
        multiply(x, y, work);
        return dot(x, y);
    }

    bool is_symmetric(double tol = 0.0) const {
        if (rows_ != cols_) return false;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
        return true;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// a*A + b*B
inline DenseMatrix add(const DenseMatrix& A, double a, const DenseMatrix& B, double b) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw InvalidArgument("add: shape mismatch");
    DenseMatrix C(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) = a * A(i, j) + b * B(i, j);
    return C;
}

/// Dense Cholesky factorization A = L L^T.
class DenseCholesky {
public:
    /// Returns false (and leaves the factor unusable) when A is not numerically SPD.
    bool factor(const DenseMatrix& A, WorkReport* work = nullptr) {
        if (A.rows() != A.cols()) throw InvalidArgument("DenseCholesky: matrix not square");
        n_ = A.rows();
        L_ = DenseMatrix(n_, n_);
        ok_ = false;
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                double s = A(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= L_(i, k) * L_(j, k);
                if (i == j) {
                    if (!(s > 0.0) || !std::isfinite(s)) return false;
                    L_(i, i) = std::sqrt(s);
                } else {
                    L_(i, j) = s / L_(j, j);
                }
            }
        }
        if (work) work->factor_entries += n_ * n_ * n_ / 6 + n_ * n_;
        ok_ = true;
        return true;
    }

    bool ok() const noexcept { return ok_; }
    std::size_t size() const noexcept { return n_; }

    Vector solve(std::span<const double> b, WorkReport* work = nullptr) const {
        if (!ok_) throw SolverError("DenseCholesky::solve: no valid factorization");
        require_same_size(b.size(), n_, "DenseCholesky::solve");
        Vector x(b.begin(), b.end());
        for (std::size_t i = 0; i < n_; ++i) {
            double s = x[i];
            for (std::size_t k = 0; k < i; ++k) s -= L_(i, k) * x[k];
            x[i] = s / L_(i, i);
        }
        for (std::size_t i = n_; i-- > 0;) {
            double s = x[i];
            for (std::size_t k = i + 1; k < n_; ++k) s -= L_(k, i) * x[k];
            x[i] = s / L_(i, i);
        }
        if (work) work->factor_entries += n_ * n_;
        return x;
    }

private:
    std::size_t n_ = 0;
    DenseMatrix L_;
    bool ok_ = false;
};

struct SymmetricEigen {
    Vector values;      // ascending
    DenseMatrix vectors; // column j belongs to values[j]
};

/// All eigenpairs of a small symmetric matrix by cyclic Jacobi rotations.
inline SymmetricEigen symmetric_eigen(const DenseMatrix& A, int max_sweeps = 100) {
    if (A.rows() != A.cols()) throw InvalidArgument("symmetric_eigen: matrix not square");
    const std::size_t n = A.rows();
    DenseMatrix a = A;
    DenseMatrix v = DenseMatrix::identity(n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0, diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diag += a(i, i) * a(i, i);
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        }
        if (off <= 1e-32 * diag || off == 0.0) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
    SymmetricEigen out{Vector(n), DenseMatrix(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
    }
    return out;
}

} // namespace fmgeig
