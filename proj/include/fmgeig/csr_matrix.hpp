#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmgeig/errors.hpp"
#include "fmgeig/vector_ops.hpp"
#include "fmgeig/work.hpp"

namespace fmgeig {

/// Compressed sparse row matrix. Column indices are sorted and unique within each row.
class CsrMatrix {
public:
    CsrMatrix() = default;

    CsrMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> offsets,
              std::vector<std::size_t> columns, std::vector<double> values)
        : rows_(rows), cols_(cols), offsets_(std::move(offsets)), columns_(std::move(columns)),
          values_(std::move(values)) {
        if (offsets_.size() != rows_ + 1 || offsets_.front() != 0 ||
            offsets_.back() != columns_.size() || columns_.size() != values_.size())
            throw InvalidArgument("CsrMatrix: inconsistent storage");
        for (std::size_t i = 0; i < rows_; ++i) {
            if (offsets_[i] > offsets_[i + 1])
                throw InvalidArgument("CsrMatrix: offsets not monotone");
            for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) {
                if (columns_[k] >= cols_)
                    throw InvalidArgument("CsrMatrix: column index out of range");
                if (k > offsets_[i] && columns_[k] <= columns_[k - 1])
                    throw InvalidArgument("CsrMatrix: columns not sorted/unique in row " +
                                          std::to_string(i));
            }
        }
    }

    static CsrMatrix identity(std::size_t n) {
        std::vector<std::size_t> off(n + 1), col(n);
        for (std::size_t i = 0; i < n; ++i) {
            off[i + 1] = i + 1;
            col[i] = i;
        }
        return CsrMatrix(n, n, std::move(off), std::move(col), Vector(n, 1.0));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t nnz() const noexcept { return values_.size(); }

    std::span<const std::size_t> offsets() const noexcept { return offsets_; }
    std::span<const std::size_t> columns() const noexcept { return columns_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    std::span<const std::size_t> row_columns(std::size_t i) const noexcept {
        return {columns_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }
    std::span<const double> row_values(std::size_t i) const noexcept {
        return {values_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }

    /// Storage position of (i, j), or npos when structurally zero.
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t find(std::size_t i, std::size_t j) const noexcept {
        auto b = columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]);
        auto e = columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]);
        auto it = std::lower_bound(b, e, j);
        if (it == e || *it != j) return npos;
        return static_cast<std::size_t>(it - columns_.begin());
    }

    double at(std::size_t i, std::size_t j) const {
        if (i >= rows_ || j >= cols_) throw InvalidArgument("CsrMatrix::at: index out of range");
        std::size_t k = find(i, j);
        return k == npos ? 0.0 : values_[k];
    }

    bool same_pattern(const CsrMatrix& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_ && offsets_ == o.offsets_ &&
               columns_ == o.columns_;
    }

    /// y = A x
    void multiply(std::span<const double> x, std::span<double> y, WorkReport* work = nullptr) const {
        require_same_size(x.size(), cols_, "CsrMatrix::multiply (x)");
        require_same_size(y.size(), rows_, "CsrMatrix::multiply (y)");
        parallel_rows(rows_, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                double s = 0.0;
                for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k)
                    s += values_[k] * x[columns_[k]];
                y[i] = s;
            }
        });
        if (work) work->matvec_nonzeros += nnz();
    }

    Vector operator*(std::span<const double> x) const {
        Vector y(rows_);
        multiply(x, y);
        return y;
    }

    /// y = A^T x
    void multiply_transpose(std::span<const double> x, std::span<double> y,
                            WorkReport* work = nullptr) const {
        require_same_size(x.size(), rows_, "CsrMatrix::multiply_transpose (x)");
        require_same_size(y.size(), cols_, "CsrMatrix::multiply_transpose (y)");
        std::fill(y.begin(), y.end(), 0.0);
        for (std::size_t i = 0; i < rows_; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k)
                y[columns_[k]] += values_[k] * xi;
        }
        if (work) work->matvec_nonzeros += nnz();
    }

    /// x^T A x
    double quadratic_form(std::span<const double> x, WorkReport* work = nullptr) const {
        Vector y(rows_);
        multiply(x, y, work);
        return dot(x, y);
    }

    CsrMatrix transpose() const {
        std::vector<std::size_t> off(cols_ + 1, 0);
        for (std::size_t c : columns_) ++off[c + 1];
        for (std::size_t j = 0; j < cols_; ++j) off[j + 1] += off[j];
        std::vector<std::size_t> col(nnz());
        Vector val(nnz());
        std::vector<std::size_t> next(off.begin(), off.end() - 1);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) {
                std::size_t p = next[columns_[k]]++;
                col[p] = i;
                val[p] = values_[k];
            }
        return CsrMatrix(cols_, rows_, std::move(off), std::move(col), std::move(val));
    }

    /// True when a(i,j) == a(j,i) up to `tol` (absolute); exact when tol = 0.
    bool is_symmetric(double tol = 0.0) const {
        if (rows_ != cols_) return false;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) {
                double other = at(columns_[k], i);
                if (std::abs(other - values_[k]) > tol) return false;
            }
        return true;
    }

    Vector diagonal() const {
        Vector d(std::min(rows_, cols_), 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) {
            std::size_t k = find(i, i);
            if (k != npos) d[i] = values_[k];
        }
        return d;
    }

    double sum() const {
        double s = 0.0;
        for (double v : values_) s += v;
        return s;
    }

    CsrMatrix& operator*=(double a) {
        for (double& v : values_) v *= a;
        return *this;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::size_t> columns_;
    std::vector<double> values_;
};

/// a*A + b*B. Patterns may differ; the result holds the union.
inline CsrMatrix add(const CsrMatrix& A, double a, const CsrMatrix& B, double b) {
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw InvalidArgument("add: shape mismatch");
    if (A.same_pattern(B)) {
        Vector v(A.nnz());
        auto av = A.values();
        auto bv = B.values();
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = a * av[k] + b * bv[k];
        return CsrMatrix(A.rows(), A.cols(), {A.offsets().begin(), A.offsets().end()},
                         {A.columns().begin(), A.columns().end()}, std::move(v));
    }
    std::vector<std::size_t> off{0}, col;
    Vector val;
    for (std::size_t i = 0; i < A.rows(); ++i) {
        auto ac = A.row_columns(i), bc = B.row_columns(i);
        auto avs = A.row_values(i), bvs = B.row_values(i);
        std::size_t p = 0, q = 0;
        while (p < ac.size() || q < bc.size()) {
            if (q == bc.size() || (p < ac.size() && ac[p] < bc[q])) {
                col.push_back(ac[p]);
                val.push_back(a * avs[p++]);
            } else if (p == ac.size() || bc[q] < ac[p]) {
                col.push_back(bc[q]);
                val.push_back(b * bvs[q++]);
            } else {
                col.push_back(ac[p]);
                val.push_back(a * avs[p++] + b * bvs[q++]);
            }
        }
        off.push_back(col.size());
    }
    return CsrMatrix(A.rows(), A.cols(), std::move(off), std::move(col), std::move(val));
}

/// Sparse product A*B (row-wise Gustavson).
inline CsrMatrix multiply(const CsrMatrix& A, const CsrMatrix& B, WorkReport* work = nullptr) {
    if (A.cols() != B.rows()) throw InvalidArgument("multiply: inner dimension mismatch");
    std::vector<std::size_t> off{0}, col;
    Vector val;
    Vector acc(B.cols(), 0.0);
    std::vector<char> used(B.cols(), 0);
    std::vector<std::size_t> touched;
    std::uint64_t flops = 0;
    for (std::size_t i = 0; i < A.rows(); ++i) {
        touched.clear();
        auto ac = A.row_columns(i);
        auto av = A.row_values(i);
        for (std::size_t p = 0; p < ac.size(); ++p) {
            auto bc = B.row_columns(ac[p]);
            auto bv = B.row_values(ac[p]);
            flops += bc.size();
            for (std::size_t q = 0; q < bc.size(); ++q) {
                if (!used[bc[q]]) {
                    used[bc[q]] = 1;
                    touched.push_back(bc[q]);
                }
                acc[bc[q]] += av[p] * bv[q];
            }
        }
        std::sort(touched.begin(), touched.end());
        for (std::size_t j : touched) {
            col.push_back(j);
            val.push_back(acc[j]);
            acc[j] = 0.0;
            used[j] = 0;
        }
        off.push_back(col.size());
    }
    if (work) work->matvec_nonzeros += flops;
    return CsrMatrix(A.rows(), B.cols(), std::move(off), std::move(col), std::move(val));
}

/// P^T A P, the variational coarse operator. The result is symmetrized exactly
/// when A is symmetric (entries mirrored from the upper triangle).
inline CsrMatrix galerkin_product(const CsrMatrix& P, const CsrMatrix& A, WorkReport* work = nullptr) {
    if (A.rows() != A.cols() || A.cols() != P.rows())
        throw InvalidArgument("galerkin_product: shape mismatch");
    CsrMatrix AP = multiply(A, P, work);
    CsrMatrix C = multiply(P.transpose(), AP, work);
    auto off = C.offsets();
    auto col = C.columns();
    auto val = C.values();
    for (std::size_t i = 0; i < C.rows(); ++i)
        for (std::size_t k = off[i]; k < off[i + 1]; ++k)
            if (col[k] < i) {
                std::size_t m = C.find(col[k], i);
                if (m != CsrMatrix::npos) val[k] = val[m];
            }
    return C;
}

/// Coordinate text dump, one "row col value" triple per line (0-based).
inline void write_coordinate(const CsrMatrix& A, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << std::setprecision(17);
    for (std::size_t i = 0; i < A.rows(); ++i) {
        auto c = A.row_columns(i);
        auto v = A.row_values(i);
        for (std::size_t k = 0; k < c.size(); ++k) out << i << ' ' << c[k] << ' ' << v[k] << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace fmgeig
