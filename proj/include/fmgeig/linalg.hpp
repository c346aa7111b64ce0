#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fmgeig/csr_matrix.hpp"
#include "fmgeig/errors.hpp"
#include "fmgeig/vector_ops.hpp"
#include "fmgeig/work.hpp"

namespace fmgeig {

/// `steps` conjugate-gradient iterations on A x = b from x0.
///
/// Zero residual or a non-positive curvature direction ends the iteration early;
/// the latter is counted in `work->smoother_breakdowns`.
inline Vector cg_smooth(const CsrMatrix& A, std::span<const double> b, std::span<const double> x0, int steps,
                        WorkReport* work = nullptr) {
    require_same_size(b.size(), A.rows(), "cg_smooth (b)");
    require_same_size(x0.size(), A.cols(), "cg_smooth (x0)");
    const std::size_t n = b.size();
    Vector x(x0.begin(), x0.end());
    if (steps <= 0 || n == 0) return x;
    Vector r(n), Ap(n);
    A.multiply(x, r, work);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
    double rr = dot(r, r);
    if (rr == 0.0) return x;
    Vector p = r;
    for (int it = 0; it < steps; ++it) {
        A.multiply(p, Ap, work);
        double pAp = dot(p, Ap);
        if (!(pAp > 0.0)) {
            if (work) ++work->smoother_breakdowns;
            break;
        }
        double alpha = rr / pAp;
        axpy(alpha, p, x);
        if (it + 1 == steps) break;
        axpy(-alpha, Ap, r);
        double rr_new = dot(r, r);
        if (rr_new == 0.0) break;
        double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
    return x;
}

/// Symmetric Gauss-Seidel sweeps (forward then backward) on A x = b.
inline void symmetric_gauss_seidel(const CsrMatrix& A, std::span<const double> b, std::span<double> x, int sweeps,
                                   WorkReport* work = nullptr) {
    const std::size_t n = A.rows();
    auto off = A.offsets();
    auto col = A.columns();
    auto val = A.values();
    auto relax = [&](std::size_t i) {
        double s = b[i], d = 0.0;
        for (std::size_t k = off[i]; k < off[i + 1]; ++k) {
            if (col[k] == i)
                d = val[k];
            else
                s -= val[k] * x[col[k]];
        }
        x[i] = s / d;
    };
    for (int s = 0; s < sweeps; ++s) {
        for (std::size_t i = 0; i < n; ++i) relax(i);
        for (std::size_t i = n; i-- > 0;) relax(i);
        if (work) work->matvec_nonzeros += 2 * A.nnz();
    }
}

/// Reverse Cuthill-McKee ordering of a structurally symmetric pattern.
/// Returns perm with perm[new] = old.
inline std::vector<std::size_t> reverse_cuthill_mckee(const CsrMatrix& A) {
    const std::size_t n = A.rows();
    std::vector<std::size_t> degree(n);
    for (std::size_t i = 0; i < n; ++i) degree[i] = A.row_columns(i).size();
    std::vector<char> visited(n, 0);
    std::vector<std::size_t> order;
    order.reserve(n);

    // BFS over the unvisited component of `root`; returns the last level's nodes.
    auto bfs_last_level = [&](std::size_t root) {
        std::vector<std::size_t> frontier{root}, last;
        std::vector<std::size_t> touched{root};
        visited[root] = 2;
        while (!frontier.empty()) {
            last = frontier;
            std::vector<std::size_t> next;
            for (std::size_t v : frontier)
                for (std::size_t w : A.row_columns(v))
                    if (!visited[w]) {
                        visited[w] = 2;
                        touched.push_back(w);
                        next.push_back(w);
                    }
            frontier.swap(next);
        }
        for (std::size_t v : touched) visited[v] = 0;
        return last;
    };

    for (std::size_t seed = 0; seed < n; ++seed) {
        if (visited[seed]) continue;
        std::size_t root = seed;
        for (int pass = 0; pass < 2; ++pass) {
            auto last = bfs_last_level(root);
            root = *std::min_element(last.begin(), last.end(),
                                     [&](std::size_t a, std::size_t b) { return degree[a] < degree[b]; });
        }
        std::size_t head = order.size();
        order.push_back(root);
        visited[root] = 1;
        std::vector<std::size_t> nbrs;
        while (head < order.size()) {
            std::size_t v = order[head++];
            nbrs.clear();
            for (std::size_t w : A.row_columns(v))
                if (!visited[w]) {
                    visited[w] = 1;
                    nbrs.push_back(w);
                }
            std::sort(nbrs.begin(), nbrs.end(), [&](std::size_t a, std::size_t b) {
                return degree[a] != degree[b] ? degree[a] < degree[b] : a < b;
            });
            order.insert(order.end(), nbrs.begin(), nbrs.end());
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

/// Envelope (profile) Cholesky factorization in reverse Cuthill-McKee order.
class SparseCholesky {
public:
    SparseCholesky() = default;

    /// Computes the ordering and envelope for A's pattern.
    void analyze(const CsrMatrix& A, std::size_t max_envelope = std::size_t{1} << 28) {
        if (A.rows() != A.cols()) throw InvalidArgument("SparseCholesky: matrix not square");
        n_ = A.rows();
        perm_ = reverse_cuthill_mckee(A);
        iperm_.assign(n_, 0);
        for (std::size_t i = 0; i < n_; ++i) iperm_[perm_[i]] = i;
        first_.assign(n_, 0);
        for (std::size_t inew = 0; inew < n_; ++inew) {
            std::size_t f = inew;
            for (std::size_t jold : A.row_columns(perm_[inew])) f = std::min(f, iperm_[jold]);
            first_[inew] = f;
        }
        start_.assign(n_ + 1, 0);
        for (std::size_t i = 0; i < n_; ++i) start_[i + 1] = start_[i] + (i - first_[i] + 1);
        if (start_[n_] > max_envelope)
            throw ResourceError("SparseCholesky: envelope of " + std::to_string(start_[n_]) +
                                    " entries exceeds the limit",
                                -1);
        analyzed_rows_ = n_;
        pattern_offsets_.assign(A.offsets().begin(), A.offsets().end());
        pattern_columns_.assign(A.columns().begin(), A.columns().end());
        ok_ = false;
    }

    /// Factors A (analyzing its pattern first if needed). Returns false when A is
    /// not numerically positive definite.
    bool factor(const CsrMatrix& A, WorkReport* work = nullptr) {
        if (analyzed_rows_ != A.rows() || !same_pattern(A)) analyze(A);
        L_.assign(start_[n_], 0.0);
        for (std::size_t iold = 0; iold < n_; ++iold) {
            std::size_t inew = iperm_[iold];
            auto c = A.row_columns(iold);
            auto v = A.row_values(iold);
            for (std::size_t k = 0; k < c.size(); ++k) {
                std::size_t jnew = iperm_[c[k]];
                if (jnew <= inew) L_[start_[inew] + (jnew - first_[inew])] = v[k];
            }
        }
        ok_ = false;
        std::uint64_t ops = 0;
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t fi = first_[i];
            double* Li = L_.data() + start_[i]; // Li[k - fi] = L(i, k)
            for (std::size_t j = fi; j < i; ++j) {
                const std::size_t fj = first_[j];
                const std::size_t k0 = std::max(fi, fj);
                const double* a = Li + (k0 - fi);
                const double* b = L_.data() + start_[j] + (k0 - fj);
                double s = Li[j - fi];
                for (std::size_t k = 0, len = j - k0; k < len; ++k) s -= a[k] * b[k];
                ops += j - k0;
                Li[j - fi] = s / L_[start_[j] + (j - fj)];
            }
            double d = Li[i - fi];
            for (std::size_t k = 0; k < i - fi; ++k) d -= Li[k] * Li[k];
            if (!(d > 0.0) || !std::isfinite(d)) {
                if (work) work->factor_entries += ops;
                return false;
            }
            Li[i - fi] = std::sqrt(d);
        }
        if (work) work->factor_entries += ops + start_[n_];
        ok_ = true;
        return true;
    }

    bool ok() const noexcept { return ok_; }
    std::size_t size() const noexcept { return n_; }
    std::size_t envelope_size() const noexcept { return start_.empty() ? 0 : start_[n_]; }

    Vector solve(std::span<const double> b, WorkReport* work = nullptr) const {
        if (!ok_) throw SolverError("SparseCholesky::solve: no valid factorization");
        require_same_size(b.size(), n_, "SparseCholesky::solve");
        Vector y(n_);
        for (std::size_t i = 0; i < n_; ++i) y[i] = b[perm_[i]];
        for (std::size_t i = 0; i < n_; ++i) {
            const double* Li = L_.data() + start_[i];
            const std::size_t fi = first_[i];
            double s = y[i];
            for (std::size_t k = 0; k < i - fi; ++k) s -= Li[k] * y[fi + k];
            y[i] = s / Li[i - fi];
        }
        for (std::size_t i = n_; i-- > 0;) {
            const double* Li = L_.data() + start_[i];
            const std::size_t fi = first_[i];
            y[i] /= Li[i - fi];
            const double yi = y[i];
            for (std::size_t k = 0; k < i - fi; ++k) y[fi + k] -= Li[k] * yi;
        }
        Vector x(n_);
        for (std::size_t i = 0; i < n_; ++i) x[perm_[i]] = y[i];
        if (work) work->factor_entries += 2 * envelope_size();
        return x;
    }

private:
    bool same_pattern(const CsrMatrix& A) const {
        return std::equal(A.offsets().begin(), A.offsets().end(), pattern_offsets_.begin(), pattern_offsets_.end()) &&
               std::equal(A.columns().begin(), A.columns().end(), pattern_columns_.begin(), pattern_columns_.end());
    }

    std::size_t n_ = 0;
    std::size_t analyzed_rows_ = static_cast<std::size_t>(-1);
    std::vector<std::size_t> perm_, iperm_, first_, start_;
    std::vector<std::size_t> pattern_offsets_, pattern_columns_;
    std::vector<double> L_;
    bool ok_ = false;
};

/// Solves an SPD system to ||A x - b||_2 <= 1e-12 ||b||_2 by sparse Cholesky
/// with up to three steps of iterative refinement.
inline Vector direct_solve(const CsrMatrix& A, std::span<const double> b, WorkReport* work = nullptr) {
    require_same_size(b.size(), A.rows(), "direct_solve");
    SparseCholesky chol;
    if (!chol.factor(A, work)) throw SolverError("direct_solve: matrix is not positive definite");
    Vector x = chol.solve(b, work);
    const double bnorm = norm2(b);
    Vector r(b.size());
    double res = 0.0;
    for (int refine = 0; refine <= 3; ++refine) {
        A.multiply(x, r, work);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
        res = norm2(r);
        if (res <= 1e-12 * bnorm) return x;
        Vector dx = chol.solve(r, work);
        axpy(1.0, dx, x);
    }
    throw SolverError("direct_solve: residual " + std::to_string(res) + " above tolerance", res);
}

enum class Smoother { conjugate_gradient, symmetric_gauss_seidel };

struct MgSettings {
    int pre_steps = 3;
    int post_steps = 3;
    Smoother smoother = Smoother::conjugate_gradient;
};

/// Level operators and interpolations for geometric multigrid.
///
/// operators[k] is the SPD matrix on level k (0 = coarsest), prolongations[k-1]
/// maps level k-1 to level k. Matrices are borrowed and must outlive the context.
/// A context is used by one solve at a time since it mutates the work counter.
class MgContext {
public:
    MgContext(std::vector<const CsrMatrix*> operators, std::vector<const CsrMatrix*> prolongations,
              MgSettings settings = {}, WorkReport* work = nullptr)
        : ops_(std::move(operators)), prolongations_(std::move(prolongations)), settings_(settings), work_(work) {
        if (ops_.empty()) throw InvalidArgument("MgContext: need at least one level");
        if (prolongations_.size() + 1 != ops_.size())
            throw InvalidArgument("MgContext: need one prolongation per adjacent level pair");
        for (std::size_t k = 0; k < ops_.size(); ++k) {
            if (!ops_[k] || ops_[k]->rows() != ops_[k]->cols())
                throw InvalidArgument("MgContext: level operator must be square");
            if (k > 0) {
                const CsrMatrix* P = prolongations_[k - 1];
                if (!P || P->rows() != ops_[k]->rows() || P->cols() != ops_[k - 1]->rows())
                    throw InvalidArgument("MgContext: prolongation " + std::to_string(k) + " has wrong shape");
            }
        }
        if (settings_.pre_steps < 0 || settings_.post_steps < 0)
            throw InvalidArgument("MgContext: smoothing steps must be >= 0");
        if (!coarse_.factor(*ops_[0]))
            throw SolverError("MgContext: coarsest operator is not positive definite");
    }

    std::size_t n_levels() const noexcept { return ops_.size(); }
    const CsrMatrix& op(std::size_t k) const { return *ops_.at(k); }
    const CsrMatrix& prolongation(std::size_t k) const { return *prolongations_.at(k - 1); }
    const MgSettings& settings() const noexcept { return settings_; }
    MgSettings& settings() noexcept { return settings_; }
    WorkReport* work() const noexcept { return work_; }
    void set_work(WorkReport* w) noexcept { work_ = w; }

    Vector coarse_solve(std::span<const double> b) const {
        if (work_) ++work_->coarse_solves;
        return coarse_.solve(b, work_);
    }

private:
    std::vector<const CsrMatrix*> ops_;
    std::vector<const CsrMatrix*> prolongations_;
    MgSettings settings_;
    WorkReport* work_;
    SparseCholesky coarse_;
};

namespace detail {

inline Vector smooth(const MgContext& ctx, std::size_t level, std::span<const double> b, Vector x, int steps) {
    if (steps <= 0) return x;
    if (ctx.settings().smoother == Smoother::conjugate_gradient)
        return cg_smooth(ctx.op(level), b, x, steps, ctx.work());
    symmetric_gauss_seidel(ctx.op(level), b, x, steps, ctx.work());
    return x;
}

} // namespace detail

/// One V-cycle on level `level`: pre-smooth, restrict the residual with P^T,
/// recurse (exact solve on level 0), correct, post-smooth.
inline Vector v_cycle(const MgContext& ctx, std::size_t level, std::span<const double> b, std::span<const double> x0) {
    if (level >= ctx.n_levels()) throw InvalidArgument("v_cycle: level out of range");
    const CsrMatrix& A = ctx.op(level);
    require_same_size(b.size(), A.rows(), "v_cycle (b)");
    require_same_size(x0.size(), A.rows(), "v_cycle (x0)");
    if (level == 0) return ctx.coarse_solve(b);

    Vector x = detail::smooth(ctx, level, b, Vector(x0.begin(), x0.end()), ctx.settings().pre_steps);
    Vector r(A.rows());
    A.multiply(x, r, ctx.work());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
    const CsrMatrix& P = ctx.prolongation(level);
    Vector rc(P.cols());
    P.multiply_transpose(r, rc, ctx.work());
    Vector ec = v_cycle(ctx, level - 1, rc, Vector(rc.size(), 0.0));
    Vector e(P.rows());
    P.multiply(ec, e, ctx.work());
    axpy(1.0, e, x);
    return detail::smooth(ctx, level, b, std::move(x), ctx.settings().post_steps);
}

/// m V-cycles from x0.
inline Vector mg_solve(const MgContext& ctx, std::size_t level, std::span<const double> b, std::span<const double> x0,
                       int m) {
    if (m < 1) throw InvalidArgument("mg_solve: m must be >= 1");
    Vector x(x0.begin(), x0.end());
    for (int i = 0; i < m; ++i) x = v_cycle(ctx, level, b, x);
    return x;
}

struct PcgResult {
    Vector x;
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
};

/// Preconditioned conjugate gradients. `precondition(r)` returns an approximation
/// of A^{-1} r and must be symmetric positive definite. Throws SolverError on a
/// non-positive curvature direction (A not SPD).
inline PcgResult pcg(const CsrMatrix& A, std::span<const double> b, std::span<const double> x0,
                     const std::function<Vector(std::span<const double>)>& precondition, double rel_tol,
                     int max_iter, WorkReport* work = nullptr) {
    require_same_size(b.size(), A.rows(), "pcg (b)");
    const std::size_t n = b.size();
    PcgResult out;
    out.x.assign(x0.begin(), x0.end());
    Vector r(n), Ap(n);
    A.multiply(out.x, r, work);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
    const double bnorm = norm2(b);
    if (bnorm == 0.0) {
        out.x.assign(n, 0.0);
        out.converged = true;
        return out;
    }
    double rnorm = norm2(r);
    if (rnorm <= rel_tol * bnorm) {
        out.relative_residual = rnorm / bnorm;
        out.converged = true;
        return out;
    }
    Vector z = precondition ? precondition(r) : r;
    Vector p = z;
    double rz = dot(r, z);
    for (int it = 1; it <= max_iter; ++it) {
        A.multiply(p, Ap, work);
        double pAp = dot(p, Ap);
        if (!(pAp > 0.0)) throw SolverError("pcg: non-positive curvature, matrix not SPD", rnorm / bnorm);
        double alpha = rz / pAp;
        axpy(alpha, p, out.x);
        axpy(-alpha, Ap, r);
        rnorm = norm2(r);
        out.iterations = it;
        if (rnorm <= rel_tol * bnorm) {
            out.converged = true;
            break;
        }
        z = precondition ? precondition(r) : r;
        double rz_new = dot(r, z);
        double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    out.relative_residual = rnorm / bnorm;
    return out;
}

} // namespace fmgeig
