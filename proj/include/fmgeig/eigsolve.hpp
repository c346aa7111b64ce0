#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmgeig/csr_matrix.hpp"
#include "fmgeig/dense.hpp"
#include "fmgeig/discretization.hpp"
#include "fmgeig/errors.hpp"
#include "fmgeig/fem.hpp"
#include "fmgeig/linalg.hpp"
#include "fmgeig/vector_ops.hpp"
#include "fmgeig/work.hpp"

namespace fmgeig {

/// Scales u so that its largest-magnitude coefficient is positive.
inline void apply_sign_convention(std::span<double> u) {
    std::size_t imax = 0;
    double vmax = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (std::abs(u[i]) > vmax) {
            vmax = std::abs(u[i]);
            imax = i;
        }
    if (!u.empty() && u[imax] < 0.0)
        for (double& v : u) v = -v;
}

/// Where an eigenvector's coefficients live.
struct SpaceTag {
    int level = -1;         // mesh level (the fine level for augmented spaces)
    bool augmented = false; // true: coefficients of an AugmentedSpace basis
};

struct EigenPair {
    double lambda = 0.0;
    Vector u;
    SpaceTag space;
};

struct InverseIterationOptions {
    double tolerance = 1e-10; // ||A x - lambda M x||_2 <= tolerance * ||A x||_2
    int max_iter = 500;
    int max_refactorizations = 24;
};

struct InverseIterationResult {
    double lambda = 0.0;
    Vector x;
    int iterations = 0;
    double relative_residual = 0.0;
};

namespace detail {

inline double m_norm(const auto& M, std::span<const double> x, WorkReport* work) {
    return std::sqrt(std::max(0.0, M.quadratic_form(x, work)));
}

/// Cholesky factorization of A - s M; failure proves s lies above the smallest eigenvalue.
template <class Matrix, class Factor>
class ShiftedFactor {
public:
    ShiftedFactor(const Matrix& A, const Matrix& M, WorkReport* work) : A_(A), M_(M), work_(work) {}
    bool set_shift(double s) { return factor_.factor(add(A_, 1.0, M_, -s), work_); }
    Vector solve(std::span<const double> rhs) const { return factor_.solve(rhs, work_); }

private:
    const Matrix& A_;
    const Matrix& M_;
    WorkReport* work_;
    Factor factor_;
};

inline Vector initial_iterate(std::size_t n, std::span<const double> x0) {
    if (x0.empty()) return Vector(n, 1.0);
    require_same_size(x0.size(), n, "smallest_eigpair (x0)");
    Vector x(x0.begin(), x0.end());
    if (norm2(x) == 0.0) x.assign(n, 1.0);
    return x;
}

template <class Matrix>
void check_pencil(const Matrix& A, const Matrix& M) {
    if (A.rows() != A.cols() || M.rows() != A.rows() || M.cols() != A.cols())
        throw InvalidArgument("smallest_eigpair: dimension mismatch");
    if (A.rows() == 0) throw InvalidArgument("smallest_eigpair: empty problem");
}

/// Shifted inverse iteration with a direct factorization. The shift stays
/// below the Rayleigh quotient and is tightened as the residual falls; a
/// successful factorization certifies it lies below the smallest eigenvalue.
template <class Matrix, class Factor>
InverseIterationResult shifted_inverse_iteration(const Matrix& A, const Matrix& M, std::span<const double> x0,
                                                 const InverseIterationOptions& opts, WorkReport* work) {
    check_pencil(A, M);
    const std::size_t n = A.rows();
    ShiftedFactor<Matrix, Factor> solver(A, M, work);
    InverseIterationResult out;
    Vector x = initial_iterate(n, x0);
    Vector Ax(n), Mx(n), r(n);
    auto measure = [&] {
        double nm = m_norm(M, x, work);
        if (!(nm > 0.0)) throw SolverError("smallest_eigpair: iterate has zero M-norm");
        scale(1.0 / nm, x);
        A.multiply(x, Ax, work);
        M.multiply(x, Mx, work);
        double rho = dot(x, Ax);
        for (std::size_t i = 0; i < n; ++i) r[i] = Ax[i] - rho * Mx[i];
        double an = norm2(Ax), rn = norm2(r);
        out.relative_residual = an > 0.0 ? rn / an : rn;
        out.lambda = rho;
        return rn <= opts.tolerance * an || rn == 0.0;
    };
    auto finish = [&] {
        out.x = std::move(x);
        apply_sign_convention(out.x);
        return out;
    };
    if (measure() && !x0.empty()) return finish();

    const double scale_ref = std::max(std::abs(out.lambda), 1.0);
    double gap = 0.1 * scale_ref;
    if (!x0.empty()) gap = std::min(gap, std::max(10.0 * norm2(r) * norm2(x), 1e-8 * scale_ref));
    int factorizations = 0;
    for (;; gap = gap * 4.0 + 1e-300) {
        if (++factorizations > 200)
            throw SolverError("smallest_eigpair: could not find a definite shift", out.relative_residual);
        if (solver.set_shift(out.lambda - gap)) break;
    }
    double shift = out.lambda - gap;

    for (int it = 1; it <= opts.max_iter; ++it) {
        Vector y = solver.solve(Mx);
        if (dot(y, Mx) < 0.0) scale(-1.0, y);
        x.swap(y);
        out.iterations = it;
        if (measure()) return finish();
        if (factorizations < opts.max_refactorizations) {
            double target = std::max(10.0 * norm2(r) * norm2(x), 1e-12 * scale_ref);
            if (target < 0.125 * (out.lambda - shift)) {
                ++factorizations;
                if (solver.set_shift(out.lambda - target)) {
                    shift = out.lambda - target;
                } else {
                    ++factorizations;
                    solver.set_shift(shift);
                }
            }
        }
    }
    throw SolverError("smallest_eigpair: no convergence after " + std::to_string(opts.max_iter) + " iterations",
                      out.relative_residual);
}

} // namespace detail

/// Smallest eigenpair of the dense symmetric pencil (A, M), M SPD.
/// x is M-normalized with the sign convention applied.
inline InverseIterationResult smallest_eigpair(const DenseMatrix& A, const DenseMatrix& M,
                                               std::span<const double> x0 = {},
                                               const InverseIterationOptions& opts = {}, WorkReport* work = nullptr) {
    return detail::shifted_inverse_iteration<DenseMatrix, DenseCholesky>(A, M, x0, opts, work);
}

/// Sparse variant using the envelope Cholesky factorization.
inline InverseIterationResult smallest_eigpair(const CsrMatrix& A, const CsrMatrix& M,
                                               std::span<const double> x0 = {},
                                               const InverseIterationOptions& opts = {}, WorkReport* work = nullptr) {
    return detail::shifted_inverse_iteration<CsrMatrix, SparseCholesky>(A, M, x0, opts, work);
}

/// Preconditioned LOBPCG for the smallest eigenpair of a sparse pencil.
/// `precondition(r)` approximates A^{-1} r (a multigrid cycle for level spaces).
template <class Precondition>
InverseIterationResult lobpcg_smallest(const CsrMatrix& A, const CsrMatrix& M, Precondition&& precondition,
                                       std::span<const double> x0 = {}, const InverseIterationOptions& opts = {},
                                       WorkReport* work = nullptr) {
    detail::check_pencil(A, M);
    const std::size_t n = A.rows();
    InverseIterationResult out;
    Vector x = detail::initial_iterate(n, x0);
    scale(1.0 / detail::m_norm(M, x, work), x);
    Vector Ax(n), Mx(n), r(n), p, Ap, Mp;
    A.multiply(x, Ax, work);
    M.multiply(x, Mx, work);

    for (int it = 0; it <= opts.max_iter; ++it) {
        double rho = dot(x, Ax);
        for (std::size_t i = 0; i < n; ++i) r[i] = Ax[i] - rho * Mx[i];
        double an = norm2(Ax), rn = norm2(r);
        out.lambda = rho;
        out.iterations = it;
        out.relative_residual = an > 0.0 ? rn / an : rn;
        if (rn <= opts.tolerance * an || rn == 0.0) {
            out.x = std::move(x);
            apply_sign_convention(out.x);
            return out;
        }
        if (it == opts.max_iter) break;

        // Basis [x, w, p], each M-orthogonalized against x and M-normalized.
        std::vector<Vector> S{x}, AS{Ax}, MS{Mx};
        auto push = [&](Vector v, Vector Av, Vector Mv) {
            double c = dot(Mx, v);
            axpy(-c, x, v);
            axpy(-c, Ax, Av);
            axpy(-c, Mx, Mv);
            double nm = std::sqrt(std::max(0.0, dot(v, Mv)));
            if (!(nm > 0.0)) return;
            scale(1.0 / nm, v);
            scale(1.0 / nm, Av);
            scale(1.0 / nm, Mv);
            S.push_back(std::move(v));
            AS.push_back(std::move(Av));
            MS.push_back(std::move(Mv));
        };
        {
            Vector w = precondition(std::span<const double>(r));
            Vector Aw(n), Mw(n);
            A.multiply(w, Aw, work);
            M.multiply(w, Mw, work);
            push(std::move(w), std::move(Aw), std::move(Mw));
        }
        if (!p.empty()) push(p, Ap, Mp);

        SymmetricEigen ritz;
        std::size_t k = S.size();
        for (;;) {
            DenseMatrix GA(k, k), GM(k, k);
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = i; j < k; ++j) {
                    GA(i, j) = GA(j, i) = 0.5 * (dot(S[i], AS[j]) + dot(S[j], AS[i]));
                    GM(i, j) = GM(j, i) = 0.5 * (dot(S[i], MS[j]) + dot(S[j], MS[i]));
                }
            // Reduce to a standard problem through the Cholesky factor of GM.
            DenseMatrix L(k, k);
            bool good = true;
            for (std::size_t i = 0; i < k && good; ++i)
                for (std::size_t j = 0; j <= i; ++j) {
                    double s = GM(i, j);
                    for (std::size_t q = 0; q < j; ++q) s -= L(i, q) * L(j, q);
                    if (i == j) {
                        if (!(s > 1e-12)) {
                            good = false;
                            break;
                        }
                        L(i, i) = std::sqrt(s);
                    } else {
                        L(i, j) = s / L(j, j);
                    }
                }
            if (!good) {
                if (k == 1) throw SolverError("lobpcg: basis collapsed", out.relative_residual);
                --k;
                S.pop_back();
                AS.pop_back();
                MS.pop_back();
                continue;
            }
            // C = L^{-1} GA L^{-T}
            DenseMatrix Y(k, k), C(k, k);
            for (std::size_t c = 0; c < k; ++c)
                for (std::size_t i = 0; i < k; ++i) {
                    double s = GA(i, c);
                    for (std::size_t q = 0; q < i; ++q) s -= L(i, q) * Y(q, c);
                    Y(i, c) = s / L(i, i);
                }
            for (std::size_t c = 0; c < k; ++c)
                for (std::size_t i = 0; i < k; ++i) {
                    double s = Y(c, i);
                    for (std::size_t q = 0; q < i; ++q) s -= L(i, q) * C(q, c);
                    C(i, c) = s / L(i, i);
                }
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = i + 1; j < k; ++j) C(i, j) = C(j, i) = 0.5 * (C(i, j) + C(j, i));
            ritz = symmetric_eigen(C);
            // back-substitute L^T c = y
            Vector y(k), c(k);
            for (std::size_t i = 0; i < k; ++i) y[i] = ritz.vectors(i, 0);
            for (std::size_t i = k; i-- > 0;) {
                double s = y[i];
                for (std::size_t q = i + 1; q < k; ++q) s -= L(q, i) * c[q];
                c[i] = s / L(i, i);
            }
            Vector xn(n, 0.0), Axn(n, 0.0), Mxn(n, 0.0), pn(n, 0.0), Apn(n, 0.0), Mpn(n, 0.0);
            for (std::size_t j = 1; j < k; ++j) {
                axpy(c[j], S[j], pn);
                axpy(c[j], AS[j], Apn);
                axpy(c[j], MS[j], Mpn);
            }
            xn = pn;
            Axn = Apn;
            Mxn = Mpn;
            axpy(c[0], S[0], xn);
            axpy(c[0], AS[0], Axn);
            axpy(c[0], MS[0], Mxn);
            double nm = std::sqrt(std::max(0.0, dot(xn, Mxn)));
            scale(1.0 / nm, xn);
            x = std::move(xn);
            p = std::move(pn);
            Ap = std::move(Apn);
            Mp = std::move(Mpn);
            break;
        }
        // Fresh products keep the residual honest at tight tolerances.
        A.multiply(x, Ax, work);
        M.multiply(x, Mx, work);
    }
    throw SolverError("lobpcg: no convergence after " + std::to_string(opts.max_iter) + " iterations",
                      out.relative_residual);
}

struct ScfSettings {
    double tol_lambda = 1e-10; // relative to max(1, |lambda|)
    double tol_u = 1e-8;       // b-norm of the update
    int max_iter = 100;
    double damping = 1.0;
    double min_damping = 1.0 / 64.0;
    bool damping_fallback = true;
    int mixing_depth = 4; // Anderson history length; 0 = plain damped SCF
    InverseIterationOptions eigen{};

    void validate() const {
        if (!(tol_lambda > 0.0) || !(tol_u > 0.0)) throw InvalidArgument("ScfSettings: tolerances must be > 0");
        if (max_iter < 1) throw InvalidArgument("ScfSettings: max_iter must be >= 1");
        if (!(damping > 0.0 && damping <= 1.0)) throw InvalidArgument("ScfSettings: damping must lie in (0, 1]");
        if (mixing_depth < 0) throw InvalidArgument("ScfSettings: mixing_depth must be >= 0");
    }

    static ScfSettings augmented() {
        ScfSettings s;
        s.max_iter = 3;
        return s;
    }
};

struct ScfResult {
    EigenPair pair;
    int iterations = 0; // SCF steps taken (the cap on augmented spaces is 3)
    bool converged = false;
    double delta_lambda = 0.0;
    double delta_u = 0.0;
    double final_damping = 1.0;
};

/// The P1 space of one mesh level (interior dofs) as seen by the SCF driver.
class LevelSpace {
public:
    using Matrix = CsrMatrix;

    LevelSpace(const Discretization& disc, std::size_t level, std::size_t direct_dof_limit = 20000)
        : disc_(disc), level_(level), direct_limit_(direct_dof_limit) {}

    std::size_t size() const { return disc_.n_dofs(level_); }
    SpaceTag tag() const { return {int(level_), false}; }
    bool linear() const { return disc_.spec().linear(); }
    const CsrMatrix& linear_matrix() const { return disc_.linear_part(level_); }
    const CsrMatrix& mass() const { return disc_.mass(level_); }

    CsrMatrix nonlinear_matrix(std::span<const double> c, WorkReport* work) const {
        FeFunction w{disc_.mesh(level_).level_index, Vector(c.begin(), c.end())};
        return assemble_nonlinear(disc_.space(level_), disc_.spec(), w, work);
    }

    CsrMatrix combine(const CsrMatrix& K, const CsrMatrix& N) const { return add(K, 1.0, N, 1.0); }

    InverseIterationResult eigensolve(const CsrMatrix& A, std::span<const double> x0,
                                      const InverseIterationOptions& opts, WorkReport* work) const {
        if (size() <= direct_limit_ || level_ == 0) return smallest_eigpair(A, mass(), x0, opts, work);
        if (!mg_) {
            MgSettings s;
            s.smoother = Smoother::symmetric_gauss_seidel;
            s.pre_steps = 2;
            s.post_steps = 2;
            mg_.emplace(disc_.mg_context(level_, s, nullptr));
        }
        mg_->set_work(work);
        auto precondition = [this](std::span<const double> r) {
            return v_cycle(*mg_, level_, r, Vector(r.size(), 0.0));
        };
        return lobpcg_smallest(A, mass(), precondition, x0, opts, work);
    }

    const Discretization& discretization() const noexcept { return disc_; }
    std::size_t level() const noexcept { return level_; }

private:
    const Discretization& disc_;
    std::size_t level_;
    std::size_t direct_limit_;
    mutable std::optional<MgContext> mg_;
};

/// V_{H,h} = V_H + span{u~}: coarse basis functions interpolated to the fine
/// level plus one fine-level function, with reduced (Galerkin) matrices.
class AugmentedSpace {
public:
    using Matrix = DenseMatrix;

    std::size_t size() const noexcept { return mass_red_.rows(); }
    std::size_t coarse_dofs() const noexcept { return transfer_->cols(); }
    bool degenerate() const noexcept { return degenerate_; }
    std::size_t coarse_level() const noexcept { return coarse_; }
    std::size_t fine_level() const noexcept { return fine_; }
    SpaceTag tag() const { return {int(fine_), true}; }
    bool linear() const { return disc_->spec().linear(); }
    const Vector& u_tilde() const noexcept { return u_tilde_; }
    const CsrMatrix& transfer() const noexcept { return *transfer_; }

    const DenseMatrix& stiffness() const noexcept { return stiff_red_; }
    const DenseMatrix& potential() const noexcept { return pot_red_; }
    const DenseMatrix& mass() const noexcept { return mass_red_; }
    const DenseMatrix& linear_matrix() const noexcept { return linear_red_; }

    /// Fine-level coefficients of sum_j c_j b_j.
    Vector expand(std::span<const double> c, WorkReport* work = nullptr) const {
        require_same_size(c.size(), size(), "AugmentedSpace::expand");
        Vector u(transfer_->rows());
        transfer_->multiply(c.first(coarse_dofs()), u, work);
        if (!degenerate_) axpy(c[coarse_dofs()], u_tilde_, u);
        return u;
    }

    /// B^T F B for a fine-level matrix F.
    DenseMatrix reduce(const CsrMatrix& F, WorkReport* work = nullptr) const {
        DenseMatrix hh = to_dense(galerkin_product(*transfer_, F, work));
        return assemble_reduced(hh, F, work);
    }

    DenseMatrix nonlinear_matrix(std::span<const double> c, WorkReport* work) const {
        const auto& space = disc_->space(fine_);
        FeFunction w{disc_->mesh(fine_).level_index, expand(c, work)};
        return reduce(assemble_nonlinear(space, disc_->spec(), w, work), work);
    }

    DenseMatrix combine(const DenseMatrix& K, const DenseMatrix& N) const { return add(K, 1.0, N, 1.0); }

    InverseIterationResult eigensolve(const DenseMatrix& A, std::span<const double> x0,
                                      const InverseIterationOptions& opts, WorkReport* work) const {
        return smallest_eigpair(A, mass_red_, x0, opts, work);
    }

    /// Coefficients representing u~ itself (coarse part zero, span coefficient 1).
    Vector u_tilde_coefficients() const {
        Vector c(size(), 0.0);
        if (!degenerate_) c.back() = 1.0;
        else c = coarse_projection_;
        return c;
    }

private:
    friend AugmentedSpace build_augmented_space(const Discretization&, std::size_t, std::size_t, const FeFunction&,
                                                WorkReport*);

    DenseMatrix assemble_reduced(const DenseMatrix& hh, const CsrMatrix& F, WorkReport* work) const {
        if (degenerate_) return hh;
        const std::size_t nh = coarse_dofs();
        Vector Fu(F.rows());
        F.multiply(u_tilde_, Fu, work);
        Vector hu(nh);
        transfer_->multiply_transpose(Fu, hu, work);
        DenseMatrix R(nh + 1, nh + 1);
        for (std::size_t i = 0; i < nh; ++i) {
            for (std::size_t j = 0; j < nh; ++j) R(i, j) = hh(i, j);
            R(i, nh) = hu[i];
            R(nh, i) = hu[i];
        }
        R(nh, nh) = dot(u_tilde_, Fu);
        return R;
    }

    const Discretization* disc_ = nullptr;
    std::size_t coarse_ = 0, fine_ = 0;
    const CsrMatrix* transfer_ = nullptr;
    Vector u_tilde_;
    Vector coarse_projection_;
    bool degenerate_ = false;
    DenseMatrix stiff_red_, pot_red_, mass_red_, linear_red_;
};

/// Builds V_{H,h_k} from u~ on level `fine`. When u~ lies in V_H (b-distance
/// below 1e-12) the span column is dropped and the space is flagged degenerate.
inline AugmentedSpace build_augmented_space(const Discretization& disc, std::size_t coarse, std::size_t fine,
                                            const FeFunction& u_tilde, WorkReport* work = nullptr) {
    if (coarse > fine || fine >= disc.n_levels()) throw InvalidArgument("build_augmented_space: bad levels");
    if (u_tilde.level_index != disc.mesh(fine).level_index || u_tilde.coefficients.size() != disc.n_dofs(fine))
        throw InvalidArgument("build_augmented_space: u~ does not live on the fine level");
    AugmentedSpace S;
    S.disc_ = &disc;
    S.coarse_ = coarse;
    S.fine_ = fine;
    S.transfer_ = &disc.transfer(coarse, fine);
    const CsrMatrix& M = disc.mass(fine);
    double nrm = std::sqrt(std::max(0.0, M.quadratic_form(u_tilde.coefficients, work)));
    if (!(nrm > 0.0)) throw InvalidArgument("build_augmented_space: u~ is zero");
    S.u_tilde_ = u_tilde.coefficients;
    scale(1.0 / nrm, S.u_tilde_);

    const auto& blocks = disc.coarse_blocks(coarse, fine, work);
    // b-distance of u~ to V_H via the explicit projection residual.
    Vector Mu(M.rows());
    M.multiply(S.u_tilde_, Mu, work);
    Vector rhs(S.coarse_dofs());
    S.transfer_->multiply_transpose(Mu, rhs, work);
    DenseCholesky mh;
    if (!mh.factor(blocks.mass, work)) throw SolverError("build_augmented_space: coarse mass not SPD");
    S.coarse_projection_ = mh.solve(rhs, work);
    Vector d = S.u_tilde_;
    Vector Pc(d.size());
    S.transfer_->multiply(S.coarse_projection_, Pc, work);
    axpy(-1.0, Pc, d);
    double dist = std::sqrt(std::max(0.0, M.quadratic_form(d, work)));
    S.degenerate_ = dist <= 1e-12;

    S.stiff_red_ = S.assemble_reduced(blocks.stiffness, disc.stiffness(fine), work);
    S.mass_red_ = S.assemble_reduced(blocks.mass, M, work);
    S.pot_red_ = S.assemble_reduced(blocks.potential, disc.potential(fine), work);
    S.linear_red_ = add(S.stiff_red_, 1.0, S.pot_red_, 1.0);
    return S;
}

namespace detail {

/// max-norm of A(u) u - lambda M u.
template <class Matrix, class Mass>
double scf_residual(const Matrix& A, const Mass& M, std::span<const double> u, double lambda, WorkReport* work) {
    Vector Au(u.size()), Mu(u.size());
    A.multiply(u, Au, work);
    M.multiply(u, Mu, work);
    axpy(-lambda, Mu, Au);
    return norm_inf(Au);
}

} // namespace detail

/// Self-consistent field iteration: freeze the nonlinearity at w, take the
/// smallest eigenpair of (\hat A + M_W + zeta M_{|w|^{2 sigma}}, M), damp, repeat.
///
/// lambda is reported as the Rayleigh value u^T A_lin(u) u of the final iterate.
/// Hitting max_iter returns converged = false; three consecutive lambda
/// increases while damped throw SolverError.
template <class Space>
ScfResult scf_solve(const Space& space, const ScfSettings& settings, std::span<const double> initial = {},
                    WorkReport* work = nullptr) {
    settings.validate();
    using Matrix = typename Space::Matrix;
    const std::size_t n = space.size();
    const Matrix& K = space.linear_matrix();
    const auto& M = space.mass();
    ScfResult out;
    out.pair.space = space.tag();

    Vector w;
    if (initial.empty()) {
        auto g = space.eigensolve(K, {}, settings.eigen, work);
        w = std::move(g.x);
        if (space.linear()) {
            if (work) ++work->scf_iterations;
            out.pair.lambda = g.lambda;
            out.pair.u = std::move(w);
            apply_sign_convention(out.pair.u);
            out.iterations = 1;
            out.converged = true;
            return out;
        }
    } else {
        require_same_size(initial.size(), n, "scf_solve (initial)");
        w.assign(initial.begin(), initial.end());
    }
    double nw = detail::m_norm(M, w, work);
    if (!(nw > 0.0)) throw InvalidArgument("scf_solve: zero initial guess");
    scale(1.0 / nw, w);

    if (space.linear()) {
        auto g = space.eigensolve(K, w, settings.eigen, work);
        if (work) ++work->scf_iterations;
        out.pair.lambda = g.lambda;
        out.pair.u = std::move(g.x);
        apply_sign_convention(out.pair.u);
        out.iterations = 1;
        out.converged = true;
        return out;
    }

    Matrix A = space.combine(K, space.nonlinear_matrix(w, work));
    double lambda_prev = A.quadratic_form(w, work);
    double alpha = settings.damping;
    int increases = 0;
    // Anderson mixing over the last few (iterate, update) differences.
    std::vector<Vector> dW, dF, MdF;
    Vector w_prev, f_prev;
    for (int it = 1; it <= settings.max_iter; ++it) {
        auto g = space.eigensolve(A, w, settings.eigen, work);
        Vector x = std::move(g.x);
        Vector Mw(n);
        M.multiply(w, Mw, work);
        if (dot(x, Mw) < 0.0) scale(-1.0, x);
        Vector f = subtract(x, w);
        Vector u = w;
        axpy(alpha, f, u);
        if (settings.mixing_depth > 0 && !f_prev.empty()) {
            if (int(dW.size()) == settings.mixing_depth) {
                dW.erase(dW.begin());
                dF.erase(dF.begin());
                MdF.erase(MdF.begin());
            }
            dW.push_back(subtract(w, w_prev));
            dF.push_back(subtract(f, f_prev));
            MdF.emplace_back(n);
            M.multiply(dF.back(), MdF.back(), work);
            const std::size_t h = dF.size();
            DenseMatrix G(h, h);
            Vector rhs(h);
            double trace = 0.0;
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < h; ++j) G(i, j) = dot(dF[i], MdF[j]);
                rhs[i] = dot(MdF[i], f);
                trace += G(i, i);
            }
            for (std::size_t i = 0; i < h; ++i) G(i, i) += 1e-12 * trace;
            DenseCholesky ch;
            if (trace > 0.0 && ch.factor(G)) {
                Vector gamma = ch.solve(rhs);
                for (std::size_t i = 0; i < h; ++i) {
                    axpy(-gamma[i], dW[i], u);
                    axpy(-alpha * gamma[i], dF[i], u);
                }
            } else {
                dW.clear();
                dF.clear();
                MdF.clear();
            }
        }
        w_prev = w;
        f_prev = std::move(f);
        double nu = detail::m_norm(M, u, work);
        if (!(nu > 0.0)) throw SolverError("scf_solve: mixed iterate vanished");
        scale(1.0 / nu, u);

        A = space.combine(K, space.nonlinear_matrix(u, work));
        double lambda = A.quadratic_form(u, work);
        Vector diff = subtract(u, w);
        out.delta_u = detail::m_norm(M, diff, work);
        out.delta_lambda = std::abs(lambda - lambda_prev);
        out.iterations = it;
        if (work) ++work->scf_iterations;

        const double lam_tol = settings.tol_lambda * std::max(1.0, std::abs(lambda));
        // Plain SCF halves alpha after any increase; with mixing the iteration is
        // not monotone, so only a run of three increases restarts it with half alpha.
        if (lambda > lambda_prev + lam_tol) {
            const double floor = settings.damping_fallback ? settings.min_damping : settings.damping;
            ++increases;
            if (increases >= 3 && alpha <= floor && alpha < 1.0)
                throw SolverError("scf_solve: lambda increased in 3 consecutive damped steps", out.delta_lambda);
            if (settings.damping_fallback && (settings.mixing_depth == 0 || increases >= 3)) {
                alpha = std::max(0.5 * alpha, settings.min_damping);
                if (settings.mixing_depth > 0) {
                    dW.clear();
                    dF.clear();
                    MdF.clear();
                    increases = 0;
                }
            }
        } else {
            increases = 0;
        }
        w = std::move(u);
        lambda_prev = lambda;
        if (out.delta_lambda <= lam_tol && out.delta_u <= settings.tol_u &&
            detail::scf_residual(A, M, w, lambda, work) <= 10.0 * lam_tol) {
            out.converged = true;
            break;
        }
    }
    out.final_damping = alpha;
    out.pair.lambda = lambda_prev;
    out.pair.u = std::move(w);
    apply_sign_convention(out.pair.u);
    return out;
}

} // namespace fmgeig
