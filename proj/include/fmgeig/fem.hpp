#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fmgeig/csr_matrix.hpp"
#include "fmgeig/errors.hpp"
#include "fmgeig/mesh.hpp"
#include "fmgeig/quadrature.hpp"
#include "fmgeig/work.hpp"

namespace fmgeig {

/// PDE data for -div(A grad u) + W u + zeta |u|^(2 sigma) u = lambda u, u = 0 on the boundary.
struct ProblemSpec {
    using Field = std::function<double(const Point&)>;

    int dim = 2;
    std::array<double, 9> diffusion{1, 0, 0, 0, 1, 0, 0, 0, 1}; // row-major, leading dim x dim block used
    Field potential;                                            // empty means W = 0
    int potential_degree = 0;                                   // polynomial degree of W, for quadrature
    double zeta = 0.0;
    int sigma = 1;

    static Field harmonic() {
        return [](const Point& x) { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; };
    }

    /// The Gross-Pitaevskii setting W = |x|^2.
    static ProblemSpec gpe(int dim, double zeta) {
        ProblemSpec s;
        s.dim = dim;
        s.potential = harmonic();
        s.potential_degree = 2;
        s.zeta = zeta;
        s.validate();
        return s;
    }

    static ProblemSpec laplace(int dim) {
        ProblemSpec s;
        s.dim = dim;
        s.validate();
        return s;
    }

    double diffusion_at(int i, int j) const noexcept { return diffusion[3 * i + j]; }
    bool linear() const noexcept { return zeta == 0.0; }

    void validate() const {
        if (dim != 2 && dim != 3) throw InvalidArgument("ProblemSpec: dim must be 2 or 3");
        if (!(zeta >= 0.0)) throw InvalidArgument("ProblemSpec: zeta must be >= 0");
        if (sigma < 1) throw InvalidArgument("ProblemSpec: sigma must be a positive integer");
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < i; ++j)
                if (diffusion_at(i, j) != diffusion_at(j, i))
                    throw InvalidArgument("ProblemSpec: diffusion matrix not symmetric");
        // Cholesky of the leading dim x dim block decides positive definiteness.
        double L[3][3] = {};
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j <= i; ++j) {
                double s = diffusion_at(i, j);
                for (int k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
                if (i == j) {
                    if (!(s > 0.0)) throw InvalidArgument("ProblemSpec: diffusion matrix not positive definite");
                    L[i][i] = std::sqrt(s);
                } else {
                    L[i][j] = s / L[j][j];
                }
            }
    }
};

/// Which vertices carry degrees of freedom.
enum class DofScope { interior, all };

/// P1 degrees of freedom on one mesh level plus the matrix sparsity pattern.
class FeSpace {
public:
    FeSpace(const MeshLevel& mesh, DofScope scope = DofScope::interior) : mesh_(&mesh), scope_(scope) {
        vertex_to_dof_.assign(mesh.n_vertices(), -1);
        for (std::size_t v = 0; v < mesh.n_vertices(); ++v)
            if (scope == DofScope::all || !mesh.boundary_vertex[v]) {
                vertex_to_dof_[v] = static_cast<std::int64_t>(dof_to_vertex_.size());
                dof_to_vertex_.push_back(v);
            }
        build_pattern();
    }

    const MeshLevel& mesh() const noexcept { return *mesh_; }
    DofScope scope() const noexcept { return scope_; }
    int level_index() const noexcept { return mesh_->level_index; }
    std::size_t n_dofs() const noexcept { return dof_to_vertex_.size(); }
    std::int64_t dof(std::size_t vertex) const noexcept { return vertex_to_dof_[vertex]; }
    std::size_t vertex(std::size_t dof) const noexcept { return dof_to_vertex_[dof]; }
    const CsrMatrix& pattern() const noexcept { return pattern_; }

    /// Vertex values (boundary vertices zero) from dof coefficients.
    Vector to_vertex_values(std::span<const double> coeffs) const {
        require_same_size(coeffs.size(), n_dofs(), "FeSpace::to_vertex_values");
        Vector v(mesh_->n_vertices(), 0.0);
        for (std::size_t d = 0; d < n_dofs(); ++d) v[dof_to_vertex_[d]] = coeffs[d];
        return v;
    }

    /// Nodal interpolant of a field.
    Vector interpolate(const std::function<double(const Point&)>& f) const {
        Vector c(n_dofs());
        for (std::size_t d = 0; d < n_dofs(); ++d) c[d] = f(mesh_->vertices[dof_to_vertex_[d]]);
        return c;
    }

private:
    void build_pattern() {
        const MeshLevel& m = *mesh_;
        const int nv = m.vertices_per_cell();
        std::vector<std::uint64_t> pairs;
        pairs.reserve(m.n_cells() * static_cast<std::size_t>(nv * (nv - 1) / 2));
        for (const Cell& c : m.cells)
            for (int a = 0; a < nv; ++a)
                for (int b = a + 1; b < nv; ++b) {
                    auto da = vertex_to_dof_[c[a]], db = vertex_to_dof_[c[b]];
                    if (da < 0 || db < 0) continue;
                    auto lo = std::min(da, db), hi = std::max(da, db);
                    pairs.push_back((std::uint64_t(lo) << 32) | std::uint64_t(hi));
                }
        std::sort(pairs.begin(), pairs.end());
        pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
        const std::size_t n = n_dofs();
        std::vector<std::size_t> count(n + 1, 1); // diagonal
        count[n] = 0;
        for (auto p : pairs) {
            ++count[p >> 32];
            ++count[p & 0xffffffffu];
        }
        std::vector<std::size_t> off(n + 1, 0);
        for (std::size_t i = 0; i < n; ++i) off[i + 1] = off[i] + count[i];
        std::vector<std::size_t> col(off[n]);
        std::vector<std::size_t> next(off.begin(), off.end() - 1);
        for (std::size_t i = 0; i < n; ++i) col[next[i]++] = i;
        for (auto p : pairs) {
            std::size_t a = p >> 32, b = p & 0xffffffffu;
            col[next[a]++] = b;
            col[next[b]++] = a;
        }
        for (std::size_t i = 0; i < n; ++i)
            std::sort(col.begin() + static_cast<std::ptrdiff_t>(off[i]),
                      col.begin() + static_cast<std::ptrdiff_t>(off[i + 1]));
        Vector val(col.size(), 0.0);
        pattern_ = CsrMatrix(n, n, std::move(off), std::move(col), std::move(val));
    }

    const MeshLevel* mesh_;
    DofScope scope_;
    std::vector<std::int64_t> vertex_to_dof_;
    std::vector<std::size_t> dof_to_vertex_;
    CsrMatrix pattern_;
};

/// A P1 function on one level, stored by its dof coefficients.
struct FeFunction {
    int level_index = 0;
    Vector coefficients;
};

namespace detail {

/// Barycentric gradients and measure of one simplex.
struct CellGeometry {
    double measure = 0.0;
    double grad[4][3] = {};
};

inline CellGeometry cell_geometry(const MeshLevel& m, std::size_t c) {
    CellGeometry g;
    const Cell& k = m.cells[c];
    const int d = m.dim;
    double J[3][3] = {};
    for (int col = 0; col < d; ++col)
        for (int r = 0; r < d; ++r) J[r][col] = m.vertices[k[col + 1]][r] - m.vertices[k[0]][r];
    double det;
    double inv[3][3] = {};
    if (d == 2) {
        det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
        if (!(std::abs(det) > 0.0)) throw AssemblyError("degenerate cell " + std::to_string(c), long(c));
        inv[0][0] = J[1][1] / det;
        inv[0][1] = -J[0][1] / det;
        inv[1][0] = -J[1][0] / det;
        inv[1][1] = J[0][0] / det;
        g.measure = std::abs(det) / 2.0;
    } else {
        det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
              J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
              J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
        if (!(std::abs(det) > 0.0)) throw AssemblyError("degenerate cell " + std::to_string(c), long(c));
        inv[0][0] = (J[1][1] * J[2][2] - J[1][2] * J[2][1]) / det;
        inv[0][1] = (J[0][2] * J[2][1] - J[0][1] * J[2][2]) / det;
        inv[0][2] = (J[0][1] * J[1][2] - J[0][2] * J[1][1]) / det;
        inv[1][0] = (J[1][2] * J[2][0] - J[1][0] * J[2][2]) / det;
        inv[1][1] = (J[0][0] * J[2][2] - J[0][2] * J[2][0]) / det;
        inv[1][2] = (J[0][2] * J[1][0] - J[0][0] * J[1][2]) / det;
        inv[2][0] = (J[1][0] * J[2][1] - J[1][1] * J[2][0]) / det;
        inv[2][1] = (J[0][1] * J[2][0] - J[0][0] * J[2][1]) / det;
        inv[2][2] = (J[0][0] * J[1][1] - J[0][1] * J[1][0]) / det;
        g.measure = std::abs(det) / 6.0;
    }
    // grad lambda_{a+1} = row a of J^{-1}; grad lambda_0 = -sum.
    for (int a = 0; a < d; ++a)
        for (int r = 0; r < d; ++r) {
            g.grad[a + 1][r] = inv[a][r];
            g.grad[0][r] -= inv[a][r];
        }
    return g;
}

inline double ipow(double x, int p) {
    double r = 1.0;
    for (int i = 0; i < p; ++i) r *= x;
    return r;
}

/// Scatters a local (d+1)x(d+1) matrix into `values` following `space.pattern()`.
inline void scatter(const FeSpace& space, std::span<double> values, const Cell& cell, int nv,
                    const double (*local)[4]) {
    const CsrMatrix& P = space.pattern();
    std::int64_t dofs[4];
    for (int a = 0; a < nv; ++a) dofs[a] = space.dof(cell[a]);
    for (int a = 0; a < nv; ++a) {
        if (dofs[a] < 0) continue;
        for (int b = 0; b < nv; ++b) {
            if (dofs[b] < 0) continue;
            values[P.find(std::size_t(dofs[a]), std::size_t(dofs[b]))] += local[a][b];
        }
    }
}

inline Point quad_point(const MeshLevel& m, const Cell& cell, const std::array<double, 4>& bary) {
    Point x{0, 0, 0};
    for (int a = 0; a <= m.dim; ++a)
        for (int i = 0; i < 3; ++i) x[i] += bary[a] * m.vertices[cell[a]][i];
    return x;
}

inline void count_assembly(const FeSpace& space, WorkReport* work) {
    if (!work) return;
    const std::size_t nv = std::size_t(space.mesh().vertices_per_cell());
    work->assembly_nonzeros += space.mesh().n_cells() * nv * nv;
    ++work->assemblies;
}

/// Symmetrizes a pattern-assembled matrix by copying the upper triangle into the
/// lower one, so a(i,j) == a(j,i) holds bitwise.
inline void mirror_upper(CsrMatrix& A) {
    auto off = A.offsets();
    auto col = A.columns();
    auto val = A.values();
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t k = off[i]; k < off[i + 1]; ++k)
            if (col[k] < i) val[k] = val[A.find(col[k], i)];
}

} // namespace detail

/// Matrix of \hat a(w, v) = int A grad w . grad v over the space's dofs.
inline CsrMatrix assemble_stiffness(const FeSpace& space, const ProblemSpec& spec, WorkReport* work = nullptr) {
    const MeshLevel& m = space.mesh();
    if (spec.dim != m.dim) throw InvalidArgument("assemble_stiffness: dimension mismatch");
    CsrMatrix A = space.pattern();
    auto val = A.values();
    const int nv = m.vertices_per_cell();
    const int d = m.dim;
    for (std::size_t c = 0; c < m.n_cells(); ++c) {
        auto g = detail::cell_geometry(m, c);
        double local[4][4] = {};
        for (int a = 0; a < nv; ++a) {
            double Ag[3] = {};
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) Ag[i] += spec.diffusion_at(i, j) * g.grad[a][j];
            for (int b = 0; b < nv; ++b) {
                double s = 0.0;
                for (int i = 0; i < d; ++i) s += Ag[i] * g.grad[b][i];
                local[a][b] = g.measure * s;
            }
        }
        detail::scatter(space, val, m.cells[c], nv, local);
    }
    detail::mirror_upper(A);
    detail::count_assembly(space, work);
    return A;
}

/// Matrix of b(w, v) = int w v. Element matrices are exact: |K|/((d+1)(d+2)) (1 + delta_ab).
inline CsrMatrix assemble_mass(const FeSpace& space, WorkReport* work = nullptr) {
    const MeshLevel& m = space.mesh();
    CsrMatrix M = space.pattern();
    auto val = M.values();
    const int nv = m.vertices_per_cell();
    const double denom = double(nv) * double(nv + 1);
    for (std::size_t c = 0; c < m.n_cells(); ++c) {
        double meas = m.cell_measure(c);
        if (!(meas > 0.0)) throw AssemblyError("degenerate cell " + std::to_string(c), long(c));
        double local[4][4] = {};
        for (int a = 0; a < nv; ++a)
            for (int b = 0; b < nv; ++b) local[a][b] = meas * (a == b ? 2.0 : 1.0) / denom;
        detail::scatter(space, val, m.cells[c], nv, local);
    }
    detail::mirror_upper(M);
    detail::count_assembly(space, work);
    return M;
}

namespace detail {

template <class WeightAt>
CsrMatrix assemble_weighted(const FeSpace& space, int integrand_degree, WeightAt&& weight_at, WorkReport* work) {
    const MeshLevel& m = space.mesh();
    const QuadratureRule& q = quadrature_rule(m.dim, integrand_degree);
    CsrMatrix A = space.pattern();
    auto val = A.values();
    const int nv = m.vertices_per_cell();
    for (std::size_t c = 0; c < m.n_cells(); ++c) {
        double meas = m.cell_measure(c);
        if (!(meas > 0.0)) throw AssemblyError("degenerate cell " + std::to_string(c), long(c));
        double local[4][4] = {};
        for (std::size_t p = 0; p < q.size(); ++p) {
            const auto& bary = q.points[p];
            double wq = q.weights[p] * meas * weight_at(c, bary);
            if (wq == 0.0) continue;
            for (int a = 0; a < nv; ++a)
                for (int b = 0; b < nv; ++b) local[a][b] += wq * bary[a] * bary[b];
        }
        scatter(space, val, m.cells[c], nv, local);
    }
    mirror_upper(A);
    count_assembly(space, work);
    return A;
}

} // namespace detail

/// Matrix of int W(x)^power phi_i phi_j for an analytic field W of the given polynomial degree.
inline CsrMatrix assemble_weighted_mass(const FeSpace& space, const ProblemSpec::Field& weight, int weight_degree,
                                        int power = 1, WorkReport* work = nullptr) {
    if (power < 1) throw InvalidArgument("assemble_weighted_mass: power must be >= 1");
    const MeshLevel& m = space.mesh();
    if (!weight) return detail::assemble_weighted(space, 2, [](std::size_t, const auto&) { return 0.0; }, work);
    return detail::assemble_weighted(
        space, weight_degree * power + 2,
        [&](std::size_t c, const std::array<double, 4>& bary) {
            return detail::ipow(weight(detail::quad_point(m, m.cells[c], bary)), power);
        },
        work);
}

/// Matrix of int w^power phi_i phi_j for a P1 function w living on this space's level.
inline CsrMatrix assemble_weighted_mass(const FeSpace& space, const FeFunction& weight, int power,
                                        WorkReport* work = nullptr) {
    if (weight.level_index != space.level_index())
        throw InvalidArgument("assemble_weighted_mass: weight lives on level " +
                              std::to_string(weight.level_index) + ", space on level " +
                              std::to_string(space.level_index()));
    if (power < 1) throw InvalidArgument("assemble_weighted_mass: power must be >= 1");
    const MeshLevel& m = space.mesh();
    const Vector vals = space.to_vertex_values(weight.coefficients);
    return detail::assemble_weighted(
        space, power + 2,
        [&](std::size_t c, const std::array<double, 4>& bary) {
            double w = 0.0;
            for (int a = 0; a <= m.dim; ++a) w += bary[a] * vals[m.cells[c][a]];
            return detail::ipow(w, power);
        },
        work);
}

/// Potential matrix M_W = int W phi_i phi_j.
inline CsrMatrix assemble_potential(const FeSpace& space, const ProblemSpec& spec, WorkReport* work = nullptr) {
    return assemble_weighted_mass(space, spec.potential, spec.potential_degree, 1, work);
}

/// Nonlinear matrix zeta * int |w|^(2 sigma) phi_i phi_j, the frozen-coefficient part of f(x, w)/w.
inline CsrMatrix assemble_nonlinear(const FeSpace& space, const ProblemSpec& spec, const FeFunction& w,
                                    WorkReport* work = nullptr) {
    CsrMatrix N = assemble_weighted_mass(space, w, 2 * spec.sigma, work);
    N *= spec.zeta;
    return N;
}

/// Load vector (f(x, u), phi_i) for f(x, u) = W u + zeta |u|^(2 sigma) u.
inline Vector assemble_nonlinear_load(const FeSpace& space, const ProblemSpec& spec, const FeFunction& u,
                                      WorkReport* work = nullptr) {
    if (u.level_index != space.level_index())
        throw InvalidArgument("assemble_nonlinear_load: function on wrong level");
    const MeshLevel& m = space.mesh();
    int degree = std::max(spec.potential ? spec.potential_degree + 2 : 0,
                          spec.linear() ? 0 : 2 * spec.sigma + 2);
    const QuadratureRule& q = quadrature_rule(m.dim, std::max(degree, 2));
    const Vector vals = space.to_vertex_values(u.coefficients);
    Vector load(space.n_dofs(), 0.0);
    const int nv = m.vertices_per_cell();
    for (std::size_t c = 0; c < m.n_cells(); ++c) {
        const Cell& cell = m.cells[c];
        double meas = m.cell_measure(c);
        double local[4] = {};
        for (std::size_t p = 0; p < q.size(); ++p) {
            const auto& bary = q.points[p];
            double uq = 0.0;
            for (int a = 0; a < nv; ++a) uq += bary[a] * vals[cell[a]];
            double f = 0.0;
            if (spec.potential) f += spec.potential(detail::quad_point(m, cell, bary)) * uq;
            if (!spec.linear()) f += spec.zeta * detail::ipow(uq, 2 * spec.sigma) * uq;
            double wq = q.weights[p] * meas * f;
            for (int a = 0; a < nv; ++a) local[a] += wq * bary[a];
        }
        for (int a = 0; a < nv; ++a) {
            auto dof = space.dof(cell[a]);
            if (dof >= 0) load[std::size_t(dof)] += local[a];
        }
    }
    if (work) {
        work->assembly_nonzeros += m.n_cells() * std::size_t(nv);
        ++work->assemblies;
    }
    return load;
}

/// Dual vector v -> a(u, v) - lambda b(u, v) over the space's basis functions.
inline Vector apply_nonlinear_residual(const FeSpace& space, const ProblemSpec& spec, const CsrMatrix& stiffness,
                                       const CsrMatrix& mass, const FeFunction& u, double lambda,
                                       WorkReport* work = nullptr) {
    Vector r = assemble_nonlinear_load(space, spec, u, work);
    Vector Au(space.n_dofs()), Mu(space.n_dofs());
    stiffness.multiply(u.coefficients, Au, work);
    mass.multiply(u.coefficients, Mu, work);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += Au[i] - lambda * Mu[i];
    return r;
}

/// Convenience overload assembling the stiffness and mass matrices on the fly.
inline Vector apply_nonlinear_residual(const FeSpace& space, const ProblemSpec& spec, const FeFunction& u,
                                       double lambda) {
    return apply_nonlinear_residual(space, spec, assemble_stiffness(space, spec), assemble_mass(space), u, lambda);
}

/// Energy norm sqrt(u^T A u).
inline double a_norm(std::span<const double> u, const CsrMatrix& stiffness) {
    require_same_size(u.size(), stiffness.rows(), "a_norm");
    return std::sqrt(std::max(0.0, stiffness.quadratic_form(u)));
}

/// L2 norm sqrt(u^T M u).
inline double l2_norm(std::span<const double> u, const CsrMatrix& mass) {
    require_same_size(u.size(), mass.rows(), "l2_norm");
    return std::sqrt(std::max(0.0, mass.quadratic_form(u)));
}

/// Restriction of a vertex prolongation to interior dofs (rows: fine dofs, columns: coarse dofs).
inline CsrMatrix restrict_to_dofs(const CsrMatrix& P, const FeSpace& fine, const FeSpace& coarse) {
    if (P.rows() != fine.mesh().n_vertices() || P.cols() != coarse.mesh().n_vertices())
        throw InvalidArgument("restrict_to_dofs: prolongation does not match the spaces");
    std::vector<std::size_t> off{0}, col;
    Vector val;
    for (std::size_t fd = 0; fd < fine.n_dofs(); ++fd) {
        std::size_t v = fine.vertex(fd);
        auto c = P.row_columns(v);
        auto w = P.row_values(v);
        for (std::size_t k = 0; k < c.size(); ++k) {
            auto cd = coarse.dof(c[k]);
            if (cd < 0) continue;
            col.push_back(std::size_t(cd));
            val.push_back(w[k]);
        }
        off.push_back(col.size());
    }
    // dof numbering is monotone in vertex numbering, so columns stay sorted.
    return CsrMatrix(fine.n_dofs(), coarse.n_dofs(), std::move(off), std::move(col), std::move(val));
}

} // namespace fmgeig
