#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iomanip>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmgeig/csr_matrix.hpp"
#include "fmgeig/errors.hpp"

namespace fmgeig {

using Point = std::array<double, 3>;
using Cell = std::array<std::uint32_t, 4>;

/// One simplicial mesh of an axis-aligned box.
///
/// Cells are stored with their vertices in Kuhn path order (each vertex differs
/// from the previous one in a single coordinate). Refinement relies on that
/// order; orientation therefore alternates with the permutation parity and
/// measures are taken as absolute values.
struct MeshLevel {
    int dim = 2;
    std::vector<Point> vertices;
    std::vector<Cell> cells;
    std::vector<char> boundary_vertex;
    int level_index = 0;
    double mesh_size = 0.0;
    Point box_lo{0.0, 0.0, 0.0};
    Point box_hi{1.0, 1.0, 1.0};
    // Refinement links: vertices [0, n_parent_vertices) are inherited from the
    // parent level; vertex n_parent_vertices + e is the midpoint of parent_edges[e].
    std::size_t n_parent_vertices = 0;
    std::vector<std::array<std::uint32_t, 2>> parent_edges;

    std::size_t n_vertices() const noexcept { return vertices.size(); }
    std::size_t n_cells() const noexcept { return cells.size(); }
    int vertices_per_cell() const noexcept { return dim + 1; }

    std::size_t n_interior() const noexcept {
        return static_cast<std::size_t>(std::count(boundary_vertex.begin(), boundary_vertex.end(), 0));
    }

    /// Signed d!-scaled volume (determinant of the edge vectors).
    double signed_determinant(std::size_t c) const noexcept {
        const Cell& k = cells[c];
        const Point& p0 = vertices[k[0]];
        if (dim == 2) {
            const Point& p1 = vertices[k[1]];
            const Point& p2 = vertices[k[2]];
            return (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        }
        double a[3][3];
        for (int r = 0; r < 3; ++r)
            for (int j = 0; j < 3; ++j) a[r][j] = vertices[k[r + 1]][j] - p0[j];
        return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
               a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
               a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    }

    double cell_measure(std::size_t c) const noexcept {
        return std::abs(signed_determinant(c)) / (dim == 2 ? 2.0 : 6.0);
    }

    double total_measure() const noexcept {
        double s = 0.0;
        for (std::size_t c = 0; c < cells.size(); ++c) s += cell_measure(c);
        return s;
    }

    double box_volume() const noexcept {
        double v = 1.0;
        for (int i = 0; i < dim; ++i) v *= box_hi[i] - box_lo[i];
        return v;
    }

    double cell_diameter(std::size_t c) const noexcept {
        double h = 0.0;
        const Cell& k = cells[c];
        for (int a = 0; a <= dim; ++a)
            for (int b = a + 1; b <= dim; ++b) {
                double s = 0.0;
                for (int i = 0; i < dim; ++i) {
                    double d = vertices[k[a]][i] - vertices[k[b]][i];
                    s += d * d;
                }
                h = std::max(h, std::sqrt(s));
            }
        return h;
    }

    /// Rough footprint of the mesh arrays, used by the hierarchy memory budget.
    std::size_t estimated_bytes() const noexcept {
        return vertices.size() * (sizeof(Point) + 1) + cells.size() * sizeof(Cell) +
               parent_edges.size() * 8;
    }
};

namespace detail {

inline bool on_box_boundary(const Point& p, int dim, const Point& lo, const Point& hi) {
    constexpr double tol = 1e-12;
    for (int i = 0; i < dim; ++i)
        if (std::abs(p[i] - lo[i]) <= tol || std::abs(p[i] - hi[i]) <= tol) return true;
    return false;
}

inline void finalize_level(MeshLevel& m) {
    m.boundary_vertex.resize(m.vertices.size());
    for (std::size_t v = 0; v < m.vertices.size(); ++v)
        m.boundary_vertex[v] = detail::on_box_boundary(m.vertices[v], m.dim, m.box_lo, m.box_hi) ? 1 : 0;
    double h = 0.0;
    for (std::size_t c = 0; c < m.cells.size(); ++c) h = std::max(h, m.cell_diameter(c));
    m.mesh_size = h;
}

} // namespace detail

/// Uniform grid of n^d boxes on [0,1]^d, each box split into d! Kuhn simplices
/// sharing the main diagonal (2 triangles or 6 tetrahedra).
inline MeshLevel build_initial_mesh(int dim, int divisions_per_axis, const Point& lo = {0, 0, 0},
                                    const Point& hi = {1, 1, 1}) {
    if (dim != 2 && dim != 3)
        throw InvalidArgument("build_initial_mesh: dim must be 2 or 3, got " + std::to_string(dim));
    if (divisions_per_axis < 1)
        throw InvalidArgument("build_initial_mesh: divisions_per_axis must be >= 1");
    for (int i = 0; i < dim; ++i)
        if (!(hi[i] > lo[i])) throw InvalidArgument("build_initial_mesh: empty box");

    MeshLevel m;
    m.dim = dim;
    m.box_lo = lo;
    m.box_hi = hi;
    const std::size_t n = static_cast<std::size_t>(divisions_per_axis);
    const std::size_t np = n + 1;
    const std::size_t nz = dim == 3 ? np : 1;
    m.vertices.reserve(np * np * nz);
    for (std::size_t k = 0; k < nz; ++k)
        for (std::size_t j = 0; j < np; ++j)
            for (std::size_t i = 0; i < np; ++i) {
                Point p{lo[0] + (hi[0] - lo[0]) * double(i) / double(n),
                        lo[1] + (hi[1] - lo[1]) * double(j) / double(n), 0.0};
                if (dim == 3) p[2] = lo[2] + (hi[2] - lo[2]) * double(k) / double(n);
                m.vertices.push_back(p);
            }
    auto vid = [&](std::size_t i, std::size_t j, std::size_t k) {
        return static_cast<std::uint32_t>(i + np * (j + np * k));
    };
    if (dim == 2) {
        m.cells.reserve(2 * n * n);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i) {
                m.cells.push_back({vid(i, j, 0), vid(i + 1, j, 0), vid(i + 1, j + 1, 0), 0});
                m.cells.push_back({vid(i, j, 0), vid(i, j + 1, 0), vid(i + 1, j + 1, 0), 0});
            }
    } else {
        static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                            {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
        m.cells.reserve(6 * n * n * n);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < n; ++i)
                    for (const auto& perm : perms) {
                        std::size_t c[3] = {i, j, k};
                        Cell cell{};
                        cell[0] = vid(c[0], c[1], c[2]);
                        for (int s = 0; s < 3; ++s) {
                            ++c[perm[s]];
                            cell[s + 1] = vid(c[0], c[1], c[2]);
                        }
                        m.cells.push_back(cell);
                    }
    }
    detail::finalize_level(m);
    return m;
}

/// One regular (red) refinement: every edge is bisected, triangles split into 4
/// and tetrahedra into 8 children. Parent vertices keep their indices.
inline MeshLevel refine(const MeshLevel& coarse) {
    if ((coarse.dim != 2 && coarse.dim != 3) || coarse.cells.empty())
        throw InvalidArgument("refine: invalid coarse mesh");
    MeshLevel fine;
    fine.dim = coarse.dim;
    fine.box_lo = coarse.box_lo;
    fine.box_hi = coarse.box_hi;
    fine.level_index = coarse.level_index + 1;
    fine.vertices = coarse.vertices;
    fine.n_parent_vertices = coarse.vertices.size();

    std::unordered_map<std::uint64_t, std::uint32_t> midpoint;
    midpoint.reserve(coarse.cells.size() * (coarse.dim == 2 ? 2 : 2));
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
        if (a > b) std::swap(a, b);
        std::uint64_t key = (std::uint64_t(a) << 32) | b;
        auto [it, inserted] = midpoint.try_emplace(key, 0u);
        if (inserted) {
            it->second = static_cast<std::uint32_t>(fine.vertices.size());
            const Point& pa = coarse.vertices[a];
            const Point& pb = coarse.vertices[b];
            fine.vertices.push_back({0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])});
            fine.parent_edges.push_back({a, b});
        }
        return it->second;
    };

    if (coarse.dim == 2) {
        fine.cells.reserve(4 * coarse.cells.size());
        for (const Cell& c : coarse.cells) {
            auto x0 = c[0], x1 = c[1], x2 = c[2];
            auto x01 = mid(x0, x1), x02 = mid(x0, x2), x12 = mid(x1, x2);
            fine.cells.push_back({x0, x01, x02, 0});
            fine.cells.push_back({x01, x1, x12, 0});
            fine.cells.push_back({x02, x12, x2, 0});
            fine.cells.push_back({x01, x02, x12, 0});
        }
    } else {
        fine.cells.reserve(8 * coarse.cells.size());
        for (const Cell& c : coarse.cells) {
            auto x0 = c[0], x1 = c[1], x2 = c[2], x3 = c[3];
            auto x01 = mid(x0, x1), x02 = mid(x0, x2), x03 = mid(x0, x3);
            auto x12 = mid(x1, x2), x13 = mid(x1, x3), x23 = mid(x2, x3);
            // Path-ordered children; each is again a Kuhn simplex.
            fine.cells.push_back({x0, x01, x02, x03});
            fine.cells.push_back({x01, x1, x12, x13});
            fine.cells.push_back({x02, x12, x2, x23});
            fine.cells.push_back({x03, x13, x23, x3});
            fine.cells.push_back({x01, x02, x03, x13});
            fine.cells.push_back({x01, x02, x12, x13});
            fine.cells.push_back({x02, x03, x13, x23});
            fine.cells.push_back({x02, x12, x13, x23});
        }
    }
    detail::finalize_level(fine);
    return fine;
}

/// Vertex-based P1 interpolation from `coarse` to `fine = refine(coarse)`:
/// inherited vertices copy, edge midpoints average their two parents.
inline CsrMatrix prolongation(const MeshLevel& coarse, const MeshLevel& fine) {
    if (fine.dim != coarse.dim || fine.level_index != coarse.level_index + 1 ||
        fine.n_parent_vertices != coarse.n_vertices() ||
        fine.n_vertices() != coarse.n_vertices() + fine.parent_edges.size())
        throw InvalidArgument("prolongation: fine level is not a refinement of the coarse level");
    const std::size_t nc = coarse.n_vertices();
    const std::size_t nf = fine.n_vertices();
    std::vector<std::size_t> off(nf + 1), col;
    Vector val;
    col.reserve(nc + 2 * fine.parent_edges.size());
    val.reserve(col.capacity());
    for (std::size_t v = 0; v < nc; ++v) {
        col.push_back(v);
        val.push_back(1.0);
        off[v + 1] = col.size();
    }
    for (std::size_t e = 0; e < fine.parent_edges.size(); ++e) {
        auto [a, b] = fine.parent_edges[e];
        col.push_back(std::min(a, b));
        col.push_back(std::max(a, b));
        val.push_back(0.5);
        val.push_back(0.5);
        off[nc + e + 1] = col.size();
    }
    return CsrMatrix(nf, nc, std::move(off), std::move(col), std::move(val));
}

/// Nested mesh sequence, coarsest first, with vertex prolongations between neighbours.
struct MeshHierarchy {
    std::deque<MeshLevel> levels; // deque keeps level references stable while refining
    int beta = 2;
    std::vector<CsrMatrix> prolongations; // prolongations[k-1]: level k-1 -> level k

    std::size_t size() const noexcept { return levels.size(); }
    const MeshLevel& level(std::size_t k) const { return levels.at(k); }
    const MeshLevel& finest() const { return levels.back(); }

    /// Appends one refinement of the current finest level.
    void add_level(std::size_t memory_budget_bytes = default_budget()) {
        const MeshLevel& last = levels.back();
        std::size_t predicted = last.estimated_bytes() * (last.dim == 2 ? 4 : 8) + current_bytes();
        if (predicted > memory_budget_bytes)
            throw ResourceError("mesh hierarchy: level " + std::to_string(levels.size()) +
                                    " exceeds the memory budget",
                                static_cast<int>(levels.size()));
        MeshLevel fine = refine(last);
        prolongations.push_back(prolongation(last, fine));
        levels.push_back(std::move(fine));
    }

    std::size_t current_bytes() const noexcept {
        std::size_t s = 0;
        for (const auto& l : levels) s += l.estimated_bytes();
        for (const auto& p : prolongations) s += p.nnz() * 16 + p.rows() * 8;
        return s;
    }

    static constexpr std::size_t default_budget() { return std::size_t{6} << 30; }
};

inline MeshHierarchy build_hierarchy(int dim, int divisions_per_axis, int n_levels,
                                     std::size_t memory_budget_bytes = MeshHierarchy::default_budget()) {
    if (n_levels < 1) throw InvalidArgument("build_hierarchy: n_levels must be >= 1");
    MeshHierarchy h;
    h.levels.push_back(build_initial_mesh(dim, divisions_per_axis));
    if (h.current_bytes() > memory_budget_bytes)
        throw ResourceError("mesh hierarchy: level 0 exceeds the memory budget", 0);
    for (int k = 1; k < n_levels; ++k) h.add_level(memory_budget_bytes);
    return h;
}

/// Plain-text dump: vertex lines "x y [z]" followed by cell lines of 0-based
/// vertex indices. Lines starting with '#' are section headers.
inline void write_mesh(const MeshLevel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << std::setprecision(17);
    out << "# vertices " << m.n_vertices() << '\n';
    for (const Point& p : m.vertices) {
        out << p[0] << ' ' << p[1];
        if (m.dim == 3) out << ' ' << p[2];
        out << '\n';
    }
    out << "# cells " << m.n_cells() << '\n';
    for (const Cell& c : m.cells) {
        for (int a = 0; a <= m.dim; ++a) out << (a ? " " : "") << c[a];
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace fmgeig
