#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "fmgeig/mesh.hpp"

using namespace fmgeig;

namespace {

// P1 value of vertex data at a point inside cell c, by barycentric coordinates.
double evaluate_in_cell(const MeshLevel& m, std::size_t c, const std::vector<double>& values, const Point& x) {
    const Cell& k = m.cells[c];
    const int d = m.dim;
    double T[3][3];
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) T[i][j] = m.vertices[k[j + 1]][i] - m.vertices[k[0]][i];
    double r[3];
    for (int i = 0; i < d; ++i) r[i] = x[i] - m.vertices[k[0]][i];
    // Cramer for the barycentric coordinates of vertices 1..d
    auto det = [&](double A[3][3]) {
        if (d == 2) return A[0][0] * A[1][1] - A[0][1] * A[1][0];
        return A[0][0] * (A[1][1] * A[2][2] - A[1][2] * A[2][1]) - A[0][1] * (A[1][0] * A[2][2] - A[1][2] * A[2][0]) +
               A[0][2] * (A[1][0] * A[2][1] - A[1][1] * A[2][0]);
    };
    double D = det(T), lam[4];
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
        double B[3][3];
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) B[a][b] = b == j ? r[a] : T[a][b];
        lam[j + 1] = det(B) / D;
        s += lam[j + 1];
    }
    lam[0] = 1.0 - s;
    double v = 0.0;
    for (int a = 0; a <= d; ++a) v += lam[a] * values[k[a]];
    return v;
}

Point centroid(const MeshLevel& m, std::size_t c) {
    Point p{0, 0, 0};
    for (int a = 0; a <= m.dim; ++a)
        for (int i = 0; i < 3; ++i) p[i] += m.vertices[m.cells[c][a]][i] / (m.dim + 1);
    return p;
}

} // namespace

TEST(BuildInitialMesh, CubeGridOfEightHas3072Cells) {
    MeshLevel m = build_initial_mesh(3, 8);
    EXPECT_EQ(m.n_cells(), 3072u);
    EXPECT_EQ(m.n_vertices(), 729u);
    EXPECT_EQ(m.n_interior(), 343u);
}

TEST(BuildInitialMesh, SingleSquare) {
    MeshLevel m = build_initial_mesh(2, 1);
    EXPECT_EQ(m.n_cells(), 2u);
    EXPECT_EQ(m.n_vertices(), 4u);
    for (char b : m.boundary_vertex) EXPECT_TRUE(b);
}

TEST(BuildInitialMesh, FourByFourGrid) {
    MeshLevel m = build_initial_mesh(2, 4);
    EXPECT_EQ(m.n_cells(), 32u);
    EXPECT_EQ(m.n_vertices(), 25u);
    EXPECT_EQ(m.n_interior(), 9u);
}

TEST(BuildInitialMesh, RejectsBadArguments) {
    EXPECT_THROW(build_initial_mesh(1, 4), InvalidArgument);
    EXPECT_THROW(build_initial_mesh(4, 4), InvalidArgument);
    EXPECT_THROW(build_initial_mesh(2, 0), InvalidArgument);
}

TEST(BuildInitialMesh, CellCountFormula) {
    for (int n = 1; n <= 5; ++n) {
        EXPECT_EQ(build_initial_mesh(2, n).n_cells(), std::size_t(2 * n * n));
        EXPECT_EQ(build_initial_mesh(3, n).n_cells(), std::size_t(6 * n * n * n));
    }
}

TEST(MeshInvariants, PositiveMeasureAndExactTiling) {
    for (int d : {2, 3}) {
        MeshHierarchy h = build_hierarchy(d, 2, 3);
        for (const auto& m : h.levels) {
            for (std::size_t c = 0; c < m.n_cells(); ++c) EXPECT_GT(m.cell_measure(c), 0.0);
            EXPECT_NEAR(m.total_measure(), m.box_volume(), 1e-12 * m.box_volume());
        }
    }
}

TEST(MeshInvariants, BoundaryFlagsExactlyOnFaces) {
    for (int d : {2, 3}) {
        MeshLevel m = refine(build_initial_mesh(d, 3));
        for (std::size_t v = 0; v < m.n_vertices(); ++v) {
            bool on = false;
            for (int i = 0; i < d; ++i)
                on = on || std::abs(m.vertices[v][i]) <= 1e-12 || std::abs(m.vertices[v][i] - 1.0) <= 1e-12;
            EXPECT_EQ(bool(m.boundary_vertex[v]), on);
        }
    }
}

TEST(Refine, TableOneSecondRow) {
    MeshLevel m = refine(build_initial_mesh(3, 8));
    EXPECT_EQ(m.n_cells(), 24576u);
}

TEST(Refine, UnitSquareTwoCells) {
    MeshLevel m = refine(build_initial_mesh(2, 1));
    EXPECT_EQ(m.n_cells(), 8u);
    EXPECT_EQ(m.n_vertices(), 9u);
    EXPECT_EQ(m.n_interior(), 1u);
}

TEST(Refine, ChildMeasuresSumToParentPerCell) {
    for (int d : {2, 3}) {
        MeshLevel coarse = build_initial_mesh(d, 2);
        MeshLevel fine = refine(coarse);
        const std::size_t children = d == 2 ? 4 : 8;
        ASSERT_EQ(fine.n_cells(), coarse.n_cells() * children);
        // Children are emitted contiguously per parent; confirm by containment and sum.
        for (std::size_t c = 0; c < coarse.n_cells(); ++c) {
            double sum = 0.0;
            for (std::size_t j = 0; j < children; ++j) sum += fine.cell_measure(c * children + j);
            EXPECT_NEAR(sum, coarse.cell_measure(c), 1e-14);
        }
    }
}

TEST(Refine, ParentVerticesArePrefix) {
    for (int d : {2, 3}) {
        MeshLevel coarse = build_initial_mesh(d, 3);
        MeshLevel fine = refine(coarse);
        ASSERT_EQ(fine.n_parent_vertices, coarse.n_vertices());
        for (std::size_t v = 0; v < coarse.n_vertices(); ++v)
            for (int i = 0; i < 3; ++i) EXPECT_EQ(fine.vertices[v][i], coarse.vertices[v][i]);
        for (std::size_t e = 0; e < fine.parent_edges.size(); ++e) {
            const auto& pe = fine.parent_edges[e];
            for (int i = 0; i < d; ++i)
                EXPECT_DOUBLE_EQ(fine.vertices[coarse.n_vertices() + e][i],
                                 0.5 * (coarse.vertices[pe[0]][i] + coarse.vertices[pe[1]][i]));
        }
    }
}

TEST(Refine, MeshSizeHalves) {
    for (int d : {2, 3}) {
        MeshLevel coarse = build_initial_mesh(d, 2);
        MeshLevel fine = refine(coarse);
        EXPECT_NEAR(fine.mesh_size, coarse.mesh_size / 2.0, 1e-12 * coarse.mesh_size);
        EXPECT_EQ(fine.level_index, coarse.level_index + 1);
    }
}

TEST(Refine, ThreeDimensionalShapeRegularity) {
    // Kuhn structure is preserved: every level has the same set of cell shapes up to scaling.
    MeshHierarchy h = build_hierarchy(3, 1, 4);
    for (std::size_t k = 0; k < h.size(); ++k) {
        const auto& m = h.level(k);
        double hmin = 1e300, hmax = 0.0;
        for (std::size_t c = 0; c < m.n_cells(); ++c) {
            hmin = std::min(hmin, m.cell_diameter(c));
            hmax = std::max(hmax, m.cell_diameter(c));
        }
        EXPECT_NEAR(hmax / hmin, 1.0, 1e-12) << "level " << k;
        EXPECT_NEAR(m.mesh_size, std::sqrt(3.0) / double(1 << k), 1e-12);
    }
}

TEST(BuildHierarchy, TableOneRowsOneToThree) {
    MeshHierarchy h = build_hierarchy(3, 8, 3);
    ASSERT_EQ(h.size(), 3u);
    EXPECT_EQ(h.level(0).n_cells(), 3072u);
    EXPECT_EQ(h.level(1).n_cells(), 24576u);
    EXPECT_EQ(h.level(2).n_cells(), 196608u);
    EXPECT_EQ(h.prolongations.size(), 2u);
}

TEST(BuildHierarchy, SingleLevelHasNoProlongations) {
    MeshHierarchy h = build_hierarchy(2, 2, 1);
    EXPECT_EQ(h.size(), 1u);
    EXPECT_TRUE(h.prolongations.empty());
    EXPECT_EQ(h.beta, 2);
}

TEST(BuildHierarchy, MeshSizeRatios) {
    MeshHierarchy h = build_hierarchy(2, 2, 4);
    const double h0 = h.level(0).mesh_size;
    for (std::size_t k = 0; k < 4; ++k)
        EXPECT_NEAR(h.level(k).mesh_size / h0, 1.0 / double(1 << k), 1e-12);
}

TEST(BuildHierarchy, CellCountLadderAndNestedVertices) {
    for (int d : {2, 3}) {
        MeshHierarchy h = build_hierarchy(d, 1, 4);
        const std::size_t factor = d == 2 ? 4 : 8;
        for (std::size_t k = 1; k < h.size(); ++k) {
            EXPECT_EQ(h.level(k).n_cells(), h.level(k - 1).n_cells() * factor);
            for (std::size_t v = 0; v < h.level(k - 1).n_vertices(); ++v)
                EXPECT_EQ(h.level(k).vertices[v], h.level(k - 1).vertices[v]);
        }
    }
}

TEST(BuildHierarchy, InteriorDofRatioTendsToBetaPowD) {
    MeshHierarchy h = build_hierarchy(2, 2, 7);
    const std::size_t n = h.size() - 1;
    double prev_dev = 1e9;
    for (std::size_t k = 2; k < n; ++k) {
        double predicted = double(h.level(n).n_interior()) / std::pow(4.0, double(n - k));
        double dev = std::abs(double(h.level(k).n_interior()) / predicted - 1.0);
        EXPECT_LT(dev, prev_dev);
        prev_dev = dev;
    }
    EXPECT_LT(prev_dev, 0.1);
}

TEST(BuildHierarchy, MemoryBudgetNamesLevel) {
    try {
        build_hierarchy(3, 4, 6, std::size_t{1} << 22);
        FAIL() << "expected ResourceError";
    } catch (const ResourceError& e) {
        EXPECT_GE(e.level(), 1);
        EXPECT_LE(e.level(), 5);
    }
    EXPECT_THROW(build_hierarchy(2, 2, 0), InvalidArgument);
}

TEST(Prolongation, ShapeAndRowStructure) {
    MeshLevel c = build_initial_mesh(2, 2);
    MeshLevel f = refine(c);
    CsrMatrix P = prolongation(c, f);
    EXPECT_EQ(P.rows(), f.n_vertices());
    EXPECT_EQ(P.cols(), c.n_vertices());
    for (std::size_t i = 0; i < P.rows(); ++i) {
        auto v = P.row_values(i);
        if (i < c.n_vertices()) {
            ASSERT_EQ(v.size(), 1u);
            EXPECT_EQ(v[0], 1.0);
            EXPECT_EQ(P.row_columns(i)[0], i);
        } else {
            ASSERT_EQ(v.size(), 2u);
            EXPECT_EQ(v[0], 0.5);
            EXPECT_EQ(v[1], 0.5);
        }
    }
}

TEST(Prolongation, ReproducesConstantsAndLinears) {
    for (int d : {2, 3}) {
        MeshLevel c = build_initial_mesh(d, 3);
        MeshLevel f = refine(c);
        CsrMatrix P = prolongation(c, f);
        Vector ones(c.n_vertices(), 1.0), fine_ones = P * ones;
        for (double v : fine_ones) EXPECT_EQ(v, 1.0);
        for (int axis = 0; axis < d; ++axis) {
            Vector lin(c.n_vertices());
            for (std::size_t v = 0; v < c.n_vertices(); ++v) lin[v] = 1.0 + 2.0 * c.vertices[v][axis];
            Vector fl = P * lin;
            for (std::size_t v = 0; v < f.n_vertices(); ++v)
                EXPECT_NEAR(fl[v], 1.0 + 2.0 * f.vertices[v][axis], 1e-15);
        }
    }
}

TEST(Prolongation, InteriorColumnSumIsOnePlusHalfDegree) {
    // Each incident edge contributes one midpoint with weight 1/2.
    MeshLevel c = build_initial_mesh(2, 4);
    MeshLevel f = refine(c);
    CsrMatrix Pt = prolongation(c, f).transpose();
    std::map<std::size_t, int> degree;
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (const Cell& k : c.cells)
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b) edges.insert({std::min(k[a], k[b]), std::max(k[a], k[b])});
    for (auto [a, b] : edges) {
        ++degree[a];
        ++degree[b];
    }
    for (std::size_t v = 0; v < c.n_vertices(); ++v) {
        if (c.boundary_vertex[v]) continue;
        double sum = 0.0;
        for (double x : Pt.row_values(v)) sum += x;
        EXPECT_EQ(degree[v], 6);
        EXPECT_DOUBLE_EQ(sum, 1.0 + degree[v] / 2.0);
    }
}

TEST(Prolongation, NestednessByPointwiseEvaluation) {
    for (int d : {2, 3}) {
        MeshLevel c = build_initial_mesh(d, 2);
        MeshLevel f = refine(c);
        CsrMatrix P = prolongation(c, f);
        std::vector<double> coarse(c.n_vertices());
        for (std::size_t v = 0; v < coarse.size(); ++v) coarse[v] = std::sin(3.0 * v + 1.0);
        std::vector<double> fine = P * coarse;
        const std::size_t children = d == 2 ? 4 : 8;
        for (std::size_t fc = 0; fc < f.n_cells(); ++fc) {
            std::size_t parent = fc / children;
            Point x = centroid(f, fc);
            EXPECT_NEAR(evaluate_in_cell(f, fc, fine, x), evaluate_in_cell(c, parent, coarse, x), 1e-13);
        }
    }
}

TEST(Prolongation, RejectsMismatchedLevels) {
    MeshLevel c = build_initial_mesh(2, 2);
    MeshLevel f = refine(refine(c));
    EXPECT_THROW(prolongation(c, f), InvalidArgument);
    EXPECT_THROW(prolongation(c, build_initial_mesh(2, 4)), InvalidArgument);
}

TEST(WriteMesh, PlainTextListing) {
    MeshLevel m = build_initial_mesh(2, 1);
    std::string path = ::testing::TempDir() + "mesh_dump.txt";
    write_mesh(m, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# vertices 4");
    for (int i = 0; i < 4; ++i) std::getline(in, line);
    std::getline(in, line);
    EXPECT_EQ(line, "# cells 2");
    std::getline(in, line);
    int a, b, c;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d %d %d", &a, &b, &c), 3);
    std::remove(path.c_str());
}
