#pragma once

#include <map>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "fmgeig/csr_matrix.hpp"
#include "fmgeig/dense.hpp"
#include "fmgeig/fem.hpp"
#include "fmgeig/linalg.hpp"
#include "fmgeig/mesh.hpp"

namespace fmgeig {

/// Dense copy of a (small) sparse matrix.
inline DenseMatrix to_dense(const CsrMatrix& A) {
    DenseMatrix D(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
        auto c = A.row_columns(i);
        auto v = A.row_values(i);
        for (std::size_t k = 0; k < c.size(); ++k) D(i, c[k]) = v[k];
    }
    return D;
}

/// A mesh hierarchy plus the P1 operators of one problem on every level.
///
/// Level matrices and interpolations are assembled on first use and cached.
/// Not thread-safe; share a finished instance read-only only after every
/// needed level has been touched.
class Discretization {
public:
    struct CoarseBlocks {
        DenseMatrix stiffness, mass, potential;
    };

    Discretization(MeshHierarchy hierarchy, ProblemSpec spec)
        : hierarchy_(std::move(hierarchy)), spec_(std::move(spec)) {
        spec_.validate();
        if (hierarchy_.size() == 0) throw InvalidArgument("Discretization: empty hierarchy");
        if (hierarchy_.level(0).dim != spec_.dim)
            throw InvalidArgument("Discretization: mesh and problem dimensions differ");
    }

    const MeshHierarchy& hierarchy() const noexcept { return hierarchy_; }
    const ProblemSpec& spec() const noexcept { return spec_; }
    std::size_t n_levels() const noexcept { return hierarchy_.size(); }
    const MeshLevel& mesh(std::size_t k) const { return hierarchy_.level(k); }

    /// Refines until `n` levels exist.
    void ensure_levels(std::size_t n, std::size_t memory_budget = MeshHierarchy::default_budget()) {
        while (hierarchy_.size() < n) hierarchy_.add_level(memory_budget);
    }

    const FeSpace& space(std::size_t k) const {
        auto& d = data(k);
        if (!d.space) d.space = std::make_unique<FeSpace>(mesh(k));
        return *d.space;
    }

    std::size_t n_dofs(std::size_t k) const { return space(k).n_dofs(); }

    const CsrMatrix& stiffness(std::size_t k) const {
        auto& d = data(k);
        if (!d.stiffness) d.stiffness = std::make_unique<CsrMatrix>(assemble_stiffness(space(k), spec_));
        return *d.stiffness;
    }

    const CsrMatrix& mass(std::size_t k) const {
        auto& d = data(k);
        if (!d.mass) d.mass = std::make_unique<CsrMatrix>(assemble_mass(space(k)));
        return *d.mass;
    }

    const CsrMatrix& potential(std::size_t k) const {
        auto& d = data(k);
        if (!d.potential) d.potential = std::make_unique<CsrMatrix>(assemble_potential(space(k), spec_));
        return *d.potential;
    }

    /// \hat A + M_W, the part of the linearized operator that does not depend on u.
    const CsrMatrix& linear_part(std::size_t k) const {
        auto& d = data(k);
        if (!d.linear) d.linear = std::make_unique<CsrMatrix>(add(stiffness(k), 1.0, potential(k), 1.0));
        return *d.linear;
    }

    /// Interior-dof interpolation from level k-1 to level k.
    const CsrMatrix& prolongation(std::size_t k) const {
        if (k == 0 || k >= n_levels()) throw InvalidArgument("prolongation: level out of range");
        auto& d = data(k);
        if (!d.prolongation)
            d.prolongation = std::make_unique<CsrMatrix>(
                restrict_to_dofs(hierarchy_.prolongations[k - 1], space(k), space(k - 1)));
        return *d.prolongation;
    }

    /// Chained interpolation from level `coarse` to level `fine` (identity when equal).
    const CsrMatrix& transfer(std::size_t coarse, std::size_t fine) const {
        if (coarse > fine || fine >= n_levels()) throw InvalidArgument("transfer: bad level pair");
        auto key = std::make_pair(coarse, fine);
        auto it = transfers_.find(key);
        if (it != transfers_.end()) return *it->second;
        std::unique_ptr<CsrMatrix> T;
        if (coarse == fine)
            T = std::make_unique<CsrMatrix>(CsrMatrix::identity(n_dofs(fine)));
        else
            T = std::make_unique<CsrMatrix>(multiply(prolongation(fine), transfer(coarse, fine - 1)));
        return *transfers_.emplace(key, std::move(T)).first->second;
    }

    Vector prolongate(std::span<const double> u, std::size_t from, std::size_t to, WorkReport* work = nullptr) const {
        Vector x(u.begin(), u.end());
        for (std::size_t k = from + 1; k <= to; ++k) {
            Vector y(n_dofs(k));
            prolongation(k).multiply(x, y, work);
            x.swap(y);
        }
        return x;
    }

    /// P^T X P blocks of the level-`fine` operators onto level `coarse`, cached per pair.
    const CoarseBlocks& coarse_blocks(std::size_t coarse, std::size_t fine, WorkReport* work = nullptr) const {
        auto key = std::make_pair(coarse, fine);
        auto it = blocks_.find(key);
        if (it != blocks_.end()) return *it->second;
        const CsrMatrix& P = transfer(coarse, fine);
        auto b = std::make_unique<CoarseBlocks>();
        b->stiffness = to_dense(galerkin_product(P, stiffness(fine), work));
        b->mass = to_dense(galerkin_product(P, mass(fine), work));
        b->potential = to_dense(galerkin_product(P, potential(fine), work));
        return *blocks_.emplace(key, std::move(b)).first->second;
    }

    /// Work of assembling the level-k operators (stiffness, mass, potential),
    /// charged identically whether or not they are already cached.
    void charge_level_setup(std::size_t k, WorkReport* work) const {
        if (!work) return;
        const std::size_t nv = std::size_t(mesh(k).vertices_per_cell());
        work->assembly_nonzeros += 3 * mesh(k).n_cells() * nv * nv;
        work->assemblies += 3;
        if (k > 0) work->matvec_nonzeros += prolongation(k).nnz();
    }

    /// Multigrid context over levels 0..top using the stiffness matrices \hat A_k.
    MgContext mg_context(std::size_t top, MgSettings settings = {}, WorkReport* work = nullptr) const {
        std::vector<const CsrMatrix*> ops, ps;
        for (std::size_t k = 0; k <= top; ++k) {
            ops.push_back(&stiffness(k));
            if (k > 0) ps.push_back(&prolongation(k));
        }
        return MgContext(std::move(ops), std::move(ps), settings, work);
    }

private:
    struct LevelData {
        std::unique_ptr<FeSpace> space;
        std::unique_ptr<CsrMatrix> stiffness, mass, potential, linear, prolongation;
    };

    LevelData& data(std::size_t k) const {
        if (k >= n_levels()) throw InvalidArgument("Discretization: level " + std::to_string(k) + " not built");
        if (levels_.size() < n_levels()) levels_.resize(n_levels());
        return levels_[k];
    }

    MeshHierarchy hierarchy_;
    ProblemSpec spec_;
    mutable std::deque<LevelData> levels_;
    mutable std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<CsrMatrix>> transfers_;
    mutable std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<CoarseBlocks>> blocks_;
};

} // namespace fmgeig
