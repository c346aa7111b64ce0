#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmgeig/discretization.hpp"
#include "fmgeig/eigsolve.hpp"
#include "fmgeig/errors.hpp"
#include "fmgeig/fem.hpp"
#include "fmgeig/linalg.hpp"
#include "fmgeig/vector_ops.hpp"
#include "fmgeig/work.hpp"

namespace fmgeig {

struct FmgParams {
    int m = 1; // multigrid iterations per correction
    int p = 1; // corrections per level
    MgSettings mg{};
    ScfSettings scf{};                                  // nonlinear solve on V_{h_1}
    ScfSettings scf_augmented = ScfSettings::augmented(); // solves on V_{H,h_k}
    bool record_diagnostics = false;
    std::size_t coarse_level = 0; // hierarchy level of V_H
    std::size_t first_level = 0;  // hierarchy level of V_{h_1}
    double diagnostic_tolerance = 1e-12;
    std::size_t direct_dof_limit = 20000;

    void validate() const {
        if (m < 1) throw InvalidArgument("FmgParams: m must be >= 1");
        if (p < 1) throw InvalidArgument("FmgParams: p must be >= 1");
        if (mg.pre_steps < 0 || mg.post_steps < 0) throw InvalidArgument("FmgParams: negative smoothing steps");
        if (coarse_level > first_level) throw InvalidArgument("FmgParams: V_H must not be finer than V_{h_1}");
        scf.validate();
        scf_augmented.validate();
    }
};

struct CorrectionRecord {
    double lambda_before = 0.0;
    double lambda_after = 0.0;
    double err_a_before = NAN; // vs the level's direct solution, diagnostics only
    double err_a_after = NAN;
    double err_b_before = NAN;
    double err_b_after = NAN;
    double gamma_obs = NAN;
    int varpi = 0;
    bool scf_converged = false;
    bool degenerate = false;
    double work_units = 0.0;
};

struct LevelTrace {
    std::size_t level_index = 0;
    std::size_t n_dofs = 0;
    std::size_t n_elements = 0;
    double lambda = 0.0;
    std::vector<CorrectionRecord> records;
    WorkReport work;
    double wall_seconds = 0.0;
    int scf_iterations = 0; // V_{h_1} only
    bool scf_converged = true;
    std::optional<EigenPair> direct; // same-level direct solution, diagnostics only
    int varpi_max() const {
        int v = 0;
        for (const auto& r : records) v = std::max(v, r.varpi);
        return v;
    }
    double gamma_max() const {
        double g = NAN;
        for (const auto& r : records)
            if (!std::isnan(r.gamma_obs)) g = std::isnan(g) ? r.gamma_obs : std::max(g, r.gamma_obs);
        return g;
    }
};

struct FmgResult {
    EigenPair pair;
    std::vector<LevelTrace> traces;
    std::vector<EigenPair> level_pairs; // final pair of every level, coarsest first
    WorkReport work;
};

struct CorrectionOutcome {
    EigenPair pair;
    int varpi = 0;
    bool converged = false;
    bool degenerate = false;
};

/// ||u - v||_X up to the sign of v (eigenvectors are defined up to sign).
inline double signed_distance(std::span<const double> u, std::span<const double> v, const CsrMatrix& X) {
    Vector d = subtract(u, v);
    Vector s(u.begin(), u.end());
    axpy(1.0, v, s);
    return std::sqrt(std::max(0.0, std::min(X.quadratic_form(d), X.quadratic_form(s))));
}

/// One correction step on level `level`: m multigrid iterations on the
/// auxiliary problem \hat a(u~, v) = (lambda u - f(u), v), then a nonlinear
/// eigensolve on V_H + span{u~}.
inline CorrectionOutcome one_correction_step(const Discretization& disc, const MgContext& ctx, std::size_t level,
                                             const EigenPair& state, const FmgParams& params,
                                             WorkReport* work = nullptr) {
    if (state.space.augmented || state.space.level != int(level))
        throw InvalidArgument("one_correction_step: state does not live on level " + std::to_string(level));
    if (level >= ctx.n_levels()) throw InvalidArgument("one_correction_step: level outside the multigrid context");
    const auto& space = disc.space(level);
    const auto& M = disc.mass(level);
    require_same_size(state.u.size(), space.n_dofs(), "one_correction_step");

    FeFunction u{disc.mesh(level).level_index, state.u};
    Vector rhs(space.n_dofs());
    M.multiply(state.u, rhs, work);
    scale(state.lambda, rhs);
    Vector f = assemble_nonlinear_load(space, disc.spec(), u, work);
    axpy(-1.0, f, rhs);

    Vector u_tilde = mg_solve(ctx, level, rhs, state.u, params.m);

    AugmentedSpace aug =
        build_augmented_space(disc, params.coarse_level, level, FeFunction{u.level_index, std::move(u_tilde)}, work);
    Vector c0 = aug.u_tilde_coefficients();
    ScfResult scf = scf_solve(aug, params.scf_augmented, c0, work);

    CorrectionOutcome out;
    out.varpi = scf.iterations;
    out.converged = scf.converged;
    out.degenerate = aug.degenerate();
    out.pair.lambda = scf.pair.lambda;
    out.pair.u = aug.expand(scf.pair.u, work);
    double nrm = std::sqrt(M.quadratic_form(out.pair.u, work));
    scale(1.0 / nrm, out.pair.u);
    apply_sign_convention(out.pair.u);
    out.pair.space = {int(level), false};
    return out;
}

/// Direct nonlinear solve on one level (the reference/diagnostic oracle).
inline ScfResult solve_level(const Discretization& disc, std::size_t level, const ScfSettings& settings,
                             std::span<const double> initial = {}, WorkReport* work = nullptr,
                             std::size_t direct_dof_limit = 20000) {
    LevelSpace space(disc, level, direct_dof_limit);
    return scf_solve(space, settings, initial, work);
}

inline ScfSettings diagnostic_settings(double tol) {
    ScfSettings s;
    s.tol_lambda = tol;
    s.tol_u = std::max(tol * 100.0, 1e-10);
    s.max_iter = 500;
    s.eigen.tolerance = std::max(tol, 1e-11);
    return s;
}

/// Full multigrid: nonlinear solve on V_{h_1}, then for each finer level
/// prolongate and apply p correction steps.
inline FmgResult full_multigrid(const Discretization& disc, const FmgParams& params) {
    params.validate();
    const std::size_t n = disc.n_levels();
    if (params.first_level >= n) throw InvalidArgument("full_multigrid: first level beyond the hierarchy");
    using clock = std::chrono::steady_clock;
    FmgResult out;
    const ScfSettings diag = diagnostic_settings(params.diagnostic_tolerance);

    auto diagnose = [&](LevelTrace& t, std::size_t k, std::span<const double> guess) {
        if (!params.record_diagnostics) return;
        ScfResult d = solve_level(disc, k, diag, guess, nullptr, params.direct_dof_limit);
        t.direct = std::move(d.pair);
    };

    // Level V_{h_1}.
    {
        const std::size_t k = params.first_level;
        LevelTrace t;
        t.level_index = k;
        t.n_dofs = disc.n_dofs(k);
        t.n_elements = disc.mesh(k).n_cells();
        auto start = clock::now();
        disc.charge_level_setup(k, &t.work);
        ScfResult r;
        try {
            r = solve_level(disc, k, params.scf, {}, &t.work, params.direct_dof_limit);
        } catch (const SolverError& e) {
            throw SolverError(std::string(e.what()) + " (level " + std::to_string(k) + ")", e.residual(), int(k));
        }
        t.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
        t.scf_iterations = r.iterations;
        t.scf_converged = r.converged;
        if (!r.converged)
            throw SolverError("full_multigrid: SCF on the initial level did not converge", r.delta_lambda, int(k));
        out.pair = std::move(r.pair);
        t.lambda = out.pair.lambda;
        diagnose(t, k, out.pair.u);
        out.level_pairs.push_back(out.pair);
        out.work += t.work;
        out.traces.push_back(std::move(t));
    }
    if (params.first_level + 1 == n) return out;

    MgContext ctx = disc.mg_context(n - 1, params.mg, nullptr);
    for (std::size_t k = params.first_level + 1; k < n; ++k) {
        LevelTrace t;
        t.level_index = k;
        t.n_dofs = disc.n_dofs(k);
        t.n_elements = disc.mesh(k).n_cells();
        auto start = clock::now();
        disc.charge_level_setup(k, &t.work);
        ctx.set_work(&t.work);
        EigenPair state;
        state.lambda = out.pair.lambda;
        state.u = disc.prolongate(out.pair.u, k - 1, k, &t.work);
        state.space = {int(k), false};
        double elapsed = std::chrono::duration<double>(clock::now() - start).count();
        if (params.record_diagnostics) diagnose(t, k, state.u);
        start = clock::now();

        for (int l = 0; l < params.p; ++l) {
            CorrectionRecord rec;
            rec.lambda_before = state.lambda;
            WorkReport before = t.work;
            if (t.direct) {
                rec.err_a_before = signed_distance(state.u, t.direct->u, disc.stiffness(k));
                rec.err_b_before = signed_distance(state.u, t.direct->u, disc.mass(k));
            }
            auto corr_start = clock::now();
            CorrectionOutcome c;
            try {
                c = one_correction_step(disc, ctx, k, state, params, &t.work);
            } catch (const SolverError& e) {
                throw SolverError(std::string(e.what()) + " (level " + std::to_string(k) + ")", e.residual(),
                                  int(k));
            }
            elapsed += std::chrono::duration<double>(clock::now() - corr_start).count();
            rec.lambda_after = c.pair.lambda;
            rec.varpi = c.varpi;
            rec.scf_converged = c.converged;
            rec.degenerate = c.degenerate;
            rec.work_units = double((t.work - before).work_units());
            if (t.direct) {
                rec.err_a_after = signed_distance(c.pair.u, t.direct->u, disc.stiffness(k));
                rec.err_b_after = signed_distance(c.pair.u, t.direct->u, disc.mass(k));
                rec.gamma_obs = rec.err_a_before > 0.0 ? rec.err_a_after / rec.err_a_before : 0.0;
            }
            state = std::move(c.pair);
            t.records.push_back(rec);
        }
        ctx.set_work(nullptr);
        t.wall_seconds = elapsed;
        t.lambda = state.lambda;
        out.pair = std::move(state);
        out.level_pairs.push_back(out.pair);
        out.work += t.work;
        out.traces.push_back(std::move(t));
    }
    return out;
}

} // namespace fmgeig
