#include <gtest/gtest.h>

#include <cmath>

#include "fmgeig/fmg.hpp"

using namespace fmgeig;

namespace {

ScfSettings tight() { return diagnostic_settings(1e-12); }

EigenPair direct_pair(const Discretization& d, std::size_t k, std::span<const double> guess = {}) {
    ScfResult r = solve_level(d, k, tight(), guess);
    EXPECT_TRUE(r.converged);
    return r.pair;
}

// a-norm error of a level-k vector against a pair on a finer level, by nested prolongation.
double a_error(const Discretization& d, std::size_t k, std::span<const double> u, const EigenPair& ref) {
    Vector up = d.prolongate(u, k, std::size_t(ref.space.level));
    return signed_distance(up, ref.u, d.stiffness(std::size_t(ref.space.level)));
}

double gamma_at(const Discretization& d, std::size_t k, int m) {
    FmgParams p;
    p.m = m;
    MgContext ctx = d.mg_context(k, p.mg);
    EigenPair coarse = direct_pair(d, k - 1);
    EigenPair exact = direct_pair(d, k, d.prolongate(coarse.u, k - 1, k));
    EigenPair state{coarse.lambda, d.prolongate(coarse.u, k - 1, k), {int(k), false}};
    double before = signed_distance(state.u, exact.u, d.stiffness(k));
    CorrectionOutcome c = one_correction_step(d, ctx, k, state, p);
    return signed_distance(c.pair.u, exact.u, d.stiffness(k)) / before;
}

} // namespace

TEST(FmgParams, Validation) {
    FmgParams p;
    p.m = 0;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = FmgParams{};
    p.p = 0;
    EXPECT_THROW(p.validate(), InvalidArgument);
    p = FmgParams{};
    p.coarse_level = 2;
    p.first_level = 1;
    EXPECT_THROW(p.validate(), InvalidArgument);
    EXPECT_EQ(FmgParams{}.m, 1);
    EXPECT_EQ(FmgParams{}.p, 1);
    EXPECT_EQ(FmgParams{}.mg.pre_steps, 3);
    EXPECT_EQ(FmgParams{}.mg.post_steps, 3);
}

TEST(OneCorrectionStep, DirectSolutionIsFixedPoint) {
    Discretization d(build_hierarchy(2, 4, 3), ProblemSpec::gpe(2, 1.0));
    const std::size_t k = 2;
    EigenPair exact = direct_pair(d, k);
    FmgParams p;
    MgContext ctx = d.mg_context(k, p.mg);
    CorrectionOutcome c = one_correction_step(d, ctx, k, exact, p);
    EXPECT_LT(signed_distance(c.pair.u, exact.u, d.stiffness(k)), 1e-8);
    EXPECT_NEAR(c.pair.lambda, exact.lambda, 1e-9 * exact.lambda);
    EXPECT_NEAR(d.mass(k).quadratic_form(c.pair.u), 1.0, 1e-12);
}

TEST(OneCorrectionStep, LinearContractionAt32) {
    Discretization d(build_hierarchy(2, 4, 4), ProblemSpec::laplace(2)); // 4 .. 32
    double g = gamma_at(d, 3, 1);
    RecordProperty("gamma_obs", std::to_string(g));
    EXPECT_LT(g, 1.0);
}

TEST(OneCorrectionStep, OutputNormalizedWithSignConvention) {
    Discretization d(build_hierarchy(2, 4, 3), ProblemSpec::gpe(2, 1.0));
    EigenPair coarse = direct_pair(d, 1);
    EigenPair state{coarse.lambda, d.prolongate(coarse.u, 1, 2), {2, false}};
    FmgParams p;
    MgContext ctx = d.mg_context(2, p.mg);
    CorrectionOutcome c = one_correction_step(d, ctx, 2, state, p);
    EXPECT_NEAR(d.mass(2).quadratic_form(c.pair.u), 1.0, 1e-12);
    EXPECT_EQ(c.pair.space.level, 2);
    EXPECT_FALSE(c.pair.space.augmented);
    double vmax = 0.0, s = 0.0;
    for (double v : c.pair.u)
        if (std::abs(v) > vmax) {
            vmax = std::abs(v);
            s = v;
        }
    EXPECT_GT(s, 0.0);
    EXPECT_LE(c.varpi, 3);
}

TEST(OneCorrectionStep, RejectsStateOnWrongLevel) {
    Discretization d(build_hierarchy(2, 4, 3), ProblemSpec::gpe(2, 1.0));
    EigenPair coarse = direct_pair(d, 1);
    FmgParams p;
    MgContext ctx = d.mg_context(2, p.mg);
    EXPECT_THROW(one_correction_step(d, ctx, 2, coarse, p), InvalidArgument);
}

TEST(OneCorrectionStep, MoreCyclesContractMore) {
    for (double zeta : {0.0, 1.0}) {
        Discretization d(build_hierarchy(2, 4, 4), ProblemSpec::gpe(2, zeta));
        double g1 = gamma_at(d, 3, 1), g3 = gamma_at(d, 3, 3);
        EXPECT_LT(g1, 1.0) << zeta;
        EXPECT_LT(g3, g1) << zeta;
    }
}

TEST(FullMultigrid, SingleLevelEqualsScf) {
    Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, 1.0));
    FmgResult r = full_multigrid(d, FmgParams{});
    ScfResult s = solve_level(d, 0, ScfSettings{});
    ASSERT_EQ(r.traces.size(), 1u);
    EXPECT_EQ(r.pair.lambda, s.pair.lambda);
    ASSERT_EQ(r.pair.u.size(), s.pair.u.size());
    for (std::size_t i = 0; i < s.pair.u.size(); ++i) EXPECT_EQ(r.pair.u[i], s.pair.u[i]);
    EXPECT_TRUE(r.traces[0].records.empty());
}

TEST(FullMultigrid, TracesAndRecordCounts) {
    Discretization d(build_hierarchy(2, 4, 4), ProblemSpec::gpe(2, 1.0));
    FmgParams p;
    p.p = 2;
    FmgResult r = full_multigrid(d, p);
    ASSERT_EQ(r.traces.size(), 4u);
    ASSERT_EQ(r.level_pairs.size(), 4u);
    for (std::size_t k = 1; k < 4; ++k) {
        EXPECT_EQ(r.traces[k].records.size(), 2u);
        EXPECT_EQ(r.traces[k].level_index, k);
        EXPECT_EQ(r.traces[k].n_dofs, d.n_dofs(k));
        EXPECT_LE(r.traces[k].varpi_max(), 3);
        EXPECT_GT(r.traces[k].work.work_units(), 0u);
        EXPECT_TRUE(std::isnan(r.traces[k].gamma_max()));
        EXPECT_NEAR(d.mass(k).quadratic_form(r.level_pairs[k].u), 1.0, 1e-12);
    }
    EXPECT_EQ(r.pair.lambda, r.level_pairs.back().lambda);
}

TEST(FullMultigrid, GpeAgainstDirectSolve) {
    // 4 levels from 8x8; the direct solve one level finer is the surrogate exact solution.
    Discretization d(build_hierarchy(2, 8, 5), ProblemSpec::gpe(2, 1.0));
    const std::size_t finest = 3;
    FmgParams p;
    Discretization run(build_hierarchy(2, 8, 4), ProblemSpec::gpe(2, 1.0));
    FmgResult r = full_multigrid(run, p);
    EigenPair direct = direct_pair(d, finest, r.pair.u);
    EigenPair ref = direct_pair(d, 4, d.prolongate(direct.u, finest, 4));
    double fmg_lambda_err = std::abs(r.pair.lambda - ref.lambda);
    double direct_lambda_err = std::abs(direct.lambda - ref.lambda);
    EXPECT_LE(fmg_lambda_err, 10.0 * direct_lambda_err);
    EXPECT_LE(a_error(d, finest, r.pair.u, ref), 2.0 * a_error(d, finest, direct.u, ref));
}

TEST(FullMultigrid, LinearLevelMonotonicity) {
    Discretization d(build_hierarchy(2, 4, 5), ProblemSpec::laplace(2));
    Discretization run(build_hierarchy(2, 4, 4), ProblemSpec::laplace(2));
    FmgResult r = full_multigrid(run, FmgParams{});
    EigenPair ref = direct_pair(d, 4);
    double prev = 1e300;
    for (std::size_t k = 0; k < r.level_pairs.size(); ++k) {
        double e = a_error(d, k, r.level_pairs[k].u, ref);
        EXPECT_LT(e, prev) << "level " << k;
        prev = e;
    }
}

TEST(FullMultigrid, DiagnosticsRecordGammaBelowOne) {
    for (double zeta : {0.0, 1.0}) {
        Discretization d(build_hierarchy(2, 4, 4), ProblemSpec::gpe(2, zeta));
        FmgParams p;
        p.record_diagnostics = true;
        FmgResult r = full_multigrid(d, p);
        for (std::size_t k = 1; k < r.traces.size(); ++k) {
            const LevelTrace& t = r.traces[k];
            ASSERT_TRUE(t.direct.has_value());
            ASSERT_EQ(t.records.size(), 1u);
            const CorrectionRecord& c = t.records[0];
            EXPECT_LT(c.gamma_obs, 1.0) << "zeta " << zeta << " level " << k;
            EXPECT_LT(c.err_a_after, c.err_a_before);
            EXPECT_NEAR(c.gamma_obs, c.err_a_after / c.err_a_before, 1e-15);
        }
    }
}

TEST(FullMultigrid, TotalWorkBoundedByGeometricSum) {
    Discretization d(build_hierarchy(2, 8, 5), ProblemSpec::gpe(2, 1.0));
    FmgResult r = full_multigrid(d, FmgParams{});
    double total = double(r.work.work_units());
    double finest = double(r.traces.back().work.work_units());
    RecordProperty("total_over_finest", std::to_string(total / finest));
    EXPECT_LE(total, 2.2 * finest);
    for (std::size_t k = 1; k < r.traces.size(); ++k)
        EXPECT_GT(r.traces[k].work.work_units(), r.traces[k - 1].work.work_units());
}

TEST(FullMultigrid, CoarseSpaceBelowFirstLevel) {
    // V_H two levels below V_{h_1}.
    Discretization d(build_hierarchy(2, 2, 5), ProblemSpec::gpe(2, 1.0));
    FmgParams p;
    p.coarse_level = 0;
    p.first_level = 2;
    FmgResult r = full_multigrid(d, p);
    ASSERT_EQ(r.traces.size(), 3u);
    EXPECT_EQ(r.traces.front().level_index, 2u);
    EigenPair direct = direct_pair(d, 4, r.pair.u);
    EXPECT_NEAR(r.pair.lambda, direct.lambda, 0.01 * direct.lambda);
}

TEST(FullMultigrid, FailureNamesLevel) {
    Discretization d(build_hierarchy(2, 8, 2), ProblemSpec::gpe(2, 100.0));
    FmgParams p;
    p.scf.max_iter = 1;
    try {
        full_multigrid(d, p);
        FAIL() << "expected SolverError";
    } catch (const SolverError& e) {
        EXPECT_EQ(e.level(), 0);
    }
    p = FmgParams{};
    p.first_level = 5;
    EXPECT_THROW(full_multigrid(d, p), InvalidArgument);
}

TEST(FullMultigrid, StrongNonlinearityVarpiCap) {
    Discretization d(build_hierarchy(2, 8, 3), ProblemSpec::gpe(2, 100.0));
    FmgResult r = full_multigrid(d, FmgParams{});
    EXPECT_TRUE(r.traces[0].scf_converged);
    for (const auto& t : r.traces) EXPECT_LE(t.varpi_max(), 3);
    EXPECT_LT(r.level_pairs[2].lambda, r.level_pairs[1].lambda);
}
