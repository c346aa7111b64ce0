#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fmgeig/discretization.hpp"
#include "fmgeig/eigsolve.hpp"
#include "fmgeig/fmg.hpp"
#include "oracles.hpp"

using namespace fmgeig;

namespace {

Vector random_vector(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vector v(n);
    for (double& x : v) x = u(rng);
    return v;
}

Eigen::VectorXd to_eigen(std::span<const double> v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

double max_abs_diff(std::span<const double> a, const Eigen::VectorXd& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b(Eigen::Index(i))));
    return m;
}

void expect_pair_invariants(const auto& M, std::span<const double> u) {
    EXPECT_NEAR(M.quadratic_form(u), 1.0, 1e-12);
    double vmax = 0.0, signed_max = 0.0;
    for (double v : u)
        if (std::abs(v) > vmax) {
            vmax = std::abs(v);
            signed_max = v;
        }
    EXPECT_GT(signed_max, 0.0);
}

// Damped fixed-point oracle: w <- normalize(w + alpha (x(w) - w)) with x(w) the dense
// generalized ground state of (K + zeta M_{w^2}, M), run until the update stalls.
oracle::Pair damped_fixed_point(const Discretization& d, std::size_t level, double alpha) {
    const Eigen::MatrixXd K = oracle::to_eigen(d.linear_part(level));
    const Eigen::MatrixXd M = oracle::to_eigen(d.mass(level));
    const FeSpace& V = d.space(level);
    auto nonlinear = [&](const Eigen::VectorXd& w) {
        FeFunction f{d.mesh(level).level_index, Vector(w.data(), w.data() + w.size())};
        return oracle::to_eigen(assemble_nonlinear(V, d.spec(), f));
    };
    Eigen::VectorXd w = oracle::smallest_generalized(K, M).x;
    for (int it = 0; it < 5000; ++it) {
        oracle::Pair p = oracle::smallest_generalized(K + nonlinear(w), M);
        if (p.x.dot(M * w) < 0) p.x = -p.x;
        Eigen::VectorXd u = w + alpha * (p.x - w);
        u /= std::sqrt(u.dot(M * u));
        double step = std::sqrt((u - w).dot(M * (u - w)));
        w = u;
        if (step < 1e-14) break;
    }
    Eigen::MatrixXd A = K + nonlinear(w);
    return {w.dot(A * w), w};
}

} // namespace

TEST(SignConvention, LargestMagnitudePositive) {
    Vector u{0.1, -3.0, 2.0};
    apply_sign_convention(u);
    EXPECT_EQ(u[1], 3.0);
    EXPECT_EQ(u[0], -0.1);
    Vector v{0.5, -0.2};
    apply_sign_convention(v);
    EXPECT_EQ(v[0], 0.5);
}

TEST(SmallestEigpair, DiagonalPencil) {
    DenseMatrix A(3, 3), M(3, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        A(i, i) = double(i + 1);
        M(i, i) = 1.0;
    }
    auto r = smallest_eigpair(A, M);
    EXPECT_NEAR(r.lambda, 1.0, 1e-12);
    EXPECT_NEAR(r.x[0], 1.0, 1e-10);
    EXPECT_NEAR(r.x[1], 0.0, 1e-10);
    EXPECT_NEAR(r.x[2], 0.0, 1e-10);
}

TEST(SmallestEigpair, IdentityPencil) {
    auto [Ae, Me] = oracle::random_pencil(8, 3);
    DenseMatrix M = oracle::from_eigen(Me);
    auto r = smallest_eigpair(M, M);
    EXPECT_NEAR(r.lambda, 1.0, 1e-12);
}

TEST(SmallestEigpair, RandomPencil20MatchesDenseOracle) {
    auto [Ae, Me] = oracle::random_pencil(20, 20);
    auto ref = oracle::smallest_generalized(Ae, Me);
    auto r = smallest_eigpair(oracle::from_eigen(Ae), oracle::from_eigen(Me));
    EXPECT_NEAR(r.lambda, ref.lambda, 1e-8);
    EXPECT_LT(max_abs_diff(r.x, ref.x), 1e-8);
}

TEST(SmallestEigpair, FiftySeededPencilsMatchDenseOracle) {
    for (int k = 0; k < 50; ++k) {
        const int n = 1 + k; // sizes 1..50
        auto [Ae, Me] = oracle::random_pencil(n, 1000 + std::uint64_t(k));
        auto ref = oracle::smallest_generalized(Ae, Me);
        DenseMatrix A = oracle::from_eigen(Ae), M = oracle::from_eigen(Me);
        auto r = smallest_eigpair(A, M);
        EXPECT_NEAR(r.lambda, ref.lambda, 1e-8 * std::max(1.0, std::abs(ref.lambda))) << "n = " << n;
        EXPECT_LT(max_abs_diff(r.x, ref.x), 1e-8) << "n = " << n;
        expect_pair_invariants(M, r.x);
        Vector Ax = A * r.x, Mx = M * r.x;
        axpy(-r.lambda, Mx, Ax);
        EXPECT_LE(norm2(Ax), 1e-10 * norm2(A * r.x) + 1e-14) << "n = " << n;
    }
}

TEST(SmallestEigpair, SparseOverloadMatchesOracle) {
    Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, 0.0));
    auto ref = oracle::smallest_generalized(oracle::to_eigen(d.linear_part(0)), oracle::to_eigen(d.mass(0)));
    auto r = smallest_eigpair(d.linear_part(0), d.mass(0));
    EXPECT_NEAR(r.lambda, ref.lambda, 1e-10 * ref.lambda);
    EXPECT_LT(max_abs_diff(r.x, ref.x), 1e-8);
}

TEST(SmallestEigpair, IterationCapThrowsWithResidual) {
    auto [Ae, Me] = oracle::random_pencil(30, 77);
    InverseIterationOptions o;
    o.max_iter = 1;
    o.tolerance = 1e-15;
    o.max_refactorizations = 0;
    try {
        smallest_eigpair(oracle::from_eigen(Ae), oracle::from_eigen(Me), {}, o);
        FAIL() << "expected SolverError";
    } catch (const SolverError& e) {
        EXPECT_GT(e.residual(), 0.0);
    }
}

TEST(SmallestEigpair, DimensionMismatchThrows) {
    DenseMatrix A(2, 2), M(3, 3);
    EXPECT_THROW(smallest_eigpair(A, M), InvalidArgument);
}

TEST(Lobpcg, MatchesDirectSolveOnPoissonLevel) {
    Discretization d(build_hierarchy(2, 4, 4), ProblemSpec::gpe(2, 0.0));
    MgSettings s;
    s.smoother = Smoother::symmetric_gauss_seidel;
    s.pre_steps = s.post_steps = 2;
    MgContext ctx = d.mg_context(3, s);
    auto prec = [&](std::span<const double> r) { return v_cycle(ctx, 3, r, Vector(r.size(), 0.0)); };
    auto r = lobpcg_smallest(d.linear_part(3), d.mass(3), prec);
    auto ref = smallest_eigpair(d.linear_part(3), d.mass(3));
    EXPECT_NEAR(r.lambda, ref.lambda, 1e-9 * ref.lambda);
    EXPECT_LT(signed_distance(r.x, ref.x, d.mass(3)), 1e-6);
    expect_pair_invariants(d.mass(3), r.x);
}

TEST(ScfSolve, LinearLaplaceOneIterationAndConvergesTo2PiSquared) {
    const double two_pi2 = 2.0 * std::numbers::pi * std::numbers::pi;
    Discretization d(build_hierarchy(2, 4, 5), ProblemSpec::laplace(2));
    double prev = 1e300;
    for (std::size_t k = 0; k < d.n_levels(); ++k) {
        ScfResult r = solve_level(d, k, ScfSettings{});
        EXPECT_EQ(r.iterations, 1);
        EXPECT_TRUE(r.converged);
        EXPECT_GT(r.pair.lambda, two_pi2);
        EXPECT_LT(r.pair.lambda, prev);
        prev = r.pair.lambda;
        expect_pair_invariants(d.mass(k), r.pair.u);
        if (d.n_dofs(k) <= 1000) {
            auto ref = oracle::smallest_generalized(oracle::to_eigen(d.stiffness(k)), oracle::to_eigen(d.mass(k)));
            EXPECT_NEAR(r.pair.lambda, ref.lambda, 1e-10 * ref.lambda);
        }
    }
    EXPECT_NEAR(prev, two_pi2, 0.01 * two_pi2);
}

TEST(ScfSolve, LinearCaseIsOneSolveFromAnyStart) {
    Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, 0.0));
    LevelSpace V(d, 0);
    ScfResult a = scf_solve(V, ScfSettings{});
    ScfResult b = scf_solve(V, ScfSettings{}, random_vector(V.size(), 3));
    EXPECT_EQ(a.iterations, 1);
    EXPECT_EQ(b.iterations, 1);
    EXPECT_NEAR(a.pair.lambda, b.pair.lambda, 1e-10 * a.pair.lambda);
}

TEST(ScfSolve, GpeMatchesDampedFixedPointOracle) {
    Discretization d(build_hierarchy(2, 16, 1), ProblemSpec::gpe(2, 1.0));
    oracle::Pair ref = damped_fixed_point(d, 0, 0.3);
    ScfSettings s;
    s.tol_lambda = 1e-12;
    s.tol_u = 1e-10;
    ScfResult r = solve_level(d, 0, s);
    ASSERT_TRUE(r.converged);
    EXPECT_LE(std::abs(r.pair.lambda - ref.lambda), 1e-8);
    EXPECT_LT(max_abs_diff(r.pair.u, ref.x), 1e-7);
    expect_pair_invariants(d.mass(0), r.pair.u);
}

TEST(ScfSolve, PlainDampedIterationAgreesWithMixing) {
    Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, 1.0));
    ScfSettings plain;
    plain.mixing_depth = 0;
    plain.tol_lambda = 1e-12;
    ScfSettings mixed = plain;
    mixed.mixing_depth = 4;
    ScfResult a = solve_level(d, 0, plain), b = solve_level(d, 0, mixed);
    ASSERT_TRUE(a.converged);
    ASSERT_TRUE(b.converged);
    EXPECT_NEAR(a.pair.lambda, b.pair.lambda, 1e-9 * a.pair.lambda);
    EXPECT_LE(b.iterations, a.iterations);
}

TEST(ScfSolve, ResidualAtConvergence) {
    for (double zeta : {1.0, 100.0}) {
        Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, zeta));
        ScfSettings s;
        ScfResult r = solve_level(d, 0, s);
        ASSERT_TRUE(r.converged) << zeta;
        Vector res = apply_nonlinear_residual(d.space(0), d.spec(), FeFunction{0, r.pair.u}, r.pair.lambda);
        EXPECT_LE(norm_inf(res), 10.0 * s.tol_lambda * std::max(1.0, r.pair.lambda)) << "zeta = " << zeta;
    }
}

TEST(ScfSolve, StrongNonlinearityConverges) {
    Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, 100.0));
    ScfResult r = solve_level(d, 0, ScfSettings{});
    EXPECT_TRUE(r.converged);
    expect_pair_invariants(d.mass(0), r.pair.u);
    // Rayleigh value with the fully nonlinear form.
    FeFunction u{0, r.pair.u};
    double a = d.stiffness(0).quadratic_form(r.pair.u) + d.potential(0).quadratic_form(r.pair.u) +
               assemble_nonlinear(d.space(0), d.spec(), u).quadratic_form(r.pair.u);
    EXPECT_NEAR(r.pair.lambda, a, 1e-12 * a);
}

TEST(ScfSolve, IterationCapReturnsUnconverged) {
    Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, 100.0));
    ScfSettings s;
    s.max_iter = 2;
    ScfResult r;
    EXPECT_NO_THROW(r = solve_level(d, 0, s));
    EXPECT_FALSE(r.converged);
    EXPECT_EQ(r.iterations, 2);
}

TEST(ScfSolve, DivergenceUnderFixedDampingThrows) {
    // Undamped-style oscillation with no fallback: lambda keeps rising.
    Discretization d(build_hierarchy(2, 8, 1), ProblemSpec::gpe(2, 2000.0));
    ScfSettings s;
    s.mixing_depth = 0;
    s.damping = 0.9;
    s.damping_fallback = false;
    s.max_iter = 200;
    EXPECT_THROW(solve_level(d, 0, s), SolverError);
}

TEST(ScfSettings, Validation) {
    ScfSettings s;
    s.tol_lambda = 0.0;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = ScfSettings{};
    s.damping = 1.5;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = ScfSettings{};
    s.max_iter = 0;
    EXPECT_THROW(s.validate(), InvalidArgument);
    EXPECT_EQ(ScfSettings::augmented().max_iter, 3);
    EXPECT_EQ(ScfSettings{}.max_iter, 100);
}

class AugmentedSpaceTest : public ::testing::Test {
protected:
    Discretization d{build_hierarchy(2, 4, 3), ProblemSpec::gpe(2, 1.0)};
};

TEST_F(AugmentedSpaceTest, ReducedMatricesEqualExplicitGalerkin) {
    const std::size_t fine = 2;
    Vector ut = random_vector(d.n_dofs(fine), 5);
    AugmentedSpace S = build_augmented_space(d, 0, fine, FeFunction{d.mesh(fine).level_index, ut});
    ASSERT_FALSE(S.degenerate());
    ASSERT_EQ(S.size(), d.n_dofs(0) + 1);
    // Explicit basis map column by column.
    Eigen::MatrixXd B(d.n_dofs(fine), S.size());
    for (std::size_t j = 0; j < S.size(); ++j) {
        Vector e(S.size(), 0.0);
        e[j] = 1.0;
        B.col(Eigen::Index(j)) = to_eigen(S.expand(e));
    }
    auto check = [&](const DenseMatrix& R, const CsrMatrix& F) {
        Eigen::MatrixXd ref = B.transpose() * oracle::to_eigen(F) * B;
        Eigen::MatrixXd got = oracle::to_eigen(R);
        EXPECT_LT((got - ref).cwiseAbs().maxCoeff(), 1e-12 * ref.cwiseAbs().maxCoeff());
        EXPECT_TRUE(R.is_symmetric(0.0));
    };
    check(S.stiffness(), d.stiffness(fine));
    check(S.mass(), d.mass(fine));
    check(S.potential(), d.potential(fine));
    EXPECT_NEAR(S.mass()(S.size() - 1, S.size() - 1), 1.0, 1e-13);
}

TEST_F(AugmentedSpaceTest, QuadraticFormAgreement) {
    const std::size_t fine = 2;
    AugmentedSpace S =
        build_augmented_space(d, 1, fine, FeFunction{d.mesh(fine).level_index, random_vector(d.n_dofs(fine), 8)});
    for (std::uint64_t t = 0; t < 10; ++t) {
        Vector c = random_vector(S.size(), 50 + t);
        double direct = std::pow(a_norm(S.expand(c), d.stiffness(fine)), 2);
        EXPECT_NEAR(S.stiffness().quadratic_form(c), direct, 1e-12 * direct);
    }
}

TEST_F(AugmentedSpaceTest, ReducedMassIsSpd) {
    const std::size_t fine = 2;
    AugmentedSpace S =
        build_augmented_space(d, 0, fine, FeFunction{d.mesh(fine).level_index, random_vector(d.n_dofs(fine), 9)});
    DenseCholesky c;
    EXPECT_TRUE(c.factor(S.mass()));
}

TEST_F(AugmentedSpaceTest, CoarseBasisFunctionIsDegenerate) {
    const std::size_t fine = 2;
    Vector e(d.n_dofs(0), 0.0);
    e[2] = 1.0;
    Vector ut = d.prolongate(e, 0, fine);
    AugmentedSpace S = build_augmented_space(d, 0, fine, FeFunction{d.mesh(fine).level_index, ut});
    EXPECT_TRUE(S.degenerate());
    EXPECT_EQ(S.size(), d.n_dofs(0));
    // The reduced problem is then exactly V_H.
    Eigen::MatrixXd got = oracle::to_eigen(S.mass()), ref = oracle::to_eigen(d.mass(0));
    EXPECT_LT((got - ref).cwiseAbs().maxCoeff(), 1e-13);
    // u~ is still representable through its coarse coefficients.
    Vector c = S.u_tilde_coefficients();
    Vector back = S.expand(c);
    scale(1.0 / std::sqrt(d.mass(fine).quadratic_form(back)), back);
    EXPECT_LT(signed_distance(back, S.u_tilde(), d.mass(fine)), 1e-12);
}

TEST_F(AugmentedSpaceTest, WrongLevelOrZeroFunctionThrows) {
    EXPECT_THROW(build_augmented_space(d, 0, 2, FeFunction{1, Vector(d.n_dofs(1), 1.0)}), InvalidArgument);
    EXPECT_THROW(build_augmented_space(d, 0, 2, FeFunction{2, Vector(d.n_dofs(2), 0.0)}), InvalidArgument);
    EXPECT_THROW(build_augmented_space(d, 2, 1, FeFunction{1, Vector(d.n_dofs(1), 1.0)}), InvalidArgument);
}

TEST(MonotoneSpace, AugmentedEigenvalueBelowCoarse) {
    Discretization d(build_hierarchy(2, 4, 3), ProblemSpec::laplace(2));
    const std::size_t fine = 2;
    double lambda_h = solve_level(d, 0, ScfSettings{}).pair.lambda;
    for (std::uint64_t s = 0; s < 5; ++s) {
        AugmentedSpace S = build_augmented_space(
            d, 0, fine, FeFunction{d.mesh(fine).level_index, random_vector(d.n_dofs(fine), 60 + s)});
        ScfResult r = scf_solve(S, ScfSettings::augmented(), S.u_tilde_coefficients());
        EXPECT_LE(r.pair.lambda, lambda_h * (1.0 + 1e-12));
        EXPECT_EQ(r.pair.space.augmented, true);
        expect_pair_invariants(S.mass(), r.pair.u);
    }
}

TEST(MonotoneSpace, NonlinearCaseReported) {
    Discretization d(build_hierarchy(2, 4, 3), ProblemSpec::gpe(2, 1.0));
    const std::size_t fine = 2;
    ScfResult coarse = solve_level(d, 0, ScfSettings{});
    Vector ut = solve_level(d, fine, ScfSettings{}).pair.u;
    AugmentedSpace S = build_augmented_space(d, 0, fine, FeFunction{d.mesh(fine).level_index, ut});
    ScfResult r = scf_solve(S, ScfSettings::augmented(), S.u_tilde_coefficients());
    RecordProperty("lambda_H", std::to_string(coarse.pair.lambda));
    RecordProperty("lambda_H_h", std::to_string(r.pair.lambda));
    EXPECT_TRUE(std::isfinite(r.pair.lambda));
    EXPECT_LE(r.iterations, 3);
}
