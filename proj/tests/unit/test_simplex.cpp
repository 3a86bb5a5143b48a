#include <random>

#include <gtest/gtest.h>

#include "support/ipm_oracle.hpp"
#include "synthbase/simplex_lp.hpp"

using namespace synthbase;

namespace {

lp::StandardFormLp dense_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                            const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    lp::StandardFormLp p;
    p.A = A.sparseView();
    p.rhs = b;
    p.cost = c;
    p.lower = lo;
    p.upper = hi;
    return p;
}

// Random feasible LP with boxed variables (always bounded) plus a few slack
// columns; feasibility comes from a known interior point.
lp::StandardFormLp random_lp(std::mt19937_64& rng, int m, int n, double density) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> p01(0.0, 1.0);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            if (p01(rng) < density) A(i, j) = u(rng);
        }
        A(i, (i * 7) % n) += 1.0;
    }
    Eigen::VectorXd lo(n), hi(n), x0(n), c(n);
    for (int j = 0; j < n; ++j) {
        lo(j) = -1.0 - p01(rng);
        hi(j) = 1.0 + p01(rng);
        if (j % 11 == 3) hi(j) = lo(j);  // a few fixed columns
        x0(j) = lo(j) + p01(rng) * (hi(j) - lo(j));
        c(j) = u(rng);
    }
    return dense_lp(A, A * x0, c, lo, hi);
}

}  // namespace

TEST(Simplex, TextbookTwoVariableMaximum) {
    // max 3x + 2y, x + y <= 4, x <= 2  ->  min -3x - 2y with slacks.
    Eigen::MatrixXd A(2, 4);
    A << 1, 1, 1, 0,
         1, 0, 0, 1;
    Eigen::VectorXd b(2), c(4), lo = Eigen::VectorXd::Zero(4), hi = Eigen::VectorXd::Constant(4, lp::kInf);
    b << 4, 2;
    c << -3, -2, 0, 0;
    const auto sol = lp::solve_simplex(dense_lp(A, b, c, lo, hi));
    EXPECT_NEAR(sol.objective, -10.0, 1e-12);
    EXPECT_NEAR(sol.x(0), 2.0, 1e-12);
    EXPECT_NEAR(sol.x(1), 2.0, 1e-12);
    EXPECT_LE(sol.dual_infeasibility, 1e-7);
}

TEST(Simplex, DetectsUnbounded) {
    Eigen::MatrixXd A(1, 2);
    A << 1, -1;
    Eigen::VectorXd b(1), c(2), lo = Eigen::VectorXd::Zero(2), hi = Eigen::VectorXd::Constant(2, lp::kInf);
    b << 1;
    c << -1, 0;
    EXPECT_THROW(lp::solve_simplex(dense_lp(A, b, c, lo, hi)), UnboundedError);
}

TEST(Simplex, DetectsInfeasible) {
    Eigen::MatrixXd A(2, 2);
    A << 1, 1,
         1, 1;
    Eigen::VectorXd b(2), c(2), lo = Eigen::VectorXd::Zero(2), hi = Eigen::VectorXd::Constant(2, lp::kInf);
    b << 1, 2;
    c << 1, 1;
    EXPECT_THROW(lp::solve_simplex(dense_lp(A, b, c, lo, hi)), InfeasibleError);
}

TEST(Simplex, CrossedBoundsAreInfeasible) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Ones(1, 1);
    Eigen::VectorXd b = Eigen::VectorXd::Ones(1), c = Eigen::VectorXd::Ones(1);
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(1, 2.0), hi = Eigen::VectorXd::Constant(1, 1.0);
    EXPECT_THROW(lp::solve_simplex(dense_lp(A, b, c, lo, hi)), InfeasibleError);
}

TEST(Simplex, FreeVariablesAndUpperBoundsOnly) {
    // min x - y, x + y = 1, x free, y <= 3  ->  x = -2, y = 3, obj -5
    Eigen::MatrixXd A(1, 2);
    A << 1, 1;
    Eigen::VectorXd b(1), c(2), lo(2), hi(2);
    b << 1;
    c << 1, -1;
    lo << -lp::kInf, -lp::kInf;
    hi << lp::kInf, 3;
    const auto sol = lp::solve_simplex(dense_lp(A, b, c, lo, hi));
    EXPECT_NEAR(sol.objective, -5.0, 1e-12);
    EXPECT_NEAR(sol.x(1), 3.0, 1e-12);
}

TEST(Simplex, IterationCapRaisesCycleGuard) {
    std::mt19937_64 rng(5);
    auto p = random_lp(rng, 20, 40, 0.3);
    lp::SimplexOptions opt;
    opt.max_iterations = 2;
    EXPECT_THROW(lp::solve_simplex(p, opt), CycleGuardError);
}

TEST(Simplex, DegenerateProblemTerminates) {
    // Many redundant copies of the same constraint through a vertex.
    const int m = 12;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, 2 + m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i) {
        A(i, 0) = 1.0 + 0.01 * i;
        A(i, 1) = 1.0;
        A(i, 2 + i) = 1.0;  // slack
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(2 + m);
    c(0) = -1;
    c(1) = -1;
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(2 + m), hi = Eigen::VectorXd::Constant(2 + m, lp::kInf);
    const auto sol = lp::solve_simplex(dense_lp(A, b, c, lo, hi));
    EXPECT_NEAR(sol.objective, 0.0, 1e-12);
}

TEST(Simplex, MatchesInteriorPointOnRandomInstances) {
    std::mt19937_64 rng(20240611);
    for (int trial = 0; trial < 60; ++trial) {
        const int m = 5 + trial % 20;
        const int n = m + 5 + trial % 17;
        const auto p = random_lp(rng, m, n, 0.35);
        const auto s = lp::solve_simplex(p);
        const auto r = oracle::solve_ipm(p.A, p.rhs, p.cost, p.lower, p.upper);
        EXPECT_NEAR(s.objective, r.objective, 1e-6 * (1.0 + std::abs(r.objective))) << "trial " << trial;
        EXPECT_LE(lp::primal_residual(p, s.x), 1e-8);
        EXPECT_LE(s.dual_infeasibility, 1e-7);
    }
}

TEST(Simplex, BasisHintIsOptional) {
    std::mt19937_64 rng(9);
    auto p = random_lp(rng, 8, 20, 0.4);
    const auto a = lp::solve_simplex(p);
    p.basis_hint.assign(8, -1);
    for (int i = 0; i < 8; ++i) p.basis_hint[i] = (i * 7) % 20;
    const auto b = lp::solve_simplex(p);
    EXPECT_NEAR(a.objective, b.objective, 1e-9 * (1.0 + std::abs(a.objective)));
}
