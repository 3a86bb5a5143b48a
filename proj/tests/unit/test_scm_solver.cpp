#include <random>

#include <gtest/gtest.h>

#include "support/ridge_oracle.hpp"
#include "synthbase/scm_solver.hpp"

using namespace synthbase;
using scm::Constraint;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
    return m;
}

std::vector<bool> all_true(Eigen::Index D) { return std::vector<bool>(static_cast<std::size_t>(D), true); }

}  // namespace

TEST(EqualityRidge, SingleDonorIsForcedToOne) {
    std::mt19937_64 rng(3);
    const auto X = gaussian(15, 1, rng);
    const Eigen::VectorXd y = gaussian(15, 1, rng);
    const auto w = scm::fit_equality_ridge(X, y, 5.0, {true});
    EXPECT_NEAR(w.coefficients(0), 1.0, 1e-12);
}

TEST(EqualityRidge, IdentityDesignInterpolates) {
    const Eigen::MatrixXd X = Eigen::MatrixXd::Identity(2, 2);
    const Eigen::VectorXd y = Eigen::Vector2d(1.0, 0.0);
    const auto w = scm::fit_equality_ridge(X, y, 0.0, {true, true});
    EXPECT_NEAR(w.coefficients(0), 1.0, 1e-12);
    EXPECT_NEAR(w.coefficients(1), 0.0, 1e-12);
    EXPECT_LT(w.kkt_residual, 1e-12);
}

TEST(EqualityRidge, MatchesIterativeOracle) {
    std::mt19937_64 rng(11);
    const auto X = gaussian(20, 5, rng);
    const Eigen::VectorXd y = gaussian(20, 1, rng);
    const auto w = scm::fit_equality_ridge(X, y, 0.7, all_true(5));
    const auto ref = oracle::ridge_affine_pg(X, y, 0.7, all_true(5));
    for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(w.coefficients(j), ref(j), 1e-6);
}

TEST(EqualityRidge, SingularKktAtZeroLambdaThrows) {
    Eigen::MatrixXd X(4, 3);
    X << 1, 2, 1, 2, 4, 2, 3, 6, 3, 4, 8, 4;  // columns 0 and 2 identical
    const Eigen::VectorXd y = Eigen::Vector4d(1, 2, 3, 4);
    EXPECT_THROW(scm::fit_equality_ridge(X, y, 0.0, all_true(3)), SingularSystemError);
    EXPECT_THROW(scm::fit_equality_ridge(X, y, -1.0, all_true(3)), DimensionError);
    EXPECT_THROW(scm::fit_equality_ridge(X, Eigen::VectorXd::Ones(3), 1.0, all_true(3)), DimensionError);
}

TEST(EqualityRidge, StationarityAndFeasibility) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        std::mt19937_64 rng(seed);
        const auto X = gaussian(30, 6, rng);
        const Eigen::VectorXd y = gaussian(30, 1, rng);
        std::vector<bool> mask{true, true, true, true, false, false};
        const double lambda = 0.1 + static_cast<double>(seed);
        const auto w = scm::fit_equality_ridge(X, y, lambda, mask);
        Eigen::VectorXd a(6);
        a << 1, 1, 1, 1, 0, 0;
        const Eigen::MatrixXd H = X.transpose() * X + lambda * Eigen::MatrixXd::Identity(6, 6);
        const Eigen::VectorXd r = H * w.coefficients + w.multiplier * a - X.transpose() * y;
        EXPECT_LT(r.lpNorm<Eigen::Infinity>(), 1e-6);
        EXPECT_NEAR(a.dot(w.coefficients), 1.0, 1e-8);
        EXPECT_LT(w.kkt_residual, 1e-6);
    }
}

TEST(EqualityRidge, LargerLambdaShrinksUnconstrainedNorm) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(100 + seed);
        const auto X = gaussian(25, 4, rng);
        const Eigen::VectorXd y = gaussian(25, 1, rng);
        double prev = std::numeric_limits<double>::infinity();
        for (double lambda : {0.0, 0.1, 1.0, 10.0, 100.0}) {
            const double n = scm::fit_ridge(X, y, lambda).coefficients.norm();
            EXPECT_LE(n, prev + 1e-9);
            prev = n;
        }
    }
}

TEST(EqualityRidge, HugeLambdaGivesUniformWeights) {
    std::mt19937_64 rng(5);
    const auto X = gaussian(40, 7, rng);
    const Eigen::VectorXd y = gaussian(40, 1, rng);
    const auto w = scm::fit_equality_ridge(X, y, 1e6, all_true(7));
    EXPECT_LT((w.coefficients.array() - 1.0 / 7.0).abs().maxCoeff(), 1e-3);
}

TEST(EqualityRidge, PermutationEquivariance) {
    std::mt19937_64 rng(8);
    const auto X = gaussian(30, 5, rng);
    const Eigen::VectorXd y = gaussian(30, 1, rng);
    Eigen::VectorXi perm(5);
    perm << 3, 0, 4, 1, 2;
    const Eigen::PermutationMatrix<Eigen::Dynamic> P(perm);
    const Eigen::MatrixXd Xp = X * P;
    for (double lambda : {0.0, 2.0}) {
        const auto a = scm::fit_equality_ridge(X, y, lambda, all_true(5));
        const auto b = scm::fit_equality_ridge(Xp, y, lambda, all_true(5));
        EXPECT_LT((P.transpose() * a.coefficients - b.coefficients).cwiseAbs().maxCoeff(), 1e-10);
        const auto c = scm::fit_classic_scm(X, y, lambda + 0.5);
        const auto d = scm::fit_classic_scm(Xp, y, lambda + 0.5);
        EXPECT_LT((P.transpose() * c.coefficients - d.coefficients).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(ClassicScm, ExactDonorGivesVertex) {
    std::mt19937_64 rng(21);
    const auto X = gaussian(30, 5, rng);
    const Eigen::VectorXd y = X.col(2);
    const auto w = scm::fit_classic_scm(X, y, 0.0);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(5);
    e(2) = 1.0;
    EXPECT_LT((w.coefficients - e).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ClassicScm, IdenticalDonorsSplitEvenly) {
    std::mt19937_64 rng(22);
    Eigen::MatrixXd X = gaussian(30, 3, rng);
    X.col(1) = X.col(0);
    const Eigen::VectorXd y = X.col(0) + 0.1 * gaussian(30, 1, rng);
    const auto w = scm::fit_classic_scm(X, y, 1.0);
    EXPECT_NEAR(w.coefficients(0), w.coefficients(1), 1e-6);
}

TEST(ClassicScm, BeatsRandomSimplexPointsAndGrid) {
    std::mt19937_64 rng(31);
    const auto X = gaussian(30, 6, rng);
    const Eigen::VectorXd y = gaussian(30, 1, rng);
    const double lambda = 0.5;
    const auto w = scm::fit_classic_scm(X, y, lambda);
    const auto obj = [&](const Eigen::VectorXd& v) { return (y - X * v).squaredNorm() + lambda * v.squaredNorm(); };
    const double best = obj(w.coefficients);
    std::exponential_distribution<double> ex(1.0);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd v(6);
        for (auto& x : v) x = ex(rng);
        v /= v.sum();
        EXPECT_LE(best, obj(v) + 1e-12);
    }
    // Two-donor reduction against a fine grid.
    const Eigen::MatrixXd X2 = X.leftCols(2);
    const auto w2 = scm::fit_classic_scm(X2, y, lambda);
    const auto obj2 = [&](double a) {
        const Eigen::Vector2d v(a, 1.0 - a);
        return (y - X2 * v).squaredNorm() + lambda * v.squaredNorm();
    };
    double grid_best = std::numeric_limits<double>::infinity(), arg = 0.0;
    for (int i = 0; i <= 1'000'000; ++i) {
        const double a = i * 1e-6;
        if (obj2(a) < grid_best) grid_best = obj2(a), arg = a;
    }
    EXPECT_NEAR(w2.coefficients(0), arg, 1e-5);
    EXPECT_LE(obj2(w2.coefficients(0)), grid_best + 1e-9);
}

TEST(ClassicScm, SimplexFeasibleAndMonotoneObjective) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(200 + seed);
        const auto X = gaussian(40, 8, rng);
        const Eigen::VectorXd y = gaussian(40, 1, rng);
        std::vector<double> trace;
        const auto w = scm::fit_classic_scm(scm::Normal::from(X, y), 0.3, {}, &trace);
        EXPECT_GE(w.coefficients.minCoeff(), -1e-10);
        EXPECT_NEAR(w.coefficients.sum(), 1.0, 1e-8);
        EXPECT_LT(w.kkt_residual, 1e-4);  // objective-change stopping leaves a small projected-gradient residual
        for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-9 * std::abs(trace[i - 1]));
    }
}

TEST(ClassicScm, NonConvergenceCarriesState) {
    std::mt19937_64 rng(41);
    const auto X = gaussian(30, 6, rng);
    const Eigen::VectorXd y = gaussian(30, 1, rng);
    scm::RidgeOptions opt;
    opt.max_iter = 1;
    opt.tolerance = 0.0;
    try {
        scm::fit_classic_scm(X, y, 0.1, opt);
        FAIL() << "expected NonConvergenceError";
    } catch (const NonConvergenceError& e) {
        EXPECT_EQ(e.iterations(), 1);
        EXPECT_TRUE(std::isfinite(e.last_objective()));
    }
}

TEST(SimplexProjection, LandsOnSimplex) {
    std::mt19937_64 rng(51);
    for (int i = 0; i < 100; ++i) {
        const Eigen::VectorXd v = 3.0 * gaussian(9, 1, rng);
        const auto p = scm::project_to_simplex(v);
        EXPECT_GE(p.minCoeff(), 0.0);
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    }
    const Eigen::Vector3d inside(0.2, 0.3, 0.5);
    EXPECT_LT((scm::project_to_simplex(inside) - inside).norm(), 1e-15);
}

TEST(FitDesign, ConstraintBindsDonorColumnsOnly) {
    std::mt19937_64 rng(61);
    const auto X = gaussian(50, 5, rng);
    const Eigen::VectorXd y = gaussian(50, 1, rng);
    using scm::Provenance;
    const std::vector<Provenance> prov{Provenance::Donor, Provenance::Donor, Provenance::Donor, Provenance::TreatedLag,
                                       Provenance::Exogenous};
    const std::vector<std::string> names{"a", "b", "c", "y@t-1", "temp"};
    const auto w = scm::fit_design(X, y, prov, names, {Constraint::SumToOne, 3.0});
    EXPECT_NEAR(w.donor_coefficients().sum(), 1.0, 1e-8);
    EXPECT_EQ(w.donor_coefficients().size(), 3);
    EXPECT_THROW(scm::fit_design(X, y, prov, names, {Constraint::Classic, 3.0}), DimensionError);
}

TEST(FitDesign, StandardizedPenaltyIsRidgeOnScaledColumns) {
    std::mt19937_64 rng(62);
    Eigen::MatrixXd X = gaussian(60, 4, rng);
    X.col(0) *= 10.0;
    X.col(3) *= 0.1;
    const Eigen::VectorXd y = gaussian(60, 1, rng);
    using scm::Provenance;
    const std::vector<Provenance> prov(4, Provenance::Donor);
    const std::vector<std::string> names{"a", "b", "c", "d"};
    const auto w = scm::fit_design(X, y, prov, names, {Constraint::Unconstrained, 7.0});
    // Fit on scaled columns with a plain penalty, then map back.
    const Eigen::VectorXd s = scm::column_scales(X);
    const Eigen::MatrixXd Z = X * s.cwiseInverse().asDiagonal();
    const Eigen::VectorXd v = scm::fit_ridge(Z, y, 7.0).coefficients;
    EXPECT_LT((w.coefficients - s.cwiseInverse().asDiagonal() * v).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Predict, LinearCombinationAndShapeCheck) {
    Eigen::MatrixXd X(3, 2);
    X << 1, 2, 3, 4, 5, 6;
    scm::ScmWeights w;
    w.coefficients = Eigen::Vector2d(1.0, 0.0);
    EXPECT_EQ(scm::predict_linear(w, X), X.col(0));
    w.coefficients = Eigen::Vector2d(0.5, 0.5);
    EXPECT_EQ(scm::predict_linear(w, X), X.rowwise().mean());
    EXPECT_THROW(scm::predict_linear(w, Eigen::MatrixXd::Ones(3, 3)), DimensionError);
}

TEST(Flexibility, BaselineMinusObserved) {
    EXPECT_TRUE(scm::flexibility(Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 2)).isZero());
    EXPECT_DOUBLE_EQ(scm::flexibility(Eigen::VectorXd::Constant(1, 1.5), Eigen::VectorXd::Constant(1, 2.0))(0), 0.5);
    EXPECT_THROW(scm::flexibility(Eigen::Vector2d(1, 2), Eigen::Vector3d(1, 2, 3)), DimensionError);
}

TEST(WeightsJson, RoundTrip) {
    std::mt19937_64 rng(71);
    const auto X = gaussian(20, 3, rng);
    const Eigen::VectorXd y = gaussian(20, 1, rng);
    using scm::Provenance;
    const auto w = scm::fit_design(X, y, {Provenance::Donor, Provenance::Donor, Provenance::DonorLag}, {"a", "b", "a@t-4"},
                                   {Constraint::SumToOne, 1.0});
    const auto j = scm::to_json(w);
    for (const char* key : {"mode", "lambda", "columns", "fit_mse", "kkt_residual"}) EXPECT_TRUE(j.contains(key)) << key;
    const auto back = scm::weights_from_json(j);
    EXPECT_EQ(back.coefficients, w.coefficients);
    EXPECT_EQ(back.column_names, w.column_names);
    EXPECT_EQ(back.column_provenance, w.column_provenance);
    EXPECT_EQ(back.mode.kind, Constraint::SumToOne);
}
