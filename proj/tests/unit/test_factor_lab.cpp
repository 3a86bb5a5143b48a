#include <cstring>

#include <gtest/gtest.h>

#include "synthbase/factor_lab.hpp"

using namespace synthbase;
using factor::Estimator;

namespace {

factor::FactorModelSpec example_spec(double omega2 = 0.2) { return factor::make_spec(0.5, 1.0, omega2); }

}  // namespace

TEST(FactorTheory, WorkedExample) {
    const auto t = factor::theory(example_spec());
    EXPECT_NEAR(t.attenuation, 0.5, 1e-12);
    EXPECT_NEAR(t.beta_star, 0.25, 1e-12);
    EXPECT_NEAR(t.mse_sc, 1.2, 1e-12);
    EXPECT_NEAR(t.mse_lag, 1.075, 1e-12);
    EXPECT_NEAR(t.delta, 0.125, 1e-12);
    EXPECT_NEAR(t.mse_rc, 1.0, 1e-12);
    EXPECT_NEAR(t.delta_rc, 0.2, 1e-12);
    EXPECT_NEAR(t.rc_beats_lag_threshold, 0.5, 1e-12);
    EXPECT_GT(t.delta_rc, t.delta);
}

TEST(FactorTheory, DegenerateCases) {
    const auto r0 = factor::theory(factor::make_spec(0.0, 1.0, 0.2));
    EXPECT_EQ(r0.beta_star, 0.0);
    EXPECT_EQ(r0.delta, 0.0);
    EXPECT_EQ(r0.mse_lag, r0.mse_sc);
    const auto m0 = factor::theory(factor::make_spec(0.6, 0.0, 0.2));
    EXPECT_EQ(m0.attenuation, 1.0);
    EXPECT_NEAR(m0.beta_star, 0.6, 1e-15);
}

TEST(FactorTheory, DeltaNonNegativeAndThresholdEquality) {
    for (double rho : {-0.9, -0.3, 0.0, 0.2, 0.5, 0.95}) {
        for (double mu2 : {0.0, 0.5, 2.0}) {
            auto s = factor::make_spec(rho, mu2, 0.1);
            const auto t = factor::theory(s);
            EXPECT_GE(t.delta, 0.0);
            EXPECT_TRUE(std::isfinite(t.mse_rc) && std::isfinite(t.mse_lag));
            EXPECT_EQ(t.delta > 0.0, rho != 0.0);
            // At the threshold the two reductions coincide.
            const double th = t.rc_beats_lag_threshold;
            s.donor_sigma2 = Eigen::VectorXd::Constant(s.donors(), th / s.donor_weights.squaredNorm());
            const auto at = factor::theory(s);
            EXPECT_NEAR(at.delta_rc, at.delta, 1e-12);
            // With no donor noise residual feedback always wins.
            s.donor_sigma2.setZero();
            const auto w0 = factor::theory(s);
            EXPECT_NEAR(w0.delta_rc, rho * rho * w0.sigma_eps2, 1e-12);
            EXPECT_GE(w0.delta_rc, w0.delta - 1e-15);
        }
    }
}

TEST(FactorTheory, PureFunction) {
    const auto s = example_spec();
    const auto a = factor::theory(s), b = factor::theory(s);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
}

TEST(FactorSpec, ConstructionHonoursTargetsAndValidates) {
    const auto s = factor::make_spec(0.3, 2.0, 0.8, 1.0, 7, 3, 42);
    EXPECT_NEAR(s.sigma_mu2(), 2.0, 1e-12);
    EXPECT_NEAR(s.omega2(), 0.8, 1e-12);
    EXPECT_NEAR(s.sigma_eps2(), 1.0, 1e-12);
    EXPECT_NEAR(s.donor_weights.sum(), 1.0, 1e-12);
    const Eigen::RowVectorXd rebuilt = s.donor_weights.transpose() * s.loadings.bottomRows(7);
    EXPECT_LT((rebuilt - s.loadings.row(0)).cwiseAbs().maxCoeff(), 1e-12);
    auto bad = s;
    bad.loadings(0, 0) += 0.1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = s;
    bad.rho = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = s;
    bad.sigma_f(0, 0) = -1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = s;
    bad.donor_sigma2.resize(3);
    EXPECT_THROW(bad.validate(), DimensionError);
}

TEST(FactorSimulation, ZeroNoiseZeroFactorsGivesZeros) {
    auto s = factor::make_spec(0.5, 0.0, 0.0, 0.0);
    s.sigma_f.setZero();
    const auto p = factor::simulate_panel(s, 1000, 3);
    EXPECT_TRUE(p.y.isZero(0.0));
}

TEST(FactorSimulation, StationaryVarianceAndAutocorrelation) {
    const auto s = example_spec();  // sigma_nu2 = 0.75, sigma_eps2 = 1
    ASSERT_NEAR(s.sigma_nu2, 0.75, 1e-15);
    const auto p = factor::simulate_panel(s, 1'000'000, 17);
    const Eigen::VectorXd e = p.idiosyncratic.col(0);
    const double mean = e.mean();
    const Eigen::ArrayXd c = e.array() - mean;
    const double var = c.square().mean();
    EXPECT_NEAR(var, 1.0, 0.01);
    const long n = e.size();
    const double ac = (c.head(n - 1) * c.tail(n - 1)).sum() / c.square().sum();
    EXPECT_NEAR(ac, 0.5, 0.01);
}

TEST(FactorEmpirical, ExampleEstimatorsMatchClosedForms) {
    const auto s = example_spec();
    factor::EmpiricalOptions opt;
    opt.trials = 100'000;
    opt.seed = 5;
    const auto sc = factor::empirical_mse(s, Estimator::StaticSc, opt);
    EXPECT_LE(std::abs(sc.mse - 1.2), 3.0 * sc.stderr_);
    opt.beta = 0.25;
    const auto lag = factor::empirical_mse(s, Estimator::LagAugmented, opt);
    EXPECT_LE(std::abs(lag.mse - 1.075), 3.0 * lag.stderr_);
    const auto rc = factor::empirical_mse(s, Estimator::ResidualFeedback, opt);
    EXPECT_LE(std::abs(rc.mse - 1.0), 3.0 * rc.stderr_);
    opt.trials = 999;
    EXPECT_THROW(factor::empirical_mse(s, Estimator::StaticSc, opt), ConfigError);
}

TEST(FactorEmpirical, BetaHatConverges) {
    const double b = factor::fit_beta(example_spec(), 1'000'000, 99);
    EXPECT_LT(std::abs(b - 0.25), 0.01);
}

TEST(FactorEmpirical, ThreadCountDoesNotChangeDraws) {
    const auto s = example_spec();
    const auto a = factor::trial_errors(s, 20'000, 8, 0.25, 0.25, 1);
    const auto b = factor::trial_errors(s, 20'000, 8, 0.25, 0.25, 3);
    EXPECT_EQ(a, b);
}

TEST(FactorEmpirical, DeltaDetectedForStrongRho) {
    for (double rho : {0.3, 0.5, 0.8}) {
        const auto sum = factor::empirical_summary(factor::make_spec(rho, 1.0, 0.2), 100'000, 12);
        EXPECT_GT(sum.delta.mse, 3.0 * sum.delta.stderr_) << rho;
    }
}

TEST(FactorCrossover, FlipBetweenPointFourAndPointSix) {
    std::vector<double> grid;
    for (int i = 1; i <= 9; ++i) grid.push_back(0.1 * i);
    const auto rows = factor::crossover_scan(example_spec(), grid, 100'000, 21);
    ASSERT_EQ(rows.size(), 9u);
    for (const auto& r : rows) {
        const double diff = r.delta_rc_emp - r.delta_emp;
        if (r.omega2 < 0.4 + 1e-9) EXPECT_GT(diff, 0.0) << r.omega2;
        if (r.omega2 > 0.6 - 1e-9) EXPECT_LT(diff, 0.0) << r.omega2;
        EXPECT_NEAR(r.delta_theory, 0.125, 1e-12);
    }
}

TEST(FactorRepresentability, NoTemporalSignal) {
    const auto r = factor::representability_check(factor::make_spec(0.0, 1.0, 0.2), 200'000, 1);
    const double se = r.donors_only.stderr_;
    EXPECT_LT(std::abs(r.donors_only.mse - r.with_treated_lag.mse), 3.0 * se);
    EXPECT_LT(std::abs(r.donors_only.mse - r.with_all_lags.mse), 3.0 * se);
}

TEST(FactorRepresentability, SmallDonorNoiseNeedsDonorLags) {
    const auto r = factor::representability_check(example_spec(0.05), 200'000, 2);
    EXPECT_GT(r.diff_bc, 3.0 * r.diff_bc_stderr);
    const double best = std::min(r.theory.mse_lag, r.theory.mse_rc);
    EXPECT_LE(r.with_all_lags.mse, best + 3.0 * r.with_all_lags.stderr_);
}

TEST(FactorRepresentability, LargeDonorNoiseAddsLittle) {
    const auto r = factor::representability_check(example_spec(0.9), 200'000, 3);
    EXPECT_LE(r.with_all_lags.mse, r.with_treated_lag.mse + r.with_all_lags.stderr_);
    EXPECT_THROW(factor::representability_check(example_spec(), 50'000, 3), ConfigError);
}
