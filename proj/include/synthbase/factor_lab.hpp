#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "synthbase/csv.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/parallel.hpp"

namespace synthbase::factor {

/// Linear factor model: y_jt = loadings_j' f_t + eps_jt. Row 0 of `loadings`
/// is the treated unit; its idiosyncratic part is AR(1).
struct FactorModelSpec {
    int r = 1;
    Eigen::MatrixXd sigma_f;        // [r x r]
    Eigen::MatrixXd loadings;       // [(J+1) x r]
    Eigen::VectorXd donor_weights;  // [J], sums to one
    double rho = 0.0;
    double sigma_nu2 = 1.0;
    Eigen::VectorXd donor_sigma2;  // [J]
    long horizon = 0;
    std::uint64_t seed = 0;

    int donors() const { return static_cast<int>(donor_weights.size()); }
    double sigma_eps2() const { return sigma_nu2 / (1.0 - rho * rho); }
    double sigma_mu2() const {
        const Eigen::VectorXd l1 = loadings.row(0).transpose();
        return l1.dot(sigma_f * l1);
    }
    double omega2() const { return donor_weights.cwiseAbs2().dot(donor_sigma2); }
    double attenuation() const {
        const double se = sigma_eps2(), sm = sigma_mu2();
        return se + sm > 0.0 ? se / (se + sm) : 1.0;
    }

    void validate() const {
        const int J = donors();
        if (r < 1 || sigma_f.rows() != r || sigma_f.cols() != r) throw DimensionError("factor covariance must be r x r");
        if (loadings.rows() != J + 1 || loadings.cols() != r) throw DimensionError("loadings must be (J+1) x r");
        if (donor_sigma2.size() != J || J < 1) throw DimensionError("donor variances must have J entries");
        if (!(std::abs(rho) < 1.0)) throw ConfigError("|rho| must be below 1");
        if (sigma_nu2 < 0.0 || (donor_sigma2.array() < 0.0).any()) throw ConfigError("variances must be non-negative");
        if (std::abs(donor_weights.sum() - 1.0) > 1e-12) throw ConfigError("donor weights must sum to one");
        if ((sigma_f - sigma_f.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ConfigError("factor covariance not symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_f);
        if (es.eigenvalues().minCoeff() < -1e-12) throw ConfigError("factor covariance not positive semidefinite");
        const Eigen::RowVectorXd rebuilt = donor_weights.transpose() * loadings.bottomRows(J);
        if ((rebuilt - loadings.row(0)).cwiseAbs().maxCoeff() > 1e-12) {
            throw ConfigError("treated loadings are not reproduced by the donor weights");
        }
    }
};

struct TheoryPrediction {
    double beta_star = 0.0;
    double mse_sc = 0.0;
    double mse_lag = 0.0;
    double delta = 0.0;
    double mse_rc = 0.0;
    double delta_rc = 0.0;
    double rc_beats_lag_threshold = 0.0;
    double attenuation = 1.0;
    double sigma_eps2 = 0.0;
    double sigma_mu2 = 0.0;
    double omega2 = 0.0;
};

inline TheoryPrediction theory(const FactorModelSpec& s) {
    TheoryPrediction t;
    const double se = s.sigma_eps2(), sm = s.sigma_mu2(), w2 = s.omega2(), rho = s.rho;
    const double A = s.attenuation();
    t.sigma_eps2 = se;
    t.sigma_mu2 = sm;
    t.omega2 = w2;
    t.attenuation = A;
    t.beta_star = rho * A;
    t.mse_sc = se + w2;
    t.delta = rho * rho * se * A;
    t.mse_lag = t.mse_sc - t.delta;
    t.mse_rc = (1.0 - rho * rho) * se + (1.0 + rho * rho) * w2;
    t.delta_rc = rho * rho * (se - w2);
    t.rc_beats_lag_threshold = se + sm > 0.0 ? se * sm / (se + sm) : 0.0;
    return t;
}

/// Builds a spec hitting the requested (rho, sigma_eps2, sigma_mu2, omega2)
/// with identity factor covariance. Donor loadings and weights are random
/// (seeded); treated loadings are their weighted sum, then everything is
/// rescaled to the target sigma_mu2. Donor noise is equal across donors.
inline FactorModelSpec make_spec(double rho, double sigma_mu2, double omega2, double sigma_eps2 = 1.0, int donors = 5,
                                 int r = 2, std::uint64_t seed = 1) {
    if (donors < 1 || r < 1) throw ConfigError("need at least one donor and one factor");
    if (sigma_mu2 < 0.0 || omega2 < 0.0 || sigma_eps2 < 0.0) throw ConfigError("variances must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    FactorModelSpec s;
    s.r = r;
    s.sigma_f = Eigen::MatrixXd::Identity(r, r);
    s.donor_weights.resize(donors);
    for (int j = 0; j < donors; ++j) s.donor_weights(j) = u(rng);
    s.donor_weights /= s.donor_weights.sum();
    s.loadings.resize(donors + 1, r);
    for (int j = 1; j <= donors; ++j) {
        for (int k = 0; k < r; ++k) s.loadings(j, k) = z(rng);
    }
    s.loadings.row(0) = s.donor_weights.transpose() * s.loadings.bottomRows(donors);
    const double mu2 = s.loadings.row(0).squaredNorm();
    if (sigma_mu2 == 0.0) {
        s.loadings.setZero();
    } else {
        if (mu2 <= 0.0) throw ConfigError("degenerate random loadings");
        s.loadings *= std::sqrt(sigma_mu2 / mu2);
        s.loadings.row(0) = s.donor_weights.transpose() * s.loadings.bottomRows(donors);
    }
    s.rho = rho;
    s.sigma_nu2 = (1.0 - rho * rho) * sigma_eps2;
    s.donor_sigma2 = Eigen::VectorXd::Constant(donors, omega2 / s.donor_weights.squaredNorm());
    s.seed = seed;
    s.validate();
    return s;
}

/// Twelve (rho, sigma_mu2, omega2) combinations: every rho in
/// {0, 0.3, 0.5, 0.8} paired with three (sigma_mu2, omega2) levels.
inline std::vector<FactorModelSpec> standard_grid(std::uint64_t seed = 7) {
    const double rhos[] = {0.0, 0.3, 0.5, 0.8};
    const double pairs[][2] = {{0.5, 0.05}, {1.0, 0.2}, {2.0, 0.8}};
    std::vector<FactorModelSpec> out;
    std::uint64_t i = 0;
    for (double rho : rhos) {
        for (const auto& p : pairs) out.push_back(make_spec(rho, p[0], p[1], 1.0, 5, 2, seed * 100 + ++i));
    }
    return out;
}

struct FactorPanel {
    Eigen::MatrixXd factors;     // [n x r]
    Eigen::MatrixXd y;           // [n x (J+1)], column 0 treated
    Eigen::MatrixXd idiosyncratic;  // [n x (J+1)]
};

namespace detail {

inline Eigen::MatrixXd covariance_root(const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Draws n steps: Gaussian factors, stationary AR(1) treated noise, white
/// donor noise.
inline FactorPanel simulate_panel(const FactorModelSpec& s, long n, std::uint64_t seed) {
    s.validate();
    const int J = s.donors();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    const Eigen::MatrixXd root = detail::covariance_root(s.sigma_f);
    FactorPanel out;
    out.factors.resize(n, s.r);
    out.idiosyncratic.resize(n, J + 1);
    const double sd_nu = std::sqrt(s.sigma_nu2);
    const Eigen::VectorXd sd_d = s.donor_sigma2.cwiseSqrt();
    double e1 = std::sqrt(s.sigma_eps2()) * z(rng);
    Eigen::VectorXd g(s.r);
    for (long t = 0; t < n; ++t) {
        for (int k = 0; k < s.r; ++k) g(k) = z(rng);
        out.factors.row(t) = (root * g).transpose();
        if (t > 0) e1 = s.rho * e1 + sd_nu * z(rng);
        out.idiosyncratic(t, 0) = e1;
        for (int j = 0; j < J; ++j) out.idiosyncratic(t, j + 1) = sd_d(j) * z(rng);
    }
    out.y = out.factors * s.loadings.transpose() + out.idiosyncratic;
    return out;
}

enum class Estimator { StaticSc, LagAugmented, LagAugmentedOptimal, ResidualFeedback };

struct MseEstimate {
    double mse = 0.0;
    double stderr_ = 0.0;
};

struct EmpiricalOptions {
    long trials = 100'000;
    std::uint64_t seed = 1;
    double beta = 0.0;              // for LagAugmented
    bool fit_beta = false;          // LagAugmentedOptimal: estimate beta instead of using beta*
    long beta_fit_steps = 1'000'000;
    unsigned jobs = 1;
};

/// Least-squares slope of the SC residual e_t on y_{1,t-1} over a simulated
/// pre-period (no intercept; all series are zero-mean).
inline double fit_beta(const FactorModelSpec& s, long steps, std::uint64_t seed) {
    const auto p = simulate_panel(s, steps + 1, seed);
    const Eigen::VectorXd sc = p.y.rightCols(s.donors()) * s.donor_weights;
    const Eigen::VectorXd e = p.y.col(0) - sc;
    const Eigen::VectorXd lag = p.y.col(0).head(steps);
    const Eigen::VectorXd cur = e.tail(steps);
    const double den = lag.squaredNorm();
    return den > 0.0 ? lag.dot(cur) / den : 0.0;
}

/// One-step errors of all four estimators on common draws. Row = trial,
/// columns = Estimator order; beta for the two lag estimators given.
inline Eigen::MatrixXd trial_errors(const FactorModelSpec& s, long trials, std::uint64_t seed, double beta_fixed,
                                    double beta_opt, unsigned jobs = 1) {
    s.validate();
    const int J = s.donors();
    const Eigen::MatrixXd root = detail::covariance_root(s.sigma_f);
    const double sd_e = std::sqrt(s.sigma_eps2()), sd_nu = std::sqrt(s.sigma_nu2);
    const Eigen::VectorXd sd_d = s.donor_sigma2.cwiseSqrt();
    const Eigen::VectorXd l1 = s.loadings.row(0).transpose();
    Eigen::MatrixXd err(trials, 4);
    constexpr long block = 4096;
    const long blocks = (trials + block - 1) / block;
    parallel_for(static_cast<std::size_t>(blocks), jobs, [&](std::size_t bi) {
        Eigen::VectorXd g(s.r), f0(s.r), f1(s.r);
        std::normal_distribution<double> z(0.0, 1.0);
        const long end = std::min<long>(trials, static_cast<long>(bi + 1) * block);
        for (long t = static_cast<long>(bi) * block; t < end; ++t) {
            std::mt19937_64 rng(detail::mix(seed, static_cast<std::uint64_t>(t)));
            z.reset();
            for (int k = 0; k < s.r; ++k) g(k) = z(rng);
            f0 = root * g;
            for (int k = 0; k < s.r; ++k) g(k) = z(rng);
            f1 = root * g;
            const double e0 = sd_e * z(rng);
            const double e1 = s.rho * e0 + sd_nu * z(rng);
            double wd0 = 0.0, wd1 = 0.0;  // weighted donor noise at T0 and T0+1
            for (int j = 0; j < J; ++j) {
                wd0 += s.donor_weights(j) * sd_d(j) * z(rng);
                wd1 += s.donor_weights(j) * sd_d(j) * z(rng);
            }
            const double y0 = l1.dot(f0) + e0;
            const double y1 = l1.dot(f1) + e1;
            const double sc0 = l1.dot(f0) + wd0;
            const double sc1 = l1.dot(f1) + wd1;
            err(t, 0) = y1 - sc1;
            err(t, 1) = y1 - (sc1 + beta_fixed * y0);
            err(t, 2) = y1 - (sc1 + beta_opt * y0);
            err(t, 3) = y1 - (sc1 + s.rho * (y0 - sc0));
        }
    });
    return err;
}

inline MseEstimate mse_of(const Eigen::VectorXd& errors) {
    const Eigen::ArrayXd sq = errors.array().square();
    const double n = static_cast<double>(sq.size());
    MseEstimate m;
    m.mse = sq.mean();
    m.stderr_ = n > 1 ? std::sqrt((sq - m.mse).square().sum() / (n - 1.0) / n) : 0.0;
    return m;
}

inline MseEstimate empirical_mse(const FactorModelSpec& s, Estimator est, const EmpiricalOptions& opt = {}) {
    if (opt.trials < 1000) throw ConfigError("need at least 1000 trials");
    double beta_opt = theory(s).beta_star;
    if (est == Estimator::LagAugmentedOptimal && opt.fit_beta) beta_opt = fit_beta(s, opt.beta_fit_steps, opt.seed ^ 0xbeefULL);
    const auto err = trial_errors(s, opt.trials, opt.seed, opt.beta, beta_opt, opt.jobs);
    return mse_of(err.col(static_cast<Eigen::Index>(est)));
}

/// All four estimators on the same draws (lag estimator at beta*).
struct EmpiricalSummary {
    TheoryPrediction theory;
    MseEstimate sc, lag, lag_opt, rc;
    double beta_used = 0.0;
    MseEstimate delta;     // sc - lag_opt, per-trial differences
    MseEstimate delta_rc;  // sc - rc
    MseEstimate rc_minus_lag;  // delta_rc - delta = lag_opt - rc
};

inline MseEstimate mean_of(const Eigen::ArrayXd& v) {
    const double n = static_cast<double>(v.size());
    MseEstimate m;
    m.mse = v.mean();
    m.stderr_ = n > 1 ? std::sqrt((v - m.mse).square().sum() / (n - 1.0) / n) : 0.0;
    return m;
}

inline EmpiricalSummary empirical_summary(const FactorModelSpec& s, long trials, std::uint64_t seed,
                                          std::optional<double> beta = std::nullopt, unsigned jobs = 1) {
    EmpiricalSummary out;
    out.theory = theory(s);
    out.beta_used = beta.value_or(out.theory.beta_star);
    const auto err = trial_errors(s, trials, seed, out.beta_used, out.beta_used, jobs);
    out.sc = mse_of(err.col(0));
    out.lag = mse_of(err.col(1));
    out.lag_opt = mse_of(err.col(2));
    out.rc = mse_of(err.col(3));
    const Eigen::ArrayXd s0 = err.col(0).array().square();
    const Eigen::ArrayXd s2 = err.col(2).array().square();
    const Eigen::ArrayXd s3 = err.col(3).array().square();
    out.delta = mean_of(s0 - s2);
    out.delta_rc = mean_of(s0 - s3);
    out.rc_minus_lag = mean_of(s2 - s3);
    return out;
}

struct CrossoverRow {
    double omega2 = 0.0;
    double delta_theory = 0.0;
    double delta_emp = 0.0;
    double delta_rc_theory = 0.0;
    double delta_rc_emp = 0.0;
    double stderr_ = 0.0;  // of the empirical (delta_rc - delta)
};

/// Re-targets the donor noise of `base` to each omega2 and compares the two
/// MSE reductions.
inline std::vector<CrossoverRow> crossover_scan(const FactorModelSpec& base, const std::vector<double>& omega2_grid,
                                                long trials, std::uint64_t seed, unsigned jobs = 1) {
    std::vector<CrossoverRow> rows;
    for (std::size_t i = 0; i < omega2_grid.size(); ++i) {
        FactorModelSpec s = base;
        s.donor_sigma2 = Eigen::VectorXd::Constant(s.donors(), omega2_grid[i] / s.donor_weights.squaredNorm());
        const auto sum = empirical_summary(s, trials, detail::mix(seed, i), std::nullopt, jobs);
        rows.push_back({omega2_grid[i], sum.theory.delta, sum.delta.mse, sum.theory.delta_rc, sum.delta_rc.mse,
                        sum.rc_minus_lag.stderr_});
    }
    return rows;
}

inline void export_crossover(const std::vector<CrossoverRow>& rows, const std::string& path) {
    auto os = csv::open_for_write(path);
    csv::write_row(os, {"omega2", "delta_theory", "delta_emp", "delta_rc_theory", "delta_rc_emp", "stderr"});
    for (const auto& r : rows) {
        csv::write_row(os, {csv::format_double(r.omega2), csv::format_double(r.delta_theory),
                            csv::format_double(r.delta_emp), csv::format_double(r.delta_rc_theory),
                            csv::format_double(r.delta_rc_emp), csv::format_double(r.stderr_)});
    }
}

struct RepresentabilityReport {
    MseEstimate donors_only;
    MseEstimate with_treated_lag;
    MseEstimate with_all_lags;
    TheoryPrediction theory;
    /// Pooled standard error of the (b) - (c) difference on the held-out half.
    double diff_bc_stderr = 0.0;
    double diff_bc = 0.0;
};

/// Least-squares one-step predictors on nested feature sets, fitted on the
/// first half of a simulated path and scored on the second half.
inline RepresentabilityReport representability_check(const FactorModelSpec& s, long n_steps, std::uint64_t seed) {
    if (n_steps < 100'000) throw ConfigError("representability check needs at least 1e5 steps");
    const int J = s.donors();
    const auto p = simulate_panel(s, n_steps + 1, seed);
    const long n = n_steps;
    // Row t uses data at t+1 (current) and t (lag).
    Eigen::MatrixXd Xa(n, J), Xb(n, J + 1), Xc(n, 2 * J + 1);
    const Eigen::VectorXd y = p.y.col(0).tail(n);
    Xa = p.y.rightCols(J).bottomRows(n);
    Xb << Xa, p.y.col(0).head(n);
    Xc << Xb, p.y.rightCols(J).topRows(n);
    const long half = n / 2;
    const auto score = [&](const Eigen::MatrixXd& X) {
        const Eigen::MatrixXd Xt = X.topRows(half);
        const Eigen::VectorXd coef = (Xt.transpose() * Xt).ldlt().solve(Xt.transpose() * y.head(half));
        return Eigen::VectorXd(y.tail(n - half) - X.bottomRows(n - half) * coef);
    };
    const Eigen::VectorXd ea = score(Xa), eb = score(Xb), ec = score(Xc);
    RepresentabilityReport r;
    r.theory = theory(s);
    r.donors_only = mse_of(ea);
    r.with_treated_lag = mse_of(eb);
    r.with_all_lags = mse_of(ec);
    const auto d = mean_of(eb.array().square() - ec.array().square());
    r.diff_bc = d.mse;
    r.diff_bc_stderr = d.stderr_;
    return r;
}

}  // namespace synthbase::factor
