#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "synthbase/errors.hpp"
#include "synthbase/panel_store.hpp"

namespace synthbase::bench {

using panel::IndexRange;
using panel::PanelDataset;

namespace detail {

/// Start rows of the `count` most recent event-free days strictly before the
/// day that contains row t.
inline std::vector<std::size_t> previous_clean_days(const PanelDataset& p, std::size_t building, std::size_t t,
                                                    int count) {
    const std::size_t spd = p.steps_per_day();
    const std::size_t origin = p.first_midnight();
    if (t < origin) throw InsufficientHistoryError("row precedes the first whole day");
    std::size_t day = origin + (t - origin) / spd * spd;
    std::vector<std::size_t> days;
    while (static_cast<int>(days.size()) < count && day >= origin + spd) {
        day -= spd;
        if (!p.day_has_event(building, day)) days.push_back(day);
    }
    if (static_cast<int>(days.size()) < count) {
        throw InsufficientHistoryError("need " + std::to_string(count) + " event-free days before " +
                                       format_instant(p.timestamps[t]));
    }
    return days;
}

inline std::size_t slot_of(const PanelDataset& p, std::size_t t) {
    const std::size_t origin = p.first_midnight();
    return (t - origin) % p.steps_per_day();
}

}  // namespace detail

/// Mean of the same slot over the previous `window_days` event-free days.
inline Eigen::VectorXd moving_average_baseline(const PanelDataset& p, const std::string& treated_id, int window_days,
                                               const IndexRange& range) {
    if (window_days < 1) throw DesignError("window_days must be >= 1");
    const std::size_t b = p.index_of(treated_id);
    const auto col = p.prosumption.col(static_cast<Eigen::Index>(b));
    Eigen::VectorXd out(static_cast<Eigen::Index>(range.size()));
    for (std::size_t t = range.begin; t < range.end; ++t) {
        const std::size_t slot = detail::slot_of(p, t);
        double s = 0.0;
        for (std::size_t d : detail::previous_clean_days(p, b, t, window_days)) s += col(static_cast<Eigen::Index>(d + slot));
        out(static_cast<Eigen::Index>(t - range.begin)) = s / window_days;
    }
    return out;
}

/// How the y - x discarded values split between the two tails.
enum class Trim {
    ExtraHigh,  // floor((y-x)/2) lowest and the rest highest; Mid5of10 keeps ranks 3..7
    Symmetric,  // (y-x)/2 each side; odd y - x is rejected
};

/// Middle x of the last y event-free same-slot values.
inline Eigen::VectorXd mid_x_of_y_baseline(const PanelDataset& p, const std::string& treated_id, int x, int y,
                                           const IndexRange& range, Trim trim = Trim::ExtraHigh) {
    if (x < 1 || x > y) throw DesignError("need 1 <= x <= y");
    if (trim == Trim::Symmetric && (y - x) % 2 != 0) throw DesignError("y - x must be even for a symmetric trim");
    const std::size_t b = p.index_of(treated_id);
    const auto col = p.prosumption.col(static_cast<Eigen::Index>(b));
    const int drop = (y - x) / 2;
    Eigen::VectorXd out(static_cast<Eigen::Index>(range.size()));
    std::vector<double> vals;
    for (std::size_t t = range.begin; t < range.end; ++t) {
        const std::size_t slot = detail::slot_of(p, t);
        vals.clear();
        for (std::size_t d : detail::previous_clean_days(p, b, t, y)) vals.push_back(col(static_cast<Eigen::Index>(d + slot)));
        std::sort(vals.begin(), vals.end());
        double s = 0.0;
        for (int i = drop; i < drop + x; ++i) s += vals[static_cast<std::size_t>(i)];
        out(static_cast<Eigen::Index>(t - range.begin)) = s / x;
    }
    return out;
}

// ---------------------------------------------------------------- k-means

struct KmeansModel {
    int k = 0;
    Eigen::MatrixXd centroids;  // [k x dim]
    std::vector<int> assignment;
    std::uint64_t seed = 0;
    int iterations = 0;
    std::vector<double> inertia_trace;  // after each assignment step
};

/// Lloyd's algorithm from a k-means++ start. A cluster that empties is
/// re-seeded at the point farthest from its assigned centroid; if no point
/// can be spared the fit fails with EmptyClusterError.
inline KmeansModel kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter = 500,
                          double tol = 1e-8) {
    const auto n = points.rows();
    if (k < 1 || k > n) throw DesignError("k must lie in [1, number of points]");
    std::mt19937_64 rng(seed);
    KmeansModel m;
    m.k = k;
    m.seed = seed;
    m.centroids.resize(k, points.cols());
    m.assignment.assign(static_cast<std::size_t>(n), 0);

    // k-means++ seeding.
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    m.centroids.row(0) = points.row(first(rng));
    Eigen::VectorXd d2 = (points.rowwise() - m.centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total <= 0.0) {
            throw EmptyClusterError("fewer distinct points than clusters");
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng);
        for (pick = 0; pick < n - 1; ++pick) {
            r -= d2(pick);
            if (r <= 0.0) break;
        }
        m.centroids.row(c) = points.row(pick);
        d2 = d2.cwiseMin((points.rowwise() - m.centroids.row(c)).rowwise().squaredNorm());
    }

    for (int it = 1; it <= max_iter; ++it) {
        double inertia = 0.0;
        Eigen::VectorXd dist(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            const double d = (m.centroids.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
            m.assignment[static_cast<std::size_t>(i)] = static_cast<int>(best);
            dist(i) = d;
            inertia += d;
        }
        m.inertia_trace.push_back(inertia);
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            next.row(m.assignment[static_cast<std::size_t>(i)]) += points.row(i);
            ++counts[static_cast<std::size_t>(m.assignment[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                next.row(c) /= counts[static_cast<std::size_t>(c)];
                continue;
            }
            Eigen::Index far = 0;
            bool found = false;
            double best = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const int owner = m.assignment[static_cast<std::size_t>(i)];
                if (counts[static_cast<std::size_t>(owner)] > 1 && dist(i) > best) {
                    best = dist(i);
                    far = i;
                    found = true;
                }
            }
            if (!found || best <= 0.0) throw EmptyClusterError("cluster " + std::to_string(c) + " emptied");
            --counts[static_cast<std::size_t>(m.assignment[static_cast<std::size_t>(far)])];
            m.assignment[static_cast<std::size_t>(far)] = c;
            counts[static_cast<std::size_t>(c)] = 1;
            next.row(c) = points.row(far);
            dist(far) = 0.0;
        }
        const double shift = (next - m.centroids).cwiseAbs().maxCoeff();
        m.centroids = next;
        m.iterations = it;
        if (shift <= tol) break;
    }
    return m;
}

/// Mean daily profile of one series over a range of whole days, z-scored
/// within the profile (shape only).
inline Eigen::VectorXd daily_profile(const PanelDataset& p, std::size_t building, const IndexRange& range) {
    const std::size_t spd = p.steps_per_day();
    const std::size_t origin = std::max(range.begin, p.first_midnight());
    Eigen::VectorXd prof = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spd));
    std::size_t days = 0;
    for (std::size_t d = origin + (spd - (origin - p.first_midnight()) % spd) % spd; d + spd <= range.end; d += spd) {
        prof += p.prosumption.col(static_cast<Eigen::Index>(building)).segment(static_cast<Eigen::Index>(d),
                                                                              static_cast<Eigen::Index>(spd));
        ++days;
    }
    if (days == 0) throw InsufficientHistoryError("no whole day in the profile range");
    prof /= static_cast<double>(days);
    const double mu = prof.mean();
    const double sd = std::sqrt((prof.array() - mu).square().mean());
    return ((prof.array() - mu) / (sd > 1e-12 ? sd : 1.0)).matrix();
}

// ------------------------------------------------------------------ lasso

struct LassoModel {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    double alpha = 0.0;
    std::vector<std::size_t> columns;  // panel building indices of the regressors
    double kkt_residual = 0.0;
    int sweeps = 0;
    std::vector<double> objective_trace;  // after each sweep
};

struct LassoOptions {
    int max_sweeps = 100'000;
    double kkt_tol = 1e-7;
};

/// Cyclic coordinate descent for 0.5 ||y - b0 - X b||^2 + alpha ||b||_1 on
/// centred data, in covariance form.
inline LassoModel fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha,
                            const LassoOptions& opt = {}) {
    if (X.rows() != y.size() || X.rows() < 1) throw DimensionError("lasso design does not match the target");
    if (alpha < 0.0) throw DesignError("alpha must be non-negative");
    const Eigen::RowVectorXd mx = X.colwise().mean();
    const double my = y.mean();
    const Eigen::MatrixXd Xc = X.rowwise() - mx;
    const Eigen::VectorXd yc = y.array() - my;
    const Eigen::MatrixXd G = Xc.transpose() * Xc;
    const Eigen::VectorXd c = Xc.transpose() * yc;
    const double yy = yc.squaredNorm();
    const auto p = X.cols();

    LassoModel m;
    m.alpha = alpha;
    m.coefficients = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd grad = c;  // X'r for the current coefficients
    auto& b = m.coefficients;
    const auto objective = [&]() { return 0.5 * (yy - 2.0 * c.dot(b) + b.dot(G * b)) + alpha * b.lpNorm<1>(); };
    const auto kkt = [&]() {
        double worst = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (G(j, j) <= 0.0) continue;  // constant column, never active
            const double v = b(j) == 0.0 ? std::max(0.0, std::abs(grad(j)) - alpha)
                                         : std::abs(grad(j) - alpha * (b(j) > 0 ? 1.0 : -1.0));
            worst = std::max(worst, v);
        }
        return worst;
    };
    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
        for (Eigen::Index j = 0; j < p; ++j) {
            if (G(j, j) <= 0.0) continue;
            const double z = grad(j) + G(j, j) * b(j);
            const double nb = std::copysign(std::max(0.0, std::abs(z) - alpha), z) / G(j, j);
            const double delta = nb - b(j);
            if (delta != 0.0) {
                grad -= G.col(j) * delta;
                b(j) = nb;
            }
        }
        m.objective_trace.push_back(objective());
        m.sweeps = sweep;
        // Refresh the gradient now and then against drift.
        if (sweep % 64 == 0) grad = c - G * b;
        m.kkt_residual = kkt();
        if (m.kkt_residual <= opt.kkt_tol) break;
    }
    grad = c - G * b;
    m.kkt_residual = kkt();
    if (m.kkt_residual > 1e-6) throw ConvergenceError("lasso did not reach the KKT tolerance");
    m.intercept = my - mx.dot(b);
    return m;
}

inline Eigen::VectorXd predict_lasso(const LassoModel& m, const Eigen::MatrixXd& X) {
    return (X * m.coefficients).array() + m.intercept;
}

/// Smallest alpha with an all-zero solution.
inline double lasso_alpha_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
    return (Xc.transpose() * (y.array() - y.mean()).matrix()).lpNorm<Eigen::Infinity>();
}

/// Ten log-spaced values from alpha_max down to 1e-4 alpha_max.
inline std::vector<double> alpha_grid(double alpha_max, int points = 10) {
    std::vector<double> g;
    const double top = alpha_max > 0.0 ? alpha_max : 1.0;
    for (int i = 0; i < points; ++i) g.push_back(top * std::pow(10.0, -4.0 * i / (points - 1)));
    return g;
}

struct KmeansLassoFit {
    KmeansModel clusters;
    int chosen_cluster = 0;
    std::vector<std::size_t> members;  // donor building indices
    LassoModel lasso;
    double validation_mse = 0.0;
};

struct KmeansLassoOptions {
    int k = 8;
    std::optional<double> alpha;  // unset: choose on the validation split
    std::uint64_t seed = 0;
    std::optional<std::vector<std::size_t>> donors;
};

inline Eigen::MatrixXd building_columns(const PanelDataset& p, const std::vector<std::size_t>& cols,
                                        const IndexRange& range) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(range.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
        X.col(static_cast<Eigen::Index>(j)) = p.prosumption.col(static_cast<Eigen::Index>(cols[j]))
                                                  .segment(static_cast<Eigen::Index>(range.begin),
                                                           static_cast<Eigen::Index>(range.size()));
    }
    return X;
}

inline KmeansLassoFit fit_kmeans_lasso(const PanelDataset& p, const std::string& treated_id,
                                       const KmeansLassoOptions& opt = {}) {
    const std::size_t treated = p.index_of(treated_id);
    std::vector<std::size_t> donors;
    if (opt.donors) {
        donors = *opt.donors;
    } else {
        for (std::size_t b = 0; b < p.building_count(); ++b) {
            if (b != treated) donors.push_back(b);
        }
    }
    if (static_cast<int>(donors.size()) < opt.k) throw DesignError("fewer donors than clusters");
    const auto& train = p.splits.train;
    Eigen::MatrixXd feats(static_cast<Eigen::Index>(donors.size()), static_cast<Eigen::Index>(p.steps_per_day()));
    for (std::size_t i = 0; i < donors.size(); ++i) feats.row(static_cast<Eigen::Index>(i)) = daily_profile(p, donors[i], train);
    KmeansLassoFit fit;
    fit.clusters = kmeans(feats, opt.k, opt.seed);
    const Eigen::VectorXd tp = daily_profile(p, treated, train);
    Eigen::Index best = 0;
    (fit.clusters.centroids.rowwise() - tp.transpose()).rowwise().squaredNorm().minCoeff(&best);
    fit.chosen_cluster = static_cast<int>(best);
    for (std::size_t i = 0; i < donors.size(); ++i) {
        if (fit.clusters.assignment[i] == fit.chosen_cluster) fit.members.push_back(donors[i]);
    }

    const Eigen::MatrixXd X = building_columns(p, fit.members, train);
    const Eigen::VectorXd y = p.prosumption.col(static_cast<Eigen::Index>(treated))
                                  .segment(static_cast<Eigen::Index>(train.begin), static_cast<Eigen::Index>(train.size()));
    const auto& val = p.splits.validation;
    const Eigen::MatrixXd Xv = building_columns(p, fit.members, val);
    const Eigen::VectorXd yv = p.prosumption.col(static_cast<Eigen::Index>(treated))
                                   .segment(static_cast<Eigen::Index>(val.begin), static_cast<Eigen::Index>(val.size()));
    if (opt.alpha) {
        fit.lasso = fit_lasso(X, y, *opt.alpha);
        fit.validation_mse = (predict_lasso(fit.lasso, Xv) - yv).squaredNorm() / static_cast<double>(yv.size());
    } else {
        fit.validation_mse = std::numeric_limits<double>::infinity();
        for (double a : alpha_grid(lasso_alpha_max(X, y))) {
            auto m = fit_lasso(X, y, a);
            const double mse = (predict_lasso(m, Xv) - yv).squaredNorm() / static_cast<double>(yv.size());
            if (mse < fit.validation_mse) {
                fit.validation_mse = mse;
                fit.lasso = std::move(m);
            }
        }
    }
    fit.lasso.columns = fit.members;
    return fit;
}

inline Eigen::VectorXd predict_kmeans_lasso(const KmeansLassoFit& fit, const PanelDataset& p, const IndexRange& range) {
    return predict_lasso(fit.lasso, building_columns(p, fit.members, range));
}

/// Fit on train (alpha tuned on validation unless given), predict over `range`.
inline Eigen::VectorXd kmeans_lasso_baseline(const PanelDataset& p, const std::string& treated_id, int k,
                                             std::optional<double> alpha, std::uint64_t seed, const IndexRange& range) {
    KmeansLassoOptions opt;
    opt.k = k;
    opt.alpha = alpha;
    opt.seed = seed;
    return predict_kmeans_lasso(fit_kmeans_lasso(p, treated_id, opt), p, range);
}

}  // namespace synthbase::bench
