#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "synthbase/errors.hpp"

namespace synthbase::scm {

enum class Provenance { Donor, Exogenous, TreatedLag, DonorLag };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::Donor: return "donor";
        case Provenance::Exogenous: return "exogenous";
        case Provenance::TreatedLag: return "treated_lag";
        case Provenance::DonorLag: return "donor_lag";
    }
    return "?";
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "donor") return Provenance::Donor;
    if (s == "exogenous") return Provenance::Exogenous;
    if (s == "treated_lag") return Provenance::TreatedLag;
    if (s == "donor_lag") return Provenance::DonorLag;
    throw SchemaError("unknown provenance '" + s + "'");
}

enum class Constraint {
    Classic,        // w >= 0, sum w = 1
    SumToOne,       // sum w = 1
    Unconstrained,
};

inline const char* to_string(Constraint c) {
    switch (c) {
        case Constraint::Classic: return "classic";
        case Constraint::SumToOne: return "sum_to_one";
        case Constraint::Unconstrained: return "unconstrained";
    }
    return "?";
}

inline Constraint constraint_from_string(const std::string& s) {
    if (s == "classic") return Constraint::Classic;
    if (s == "sum_to_one") return Constraint::SumToOne;
    if (s == "unconstrained") return Constraint::Unconstrained;
    throw SchemaError("unknown constraint mode '" + s + "'");
}

struct ConstraintMode {
    Constraint kind = Constraint::SumToOne;
    double ridge_lambda = 0.0;
};

/// Fitted coefficient vector over design columns. No intercept.
struct ScmWeights {
    Eigen::VectorXd coefficients;
    ConstraintMode mode;
    std::vector<std::string> column_names;
    std::vector<Provenance> column_provenance;
    double fit_mse = 0.0;
    double kkt_residual = 0.0;
    double multiplier = 0.0;  // equality-constraint multiplier, 0 when unconstrained
    int iterations = 0;       // projected-gradient iterations (classic mode)

    Eigen::VectorXd donor_coefficients() const {
        std::vector<double> out;
        for (std::size_t i = 0; i < column_provenance.size(); ++i) {
            if (column_provenance[i] == Provenance::Donor) out.push_back(coefficients(static_cast<Eigen::Index>(i)));
        }
        return Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
    }
};

/// Gram form of a least-squares problem: G = X'X, b = X'y, yy = y'y.
struct Normal {
    Eigen::MatrixXd gram;
    Eigen::VectorXd xty;
    double yty = 0.0;
    Eigen::Index rows = 0;

    static Normal from(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
        if (X.rows() != y.size()) throw DimensionError("design rows do not match target length");
        if (X.rows() < 1 || X.cols() < 1) throw DimensionError("empty design");
        Normal n;
        n.gram = Eigen::MatrixXd(X.cols(), X.cols());
        n.gram.setZero();
        n.gram.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
        n.gram = n.gram.selfadjointView<Eigen::Lower>();
        n.xty = X.transpose() * y;
        n.yty = y.squaredNorm();
        n.rows = X.rows();
        return n;
    }

    double objective(const Eigen::VectorXd& w) const { return w.dot(gram * w) - 2.0 * xty.dot(w) + yty; }
};

/// Extra knobs shared by the fitting routines.
struct RidgeOptions {
    /// Per-column penalty scale s_j: the penalty is lambda * sum (s_j w_j)^2.
    /// Empty means all ones.
    Eigen::VectorXd penalty_scale;
    int max_iter = 50'000;
    double tolerance = 1e-10;
};

namespace detail {

inline Eigen::VectorXd penalty_diagonal(const RidgeOptions& opt, Eigen::Index D) {
    if (opt.penalty_scale.size() == 0) return Eigen::VectorXd::Ones(D);
    if (opt.penalty_scale.size() != D) throw DimensionError("penalty scale length mismatch");
    return opt.penalty_scale.array().square();
}

inline double stationarity_scale(const Normal& n) { return std::max(1.0, n.xty.lpNorm<Eigen::Infinity>()); }

inline ScmWeights finish(const Normal& n, Eigen::VectorXd w, ConstraintMode mode) {
    ScmWeights out;
    out.fit_mse = std::max(0.0, n.objective(w)) / static_cast<double>(n.rows);
    out.coefficients = std::move(w);
    out.mode = mode;
    out.column_provenance.assign(static_cast<std::size_t>(out.coefficients.size()), Provenance::Donor);
    for (Eigen::Index j = 0; j < out.coefficients.size(); ++j) out.column_names.push_back("c" + std::to_string(j));
    return out;
}

}  // namespace detail

/// Exact minimizer of ||y - Xw||^2 + lambda * sum (s_j w_j)^2 subject to
/// sum_{j in S} w_j = 1, from the (D+1)x(D+1) KKT system. An empty or
/// all-false mask drops the constraint (plain ridge).
inline ScmWeights fit_equality_ridge(const Normal& n, double lambda, const std::vector<bool>& sum_to_one,
                                     const RidgeOptions& opt = {}) {
    const Eigen::Index D = n.gram.cols();
    if (lambda < 0.0 || !std::isfinite(lambda)) throw DimensionError("ridge lambda must be >= 0");
    if (!sum_to_one.empty() && static_cast<Eigen::Index>(sum_to_one.size()) != D) {
        throw DimensionError("sum-to-one mask length does not match design columns");
    }
    Eigen::VectorXd a = Eigen::VectorXd::Zero(D);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(sum_to_one.size()); ++j) {
        if (sum_to_one[static_cast<std::size_t>(j)]) a(j) = 1.0;
    }
    const bool constrained = a.sum() > 0.0;

    Eigen::MatrixXd H = n.gram;
    H.diagonal() += lambda * detail::penalty_diagonal(opt, D);

    Eigen::VectorXd w;
    double mu = 0.0;
    const Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (lambda > 0.0 && llt.info() == Eigen::Success) {
        // H is SPD: eliminate w through the Schur complement of the KKT system.
        const Eigen::VectorXd h_b = llt.solve(n.xty);
        if (constrained) {
            const Eigen::VectorXd h_a = llt.solve(a);
            mu = (a.dot(h_b) - 1.0) / a.dot(h_a);
            w = h_b - mu * h_a;
        } else {
            w = h_b;
        }
    } else {
        const Eigen::Index m = constrained ? D + 1 : D;
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m, m);
        Eigen::VectorXd rhs(m);
        K.topLeftCorner(D, D) = H;
        rhs.head(D) = n.xty;
        if (constrained) {
            K.block(0, D, D, 1) = a;
            K.block(D, 0, 1, D) = a.transpose();
            rhs(D) = 1.0;
        }
        // Symmetric diagonal equilibration so the rank test does not depend on column units.
        Eigen::VectorXd s = Eigen::VectorXd::Ones(m);
        for (Eigen::Index j = 0; j < D; ++j) {
            if (H(j, j) > 0.0) s(j) = 1.0 / std::sqrt(H(j, j));
        }
        if (constrained) {
            const double amax = (s.head(D).array() * a.array()).abs().maxCoeff();
            if (amax > 0.0) s(D) = 1.0 / amax;
        }
        K = s.asDiagonal() * K * s.asDiagonal();
        Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
        lu.setThreshold(1e-12);
        if (!lu.isInvertible()) throw SingularSystemError("KKT matrix is rank-deficient");
        const Eigen::VectorXd sol = s.asDiagonal() * lu.solve(Eigen::VectorXd(s.asDiagonal() * rhs));
        w = sol.head(D);
        if (constrained) mu = sol(D);
    }

    const double stat = (H * w + mu * a - n.xty).lpNorm<Eigen::Infinity>() / detail::stationarity_scale(n);
    const double feas = constrained ? std::abs(a.dot(w) - 1.0) : 0.0;
    auto out = detail::finish(n, std::move(w),
                              {constrained ? Constraint::SumToOne : Constraint::Unconstrained, lambda});
    out.multiplier = mu;
    out.kkt_residual = std::max(stat, feas);
    return out;
}

inline ScmWeights fit_equality_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                                     const std::vector<bool>& sum_to_one, const RidgeOptions& opt = {}) {
    return fit_equality_ridge(Normal::from(X, y), lambda, sum_to_one, opt);
}

/// Unconstrained ridge. At lambda = 0 this is ordinary least squares and
/// requires X'X to be nonsingular.
inline ScmWeights fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                            const RidgeOptions& opt = {}) {
    return fit_equality_ridge(Normal::from(X, y), lambda, {}, opt);
}

/// Euclidean projection onto the probability simplex (sort-based).
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumsum = 0.0;
    double theta = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        cumsum += u[static_cast<std::size_t>(j)];
        const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
    }
    return (v.array() - theta).cwiseMax(0.0);
}

/// Simplex-constrained ridge (w >= 0, sum w = 1) by projected gradient descent
/// with step 1/L. The objective is non-increasing across iterations.
inline ScmWeights fit_classic_scm(const Normal& n, double lambda, const RidgeOptions& opt = {},
                                  std::vector<double>* objective_trace = nullptr) {
    const Eigen::Index D = n.gram.cols();
    if (lambda < 0.0 || !std::isfinite(lambda)) throw DimensionError("ridge lambda must be >= 0");
    Eigen::MatrixXd H = n.gram;
    H.diagonal() += lambda * detail::penalty_diagonal(opt, D);
    const double lipschitz =
        2.0 * std::max(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff(),
                       1e-300);
    const auto objective = [&](const Eigen::VectorXd& w) { return w.dot(H * w) - 2.0 * n.xty.dot(w) + n.yty; };

    Eigen::VectorXd w = Eigen::VectorXd::Constant(D, 1.0 / static_cast<double>(D));
    double f = objective(w);
    if (objective_trace) objective_trace->push_back(f);
    int iter = 0;
    bool converged = false;
    while (iter < opt.max_iter) {
        ++iter;
        const Eigen::VectorXd grad = 2.0 * (H * w - n.xty);
        Eigen::VectorXd next = project_to_simplex(w - grad / lipschitz);
        const double f_next = objective(next);
        if (objective_trace) objective_trace->push_back(f_next);
        const double change = std::abs(f - f_next);
        w = std::move(next);
        f = f_next;
        if (change <= opt.tolerance * std::max(1.0, std::abs(f))) {
            converged = true;
            break;
        }
    }
    if (!converged) throw NonConvergenceError(f, iter);

    const Eigen::VectorXd grad = 2.0 * (H * w - n.xty);
    const double stat = (w - project_to_simplex(w - grad / lipschitz)).lpNorm<Eigen::Infinity>() * lipschitz / 2.0;
    auto out = detail::finish(n, std::move(w), {Constraint::Classic, lambda});
    out.kkt_residual = std::max(stat / detail::stationarity_scale(n), std::abs(out.coefficients.sum() - 1.0));
    out.iterations = iter;
    return out;
}

inline ScmWeights fit_classic_scm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                                  const RidgeOptions& opt = {}) {
    return fit_classic_scm(Normal::from(X, y), lambda, opt);
}

/// Population standard deviation per column; columns with zero spread get 1.
inline Eigen::VectorXd column_scales(const Eigen::MatrixXd& X) {
    Eigen::VectorXd s(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double mean = X.col(j).mean();
        const double var = (X.col(j).array() - mean).square().mean();
        s(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
}

/// Fits a tagged design under the given mode. The sum-to-one constraint (and,
/// for Classic, non-negativity) binds donor-tagged columns only; Classic
/// requires an all-donor design. The ridge penalty is scaled by each column's
/// training standard deviation, which is ridge on standardized columns
/// expressed in original units.
inline ScmWeights fit_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const std::vector<Provenance>& provenance, const std::vector<std::string>& names,
                             ConstraintMode mode, bool standardize = true) {
    if (static_cast<Eigen::Index>(provenance.size()) != X.cols() || names.size() != provenance.size()) {
        throw DimensionError("column metadata does not match the design");
    }
    RidgeOptions opt;
    if (standardize) opt.penalty_scale = column_scales(X);
    const Normal n = Normal::from(X, y);

    ScmWeights w;
    switch (mode.kind) {
        case Constraint::Classic:
            if (std::any_of(provenance.begin(), provenance.end(), [](Provenance p) { return p != Provenance::Donor; })) {
                throw DimensionError("classic mode applies to donor-only designs");
            }
            w = fit_classic_scm(n, mode.ridge_lambda, opt);
            break;
        case Constraint::SumToOne: {
            std::vector<bool> mask(provenance.size());
            std::transform(provenance.begin(), provenance.end(), mask.begin(),
                           [](Provenance p) { return p == Provenance::Donor; });
            w = fit_equality_ridge(n, mode.ridge_lambda, mask, opt);
            break;
        }
        case Constraint::Unconstrained:
            w = fit_equality_ridge(n, mode.ridge_lambda, {}, opt);
            break;
    }
    w.mode = mode;
    w.column_provenance = provenance;
    w.column_names = names;
    return w;
}

inline Eigen::VectorXd predict_linear(const ScmWeights& w, const Eigen::MatrixXd& X_new) {
    if (X_new.cols() != w.coefficients.size()) {
        throw DimensionError("design has " + std::to_string(X_new.cols()) + " columns, weights have " +
                             std::to_string(w.coefficients.size()));
    }
    return X_new * w.coefficients;
}

/// Delivered flexibility: baseline minus observed, elementwise.
inline Eigen::VectorXd flexibility(const Eigen::VectorXd& observed, const Eigen::VectorXd& baseline) {
    if (observed.size() != baseline.size()) throw DimensionError("observed and baseline lengths differ");
    return baseline - observed;
}

inline nlohmann::json to_json(const ScmWeights& w) {
    nlohmann::json cols = nlohmann::json::array();
    for (Eigen::Index j = 0; j < w.coefficients.size(); ++j) {
        const auto i = static_cast<std::size_t>(j);
        cols.push_back({{"name", i < w.column_names.size() ? w.column_names[i] : "c" + std::to_string(j)},
                        {"provenance", to_string(i < w.column_provenance.size() ? w.column_provenance[i]
                                                                                : Provenance::Donor)},
                        {"coefficient", w.coefficients(j)}});
    }
    return {{"mode", to_string(w.mode.kind)},
            {"lambda", w.mode.ridge_lambda},
            {"columns", std::move(cols)},
            {"fit_mse", w.fit_mse},
            {"kkt_residual", w.kkt_residual}};
}

inline ScmWeights weights_from_json(const nlohmann::json& j) {
    ScmWeights w;
    w.mode = {constraint_from_string(j.at("mode").get<std::string>()), j.at("lambda").get<double>()};
    const auto& cols = j.at("columns");
    w.coefficients.resize(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        w.column_names.push_back(cols[i].at("name").get<std::string>());
        w.column_provenance.push_back(provenance_from_string(cols[i].at("provenance").get<std::string>()));
        w.coefficients(static_cast<Eigen::Index>(i)) = cols[i].at("coefficient").get<double>();
    }
    w.fit_mse = j.at("fit_mse").get<double>();
    w.kkt_residual = j.at("kkt_residual").get<double>();
    return w;
}

}  // namespace synthbase::scm
