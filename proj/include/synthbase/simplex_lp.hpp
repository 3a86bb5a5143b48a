#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "synthbase/errors.hpp"

namespace synthbase::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// min c'x  s.t.  A x = rhs,  lower <= x <= upper  (bounds may be infinite).
struct StandardFormLp {
    SparseMatrix A;
    Eigen::VectorXd rhs;
    Eigen::VectorXd cost;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    std::vector<std::string> names;
    /// Optional crash basis, one column per row (-1: no preference). Rows
    /// without a usable hint start on an artificial.
    std::vector<int> basis_hint;

    Eigen::Index rows() const { return A.rows(); }
    Eigen::Index cols() const { return A.cols(); }

    void validate() const {
        const auto n = A.cols();
        if (rhs.size() != A.rows() || cost.size() != n || lower.size() != n || upper.size() != n) {
            throw DimensionError("LP vectors do not match the constraint matrix");
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            if (lower(j) > upper(j)) throw InfeasibleError("variable bounds cross at column " + std::to_string(j));
            if (!std::isfinite(cost(j))) throw DimensionError("non-finite cost");
        }
    }
};

struct SimplexOptions {
    double primal_tol = 1e-9;
    double dual_tol = 1e-9;
    double pivot_tol = 1e-9;
    int refactor_every = 64;
    int stall_limit = 50;    // consecutive degenerate pivots before Bland's rule
    long max_iterations = 0;  // 0: 50 * (rows + cols)
};

struct LpSolution {
    Eigen::VectorXd x;
    double objective = 0.0;
    Eigen::VectorXd duals;           // row multipliers y with c - A'y = d
    Eigen::VectorXd reduced_costs;   // d
    long iterations = 0;
    bool bland_engaged = false;
    /// Largest violation of the optimality sign conditions on d.
    double dual_infeasibility = 0.0;
};

namespace detail {

enum class Status : unsigned char { Basic, AtLower, AtUpper, Free };

/// Basis inverse as a sparse LU of a reference basis followed by
/// product-form eta updates.
class BasisFactor {
public:
    bool factorize(const SparseMatrix& B) {
        lu_.analyzePattern(B);
        lu_.factorize(B);
        etas_.clear();
        return lu_.info() == Eigen::Success;
    }

    Eigen::VectorXd ftran(const Eigen::VectorXd& a) const {
        Eigen::VectorXd z = lu_.solve(a);
        for (const auto& e : etas_) {
            const double zr = z(e.row);
            if (zr == 0.0) continue;
            z += zr * e.col;
            z(e.row) = zr * e.pivot_inv;
        }
        return z;
    }

    Eigen::VectorXd btran(Eigen::VectorXd c) const {
        for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
            const double cr = c(it->row);
            double v = it->col.dot(c) - it->col(it->row) * cr;
            v += it->pivot_inv * cr;
            c(it->row) = v;
        }
        return lu_.transpose().solve(c);
    }

    /// Column r of the basis replaced; alpha = B^{-1} a_entering.
    void update(Eigen::Index r, const Eigen::VectorXd& alpha) {
        Eta e;
        e.row = r;
        e.pivot_inv = 1.0 / alpha(r);
        e.col = -alpha * e.pivot_inv;
        e.col(r) = 0.0;
        etas_.push_back(std::move(e));
    }

    std::size_t updates() const { return etas_.size(); }

private:
    struct Eta {
        Eigen::Index row = 0;
        double pivot_inv = 1.0;
        Eigen::VectorXd col;  // off-pivot multipliers, zero at `row`
    };
    mutable Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
    std::vector<Eta> etas_;
};

}  // namespace detail

/// Bounded-variable primal revised simplex. Phase 1 minimizes the sum of
/// bound violations of the basic variables (artificials are fixed at zero),
/// phase 2 the true cost. Dantzig pricing; Bland's rule after a stall.
inline LpSolution solve_simplex(const StandardFormLp& lp, const SimplexOptions& opt = {}) {
    using detail::Status;
    lp.validate();
    const Eigen::Index m = lp.rows();
    const Eigen::Index n_struct = lp.cols();
    const Eigen::Index n = n_struct + m;  // structural + one artificial per row

    // Extended column access: artificial i is e_i with bounds [0, 0].
    const auto lower = [&](Eigen::Index j) { return j < n_struct ? lp.lower(j) : 0.0; };
    const auto upper = [&](Eigen::Index j) { return j < n_struct ? lp.upper(j) : 0.0; };
    const auto column = [&](Eigen::Index j) {
        Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
        if (j < n_struct) {
            for (SparseMatrix::InnerIterator it(lp.A, j); it; ++it) a(it.row()) = it.value();
        } else {
            a(j - n_struct) = 1.0;
        }
        return a;
    };
    const auto dot_col = [&](const Eigen::VectorXd& y, Eigen::Index j) {
        if (j >= n_struct) return y(j - n_struct);
        double s = 0.0;
        for (SparseMatrix::InnerIterator it(lp.A, j); it; ++it) s += y(it.row()) * it.value();
        return s;
    };

    std::vector<Status> status(static_cast<std::size_t>(n));
    Eigen::VectorXd x(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double l = lower(j), u = upper(j);
        if (std::isfinite(l)) {
            status[j] = Status::AtLower;
            x(j) = l;
        } else if (std::isfinite(u)) {
            status[j] = Status::AtUpper;
            x(j) = u;
        } else {
            status[j] = Status::Free;
            x(j) = 0.0;
        }
    }

    // Initial basis: hinted columns where given, artificials elsewhere.
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::Index j = n_struct + i;
        if (static_cast<Eigen::Index>(lp.basis_hint.size()) == m) {
            const int h = lp.basis_hint[static_cast<std::size_t>(i)];
            if (h >= 0 && h < n_struct && !used[h]) j = h;
        }
        basis[i] = j;
        used[j] = 1;
    }

    detail::BasisFactor factor;
    const auto assemble = [&]() {
        std::vector<Eigen::Triplet<double>> trips;
        for (Eigen::Index i = 0; i < m; ++i) {
            const Eigen::Index j = basis[i];
            if (j < n_struct) {
                for (SparseMatrix::InnerIterator it(lp.A, j); it; ++it) trips.emplace_back(it.row(), i, it.value());
            } else {
                trips.emplace_back(j - n_struct, i, 1.0);
            }
        }
        SparseMatrix B(m, m);
        B.setFromTriplets(trips.begin(), trips.end());
        return B;
    };
    const auto refactor = [&]() -> bool {
        const bool ok = factor.factorize(assemble());
        if (!ok) return false;
        Eigen::VectorXd r = lp.rhs;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (status[j] == Status::Basic || x(j) == 0.0) continue;
            if (j < n_struct) {
                for (SparseMatrix::InnerIterator it(lp.A, j); it; ++it) r(it.row()) -= it.value() * x(j);
            } else {
                r(j - n_struct) -= x(j);
            }
        }
        const Eigen::VectorXd xb = factor.ftran(r);
        for (Eigen::Index i = 0; i < m; ++i) x(basis[i]) = xb(i);
        return true;
    };

    for (Eigen::Index i = 0; i < m; ++i) status[basis[i]] = Status::Basic;
    if (!refactor()) {
        // Hint produced a singular basis: fall back to the artificial basis.
        for (Eigen::Index i = 0; i < m; ++i) {
            if (basis[i] < n_struct) {
                const Eigen::Index j = basis[i];
                const double l = lp.lower(j), u = lp.upper(j);
                status[j] = std::isfinite(l) ? Status::AtLower : std::isfinite(u) ? Status::AtUpper : Status::Free;
                x(j) = std::isfinite(l) ? l : std::isfinite(u) ? u : 0.0;
            }
            basis[i] = n_struct + i;
            status[basis[i]] = Status::Basic;
        }
        if (!refactor()) throw InfeasibleError("could not factorize the initial basis");
    }

    const long max_iter = opt.max_iterations > 0 ? opt.max_iterations : 50L * (m + n);
    LpSolution sol;
    bool bland = false;
    int degenerate_run = 0;
    Eigen::VectorXd cb(m);
    Eigen::VectorXd y(m);

    for (long iter = 0;; ++iter) {
        if (iter >= max_iter) throw CycleGuardError("simplex iteration limit reached (" + std::to_string(iter) + ")");
        if (static_cast<int>(factor.updates()) >= opt.refactor_every) {
            if (!refactor()) throw CycleGuardError("basis became singular");
        }

        // Phase selection from the current basic values.
        bool infeasible = false;
        for (Eigen::Index i = 0; i < m; ++i) {
            const Eigen::Index j = basis[i];
            if (x(j) < lower(j) - opt.primal_tol) {
                cb(i) = -1.0;
                infeasible = true;
            } else if (x(j) > upper(j) + opt.primal_tol) {
                cb(i) = 1.0;
                infeasible = true;
            } else {
                cb(i) = 0.0;
            }
        }
        if (!infeasible) {
            for (Eigen::Index i = 0; i < m; ++i) cb(i) = basis[i] < n_struct ? lp.cost(basis[i]) : 0.0;
        }
        y = factor.btran(cb);

        // Pricing.
        Eigen::Index entering = -1;
        double best = 0.0;
        double d_enter = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const Status s = status[j];
            if (s == Status::Basic) continue;
            if (j >= n_struct) continue;  // artificials never re-enter
            if (lower(j) == upper(j)) continue;
            const double cj = infeasible ? 0.0 : lp.cost(j);
            const double d = cj - dot_col(y, j);
            double score = 0.0;
            if ((s == Status::AtLower || s == Status::Free) && d < -opt.dual_tol) score = -d;
            if ((s == Status::AtUpper || s == Status::Free) && d > opt.dual_tol) score = d;
            if (score <= 0.0) continue;
            if (bland) {
                entering = j;
                d_enter = d;
                break;
            }
            if (score > best) {
                best = score;
                entering = j;
                d_enter = d;
            }
        }
        if (entering < 0) {
            if (infeasible) throw InfeasibleError("LP is infeasible");
            sol.iterations = iter;
            break;
        }

        // Ratio test along direction sigma for the entering variable.
        const double sigma = d_enter < 0.0 ? 1.0 : -1.0;
        const Eigen::VectorXd alpha = factor.ftran(column(entering));
        double theta = upper(entering) - lower(entering);  // bound flip distance
        Eigen::Index leave = -1;
        bool leave_at_upper = false;
        double leave_pivot = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double a = alpha(i);
            if (std::abs(a) <= opt.pivot_tol) continue;
            const Eigen::Index j = basis[i];
            const double rate = -sigma * a;  // d x_j / d theta
            const double xj = x(j), l = lower(j), u = upper(j);
            double limit = kInf;
            bool at_upper = false;
            if (rate < 0.0) {
                if (xj > u + opt.primal_tol) {
                    limit = (xj - u) / -rate;  // reaches feasibility at u
                    at_upper = true;
                } else if (xj >= l - opt.primal_tol && std::isfinite(l)) {
                    limit = std::max(0.0, xj - l) / -rate;
                }
            } else {
                if (xj < l - opt.primal_tol) {
                    limit = (l - xj) / rate;
                } else if (xj <= u + opt.primal_tol && std::isfinite(u)) {
                    limit = std::max(0.0, u - xj) / rate;
                    at_upper = true;
                }
            }
            if (limit == kInf) continue;
            const bool better = limit < theta - 1e-12 ||
                                (limit <= theta + 1e-12 && leave >= 0 &&
                                 (bland ? j < basis[leave] : std::abs(a) > std::abs(leave_pivot)));
            if (better || (leave < 0 && limit <= theta)) {
                theta = std::min(theta, limit);
                leave = i;
                leave_at_upper = at_upper;
                leave_pivot = a;
            }
        }
        if (theta == kInf) {
            if (infeasible) throw InfeasibleError("phase 1 direction unbounded");
            throw UnboundedError("LP is unbounded");
        }

        if (theta <= 1e-12) {
            if (++degenerate_run > opt.stall_limit && !bland) {
                bland = true;
                sol.bland_engaged = true;
            }
        } else {
            degenerate_run = 0;
            bland = false;
        }

        for (Eigen::Index i = 0; i < m; ++i) x(basis[i]) -= sigma * theta * alpha(i);
        x(entering) += sigma * theta;

        if (leave < 0) {
            // Bound flip; basis unchanged.
            status[entering] = sigma > 0.0 ? Status::AtUpper : Status::AtLower;
            x(entering) = sigma > 0.0 ? upper(entering) : lower(entering);
            continue;
        }
        const Eigen::Index out = basis[leave];
        status[out] = leave_at_upper ? Status::AtUpper : Status::AtLower;
        x(out) = leave_at_upper ? upper(out) : lower(out);
        status[entering] = Status::Basic;
        basis[leave] = entering;
        factor.update(leave, alpha);
    }

    // Final refactorization for clean values and certificates.
    if (!refactor()) throw CycleGuardError("final basis singular");
    for (Eigen::Index i = 0; i < m; ++i) cb(i) = basis[i] < n_struct ? lp.cost(basis[i]) : 0.0;
    y = factor.btran(cb);
    sol.x = x.head(n_struct);
    sol.objective = lp.cost.dot(sol.x);
    sol.duals = y;
    sol.reduced_costs.resize(n_struct);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < n_struct; ++j) {
        const double d = lp.cost(j) - dot_col(y, j);
        sol.reduced_costs(j) = d;
        if (status[j] == Status::Basic || lp.lower(j) == lp.upper(j)) continue;
        if (status[j] == Status::AtLower) worst = std::max(worst, -d);
        if (status[j] == Status::AtUpper) worst = std::max(worst, d);
        if (status[j] == Status::Free) worst = std::max(worst, std::abs(d));
    }
    sol.dual_infeasibility = worst;
    return sol;
}

/// Max violation of A x = rhs and of the bounds.
inline double primal_residual(const StandardFormLp& lp, const Eigen::VectorXd& x) {
    double r = (lp.A * x - lp.rhs).lpNorm<Eigen::Infinity>();
    for (Eigen::Index j = 0; j < lp.cols(); ++j) {
        r = std::max({r, lp.lower(j) - x(j), x(j) - lp.upper(j)});
    }
    return r;
}

}  // namespace synthbase::lp
