#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "synthbase/csv.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/panel_store.hpp"
#include "synthbase/parallel.hpp"
#include "synthbase/simplex_lp.hpp"
#include "synthbase/timeutil.hpp"

namespace synthbase::bess {

/// One battery dispatch problem over a window of steps.
///
/// `history_x` / `history_congestion` hold the steps immediately before the
/// window (last element = step -1); the baseline reads realized consumption
/// from them when a look-back lands outside the window.
struct BessInstance {
    std::vector<Instant> timestamps;  // optional, used for export only
    Eigen::VectorXd price;
    Eigen::VectorXd rebate;
    Eigen::VectorXd load;
    Eigen::VectorXd pv;
    std::vector<char> congestion;
    int baseline_days = 10;
    double efficiency = 0.95;
    double s_max = 5.0;
    double soc_min = 0.0;
    double soc_max = 10.0;
    double soc_initial = 5.0;
    int steps_per_day = 48;
    int congestion_half_width = 12;
    std::vector<double> history_x;
    std::vector<char> history_congestion;
    /// End the window with at least the starting charge, so the horizon end
    /// is not an incentive to drain the battery.
    bool terminal_soc = true;
    /// Action penalty per kW of |s|, suppresses zero-cost cycling. Not part
    /// of the reported objective.
    double action_penalty = 1e-7;

    Eigen::Index steps() const { return price.size(); }

    void validate() const {
        const auto T = steps();
        if (rebate.size() != T || load.size() != T || pv.size() != T ||
            static_cast<Eigen::Index>(congestion.size()) != T) {
            throw DimensionError("battery instance series lengths differ");
        }
        if (timestamps.size() != 0 && static_cast<Eigen::Index>(timestamps.size()) != T) {
            throw DimensionError("battery instance timestamps do not match the horizon");
        }
        if (history_x.size() != history_congestion.size()) {
            throw DimensionError("battery history series lengths differ");
        }
        if (!(s_max > 0.0)) throw ConfigError("s_max must be positive");
        if (!(efficiency > 0.0 && efficiency <= 1.0)) throw ConfigError("efficiency must lie in (0, 1]");
        if (!(soc_min <= soc_initial && soc_initial <= soc_max)) {
            throw ConfigError("soc_initial must lie within [soc_min, soc_max]");
        }
        if (baseline_days < 1) throw ConfigError("baseline_days must be at least 1");
        if (steps_per_day < 1) throw ConfigError("steps_per_day must be positive");
        for (Eigen::Index t = 0; t < T; ++t) {
            if (rebate(t) < 0.0) throw ConfigError("rebate must be non-negative");
            if (!congestion[t] && rebate(t) != 0.0) throw ConfigError("rebate set outside a congestion step");
        }
    }

    bool rewarded(Eigen::Index t) const { return congestion[t] && rebate(t) > 0.0; }
};

/// Column layout of the emitted LP. Indices of -1 mark absent variables.
struct BessLayout {
    std::vector<int> s_plus, s_minus, x, soc, b, delta, slack, elastic;
    /// Baseline composition for rewarded steps: window-relative look-backs
    /// and the constant part from history.
    std::vector<std::vector<int>> baseline_terms;
    std::vector<double> baseline_constant;
};

struct BessProgram {
    lp::StandardFormLp lp;
    BessLayout layout;
    BessInstance instance;
};

struct BessSolution {
    Eigen::VectorXd s;
    Eigen::VectorXd x;
    Eigen::VectorXd soc;
    Eigen::VectorXd b;            // NaN at steps without a baseline
    Eigen::VectorXd delta_plus;
    double objective_value = 0.0;  // sum p x - f delta, excluding the action penalty
    long iterations = 0;
    double dual_infeasibility = 0.0;
};

namespace detail {

/// Combined lookup into [history | window].
struct Timeline {
    const BessInstance& in;
    long offset() const { return static_cast<long>(in.history_x.size()); }
    bool has(long t) const { return t >= -offset() && t < static_cast<long>(in.steps()); }
    bool congested(long t) const {
        return t < 0 ? in.history_congestion[static_cast<std::size_t>(t + offset())] != 0
                     : in.congestion[static_cast<std::size_t>(t)] != 0;
    }
};

}  // namespace detail

/// Look-back days k in 1..n whose ±half-width neighbourhood around
/// t - steps_per_day*k is congestion-free.
inline std::vector<int> congestion_free_days(const BessInstance& in, long t) {
    const detail::Timeline tl{in};
    std::vector<int> days;
    for (int k = 1; k <= in.baseline_days; ++k) {
        const long centre = t - static_cast<long>(in.steps_per_day) * k;
        bool clean = true;
        for (long h = -in.congestion_half_width; h <= in.congestion_half_width; ++h) {
            const long idx = centre + h;
            if (idx >= static_cast<long>(in.steps())) continue;  // cannot happen for k >= 1 with half-width < spd
            if (!tl.has(idx)) {
                throw InfeasibleWarmupError("congestion history too short to evaluate baseline day " +
                                            std::to_string(k) + " at step " + std::to_string(t));
            }
            if (tl.congested(idx)) {
                clean = false;
                break;
            }
        }
        if (clean) days.push_back(k);
    }
    return days;
}

inline BessProgram build_lp(const BessInstance& in) {
    in.validate();
    const int T = static_cast<int>(in.steps());
    BessLayout L;
    L.s_plus.assign(T, -1);
    L.s_minus.assign(T, -1);
    L.x.assign(T, -1);
    L.soc.assign(T, -1);
    L.b.assign(T, -1);
    L.delta.assign(T, -1);
    L.slack.assign(T, -1);
    L.elastic.assign(T, -1);
    L.baseline_terms.assign(T, {});
    L.baseline_constant.assign(T, 0.0);

    std::vector<double> cost, lo, hi;
    std::vector<std::string> names;
    const auto add_var = [&](const std::string& name, double c, double l, double u) {
        cost.push_back(c);
        lo.push_back(l);
        hi.push_back(u);
        names.push_back(name);
        return static_cast<int>(cost.size()) - 1;
    };

    double price_scale = 1.0;
    for (int t = 0; t < T; ++t) price_scale = std::max({price_scale, std::abs(in.price(t)), in.rebate(t)});
    // Exact-penalty weight for the elastic variable; well above any dual of
    // the baseline rows for realistic tariffs.
    const double elastic_cost = 1e4 * price_scale;

    const detail::Timeline tl{in};
    for (int t = 0; t < T; ++t) {
        const std::string ts = std::to_string(t);
        L.s_plus[t] = add_var("s_plus_" + ts, in.action_penalty, 0.0, in.s_max);
        L.s_minus[t] = add_var("s_minus_" + ts, in.action_penalty, 0.0, in.s_max);
        L.x[t] = add_var("x_" + ts, in.price(t), -lp::kInf, lp::kInf);
        double soc_lo = in.soc_min;
        if (in.terminal_soc && t == T - 1) soc_lo = std::max(soc_lo, in.soc_initial);
        L.soc[t] = add_var("soc_" + ts, 0.0, soc_lo, in.soc_max);
        if (!in.rewarded(t)) continue;

        const auto days = congestion_free_days(in, t);
        if (days.empty()) {
            throw InfeasibleWarmupError("no congestion-free baseline day for rewarded step " + ts);
        }
        for (int k : days) {
            const long idx = t - static_cast<long>(in.steps_per_day) * k;
            if (!tl.has(idx)) {
                throw InfeasibleWarmupError("consumption history too short for baseline at step " + ts);
            }
            if (idx >= 0) {
                L.baseline_terms[t].push_back(static_cast<int>(idx));
            } else {
                L.baseline_constant[t] += in.history_x[static_cast<std::size_t>(idx + tl.offset())];
            }
        }
        L.baseline_constant[t] /= in.baseline_days;
        L.b[t] = add_var("b_" + ts, 0.0, -lp::kInf, lp::kInf);
        L.delta[t] = add_var("delta_" + ts, -in.rebate(t), 0.0, lp::kInf);
        L.slack[t] = add_var("slack_" + ts, 0.0, 0.0, lp::kInf);
        L.elastic[t] = add_var("elastic_" + ts, elastic_cost, 0.0, lp::kInf);
    }

    std::vector<Eigen::Triplet<double>> trips;
    std::vector<double> rhs;
    std::vector<int> hint;
    int row = 0;
    const double eta = in.efficiency;
    for (int t = 0; t < T; ++t) {
        // x - s+ + s- = l - g
        trips.emplace_back(row, L.x[t], 1.0);
        trips.emplace_back(row, L.s_plus[t], -1.0);
        trips.emplace_back(row, L.s_minus[t], 1.0);
        rhs.push_back(in.load(t) - in.pv(t));
        hint.push_back(L.x[t]);
        ++row;
        // soc_t - soc_{t-1} - eta (s+ - s-) = 0   (soc_{-1} = soc_initial)
        trips.emplace_back(row, L.soc[t], 1.0);
        if (t > 0) trips.emplace_back(row, L.soc[t - 1], -1.0);
        trips.emplace_back(row, L.s_plus[t], -eta);
        trips.emplace_back(row, L.s_minus[t], eta);
        rhs.push_back(t == 0 ? in.soc_initial : 0.0);
        hint.push_back(L.soc[t]);
        ++row;
    }
    for (int t = 0; t < T; ++t) {
        if (L.b[t] < 0) continue;
        // b - (1/n) sum x_{t - spd k} = history part
        trips.emplace_back(row, L.b[t], 1.0);
        for (int idx : L.baseline_terms[t]) trips.emplace_back(row, L.x[idx], -1.0 / in.baseline_days);
        rhs.push_back(L.baseline_constant[t]);
        hint.push_back(L.b[t]);
        ++row;
        // delta - b + x + slack - elastic = 0, i.e. delta <= b - x + elastic
        trips.emplace_back(row, L.delta[t], 1.0);
        trips.emplace_back(row, L.b[t], -1.0);
        trips.emplace_back(row, L.x[t], 1.0);
        trips.emplace_back(row, L.slack[t], 1.0);
        trips.emplace_back(row, L.elastic[t], -1.0);
        rhs.push_back(0.0);
        hint.push_back(L.slack[t]);
        ++row;
    }

    BessProgram prog;
    prog.instance = in;
    prog.layout = std::move(L);
    auto& P = prog.lp;
    const auto n = static_cast<Eigen::Index>(cost.size());
    P.A.resize(row, n);
    P.A.setFromTriplets(trips.begin(), trips.end());
    P.A.makeCompressed();
    P.rhs = Eigen::Map<const Eigen::VectorXd>(rhs.data(), row);
    P.cost = Eigen::Map<const Eigen::VectorXd>(cost.data(), n);
    P.lower = Eigen::Map<const Eigen::VectorXd>(lo.data(), n);
    P.upper = Eigen::Map<const Eigen::VectorXd>(hi.data(), n);
    P.names = std::move(names);
    P.basis_hint = std::move(hint);
    return prog;
}

/// Recomputes every stated relation from the schedule and throws
/// VerificationError when one fails.
inline void verify_solution(const BessInstance& in, const BessSolution& s, double tol = 1e-7) {
    const auto T = in.steps();
    double soc_prev = in.soc_initial;
    for (Eigen::Index t = 0; t < T; ++t) {
        const std::string where = " at step " + std::to_string(t);
        if (std::abs(s.x(t) - (in.load(t) - in.pv(t) + s.s(t))) > tol) throw VerificationError("balance violated" + where);
        if (std::abs(s.soc(t) - soc_prev - in.efficiency * s.s(t)) > tol) throw VerificationError("soc recursion violated" + where);
        if (s.soc(t) < in.soc_min - tol || s.soc(t) > in.soc_max + tol) throw VerificationError("soc bound violated" + where);
        if (std::abs(s.s(t)) > in.s_max + tol) throw VerificationError("power bound violated" + where);
        if (in.rewarded(t)) {
            const double want = std::max(0.0, s.b(t) - s.x(t));
            if (std::abs(s.delta_plus(t) - want) > tol) {
                throw VerificationError("rewarded reduction differs from max(0, b - x)" + where);
            }
        } else if (s.delta_plus(t) != 0.0) {
            throw VerificationError("reduction reported at an unrewarded step" + where);
        }
        soc_prev = s.soc(t);
    }
}

/// Solves the program and maps the LP vector back to a schedule. The
/// schedule is verified before it is returned.
inline BessSolution solve_lp(const BessProgram& prog, const lp::SimplexOptions& opt = {}) {
    const auto& in = prog.instance;
    const auto& L = prog.layout;
    const auto sol = lp::solve_simplex(prog.lp, opt);
    const auto T = in.steps();
    BessSolution out;
    out.s.resize(T);
    out.x.resize(T);
    out.soc.resize(T);
    out.b = Eigen::VectorXd::Constant(T, std::numeric_limits<double>::quiet_NaN());
    out.delta_plus = Eigen::VectorXd::Zero(T);
    out.iterations = sol.iterations;
    out.dual_infeasibility = sol.dual_infeasibility;
    const auto snap = [](double v) { return std::abs(v) < 1e-12 ? 0.0 : v; };
    for (Eigen::Index t = 0; t < T; ++t) {
        const double s = snap(sol.x(L.s_plus[t]) - sol.x(L.s_minus[t]));
        out.s(t) = s;
        out.x(t) = in.load(t) - in.pv(t) + s;
        out.soc(t) = sol.x(L.soc[t]);
        if (L.b[t] >= 0) {
            double b = L.baseline_constant[t];
            for (int idx : L.baseline_terms[t]) b += (in.load(idx) - in.pv(idx) + snap(sol.x(L.s_plus[idx]) - sol.x(L.s_minus[idx]))) / in.baseline_days;
            out.b(t) = b;
            const double d = sol.x(L.delta[t]);
            out.delta_plus(t) = d < 1e-12 ? 0.0 : d;
        }
    }
    // Reconstruct soc from the recursion to remove factorization round-off.
    double soc = in.soc_initial;
    for (Eigen::Index t = 0; t < T; ++t) {
        soc += in.efficiency * out.s(t);
        if (std::abs(soc - out.soc(t)) <= 1e-9) out.soc(t) = soc;
        else soc = out.soc(t);
    }
    double obj = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) obj += in.price(t) * out.x(t) - in.rebate(t) * out.delta_plus(t);
    out.objective_value = obj;
    verify_solution(in, out);
    return out;
}

inline BessSolution solve(const BessInstance& in, const lp::SimplexOptions& opt = {}) {
    return solve_lp(build_lp(in), opt);
}

/// Objective of an arbitrary schedule s (true max(0, b - x) rebate), or
/// nullopt when the schedule violates a bound. Used for enumeration checks.
inline std::optional<double> schedule_cost(const BessInstance& in, const Eigen::VectorXd& s, double tol = 1e-12) {
    const auto T = in.steps();
    Eigen::VectorXd x(T);
    double soc = in.soc_initial;
    for (Eigen::Index t = 0; t < T; ++t) {
        if (std::abs(s(t)) > in.s_max + tol) return std::nullopt;
        soc += in.efficiency * s(t);
        if (soc < in.soc_min - tol || soc > in.soc_max + tol) return std::nullopt;
        x(t) = in.load(t) - in.pv(t) + s(t);
    }
    if (in.terminal_soc && soc < in.soc_initial - tol) return std::nullopt;
    const detail::Timeline tl{in};
    double obj = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        obj += in.price(t) * x(t);
        if (!in.rewarded(t)) continue;
        double b = 0.0;
        for (int k : congestion_free_days(in, t)) {
            const long idx = t - static_cast<long>(in.steps_per_day) * k;
            if (!tl.has(idx)) throw InfeasibleWarmupError("history too short");
            b += idx >= 0 ? x(idx) : in.history_x[static_cast<std::size_t>(idx + tl.offset())];
        }
        b /= in.baseline_days;
        obj -= in.rebate(t) * std::max(0.0, b - x(t));
    }
    return obj;
}

inline void export_solution(const BessInstance& in, const BessSolution& s, const std::string& path) {
    auto os = csv::open_for_write(path);
    csv::write_row(os, {"timestamp", "s", "x", "soc", "b", "delta_plus"});
    for (Eigen::Index t = 0; t < in.steps(); ++t) {
        const std::string ts = in.timestamps.empty() ? std::to_string(t) : format_instant(in.timestamps[t]);
        csv::write_row(os, {ts, csv::format_double(s.s(t)), csv::format_double(s.x(t)), csv::format_double(s.soc(t)),
                            std::isnan(s.b(t)) ? std::string() : csv::format_double(s.b(t)),
                            csv::format_double(s.delta_plus(t))});
    }
}

/// Reads `timestamp,price` and aligns it to the panel clock.
inline Eigen::VectorXd read_prices(const std::string& path, const std::vector<Instant>& clock) {
    const auto table = csv::read(path);
    if (table.header.size() != 2 || table.header[0] != "timestamp" || table.header[1] != "price") {
        throw SchemaError("price file must have header timestamp,price: " + path);
    }
    std::unordered_map<long long, double> by_time;
    for (const auto& row : table.rows) {
        by_time[parse_instant(row[0]).time_since_epoch().count()] = csv::parse_double(row[1]);
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(clock.size()));
    for (std::size_t t = 0; t < clock.size(); ++t) {
        const auto it = by_time.find(clock[t].time_since_epoch().count());
        if (it == by_time.end() || std::isnan(it->second)) {
            throw CoverageError("prices do not cover " + format_instant(clock[t]));
        }
        out(static_cast<Eigen::Index>(t)) = it->second;
    }
    return out;
}

inline void write_prices(const std::string& path, const std::vector<Instant>& clock, const Eigen::VectorXd& price) {
    auto os = csv::open_for_write(path);
    csv::write_row(os, {"timestamp", "price"});
    for (std::size_t t = 0; t < clock.size(); ++t) {
        csv::write_row(os, {format_instant(clock[t]), csv::format_double(price(static_cast<Eigen::Index>(t)))});
    }
}

struct FleetOptions {
    int window_steps = 336;
    double rebate = 0.0;                     // $/kWh paid at congestion steps
    std::vector<std::string> participants;  // buildings that receive the rebate
    unsigned jobs = 1;
};

struct FleetResult {
    panel::PanelDataset panel;
    Eigen::MatrixXd action;  // s_t per building
    long lp_count = 0;
};

/// Rolling-window dispatch of one battery per building. Prosumption of the
/// returned panel is load - pv + s.
inline FleetResult simulate_fleet_detailed(const panel::PanelDataset& p, const BessInstance& battery,
                                           const Eigen::VectorXd& price, const FleetOptions& opt = {}) {
    const auto T = static_cast<Eigen::Index>(p.steps());
    const auto B = static_cast<Eigen::Index>(p.building_count());
    if (price.size() != T) throw CoverageError("prices do not cover the panel horizon");
    if (opt.window_steps < 1) throw ConfigError("window_steps must be positive");
    const std::unordered_set<std::string> paid(opt.participants.begin(), opt.participants.end());
    for (const auto& id : opt.participants) p.index_of(id);

    FleetResult res;
    res.panel = p;
    res.action = Eigen::MatrixXd::Zero(T, B);
    std::vector<long> lps(static_cast<std::size_t>(B), 0);

    parallel_for(static_cast<std::size_t>(B), opt.jobs, [&](std::size_t bi) {
        const auto b = static_cast<Eigen::Index>(bi);
        const bool participant = paid.count(p.buildings[bi]) > 0;
        std::vector<double> x_hist;
        std::vector<char> c_hist;
        double soc = battery.soc_initial;
        for (Eigen::Index start = 0; start < T; start += opt.window_steps) {
            const Eigen::Index len = std::min<Eigen::Index>(opt.window_steps, T - start);
            BessInstance in = battery;
            in.steps_per_day = static_cast<int>(p.steps_per_day());
            in.timestamps.assign(p.timestamps.begin() + start, p.timestamps.begin() + start + len);
            in.price = price.segment(start, len);
            in.load = p.load.col(b).segment(start, len);
            in.pv = p.pv.col(b).segment(start, len);
            in.congestion.resize(static_cast<std::size_t>(len));
            in.rebate = Eigen::VectorXd::Zero(len);
            for (Eigen::Index t = 0; t < len; ++t) {
                const bool c = p.congestion(start + t, b);
                in.congestion[static_cast<std::size_t>(t)] = c;
                if (c && participant) in.rebate(t) = opt.rebate;
            }
            in.soc_initial = soc;
            // Keep just enough history for the baseline look-back.
            const std::size_t keep = static_cast<std::size_t>(in.steps_per_day) * (in.baseline_days + 1);
            const std::size_t from = x_hist.size() > keep ? x_hist.size() - keep : 0;
            in.history_x.assign(x_hist.begin() + static_cast<long>(from), x_hist.end());
            in.history_congestion.assign(c_hist.begin() + static_cast<long>(from), c_hist.end());
            BessSolution sol;
            try {
                sol = solve(in);
            } catch (const Error& e) {
                throw Error("building " + p.buildings[bi] + ": " + e.what());
            }
            ++lps[bi];
            for (Eigen::Index t = 0; t < len; ++t) {
                res.action(start + t, b) = sol.s(t);
                x_hist.push_back(sol.x(t));
                c_hist.push_back(in.congestion[static_cast<std::size_t>(t)]);
            }
            soc = len > 0 ? sol.soc(len - 1) : soc;
        }
    });

    res.panel.prosumption = p.load - p.pv + res.action;
    for (long c : lps) res.lp_count += c;
    return res;
}

inline panel::PanelDataset simulate_fleet(const panel::PanelDataset& p, const BessInstance& battery,
                                          const std::string& price_csv, const FleetOptions& opt = {}) {
    return simulate_fleet_detailed(p, battery, read_prices(price_csv, p.timestamps), opt).panel;
}

}  // namespace synthbase::bess
