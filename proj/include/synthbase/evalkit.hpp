#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "synthbase/augmentation.hpp"
#include "synthbase/benchmarks.hpp"
#include "synthbase/csv.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/nonlinear_scm.hpp"
#include "synthbase/panel_store.hpp"
#include "synthbase/parallel.hpp"
#include "synthbase/scm_solver.hpp"

namespace synthbase::eval {

using panel::IndexRange;
using panel::PanelDataset;

enum class Method {
    ScmClassic,
    ScmS1R,
    ScmUnc,
    ScmAugExf,
    ScmAugTpast,
    ScmAugDpast,
    NnScm,
    NnScmAug,
    MovingAverage,
    Mid5Of10,
    KmeansLasso,
};

inline const std::vector<std::pair<Method, std::string>>& method_names() {
    static const std::vector<std::pair<Method, std::string>> names{
        {Method::ScmClassic, "scm_classic"},   {Method::ScmS1R, "scm_s1r"},
        {Method::ScmUnc, "scm_unc"},           {Method::ScmAugExf, "scm_aug_exf"},
        {Method::ScmAugTpast, "scm_aug_tpast"}, {Method::ScmAugDpast, "scm_aug_dpast"},
        {Method::NnScm, "nn_scm"},             {Method::NnScmAug, "nn_scm_aug"},
        {Method::MovingAverage, "mavg"},       {Method::Mid5Of10, "mid5of10"},
        {Method::KmeansLasso, "kmeans_lasso"},
    };
    return names;
}

inline std::string to_string(Method m) {
    for (const auto& [id, name] : method_names()) {
        if (id == m) return name;
    }
    return "?";
}

/// Accepts the listed ids plus "scm_aug" for the fully augmented linear fit.
inline Method method_from_string(const std::string& s) {
    if (s == "scm_aug") return Method::ScmAugDpast;
    for (const auto& [id, name] : method_names()) {
        if (name == s) return id;
    }
    throw ConfigError("unknown method '" + s + "'");
}

inline bool is_linear_scm(Method m) {
    return m == Method::ScmClassic || m == Method::ScmS1R || m == Method::ScmUnc || m == Method::ScmAugExf ||
           m == Method::ScmAugTpast || m == Method::ScmAugDpast;
}
inline bool is_neural(Method m) { return m == Method::NnScm || m == Method::NnScmAug; }

/// Knobs shared by every method of one experiment.
struct MethodSettings {
    double lambda_basic = 1350.0;
    double lambda_augmented = 450.0;
    bool standardize_penalty = true;  // ridge on standardized columns
    int treated_lags = 336;
    int donor_lag_max = 336;
    std::vector<std::string> exogenous = aug::default_exogenous_features();
    nn::TrainConfig nn;
    int mavg_days = 10;
    int mid_x = 5;
    int mid_y = 10;
    int kmeans_k = 8;
    std::optional<double> lasso_alpha;
    std::uint64_t seed = 0;
    aug::PredictionMode primary_mode = aug::PredictionMode::Recursive;
};

inline aug::AugmentationSpec design_spec(Method m, const MethodSettings& s) {
    aug::AugmentationSpec spec;
    spec.exogenous_features = s.exogenous;
    spec.treated_lag_count = s.treated_lags;
    spec.donor_lag_search_max = s.donor_lag_max;
    switch (m) {
        case Method::ScmAugDpast:
        case Method::NnScmAug:
            spec.use_donor_lags = true;
            [[fallthrough]];
        case Method::ScmAugTpast:
            spec.use_treated_lags = true;
            [[fallthrough]];
        case Method::ScmAugExf:
            spec.use_exogenous = true;
            break;
        default:
            break;
    }
    return spec;
}

inline scm::ConstraintMode constraint_for(Method m, const MethodSettings& s) {
    switch (m) {
        case Method::ScmClassic: return {scm::Constraint::Classic, s.lambda_basic};
        case Method::ScmUnc: return {scm::Constraint::Unconstrained, s.lambda_basic};
        case Method::ScmS1R: return {scm::Constraint::SumToOne, s.lambda_basic};
        default: return {scm::Constraint::SumToOne, s.lambda_augmented};
    }
}

// ------------------------------------------------------- weight concentration

struct WeightConcentration {
    Eigen::VectorXd curve;  // cumulative |w| share, donors sorted by |w| descending
    int donors_to_80pct = 0;
    double max_abs_weight = 0.0;
};

inline WeightConcentration weight_concentration(const Eigen::VectorXd& donor_weights) {
    if (donor_weights.size() == 0) throw DimensionError("no donor coefficients");
    std::vector<double> a(static_cast<std::size_t>(donor_weights.size()));
    for (Eigen::Index i = 0; i < donor_weights.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(donor_weights(i));
    std::sort(a.begin(), a.end(), std::greater<>());
    const double total = std::accumulate(a.begin(), a.end(), 0.0);
    WeightConcentration out;
    out.curve.resize(donor_weights.size());
    out.max_abs_weight = a.front();
    double run = 0.0;
    out.donors_to_80pct = static_cast<int>(a.size());
    bool found = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        run += a[i];
        const double share = total > 0.0 ? run / total : 0.0;
        out.curve(static_cast<Eigen::Index>(i)) = share;
        // Small slack so exact shares like 0.8 are not lost to rounding.
        if (!found && share >= 0.8 - 1e-12) {
            out.donors_to_80pct = static_cast<int>(i + 1);
            found = true;
        }
    }
    return out;
}

inline WeightConcentration weight_concentration(const scm::ScmWeights& w) {
    return weight_concentration(w.donor_coefficients());
}

// ------------------------------------------------------------- single cell

struct CellResult {
    std::string building;
    std::string method;
    double mse = 0.0;           // event steps, primary prediction mode
    double mse_one_step = 0.0;  // first step of every event, realized history
    double mse_test = 0.0;      // whole test window (diagnostic)
    std::size_t event_steps = 0;
    std::optional<WeightConcentration> weights;
};

struct FittedLinear {
    aug::DesignPlan plan;
    scm::ScmWeights weights;
};

inline FittedLinear fit_linear(const PanelDataset& p, const std::string& treated, Method m, const MethodSettings& s,
                               std::optional<std::vector<std::size_t>> donors = std::nullopt) {
    FittedLinear f;
    f.plan = aug::plan_design(p, treated, design_spec(m, s), std::move(donors));
    const auto d = aug::build_design(p, f.plan, p.splits.train);
    f.weights = scm::fit_design(d.matrix, d.target, d.column_provenance, d.column_names, constraint_for(m, s),
                                s.standardize_penalty);
    return f;
}

struct FittedNeural {
    aug::DesignPlan plan;
    std::vector<nn::MlpModel> models;
};

inline FittedNeural fit_neural(const PanelDataset& p, const std::string& treated, Method m, const MethodSettings& s,
                               std::optional<std::vector<std::size_t>> donors = std::nullopt) {
    FittedNeural f;
    f.plan = aug::plan_design(p, treated, design_spec(m, s), std::move(donors));
    const auto tr = aug::build_design(p, f.plan, p.splits.train);
    const auto va = aug::build_design(p, f.plan, p.splits.validation);
    nn::TrainConfig cfg = s.nn;
    cfg.donor_layer = static_cast<int>(f.plan.donors.size());
    cfg.seed = s.seed * 7919ULL + p.index_of(treated) * 104729ULL + static_cast<std::uint64_t>(m);
    f.models = nn::train_mlp_restarts(tr.matrix, tr.target, va.matrix, va.target, cfg);
    return f;
}

namespace detail {

struct ErrorSums {
    double event = 0.0, one_step = 0.0, test = 0.0;
    std::size_t n_event = 0, n_one = 0, n_test = 0;
};

template <aug::RowPredictor P>
ErrorSums score_design_model(const PanelDataset& p, const aug::DesignPlan& plan, const P& predictor,
                             const std::vector<IndexRange>& events, aug::PredictionMode primary) {
    ErrorSums e;
    const auto y = p.prosumption.col(static_cast<Eigen::Index>(plan.treated));
    for (const auto& ev : events) {
        const auto traj = aug::predict_counterfactual(predictor, p, plan, ev, primary);
        for (Eigen::Index i = 0; i < traj.size(); ++i) {
            const double d = traj(i) - y(static_cast<Eigen::Index>(ev.begin) + i);
            e.event += d * d;
            ++e.n_event;
        }
        const auto one = aug::predict_counterfactual(predictor, p, plan, ev, aug::PredictionMode::OneStep);
        const double d = one(0) - y(static_cast<Eigen::Index>(ev.begin));
        e.one_step += d * d;
        ++e.n_one;
    }
    const auto test = aug::build_design(p, plan, p.splits.test);
    for (Eigen::Index i = 0; i < test.matrix.rows(); ++i) {
        const double d = predictor(Eigen::RowVectorXd(test.matrix.row(i))) - test.target(i);
        e.test += d * d;
        ++e.n_test;
    }
    return e;
}

template <class Series>
ErrorSums score_series(const PanelDataset& p, std::size_t treated, const Series& baseline_over_test,
                       const std::vector<IndexRange>& events) {
    ErrorSums e;
    const auto& test = p.splits.test;
    const auto y = p.prosumption.col(static_cast<Eigen::Index>(treated));
    for (std::size_t t = test.begin; t < test.end; ++t) {
        const double d = baseline_over_test(static_cast<Eigen::Index>(t - test.begin)) - y(static_cast<Eigen::Index>(t));
        e.test += d * d;
        ++e.n_test;
    }
    for (const auto& ev : events) {
        for (std::size_t t = ev.begin; t < ev.end; ++t) {
            const double d =
                baseline_over_test(static_cast<Eigen::Index>(t - test.begin)) - y(static_cast<Eigen::Index>(t));
            e.event += d * d;
            ++e.n_event;
            if (t == ev.begin) {
                e.one_step += d * d;
                ++e.n_one;
            }
        }
    }
    return e;
}

}  // namespace detail

/// Fits one method for one treated building and scores it on the test
/// events. `donors` restricts the pool (default: every other building).
inline CellResult evaluate_cell(const PanelDataset& p, const std::string& treated, Method m, const MethodSettings& s,
                                std::optional<std::vector<std::size_t>> donors = std::nullopt) {
    const std::size_t b = p.index_of(treated);
    const auto events = aug::event_windows(p, b, p.splits.test);
    if (events.empty()) throw CalendarError("no congestion event in the test range for " + treated);
    CellResult cell;
    cell.building = treated;
    cell.method = to_string(m);
    detail::ErrorSums e;
    if (is_linear_scm(m)) {
        const auto f = fit_linear(p, treated, m, s, donors);
        e = detail::score_design_model(p, f.plan, aug::LinearPredictor{&f.weights}, events, s.primary_mode);
        cell.weights = weight_concentration(f.weights);
    } else if (is_neural(m)) {
        const auto f = fit_neural(p, treated, m, s, donors);
        e = detail::score_design_model(p, f.plan, nn::MlpEnsemblePredictor{&f.models}, events, s.primary_mode);
    } else {
        Eigen::VectorXd series;
        const auto& test = p.splits.test;
        switch (m) {
            case Method::MovingAverage:
                series = bench::moving_average_baseline(p, treated, s.mavg_days, test);
                break;
            case Method::Mid5Of10:
                series = bench::mid_x_of_y_baseline(p, treated, s.mid_x, s.mid_y, test);
                break;
            case Method::KmeansLasso: {
                bench::KmeansLassoOptions opt;
                opt.k = s.kmeans_k;
                opt.alpha = s.lasso_alpha;
                opt.seed = s.seed;
                opt.donors = donors;
                const auto fit = bench::fit_kmeans_lasso(p, treated, opt);
                series = bench::predict_kmeans_lasso(fit, p, test);
                break;
            }
            default:
                throw ConfigError("unhandled method");
        }
        e = detail::score_series(p, b, series, events);
    }
    cell.event_steps = e.n_event;
    cell.mse = e.event / static_cast<double>(e.n_event);
    cell.mse_one_step = e.one_step / static_cast<double>(e.n_one);
    cell.mse_test = e.n_test > 0 ? e.test / static_cast<double>(e.n_test) : std::numeric_limits<double>::quiet_NaN();
    return cell;
}

// --------------------------------------------------------------- reporting

inline double diff_percent(double benchmark_mse, double method_mse) {
    return (benchmark_mse - method_mse) / benchmark_mse * 100.0;
}

struct Aggregate {
    std::string method;
    double mean = 0.0, min = 0.0, max = 0.0, std = 0.0;
    double diff_pct = std::numeric_limits<double>::quiet_NaN();
    std::size_t buildings = 0;
};

struct WeightShare {
    Eigen::VectorXd mean_curve;
    double mean_donors_to_80pct = 0.0;
    std::map<std::string, int> donors_to_80pct;  // per building
    std::map<std::string, double> max_abs_weight;
};

struct ShrinkRow {
    std::string method;
    std::size_t pool_size = 0;
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> per_seed;  // building-averaged MSE per seed
};

struct ExperimentReport {
    std::vector<CellResult> per_building;
    std::vector<Aggregate> aggregate;
    std::string benchmark;
    std::map<std::string, WeightShare> weight_share;
    std::vector<ShrinkRow> shrink_curve;

    const Aggregate& aggregate_for(const std::string& method) const {
        for (const auto& a : aggregate) {
            if (a.method == method) return a;
        }
        throw ConfigError("method '" + method + "' not in report");
    }
};

/// Recomputes aggregates and weight shares from `per_building`, keeping the
/// order in which methods first appear.
inline void summarize(ExperimentReport& r) {
    r.aggregate.clear();
    r.weight_share.clear();
    std::vector<std::string> order;
    for (const auto& c : r.per_building) {
        if (std::find(order.begin(), order.end(), c.method) == order.end()) order.push_back(c.method);
    }
    for (const auto& m : order) {
        std::vector<double> v;
        WeightShare ws;
        int with_weights = 0;
        for (const auto& c : r.per_building) {
            if (c.method != m) continue;
            v.push_back(c.mse);
            if (c.weights) {
                if (ws.mean_curve.size() == 0) ws.mean_curve = Eigen::VectorXd::Zero(c.weights->curve.size());
                if (ws.mean_curve.size() == c.weights->curve.size()) ws.mean_curve += c.weights->curve;
                ws.donors_to_80pct[c.building] = c.weights->donors_to_80pct;
                ws.max_abs_weight[c.building] = c.weights->max_abs_weight;
                ws.mean_donors_to_80pct += c.weights->donors_to_80pct;
                ++with_weights;
            }
        }
        Aggregate a;
        a.method = m;
        a.buildings = v.size();
        a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        a.min = *std::min_element(v.begin(), v.end());
        a.max = *std::max_element(v.begin(), v.end());
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        r.aggregate.push_back(a);
        if (with_weights > 0) {
            ws.mean_curve /= static_cast<double>(with_weights);
            ws.mean_donors_to_80pct /= with_weights;
            r.weight_share[m] = std::move(ws);
        }
    }
    if (!r.benchmark.empty()) {
        const auto it = std::find_if(r.aggregate.begin(), r.aggregate.end(),
                                     [&](const Aggregate& a) { return a.method == r.benchmark; });
        if (it == r.aggregate.end()) throw ConfigError("benchmark '" + r.benchmark + "' was not evaluated");
        const double ref = it->mean;
        for (auto& a : r.aggregate) {
            if (a.method != r.benchmark) a.diff_pct = diff_percent(ref, a.mean);
        }
    }
}

/// Every listed building is treated once against the others, for every
/// method. Cells run on a bounded worker pool; the report is assembled in
/// (building, method) order regardless of scheduling.
inline ExperimentReport run_rotation(const PanelDataset& p, const std::vector<Method>& methods,
                                     const std::vector<std::string>& buildings, const MethodSettings& s,
                                     const std::string& benchmark = "", unsigned jobs = 1) {
    if (methods.empty() || buildings.empty()) throw ConfigError("rotation needs methods and buildings");
    ExperimentReport r;
    r.benchmark = benchmark;
    r.per_building.resize(buildings.size() * methods.size());
    parallel_for(r.per_building.size(), jobs, [&](std::size_t i) {
        const auto& b = buildings[i / methods.size()];
        const Method m = methods[i % methods.size()];
        try {
            r.per_building[i] = evaluate_cell(p, b, m, s);
        } catch (const Error& e) {
            throw Error("building " + b + ", method " + to_string(m) + ": " + e.what());
        }
    });
    summarize(r);
    return r;
}

/// MSE against donor-pool size: each size below the full pool draws `seeds`
/// uniform subsamples without replacement; the full pool is fitted once.
inline std::vector<ShrinkRow> shrink_study(const PanelDataset& p, const std::vector<Method>& methods,
                                           const std::vector<std::string>& treated,
                                           const std::vector<std::size_t>& pool_sizes, int seeds,
                                           const MethodSettings& s, unsigned jobs = 1) {
    if (seeds < 1) throw ConfigError("shrink study needs at least one seed");
    const std::size_t J = p.building_count() - 1;
    for (auto n : pool_sizes) {
        if (n < 1 || n > J) throw ConfigError("pool size " + std::to_string(n) + " outside [1, J]");
    }
    struct Job {
        std::size_t method, size, seed, building;
    };
    std::vector<Job> jobs_list;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        for (std::size_t si = 0; si < pool_sizes.size(); ++si) {
            const std::size_t n_seeds = pool_sizes[si] == J ? 1 : static_cast<std::size_t>(seeds);
            for (std::size_t k = 0; k < n_seeds; ++k) {
                for (std::size_t b = 0; b < treated.size(); ++b) jobs_list.push_back({mi, si, k, b});
            }
        }
    }
    std::vector<double> mse(jobs_list.size());
    parallel_for(jobs_list.size(), jobs, [&](std::size_t i) {
        const auto& jb = jobs_list[i];
        const std::size_t tb = p.index_of(treated[jb.building]);
        std::vector<std::size_t> pool;
        for (std::size_t b = 0; b < p.building_count(); ++b) {
            if (b != tb) pool.push_back(b);
        }
        const std::size_t n = pool_sizes[jb.size];
        if (n < J) {
            std::mt19937_64 rng(s.seed * 1000003ULL + jb.seed * 7919ULL + n * 131ULL + tb);
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(n);
            std::sort(pool.begin(), pool.end());
        }
        MethodSettings cs = s;
        cs.seed = s.seed + jb.seed;
        mse[i] = evaluate_cell(p, treated[jb.building], methods[jb.method], cs, pool).mse;
    });

    std::vector<ShrinkRow> rows;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        for (std::size_t si = 0; si < pool_sizes.size(); ++si) {
            ShrinkRow row;
            row.method = to_string(methods[mi]);
            row.pool_size = pool_sizes[si];
            std::map<std::size_t, std::pair<double, int>> by_seed;
            for (std::size_t i = 0; i < jobs_list.size(); ++i) {
                if (jobs_list[i].method != mi || jobs_list[i].size != si) continue;
                by_seed[jobs_list[i].seed].first += mse[i];
                ++by_seed[jobs_list[i].seed].second;
            }
            for (const auto& [k, v] : by_seed) row.per_seed.push_back(v.first / v.second);
            row.mean = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) /
                       static_cast<double>(row.per_seed.size());
            double ss = 0.0;
            for (double x : row.per_seed) ss += (x - row.mean) * (x - row.mean);
            row.std = row.per_seed.size() > 1 ? std::sqrt(ss / static_cast<double>(row.per_seed.size() - 1)) : 0.0;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// ----------------------------------------------------------------- output

inline std::string timestamp_tag() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

inline const std::vector<std::string>& report_csv_header() {
    static const std::vector<std::string> h{"building",    "method", "mse", "mse_one_step", "mse_test",
                                            "event_steps", "donors_to_80pct", "max_abs_weight"};
    return h;
}

inline nlohmann::json report_json(const ExperimentReport& r) {
    nlohmann::json j;
    j["benchmark"] = r.benchmark;
    j["aggregate"] = nlohmann::json::array();
    for (const auto& a : r.aggregate) {
        nlohmann::json row{{"method", a.method}, {"mse", a.mean}, {"min", a.min}, {"max", a.max},
                           {"std", a.std},       {"buildings", a.buildings}};
        row["diff_pct"] = std::isnan(a.diff_pct) ? nlohmann::json(nullptr) : nlohmann::json(a.diff_pct);
        j["aggregate"].push_back(row);
    }
    j["weight_share"] = nlohmann::json::object();
    for (const auto& [m, ws] : r.weight_share) {
        j["weight_share"][m] = {{"mean_curve", std::vector<double>(ws.mean_curve.data(), ws.mean_curve.data() + ws.mean_curve.size())},
                                {"mean_donors_to_80pct", ws.mean_donors_to_80pct},
                                {"donors_to_80pct", ws.donors_to_80pct},
                                {"max_abs_weight", ws.max_abs_weight}};
    }
    j["shrink_curve"] = nlohmann::json::array();
    for (const auto& s : r.shrink_curve) {
        j["shrink_curve"].push_back(
            {{"method", s.method}, {"pool_size", s.pool_size}, {"mse", s.mean}, {"std", s.std}, {"per_seed", s.per_seed}});
    }
    return j;
}

/// Writes report_<tag>.csv (per building) and report_<tag>.json (summary);
/// returns the common path stem.
inline std::string write_report(const ExperimentReport& r, const std::string& dir, const std::string& tag = timestamp_tag()) {
    std::filesystem::create_directories(dir);
    const std::string stem = (std::filesystem::path(dir) / ("report_" + tag)).string();
    {
        auto os = csv::open_for_write(stem + ".csv");
        csv::write_row(os, report_csv_header());
        for (const auto& c : r.per_building) {
            csv::write_row(os, {c.building, c.method, csv::format_double(c.mse), csv::format_double(c.mse_one_step),
                                csv::format_double(c.mse_test), std::to_string(c.event_steps),
                                c.weights ? std::to_string(c.weights->donors_to_80pct) : std::string(),
                                c.weights ? csv::format_double(c.weights->max_abs_weight) : std::string()});
        }
    }
    std::ofstream js(stem + ".json");
    if (!js) throw Error("cannot write " + stem + ".json");
    js << report_json(r).dump(2) << '\n';
    return stem;
}

}  // namespace synthbase::eval
