#pragma once

#include <algorithm>
#include <concepts>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "synthbase/csv.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/panel_store.hpp"
#include "synthbase/scm_solver.hpp"

namespace synthbase::aug {

using panel::IndexRange;
using panel::PanelDataset;
using scm::Provenance;

/// Exogenous feature names understood by the design builder.
inline const std::vector<std::string>& default_exogenous_features() {
    static const std::vector<std::string> f{"temp",    "humidity", "wind_speed", "wind_dir",
                                            "weekday", "hour_sin", "hour_cos"};
    return f;
}

/// Block toggles for [X0 F H R]: exogenous features, treated lags, lagged donors.
struct AugmentationSpec {
    bool use_exogenous = false;
    bool use_treated_lags = false;
    int treated_lag_count = 336;
    bool use_donor_lags = false;
    int donor_lag_search_max = 336;
    std::vector<std::string> exogenous_features = default_exogenous_features();

    void validate() const {
        if (use_treated_lags && treated_lag_count < 1) throw ConfigError("treated_lag_count must be >= 1");
        if (use_donor_lags && donor_lag_search_max < 1) throw ConfigError("donor_lag_search_max must be >= 1");
        if (use_treated_lags && use_donor_lags && donor_lag_search_max > treated_lag_count) {
            throw ConfigError("donor_lag_search_max must not exceed treated_lag_count");
        }
        for (const auto& f : exogenous_features) {
            const auto& known = default_exogenous_features();
            if (std::find(known.begin(), known.end(), f) == known.end()) {
                throw ConfigError("unknown exogenous feature '" + f + "'");
            }
        }
    }

    /// D = J + M[exF] + L[Tpast] + J[Dpast].
    std::size_t column_count(std::size_t donors) const {
        return donors + (use_exogenous ? exogenous_features.size() : 0) +
               (use_treated_lags ? static_cast<std::size_t>(treated_lag_count) : 0) + (use_donor_lags ? donors : 0);
    }

    static AugmentationSpec basic() { return {}; }
    static AugmentationSpec full(int lags = 336) {
        AugmentationSpec s;
        s.use_exogenous = s.use_treated_lags = s.use_donor_lags = true;
        s.treated_lag_count = s.donor_lag_search_max = lags;
        return s;
    }
};

struct LagChoice {
    std::string donor_id;
    int k_star = 1;
    double corr = 0.0;
    bool degenerate = false;
};

struct LagSelection {
    int k_star = 1;
    double corr = 0.0;
};

inline double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
    const double ma = a.mean();
    const double mb = b.mean();
    const Eigen::ArrayXd da = a.array() - ma;
    const Eigen::ArrayXd db = b.array() - mb;
    const double saa = da.square().sum();
    const double sbb = db.square().sum();
    if (saa <= 1e-300 || sbb <= 1e-300) return std::nan("");
    return (da * db).sum() / std::sqrt(saa * sbb);
}

/// Lag k in 1..k_max maximizing |corr(treated_t, donor_{t-k})|.
/// `donor` carries k_max leading history points: donor[i + k_max] is
/// contemporaneous with treated[i]. Ties go to the smallest k.
inline LagSelection select_donor_lag(const Eigen::Ref<const Eigen::VectorXd>& treated,
                                     const Eigen::Ref<const Eigen::VectorXd>& donor, int k_max) {
    const Eigen::Index n = treated.size();
    if (k_max < 1) throw DimensionError("k_max must be >= 1");
    if (donor.size() != n + k_max) throw DimensionError("donor must carry k_max leading history points");
    if (n < 2) throw DegenerateSeriesError("need at least two overlapping points");
    LagSelection best{1, 0.0};
    double best_abs = -1.0;
    for (int k = 1; k <= k_max; ++k) {
        const double c = pearson(treated, donor.segment(k_max - k, n));
        if (!std::isfinite(c)) throw DegenerateSeriesError("zero-variance series; correlation undefined");
        if (std::abs(c) > best_abs) {
            best_abs = std::abs(c);
            best = {k, c};
        }
    }
    return best;
}

/// Column layout and frozen lag choices for one treated unit. Everything
/// row-dependent is derived from this plan, so fit and predict designs are
/// built identically.
struct DesignPlan {
    std::size_t treated = 0;
    std::vector<std::size_t> donors;
    AugmentationSpec spec;
    std::vector<LagChoice> lags;  // per donor, empty unless use_donor_lags
    Eigen::MatrixXd exogenous;    // [T x M], empty unless use_exogenous
    std::vector<Provenance> column_provenance;
    std::vector<std::string> column_names;

    std::size_t columns() const noexcept { return column_provenance.size(); }

    /// Earliest row with every lag available.
    std::size_t max_lag() const {
        std::size_t m = 0;
        if (spec.use_treated_lags) m = static_cast<std::size_t>(spec.treated_lag_count);
        for (const auto& l : lags) m = std::max(m, static_cast<std::size_t>(l.k_star));
        return m;
    }
};

inline Eigen::MatrixXd exogenous_matrix(const PanelDataset& p, const std::vector<std::string>& features) {
    const auto cal = p.calendar();
    const auto T = static_cast<Eigen::Index>(p.steps());
    Eigen::MatrixXd F(T, static_cast<Eigen::Index>(features.size()));
    for (std::size_t c = 0; c < features.size(); ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        const auto& name = features[c];
        const auto& wc = panel::weather_columns();
        if (const auto it = std::find(wc.begin(), wc.end(), name); it != wc.end()) {
            F.col(col) = p.weather.col(static_cast<Eigen::Index>(it - wc.begin()));
        } else if (name == "weekday") {
            for (Eigen::Index t = 0; t < T; ++t) F(t, col) = cal.weekday[static_cast<std::size_t>(t)];
        } else if (name == "hour_sin") {
            F.col(col) = cal.hour_sin;
        } else if (name == "hour_cos") {
            F.col(col) = cal.hour_cos;
        } else {
            throw ConfigError("unknown exogenous feature '" + name + "'");
        }
    }
    return F;
}

/// Selects donor lags on the training split and fixes the column layout.
/// `donors` defaults to every building except the treated one.
inline DesignPlan plan_design(const PanelDataset& p, const std::string& treated_id, const AugmentationSpec& spec,
                              std::optional<std::vector<std::size_t>> donors = std::nullopt) {
    spec.validate();
    DesignPlan plan;
    plan.spec = spec;
    plan.treated = p.index_of(treated_id);
    if (donors) {
        plan.donors = *donors;
        if (std::find(plan.donors.begin(), plan.donors.end(), plan.treated) != plan.donors.end()) {
            throw DimensionError("treated building listed as donor");
        }
    } else {
        for (std::size_t b = 0; b < p.building_count(); ++b) {
            if (b != plan.treated) plan.donors.push_back(b);
        }
    }
    if (plan.donors.empty()) throw DimensionError("no donors");

    for (const auto d : plan.donors) {
        plan.column_provenance.push_back(Provenance::Donor);
        plan.column_names.push_back(p.buildings[d]);
    }
    if (spec.use_exogenous) {
        plan.exogenous = exogenous_matrix(p, spec.exogenous_features);
        for (const auto& f : spec.exogenous_features) {
            plan.column_provenance.push_back(Provenance::Exogenous);
            plan.column_names.push_back(f);
        }
    }
    if (spec.use_treated_lags) {
        for (int l = 1; l <= spec.treated_lag_count; ++l) {
            plan.column_provenance.push_back(Provenance::TreatedLag);
            plan.column_names.push_back(treated_id + "@t-" + std::to_string(l));
        }
    }
    if (spec.use_donor_lags) {
        const auto k_max = static_cast<std::size_t>(spec.donor_lag_search_max);
        const auto& train = p.splits.train;
        const std::size_t start = std::max(train.begin, k_max);
        if (start + 2 > train.end) throw InsufficientHistoryError("training window too short for the lag search");
        const auto n = static_cast<Eigen::Index>(train.end - start);
        const Eigen::VectorXd treated =
            p.prosumption.col(static_cast<Eigen::Index>(plan.treated)).segment(static_cast<Eigen::Index>(start), n);
        for (const auto d : plan.donors) {
            LagChoice choice{p.buildings[d], 1, 0.0, false};
            try {
                const auto sel = select_donor_lag(
                    treated,
                    p.prosumption.col(static_cast<Eigen::Index>(d))
                        .segment(static_cast<Eigen::Index>(start - k_max), n + static_cast<Eigen::Index>(k_max)),
                    static_cast<int>(k_max));
                choice.k_star = sel.k_star;
                choice.corr = sel.corr;
            } catch (const DegenerateSeriesError&) {
                choice.degenerate = true;  // falls back to lag 1
            }
            plan.lags.push_back(choice);
            plan.column_provenance.push_back(Provenance::DonorLag);
            plan.column_names.push_back(p.buildings[d] + "@t-" + std::to_string(choice.k_star));
        }
    }
    return plan;
}

/// Treated-outcome lookup used for H entries; lets recursive prediction
/// substitute its own earlier outputs.
using HistoryFn = std::function<double(std::size_t)>;

/// Writes design row t. H and R entries read strictly earlier rows.
inline void fill_row(const PanelDataset& p, const DesignPlan& plan, std::size_t t, const HistoryFn& treated_history,
                     Eigen::Ref<Eigen::RowVectorXd> out) {
    const auto row = static_cast<Eigen::Index>(t);
    Eigen::Index c = 0;
    for (const auto d : plan.donors) out(c++) = p.prosumption(row, static_cast<Eigen::Index>(d));
    if (plan.spec.use_exogenous) {
        for (Eigen::Index f = 0; f < plan.exogenous.cols(); ++f) out(c++) = plan.exogenous(row, f);
    }
    if (plan.spec.use_treated_lags) {
        for (int l = 1; l <= plan.spec.treated_lag_count; ++l) out(c++) = treated_history(t - static_cast<std::size_t>(l));
    }
    if (plan.spec.use_donor_lags) {
        for (std::size_t i = 0; i < plan.donors.size(); ++i) {
            out(c++) = p.prosumption(row - plan.lags[i].k_star, static_cast<Eigen::Index>(plan.donors[i]));
        }
    }
}

struct AugmentedDesign {
    Eigen::MatrixXd matrix;
    std::vector<Provenance> column_provenance;
    std::vector<std::string> column_names;
    std::vector<LagChoice> selected_lags;
    std::size_t usable_row_offset = 0;  // rows of the window skipped for missing lag history
    std::vector<std::size_t> rows;      // panel row index of each matrix row
    Eigen::VectorXd target;             // realized treated outcome on `rows`

    Eigen::Index cols() const noexcept { return matrix.cols(); }
};

inline AugmentedDesign build_design(const PanelDataset& p, const DesignPlan& plan, const IndexRange& window) {
    if (window.end > p.steps() || window.empty()) throw DimensionError("window outside the panel");
    const std::size_t first = std::max(window.begin, plan.max_lag());
    if (first >= window.end) throw InsufficientHistoryError("window has no row with full lag history");

    AugmentedDesign d;
    d.column_provenance = plan.column_provenance;
    d.column_names = plan.column_names;
    d.selected_lags = plan.lags;
    d.usable_row_offset = first - window.begin;
    const auto n = static_cast<Eigen::Index>(window.end - first);
    d.matrix.resize(n, static_cast<Eigen::Index>(plan.columns()));
    d.target.resize(n);
    d.rows.resize(static_cast<std::size_t>(n));
    const auto treated_col = p.prosumption.col(static_cast<Eigen::Index>(plan.treated));
    const HistoryFn realized = [&](std::size_t s) { return treated_col(static_cast<Eigen::Index>(s)); };
    Eigen::RowVectorXd row(d.matrix.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t t = first + static_cast<std::size_t>(i);
        fill_row(p, plan, t, realized, row);
        d.matrix.row(i) = row;
        d.target(i) = treated_col(static_cast<Eigen::Index>(t));
        d.rows[static_cast<std::size_t>(i)] = t;
    }
    return d;
}

/// Convenience form: plans on the panel's training split, then builds.
inline AugmentedDesign build_design(const PanelDataset& p, const std::string& treated_id,
                                    const AugmentationSpec& spec, const IndexRange& window) {
    return build_design(p, plan_design(p, treated_id, spec), window);
}

enum class PredictionMode { OneStep, Recursive };

/// Any callable mapping one design row to a scalar prediction.
template <class F>
concept RowPredictor = requires(const F& f, const Eigen::RowVectorXd& row) {
    { f(row) } -> std::convertible_to<double>;
};

struct LinearPredictor {
    const scm::ScmWeights* weights;
    double operator()(const Eigen::RowVectorXd& row) const { return row.dot(weights->coefficients); }
};

/// Counterfactual over an event window. OneStep emits the first event step
/// from realized history only; Recursive feeds earlier predictions back into
/// the treated-lag block for the whole event. Donor and exogenous columns
/// always use realized values. `horizon` caps the trajectory (0 = whole
/// event); OneStep with horizon > 1 is a ModeError.
template <RowPredictor Predictor>
Eigen::VectorXd predict_counterfactual(const Predictor& predictor, const PanelDataset& p, const DesignPlan& plan,
                                       const IndexRange& event, PredictionMode mode, std::size_t horizon = 0) {
    if (event.empty() || event.end > p.steps()) throw DimensionError("event outside the panel");
    if (event.begin < plan.max_lag()) throw InsufficientHistoryError("event starts before lag history is available");
    if (mode == PredictionMode::OneStep && horizon > 1) {
        throw ModeError("multi-step prediction requested in one-step mode");
    }
    std::size_t steps = mode == PredictionMode::OneStep ? 1 : event.size();
    if (horizon > 0) steps = std::min(steps, horizon);

    Eigen::VectorXd out(static_cast<Eigen::Index>(steps));
    const auto treated_col = p.prosumption.col(static_cast<Eigen::Index>(plan.treated));
    const HistoryFn history = [&](std::size_t s) {
        if (s >= event.begin) return out(static_cast<Eigen::Index>(s - event.begin));
        return treated_col(static_cast<Eigen::Index>(s));
    };
    Eigen::RowVectorXd row(static_cast<Eigen::Index>(plan.columns()));
    for (std::size_t i = 0; i < steps; ++i) {
        fill_row(p, plan, event.begin + i, history, row);
        out(static_cast<Eigen::Index>(i)) = predictor(row);
    }
    return out;
}

/// Consecutive congestion runs of one building inside a range.
inline std::vector<IndexRange> event_windows(const PanelDataset& p, std::size_t building, const IndexRange& range) {
    std::vector<IndexRange> events;
    const auto b = static_cast<Eigen::Index>(building);
    std::size_t t = range.begin;
    while (t < range.end) {
        if (!p.congestion(static_cast<Eigen::Index>(t), b)) {
            ++t;
            continue;
        }
        std::size_t e = t;
        while (e < range.end && p.congestion(static_cast<Eigen::Index>(e), b)) ++e;
        events.push_back({t, e});
        t = e;
    }
    return events;
}

inline void export_selected_lags(const std::vector<LagChoice>& lags, const std::string& path) {
    auto out = csv::open_for_write(path);
    csv::write_row(out, {"donor_id", "k_star", "corr"});
    for (const auto& l : lags) csv::write_row(out, {l.donor_id, std::to_string(l.k_star), csv::format_double(l.corr)});
}

}  // namespace synthbase::aug
