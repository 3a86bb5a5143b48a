#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "synthbase/csv.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/timeutil.hpp"

namespace synthbase::panel {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Half-open row range [begin, end).
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
    bool empty() const noexcept { return size() == 0; }
    bool contains(std::size_t t) const noexcept { return t >= begin && t < end; }
    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

enum class Split { Train, Validation, Test };

struct Splits {
    IndexRange train;
    IndexRange validation;
    IndexRange test;
};

struct SplitFractions {
    double train = 0.6;
    double validation = 0.1;
    double test = 0.3;
};

/// Weather columns in file order.
inline const std::vector<std::string>& weather_columns() {
    static const std::vector<std::string> cols{"temp", "humidity", "wind_speed", "wind_dir"};
    return cols;
}

struct FeatureCalendar {
    std::vector<int> weekday;  // Monday = 0
    Eigen::VectorXd hour_sin;
    Eigen::VectorXd hour_cos;
};

/// Aligned multi-building panel. Matrices are [time x building] except
/// `weather`, which is [time x 4] in `weather_columns()` order.
struct PanelDataset {
    std::vector<Instant> timestamps;
    std::vector<std::string> buildings;
    Eigen::MatrixXd load;
    Eigen::MatrixXd pv;
    Eigen::MatrixXd prosumption;
    Eigen::MatrixXd weather;
    BoolMatrix congestion;
    Splits splits;
    int step_minutes = 30;

    std::size_t steps() const noexcept { return timestamps.size(); }
    std::size_t building_count() const noexcept { return buildings.size(); }
    std::size_t steps_per_day() const noexcept { return static_cast<std::size_t>(24 * 60 / step_minutes); }

    std::size_t index_of(const std::string& id) const {
        const auto it = std::find(buildings.begin(), buildings.end(), id);
        if (it == buildings.end()) throw DimensionError("unknown building '" + id + "'");
        return static_cast<std::size_t>(it - buildings.begin());
    }

    Split split_of(std::size_t t) const {
        if (splits.train.contains(t)) return Split::Train;
        if (splits.validation.contains(t)) return Split::Validation;
        if (splits.test.contains(t)) return Split::Test;
        throw DimensionError("row " + std::to_string(t) + " outside the panel");
    }

    FeatureCalendar calendar() const {
        FeatureCalendar cal;
        const auto n = static_cast<Eigen::Index>(steps());
        cal.weekday.resize(steps());
        cal.hour_sin.resize(n);
        cal.hour_cos.resize(n);
        for (Eigen::Index t = 0; t < n; ++t) {
            const auto ts = timestamps[static_cast<std::size_t>(t)];
            const double angle = 2.0 * std::numbers::pi * hour_of_day(ts) / 24.0;
            cal.weekday[static_cast<std::size_t>(t)] = weekday_index(ts);
            cal.hour_sin(t) = std::sin(angle);
            cal.hour_cos(t) = std::cos(angle);
        }
        return cal;
    }

    /// True if the building has any congestion step on the calendar day
    /// containing row t (days counted from the first midnight).
    bool day_has_event(std::size_t building, std::size_t day_start) const {
        const auto spd = steps_per_day();
        for (std::size_t t = day_start; t < std::min(day_start + spd, steps()); ++t) {
            if (congestion(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(building))) return true;
        }
        return false;
    }

    /// Row index of the first midnight.
    std::size_t first_midnight() const {
        for (std::size_t t = 0; t < steps(); ++t) {
            if (is_midnight(timestamps[t])) return t;
        }
        return steps();
    }
};

/// Default event calendar: one event per full test-range day, all buildings.
struct DefaultCalendar {
    int start_hour = 18;
    int duration_steps = 4;
};

struct IngestConfig {
    int step_minutes = 30;
    SplitFractions fractions;
    DefaultCalendar default_calendar;
};

struct PanelPaths {
    std::string load;
    std::string weather;
    std::string congestion;   // empty: synthesize the default calendar
    std::string pv;           // empty: zero PV
    std::string prosumption;  // empty: load - pv
};

namespace detail {

inline void require_timestamp_header(const csv::Table& t, const std::string& what) {
    if (t.header.empty() || t.header[0] != "timestamp") {
        throw SchemaError(what + ": first column must be 'timestamp'");
    }
}

inline std::vector<std::string> building_header(const csv::Table& t, const std::string& what) {
    require_timestamp_header(t, what);
    std::vector<std::string> ids(t.header.begin() + 1, t.header.end());
    if (ids.empty()) throw SchemaError(what + ": no building columns");
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw SchemaError(what + ": duplicate building id");
    }
    for (const auto& id : ids) {
        if (id.empty()) throw SchemaError(what + ": empty building id");
    }
    return ids;
}

/// Parses a [time x building] matrix whose rows must match `timestamps` and
/// whose columns are re-ordered to `buildings`.
inline Eigen::MatrixXd aligned_building_matrix(const csv::Table& t, const std::string& what,
                                               const std::vector<Instant>& timestamps,
                                               const std::vector<std::string>& buildings) {
    const auto ids = building_header(t, what);
    std::vector<std::size_t> source_col(buildings.size());
    for (std::size_t b = 0; b < buildings.size(); ++b) {
        const auto it = std::find(ids.begin(), ids.end(), buildings[b]);
        if (it == ids.end()) throw SchemaError(what + ": missing building '" + buildings[b] + "'");
        source_col[b] = static_cast<std::size_t>(it - ids.begin()) + 1;
    }
    std::size_t r = 0;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(timestamps.size()), static_cast<Eigen::Index>(buildings.size()));
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        if (r >= t.rows.size() || parse_instant(t.rows[r][0]) != timestamps[i]) {
            throw GapError("*", what + " " + format_instant(timestamps[i]));
        }
        for (std::size_t b = 0; b < buildings.size(); ++b) {
            const double v = csv::parse_double(t.rows[r][source_col[b]]);
            if (!std::isfinite(v)) throw GapError(buildings[b], what + " " + format_instant(timestamps[i]));
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = v;
        }
        ++r;
    }
    if (r != t.rows.size()) throw SchemaError(what + ": rows beyond the load range");
    return m;
}

}  // namespace detail

/// Sets split boundaries on day boundaries (rounded down) and validates that
/// the training range is congestion-free.
inline PanelDataset make_split(PanelDataset panel, const SplitFractions& f) {
    if (!(f.train > 0.0 && f.validation > 0.0 && f.test > 0.0) ||
        std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
        throw FractionError("split fractions must be positive and sum to 1");
    }
    const std::size_t spd = panel.steps_per_day();
    const std::size_t origin = panel.first_midnight();
    const std::size_t T = panel.steps();
    const std::size_t days = origin < T ? (T - origin) / spd : 0;
    if (days < 3) throw FractionError("panel spans fewer than three whole days");
    const auto boundary = [&](double cum) {
        return origin + static_cast<std::size_t>(std::floor(cum * static_cast<double>(days) + 1e-9)) * spd;
    };
    const std::size_t b1 = boundary(f.train);
    const std::size_t b2 = boundary(f.train + f.validation);
    if (b1 == 0 || b2 <= b1 || b2 >= T) throw FractionError("split fractions produce an empty range");
    panel.splits = Splits{{0, b1}, {b1, b2}, {b2, T}};

    for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(b1); ++t) {
        if (panel.congestion.row(t).any()) {
            throw CalendarError("congestion event inside the training range at " +
                                format_instant(panel.timestamps[static_cast<std::size_t>(t)]));
        }
    }
    return panel;
}

/// One event of `duration_steps` starting at `start_hour` on every whole day
/// of the test range, for every building. Artifact-defined; the source data
/// does not specify event placement.
inline void apply_default_calendar(PanelDataset& panel, const DefaultCalendar& cal) {
    panel.congestion = BoolMatrix::Constant(static_cast<Eigen::Index>(panel.steps()),
                                            static_cast<Eigen::Index>(panel.building_count()), false);
    const std::size_t spd = panel.steps_per_day();
    const std::size_t offset = static_cast<std::size_t>(cal.start_hour) * spd / 24;
    for (std::size_t day = panel.splits.test.begin; day + spd <= panel.splits.test.end; day += spd) {
        for (int k = 0; k < cal.duration_steps; ++k) {
            panel.congestion.row(static_cast<Eigen::Index>(day + offset + static_cast<std::size_t>(k))).setConstant(true);
        }
    }
}

inline PanelDataset ingest_panel(const PanelPaths& paths, const IngestConfig& config) {
    using namespace std::chrono;
    if (config.step_minutes <= 0 || (24 * 60) % config.step_minutes != 0) {
        throw ConfigError("ingest.step_minutes must divide a day");
    }
    const seconds step = minutes{config.step_minutes};

    PanelDataset p;
    p.step_minutes = config.step_minutes;

    const auto load = csv::read(paths.load);
    p.buildings = detail::building_header(load, "load");
    if (load.rows.empty()) throw SchemaError("load: no rows");
    p.timestamps.reserve(load.rows.size());
    for (const auto& row : load.rows) {
        const Instant ts = parse_instant(row[0]);
        if (!p.timestamps.empty()) {
            const auto dt = ts - p.timestamps.back();
            if (dt <= seconds{0}) throw SchemaError("load: timestamps not strictly increasing at " + row[0]);
            if (dt != step) {
                if (dt % step == seconds{0}) throw GapError("*", format_instant(p.timestamps.back() + step));
                throw SchemaError("load: timestamp " + row[0] + " is off the step grid");
            }
        }
        p.timestamps.push_back(ts);
    }
    p.load = detail::aligned_building_matrix(load, "load", p.timestamps, p.buildings);

    const auto T = static_cast<Eigen::Index>(p.steps());
    const auto B = static_cast<Eigen::Index>(p.building_count());
    p.pv = paths.pv.empty() ? Eigen::MatrixXd::Zero(T, B)
                            : detail::aligned_building_matrix(csv::read(paths.pv), "pv", p.timestamps, p.buildings);
    p.prosumption = paths.prosumption.empty()
                        ? Eigen::MatrixXd(p.load - p.pv)
                        : detail::aligned_building_matrix(csv::read(paths.prosumption), "prosumption",
                                                          p.timestamps, p.buildings);

    // Weather: forward-fill onto the load grid.
    const auto weather = csv::read(paths.weather);
    detail::require_timestamp_header(weather, "weather");
    const auto& wcols = weather_columns();
    if (weather.header.size() != wcols.size() + 1 ||
        !std::equal(wcols.begin(), wcols.end(), weather.header.begin() + 1)) {
        throw SchemaError("weather: header must be timestamp,temp,humidity,wind_speed,wind_dir");
    }
    if (weather.rows.empty()) throw CoverageError("weather: no rows");
    std::vector<Instant> wts;
    wts.reserve(weather.rows.size());
    for (const auto& row : weather.rows) {
        const Instant ts = parse_instant(row[0]);
        if (!wts.empty() && ts <= wts.back()) throw SchemaError("weather: timestamps not strictly increasing");
        wts.push_back(ts);
    }
    const auto last_interval = wts.size() > 1 ? wts.back() - wts[wts.size() - 2] : step;
    if (wts.front() > p.timestamps.front() || wts.back() + last_interval <= p.timestamps.back()) {
        throw CoverageError("weather range " + format_instant(wts.front()) + " .. " + format_instant(wts.back()) +
                            " does not span the load range");
    }
    p.weather.resize(T, static_cast<Eigen::Index>(wcols.size()));
    std::size_t w = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
        const Instant ts = p.timestamps[static_cast<std::size_t>(t)];
        while (w + 1 < wts.size() && wts[w + 1] <= ts) ++w;
        for (std::size_t c = 0; c < wcols.size(); ++c) {
            const double v = csv::parse_double(weather.rows[w][c + 1]);
            if (!std::isfinite(v)) throw GapError("weather:" + wcols[c], format_instant(wts[w]));
            p.weather(t, static_cast<Eigen::Index>(c)) = v;
        }
    }

    p.congestion = BoolMatrix::Constant(T, B, false);
    p = make_split(std::move(p), config.fractions);
    if (paths.congestion.empty()) {
        apply_default_calendar(p, config.default_calendar);
    } else {
        const auto cm = detail::aligned_building_matrix(csv::read(paths.congestion), "congestion", p.timestamps,
                                                        p.buildings);
        if (((cm.array() != 0.0) && (cm.array() != 1.0)).any()) {
            throw SchemaError("congestion: entries must be 0 or 1");
        }
        p.congestion = (cm.array() != 0.0).matrix();
        p = make_split(std::move(p), config.fractions);
    }
    return p;
}

inline PanelDataset ingest_panel(const std::string& load_csv, const std::string& weather_csv,
                                 const std::string& congestion_csv, const IngestConfig& config) {
    return ingest_panel(PanelPaths{load_csv, weather_csv, congestion_csv, {}, {}}, config);
}

/// Reads `load.csv`, `weather.csv` and, when present, `congestion.csv`,
/// `pv.csv`, `prosumption.csv` from a directory.
inline PanelDataset load_panel_dir(const std::string& dir, const IngestConfig& config) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw SchemaError("panel directory '" + dir + "' does not exist");
    const auto optional = [&](const char* name) {
        const auto path = root / name;
        return fs::exists(path) ? path.string() : std::string{};
    };
    return ingest_panel(PanelPaths{(root / "load.csv").string(), (root / "weather.csv").string(),
                                   optional("congestion.csv"), optional("pv.csv"), optional("prosumption.csv")},
                        config);
}

namespace detail {

inline void write_building_matrix(const std::string& path, const PanelDataset& p, const auto& m, bool as_flag) {
    auto out = csv::open_for_write(path);
    std::vector<std::string> header{"timestamp"};
    header.insert(header.end(), p.buildings.begin(), p.buildings.end());
    csv::write_row(out, header);
    std::vector<std::string> cells(header.size());
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        cells[0] = format_instant(p.timestamps[static_cast<std::size_t>(t)]);
        for (Eigen::Index b = 0; b < m.cols(); ++b) {
            cells[static_cast<std::size_t>(b) + 1] =
                as_flag ? (m(t, b) ? "1" : "0") : csv::format_double(static_cast<double>(m(t, b)));
        }
        csv::write_row(out, cells);
    }
}

}  // namespace detail

/// Writes the panel in the directory layout `load_panel_dir` reads back.
inline void export_panel(const PanelDataset& p, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path root(dir);
    detail::write_building_matrix((root / "load.csv").string(), p, p.load, false);
    detail::write_building_matrix((root / "pv.csv").string(), p, p.pv, false);
    detail::write_building_matrix((root / "prosumption.csv").string(), p, p.prosumption, false);
    detail::write_building_matrix((root / "congestion.csv").string(), p, p.congestion, true);

    auto out = csv::open_for_write((root / "weather.csv").string());
    std::vector<std::string> header{"timestamp"};
    header.insert(header.end(), weather_columns().begin(), weather_columns().end());
    csv::write_row(out, header);
    std::vector<std::string> cells(header.size());
    for (Eigen::Index t = 0; t < p.weather.rows(); ++t) {
        cells[0] = format_instant(p.timestamps[static_cast<std::size_t>(t)]);
        for (Eigen::Index c = 0; c < p.weather.cols(); ++c) {
            cells[static_cast<std::size_t>(c) + 1] = csv::format_double(p.weather(t, c));
        }
        csv::write_row(out, cells);
    }
}

/// Restricts a panel to the given buildings, keeping their order.
inline PanelDataset select_buildings(const PanelDataset& p, const std::vector<std::string>& ids) {
    PanelDataset out;
    out.timestamps = p.timestamps;
    out.buildings = ids;
    out.weather = p.weather;
    out.splits = p.splits;
    out.step_minutes = p.step_minutes;
    const auto T = static_cast<Eigen::Index>(p.steps());
    const auto B = static_cast<Eigen::Index>(ids.size());
    out.load.resize(T, B);
    out.pv.resize(T, B);
    out.prosumption.resize(T, B);
    out.congestion.resize(T, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto src = static_cast<Eigen::Index>(p.index_of(ids[static_cast<std::size_t>(b)]));
        out.load.col(b) = p.load.col(src);
        out.pv.col(b) = p.pv.col(src);
        out.prosumption.col(b) = p.prosumption.col(src);
        out.congestion.col(b) = p.congestion.col(src);
    }
    return out;
}

}  // namespace synthbase::panel
