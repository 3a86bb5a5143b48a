#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>

#include "synthbase/panel_store.hpp"
#include "synthbase/timeutil.hpp"

namespace testdata {

using ValueFn = std::function<double(std::size_t t, std::size_t b)>;

/// Half-hourly panel from a Monday midnight. `value` fills load and
/// prosumption; PV is zero; weather is smooth and deterministic.
inline synthbase::panel::PanelDataset micro_panel(int buildings, int days, const ValueFn& value, bool default_events = true,
                                                  synthbase::panel::SplitFractions f = {}) {
    using namespace synthbase;
    panel::PanelDataset p;
    const auto t0 = parse_instant("2013-07-01T00:00");
    const std::size_t T = static_cast<std::size_t>(days) * 48;
    for (std::size_t t = 0; t < T; ++t) p.timestamps.push_back(t0 + std::chrono::minutes{30 * static_cast<long>(t)});
    for (int b = 0; b < buildings; ++b) {
        char id[16];
        std::snprintf(id, sizeof id, "M%02d", b + 1);
        p.buildings.emplace_back(id);
    }
    const auto Ti = static_cast<Eigen::Index>(T);
    p.load.resize(Ti, buildings);
    for (Eigen::Index t = 0; t < Ti; ++t) {
        for (int b = 0; b < buildings; ++b) p.load(t, b) = value(static_cast<std::size_t>(t), static_cast<std::size_t>(b));
    }
    p.pv = Eigen::MatrixXd::Zero(Ti, buildings);
    p.prosumption = p.load;
    p.weather.resize(Ti, 4);
    for (Eigen::Index t = 0; t < Ti; ++t) {
        const double x = 2.0 * std::numbers::pi * static_cast<double>(t) / 48.0;
        p.weather(t, 0) = 15.0 + 5.0 * std::sin(x) + 0.01 * static_cast<double>(t % 97);
        p.weather(t, 1) = 60.0 + 10.0 * std::cos(x);
        p.weather(t, 2) = 3.0 + std::sin(0.37 * static_cast<double>(t));
        p.weather(t, 3) = std::fmod(17.0 * static_cast<double>(t), 360.0);
    }
    p.congestion = panel::BoolMatrix::Constant(Ti, buildings, false);
    p = panel::make_split(std::move(p), f);
    if (default_events) panel::apply_default_calendar(p, {});
    return p;
}

}  // namespace testdata
