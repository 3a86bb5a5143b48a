#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "synthbase/errors.hpp"
#include "synthbase/panel_store.hpp"
#include "synthbase/timeutil.hpp"

namespace synthbase::demo {

/// Synthetic half-hourly panel in the same layout as the ingested smart-meter
/// data. Households follow one of four daily routines, all react to shared
/// weather and a shared demand level, and carry persistent private noise.
/// With `max_shift` > 0 each building also runs its clock a few steps late.
struct DemoOptions {
    int buildings = 20;
    int days = 364;
    std::string start = "2012-07-02T00:00";  // a Monday
    std::uint64_t seed = 2012;
    int max_shift = 0;           // steps; shifts are distinct while buildings <= max_shift + 1
    double idio_rho = 0.9;       // AR(1) per building
    double idio_sd = 0.8;        // stationary sd of the AR(1) part
    double fast_rho = 0.3;       // shared, weakly persistent activity factor
    double fast_sd = 0.7;
    double level_sd = 0.3;       // shared level, AR(1) per step
    double profile_scale = 12.0;  // multiplies routine, level, weekend and cooling terms
    double archetype_concentration = 0.3;  // Dirichlet parameter of the routine mix
    panel::SplitFractions fractions;
    panel::DefaultCalendar calendar;
};

namespace detail {

struct Routine {
    double morning_hour, morning_amp, evening_hour, evening_amp, midday_amp;

    double operator()(double slot, int spd) const {
        const double h = 24.0 * slot / spd;
        return 0.35 + morning_amp * std::exp(-std::pow(h - morning_hour, 2) / 2.0) +
               evening_amp * std::exp(-std::pow(h - evening_hour, 2) / 5.0) +
               midday_amp * std::exp(-std::pow(h - 13.0, 2) / 8.0);
    }
};

}  // namespace detail

inline panel::PanelDataset make_demo_panel(const DemoOptions& o = {}) {
    if (o.buildings < 2 || o.days < 14) throw ConfigError("demo panel needs >= 2 buildings and >= 14 days");
    if (o.max_shift < 0 || !(std::abs(o.idio_rho) < 1.0) || !(std::abs(o.fast_rho) < 1.0)) {
        throw ConfigError("invalid demo shift or AR coefficient");
    }
    using namespace std::chrono;
    constexpr int spd = 48;
    const int B = o.buildings;
    const long T = static_cast<long>(o.days) * spd;
    const long pad = o.max_shift + 1;  // shifted series read this far back
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    panel::PanelDataset p;
    p.step_minutes = 30;
    const Instant t0 = parse_instant(o.start);
    p.timestamps.reserve(static_cast<std::size_t>(T));
    for (long t = 0; t < T; ++t) p.timestamps.push_back(t0 + minutes{30 * t});
    for (int b = 0; b < B; ++b) {
        char id[16];
        std::snprintf(id, sizeof id, "B%03d", b + 1);
        p.buildings.emplace_back(id);
    }

    // Weather and sky: shared by every building.
    p.weather.resize(T, 4);
    Eigen::VectorXd cloud(T);
    double temp_noise = 0.0, cl = 0.3, wind = 3.0;
    for (long t = 0; t < T; ++t) {
        const double day = static_cast<double>(t) / spd;
        const double h = hour_of_day(p.timestamps[static_cast<std::size_t>(t)]);
        temp_noise = 0.98 * temp_noise + 0.35 * z(rng);
        const double temp = 18.0 - 6.0 * std::cos(2.0 * std::numbers::pi * (day - 20.0) / 365.0) +
                            5.0 * std::sin(2.0 * std::numbers::pi * (h - 9.0) / 24.0) + temp_noise;
        cl = std::clamp(0.97 * cl + 0.03 * 0.3 + 0.08 * z(rng), 0.0, 1.0);
        wind = std::max(0.0, 0.95 * wind + 0.05 * 3.0 + 0.4 * z(rng));
        p.weather(t, 0) = temp;
        p.weather(t, 1) = std::clamp(60.0 - 1.5 * (temp - 18.0) + 20.0 * cl, 5.0, 100.0);
        p.weather(t, 2) = wind;
        p.weather(t, 3) = std::fmod(360.0 + 180.0 + 90.0 * std::sin(day / 3.0) + 20.0 * z(rng), 360.0);
        cloud(t) = cl;
    }

    // Shared drivers on an extended grid so shifted reads stay in range.
    Eigen::VectorXd fast(T + pad), level(T + pad);
    double f = 0.0;
    const double f_innov = o.fast_sd * std::sqrt(1.0 - o.fast_rho * o.fast_rho);
    for (long t = 0; t < T + pad; ++t) {
        f = o.fast_rho * f + f_innov * z(rng);
        fast(t) = f;
    }
    double lv = 0.0;
    for (long t = 0; t < T + pad; ++t) {
        lv = 0.98 * lv + o.level_sd * std::sqrt(1.0 - 0.98 * 0.98) * z(rng);
        level(t) = lv;
    }

    std::vector<int> shifts(static_cast<std::size_t>(B));
    if (B <= o.max_shift + 1) {
        std::vector<int> pool(static_cast<std::size_t>(o.max_shift + 1));
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        std::copy_n(pool.begin(), B, shifts.begin());
    } else {
        for (auto& s : shifts) s = static_cast<int>(rng() % static_cast<std::uint64_t>(o.max_shift + 1));
    }

    p.load.resize(T, B);
    p.pv.resize(T, B);
    const double e_innov = o.idio_sd * std::sqrt(1.0 - o.idio_rho * o.idio_rho);
    for (int b = 0; b < B; ++b) {
        const int shift = shifts[static_cast<std::size_t>(b)];
        // Each household mixes four archetype routines with sparse Dirichlet
        // weights, so most lean towards one archetype.
        static constexpr double archetypes[4][5] = {
            {6.5, 0.6, 18.0, 0.9, 0.05}, {8.5, 0.3, 20.5, 1.1, 0.1}, {7.0, 0.4, 19.0, 0.5, 0.35}, {9.0, 0.2, 17.5, 0.7, 0.2}};
        std::gamma_distribution<double> gam(o.archetype_concentration, 1.0);
        double mix[4], total = 0.0;
        for (double& m : mix) total += (m = gam(rng) + 1e-12);
        std::vector<detail::Routine> parts;
        for (const auto& a : archetypes) parts.push_back({a[0], a[1], a[2], a[3], a[4]});
        const auto routine = [&](double slot, int spd_) {
            double v = 0.0;
            for (int k = 0; k < 4; ++k) v += mix[k] / total * parts[static_cast<std::size_t>(k)](slot, spd_);
            return v;
        };
        const double scale = o.profile_scale * (0.95 + 0.1 * u(rng));
        const double fast_load = 0.8 + 0.4 * u(rng);
        const double cooling = 0.02 + 0.03 * u(rng);
        const double pv_cap = u(rng) < 0.4 ? 0.0 : 0.6 + 1.2 * u(rng);
        const double weekend = 0.1 * (u(rng) - 0.3);
        double e = o.idio_sd * z(rng);
        for (long t = 0; t < T; ++t) {
            const long ts = t - shift;  // building clock
            const double slot = static_cast<double>(((ts % spd) + spd) % spd);
            const int wd = weekday_index(p.timestamps[static_cast<std::size_t>(t)]);
            e = o.idio_rho * e + e_innov * z(rng);
            const double temp = p.weather(t, 0);
            double load = scale * (routine(slot, spd) + level(t - shift + pad) +
                                   (wd >= 5 ? weekend : 0.0) + cooling * std::max(0.0, temp - 22.0)) +
                          fast_load * fast(t - shift + pad) + e;
            p.load(t, b) = std::max(0.05, load + 0.6);
            const double h = hour_of_day(p.timestamps[static_cast<std::size_t>(t)]);
            const double sun = std::max(0.0, std::sin(std::numbers::pi * (h - 6.0) / 13.0));
            p.pv(t, b) = pv_cap * sun * (1.0 - 0.7 * cloud(t));
        }
    }
    p.prosumption = p.load - p.pv;
    p.congestion = panel::BoolMatrix::Constant(T, B, false);
    p = panel::make_split(std::move(p), o.fractions);
    panel::apply_default_calendar(p, o.calendar);
    return p;
}

/// Half-hourly price shaped like a residential time-of-use tariff plus noise.
inline Eigen::VectorXd make_demo_prices(const panel::PanelDataset& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::VectorXd price(static_cast<Eigen::Index>(p.steps()));
    double n = 0.0;
    for (std::size_t t = 0; t < p.steps(); ++t) {
        const double h = hour_of_day(p.timestamps[t]);
        n = 0.9 * n + 0.01 * z(rng);
        const double peak = (h >= 14.0 && h < 20.0) ? 0.30 : (h >= 7.0 && h < 22.0 ? 0.10 : 0.0);
        price(static_cast<Eigen::Index>(t)) = std::max(0.01, 0.12 + peak + n);
    }
    return price;
}

}  // namespace synthbase::demo
