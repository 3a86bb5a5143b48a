#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "synthbase/benchmarks.hpp"
#include "synthbase/bess_lp.hpp"
#include "synthbase/config.hpp"
#include "synthbase/demo_panel.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/evalkit.hpp"
#include "synthbase/factor_lab.hpp"
#include "synthbase/panel_store.hpp"

namespace synthbase::cli {

enum ExitCode : int { Success = 0, DomainFailure = 1, UsageFailure = 2 };

namespace detail {

/// Options every data command shares. Values start at the library defaults
/// so --help shows them; a flag only wins if it was given.
struct Common {
    std::string config;
    unsigned jobs = 1;
    std::uint64_t seed = 0;
    CLI::Option* jobs_opt = nullptr;
    CLI::Option* seed_opt = nullptr;

    void add(CLI::App& app) {
        app.add_option("--config", config, "JSON run configuration (unknown keys are rejected)")->check(CLI::ExistingFile);
        jobs_opt = app.add_option("--jobs", jobs, "Worker threads, 0 = all cores");
        seed_opt = app.add_option("--seed", seed, "Global seed (fallback: SYNTHBASE_SEED, then the config)");
    }

    /// Defaults, then SYNTHBASE_SEED, then the config file, then flags.
    config::RunConfig resolve() const {
        config::RunConfig c;
        c.seed = config::env_seed(c.seed);
        if (!config.empty()) c = config::load(config, c);
        if (jobs_opt->count() > 0) c.jobs = jobs;
        if (seed_opt->count() > 0) c.seed = seed;
        c.methods.seed = c.seed;
        c.bess.fleet.jobs = c.jobs;
        return c;
    }
};

inline void write_json(const nlohmann::json& j, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << j.dump(2) << '\n';
}

inline nlohmann::json lag_json(const std::vector<aug::LagChoice>& lags) {
    auto out = nlohmann::json::array();
    for (const auto& l : lags) {
        out.push_back({{"donor", l.donor_id}, {"k_star", l.k_star}, {"corr", l.corr}, {"degenerate", l.degenerate}});
    }
    return out;
}

inline std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline nlohmann::json fit_one(const panel::PanelDataset& p, const std::string& b, eval::Method m,
                              const eval::MethodSettings& s) {
    using eval::Method;
    nlohmann::json j{{"building", b}, {"method", eval::to_string(m)}};
    if (eval::is_linear_scm(m)) {
        const auto f = eval::fit_linear(p, b, m, s);
        const auto wc = eval::weight_concentration(f.weights);
        j["weights"] = scm::to_json(f.weights);
        j["donor_lags"] = lag_json(f.plan.lags);
        j["donors_to_80pct"] = wc.donors_to_80pct;
        j["max_abs_weight"] = wc.max_abs_weight;
    } else if (eval::is_neural(m)) {
        const auto f = eval::fit_neural(p, b, m, s);
        j["models"] = nlohmann::json::array();
        for (const auto& model : f.models) j["models"].push_back(nn::to_json(model));
        j["donor_lags"] = lag_json(f.plan.lags);
    } else if (m == Method::KmeansLasso) {
        bench::KmeansLassoOptions opt;
        opt.k = s.kmeans_k;
        opt.alpha = s.lasso_alpha;
        opt.seed = s.seed;
        const auto f = bench::fit_kmeans_lasso(p, b, opt);
        std::vector<std::string> members;
        for (auto i : f.members) members.push_back(p.buildings[i]);
        j["cluster"] = f.chosen_cluster;
        j["members"] = members;
        j["coefficients"] = to_vec(f.lasso.coefficients);
        j["intercept"] = f.lasso.intercept;
        j["alpha"] = f.lasso.alpha;
        j["validation_mse"] = f.validation_mse;
    } else {
        const auto& test = p.splits.test;
        const Eigen::VectorXd base = m == Method::MovingAverage
                                         ? bench::moving_average_baseline(p, b, s.mavg_days, test)
                                         : bench::mid_x_of_y_baseline(p, b, s.mid_x, s.mid_y, test);
        if (m == Method::MovingAverage) {
            j["window_days"] = s.mavg_days;
        } else {
            j["x"] = s.mid_x;
            j["y"] = s.mid_y;
        }
        j["test_begin"] = format_instant(p.timestamps[test.begin]);
        j["test_baseline"] = to_vec(base);
    }
    return j;
}

inline std::vector<std::string> all_buildings_or(const panel::PanelDataset& p, const std::vector<std::string>& ids) {
    if (ids.empty()) return p.buildings;
    for (const auto& id : ids) p.index_of(id);
    return ids;
}

inline std::string method_help() {
    std::string s;
    for (const auto& [m, name] : eval::method_names()) s += (s.empty() ? "" : "|") + name;
    return s + "|scm_aug";
}

inline nlohmann::json mse_json(const factor::MseEstimate& m) { return {{"mse", m.mse}, {"stderr", m.stderr_}}; }

}  // namespace detail

/// Parses and runs one subcommand. Domain errors map to 1, usage and
/// configuration errors to 2.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Synthetic-control baselines for demand response", "synthbase"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    std::function<int()> action;

    // generate-demo ---------------------------------------------------------
    auto* gen = app.add_subcommand("generate-demo", "Write a synthetic panel directory and a price file");
    demo::DemoOptions demo_opt;
    std::string gen_out;
    std::uint64_t price_seed = 3;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--buildings", demo_opt.buildings, "Number of buildings");
    gen->add_option("--days", demo_opt.days, "Number of days");
    auto* gen_seed = gen->add_option("--seed", demo_opt.seed, "Panel seed (fallback: SYNTHBASE_SEED)");
    gen->add_option("--price-seed", price_seed, "Seed of the price series");
    gen->callback([&] {
        action = [&] {
            if (gen_seed->count() == 0) demo_opt.seed = config::env_seed(demo_opt.seed);
            const auto p = demo::make_demo_panel(demo_opt);
            panel::export_panel(p, gen_out);
            bess::write_prices((std::filesystem::path(gen_out) / "prices.csv").string(), p.timestamps,
                               demo::make_demo_prices(p, price_seed));
            out << "wrote " << p.building_count() << " buildings x " << p.steps() << " steps to " << gen_out << '\n';
            return 0;
        };
    });

    // simulate-bess ---------------------------------------------------------
    auto* sim = app.add_subcommand("simulate-bess", "Dispatch one battery per building and write the new panel");
    detail::Common sim_common;
    std::string sim_panel, sim_prices, sim_out;
    double rebate = 0.0;
    std::vector<std::string> participants;
    int window_steps = 336;
    sim->add_option("--panel", sim_panel, "Panel directory (load.csv, weather.csv, ...)")->required();
    sim->add_option("--prices", sim_prices, "CSV with header timestamp,price")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", sim_out, "Output panel directory")->required();
    auto* rebate_opt = sim->add_option("--rebate", rebate, "Rebate per kWh of delivered flexibility at congestion steps");
    auto* part_opt = sim->add_option("--participants", participants, "Buildings that receive the rebate")->delimiter(',');
    auto* window_opt = sim->add_option("--window-steps", window_steps, "Rolling optimisation window");
    sim_common.add(*sim);
    sim->callback([&] {
        action = [&] {
            auto cfg = sim_common.resolve();
            if (rebate_opt->count()) cfg.bess.fleet.rebate = rebate;
            if (part_opt->count()) cfg.bess.fleet.participants = participants;
            if (window_opt->count()) cfg.bess.fleet.window_steps = window_steps;
            const auto p = panel::load_panel_dir(sim_panel, cfg.ingest);
            const auto price = bess::read_prices(sim_prices, p.timestamps);
            const auto res = bess::simulate_fleet_detailed(p, cfg.bess.battery, price, cfg.bess.fleet);
            panel::export_panel(res.panel, sim_out);
            panel::detail::write_building_matrix((std::filesystem::path(sim_out) / "battery_action.csv").string(),
                                                 res.panel, res.action, false);
            detail::write_json(config::to_json(cfg), (std::filesystem::path(sim_out) / "run_config.json").string());
            out << "solved " << res.lp_count << " windows for " << p.building_count() << " buildings\n";
            return 0;
        };
    });

    // fit --------------------------------------------------------------------
    auto* fit = app.add_subcommand("fit", "Fit one method for one or all buildings");
    detail::Common fit_common;
    std::string fit_panel, fit_method, fit_building, fit_out = "weights.json";
    fit->add_option("--panel", fit_panel, "Panel directory")->required();
    fit->add_option("--method", fit_method, detail::method_help())->required();
    fit->add_option("--building", fit_building, "Treated building (default: every building in turn)");
    fit->add_option("--out-weights", fit_out, "Output JSON file");
    fit_common.add(*fit);
    fit->callback([&] {
        action = [&] {
            const auto cfg = fit_common.resolve();
            const auto m = eval::method_from_string(fit_method);
            const auto p = panel::load_panel_dir(fit_panel, cfg.ingest);
            const auto ids = detail::all_buildings_or(p, fit_building.empty() ? std::vector<std::string>{}
                                                                              : std::vector<std::string>{fit_building});
            std::vector<nlohmann::json> fits(ids.size());
            parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) { fits[i] = detail::fit_one(p, ids[i], m, cfg.methods); });
            detail::write_json({{"method", eval::to_string(m)}, {"fits", fits}}, fit_out);
            out << "fitted " << eval::to_string(m) << " for " << ids.size() << " building(s) -> " << fit_out << '\n';
            return 0;
        };
    });

    // evaluate ---------------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "Rotate the treated building and report event-window MSE");
    detail::Common ev_common;
    std::string ev_panel, ev_out = "results", tag, benchmark = config::RunConfig{}.benchmark;
    std::vector<std::string> ev_methods{"mavg", "kmeans_lasso", "scm_s1r", "scm_aug_dpast"}, ev_buildings;
    bool shrink = false;
    ev->add_option("--panel", ev_panel, "Panel directory")->required();
    ev->add_option("--methods", ev_methods, "Comma-separated methods: " + detail::method_help())->delimiter(',');
    ev->add_option("--buildings", ev_buildings, "Comma-separated treated buildings (default: all)")->delimiter(',');
    auto* bench_opt = ev->add_option("--benchmark", benchmark, "Reference method of the Diff column, empty to skip");
    ev->add_option("--out", ev_out, "Report directory");
    ev->add_option("--tag", tag, "Report file tag (default: UTC timestamp)");
    ev->add_flag("--shrink", shrink, "Also run the donor-pool shrink study");
    ev_common.add(*ev);
    ev->callback([&] {
        action = [&] {
            auto cfg = ev_common.resolve();
            if (bench_opt->count()) cfg.benchmark = benchmark;
            std::vector<eval::Method> methods;
            for (const auto& name : ev_methods) methods.push_back(eval::method_from_string(name));
            if (!cfg.benchmark.empty()) {
                const auto bm = eval::method_from_string(cfg.benchmark);
                cfg.benchmark = eval::to_string(bm);
                if (std::find(methods.begin(), methods.end(), bm) == methods.end()) methods.push_back(bm);
            }
            const auto p = panel::load_panel_dir(ev_panel, cfg.ingest);
            const auto ids = detail::all_buildings_or(p, ev_buildings);
            auto report = eval::run_rotation(p, methods, ids, cfg.methods, cfg.benchmark, cfg.jobs);
            if (shrink) {
                const std::size_t J = p.building_count() - 1;
                std::vector<std::size_t> sizes;
                for (auto n : cfg.shrink_sizes) {
                    if (n >= 1 && n < J) sizes.push_back(n);
                }
                sizes.push_back(J);
                report.shrink_curve = eval::shrink_study(p, methods, ids, sizes, cfg.shrink_seeds, cfg.methods, cfg.jobs);
            }
            const auto stem = eval::write_report(report, ev_out, tag.empty() ? eval::timestamp_tag() : tag);
            detail::write_json(config::to_json(cfg), stem + "_config.json");
            for (const auto& a : report.aggregate) {
                out << a.method << "  mse " << a.mean << "  std " << a.std;
                if (!std::isnan(a.diff_pct)) out << "  diff% " << a.diff_pct;
                out << '\n';
            }
            out << "report: " << stem << ".{csv,json}\n";
            return 0;
        };
    });

    // factor-lab -------------------------------------------------------------
    auto* fl = app.add_subcommand("factor-lab", "Monte-Carlo checks of the closed-form factor-model MSEs");
    detail::Common fl_common;
    std::string scenario, fl_out = "factor_lab";
    long trials = config::FactorSettings{}.trials;
    fl->add_option("--scenario", scenario, "prop1|prop2|crossover|representability")
        ->required()
        ->check(CLI::IsMember({"prop1", "prop2", "crossover", "representability"}));
    auto* trials_opt = fl->add_option("--trials", trials, "Monte-Carlo trials per spec");
    fl->add_option("--out", fl_out, "Output directory");
    fl_common.add(*fl);
    fl->callback([&] {
        action = [&] {
            auto cfg = fl_common.resolve();
            if (trials_opt->count()) cfg.factor.trials = trials;
            const auto& f = cfg.factor;
            std::filesystem::create_directories(fl_out);
            const auto path = [&](const std::string& name) { return (std::filesystem::path(fl_out) / name).string(); };
            if (scenario == "prop1" || scenario == "prop2") {
                const bool p1 = scenario == "prop1";
                auto os = csv::open_for_write(path(scenario + ".csv"));
                if (p1) {
                    csv::write_row(os, {"spec", "rho", "sigma_mu2", "omega2", "attenuation", "beta_star", "beta_hat",
                                        "mse_sc_theory", "mse_sc", "mse_sc_stderr", "mse_lag_theory", "mse_lag",
                                        "mse_lag_stderr"});
                } else {
                    csv::write_row(os, {"spec", "rho", "sigma_mu2", "omega2", "mse_rc_theory", "mse_rc", "mse_rc_stderr",
                                        "delta_rc_theory", "delta_rc", "delta_rc_stderr"});
                }
                const auto grid = factor::standard_grid();
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    const auto& s = grid[i];
                    const auto sum = factor::empirical_summary(s, f.trials, cfg.seed + i, std::nullopt, cfg.jobs);
                    const auto& t = sum.theory;
                    const auto d = [](double v) { return csv::format_double(v); };
                    if (p1) {
                        const double bh = factor::fit_beta(s, f.beta_fit_steps, cfg.seed + 1000 + i);
                        csv::write_row(os, {std::to_string(i), d(s.rho), d(t.sigma_mu2), d(t.omega2), d(t.attenuation),
                                            d(t.beta_star), d(bh), d(t.mse_sc), d(sum.sc.mse), d(sum.sc.stderr_),
                                            d(t.mse_lag), d(sum.lag.mse), d(sum.lag.stderr_)});
                    } else {
                        csv::write_row(os, {std::to_string(i), d(s.rho), d(t.sigma_mu2), d(t.omega2), d(t.mse_rc),
                                            d(sum.rc.mse), d(sum.rc.stderr_), d(t.delta_rc), d(sum.delta_rc.mse),
                                            d(sum.delta_rc.stderr_)});
                    }
                }
                out << "wrote " << path(scenario + ".csv") << '\n';
                return 0;
            }
            const auto base = factor::make_spec(f.rho, f.sigma_mu2, f.omega2, f.sigma_eps2, f.donors, f.factors, cfg.seed + 1);
            if (scenario == "crossover") {
                const auto rows = factor::crossover_scan(base, f.crossover_grid, f.trials, cfg.seed, cfg.jobs);
                factor::export_crossover(rows, path("crossover.csv"));
                const auto th = factor::theory(base).rc_beats_lag_threshold;
                std::optional<double> flip;
                for (std::size_t i = 1; i < rows.size() && !flip; ++i) {
                    const double a = rows[i - 1].delta_rc_emp - rows[i - 1].delta_emp;
                    const double b = rows[i].delta_rc_emp - rows[i].delta_emp;
                    if ((a > 0.0) != (b > 0.0)) flip = 0.5 * (rows[i - 1].omega2 + rows[i].omega2);
                }
                detail::write_json({{"threshold_theory", th}, {"flip_empirical", flip ? nlohmann::json(*flip) : nlohmann::json(nullptr)}},
                                   path("crossover.json"));
                out << "threshold " << th << ", empirical flip " << (flip ? std::to_string(*flip) : "none") << '\n';
                return 0;
            }
            const auto rep = factor::representability_check(base, f.representability_steps, cfg.seed);
            detail::write_json({{"donors_only", detail::mse_json(rep.donors_only)},
                                {"with_treated_lag", detail::mse_json(rep.with_treated_lag)},
                                {"with_all_lags", detail::mse_json(rep.with_all_lags)},
                                {"diff_treated_vs_all", rep.diff_bc},
                                {"diff_stderr", rep.diff_bc_stderr},
                                {"mse_sc_theory", rep.theory.mse_sc},
                                {"mse_lag_theory", rep.theory.mse_lag}},
                               path("representability.json"));
            out << "wrote " << path("representability.json") << '\n';
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        const auto subs = app.get_subcommands();
        out << (subs.empty() ? app.help() : subs.front()->help());
        return Success;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return Success;
    } catch (const CLI::ParseError& e) {
        const auto subs = app.get_subcommands();
        err << "error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
        return UsageFailure;
    }
    try {
        return action ? action() : UsageFailure;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return UsageFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return DomainFailure;
    }
}

}  // namespace synthbase::cli
