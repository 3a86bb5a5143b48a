#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthbase/augmentation.hpp"
#include "synthbase/bess_lp.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/evalkit.hpp"
#include "synthbase/nonlinear_scm.hpp"
#include "synthbase/panel_store.hpp"

namespace synthbase::config {

struct FactorSettings {
    long trials = 100'000;
    double rho = 0.5;
    double sigma_mu2 = 1.0;
    double omega2 = 0.2;
    double sigma_eps2 = 1.0;
    int donors = 5;
    int factors = 2;
    long beta_fit_steps = 1'000'000;
    long representability_steps = 200'000;
    std::vector<double> crossover_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

struct BessSettings {
    bess::BessInstance battery;  // physical and baseline parameters only
    bess::FleetOptions fleet;
};

/// Every tunable of a run. Defaults mirror the library defaults.
struct RunConfig {
    panel::IngestConfig ingest;
    eval::MethodSettings methods;
    BessSettings bess;
    FactorSettings factor;
    std::string benchmark = "kmeans_lasso";
    std::vector<std::size_t> shrink_sizes{10, 50, 150};
    int shrink_seeds = 5;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

namespace detail {

using Setter = std::function<void(RunConfig&, const nlohmann::json&)>;

template <class T>
T as(const nlohmann::json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

inline const std::map<std::string, Setter>& setters() {
    using J = nlohmann::json;
    static const std::map<std::string, Setter> s{
        {"panel.step_minutes", [](RunConfig& c, const J& v) { c.ingest.step_minutes = as<int>(v, "panel.step_minutes"); }},
        {"panel.train", [](RunConfig& c, const J& v) { c.ingest.fractions.train = as<double>(v, "panel.train"); }},
        {"panel.validation", [](RunConfig& c, const J& v) { c.ingest.fractions.validation = as<double>(v, "panel.validation"); }},
        {"panel.test", [](RunConfig& c, const J& v) { c.ingest.fractions.test = as<double>(v, "panel.test"); }},
        {"calendar.start_hour", [](RunConfig& c, const J& v) { c.ingest.default_calendar.start_hour = as<int>(v, "calendar.start_hour"); }},
        {"calendar.duration_steps",
         [](RunConfig& c, const J& v) { c.ingest.default_calendar.duration_steps = as<int>(v, "calendar.duration_steps"); }},

        {"scm.lambda_basic", [](RunConfig& c, const J& v) { c.methods.lambda_basic = as<double>(v, "scm.lambda_basic"); }},
        {"scm.lambda_augmented", [](RunConfig& c, const J& v) { c.methods.lambda_augmented = as<double>(v, "scm.lambda_augmented"); }},
        {"scm.standardize_penalty",
         [](RunConfig& c, const J& v) { c.methods.standardize_penalty = as<bool>(v, "scm.standardize_penalty"); }},
        {"aug.treated_lags", [](RunConfig& c, const J& v) { c.methods.treated_lags = as<int>(v, "aug.treated_lags"); }},
        {"aug.donor_lag_max", [](RunConfig& c, const J& v) { c.methods.donor_lag_max = as<int>(v, "aug.donor_lag_max"); }},
        {"aug.exogenous", [](RunConfig& c, const J& v) { c.methods.exogenous = as<std::vector<std::string>>(v, "aug.exogenous"); }},
        {"aug.mode",
         [](RunConfig& c, const J& v) {
             const auto m = as<std::string>(v, "aug.mode");
             if (m == "recursive") c.methods.primary_mode = aug::PredictionMode::Recursive;
             else if (m == "one_step") c.methods.primary_mode = aug::PredictionMode::OneStep;
             else throw ConfigError("aug.mode must be 'recursive' or 'one_step'");
         }},

        {"nn.learning_rate", [](RunConfig& c, const J& v) { c.methods.nn.learning_rate = as<double>(v, "nn.learning_rate"); }},
        {"nn.max_epochs", [](RunConfig& c, const J& v) { c.methods.nn.max_epochs = as<int>(v, "nn.max_epochs"); }},
        {"nn.patience", [](RunConfig& c, const J& v) { c.methods.nn.patience = as<int>(v, "nn.patience"); }},
        {"nn.batch_size", [](RunConfig& c, const J& v) { c.methods.nn.batch_size = as<int>(v, "nn.batch_size"); }},
        {"nn.restarts", [](RunConfig& c, const J& v) { c.methods.nn.restarts = as<int>(v, "nn.restarts"); }},
        {"nn.weight_decay", [](RunConfig& c, const J& v) { c.methods.nn.weight_decay = as<double>(v, "nn.weight_decay"); }},
        {"nn.hidden", [](RunConfig& c, const J& v) { c.methods.nn.hidden = as<std::vector<int>>(v, "nn.hidden"); }},

        {"bess.s_max", [](RunConfig& c, const J& v) { c.bess.battery.s_max = as<double>(v, "bess.s_max"); }},
        {"bess.eta", [](RunConfig& c, const J& v) { c.bess.battery.efficiency = as<double>(v, "bess.eta"); }},
        {"bess.soc_min", [](RunConfig& c, const J& v) { c.bess.battery.soc_min = as<double>(v, "bess.soc_min"); }},
        {"bess.soc_max", [](RunConfig& c, const J& v) { c.bess.battery.soc_max = as<double>(v, "bess.soc_max"); }},
        {"bess.soc_init", [](RunConfig& c, const J& v) { c.bess.battery.soc_initial = as<double>(v, "bess.soc_init"); }},
        {"bess.n_baseline_days", [](RunConfig& c, const J& v) { c.bess.battery.baseline_days = as<int>(v, "bess.n_baseline_days"); }},
        {"bess.half_width",
         [](RunConfig& c, const J& v) { c.bess.battery.congestion_half_width = as<int>(v, "bess.half_width"); }},
        {"bess.terminal_soc", [](RunConfig& c, const J& v) { c.bess.battery.terminal_soc = as<bool>(v, "bess.terminal_soc"); }},
        {"bess.action_penalty", [](RunConfig& c, const J& v) { c.bess.battery.action_penalty = as<double>(v, "bess.action_penalty"); }},
        {"bess.window_steps", [](RunConfig& c, const J& v) { c.bess.fleet.window_steps = as<int>(v, "bess.window_steps"); }},
        {"bess.rebate", [](RunConfig& c, const J& v) { c.bess.fleet.rebate = as<double>(v, "bess.rebate"); }},
        {"bess.participants",
         [](RunConfig& c, const J& v) { c.bess.fleet.participants = as<std::vector<std::string>>(v, "bess.participants"); }},

        {"bench.mavg_days", [](RunConfig& c, const J& v) { c.methods.mavg_days = as<int>(v, "bench.mavg_days"); }},
        {"bench.mid_x", [](RunConfig& c, const J& v) { c.methods.mid_x = as<int>(v, "bench.mid_x"); }},
        {"bench.mid_y", [](RunConfig& c, const J& v) { c.methods.mid_y = as<int>(v, "bench.mid_y"); }},
        {"bench.kmeans_k", [](RunConfig& c, const J& v) { c.methods.kmeans_k = as<int>(v, "bench.kmeans_k"); }},
        {"bench.lasso_alpha",
         [](RunConfig& c, const J& v) {
             if (v.is_null()) c.methods.lasso_alpha.reset();
             else c.methods.lasso_alpha = as<double>(v, "bench.lasso_alpha");
         }},

        {"eval.benchmark", [](RunConfig& c, const J& v) { c.benchmark = as<std::string>(v, "eval.benchmark"); }},
        {"eval.shrink_sizes", [](RunConfig& c, const J& v) { c.shrink_sizes = as<std::vector<std::size_t>>(v, "eval.shrink_sizes"); }},
        {"eval.shrink_seeds", [](RunConfig& c, const J& v) { c.shrink_seeds = as<int>(v, "eval.shrink_seeds"); }},

        {"factor.trials", [](RunConfig& c, const J& v) { c.factor.trials = as<long>(v, "factor.trials"); }},
        {"factor.rho", [](RunConfig& c, const J& v) { c.factor.rho = as<double>(v, "factor.rho"); }},
        {"factor.sigma_mu2", [](RunConfig& c, const J& v) { c.factor.sigma_mu2 = as<double>(v, "factor.sigma_mu2"); }},
        {"factor.omega2", [](RunConfig& c, const J& v) { c.factor.omega2 = as<double>(v, "factor.omega2"); }},
        {"factor.sigma_eps2", [](RunConfig& c, const J& v) { c.factor.sigma_eps2 = as<double>(v, "factor.sigma_eps2"); }},
        {"factor.donors", [](RunConfig& c, const J& v) { c.factor.donors = as<int>(v, "factor.donors"); }},
        {"factor.factors", [](RunConfig& c, const J& v) { c.factor.factors = as<int>(v, "factor.factors"); }},
        {"factor.beta_fit_steps", [](RunConfig& c, const J& v) { c.factor.beta_fit_steps = as<long>(v, "factor.beta_fit_steps"); }},
        {"factor.representability_steps",
         [](RunConfig& c, const J& v) { c.factor.representability_steps = as<long>(v, "factor.representability_steps"); }},
        {"factor.crossover_grid",
         [](RunConfig& c, const J& v) { c.factor.crossover_grid = as<std::vector<double>>(v, "factor.crossover_grid"); }},

        {"seed", [](RunConfig& c, const J& v) { c.seed = as<std::uint64_t>(v, "seed"); }},
        {"jobs", [](RunConfig& c, const J& v) { c.jobs = as<unsigned>(v, "jobs"); }},
    };
    return s;
}

inline void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) {
            flatten(*it, key, out);
        } else {
            if (out.count(key)) throw ConfigError("config key '" + key + "' given twice");
            out[key] = *it;
        }
    }
}

}  // namespace detail

inline std::vector<std::string> known_keys() {
    std::vector<std::string> k;
    for (const auto& [name, _] : detail::setters()) k.push_back(name);
    return k;
}

/// Applies a JSON object onto `base`. Keys may be nested objects or dotted
/// paths ("scm": {"lambda_basic": 1} and "scm.lambda_basic": 1 are the same).
inline RunConfig merge(RunConfig base, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    std::map<std::string, nlohmann::json> flat;
    detail::flatten(j, "", flat);
    const auto& set = detail::setters();
    for (const auto& [key, value] : flat) {
        const auto it = set.find(key);
        if (it == set.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(base, value);
    }
    return base;
}

inline RunConfig load(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return merge(std::move(base), j);
}

/// SYNTHBASE_SEED when set and parseable, otherwise `fallback`.
inline std::uint64_t env_seed(std::uint64_t fallback) {
    const char* s = std::getenv("SYNTHBASE_SEED");
    if (!s || !*s) return fallback;
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw ConfigError("SYNTHBASE_SEED must be a non-negative integer");
    return v;
}

/// The effective configuration as nested JSON; `merge` reads it back.
inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["panel"] = {{"step_minutes", c.ingest.step_minutes},
                  {"train", c.ingest.fractions.train},
                  {"validation", c.ingest.fractions.validation},
                  {"test", c.ingest.fractions.test}};
    j["calendar"] = {{"start_hour", c.ingest.default_calendar.start_hour},
                     {"duration_steps", c.ingest.default_calendar.duration_steps}};
    const auto& m = c.methods;
    j["scm"] = {{"lambda_basic", m.lambda_basic},
                {"lambda_augmented", m.lambda_augmented},
                {"standardize_penalty", m.standardize_penalty}};
    j["aug"] = {{"treated_lags", m.treated_lags},
                {"donor_lag_max", m.donor_lag_max},
                {"exogenous", m.exogenous},
                {"mode", m.primary_mode == aug::PredictionMode::Recursive ? "recursive" : "one_step"}};
    j["nn"] = {{"learning_rate", m.nn.learning_rate}, {"max_epochs", m.nn.max_epochs}, {"patience", m.nn.patience},
               {"batch_size", m.nn.batch_size},       {"restarts", m.nn.restarts},     {"weight_decay", m.nn.weight_decay},
               {"hidden", m.nn.hidden}};
    const auto& b = c.bess.battery;
    j["bess"] = {{"s_max", b.s_max},
                 {"eta", b.efficiency},
                 {"soc_min", b.soc_min},
                 {"soc_max", b.soc_max},
                 {"soc_init", b.soc_initial},
                 {"n_baseline_days", b.baseline_days},
                 {"half_width", b.congestion_half_width},
                 {"terminal_soc", b.terminal_soc},
                 {"action_penalty", b.action_penalty},
                 {"window_steps", c.bess.fleet.window_steps},
                 {"rebate", c.bess.fleet.rebate},
                 {"participants", c.bess.fleet.participants}};
    j["bench"] = {{"mavg_days", m.mavg_days},
                  {"mid_x", m.mid_x},
                  {"mid_y", m.mid_y},
                  {"kmeans_k", m.kmeans_k},
                  {"lasso_alpha", m.lasso_alpha ? nlohmann::json(*m.lasso_alpha) : nlohmann::json(nullptr)}};
    j["eval"] = {{"benchmark", c.benchmark}, {"shrink_sizes", c.shrink_sizes}, {"shrink_seeds", c.shrink_seeds}};
    const auto& f = c.factor;
    j["factor"] = {{"trials", f.trials},
                   {"rho", f.rho},
                   {"sigma_mu2", f.sigma_mu2},
                   {"omega2", f.omega2},
                   {"sigma_eps2", f.sigma_eps2},
                   {"donors", f.donors},
                   {"factors", f.factors},
                   {"beta_fit_steps", f.beta_fit_steps},
                   {"representability_steps", f.representability_steps},
                   {"crossover_grid", f.crossover_grid}};
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    return j;
}

}  // namespace synthbase::config
