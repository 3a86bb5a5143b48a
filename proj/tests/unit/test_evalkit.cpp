#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "support/micro_panel.hpp"
#include "synthbase/demo_panel.hpp"
#include "synthbase/evalkit.hpp"

using namespace synthbase;
using eval::Method;

namespace {

const panel::PanelDataset& small_demo() {
    static const panel::PanelDataset p = [] {
        demo::DemoOptions o;
        o.buildings = 8;
        o.days = 60;
        o.seed = 11;
        return demo::make_demo_panel(o);
    }();
    return p;
}

eval::MethodSettings small_settings() {
    eval::MethodSettings s;
    s.treated_lags = 48;
    s.donor_lag_max = 48;
    return s;
}

}  // namespace

TEST(Report, DiffPercentConvention) {
    EXPECT_NEAR(eval::diff_percent(0.1426, 0.1274), 10.66, 0.005);
    EXPECT_NEAR(eval::diff_percent(0.1426, 0.0821), 42.43, 0.005);
    EXPECT_EQ(eval::diff_percent(2.0, 2.0), 0.0);
    EXPECT_LT(eval::diff_percent(1.0, 1.5), 0.0);
}

TEST(Concentration, SingleUniformAndExactShare) {
    EXPECT_EQ(eval::weight_concentration(Eigen::VectorXd::Ones(1)).donors_to_80pct, 1);
    const auto u = eval::weight_concentration(Eigen::VectorXd::Constant(299, 1.0 / 299));
    EXPECT_EQ(u.donors_to_80pct, 240);
    EXPECT_NEAR(u.curve(298), 1.0, 1e-12);
    Eigen::VectorXd w(4);
    w << 0.1, -0.4, 0.4, 0.1;
    const auto c = eval::weight_concentration(w);
    EXPECT_EQ(c.donors_to_80pct, 2);
    EXPECT_EQ(c.max_abs_weight, 0.4);
    for (Eigen::Index i = 1; i < c.curve.size(); ++i) EXPECT_GE(c.curve(i), c.curve(i - 1));
    EXPECT_THROW(eval::weight_concentration(Eigen::VectorXd()), DimensionError);
}

TEST(Methods, NamesRoundTrip) {
    for (const auto& [m, name] : eval::method_names()) {
        EXPECT_EQ(eval::to_string(m), name);
        EXPECT_EQ(eval::method_from_string(name), m);
    }
    EXPECT_THROW(eval::method_from_string("scm_magic"), ConfigError);
}

TEST(Rotation, MovingAverageAggregateIsRowMean) {
    const auto p = testdata::micro_panel(2, 40, [](std::size_t t, std::size_t b) {
        return 1.0 + 0.2 * static_cast<double>(b) + 0.5 * std::sin(static_cast<double>(t) * 0.13) + 0.1 * static_cast<double>((t / 48) % 7);
    });
    const auto r = eval::run_rotation(p, {Method::MovingAverage}, p.buildings, {});
    ASSERT_EQ(r.per_building.size(), 2u);
    const auto& a = r.aggregate_for("mavg");
    EXPECT_DOUBLE_EQ(a.mean, (r.per_building[0].mse + r.per_building[1].mse) / 2.0);
    EXPECT_LE(a.min, a.mean);
    EXPECT_LE(a.mean, a.max);
    EXPECT_EQ(a.buildings, 2u);
    EXPECT_FALSE(r.per_building[0].weights.has_value());
    EXPECT_EQ(r.per_building[0].event_steps, 12u * 4);  // 12 test days, one 4-step event each
}

TEST(Rotation, AggregatesRecomputableAndBenchmarkDiff) {
    const auto& p = small_demo();
    const auto r = eval::run_rotation(p, {Method::MovingAverage, Method::ScmS1R}, {"B001", "B002", "B003"},
                                      small_settings(), "mavg");
    for (const auto& a : r.aggregate) {
        double s = 0.0;
        int n = 0;
        for (const auto& c : r.per_building) {
            if (c.method == a.method) s += c.mse, ++n;
        }
        EXPECT_DOUBLE_EQ(a.mean, s / n);
        EXPECT_LE(a.min, a.mean);
        EXPECT_LE(a.mean, a.max);
    }
    const auto& scm = r.aggregate_for("scm_s1r");
    EXPECT_DOUBLE_EQ(scm.diff_pct, eval::diff_percent(r.aggregate_for("mavg").mean, scm.mean));
    EXPECT_TRUE(std::isnan(r.aggregate_for("mavg").diff_pct));
    ASSERT_TRUE(r.weight_share.count("scm_s1r"));
    EXPECT_EQ(r.weight_share.at("scm_s1r").donors_to_80pct.size(), 3u);

    auto copy = r;
    copy.benchmark = "kmeans_lasso";
    EXPECT_THROW(eval::summarize(copy), ConfigError);
}

TEST(Rotation, DeterministicAcrossRunsAndWorkers) {
    const auto& p = small_demo();
    const std::vector<Method> methods{Method::ScmS1R, Method::ScmAugDpast, Method::KmeansLasso};
    const std::vector<std::string> ids{"B001", "B004"};
    auto s = small_settings();
    s.kmeans_k = 2;
    const auto a = eval::run_rotation(p, methods, ids, s, "", 1);
    const auto b = eval::run_rotation(p, methods, ids, s, "", 1);
    const auto c = eval::run_rotation(p, methods, ids, s, "", 3);
    EXPECT_EQ(eval::report_json(a).dump(), eval::report_json(b).dump());
    EXPECT_EQ(eval::report_json(a).dump(), eval::report_json(c).dump());
    for (std::size_t i = 0; i < a.per_building.size(); ++i) EXPECT_EQ(a.per_building[i].mse, c.per_building[i].mse);
}

TEST(Shrink, FullPoolMatchesRotationAndSingleDonorIsWorse) {
    const auto& p = small_demo();
    const auto s = small_settings();
    const std::vector<std::string> treated{"B001", "B002", "B003"};
    const std::size_t J = p.building_count() - 1;
    const auto rows = eval::shrink_study(p, {Method::ScmS1R}, treated, {1, J}, 5, s);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].per_seed.size(), 5u);
    EXPECT_EQ(rows[1].per_seed.size(), 1u);
    double full = 0.0;
    for (const auto& id : treated) full += eval::evaluate_cell(p, id, Method::ScmS1R, s).mse;
    EXPECT_EQ(rows[1].mean, full / 3.0);

    // Donors share one signal plus independent noise, so a single donor keeps
    // noise that the pooled fit averages out.
    std::mt19937_64 rng(12);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd noise(40 * 48, 9);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = z(rng);
    const auto f = testdata::micro_panel(9, 40, [&](std::size_t t, std::size_t b) {
        const double common = 5.0 + 2.0 * std::sin(2.0 * 3.14159265358979 * static_cast<double>(t % 48) / 48.0);
        return common + noise(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(b));
    });
    for (const std::string id : {"M01", "M02", "M03"}) {
        const double all = eval::evaluate_cell(f, id, Method::ScmS1R, s).mse;
        const std::size_t tb = f.index_of(id);
        for (std::size_t d = 0; d < f.building_count(); ++d) {
            if (d == tb) continue;
            EXPECT_GE(eval::evaluate_cell(f, id, Method::ScmS1R, s, std::vector<std::size_t>{d}).mse, all) << id << " donor " << d;
        }
    }
    EXPECT_THROW(eval::shrink_study(p, {Method::ScmS1R}, treated, {0}, 5, s), ConfigError);
    EXPECT_THROW(eval::shrink_study(p, {Method::ScmS1R}, treated, {J + 1}, 5, s), ConfigError);
    EXPECT_THROW(eval::shrink_study(p, {Method::ScmS1R}, treated, {J}, 0, s), ConfigError);
}

TEST(Nesting, TrainingMseNonIncreasingAtZeroLambda) {
    const auto& p = small_demo();
    auto s = small_settings();
    s.lambda_basic = 0.0;
    s.lambda_augmented = 0.0;
    s.standardize_penalty = false;
    for (const std::string id : {"B001", "B005"}) {
        const Method chain[] = {Method::ScmS1R, Method::ScmAugExf, Method::ScmAugTpast, Method::ScmAugDpast};
        // Common rows: start after the longest lag of the richest design.
        const auto richest = aug::plan_design(p, id, eval::design_spec(Method::ScmAugDpast, s));
        const panel::IndexRange rows{richest.max_lag(), p.splits.train.end};
        double prev = std::numeric_limits<double>::infinity();
        for (const Method m : chain) {
            auto plan = aug::plan_design(p, id, eval::design_spec(m, s));
            if (plan.spec.use_donor_lags) plan = richest;
            const auto d = aug::build_design(p, plan, rows);
            ASSERT_EQ(d.rows.front(), rows.begin);
            const auto w = scm::fit_design(d.matrix, d.target, d.column_provenance, d.column_names,
                                           eval::constraint_for(m, s), false);
            const double mse = (scm::predict_linear(w, d.matrix) - d.target).squaredNorm() / static_cast<double>(d.target.size());
            EXPECT_LE(mse, prev * (1.0 + 1e-9)) << id << " " << eval::to_string(m);
            prev = mse;
        }
    }
}

TEST(Report, GoldenSchema) {
    const auto p = testdata::micro_panel(3, 40, [](std::size_t t, std::size_t b) { return 1.0 + 0.1 * static_cast<double>(b) + std::sin(0.2 * static_cast<double>(t)); });
    auto r = eval::run_rotation(p, {Method::MovingAverage, Method::ScmS1R}, {"M01"}, small_settings(), "mavg");
    r.shrink_curve.push_back({"scm_s1r", 2, 1.0, 0.5, {0.5, 1.5}});
    const auto dir = std::filesystem::temp_directory_path() / "synthbase_report_test";
    std::filesystem::remove_all(dir);
    const auto stem = eval::write_report(r, dir.string(), "golden");
    EXPECT_EQ(stem, (dir / "report_golden").string());
    std::ifstream csv(stem + ".csv");
    std::string header, line;
    std::getline(csv, header);
    EXPECT_EQ(header, "building,method,mse,mse_one_step,mse_test,event_steps,donors_to_80pct,max_abs_weight");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 2);

    std::ifstream js(stem + ".json");
    const auto j = nlohmann::json::parse(js);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"aggregate", "benchmark", "shrink_curve", "weight_share"}));
    keys.clear();
    for (const auto& [k, v] : j["aggregate"][0].items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"buildings", "diff_pct", "max", "method", "min", "mse", "std"}));
    EXPECT_TRUE(j["aggregate"][0]["diff_pct"].is_null());
    EXPECT_TRUE(j["aggregate"][1]["diff_pct"].is_number());
    keys.clear();
    for (const auto& [k, v] : j["shrink_curve"][0].items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"method", "mse", "per_seed", "pool_size", "std"}));
    keys.clear();
    for (const auto& [k, v] : j["weight_share"]["scm_s1r"].items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"donors_to_80pct", "max_abs_weight", "mean_curve", "mean_donors_to_80pct"}));
    std::filesystem::remove_all(dir);
}
