#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "synthbase/nonlinear_scm.hpp"

using namespace synthbase;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> z(0.0, sd);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
    return m;
}

std::vector<double> flat(nn::MlpModel m) {
    std::vector<double> v;
    for (double* p : nn::parameter_pointers(m)) v.push_back(*p);
    return v;
}

}  // namespace

TEST(Mlp, ZeroWeightsReturnOutputBias) {
    auto m = nn::make_mlp({4, 8, 3, 1}, 1);
    for (double* p : nn::parameter_pointers(m)) *p = 0.0;
    m.layers.back().bias(0) = 0.7;
    m.target_mean = 2.0;
    m.target_scale = 3.0;
    std::mt19937_64 rng(2);
    const auto out = nn::predict_mlp(m, gaussian(10, 4, rng));
    EXPECT_TRUE(((out.array() - (2.0 + 3.0 * 0.7)).abs() < 1e-15).all());
}

TEST(Mlp, HandSetSingleUnit) {
    auto m = nn::make_mlp({2, 1, 1}, 1);
    m.layers[0].weight << 1.0, -1.0;
    m.layers[0].bias << 0.5;
    m.layers[1].weight << 2.0;
    m.layers[1].bias << 0.1;
    Eigen::MatrixXd rows(2, 2);
    rows << 3.0, 1.0, 0.0, 3.0;
    const auto out = nn::predict_mlp(m, rows);
    EXPECT_DOUBLE_EQ(out(0), 5.1);  // relu(2.5) * 2 + 0.1
    EXPECT_DOUBLE_EQ(out(1), 0.1);  // unit inactive
    EXPECT_THROW(nn::predict_mlp(m, Eigen::MatrixXd::Zero(1, 3)), ShapeError);
    EXPECT_THROW(nn::make_mlp({2, 3}, 1), ShapeError);
    EXPECT_EQ(m.parameter_count(), 5u);
    EXPECT_EQ(nn::make_mlp(nn::default_layer_sizes(7, 5), 0).parameter_count(), 7u * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5 + 5 + 1);
}

TEST(Mlp, GradientCheckAcrossSeeds) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        const int inputs = 3 + static_cast<int>(seed % 6);
        auto m = nn::make_mlp(nn::default_layer_sizes(inputs, 5), seed, 1e-4);
        for (auto& layer : m.layers) layer.bias = gaussian(layer.bias.size(), 1, rng, 0.1);
        const Eigen::VectorXd row = gaussian(inputs, 1, rng);
        worst = std::max(worst, nn::gradient_check(m, row, gaussian(1, 1, rng)(0)));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(Mlp, ZeroInputGivesZeroFirstLayerWeightGradient) {
    const auto m = nn::make_mlp({5, 16, 1}, 3);
    std::vector<nn::Layer> grads;
    Eigen::RowVectorXd y(1);
    y(0) = 1.3;
    nn::detail::loss_and_gradient(m, Eigen::MatrixXd::Zero(5, 1), y, &grads);
    EXPECT_TRUE(grads[0].weight.isZero(0.0));
    EXPECT_GT(nn::gradient_norm(m, Eigen::VectorXd::Zero(5), 1.3), 0.0);
}

TEST(Training, DeterministicForFixedSeed) {
    std::mt19937_64 rng(4);
    const auto X = gaussian(200, 4, rng);
    const Eigen::VectorXd y = X.rowwise().sum().array().sin().matrix();
    nn::TrainConfig cfg;
    cfg.hidden = {16};
    cfg.max_epochs = 20;
    cfg.batch_size = 32;
    cfg.seed = 9;
    const auto a = nn::train_mlp(X, y, X.topRows(50), y.head(50), cfg);
    const auto b = nn::train_mlp(X, y, X.topRows(50), y.head(50), cfg);
    EXPECT_EQ(flat(a), flat(b));
    cfg.seed = 10;
    EXPECT_NE(flat(a), flat(nn::train_mlp(X, y, X.topRows(50), y.head(50), cfg)));
}

TEST(Training, EarlyStoppingKeepsBestValidationEpoch) {
    std::mt19937_64 rng(5);
    const auto X = gaussian(60, 6, rng);
    const Eigen::VectorXd y = gaussian(60, 1, rng);  // pure noise: validation error soon rises
    const auto Xv = gaussian(60, 6, rng);
    const Eigen::VectorXd yv = gaussian(60, 1, rng);
    nn::TrainConfig cfg;
    cfg.hidden = {32, 32};
    cfg.learning_rate = 1e-2;
    cfg.max_epochs = 500;
    cfg.patience = 10;
    cfg.batch_size = 16;
    cfg.weight_decay = 0.0;
    const auto m = nn::train_mlp(X, y, Xv, yv, cfg);
    ASSERT_FALSE(m.training_trace.empty());
    EXPECT_LT(m.training_trace.size(), 500u);
    const auto best = std::min_element(m.training_trace.begin(), m.training_trace.end(),
                                       [](const auto& a, const auto& b) { return a.val_mse < b.val_mse; });
    EXPECT_EQ(m.best_epoch, best->epoch);
    EXPECT_EQ(static_cast<int>(m.training_trace.size()), m.best_epoch + cfg.patience);
    const Eigen::VectorXd pred = nn::predict_mlp(m, Xv);
    EXPECT_NEAR((pred - yv).squaredNorm() / 60.0, best->val_mse, 1e-9);
}

TEST(Training, LearnsXor) {
    Eigen::MatrixXd X(200, 2);
    Eigen::VectorXd y(200);
    for (int i = 0; i < 200; ++i) {
        const int a = i % 2, b = (i / 2) % 2;
        X(i, 0) = a;
        X(i, 1) = b;
        y(i) = a ^ b;
    }
    nn::TrainConfig cfg;
    cfg.hidden = {16, 16};
    cfg.learning_rate = 1e-2;
    cfg.max_epochs = 400;
    cfg.patience = 399;
    cfg.batch_size = 20;
    cfg.weight_decay = 0.0;
    cfg.seed = 1;
    const auto m = nn::train_mlp(X, y, X, y, cfg);
    const auto pred = nn::predict_mlp(m, X.topRows(4));
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(pred(i), y(i), 0.1) << i;
}

TEST(Training, LinearDataWithinTwiceLeastSquares) {
    std::mt19937_64 rng(6);
    const auto X = gaussian(600, 5, rng);
    Eigen::VectorXd beta(5);
    beta << 1.0, -0.5, 0.25, 2.0, 0.0;
    const Eigen::VectorXd y = X * beta + gaussian(600, 1, rng, 0.3);
    const auto Xt = gaussian(400, 5, rng);
    const Eigen::VectorXd yt = Xt * beta + gaussian(400, 1, rng, 0.3);

    Eigen::MatrixXd A(400, 6);
    A << X.topRows(400), Eigen::VectorXd::Ones(400);
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(y.head(400));
    Eigen::MatrixXd At(400, 6);
    At << Xt, Eigen::VectorXd::Ones(400);
    const double ls = (At * coef - yt).squaredNorm() / 400.0;

    nn::TrainConfig cfg;
    cfg.hidden = {32};
    cfg.learning_rate = 3e-3;
    cfg.max_epochs = 500;
    cfg.patience = 30;
    cfg.batch_size = 32;
    const auto m = nn::train_mlp(X.topRows(400), y.head(400), X.bottomRows(200), y.tail(200), cfg);
    const double mlp = (nn::predict_mlp(m, Xt) - yt).squaredNorm() / 400.0;
    EXPECT_LT(mlp, 2.0 * ls) << "mlp " << mlp << " least squares " << ls;
}

TEST(Training, ConfigValidation) {
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(10, 2);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(10);
    nn::TrainConfig cfg;
    cfg.patience = cfg.max_epochs;
    EXPECT_THROW(nn::train_mlp(X, y, X, y, cfg), ConfigError);
    cfg = {};
    cfg.learning_rate = 0.0;
    EXPECT_THROW(nn::train_mlp(X, y, X, y, cfg), ConfigError);
    cfg = {};
    EXPECT_THROW(nn::train_mlp(X, y.head(9), X, y, cfg), ShapeError);
}

TEST(Training, RestartsUseDistinctSeeds) {
    std::mt19937_64 rng(7);
    const auto X = gaussian(100, 3, rng);
    const Eigen::VectorXd y = X.col(0);
    nn::TrainConfig cfg;
    cfg.hidden = {8};
    cfg.max_epochs = 5;
    cfg.patience = 2;
    cfg.restarts = 3;
    const auto models = nn::train_mlp_restarts(X, y, X, y, cfg);
    ASSERT_EQ(models.size(), 3u);
    EXPECT_NE(flat(models[0]), flat(models[1]));
    const nn::MlpEnsemblePredictor ens{&models};
    const Eigen::RowVectorXd row = X.row(0);
    double mean = 0.0;
    for (const auto& m : models) mean += nn::predict_mlp(m, row)(0) / 3.0;
    EXPECT_NEAR(ens(row), mean, 1e-12);
}

TEST(Serialization, JsonRoundTripIsExact) {
    std::mt19937_64 rng(8);
    const auto X = gaussian(80, 4, rng);
    const Eigen::VectorXd y = X.col(1).array().square().matrix();
    nn::TrainConfig cfg;
    cfg.hidden = {12, 6};
    cfg.max_epochs = 10;
    cfg.patience = 5;
    const auto m = nn::train_mlp(X, y, X, y, cfg);
    const auto back = nn::mlp_from_json(nlohmann::json::parse(nn::to_json(m).dump()));
    EXPECT_EQ(back.layer_sizes, m.layer_sizes);
    EXPECT_EQ(nn::predict_mlp(back, X), nn::predict_mlp(m, X));
    auto j = nn::to_json(m);
    j["version"] = 2;
    EXPECT_THROW(nn::mlp_from_json(j), SchemaError);
    j = nn::to_json(m);
    j["parameters"].erase(0);
    EXPECT_THROW(nn::mlp_from_json(j), SchemaError);

    const auto path = std::filesystem::temp_directory_path() / "synthbase_trace_test.csv";
    nn::export_training_trace(m, path.string());
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "epoch,train_mse,val_mse");
    std::filesystem::remove(path);
}
