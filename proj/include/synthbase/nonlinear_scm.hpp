#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "synthbase/csv.hpp"
#include "synthbase/errors.hpp"

namespace synthbase::nn {

struct Layer {
    Eigen::MatrixXd weight;  // [out x in]
    Eigen::VectorXd bias;    // [out]
};

struct EpochRecord {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

/// Fully connected network with rectified-linear hidden layers and a linear
/// scalar output. Inputs and target are standardized with training
/// statistics stored on the model; `layers` act in standardized space.
struct MlpModel {
    std::vector<int> layer_sizes;
    std::vector<Layer> layers;
    double weight_decay = 0.0;
    Eigen::VectorXd input_mean;
    Eigen::VectorXd input_scale;
    double target_mean = 0.0;
    double target_scale = 1.0;
    std::vector<EpochRecord> training_trace;
    int best_epoch = 0;

    int inputs() const { return layer_sizes.empty() ? 0 : layer_sizes.front(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
            n += static_cast<std::size_t>(layer_sizes[l]) * static_cast<std::size_t>(layer_sizes[l + 1]) +
                 static_cast<std::size_t>(layer_sizes[l + 1]);
        }
        return n;
    }

    /// Standardized inputs as columns -> standardized outputs.
    Eigen::RowVectorXd forward_standardized(const Eigen::MatrixXd& inputs_by_column) const {
        Eigen::MatrixXd a = inputs_by_column;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            Eigen::MatrixXd z = layers[l].weight * a;
            z.colwise() += layers[l].bias;
            a = (l + 1 < layers.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
        }
        return a.row(0);
    }
};

/// Appendix-A architecture: [D, 64, 64, J, 1].
inline std::vector<int> default_layer_sizes(int inputs, int donors) { return {inputs, 64, 64, donors, 1}; }

/// He-normal weights on rectified-linear layers, Glorot on the output layer,
/// zero biases; identity standardization.
inline MlpModel make_mlp(const std::vector<int>& sizes, std::uint64_t seed, double weight_decay = 0.0) {
    if (sizes.size() < 2 || sizes.back() != 1) throw ShapeError("layer sizes must end in a scalar output");
    for (const int s : sizes) {
        if (s < 1) throw ShapeError("layer sizes must be positive");
    }
    MlpModel m;
    m.layer_sizes = sizes;
    m.weight_decay = weight_decay;
    m.input_mean = Eigen::VectorXd::Zero(sizes.front());
    m.input_scale = Eigen::VectorXd::Ones(sizes.front());
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int in = sizes[l];
        const int out = sizes[l + 1];
        const bool last = l + 2 == sizes.size();
        const double sd = last ? std::sqrt(2.0 / (in + out)) : std::sqrt(2.0 / in);
        std::normal_distribution<double> normal(0.0, sd);
        Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = normal(rng);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

inline Eigen::MatrixXd standardize_rows(const MlpModel& m, const Eigen::MatrixXd& rows) {
    if (rows.cols() != m.inputs()) {
        throw ShapeError("rows have " + std::to_string(rows.cols()) + " columns, model expects " +
                         std::to_string(m.inputs()));
    }
    return ((rows.rowwise() - m.input_mean.transpose()).array().rowwise() / m.input_scale.transpose().array())
        .matrix()
        .transpose();
}

/// Deterministic forward pass in original units.
inline Eigen::VectorXd predict_mlp(const MlpModel& m, const Eigen::MatrixXd& rows) {
    const Eigen::RowVectorXd out = m.forward_standardized(standardize_rows(m, rows));
    return (out.transpose().array() * m.target_scale + m.target_mean).matrix();
}

/// Row predictor adapter for `aug::predict_counterfactual`.
struct MlpPredictor {
    const MlpModel* model;
    double operator()(const Eigen::RowVectorXd& row) const { return predict_mlp(*model, row)(0); }
};

/// Ensemble over independent restarts: mean of member predictions.
struct MlpEnsemblePredictor {
    const std::vector<MlpModel>* models;
    double operator()(const Eigen::RowVectorXd& row) const {
        double s = 0.0;
        for (const auto& m : *models) s += predict_mlp(m, row)(0);
        return s / static_cast<double>(models->size());
    }
};

namespace detail {

/// Loss (mean squared error over the batch + decay * sum ||W||^2) and its
/// parameter gradients, both in standardized space. `x` holds inputs as
/// columns.
inline double loss_and_gradient(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                                std::vector<Layer>* grads) {
    const std::size_t L = m.layers.size();
    std::vector<Eigen::MatrixXd> acts(L + 1);
    std::vector<Eigen::MatrixXd> pre(L);
    acts[0] = x;
    for (std::size_t l = 0; l < L; ++l) {
        pre[l] = m.layers[l].weight * acts[l];
        pre[l].colwise() += m.layers[l].bias;
        acts[l + 1] = (l + 1 < L) ? Eigen::MatrixXd(pre[l].cwiseMax(0.0)) : pre[l];
    }
    const double batch = static_cast<double>(x.cols());
    const Eigen::RowVectorXd resid = acts[L].row(0) - y;
    double decay = 0.0;
    for (const auto& layer : m.layers) decay += layer.weight.squaredNorm();
    const double loss = resid.squaredNorm() / batch + m.weight_decay * decay;
    if (!grads) return loss;

    grads->resize(L);
    Eigen::MatrixXd delta = (2.0 / batch) * resid;
    for (std::size_t l = L; l-- > 0;) {
        (*grads)[l].weight = delta * acts[l].transpose() + 2.0 * m.weight_decay * m.layers[l].weight;
        (*grads)[l].bias = delta.rowwise().sum();
        if (l > 0) {
            delta = (m.layers[l].weight.transpose() * delta).cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
        }
    }
    return loss;
}

inline double mse_standardized(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) {
    if (x.cols() == 0) return 0.0;
    return (m.forward_standardized(x) - y).squaredNorm() / static_cast<double>(x.cols());
}

}  // namespace detail

struct TrainConfig {
    double learning_rate = 5e-4;
    int max_epochs = 2000;
    int patience = 10;
    int batch_size = 256;
    std::uint64_t seed = 0;
    int restarts = 3;
    double weight_decay = 1e-4;
    std::vector<int> hidden = {64, 64};  // followed by a J-unit layer when `donor_layer` > 0
    int donor_layer = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (max_epochs < 1 || patience < 1 || patience >= max_epochs) throw ConfigError("need 1 <= patience < max_epochs");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (restarts < 1) throw ConfigError("restarts must be >= 1");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    }
};

inline std::vector<int> layer_sizes_for(const TrainConfig& cfg, int inputs) {
    std::vector<int> sizes{inputs};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    if (cfg.donor_layer > 0) sizes.push_back(cfg.donor_layer);
    sizes.push_back(1);
    return sizes;
}

/// Mini-batch Adam on MSE + decay * ||W||^2 with early stopping on the
/// validation MSE; returns the parameters of the best validation epoch.
inline MlpModel train_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& X_val,
                          const Eigen::VectorXd& y_val, const TrainConfig& cfg) {
    cfg.validate();
    if (X.rows() != y.size() || X_val.rows() != y_val.size()) throw ShapeError("row counts do not match targets");
    if (X.rows() < 1 || X.cols() < 1) throw ShapeError("empty training design");
    if (X_val.rows() > 0 && X_val.cols() != X.cols()) throw ShapeError("validation design has a different width");

    MlpModel model = make_mlp(layer_sizes_for(cfg, static_cast<int>(X.cols())), cfg.seed, cfg.weight_decay);
    model.input_mean = X.colwise().mean().transpose();
    model.input_scale = ((X.rowwise() - model.input_mean.transpose()).array().square().colwise().mean().sqrt())
                            .transpose()
                            .unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; })
                            .matrix();
    model.target_mean = y.mean();
    const double ysd = std::sqrt((y.array() - model.target_mean).square().mean());
    model.target_scale = ysd > 1e-12 ? ysd : 1.0;

    const Eigen::MatrixXd xs = standardize_rows(model, X);
    const Eigen::RowVectorXd ys = ((y.array() - model.target_mean) / model.target_scale).matrix().transpose();
    const bool have_val = X_val.rows() > 0;
    const Eigen::MatrixXd xv = have_val ? standardize_rows(model, X_val) : Eigen::MatrixXd();
    const Eigen::RowVectorXd yv =
        have_val ? Eigen::RowVectorXd(((y_val.array() - model.target_mean) / model.target_scale).matrix().transpose())
                 : Eigen::RowVectorXd();
    const double unit = model.target_scale * model.target_scale;

    std::vector<Layer> m1(model.layers.size()), m2(model.layers.size()), grads;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        m1[l] = {Eigen::MatrixXd::Zero(model.layers[l].weight.rows(), model.layers[l].weight.cols()),
                 Eigen::VectorXd::Zero(model.layers[l].bias.size())};
        m2[l] = m1[l];
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
    std::iota(order.begin(), order.end(), 0);

    MlpModel best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    long step = 0;
    const auto n = static_cast<Eigen::Index>(order.size());
    Eigen::MatrixXd xb;
    Eigen::RowVectorXd yb;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
            const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
            xb.resize(xs.rows(), len);
            yb.resize(len);
            for (Eigen::Index i = 0; i < len; ++i) {
                xb.col(i) = xs.col(order[static_cast<std::size_t>(start + i)]);
                yb(i) = ys(order[static_cast<std::size_t>(start + i)]);
            }
            const double loss = detail::loss_and_gradient(model, xb, yb, &grads);
            if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                auto update = [&](auto& param, auto& mom1, auto& mom2, const auto& g) {
                    mom1 = beta1 * mom1 + (1.0 - beta1) * g;
                    mom2 = beta2 * mom2 + (1.0 - beta2) * g.cwiseProduct(g);
                    param.array() -= cfg.learning_rate * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + eps);
                };
                update(model.layers[l].weight, m1[l].weight, m2[l].weight, grads[l].weight);
                update(model.layers[l].bias, m1[l].bias, m2[l].bias, grads[l].bias);
            }
        }
        const double train_mse = detail::mse_standardized(model, xs, ys) * unit;
        const double val_mse = have_val ? detail::mse_standardized(model, xv, yv) * unit : train_mse;
        if (!std::isfinite(train_mse) || !std::isfinite(val_mse)) {
            throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
        }
        model.training_trace.push_back({epoch, train_mse, val_mse});
        if (val_mse < best_val) {
            best_val = val_mse;
            best = model;
            best.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    best.training_trace = model.training_trace;
    return best;
}

/// `cfg.restarts` independent runs with seeds derived from (seed, restart).
inline std::vector<MlpModel> train_mlp_restarts(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                                const Eigen::MatrixXd& X_val, const Eigen::VectorXd& y_val,
                                                const TrainConfig& cfg) {
    std::vector<MlpModel> models;
    for (int r = 0; r < cfg.restarts; ++r) {
        TrainConfig c = cfg;
        c.seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(r) + 1;
        models.push_back(train_mlp(X, y, X_val, y_val, c));
    }
    return models;
}

/// Flattened view of all parameters: per layer, weights (column-major) then biases.
inline std::vector<double*> parameter_pointers(MlpModel& m) {
    std::vector<double*> ptrs;
    for (auto& layer : m.layers) {
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) ptrs.push_back(layer.weight.data() + i);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) ptrs.push_back(layer.bias.data() + i);
    }
    return ptrs;
}

/// Analytic gradients of the single-row loss against central differences
/// (step 1e-5). Relative error uses max(|analytic|, |numeric|, 1e-4) as the
/// denominator so that vanishing gradients are compared absolutely.
inline double gradient_check(const MlpModel& model, const Eigen::VectorXd& row, double target) {
    if (row.size() != model.inputs()) throw ShapeError("row width does not match the model");
    MlpModel m = model;
    const Eigen::MatrixXd x = row;
    Eigen::RowVectorXd y(1);
    y(0) = target;
    std::vector<Layer> grads;
    detail::loss_and_gradient(m, x, y, &grads);
    std::vector<double> analytic;
    for (const auto& g : grads) {
        analytic.insert(analytic.end(), g.weight.data(), g.weight.data() + g.weight.size());
        analytic.insert(analytic.end(), g.bias.data(), g.bias.data() + g.bias.size());
    }
    constexpr double h = 1e-5;
    double worst = 0.0;
    auto ptrs = parameter_pointers(m);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const double saved = *ptrs[i];
        *ptrs[i] = saved + h;
        const double up = detail::loss_and_gradient(m, x, y, nullptr);
        *ptrs[i] = saved - h;
        const double down = detail::loss_and_gradient(m, x, y, nullptr);
        *ptrs[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

/// Euclidean norm of the single-row loss gradient.
inline double gradient_norm(const MlpModel& model, const Eigen::VectorXd& row, double target) {
    const Eigen::MatrixXd x = row;
    Eigen::RowVectorXd y(1);
    y(0) = target;
    std::vector<Layer> grads;
    detail::loss_and_gradient(model, x, y, &grads);
    double s = 0.0;
    for (const auto& g : grads) s += g.weight.squaredNorm() + g.bias.squaredNorm();
    return std::sqrt(s);
}

inline nlohmann::json to_json(const MlpModel& m) {
    std::vector<double> params;
    for (const auto& layer : m.layers) {
        params.insert(params.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
        params.insert(params.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
    }
    const auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {{"format", "synthbase-mlp"},
            {"version", 1},
            {"layer_sizes", m.layer_sizes},
            {"activation", "relu"},
            {"weight_decay", m.weight_decay},
            {"input_mean", vec(m.input_mean)},
            {"input_scale", vec(m.input_scale)},
            {"target_mean", m.target_mean},
            {"target_scale", m.target_scale},
            {"best_epoch", m.best_epoch},
            {"parameters", params}};
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1) throw SchemaError("unsupported model version");
    MlpModel m = make_mlp(j.at("layer_sizes").get<std::vector<int>>(), 0, j.at("weight_decay").get<double>());
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (params.size() != m.parameter_count()) throw SchemaError("parameter count does not match layer sizes");
    std::size_t k = 0;
    for (auto& layer : m.layers) {
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = params[k++];
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias.data()[i] = params[k++];
    }
    const auto in_mean = j.at("input_mean").get<std::vector<double>>();
    const auto in_scale = j.at("input_scale").get<std::vector<double>>();
    m.input_mean = Eigen::Map<const Eigen::VectorXd>(in_mean.data(), static_cast<Eigen::Index>(in_mean.size()));
    m.input_scale = Eigen::Map<const Eigen::VectorXd>(in_scale.data(), static_cast<Eigen::Index>(in_scale.size()));
    m.target_mean = j.at("target_mean").get<double>();
    m.target_scale = j.at("target_scale").get<double>();
    m.best_epoch = j.value("best_epoch", 0);
    return m;
}

inline void export_training_trace(const MlpModel& m, const std::string& path) {
    auto out = csv::open_for_write(path);
    csv::write_row(out, {"epoch", "train_mse", "val_mse"});
    for (const auto& e : m.training_trace) {
        csv::write_row(out, {std::to_string(e.epoch), csv::format_double(e.train_mse), csv::format_double(e.val_mse)});
    }
}

}  // namespace synthbase::nn
