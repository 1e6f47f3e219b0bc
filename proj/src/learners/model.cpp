#include <algorithm>
#include <cmath>

#include "internal.hpp"
#include "serverlens/learners.hpp"
#include "serverlens/simd.hpp"

namespace serverlens {

using nlohmann::json;

std::string_view to_string(LearnerKind kind) noexcept {
    switch (kind) {
        case LearnerKind::ElasticNet: return "elastic_net";
        case LearnerKind::ElasticNetPoly: return "elastic_net_pf";
        case LearnerKind::Gp: return "gp";
        case LearnerKind::Gbt: return "gbt";
        case LearnerKind::Rf: return "rf";
        case LearnerKind::Ffn: return "ffn";
    }
    return "gbt";
}

LearnerKind parse_learner(std::string_view name) {
    for (auto k : kAllLearners) {
        if (to_string(k) == name) return k;
    }
    throw ArgumentError("unknown learner '" + std::string(name) +
                        "' (expected elastic_net, elastic_net_pf, gp, gbt, rf or ffn)");
}

const std::vector<std::string>& learner_param_names(LearnerKind kind) {
    static const std::vector<std::string> en = {"l1_ratio"};
    static const std::vector<std::string> en_pf = {"l1_ratio", "degree"};
    static const std::vector<std::string> gp = {"n_inducing", "kernel", "learning_rate"};
    static const std::vector<std::string> gbt = {"colsample_bytree", "subsample", "max_depth", "n_rounds",
                                                 "reg_alpha",        "reg_lambda", "learning_rate"};
    static const std::vector<std::string> rf = {"colsample_bytree", "colsample_bylevel", "colsample_bynode",
                                                "max_depth",        "n_trees",           "reg_alpha",
                                                "reg_lambda",       "learning_rate"};
    static const std::vector<std::string> ffn = {"hidden_layers", "hidden_nodes", "dropout", "learning_rate"};
    switch (kind) {
        case LearnerKind::ElasticNet: return en;
        case LearnerKind::ElasticNetPoly: return en_pf;
        case LearnerKind::Gp: return gp;
        case LearnerKind::Gbt: return gbt;
        case LearnerKind::Rf: return rf;
        case LearnerKind::Ffn: return ffn;
    }
    return gbt;
}

std::size_t input_dim(const TrainedModel& model) {
    return std::visit([](const auto& m) { return m.input_dim; }, model);
}

std::vector<double> predict(const TrainedModel& model, const Matrix& rows) {
    const std::size_t d = input_dim(model);
    if (rows.cols() != d) {
        throw SchemaError("predict: model expects " + std::to_string(d) + " features, got " +
                          std::to_string(rows.cols()));
    }
    return std::visit(
        [&](const auto& m) -> std::vector<double> {
            using T = std::decay_t<decltype(m)>;
            std::vector<double> out(rows.rows());
            if constexpr (std::is_same_v<T, LinearModel>) {
                const Matrix xe = expand_polynomial(rows, m.degree);
                for (std::size_t i = 0; i < rows.rows(); ++i) out[i] = m.intercept + simd::dot(xe.row(i), m.coefficients);
            } else if constexpr (std::is_same_v<T, GbtModel>) {
                for (std::size_t i = 0; i < rows.rows(); ++i) {
                    double acc = 0.0;
                    for (const auto& t : m.trees) acc += t.predict(rows.row(i));
                    out[i] = m.base_score + m.learning_rate * acc;
                }
            } else if constexpr (std::is_same_v<T, ForestModel>) {
                for (std::size_t i = 0; i < rows.rows(); ++i) {
                    double acc = 0.0;
                    for (const auto& t : m.trees) acc += t.predict(rows.row(i));
                    out[i] = acc / static_cast<double>(m.trees.size());
                }
            } else if constexpr (std::is_same_v<T, GpModel>) {
                out = detail::predict_gp(m, rows);
            } else {
                out = detail::predict_net(m, rows);
            }
            return out;
        },
        model);
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

json matrix_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

Matrix matrix_from(const json& j) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) throw ParseError("matrix payload has the wrong number of cells");
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.data().begin());
    return m;
}

json tree_json(const RegressionTree& t) {
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<int> left;
    std::vector<int> right;
    std::vector<double> weight;
    for (const auto& n : t.nodes) {
        feature.push_back(n.feature);
        threshold.push_back(n.threshold);
        left.push_back(n.left);
        right.push_back(n.right);
        weight.push_back(n.weight);
    }
    return {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"weight", weight}};
}

RegressionTree tree_from(const json& j) {
    const auto feature = j.at("feature").get<std::vector<int>>();
    const auto threshold = j.at("threshold").get<std::vector<double>>();
    const auto left = j.at("left").get<std::vector<int>>();
    const auto right = j.at("right").get<std::vector<int>>();
    const auto weight = j.at("weight").get<std::vector<double>>();
    const std::size_t n = feature.size();
    if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || weight.size() != n) {
        throw ParseError("tree arrays are empty or of unequal length");
    }
    RegressionTree t;
    for (std::size_t i = 0; i < n; ++i) {
        if (feature[i] >= 0) {
            const auto ok = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(n); };
            if (!ok(left[i]) || !ok(right[i])) throw ParseError("tree child index out of range");
        }
        t.nodes.push_back({feature[i], threshold[i], left[i], right[i], weight[i]});
    }
    return t;
}

json trees_json(const std::vector<RegressionTree>& trees) {
    json a = json::array();
    for (const auto& t : trees) a.push_back(tree_json(t));
    return a;
}

std::vector<RegressionTree> trees_from(const json& j) {
    std::vector<RegressionTree> out;
    for (const auto& t : j) out.push_back(tree_from(t));
    return out;
}

void check_tree_features(const std::vector<RegressionTree>& trees, std::size_t d) {
    for (const auto& t : trees) {
        for (const auto& n : t.nodes) {
            if (n.feature >= static_cast<int>(d)) throw ParseError("tree splits on a feature beyond the input width");
        }
    }
}

}  // namespace

json model_to_json(const TrainedModel& model) {
    return std::visit(
        [](const auto& m) -> json {
            using T = std::decay_t<decltype(m)>;
            json j;
            j["input_dim"] = m.input_dim;
            if constexpr (std::is_same_v<T, LinearModel>) {
                j["type"] = "linear";
                j["degree"] = m.degree;
                j["coefficients"] = m.coefficients;
                j["intercept"] = m.intercept;
                j["lambda"] = m.lambda;
                j["l1_ratio"] = m.l1_ratio;
            } else if constexpr (std::is_same_v<T, GbtModel>) {
                j["type"] = "gbt";
                j["base_score"] = m.base_score;
                j["learning_rate"] = m.learning_rate;
                j["rounds_run"] = m.rounds_run;
                j["trees"] = trees_json(m.trees);
            } else if constexpr (std::is_same_v<T, ForestModel>) {
                j["type"] = "forest";
                j["trees"] = trees_json(m.trees);
            } else if constexpr (std::is_same_v<T, GpModel>) {
                j["type"] = "gp";
                j["kernel"] = {{"kind", std::string(to_string(m.kernel.kind))},
                               {"lengthscale", m.kernel.lengthscale},
                               {"signal_variance", m.kernel.signal_variance},
                               {"noise_variance", m.kernel.noise_variance}};
                j["inducing"] = matrix_json(m.inducing);
                j["weights"] = m.weights;
                j["y_mean"] = m.y_mean;
                j["y_scale"] = m.y_scale;
            } else {
                j["type"] = "net";
                json layers = json::array();
                for (std::size_t k = 0; k < m.weights.size(); ++k) {
                    layers.push_back({{"weights", matrix_json(m.weights[k])}, {"biases", m.biases[k]}});
                }
                j["layers"] = layers;
                j["y_mean"] = m.y_mean;
                j["y_scale"] = m.y_scale;
                j["epochs_run"] = m.epochs_run;
                j["learning_rate_used"] = m.learning_rate_used;
            }
            return j;
        },
        model);
}

TrainedModel model_from_json(const json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        const auto d = j.at("input_dim").get<std::size_t>();
        if (type == "linear") {
            LinearModel m;
            m.input_dim = d;
            m.degree = j.at("degree").get<int>();
            m.coefficients = j.at("coefficients").get<std::vector<double>>();
            m.intercept = j.at("intercept").get<double>();
            m.lambda = j.at("lambda").get<double>();
            m.l1_ratio = j.at("l1_ratio").get<double>();
            if (m.coefficients.size() != polynomial_width(d, m.degree)) {
                throw ParseError("linear model coefficient count does not match its degree");
            }
            return m;
        }
        if (type == "gbt") {
            GbtModel m;
            m.input_dim = d;
            m.base_score = j.at("base_score").get<double>();
            m.learning_rate = j.at("learning_rate").get<double>();
            m.rounds_run = j.at("rounds_run").get<std::size_t>();
            m.trees = trees_from(j.at("trees"));
            check_tree_features(m.trees, d);
            return m;
        }
        if (type == "forest") {
            ForestModel m;
            m.input_dim = d;
            m.trees = trees_from(j.at("trees"));
            if (m.trees.empty()) throw ParseError("forest without trees");
            check_tree_features(m.trees, d);
            return m;
        }
        if (type == "gp") {
            GpModel m;
            m.input_dim = d;
            const auto& k = j.at("kernel");
            m.kernel.kind = parse_kernel(k.at("kind").get<std::string>());
            m.kernel.lengthscale = k.at("lengthscale").get<double>();
            m.kernel.signal_variance = k.at("signal_variance").get<double>();
            m.kernel.noise_variance = k.at("noise_variance").get<double>();
            m.inducing = matrix_from(j.at("inducing"));
            m.weights = j.at("weights").get<std::vector<double>>();
            m.y_mean = j.at("y_mean").get<double>();
            m.y_scale = j.at("y_scale").get<double>();
            if (m.inducing.cols() != d || m.weights.size() != m.inducing.rows()) {
                throw ParseError("GP inducing set and weights disagree in shape");
            }
            return m;
        }
        if (type == "net") {
            NetModel m;
            m.input_dim = d;
            std::size_t width = d;
            for (const auto& layer : j.at("layers")) {
                Matrix w = matrix_from(layer.at("weights"));
                auto b = layer.at("biases").get<std::vector<double>>();
                if (w.cols() != width || b.size() != w.rows()) throw ParseError("network layer shapes do not chain");
                width = w.rows();
                m.weights.push_back(std::move(w));
                m.biases.push_back(std::move(b));
            }
            if (m.weights.empty() || width != 1) throw ParseError("network must end in a single output");
            m.y_mean = j.at("y_mean").get<double>();
            m.y_scale = j.at("y_scale").get<double>();
            m.epochs_run = j.at("epochs_run").get<std::size_t>();
            m.learning_rate_used = j.at("learning_rate_used").get<double>();
            return m;
        }
        throw ParseError("unknown model type '" + type + "'");
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed model record: ") + e.what());
    } catch (const ArgumentError& e) {
        throw ParseError(std::string("malformed model record: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

TrainedModel fit_learner(LearnerKind kind, const FitData& data, const HyperParams& hp, const FitOptions& options,
                         std::vector<Diagnostic>* diagnostics) {
    const auto& allowed = learner_param_names(kind);
    for (const auto& [name, value] : hp.values()) {
        if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
            throw ArgumentError("hyperparameter '" + name + "' does not apply to " + std::string(to_string(kind)));
        }
    }
    auto count = [&](std::string_view name, std::int64_t fallback) -> std::size_t {
        const auto v = hp.integer_or(name, fallback);
        if (v < 0) throw ArgumentError("hyperparameter '" + std::string(name) + "' must be non-negative");
        return static_cast<std::size_t>(v);
    };
    switch (kind) {
        case LearnerKind::ElasticNet:
            return fit_elastic_net(data, hp.real_or("l1_ratio", 0.5), 1, options, diagnostics);
        case LearnerKind::ElasticNetPoly:
            return fit_elastic_net(data, hp.real_or("l1_ratio", 0.5), static_cast<int>(hp.integer_or("degree", 2)),
                                   options, diagnostics);
        case LearnerKind::Gp: {
            GpParams p;
            p.inducing = count("n_inducing", 64);
            p.kernel = hp.contains("kernel") ? parse_kernel(hp.token("kernel")) : KernelKind::Rbf;
            p.learning_rate = hp.real_or("learning_rate", 0.01);
            return fit_gp(data, p, options, diagnostics);
        }
        case LearnerKind::Gbt: {
            GbtParams p;
            p.colsample_bytree = hp.real_or("colsample_bytree", 1.0);
            p.subsample = hp.real_or("subsample", 1.0);
            p.tree.max_depth = static_cast<int>(hp.integer_or("max_depth", 6));
            p.rounds = count("n_rounds", 1000);
            p.tree.alpha = hp.real_or("reg_alpha", 0.0);
            p.tree.lambda = hp.real_or("reg_lambda", 1.0);
            p.learning_rate = hp.real_or("learning_rate", 0.1);
            return fit_gbt(data, p, options, diagnostics);
        }
        case LearnerKind::Rf: {
            ForestParams p;
            p.colsample_bytree = hp.real_or("colsample_bytree", 1.0);
            p.tree.colsample_bylevel = hp.real_or("colsample_bylevel", 1.0);
            p.tree.colsample_bynode = hp.real_or("colsample_bynode", 1.0);
            p.tree.max_depth = static_cast<int>(hp.integer_or("max_depth", 6));
            p.trees = count("n_trees", 1000);
            p.tree.alpha = hp.real_or("reg_alpha", 0.0);
            p.tree.lambda = hp.real_or("reg_lambda", 0.0);
            return fit_random_forest(data, p, options, diagnostics);
        }
        case LearnerKind::Ffn: {
            FfnParams p;
            p.hidden_layers = count("hidden_layers", 1);
            p.hidden_nodes = count("hidden_nodes", 32);
            p.dropout = hp.real_or("dropout", 0.1);
            p.learning_rate = hp.real_or("learning_rate", 0.01);
            return fit_ffn(data, p, options, diagnostics);
        }
    }
    throw ArgumentError("unknown learner");
}

}  // namespace serverlens
