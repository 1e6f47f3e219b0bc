#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "serverlens/common.hpp"
#include "serverlens/dataset.hpp"
#include "serverlens/hyperparams.hpp"

namespace serverlens {

// Candidate learners in their fixed tie-break order.
enum class LearnerKind { ElasticNet, ElasticNetPoly, Gp, Gbt, Rf, Ffn };

inline constexpr std::array<LearnerKind, 6> kAllLearners = {LearnerKind::ElasticNet, LearnerKind::ElasticNetPoly,
                                                            LearnerKind::Gp,         LearnerKind::Gbt,
                                                            LearnerKind::Rf,         LearnerKind::Ffn};

std::string_view to_string(LearnerKind kind) noexcept;
LearnerKind parse_learner(std::string_view name);

// Hyperparameter names each learner accepts.
const std::vector<std::string>& learner_param_names(LearnerKind kind);

// ---------------------------------------------------------------------------
// Model types

struct LinearModel {
    std::size_t input_dim = 0;
    int degree = 1;
    std::vector<double> coefficients;  // over expand_polynomial(x, degree) columns
    double intercept = 0.0;
    double lambda = 0.0;
    double l1_ratio = 1.0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double weight = 0.0;
};

// Rows with x[feature] < threshold go left.
struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> row) const noexcept;
    int depth() const;
    bool uses_feature(std::size_t feature) const;
};

struct GbtModel {
    std::size_t input_dim = 0;
    double base_score = 0.0;
    double learning_rate = 1.0;
    std::vector<RegressionTree> trees;  // truncated at the best validation round
    std::size_t rounds_run = 0;
};

// Leaves store fitted values of y; prediction averages the trees.
struct ForestModel {
    std::size_t input_dim = 0;
    std::vector<RegressionTree> trees;
};

enum class KernelKind { Rbf, Matern12, Matern32, Matern52 };

std::string_view to_string(KernelKind kind) noexcept;
KernelKind parse_kernel(std::string_view name);

struct KernelSpec {
    KernelKind kind = KernelKind::Rbf;
    double lengthscale = 1.0;
    double signal_variance = 1.0;
    double noise_variance = 1e-2;  // white-noise term, diagonal only

    // Stationary part as a function of Euclidean distance r.
    double operator()(double r) const noexcept;
    // lengthscale * d k / d lengthscale at distance r.
    double log_lengthscale_derivative(double r) const noexcept;
};

struct GpModel {
    std::size_t input_dim = 0;
    KernelSpec kernel;
    Matrix inducing;
    std::vector<double> weights;
    double y_mean = 0.0;
    double y_scale = 1.0;
};

struct NetModel {
    std::size_t input_dim = 0;
    std::vector<Matrix> weights;              // layer l: out x in
    std::vector<std::vector<double>> biases;  // layer l: out
    double y_mean = 0.0;
    double y_scale = 1.0;
    std::size_t epochs_run = 0;
    double learning_rate_used = 0.0;
};

using TrainedModel = std::variant<LinearModel, GbtModel, ForestModel, GpModel, NetModel>;

std::size_t input_dim(const TrainedModel& model);

// Throws SchemaError when rows do not have the model's input width.
std::vector<double> predict(const TrainedModel& model, const Matrix& rows);

nlohmann::json model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Fitting

struct FitData {
    const Matrix& x;
    std::span<const double> y;
    const Matrix& val_x;
    std::span<const double> val_y;
};

inline constexpr std::size_t kUncapped = std::numeric_limits<std::size_t>::max();

// Seed plus resource caps. Defaults are uncapped except where the learner
// itself fixes a bound (epochs, patience, GP iterations).
struct FitOptions {
    std::uint64_t seed = 0;
    std::size_t max_rounds = kUncapped;
    std::size_t max_trees = kUncapped;
    std::size_t gp_max_rows = kUncapped;
    std::size_t gp_hyper_rows = kUncapped;
    std::size_t gp_iterations = 200;
    std::size_t ffn_max_epochs = 500;
    std::size_t ffn_max_rows = kUncapped;
    std::size_t ffn_patience = 20;
    std::size_t ffn_batch = 64;
    std::size_t linear_max_cells = kUncapped;
    std::size_t early_stopping_rounds = 50;
    unsigned threads = 1;
};

TrainedModel fit_learner(LearnerKind kind, const FitData& data, const HyperParams& hp, const FitOptions& options,
                         std::vector<Diagnostic>* diagnostics = nullptr);

// Polynomial features -------------------------------------------------------

// All monomials of total degree 1..degree, grouped by degree, each degree in
// lexicographic order of non-decreasing index tuples.
Matrix expand_polynomial(const Matrix& rows, int degree);
std::size_t polynomial_width(std::size_t features, int degree);

// Elastic net ---------------------------------------------------------------

struct ElasticNetFit {
    std::vector<double> beta;
    double intercept = 0.0;
    std::size_t sweeps = 0;
    bool converged = true;
};

// Minimises (1/2n)|y - b0 - X b|^2 + lambda (rho |b|_1 + (1 - rho)/2 |b|^2).
ElasticNetFit elastic_net_solve(const Matrix& x, std::span<const double> y, double l1_ratio, double lambda,
                                const ElasticNetFit* warm_start = nullptr);

// Smallest lambda with all coefficients zero (rho floored at 1e-3).
double elastic_net_lambda_max(const Matrix& x, std::span<const double> y, double l1_ratio);

// 20 points, log-spaced, lambda_max down to 1e-5 * lambda_max.
std::vector<double> elastic_net_lambda_grid(double lambda_max);

LinearModel fit_elastic_net(const FitData& data, double l1_ratio, int degree, const FitOptions& options,
                            std::vector<Diagnostic>* diagnostics = nullptr);

// Trees -----------------------------------------------------------------------

struct TreeParams {
    int max_depth = 6;
    double alpha = 0.0;
    double lambda = 1.0;
    double colsample_bylevel = 1.0;
    double colsample_bynode = 1.0;
};

// Distinct sorted values per column and each cell's rank among them, so that
// split search over every distinct threshold runs on integer bins.
struct ColumnRanks {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::vector<double>> values;
    std::vector<std::uint32_t> rank;  // row-major rows x cols

    static ColumnRanks build(const Matrix& x);
};

// Exact greedy regression tree on gradients g (hessian 1 per row). `rows` may
// repeat indices (bootstrap). Leaf weight -T_alpha(G)/(H + lambda) plus
// `leaf_offset`.
RegressionTree build_tree(const ColumnRanks& ranks, std::span<const double> gradients,
                          std::span<const std::size_t> rows, std::span<const std::size_t> features,
                          const TreeParams& params, std::mt19937_64& rng, double leaf_offset = 0.0);

struct GbtParams {
    std::size_t rounds = 100;
    double learning_rate = 0.1;
    double subsample = 1.0;
    double colsample_bytree = 1.0;
    TreeParams tree;
};

GbtModel fit_gbt(const FitData& data, const GbtParams& params, const FitOptions& options,
                 std::vector<Diagnostic>* diagnostics = nullptr);

struct ForestParams {
    std::size_t trees = 100;
    double colsample_bytree = 1.0;
    TreeParams tree;
};

ForestModel fit_random_forest(const FitData& data, const ForestParams& params, const FitOptions& options,
                              std::vector<Diagnostic>* diagnostics = nullptr);

// Gaussian process (subset of regressors) -------------------------------------

struct GpParams {
    std::size_t inducing = 64;
    KernelKind kernel = KernelKind::Rbf;
    double learning_rate = 0.01;
    // Optional fixed starting point; non-positive values are initialised from data.
    double lengthscale = 0.0;
    double signal_variance = 0.0;
    double noise_variance = 0.0;
    bool optimise = true;
};

// Mean log marginal likelihood (per row) and its gradient with respect to
// (log lengthscale, log signal variance, log noise variance). y as given.
struct GpLikelihood {
    double value = 0.0;
    std::array<double, 3> gradient{};
};
GpLikelihood gp_log_likelihood(const Matrix& x, std::span<const double> y, const Matrix& inducing,
                               const KernelSpec& kernel);

// k-means++ seeding; fewer rows than m when the data has fewer distinct points.
Matrix kmeanspp_seed(const Matrix& x, std::size_t m, std::uint64_t seed);

GpModel fit_gp(const FitData& data, const GpParams& params, const FitOptions& options,
               std::vector<Diagnostic>* diagnostics = nullptr);

// Feedforward network -----------------------------------------------------------

struct FfnParams {
    std::size_t hidden_layers = 1;
    std::size_t hidden_nodes = 32;
    double dropout = 0.1;
    double learning_rate = 0.01;
};

inline double relu(double v) noexcept { return v > 0.0 ? v : 0.0; }

NetModel init_network(std::size_t input_dim, std::size_t hidden_layers, std::size_t hidden_nodes, std::uint64_t seed);

// Half mean squared error of the raw network output against y (no dropout, no
// target scaling) and its gradient with respect to every weight and bias.
struct NetGradient {
    double loss = 0.0;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};
NetGradient network_gradient(const NetModel& net, const Matrix& x, std::span<const double> y);

NetModel fit_ffn(const FitData& data, const FfnParams& params, const FitOptions& options,
                 std::vector<Diagnostic>* diagnostics = nullptr);

}  // namespace serverlens
