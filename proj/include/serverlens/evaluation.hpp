#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "serverlens/common.hpp"
#include "serverlens/learners.hpp"

namespace serverlens {

// Observations with |y| at or below this are left out of MAPE.
inline constexpr double kZeroObservation = 1e-12;

// All metric functions require equal, non-zero lengths and finite values
// (ArgumentError otherwise).
double rmse(std::span<const double> y, std::span<const double> yhat);
// ArgumentError when y is constant.
double r_squared(std::span<const double> y, std::span<const double> yhat);

struct MapeResult {
    double value = 0.0;  // NaN when every observation was excluded
    std::size_t excluded = 0;
    bool defined() const noexcept { return value == value; }
};
MapeResult mape(std::span<const double> y, std::span<const double> yhat);
double maape(std::span<const double> y, std::span<const double> yhat);

struct MetricsReport {
    std::size_t n = 0;
    double rmse = 0.0;
    double r2 = 0.0;  // NaN for constant y
    double mape = 0.0;  // NaN when undefined
    std::size_t mape_excluded = 0;
    double maape = 0.0;
};

MetricsReport evaluate_metrics(std::span<const double> y, std::span<const double> yhat);

struct FeatureImportance {
    std::string feature;
    std::size_t column = 0;
    double mean = 0.0;  // mean R^2 decrease
    double sd = 0.0;    // sample sd over repeats, 0 for one repeat
    std::vector<double> samples;
};

struct ImportanceReport {
    double baseline_r2 = 0.0;
    std::size_t repeats = 0;
    std::string partition;
    std::vector<FeatureImportance> features;  // descending by mean, ties by column
};

using Predictor = std::function<std::vector<double>(const Matrix&)>;

struct ImportanceOptions {
    std::size_t repeats = 10;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string partition = "test";
};

// names.size() must equal rows.cols(). rows is never modified.
ImportanceReport permutation_importance(const Predictor& predictor, const Matrix& rows, std::span<const double> y,
                                        const std::vector<std::string>& names, const ImportanceOptions& options);
ImportanceReport permutation_importance(const TrainedModel& model, const Matrix& rows, std::span<const double> y,
                                        const std::vector<std::string>& names, const ImportanceOptions& options);

struct MetricsRow {
    std::string target;
    std::string learner;
    std::string partition;
    MetricsReport metrics;
};

// target,learner,partition,n,rmse,r2,mape,mape_excluded,maape
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
// target,partition,rank,feature,mean_decrease,sd_decrease,repeats,baseline_r2
void write_importance_csv(std::ostream& out, const std::string& target, const ImportanceReport& report);

// Shortest round-trip text for a double; "nan" and "inf" spelled out.
std::string format_number(double v);

}  // namespace serverlens
