#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "serverlens/dataset.hpp"
#include "serverlens/evaluation.hpp"
#include "serverlens/hpo.hpp"
#include "serverlens/learners.hpp"
#include "serverlens/preprocess.hpp"
#include "serverlens/split.hpp"

namespace serverlens {

enum class Profile { Desk, Full };

std::string_view to_string(Profile p) noexcept;
Profile parse_profile(std::string_view text);
std::string_view to_string(SplitScheme s) noexcept;
SplitScheme parse_scheme(std::string_view text);

struct PipelineConfig {
    TargetKind target = TargetKind::Power;
    Profile profile = Profile::Desk;
    SplitScheme scheme = SplitScheme::RandomByServer;
    int baseline_year = 2015;
    int horizon = 1;
    std::size_t imputer_k = 5;
    std::size_t budget = 25;
    std::size_t n_init = 10;
    std::size_t candidates = 1024;
    std::vector<LearnerKind> learners{kAllLearners.begin(), kAllLearners.end()};

    std::size_t max_rounds = 2000;
    std::size_t max_trees = 1000;
    std::size_t gp_max_rows = 4000;
    std::size_t gp_hyper_rows = 1000;
    std::size_t ffn_max_epochs = 100;
    std::size_t ffn_max_rows = 4000;
    std::size_t linear_max_cells = 4'000'000;

    std::size_t importance_repeats = 10;  // 0 skips importance
    bool select_on_validation = false;
    unsigned threads = 1;
    std::uint64_t seed = 0;

    static PipelineConfig desk();
    static PipelineConfig full();

    // ConfigError on an empty learner list, zero caps or bad BO settings.
    void validate() const;
    FitOptions fit_options(LearnerKind learner) const;
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

struct LeaderboardEntry {
    LearnerKind learner = LearnerKind::Gbt;
    bool failed = false;
    std::string error;
    HyperParams hyperparams;
    MetricsReport train;
    MetricsReport validation;
    std::optional<MetricsReport> test;  // absent when the test partition is empty
    std::size_t trials = 0;
    std::size_t failed_trials = 0;
    double seconds = 0.0;
};

struct Leaderboard {
    TargetKind target = TargetKind::Power;
    std::vector<LeaderboardEntry> entries;

    const LeaderboardEntry& entry(LearnerKind learner) const;
};

// argmin test MAAPE, then test RMSE, then learner order. With on_validation
// the validation metrics are used instead. Failed learners are skipped.
LearnerKind select_best(const Leaderboard& board, bool on_validation = false);

std::vector<MetricsRow> leaderboard_rows(const Leaderboard& board);

// NaN is written as null.
nlohmann::json metrics_to_json(const MetricsReport& m);
nlohmann::json importance_to_json(const ImportanceReport& r);

struct FeatureRange {
    std::string name;
    double min = 0.0;
    double max = 0.0;
    std::size_t observed = 0;
};

struct Provenance {
    std::string data_fingerprint;
    std::uint64_t seed = 0;
    std::string created;
    std::string profile;
    std::size_t train_servers = 0;
    nlohmann::json config;  // resolved PipelineConfig of the training run
};

inline constexpr int kBundleVersion = 1;

struct ModelBundle {
    int version = kBundleVersion;
    TargetKind target = TargetKind::Power;
    FeatureSchema schema;
    ImputerModel imputer;
    ScalerModel scaler;
    LearnerKind learner = LearnerKind::Gbt;
    HyperParams hyperparams;
    TrainedModel model;
    Leaderboard leaderboard;
    std::vector<FeatureRange> ranges;  // raw training rows
    std::optional<ImportanceReport> importance;
    Provenance provenance;
};

struct PredictionFlags {
    std::vector<std::size_t> imputed_rows;  // rows with at least one imputed cell
    std::size_t all_missing_rows = 0;
};

// Raw (unimputed, unscaled) rows in the bundle schema -> predictions. For the
// perf-to-power target rows at L = 0 are exactly 0.
std::vector<double> bundle_predict(const ModelBundle& bundle, const Matrix& raw_rows, PredictionFlags* flags = nullptr);

// Permutation importance of raw rows through the whole bundle.
ImportanceReport bundle_importance(const ModelBundle& bundle, const Matrix& raw_rows, std::span<const double> y,
                                   const ImportanceOptions& options);

nlohmann::json bundle_to_json(const ModelBundle& bundle);
ModelBundle bundle_from_json(const nlohmann::json& j);

// Header line "serverlens-bundle <version> <crc32 hex> <payload bytes>" then
// the JSON payload.
std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle deserialize_bundle(const std::string& text);
void save_bundle(const ModelBundle& bundle, const std::string& path);
// IntegrityError on checksum/length failure, VersionError on a newer format.
ModelBundle load_bundle(const std::string& path);

// crc32 of the bundle payload, as written in the header.
std::string bundle_checksum(const ModelBundle& bundle);

// Hex fingerprint of a design matrix (cells, targets and server ids).
std::string fingerprint(const DesignMatrix& matrix);

// ---------------------------------------------------------------------------

struct PreparedData {
    SplitIndices split;
    ImputerModel imputer;
    ScalerModel scaler;
    Matrix raw[3];  // train, validation, test: before imputation
    Matrix x[3];    // imputed and scaled
    std::vector<double> y[3];
    std::vector<Diagnostic> diagnostics;

    const Matrix& features(Partition p) const { return x[static_cast<int>(p)]; }
    const std::vector<double>& targets(Partition p) const { return y[static_cast<int>(p)]; }
};

// The split a training run with this configuration uses.
SplitIndices make_split(const DesignMatrix& matrix, const PipelineConfig& config);

// Fit the imputer and scaler on training rows only and apply them everywhere.
PreparedData prepare_data(const DesignMatrix& matrix, const SplitIndices& split, std::size_t imputer_k);

struct TunedLearner {
    LeaderboardEntry entry;
    std::optional<TrainedModel> model;
    TrialHistory history;
};

struct TrainingResult {
    Leaderboard leaderboard;
    ModelBundle bundle;
    SplitIndices split;
    std::vector<TrialHistory> histories;  // parallel to leaderboard.entries
    std::vector<Diagnostic> diagnostics;
};

// Zero predictions on L = 0 rows for the perf-to-power target.
void apply_structural_zero(TargetKind target, const Matrix& raw_rows, std::vector<double>& predictions);

TrainingResult run_training(const DesignMatrix& matrix, const PipelineConfig& config);
TrainingResult run_training(const std::vector<ServerRecord>& records, const PipelineConfig& config);

// ---------------------------------------------------------------------------

struct PredictionCurve {
    std::array<double, kLevelCount> load{};
    std::array<double, kLevelCount> power{};
    std::array<double, kLevelCount> perf{};
    std::array<double, kLevelCount> composed{};  // L * Th_max / P_L
    double max_throughput = 0.0;
    std::vector<std::string> imputed;  // configuration features that were missing
    std::vector<std::string> flags;
};

// config_row: the 15 configuration features (NaN for missing). Bundles must
// have the power, max-throughput and perf-to-power targets in that order.
PredictionCurve predict_targets(const ModelBundle& power, const ModelBundle& throughput, const ModelBundle& perf,
                                std::span<const double> config_row);

struct Eq1Cell {
    std::size_t config = 0;
    double load = 0.0;
    double direct = 0.0;
    double composed = 0.0;
    double residual = 0.0;
    double relative = 0.0;
    bool flagged = false;  // P_L prediction <= 0
};

struct Eq1Report {
    std::vector<Eq1Cell> cells;
    double median_relative = 0.0;
    double p95_relative = 0.0;
    std::size_t flagged = 0;
};

Eq1Report consistency_check_eq1(const ModelBundle& power, const ModelBundle& throughput, const ModelBundle& perf,
                                const Matrix& configs, std::span<const double> loads);

struct GridCell {
    int baseline_year = 0;
    int horizon = 0;
    bool empty = true;        // no test servers that year
    std::string skipped;      // reason when the baseline could not be trained
    std::size_t test_servers = 0;
    std::string winner;
    MetricsReport test;
};

struct ProspectiveGrid {
    std::vector<GridCell> cells;

    // Unweighted mean of test MAAPE over evaluated cells, per horizon.
    std::vector<std::pair<int, double>> horizon_means() const;
};

struct ProspectiveOptions {
    int first_baseline = 2010;
    int last_baseline = 2022;
    int max_horizon = 5;
};

ProspectiveGrid prospective_experiment(const DesignMatrix& matrix, const PipelineConfig& config,
                                       const ProspectiveOptions& options);

// baseline_year,horizon,status,test_servers,winner,rmse,r2,mape,mape_excluded,maape
void write_grid_csv(std::ostream& out, const ProspectiveGrid& grid);
// horizon,cells,mean_maape
void write_horizon_means_csv(std::ostream& out, const ProspectiveGrid& grid);

}  // namespace serverlens
