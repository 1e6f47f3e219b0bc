#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "serverlens/common.hpp"

namespace serverlens {

inline constexpr std::size_t kLevelCount = 11;

// Workload level i in [0, 10] as a load fraction.
inline double level_fraction(std::size_t i) noexcept { return static_cast<double>(i) / 10.0; }

struct Diagnostic {
    std::size_t line = 0;  // 1-based source line, 0 when not line-specific
    std::string field;
    std::string message;
};

std::ostream& operator<<(std::ostream& os, const Diagnostic& d);

// ---------------------------------------------------------------------------
// Raw ingestion

// One source line split into cells. Cells keep their verbatim text.
struct RawRecordRow {
    std::size_t line = 0;
    std::vector<std::string> cells;
};

// canonical field -> source column name. Keys:
//   server_id vendor form_factor cpu_description chips cores_per_chip
//   threads_per_core cpu_mhz l1_cache l2_cache l3_cache memory storage
//   hw_avail nodes power_0..power_100 ssj_ops_0..ssj_ops_100 (step 10)
// vendor, form_factor, cpu_description and nodes are optional.
class ColumnMapping {
public:
    static ColumnMapping defaults();
    // "key = value" lines; blank lines and lines starting with '#' ignored.
    // Keys given override the defaults.
    static ColumnMapping parse(std::istream& in);
    static ColumnMapping load(const std::string& path);

    const std::string& source(std::string_view key) const;
    bool has(std::string_view key) const;
    void set(std::string key, std::string column);
    const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return map_; }

    static const std::vector<std::string>& mandatory_keys();
    static const std::vector<std::string>& optional_keys();

private:
    std::map<std::string, std::string, std::less<>> map_;
};

struct ParsedTable {
    std::vector<std::string> header;
    std::vector<RawRecordRow> rows;
    std::vector<Diagnostic> diagnostics;

    // Column index for a canonical key, or nullopt when the mapped column is absent.
    std::optional<std::size_t> column(const ColumnMapping& mapping, std::string_view key) const;
};

// RFC-4180 style: quoted cells may contain the delimiter, doubled quotes
// escape a quote. Throws ParseError on an empty stream and SchemaError when a
// mandatory mapped column is missing from the header.
ParsedTable parse_results_csv(std::istream& in, const ColumnMapping& mapping, char delimiter = ',');

// Split a single delimited line (no embedded newlines).
std::vector<std::string> split_csv_line(std::string_view line, char delimiter = ',');

// ---------------------------------------------------------------------------
// Field grammars

struct CacheSizes {
    std::optional<double> l1d_kb_per_core;
    std::optional<double> l1i_kb_per_core;
    std::optional<double> l2_mb_per_core;
    std::optional<double> l3_mb_per_chip;
};

CacheSizes parse_cache_fields(std::string_view l1_text, std::string_view l2_text, std::string_view l3_text,
                              double chips, double cores_per_chip, std::vector<Diagnostic>* diagnostics = nullptr);

struct MemoryConfig {
    std::optional<double> modules;
    std::optional<double> gb_per_module;
};

MemoryConfig parse_memory_field(std::string_view text, std::vector<Diagnostic>* diagnostics = nullptr);

enum class DriveType { Hdd, Ssd };

struct StorageConfig {
    std::optional<double> drives;
    std::optional<double> gb_per_drive;
    std::optional<DriveType> type;
};

StorageConfig parse_storage_field(std::string_view text, std::vector<Diagnostic>* diagnostics = nullptr);

struct CalendarDate {
    int year = 1;
    unsigned month = 1;
    unsigned day = 1;
    auto operator<=>(const CalendarDate&) const = default;
};

// Proleptic Gregorian ordinal, 0001-01-01 -> 1. Throws ParseError on an
// invalid date.
std::int64_t date_to_ordinal(CalendarDate date);
CalendarDate ordinal_to_date(std::int64_t ordinal);
// Accepts YYYY-MM-DD, YYYY-MM and Mon-YYYY (day 1 for the month forms).
CalendarDate parse_date(std::string_view text);
std::string format_date(CalendarDate date);

// ---------------------------------------------------------------------------
// Server records

// Configuration features of one server; every field may be missing.
struct ServerConfig {
    std::optional<double> cc, cpc, tpc, cf;
    std::optional<double> cs_l1d, cs_l1i, cs_l2, cs_l3;
    std::optional<double> mmc, mms;
    std::optional<double> ddc, dds;
    std::optional<DriveType> ddt;
    std::optional<std::int64_t> had;

    bool operator==(const ServerConfig&) const = default;
};

struct LevelMeasurement {
    double load = 0.0;  // fraction in [0, 1]
    double power_w = 0.0;
    double throughput = 0.0;  // ssj_ops
    bool operator==(const LevelMeasurement&) const = default;
};

struct ServerRecord {
    std::string server_id;
    ServerConfig config;
    std::optional<int> nodes;
    std::array<LevelMeasurement, kLevelCount> levels{};

    bool operator==(const ServerRecord&) const = default;
};

// Checks the level invariants. Hard violations (wrong loads, non-positive
// power, idle throughput != 0) throw SchemaError; throughput decreasing
// in load is appended to `diagnostics` only.
void validate_record(const ServerRecord& record, std::vector<Diagnostic>* diagnostics = nullptr);

struct IngestResult {
    std::vector<ServerRecord> records;
    std::vector<Diagnostic> diagnostics;
};

// Turn raw rows into typed records. Unparseable configuration cells become
// missing values with a diagnostic; rows with unusable level measurements are
// dropped with a diagnostic.
IngestResult records_from_table(const ParsedTable& table, const ColumnMapping& mapping);

// Write records in the mapped export layout (one line per server).
void write_results_csv(std::ostream& out, const std::vector<ServerRecord>& records, const ColumnMapping& mapping);

// Canonical long-format audit CSV: one line per (server, level).
void write_canonical_csv(std::ostream& out, const std::vector<ServerRecord>& records);
IngestResult read_canonical_csv(std::istream& in);

// Reads either the canonical layout or a mapped export, picked by header.
IngestResult load_records(const std::string& path, const ColumnMapping& mapping);

// ---------------------------------------------------------------------------
// Design matrices

enum class TargetKind { Power, PerfToPower, MaxThroughput };

std::string_view to_string(TargetKind kind) noexcept;
TargetKind parse_target(std::string_view text);

struct FeatureSchema {
    std::vector<std::string> names;

    static FeatureSchema for_target(TargetKind kind);
    static const std::vector<std::string>& config_features();

    std::size_t size() const noexcept { return names.size(); }
    bool has_load() const noexcept { return !names.empty() && names.back() == "L"; }
    std::size_t load_index() const noexcept { return names.size() - 1; }
    std::optional<std::size_t> index_of(std::string_view name) const;
    bool operator==(const FeatureSchema&) const = default;
};

// 15 configuration feature values in schema order (DDT one-hot), NaN for missing.
std::vector<double> config_feature_row(const ServerConfig& config);

struct ServerGroup {
    std::string server_id;
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct DesignMatrix {
    TargetKind target = TargetKind::Power;
    FeatureSchema schema;
    Matrix rows;
    std::vector<double> y;
    std::vector<std::string> group_ids;
    // Availability ordinal per row (copied from the record, independent of
    // the HAD feature cell so the time split works with missing features).
    std::vector<std::int64_t> availability;
    std::size_t multi_node_excluded = 0;
    std::vector<Diagnostic> diagnostics;

    std::size_t size() const noexcept { return y.size(); }
    std::vector<ServerGroup> groups() const;
    DesignMatrix subset(std::span<const std::size_t> row_indices) const;
};

DesignMatrix build_design_matrix(const std::vector<ServerRecord>& records, TargetKind target);

// ---------------------------------------------------------------------------
// Synthetic corpora with known ground truth
//
//   Th_max = a * CC * CPC * CF * (1 + b * ln(1 + CS_L3)) * shift
//   P_L    = p_idle + (p_max - p_idle) * L^gamma
//   p_max  = p_base + p_chip * CC + p_dimm * MMC
//   p_idle = p_max * (idle_start - idle_drop * t),  t = (year - first_year) / span
//   Perf_L = L * Th_max / P_L
// Measurements carry independent multiplicative N(0, noise_sd) noise.

struct SyntheticCoefficients {
    double a = 10.0;
    double b = 0.25;
    double p_base = 60.0;
    double p_chip = 85.0;
    double p_dimm = 4.0;
    double idle_start = 0.65;
    double idle_drop = 0.45;
    double gamma = 0.85;
};

struct SyntheticSpec {
    std::size_t n_servers = 1000;
    double noise_sd = 0.03;
    std::uint64_t seed = 0;
    int first_year = 2007;
    int last_year = 2023;
    double missing_rate = 0.0;     // per configuration cell
    double multi_node_rate = 0.0;  // fraction of records declared multi-node
    std::optional<int> shift_year;  // servers available on/after this year get shift_factor on Th_max
    double shift_factor = 1.0;
    SyntheticCoefficients coefficients;
};

struct SyntheticTruth {
    double th_max = 0.0;
    double p_idle = 0.0;
    double p_max = 0.0;
    double gamma = 1.0;

    double power(double load) const;
    double perf(double load) const;
};

struct SyntheticCorpus {
    std::vector<ServerRecord> records;
    std::vector<SyntheticTruth> truth;  // noiseless values, parallel to records
};

// Noiseless ground truth for a complete configuration.
SyntheticTruth synthetic_truth(const ServerConfig& config, const SyntheticSpec& spec);
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

}  // namespace serverlens
