#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "serverlens/dataset.hpp"

namespace serverlens {

namespace {

std::string trim_copy(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Numeric cell: thousands separators and surrounding blanks tolerated.
std::optional<double> parse_number(std::string_view raw) {
    std::string s = trim_copy(raw);
    s.erase(std::remove(s.begin(), s.end(), ','), s.end());
    if (s.empty()) {
        return std::nullopt;
    }
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return v;
}

std::string format_number(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::string csv_escape(const std::string& cell, char delimiter = ',') {
    if (cell.find(delimiter) == std::string::npos && cell.find('"') == std::string::npos) {
        return cell;
    }
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i > 0) out << ',';
        out << csv_escape(cells[i]);
    }
    out << '\n';
}

std::string_view drive_name(DriveType t) { return t == DriveType::Ssd ? "SSD" : "HDD"; }

}  // namespace

// ---------------------------------------------------------------------------

void validate_record(const ServerRecord& record, std::vector<Diagnostic>* diagnostics) {
    for (std::size_t i = 0; i < kLevelCount; ++i) {
        const auto& lv = record.levels[i];
        if (lv.load != level_fraction(i)) {
            throw SchemaError(record.server_id + ": level " + std::to_string(i) + " has load " +
                              format_number(lv.load));
        }
        if (!(lv.power_w > 0.0) || !std::isfinite(lv.power_w)) {
            throw SchemaError(record.server_id + ": non-positive power at load " + format_number(lv.load));
        }
        if (!std::isfinite(lv.throughput) || lv.throughput < 0.0) {
            throw SchemaError(record.server_id + ": invalid throughput at load " + format_number(lv.load));
        }
    }
    if (record.levels[0].throughput != 0.0) {
        throw SchemaError(record.server_id + ": throughput at active idle must be 0");
    }
    if (diagnostics != nullptr) {
        for (std::size_t i = 1; i < kLevelCount; ++i) {
            if (record.levels[i].throughput < record.levels[i - 1].throughput) {
                diagnostics->push_back({0, "throughput",
                                        record.server_id + ": throughput decreases between load " +
                                            format_number(record.levels[i - 1].load) + " and " +
                                            format_number(record.levels[i].load)});
            }
        }
    }
}

IngestResult records_from_table(const ParsedTable& table, const ColumnMapping& mapping) {
    IngestResult result;
    auto col = [&](std::string_view key) { return table.column(mapping, key); };
    const auto id_col = col("server_id");
    const auto nodes_col = col("nodes");
    if (!nodes_col) {
        result.diagnostics.push_back({0, "nodes", "no node-count column; all records treated as single-node"});
    }

    for (const auto& raw : table.rows) {
        std::vector<Diagnostic> diags;
        auto cell = [&](std::string_view key) -> std::string {
            const auto c = col(key);
            return c ? raw.cells[*c] : std::string();
        };
        auto number = [&](std::string_view key) -> std::optional<double> {
            const std::string text = cell(key);
            auto v = parse_number(text);
            if (!v && !trim_copy(text).empty()) {
                diags.push_back({raw.line, std::string(key), "not a number: '" + text + "'"});
            }
            return v;
        };

        ServerRecord rec;
        rec.server_id = trim_copy(raw.cells[*id_col]);
        if (rec.server_id.empty()) {
            rec.server_id = "line-" + std::to_string(raw.line);
        }
        auto& cfg = rec.config;
        cfg.cc = number("chips");
        cfg.cpc = number("cores_per_chip");
        cfg.tpc = number("threads_per_core");
        cfg.cf = number("cpu_mhz");

        std::vector<Diagnostic> field_diags;
        const auto caches = parse_cache_fields(cell("l1_cache"), cell("l2_cache"), cell("l3_cache"),
                                               cfg.cc.value_or(kMissing), cfg.cpc.value_or(kMissing), &field_diags);
        cfg.cs_l1d = caches.l1d_kb_per_core;
        cfg.cs_l1i = caches.l1i_kb_per_core;
        cfg.cs_l2 = caches.l2_mb_per_core;
        cfg.cs_l3 = caches.l3_mb_per_chip;

        if (!trim_copy(cell("memory")).empty()) {
            const auto mem = parse_memory_field(cell("memory"), &field_diags);
            cfg.mmc = mem.modules;
            cfg.mms = mem.gb_per_module;
        }
        if (!trim_copy(cell("storage")).empty()) {
            const auto st = parse_storage_field(cell("storage"), &field_diags);
            cfg.ddc = st.drives;
            cfg.dds = st.gb_per_drive;
            cfg.ddt = st.type;
        }
        const std::string date_text = cell("hw_avail");
        if (!trim_copy(date_text).empty()) {
            try {
                cfg.had = date_to_ordinal(parse_date(date_text));
            } catch (const ParseError& e) {
                diags.push_back({raw.line, "hw_avail", e.what()});
            }
        }
        for (auto& d : field_diags) {
            d.line = raw.line;
            diags.push_back(std::move(d));
        }

        if (nodes_col) {
            const auto n = parse_number(raw.cells[*nodes_col]);
            if (n) {
                rec.nodes = static_cast<int>(*n);
            } else {
                diags.push_back({raw.line, "nodes", "node count absent; treated as single-node"});
            }
        }

        bool levels_ok = true;
        for (std::size_t i = 0; i < kLevelCount; ++i) {
            const std::string pct = std::to_string(i * 10);
            const auto p = parse_number(cell("power_" + pct));
            const auto t = parse_number(cell("ssj_ops_" + pct));
            if (!p || !t) {
                diags.push_back({raw.line, "level_" + pct, "unparseable power or throughput at " + pct + "%"});
                levels_ok = false;
                break;
            }
            rec.levels[i] = {level_fraction(i), *p, *t};
        }
        if (levels_ok) {
            try {
                std::vector<Diagnostic> vdiags;
                validate_record(rec, &vdiags);
                for (auto& d : vdiags) {
                    d.line = raw.line;
                    diags.push_back(std::move(d));
                }
                result.records.push_back(std::move(rec));
            } catch (const SchemaError& e) {
                diags.push_back({raw.line, "levels", std::string(e.what()) + "; record dropped"});
            }
        } else {
            diags.push_back({raw.line, "levels", "record dropped"});
        }
        for (auto& d : diags) {
            result.diagnostics.push_back(std::move(d));
        }
    }
    return result;
}

void write_results_csv(std::ostream& out, const std::vector<ServerRecord>& records, const ColumnMapping& mapping) {
    std::vector<std::string> keys = ColumnMapping::mandatory_keys();
    keys.push_back("nodes");
    std::vector<std::string> header;
    for (const auto& k : keys) {
        header.push_back(mapping.source(k));
    }
    write_row(out, header);
    for (const auto& r : records) {
        const auto& c = r.config;
        std::vector<std::string> cells;
        cells.push_back(r.server_id);
        cells.push_back(opt_number(c.cc));
        cells.push_back(opt_number(c.cpc));
        cells.push_back(opt_number(c.tpc));
        cells.push_back(opt_number(c.cf));
        if (c.cs_l1i && c.cs_l1d) {
            cells.push_back(format_number(*c.cs_l1i) + " KB I + " + format_number(*c.cs_l1d) +
                            " KB D on chip per core");
        } else {
            cells.emplace_back();
        }
        cells.push_back(c.cs_l2 ? format_number(*c.cs_l2 * 1024.0) + " KB I+D on chip per core" : std::string());
        cells.push_back(c.cs_l3 ? format_number(*c.cs_l3) + " MB I+D on chip per chip" : std::string());
        cells.push_back(c.mmc && c.mms ? format_number(*c.mmc) + " x " + format_number(*c.mms) + " GB" : std::string());
        if (c.ddc && c.dds && c.ddt) {
            cells.push_back(format_number(*c.ddc) + " x " + format_number(*c.dds) + " GB " +
                            (*c.ddt == DriveType::Ssd ? "SATA SSD" : "7.2K RPM SATA HDD"));
        } else {
            cells.emplace_back();
        }
        cells.push_back(c.had ? format_date(ordinal_to_date(*c.had)) : std::string());
        for (std::size_t i = 0; i < kLevelCount; ++i) cells.push_back(format_number(r.levels[i].power_w));
        for (std::size_t i = 0; i < kLevelCount; ++i) cells.push_back(format_number(r.levels[i].throughput));
        cells.push_back(r.nodes ? std::to_string(*r.nodes) : std::string());
        write_row(out, cells);
    }
}

// ---------------------------------------------------------------------------
// Canonical audit CSV

namespace {

const std::vector<std::string> kCanonicalHeader{
    "server_id", "nodes", "cc",  "cpc", "tpc", "cf",       "cs_l1d", "cs_l1i",  "cs_l2",  "cs_l3",
    "mmc",       "mms",   "ddc", "dds", "ddt", "had_date", "load",   "power_w", "ssj_ops"};

}  // namespace

void write_canonical_csv(std::ostream& out, const std::vector<ServerRecord>& records) {
    write_row(out, kCanonicalHeader);
    for (const auto& r : records) {
        const auto& c = r.config;
        for (const auto& lv : r.levels) {
            write_row(out, {r.server_id, r.nodes ? std::to_string(*r.nodes) : std::string(), opt_number(c.cc),
                            opt_number(c.cpc), opt_number(c.tpc), opt_number(c.cf), opt_number(c.cs_l1d),
                            opt_number(c.cs_l1i), opt_number(c.cs_l2), opt_number(c.cs_l3), opt_number(c.mmc),
                            opt_number(c.mms), opt_number(c.ddc), opt_number(c.dds),
                            c.ddt ? std::string(drive_name(*c.ddt)) : std::string(),
                            c.had ? format_date(ordinal_to_date(*c.had)) : std::string(), format_number(lv.load),
                            format_number(lv.power_w), format_number(lv.throughput)});
        }
    }
}

IngestResult read_canonical_csv(std::istream& in) {
    IngestResult result;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) {
        throw ParseError("canonical file is empty");
    }
    ++line_no;
    auto header = split_csv_line(line);
    if (header != kCanonicalHeader) {
        throw SchemaError("not a canonical record file (unexpected header)");
    }
    ServerRecord current;
    std::size_t level = 0;
    auto opt = [&](const std::string& s) { return parse_number(s); };
    while (std::getline(in, line)) {
        ++line_no;
        if (trim_copy(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != kCanonicalHeader.size()) {
            result.diagnostics.push_back({line_no, "", "wrong column count"});
            continue;
        }
        if (level == 0) {
            current = ServerRecord{};
            current.server_id = cells[0];
            if (auto n = opt(cells[1])) current.nodes = static_cast<int>(*n);
            auto& c = current.config;
            c.cc = opt(cells[2]);
            c.cpc = opt(cells[3]);
            c.tpc = opt(cells[4]);
            c.cf = opt(cells[5]);
            c.cs_l1d = opt(cells[6]);
            c.cs_l1i = opt(cells[7]);
            c.cs_l2 = opt(cells[8]);
            c.cs_l3 = opt(cells[9]);
            c.mmc = opt(cells[10]);
            c.mms = opt(cells[11]);
            c.ddc = opt(cells[12]);
            c.dds = opt(cells[13]);
            if (cells[14] == "SSD") c.ddt = DriveType::Ssd;
            else if (cells[14] == "HDD") c.ddt = DriveType::Hdd;
            if (!cells[15].empty()) c.had = date_to_ordinal(parse_date(cells[15]));
        } else if (cells[0] != current.server_id) {
            throw SchemaError("line " + std::to_string(line_no) + ": server '" + current.server_id +
                              "' has fewer than 11 levels");
        }
        const auto load = opt(cells[16]);
        const auto power = opt(cells[17]);
        const auto ops = opt(cells[18]);
        if (!load || !power || !ops) {
            throw ParseError("line " + std::to_string(line_no) + ": unparseable level measurement");
        }
        current.levels[level] = {*load, *power, *ops};
        if (++level == kLevelCount) {
            validate_record(current, &result.diagnostics);
            result.records.push_back(std::move(current));
            level = 0;
        }
    }
    if (level != 0) {
        throw SchemaError("truncated canonical file: last server has " + std::to_string(level) + " levels");
    }
    return result;
}

IngestResult load_records(const std::string& path, const ColumnMapping& mapping) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open data file: " + path);
    }
    std::string first;
    std::getline(in, first);
    in.clear();
    in.seekg(0);
    if (split_csv_line(first) == kCanonicalHeader) {
        return read_canonical_csv(in);
    }
    const auto table = parse_results_csv(in, mapping);
    auto result = records_from_table(table, mapping);
    result.diagnostics.insert(result.diagnostics.begin(), table.diagnostics.begin(), table.diagnostics.end());
    return result;
}

// ---------------------------------------------------------------------------
// Design matrices

std::string_view to_string(TargetKind kind) noexcept {
    switch (kind) {
        case TargetKind::Power: return "power";
        case TargetKind::PerfToPower: return "perf";
        case TargetKind::MaxThroughput: return "throughput";
    }
    return "unknown";
}

TargetKind parse_target(std::string_view text) {
    if (text == "power") return TargetKind::Power;
    if (text == "perf" || text == "perf_to_power") return TargetKind::PerfToPower;
    if (text == "throughput" || text == "max_throughput") return TargetKind::MaxThroughput;
    throw ConfigError("unknown target '" + std::string(text) + "' (expected power, perf or throughput)");
}

const std::vector<std::string>& FeatureSchema::config_features() {
    static const std::vector<std::string> names{"CC",  "CPC", "TPC", "CF",  "CS_L1D",  "CS_L1I",  "CS_L2", "CS_L3",
                                                "MMC", "MMS", "DDC", "DDS", "DDT_HDD", "DDT_SSD", "HAD"};
    return names;
}

FeatureSchema FeatureSchema::for_target(TargetKind kind) {
    FeatureSchema s{config_features()};
    if (kind != TargetKind::MaxThroughput) {
        s.names.emplace_back("L");
    }
    return s;
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
}

std::vector<double> config_feature_row(const ServerConfig& c) {
    auto v = [](const std::optional<double>& x) { return x ? *x : kMissing; };
    double hdd = kMissing;
    double ssd = kMissing;
    if (c.ddt) {
        hdd = *c.ddt == DriveType::Hdd ? 1.0 : 0.0;
        ssd = 1.0 - hdd;
    }
    return {v(c.cc),  v(c.cpc), v(c.tpc), v(c.cf),  v(c.cs_l1d), v(c.cs_l1i),
            v(c.cs_l2), v(c.cs_l3), v(c.mmc), v(c.mms), v(c.ddc), v(c.dds),
            hdd,      ssd,      c.had ? static_cast<double>(*c.had) : kMissing};
}

std::vector<ServerGroup> DesignMatrix::groups() const {
    std::vector<ServerGroup> out;
    for (std::size_t i = 0; i < group_ids.size(); ++i) {
        if (out.empty() || out.back().server_id != group_ids[i]) {
            out.push_back({group_ids[i], i, i + 1});
        } else {
            out.back().end = i + 1;
        }
    }
    return out;
}

DesignMatrix DesignMatrix::subset(std::span<const std::size_t> row_indices) const {
    DesignMatrix out;
    out.target = target;
    out.schema = schema;
    out.rows = rows.select_rows(row_indices);
    out.y.reserve(row_indices.size());
    for (auto i : row_indices) {
        out.y.push_back(y[i]);
        out.group_ids.push_back(group_ids[i]);
        out.availability.push_back(availability[i]);
    }
    return out;
}

DesignMatrix build_design_matrix(const std::vector<ServerRecord>& records, TargetKind target) {
    DesignMatrix dm;
    dm.target = target;
    dm.schema = FeatureSchema::for_target(target);
    dm.rows = Matrix(0, dm.schema.size());
    for (const auto& r : records) {
        if (r.nodes && *r.nodes > 1) {
            ++dm.multi_node_excluded;
            continue;
        }
        if (!r.nodes) {
            dm.diagnostics.push_back({0, "nodes", r.server_id + ": node count absent, treated as single-node"});
        }
        const auto& full = r.levels[kLevelCount - 1];
        if (full.load != 1.0 || !std::isfinite(full.throughput) || !std::isfinite(full.power_w)) {
            dm.diagnostics.push_back({0, "levels", r.server_id + ": no usable 100% load level; excluded"});
            continue;
        }
        const auto features = config_feature_row(r.config);
        const std::int64_t avail = r.config.had ? *r.config.had : std::numeric_limits<std::int64_t>::min();
        if (target == TargetKind::MaxThroughput) {
            dm.rows.append_row(features);
            dm.y.push_back(full.throughput);
            dm.group_ids.push_back(r.server_id);
            dm.availability.push_back(avail);
            continue;
        }
        std::vector<double> row = features;
        row.push_back(0.0);
        for (const auto& lv : r.levels) {
            row.back() = lv.load;
            dm.rows.append_row(row);
            dm.y.push_back(target == TargetKind::Power ? lv.power_w : lv.throughput / lv.power_w);
            dm.group_ids.push_back(r.server_id);
            dm.availability.push_back(avail);
        }
    }
    return dm;
}

}  // namespace serverlens
