#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <fstream>
#include <regex>
#include <sstream>

#include "serverlens/dataset.hpp"

namespace serverlens {

std::ostream& operator<<(std::ostream& os, const Diagnostic& d) {
    os << "line " << d.line;
    if (!d.field.empty()) {
        os << " [" << d.field << "]";
    }
    return os << ": " << d.message;
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

void report(std::vector<Diagnostic>* diagnostics, std::string field, std::string message) {
    if (diagnostics != nullptr) {
        diagnostics->push_back({0, std::move(field), std::move(message)});
    }
}

const std::vector<std::string>& level_keys(std::string_view prefix) {
    static const auto build = [](std::string_view p) {
        std::vector<std::string> keys;
        for (int pct = 0; pct <= 100; pct += 10) {
            keys.push_back(std::string(p) + std::to_string(pct));
        }
        return keys;
    };
    static const std::vector<std::string> power = build("power_");
    static const std::vector<std::string> ops = build("ssj_ops_");
    return prefix == "power_" ? power : ops;
}

}  // namespace

// ---------------------------------------------------------------------------
// Column mapping

const std::vector<std::string>& ColumnMapping::mandatory_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k{"server_id", "chips",    "cores_per_chip", "threads_per_core", "cpu_mhz",
                                   "l1_cache",  "l2_cache", "l3_cache",       "memory",           "storage",
                                   "hw_avail"};
        for (const auto& p : level_keys("power_")) k.push_back(p);
        for (const auto& p : level_keys("ssj_ops_")) k.push_back(p);
        return k;
    }();
    return keys;
}

const std::vector<std::string>& ColumnMapping::optional_keys() {
    static const std::vector<std::string> keys{"vendor", "form_factor", "cpu_description", "nodes"};
    return keys;
}

ColumnMapping ColumnMapping::defaults() {
    ColumnMapping m;
    m.set("server_id", "Result ID");
    m.set("vendor", "Hardware Vendor");
    m.set("form_factor", "Form Factor");
    m.set("cpu_description", "CPU Description");
    m.set("chips", "Chips");
    m.set("cores_per_chip", "Cores Per Chip");
    m.set("threads_per_core", "Threads Per Core");
    m.set("cpu_mhz", "CPU MHz");
    m.set("l1_cache", "Primary Cache");
    m.set("l2_cache", "Secondary Cache");
    m.set("l3_cache", "Tertiary Cache");
    m.set("memory", "DIMMs");
    m.set("storage", "Disk Drive");
    m.set("hw_avail", "Hardware Availability");
    m.set("nodes", "Nodes");
    for (int pct = 0; pct <= 100; pct += 10) {
        const std::string level = pct == 0 ? "active idle" : std::to_string(pct) + "% of target load";
        m.set("power_" + std::to_string(pct), "Average watts @ " + level);
        m.set("ssj_ops_" + std::to_string(pct), "ssj_ops @ " + level);
    }
    return m;
}

ColumnMapping ColumnMapping::parse(std::istream& in) {
    ColumnMapping m = defaults();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("column mapping line " + std::to_string(line_no) + ": expected 'key = column'");
        }
        std::string key = trim(std::string_view(t).substr(0, eq));
        std::string value = trim(std::string_view(t).substr(eq + 1));
        const auto& mand = mandatory_keys();
        const auto& opt = optional_keys();
        if (std::find(mand.begin(), mand.end(), key) == mand.end() &&
            std::find(opt.begin(), opt.end(), key) == opt.end()) {
            throw ConfigError("column mapping line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
        m.set(std::move(key), std::move(value));
    }
    return m;
}

ColumnMapping ColumnMapping::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open column mapping: " + path);
    }
    return parse(in);
}

const std::string& ColumnMapping::source(std::string_view key) const {
    const auto it = map_.find(key);
    if (it == map_.end()) {
        throw ConfigError("column mapping has no entry for '" + std::string(key) + "'");
    }
    return it->second;
}

bool ColumnMapping::has(std::string_view key) const { return map_.find(key) != map_.end(); }

void ColumnMapping::set(std::string key, std::string column) { map_[std::move(key)] = std::move(column); }

// ---------------------------------------------------------------------------
// CSV

std::vector<std::string> split_csv_line(std::string_view line, char delimiter) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

std::optional<std::size_t> ParsedTable::column(const ColumnMapping& mapping, std::string_view key) const {
    if (!mapping.has(key)) {
        return std::nullopt;
    }
    const auto& name = mapping.source(key);
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - header.begin());
}

ParsedTable parse_results_csv(std::istream& in, const ColumnMapping& mapping, char delimiter) {
    ParsedTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!have_header) {
            if (trim(line).empty()) {
                continue;
            }
            table.header = split_csv_line(line, delimiter);
            for (auto& h : table.header) {
                h = trim(h);
            }
            have_header = true;
            continue;
        }
        if (trim(line).empty()) {
            continue;
        }
        auto cells = split_csv_line(line, delimiter);
        if (cells.size() != table.header.size()) {
            table.diagnostics.push_back({line_no, "",
                                         "expected " + std::to_string(table.header.size()) + " columns, found " +
                                             std::to_string(cells.size())});
            continue;
        }
        table.rows.push_back({line_no, std::move(cells)});
    }
    if (!have_header) {
        throw ParseError("results file is empty");
    }
    for (const auto& key : ColumnMapping::mandatory_keys()) {
        if (!table.column(mapping, key)) {
            throw SchemaError("missing mandatory column '" + mapping.source(key) + "' (" + key + ")");
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Cache descriptors

namespace {

enum class CacheScope { PerCore, PerChip, PerCores, PerSystem };

struct CacheDescriptor {
    double instruction_kb = 0.0;
    double data_kb = 0.0;
    double unified_kb = 0.0;
    CacheScope scope = CacheScope::PerChip;
    double scope_cores = 1.0;

    double total_kb() const { return instruction_kb + data_kb + unified_kb; }
};

double unit_to_kb(const std::string& unit) {
    if (unit == "kb") return 1.0;
    if (unit == "mb") return 1024.0;
    return 1024.0 * 1024.0;  // gb
}

std::optional<CacheDescriptor> parse_cache_descriptor(std::string_view raw) {
    const std::string text = lower(trim(raw));
    static const std::regex multiplier_re(R"(^(\d+)\s*x\s+)");
    static const std::regex term_re(R"((\d+(?:\.\d+)?)\s*(kb|mb|gb)\s*(i\s*\+\s*d|i|d)?\b)");
    static const std::regex per_cores_re(R"(per\s+(\d+)\s+cores?)");
    static const std::regex per_core_re(R"(per\s+core)");
    static const std::regex per_chip_re(R"(per\s+(chip|processor|socket|cpu))");
    static const std::regex per_system_re(R"(per\s+(system|server|node)|\btotal\b)");

    double multiplier = 1.0;
    std::smatch m;
    std::string rest = text;
    if (std::regex_search(text, m, multiplier_re)) {
        multiplier = std::stod(m[1].str());
        rest = m.suffix().str();
    }
    CacheDescriptor d;
    bool any = false;
    for (auto it = std::sregex_iterator(rest.begin(), rest.end(), term_re); it != std::sregex_iterator(); ++it) {
        const auto& tm = *it;
        const double kb = std::stod(tm[1].str()) * unit_to_kb(tm[2].str()) * multiplier;
        std::string kind = tm[3].str();
        kind.erase(std::remove_if(kind.begin(), kind.end(), [](unsigned char c) { return std::isspace(c); }),
                   kind.end());
        if (kind == "i") {
            d.instruction_kb += kb;
        } else if (kind == "d") {
            d.data_kb += kb;
        } else {
            d.unified_kb += kb;
        }
        any = true;
    }
    if (!any) {
        return std::nullopt;
    }
    if (std::regex_search(text, m, per_cores_re)) {
        d.scope = CacheScope::PerCores;
        d.scope_cores = std::stod(m[1].str());
        if (d.scope_cores <= 0.0) {
            return std::nullopt;
        }
    } else if (std::regex_search(text, per_core_re)) {
        d.scope = CacheScope::PerCore;
    } else if (std::regex_search(text, per_chip_re)) {
        d.scope = CacheScope::PerChip;
    } else if (std::regex_search(text, per_system_re)) {
        d.scope = CacheScope::PerSystem;
    } else {
        return std::nullopt;
    }
    return d;
}

// Per-core normalisation used by L1 and L2.
double per_core(double kb, const CacheDescriptor& d, double chips, double cores_per_chip) {
    switch (d.scope) {
        case CacheScope::PerCore: return kb;
        case CacheScope::PerChip: return kb / cores_per_chip;
        case CacheScope::PerCores: return kb / d.scope_cores;
        case CacheScope::PerSystem: return kb / (chips * cores_per_chip);
    }
    return kb;
}

double per_chip(double kb, const CacheDescriptor& d, double chips, double cores_per_chip) {
    switch (d.scope) {
        case CacheScope::PerCore: return kb * cores_per_chip;
        case CacheScope::PerChip: return kb;
        case CacheScope::PerCores: return kb * cores_per_chip / d.scope_cores;
        case CacheScope::PerSystem: return kb / chips;
    }
    return kb;
}

bool is_none(std::string_view text) {
    const std::string t = lower(trim(text));
    return t == "none" || t == "n/a" || t == "0";
}

}  // namespace

CacheSizes parse_cache_fields(std::string_view l1_text, std::string_view l2_text, std::string_view l3_text,
                              double chips, double cores_per_chip, std::vector<Diagnostic>* diagnostics) {
    CacheSizes out;
    const bool counts_ok = std::isfinite(chips) && std::isfinite(cores_per_chip) && chips >= 1.0 &&
                           cores_per_chip >= 1.0;

    auto parse_level = [&](std::string_view text, std::string_view field) -> std::optional<CacheDescriptor> {
        if (trim(text).empty()) {
            return std::nullopt;
        }
        auto d = parse_cache_descriptor(text);
        if (!d) {
            report(diagnostics, std::string(field), "unrecognized cache descriptor '" + std::string(text) + "'");
            return std::nullopt;
        }
        if (!counts_ok) {
            report(diagnostics, std::string(field), "cache normalisation needs chip and core counts");
            return std::nullopt;
        }
        return d;
    };

    if (is_none(l1_text)) {
        out.l1d_kb_per_core = 0.0;
        out.l1i_kb_per_core = 0.0;
    } else if (auto d = parse_level(l1_text, "l1_cache")) {
        // A unified L1 is split evenly between instruction and data.
        const double i_kb = d->instruction_kb + d->unified_kb / 2.0;
        const double d_kb = d->data_kb + d->unified_kb / 2.0;
        out.l1i_kb_per_core = per_core(i_kb, *d, chips, cores_per_chip);
        out.l1d_kb_per_core = per_core(d_kb, *d, chips, cores_per_chip);
    }
    if (is_none(l2_text)) {
        out.l2_mb_per_core = 0.0;
    } else if (auto d = parse_level(l2_text, "l2_cache")) {
        out.l2_mb_per_core = per_core(d->total_kb(), *d, chips, cores_per_chip) / 1024.0;
    }
    if (is_none(l3_text)) {
        out.l3_mb_per_chip = 0.0;
    } else if (auto d = parse_level(l3_text, "l3_cache")) {
        out.l3_mb_per_chip = per_chip(d->total_kb(), *d, chips, cores_per_chip) / 1024.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Memory and storage

MemoryConfig parse_memory_field(std::string_view text, std::vector<Diagnostic>* diagnostics) {
    static const std::regex re(R"(^\s*(\d+)\s*x\s*(\d+(?:\.\d+)?)\s*(gb|tb|mb)\b)", std::regex::icase);
    MemoryConfig out;
    const std::string t(text);
    std::smatch m;
    if (!std::regex_search(t, m, re)) {
        report(diagnostics, "memory", "unrecognized memory descriptor '" + t + "'");
        return out;
    }
    const std::string unit = lower(m[3].str());
    double size = std::stod(m[2].str());
    if (unit == "tb") {
        size *= 1000.0;
    } else if (unit == "mb") {
        size /= 1024.0;
    }
    out.modules = std::stod(m[1].str());
    out.gb_per_module = size;
    return out;
}

StorageConfig parse_storage_field(std::string_view text, std::vector<Diagnostic>* diagnostics) {
    static const std::regex counted_re(R"((\d+)\s*x\s*(\d+(?:\.\d+)?)\s*(gb|tb)\b)", std::regex::icase);
    static const std::regex bare_re(R"((\d+(?:\.\d+)?)\s*(gb|tb)\b)", std::regex::icase);
    StorageConfig out;
    const std::string t(text);
    std::smatch m;
    double size = 0.0;
    std::string unit;
    if (std::regex_search(t, m, counted_re)) {
        out.drives = std::stod(m[1].str());
        size = std::stod(m[2].str());
        unit = lower(m[3].str());
    } else if (std::regex_search(t, m, bare_re)) {
        out.drives = 1.0;
        size = std::stod(m[1].str());
        unit = lower(m[2].str());
    } else {
        report(diagnostics, "storage", "unrecognized storage descriptor '" + t + "'");
    }
    if (!unit.empty()) {
        out.gb_per_drive = unit == "tb" ? size * 1000.0 : size;
    }

    const std::string l = lower(t);
    static const std::regex ssd_re(R"(\b(ssd|flash|nvme)\b)");
    static const std::regex hdd_strong_re(R"(\bhdd\b|\brpm\b)");
    static const std::regex hdd_weak_re(R"(\bsas\b|\bsata\s+disk\b)");
    const bool ssd = std::regex_search(l, ssd_re);
    const bool hdd_strong = std::regex_search(l, hdd_strong_re);
    const bool hdd_weak = std::regex_search(l, hdd_weak_re);
    if (ssd && hdd_strong) {
        report(diagnostics, "storage", "ambiguous drive type in '" + t + "'");
    } else if (ssd) {
        out.type = DriveType::Ssd;
    } else if (hdd_strong || hdd_weak) {
        out.type = DriveType::Hdd;
    } else if (!t.empty()) {
        report(diagnostics, "storage", "no drive type token in '" + t + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dates

namespace {
// sys_days count of 0001-01-01 is -719162; ordinal 1 maps there.
constexpr std::int64_t kOrdinalOffset = 719163;
}  // namespace

std::int64_t date_to_ordinal(CalendarDate date) {
    using namespace std::chrono;
    const year_month_day ymd{year{date.year}, month{date.month}, day{date.day}};
    if (!ymd.ok() || date.year < 1) {
        throw ParseError("invalid calendar date " + format_date(date));
    }
    return sys_days(ymd).time_since_epoch().count() + kOrdinalOffset;
}

CalendarDate ordinal_to_date(std::int64_t ordinal) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{days{ordinal - kOrdinalOffset}}};
    return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day())};
}

CalendarDate parse_date(std::string_view raw) {
    const std::string text = trim(raw);
    static const std::regex iso_re(R"(^(\d{1,4})-(\d{1,2})(?:-(\d{1,2}))?$)");
    static const std::regex mon_re(R"(^([A-Za-z]{3})[a-z]*[- ](\d{4})$)");
    std::smatch m;
    CalendarDate d;
    if (std::regex_match(text, m, iso_re)) {
        d.year = std::stoi(m[1].str());
        d.month = static_cast<unsigned>(std::stoi(m[2].str()));
        d.day = m[3].matched ? static_cast<unsigned>(std::stoi(m[3].str())) : 1U;
    } else if (std::regex_match(text, m, mon_re)) {
        static const std::array<std::string_view, 12> names{"jan", "feb", "mar", "apr", "may", "jun",
                                                            "jul", "aug", "sep", "oct", "nov", "dec"};
        const std::string mon = lower(m[1].str());
        const auto it = std::find(names.begin(), names.end(), mon);
        if (it == names.end()) {
            throw ParseError("unrecognized month in date '" + text + "'");
        }
        d.month = static_cast<unsigned>(it - names.begin()) + 1U;
        d.year = std::stoi(m[2].str());
        d.day = 1;
    } else {
        throw ParseError("unrecognized date '" + text + "'");
    }
    date_to_ordinal(d);  // validates
    return d;
}

std::string format_date(CalendarDate date) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", date.year, date.month, date.day);
    return buf;
}

}  // namespace serverlens
