#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "serverlens/dataset.hpp"

using namespace serverlens;

namespace {

std::string header_line(const ColumnMapping& m) {
    std::ostringstream out;
    std::vector<std::string> keys = ColumnMapping::mandatory_keys();
    keys.push_back("nodes");
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (i) out << ',';
        out << '"' << m.source(keys[i]) << '"';
    }
    return out.str();
}

// One data line in default-mapping column order.
std::string data_line(const std::string& id, const std::string& memory, int nodes = 1) {
    std::ostringstream out;
    out << id << ",2,8,2,2600,32 KB I + 32 KB D on chip per core,256 KB I+D on chip per core,"
        << "20 MB I+D on chip per chip," << memory << ",1 x 146 GB 10K RPM SAS HDD,Mar-2012";
    for (int i = 0; i <= 10; ++i) out << ',' << 100 + 20 * i;
    for (int i = 0; i <= 10; ++i) out << ',' << 100000 * i;
    out << ',' << nodes;
    return out.str();
}

ServerRecord simple_record(const std::string& id, int nodes = 1) {
    ServerRecord r;
    r.server_id = id;
    r.nodes = nodes;
    r.config.cc = 2;
    r.config.cpc = 8;
    r.config.had = date_to_ordinal({2015, 6, 1});
    for (std::size_t i = 0; i < kLevelCount; ++i) {
        r.levels[i] = {level_fraction(i), 100.0 + 10.0 * static_cast<double>(i), 100000.0 * static_cast<double>(i)};
    }
    return r;
}

}  // namespace

TEST_CASE("parse_results_csv contract cases") {
    const auto mapping = ColumnMapping::defaults();

    SUBCASE("header only gives no rows and no diagnostics") {
        std::istringstream in(header_line(mapping) + "\n");
        const auto t = parse_results_csv(in, mapping);
        CHECK(t.rows.empty());
        CHECK(t.diagnostics.empty());
    }
    SUBCASE("quoted comma inside the memory cell stays intact") {
        std::istringstream in(header_line(mapping) + "\n" +
                              data_line("r1", "\"8 x 8 GB 2Rx4 PC3L-10600R, ECC\"") + "\n");
        const auto t = parse_results_csv(in, mapping);
        REQUIRE(t.rows.size() == 1);
        const auto col = t.column(mapping, "memory");
        REQUIRE(col);
        CHECK(t.rows[0].cells[*col] == "8 x 8 GB 2Rx4 PC3L-10600R, ECC");
        const auto records = records_from_table(t, mapping);
        REQUIRE(records.records.size() == 1);
        CHECK(records.records[0].config.mmc == 8.0);
        CHECK(records.records[0].config.mms == 8.0);
    }
    SUBCASE("short line is reported, not parsed") {
        std::string line = data_line("r1", "4 x 16 GB");
        for (int i = 0; i < 3; ++i) line = line.substr(0, line.rfind(','));
        std::istringstream in(header_line(mapping) + "\n" + line + "\n");
        const auto t = parse_results_csv(in, mapping);
        CHECK(t.rows.empty());
        REQUIRE(t.diagnostics.size() == 1);
        CHECK(t.diagnostics[0].line == 2);
    }
    SUBCASE("empty stream is its own error") {
        std::istringstream in("");
        CHECK_THROWS_AS(parse_results_csv(in, mapping), ParseError);
    }
    SUBCASE("missing mandatory column names the column") {
        std::istringstream in("Result ID,Chips\n1,2\n");
        try {
            parse_results_csv(in, mapping);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find("Cores Per Chip") != std::string::npos);
        }
    }
}

TEST_CASE("column mapping config overrides defaults and rejects unknown keys") {
    std::istringstream in("# comment\nmemory = Memory Config\n\n");
    const auto m = ColumnMapping::parse(in);
    CHECK(m.source("memory") == "Memory Config");
    CHECK(m.source("storage") == "Disk Drive");
    std::istringstream bad("gpu = GPUs\n");
    CHECK_THROWS_AS(ColumnMapping::parse(bad), ConfigError);
}

TEST_CASE("cache descriptors normalise to per-core and per-chip units") {
    const auto c = parse_cache_fields("32 KB I + 32 KB D on chip per core", "256 KB I+D on chip per core",
                                      "8 MB I+D on chip per chip", 2, 4);
    CHECK(c.l1i_kb_per_core == 32.0);
    CHECK(c.l1d_kb_per_core == 32.0);
    CHECK(c.l2_mb_per_core == 0.25);
    CHECK(c.l3_mb_per_chip == 8.0);

    SUBCASE("per-chip L1/L2 divides by cores per chip") {
        const auto p = parse_cache_fields("64 KB I + 64 KB D on chip per chip", "2 MB I+D on chip per chip", "", 2,
                                          4);
        CHECK(p.l1i_kb_per_core == 16.0);
        CHECK(p.l2_mb_per_core == 0.5);
        CHECK_FALSE(p.l3_mb_per_chip.has_value());
    }
    SUBCASE("system totals divide by all cores or all chips") {
        const auto p = parse_cache_fields("", "8 MB I+D total", "32 MB I+D per system", 2, 4);
        CHECK(p.l2_mb_per_core == 1.0);
        CHECK(p.l3_mb_per_chip == 16.0);
    }
    SUBCASE("shared by N cores") {
        const auto p = parse_cache_fields("", "2 x 4 MB I+D on chip per 2 cores", "", 1, 4);
        CHECK(p.l2_mb_per_core == 4.0);
    }
    SUBCASE("unrecognised grammar is a missing value plus diagnostic") {
        std::vector<Diagnostic> diags;
        const auto p = parse_cache_fields("lots", "", "8 MB somewhere", 2, 4, &diags);
        CHECK_FALSE(p.l1d_kb_per_core.has_value());
        CHECK_FALSE(p.l3_mb_per_chip.has_value());
        CHECK(diags.size() == 2);
    }
}

TEST_CASE("memory descriptors") {
    auto m = parse_memory_field("8 x 8 GB 2Rx4 PC3L-10600R");
    CHECK(m.modules == 8.0);
    CHECK(m.gb_per_module == 8.0);
    m = parse_memory_field("4 x 16 GB");
    CHECK(m.modules == 4.0);
    CHECK(m.gb_per_module == 16.0);
    std::vector<Diagnostic> diags;
    m = parse_memory_field("", &diags);
    CHECK_FALSE(m.modules.has_value());
    CHECK_FALSE(m.gb_per_module.has_value());
    CHECK(diags.size() == 1);
}

TEST_CASE("storage descriptors") {
    auto s = parse_storage_field("1 x 146 GB 10K RPM SAS HDD");
    CHECK(s.drives == 1.0);
    CHECK(s.gb_per_drive == 146.0);
    CHECK(s.type == DriveType::Hdd);
    s = parse_storage_field("2 x 480 GB SATA SSD");
    CHECK(s.drives == 2.0);
    CHECK(s.gb_per_drive == 480.0);
    CHECK(s.type == DriveType::Ssd);
    s = parse_storage_field("1 x 1 TB 7.2K RPM");
    CHECK(s.gb_per_drive == 1000.0);
    CHECK(s.type == DriveType::Hdd);
    std::vector<Diagnostic> diags;
    s = parse_storage_field("1 x 400 GB", &diags);
    CHECK_FALSE(s.type.has_value());
    CHECK(diags.size() == 1);
}

TEST_CASE("proleptic Gregorian ordinals") {
    CHECK(date_to_ordinal({1, 1, 1}) == 1);
    CHECK(date_to_ordinal({1, 2, 1}) == 32);
    CHECK(date_to_ordinal({5, 1, 1}) == 1462);
    CHECK_THROWS_AS(date_to_ordinal({2023, 2, 30}), ParseError);
    CHECK(ordinal_to_date(date_to_ordinal({2012, 2, 29})) == CalendarDate{2012, 2, 29});
    CHECK(parse_date("Mar-2012") == CalendarDate{2012, 3, 1});
    CHECK(parse_date("2016-07-15") == CalendarDate{2016, 7, 15});
    CHECK_THROWS_AS(parse_date("2016-13-01"), ParseError);

    SUBCASE("strictly increasing over sorted random dates") {
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<int> year(1, 9999);
        std::uniform_int_distribution<unsigned> month(1, 12);
        std::uniform_int_distribution<unsigned> day(1, 31);
        std::vector<CalendarDate> dates;
        while (dates.size() < 2000) {
            CalendarDate d{year(rng), month(rng), day(rng)};
            try {
                date_to_ordinal(d);
                dates.push_back(d);
            } catch (const ParseError&) {
            }
        }
        std::sort(dates.begin(), dates.end());
        dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
        for (std::size_t i = 1; i < dates.size(); ++i) {
            CHECK(date_to_ordinal(dates[i - 1]) < date_to_ordinal(dates[i]));
        }
    }
}

TEST_CASE("parsers are total over arbitrary text") {
    std::mt19937_64 rng(11);
    const std::string alphabet = "0123456789 xXKMGTBIDperchiocsr+-.,/\"SSDHDRPM";
    std::uniform_int_distribution<std::size_t> len(0, 40);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    for (int trial = 0; trial < 3000; ++trial) {
        std::string s;
        for (std::size_t i = len(rng); i > 0; --i) s.push_back(alphabet[pick(rng)]);
        std::vector<Diagnostic> diags;
        const auto c = parse_cache_fields(s, s, s, 2, 8, &diags);
        for (const auto& v : {c.l1d_kb_per_core, c.l1i_kb_per_core, c.l2_mb_per_core, c.l3_mb_per_chip}) {
            if (v) CHECK((std::isfinite(*v) && *v >= 0.0));
        }
        const auto m = parse_memory_field(s, &diags);
        if (m.modules) CHECK(*m.modules >= 0.0);
        const auto st = parse_storage_field(s, &diags);
        if (st.gb_per_drive) CHECK(std::isfinite(*st.gb_per_drive));
        try {
            parse_date(s);
        } catch (const ParseError&) {
        }
    }
}

TEST_CASE("build_design_matrix row layout") {
    std::vector<ServerRecord> recs{simple_record("a"), simple_record("b"), simple_record("c")};

    SUBCASE("power: 11 rows per server, schema ends with L") {
        const auto dm = build_design_matrix(recs, TargetKind::Power);
        CHECK(dm.size() == 33);
        CHECK(dm.schema.names.back() == "L");
        CHECK(dm.rows.cols() == 16);
        const auto groups = dm.groups();
        REQUIRE(groups.size() == 3);
        std::size_t total = 0;
        for (const auto& g : groups) total += g.end - g.begin;
        CHECK(total == dm.size());
    }
    SUBCASE("throughput: one row per single-node server, no L") {
        recs[1].nodes = 2;
        const auto dm = build_design_matrix(recs, TargetKind::MaxThroughput);
        CHECK(dm.size() == 2);
        CHECK(dm.multi_node_excluded == 1);
        CHECK_FALSE(dm.schema.has_load());
        CHECK(dm.y[0] == 1000000.0);
    }
    SUBCASE("perf-to-power is throughput over power at each level") {
        recs[0].levels[5].power_w = 200.0;
        recs[0].levels[5].throughput = 500000.0;
        const auto dm = build_design_matrix(recs, TargetKind::PerfToPower);
        CHECK(dm.y[5] == 2500.0);
        for (std::size_t i = 0; i < dm.size(); i += kLevelCount) CHECK(dm.y[i] == 0.0);
    }
    SUBCASE("a record without a usable full-load level is excluded") {
        recs[2].levels[10].throughput = std::nan("");
        const auto dm = build_design_matrix(recs, TargetKind::Power);
        CHECK(dm.size() == 22);
        CHECK_FALSE(dm.diagnostics.empty());
    }
    SUBCASE("DDT one-hot columns sum to one when observed") {
        recs[0].config.ddt = DriveType::Ssd;
        const auto dm = build_design_matrix(recs, TargetKind::MaxThroughput);
        const auto hdd = *dm.schema.index_of("DDT_HDD");
        const auto ssd = *dm.schema.index_of("DDT_SSD");
        CHECK(dm.rows(0, hdd) + dm.rows(0, ssd) == 1.0);
        CHECK(is_missing(dm.rows(1, hdd)));
    }
}

TEST_CASE("synthetic generator") {
    SyntheticSpec spec;
    spec.n_servers = 50;
    spec.seed = 42;

    SUBCASE("same seed gives byte-identical canonical output") {
        std::ostringstream a;
        std::ostringstream b;
        write_canonical_csv(a, generate_synthetic(spec).records);
        write_canonical_csv(b, generate_synthetic(spec).records);
        CHECK(a.str() == b.str());
    }
    SUBCASE("noiseless records satisfy the efficiency identity exactly") {
        spec.noise_sd = 0.0;
        const auto corpus = generate_synthetic(spec);
        for (const auto& r : corpus.records) {
            std::vector<Diagnostic> diags;
            validate_record(r, &diags);
            CHECK(diags.empty());
            const double th_max = r.levels.back().throughput;
            for (const auto& lv : r.levels) {
                CHECK(lv.throughput / lv.power_w == lv.load * th_max / lv.power_w);
            }
        }
    }
    SUBCASE("negative noise is rejected") {
        spec.noise_sd = -0.1;
        CHECK_THROWS_AS(generate_synthetic(spec), ArgumentError);
    }
    SUBCASE("throughput tracks core count times frequency") {
        spec.n_servers = 1000;
        spec.noise_sd = 0.03;
        const auto corpus = generate_synthetic(spec);
        std::vector<double> x;
        std::vector<double> y;
        for (const auto& r : corpus.records) {
            x.push_back(*r.config.cc * *r.config.cpc * *r.config.cf);
            y.push_back(r.levels.back().throughput);
        }
        const double n = static_cast<double>(x.size());
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mx += x[i] / n;
            my += y[i] / n;
        }
        double sxy = 0, sxx = 0, syy = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sxy += (x[i] - mx) * (y[i] - my);
            sxx += (x[i] - mx) * (x[i] - mx);
            syy += (y[i] - my) * (y[i] - my);
        }
        CHECK(sxy / std::sqrt(sxx * syy) > 0.9);
    }
}

TEST_CASE("canonical CSV round-trips records exactly") {
    SyntheticSpec spec;
    spec.n_servers = 40;
    spec.seed = 3;
    spec.missing_rate = 0.2;
    spec.multi_node_rate = 0.1;
    const auto records = generate_synthetic(spec).records;
    std::stringstream buf;
    write_canonical_csv(buf, records);
    const auto back = read_canonical_csv(buf);
    REQUIRE(back.records.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back.records[i] == records[i]);
    }
}

TEST_CASE("export layout written for synthetic data ingests back to the same features") {
    SyntheticSpec spec;
    spec.n_servers = 30;
    spec.seed = 8;
    const auto records = generate_synthetic(spec).records;
    const auto mapping = ColumnMapping::defaults();
    std::stringstream buf;
    write_results_csv(buf, records, mapping);
    const auto table = parse_results_csv(buf, mapping);
    const auto back = records_from_table(table, mapping);
    REQUIRE(back.records.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back.records[i] == records[i]);
    }
}
