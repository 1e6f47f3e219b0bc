#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "serverlens/split.hpp"

using namespace serverlens;

namespace {

DesignMatrix corpus(std::size_t servers, std::uint64_t seed, TargetKind target = TargetKind::Power) {
    SyntheticSpec spec;
    spec.n_servers = servers;
    spec.seed = seed;
    return build_design_matrix(generate_synthetic(spec).records, target);
}

void check_partition(const DesignMatrix& dm, const SplitIndices& s) {
    std::vector<int> seen(dm.size(), 0);
    for (auto p : {Partition::Train, Partition::Validation, Partition::Test})
        for (auto r : s.rows(p)) ++seen[r];
    for (int c : seen) CHECK(c <= 1);
    // server atomicity: each server's rows are all in one partition or none
    for (const auto& g : dm.groups()) {
        std::set<int> where;
        for (std::size_t r = g.begin; r < g.end; ++r) {
            int loc = -1;
            for (auto p : {Partition::Train, Partition::Validation, Partition::Test}) {
                const auto& rows = s.rows(p);
                if (std::binary_search(rows.begin(), rows.end(), r)) loc = static_cast<int>(p);
            }
            where.insert(loc);
        }
        CHECK(where.size() == 1);
    }
}

}  // namespace

TEST_CASE("random split by server") {
    SUBCASE("10 servers -> 8/1/1") {
        const auto dm = corpus(10, 1);
        const auto s = random_server_split(dm, 7);
        CHECK(partition_servers(dm, s, Partition::Train).size() == 8);
        CHECK(partition_servers(dm, s, Partition::Validation).size() == 1);
        CHECK(partition_servers(dm, s, Partition::Test).size() == 1);
    }
    SUBCASE("949 servers -> 759/94/96") {
        const auto dm = corpus(949, 2, TargetKind::MaxThroughput);
        const auto s = random_server_split(dm, 11);
        CHECK(s.train.size() == 759);
        CHECK(s.validation.size() == 94);
        CHECK(s.test.size() == 96);
    }
    SUBCASE("deterministic by seed") {
        const auto dm = corpus(40, 3);
        const auto a = random_server_split(dm, 5);
        const auto b = random_server_split(dm, 5);
        CHECK(a.train == b.train);
        CHECK(a.validation == b.validation);
        CHECK(a.test == b.test);
    }
    SUBCASE("fewer than three servers") { CHECK_THROWS_AS(random_server_split(corpus(2, 1), 1), ArgumentError); }
}

TEST_CASE("partition and atomicity hold over random corpora") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + rng() % 60;
        const auto dm = corpus(n, rng());
        const auto s = random_server_split(dm, rng());
        check_partition(dm, s);
        const std::size_t servers = dm.groups().size();
        const auto n_train = partition_servers(dm, s, Partition::Train).size();
        CHECK(std::abs(static_cast<double>(n_train) - 0.8 * servers) <= 1.0);

        const int baseline = 2010 + static_cast<int>(rng() % 10);
        const int horizon = 1 + static_cast<int>(rng() % 5);
        try {
            const auto t = time_series_split(dm, baseline, horizon);
            check_partition(dm, t);
        } catch (const ArgumentError&) {
            // tiny corpora can have no pre-baseline servers
        }
    }
}

TEST_CASE("chronological split") {
    const auto dm = corpus(300, 4);
    const auto s = time_series_split(dm, 2015, 2);
    const auto cutoff = date_to_ordinal({2015, 1, 1});
    for (auto r : s.train) CHECK(dm.availability[r] < cutoff);
    for (auto r : s.validation) CHECK(dm.availability[r] < cutoff);
    for (auto r : s.test) CHECK(ordinal_to_date(dm.availability[r]).year == 2017);
    CHECK_FALSE(s.test.empty());
    std::int64_t max_train = 0;
    for (auto r : s.train) max_train = std::max(max_train, dm.availability[r]);
    for (auto r : s.validation) CHECK(dm.availability[r] >= max_train);

    SUBCASE("ten pre-baseline servers split 8/2 in time order") {
        SyntheticSpec spec;
        spec.n_servers = 12;
        spec.seed = 1;
        auto gen = generate_synthetic(spec).records;
        for (std::size_t i = 0; i < gen.size(); ++i) {
            gen[i].config.had = date_to_ordinal({i < 10 ? 2010 : 2013, 1, static_cast<unsigned>(20 - i)});
        }
        const auto m = build_design_matrix(gen, TargetKind::MaxThroughput);
        const auto t = time_series_split(m, 2012, 1);
        CHECK(t.train.size() == 8);
        CHECK(t.validation.size() == 2);
        CHECK(t.test.size() == 2);
        // the two latest pre-baseline dates belong to the first two servers
        CHECK(partition_servers(m, t, Partition::Validation) == std::vector<std::string>{"syn-00001", "syn-00002"});
    }
    SUBCASE("no pre-baseline servers is an error") { CHECK_THROWS_AS(time_series_split(dm, 1990, 1), ArgumentError); }
    SUBCASE("no data in the target year gives an empty test set") {
        const auto t = time_series_split(dm, 2022, 3);
        CHECK(t.test_empty());
    }
    SUBCASE("audit file lists servers per partition") {
        std::ostringstream out;
        write_split(out, dm, s);
        const auto text = out.str();
        CHECK(text.find("# scheme time_series baseline 2015 horizon 2") == 0);
        CHECK(text.find("\ntrain ") != std::string::npos);
        CHECK(text.find("\ntest ") != std::string::npos);
    }
}
