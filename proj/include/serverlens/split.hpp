#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "serverlens/dataset.hpp"

namespace serverlens {

enum class SplitScheme { RandomByServer, TimeSeries };

// Row indices into a DesignMatrix. Splits are decided per server and then
// expanded to rows, so no server straddles two partitions.
struct SplitIndices {
    SplitScheme scheme = SplitScheme::RandomByServer;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    std::uint64_t seed = 0;
    int baseline_year = 0;
    int horizon = 0;

    bool test_empty() const noexcept { return test.empty(); }
    const std::vector<std::size_t>& rows(Partition p) const;
};

// 80/10/10 by server count: floor for train and validation, remainder to test.
SplitIndices random_server_split(const DesignMatrix& matrix, std::uint64_t seed);

// Servers available before Jan 1 of baseline_year, sorted by availability
// (ties by server id): first 80% train, rest validation. Test holds the
// servers whose availability year is exactly baseline_year + horizon; it may
// be empty.
SplitIndices time_series_split(const DesignMatrix& matrix, int baseline_year, int horizon);

// Distinct server ids per partition, in row order.
std::vector<std::string> partition_servers(const DesignMatrix& matrix, const SplitIndices& split, Partition p);

// "train id id ...", "validation ...", "test ..." plus a metadata header line.
void write_split(std::ostream& out, const DesignMatrix& matrix, const SplitIndices& split);

}  // namespace serverlens
