#include "serverlens/split.hpp"

#include <algorithm>
#include <ostream>
#include <random>

namespace serverlens {

const std::vector<std::size_t>& SplitIndices::rows(Partition p) const {
    switch (p) {
        case Partition::Train: return train;
        case Partition::Validation: return validation;
        case Partition::Test: return test;
    }
    return train;
}

namespace {

void expand(const std::vector<ServerGroup>& groups, std::span<const std::size_t> picked,
            std::vector<std::size_t>& out) {
    for (std::size_t g : picked) {
        for (std::size_t r = groups[g].begin; r < groups[g].end; ++r) {
            out.push_back(r);
        }
    }
    std::sort(out.begin(), out.end());
}

}  // namespace

SplitIndices random_server_split(const DesignMatrix& matrix, std::uint64_t seed) {
    const auto groups = matrix.groups();
    const std::size_t servers = groups.size();
    if (servers < 3) {
        throw ArgumentError("random_server_split needs at least 3 servers, got " + std::to_string(servers));
    }
    std::vector<std::size_t> order(servers);
    for (std::size_t i = 0; i < servers; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_train = servers * 8 / 10;
    const std::size_t n_val = servers / 10;
    SplitIndices s;
    s.scheme = SplitScheme::RandomByServer;
    s.seed = seed;
    const std::span<const std::size_t> all(order);
    expand(groups, all.subspan(0, n_train), s.train);
    expand(groups, all.subspan(n_train, n_val), s.validation);
    expand(groups, all.subspan(n_train + n_val), s.test);
    return s;
}

SplitIndices time_series_split(const DesignMatrix& matrix, int baseline_year, int horizon) {
    if (horizon < 1 || horizon > 5) {
        throw ArgumentError("horizon must lie in [1, 5], got " + std::to_string(horizon));
    }
    const auto groups = matrix.groups();
    const std::int64_t cutoff = date_to_ordinal({baseline_year, 1, 1});
    const int test_year = baseline_year + horizon;

    std::vector<std::size_t> before;
    std::vector<std::size_t> target;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const std::int64_t avail = matrix.availability[groups[g].begin];
        if (avail == std::numeric_limits<std::int64_t>::min()) {
            continue;  // no availability date: cannot be placed in time
        }
        if (avail < cutoff) {
            before.push_back(g);
        } else if (ordinal_to_date(avail).year == test_year) {
            target.push_back(g);
        }
    }
    if (before.empty()) {
        throw ArgumentError("time_series_split: no servers available before " + std::to_string(baseline_year));
    }
    std::sort(before.begin(), before.end(), [&](std::size_t a, std::size_t b) {
        const auto ta = matrix.availability[groups[a].begin];
        const auto tb = matrix.availability[groups[b].begin];
        if (ta != tb) return ta < tb;
        return groups[a].server_id < groups[b].server_id;
    });
    const std::size_t n_train = before.size() * 8 / 10;
    SplitIndices s;
    s.scheme = SplitScheme::TimeSeries;
    s.baseline_year = baseline_year;
    s.horizon = horizon;
    const std::span<const std::size_t> all(before);
    expand(groups, all.subspan(0, n_train), s.train);
    expand(groups, all.subspan(n_train), s.validation);
    expand(groups, target, s.test);
    return s;
}

std::vector<std::string> partition_servers(const DesignMatrix& matrix, const SplitIndices& split, Partition p) {
    std::vector<std::string> ids;
    for (std::size_t r : split.rows(p)) {
        if (ids.empty() || ids.back() != matrix.group_ids[r]) {
            ids.push_back(matrix.group_ids[r]);
        }
    }
    return ids;
}

void write_split(std::ostream& out, const DesignMatrix& matrix, const SplitIndices& split) {
    if (split.scheme == SplitScheme::RandomByServer) {
        out << "# scheme random_by_server seed " << split.seed << '\n';
    } else {
        out << "# scheme time_series baseline " << split.baseline_year << " horizon " << split.horizon << '\n';
    }
    for (Partition p : {Partition::Train, Partition::Validation, Partition::Test}) {
        out << to_string(p);
        for (const auto& id : partition_servers(matrix, split, p)) {
            out << ' ' << id;
        }
        out << '\n';
    }
}

}  // namespace serverlens
