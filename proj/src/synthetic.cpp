#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "serverlens/dataset.hpp"

namespace serverlens {

double SyntheticTruth::power(double load) const { return p_idle + (p_max - p_idle) * std::pow(load, gamma); }

double SyntheticTruth::perf(double load) const { return load * th_max / power(load); }

namespace {

double year_position(std::int64_t had, const SyntheticSpec& spec) {
    const double start = static_cast<double>(date_to_ordinal({spec.first_year, 1, 1}));
    const double stop = static_cast<double>(date_to_ordinal({spec.last_year + 1, 1, 1}));
    return std::clamp((static_cast<double>(had) - start) / (stop - start), 0.0, 1.0);
}

template <typename T, std::size_t N>
T pick(std::mt19937_64& rng, const std::array<T, N>& options, std::size_t lo, std::size_t hi) {
    hi = std::min(hi, N - 1);
    lo = std::min(lo, hi);
    std::uniform_int_distribution<std::size_t> d(lo, hi);
    return options[d(rng)];
}

}  // namespace

SyntheticTruth synthetic_truth(const ServerConfig& c, const SyntheticSpec& spec) {
    if (!c.cc || !c.cpc || !c.cf || !c.cs_l3 || !c.mmc || !c.had) {
        throw ArgumentError("synthetic_truth needs CC, CPC, CF, CS_L3, MMC and HAD");
    }
    const auto& k = spec.coefficients;
    SyntheticTruth t;
    t.th_max = k.a * *c.cc * *c.cpc * *c.cf * (1.0 + k.b * std::log1p(*c.cs_l3));
    if (spec.shift_year && ordinal_to_date(*c.had).year >= *spec.shift_year) {
        t.th_max *= spec.shift_factor;
    }
    t.p_max = k.p_base + k.p_chip * *c.cc + k.p_dimm * *c.mmc;
    t.p_idle = t.p_max * (k.idle_start - k.idle_drop * year_position(*c.had, spec));
    t.gamma = k.gamma;
    return t;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_servers < 1) {
        throw ArgumentError("n_servers must be >= 1");
    }
    if (!(spec.noise_sd >= 0.0)) {
        throw ArgumentError("noise_sd must be >= 0");
    }
    if (spec.missing_rate < 0.0 || spec.missing_rate > 1.0 || spec.multi_node_rate < 0.0 ||
        spec.multi_node_rate > 1.0) {
        throw ArgumentError("rates must lie in [0, 1]");
    }
    if (spec.last_year < spec.first_year) {
        throw ArgumentError("last_year precedes first_year");
    }

    static constexpr std::array<double, 10> kCores{2, 4, 6, 8, 12, 16, 24, 32, 48, 64};
    static constexpr std::array<double, 4> kFreq{2000, 2400, 2800, 3200};
    static constexpr std::array<double, 4> kL2{0.25, 0.5, 1.0, 2.0};
    static constexpr std::array<double, 2> kL3PerCore{1.5, 2.5};
    static constexpr std::array<double, 4> kDimmsPerChip{2, 4, 6, 8};
    static constexpr std::array<double, 5> kDimmSize{4, 8, 16, 32, 64};
    static constexpr std::array<double, 4> kDriveSize{120, 240, 480, 960};

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::int64_t first = date_to_ordinal({spec.first_year, 1, 1});
    const std::int64_t last = date_to_ordinal({spec.last_year, 12, 31});
    std::uniform_int_distribution<std::int64_t> day(first, last);

    SyntheticCorpus corpus;
    corpus.records.reserve(spec.n_servers);
    corpus.truth.reserve(spec.n_servers);
    for (std::size_t s = 0; s < spec.n_servers; ++s) {
        ServerRecord rec;
        char id[32];
        std::snprintf(id, sizeof(id), "syn-%05zu", s + 1);
        rec.server_id = id;

        ServerConfig c;
        c.had = day(rng);
        const double t = year_position(*c.had, spec);
        const double u = unit(rng);
        c.cc = u < 0.3 ? 1.0 : (u < 0.9 ? 2.0 : 4.0);
        c.cpc = pick(rng, kCores, 0, 2 + static_cast<std::size_t>(std::lround(7.0 * t)));
        c.tpc = unit(rng) < 0.7 ? 2.0 : 1.0;
        c.cf = pick(rng, kFreq, 0, kFreq.size() - 1);
        c.cs_l1i = 32.0;
        c.cs_l1d = unit(rng) < 0.6 * t ? 48.0 : 32.0;
        c.cs_l2 = pick(rng, kL2, 0, static_cast<std::size_t>(std::lround(3.0 * t)));
        c.cs_l3 = *c.cpc * pick(rng, kL3PerCore, 0, 1);
        c.mmc = *c.cc * pick(rng, kDimmsPerChip, 0, kDimmsPerChip.size() - 1);
        const auto mms_lo = static_cast<std::size_t>(std::lround(2.0 * t));
        c.mms = pick(rng, kDimmSize, mms_lo, mms_lo + 2);
        c.ddc = unit(rng) < 0.5 ? 1.0 : 2.0;
        c.dds = pick(rng, kDriveSize, 0, kDriveSize.size() - 1);
        c.ddt = unit(rng) < 0.1 + 0.8 * t ? DriveType::Ssd : DriveType::Hdd;
        rec.nodes = unit(rng) < spec.multi_node_rate ? 4 : 1;

        const SyntheticTruth truth = synthetic_truth(c, spec);
        auto noisy = [&](double v) { return v * (1.0 + spec.noise_sd * normal(rng)); };
        const double th_max = noisy(truth.th_max);
        for (std::size_t i = 0; i < kLevelCount; ++i) {
            const double load = level_fraction(i);
            auto& lv = rec.levels[i];
            lv.load = load;
            lv.power_w = std::max(1e-3, noisy(truth.power(load)));
            if (i == 0) {
                lv.throughput = 0.0;
            } else if (i + 1 == kLevelCount) {
                lv.throughput = th_max;
            } else {
                lv.throughput = std::max(0.0, noisy(load * th_max));
            }
        }

        if (spec.missing_rate > 0.0) {
            auto drop = [&](auto& field) {
                if (unit(rng) < spec.missing_rate) field.reset();
            };
            drop(c.cc);
            drop(c.cpc);
            drop(c.tpc);
            drop(c.cf);
            drop(c.cs_l1d);
            drop(c.cs_l1i);
            drop(c.cs_l2);
            drop(c.cs_l3);
            drop(c.mmc);
            drop(c.mms);
            drop(c.ddc);
            drop(c.dds);
            drop(c.ddt);
        }
        rec.config = c;
        corpus.records.push_back(std::move(rec));
        corpus.truth.push_back(truth);
    }
    return corpus;
}

}  // namespace serverlens
