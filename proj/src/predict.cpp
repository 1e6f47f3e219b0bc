#include <algorithm>
#include <cmath>

#include "serverlens/pipeline.hpp"

namespace serverlens {

namespace {

void expect_target(const ModelBundle& b, TargetKind want, const char* role) {
    if (b.target != want) {
        throw ArgumentError(std::string(role) + " bundle was trained for the " + std::string(to_string(b.target)) +
                            " target, expected " + std::string(to_string(want)));
    }
}

void check_trio(const ModelBundle& power, const ModelBundle& throughput, const ModelBundle& perf) {
    expect_target(power, TargetKind::Power, "power");
    expect_target(throughput, TargetKind::MaxThroughput, "throughput");
    expect_target(perf, TargetKind::PerfToPower, "perf");
}

// Rows of config features crossed with loads: config-major, load-minor.
Matrix with_loads(const Matrix& configs, std::span<const double> loads) {
    Matrix out(configs.rows() * loads.size(), configs.cols() + 1);
    for (std::size_t i = 0; i < configs.rows(); ++i) {
        for (std::size_t l = 0; l < loads.size(); ++l) {
            auto r = out.row(i * loads.size() + l);
            std::copy(configs.row(i).begin(), configs.row(i).end(), r.begin());
            r.back() = loads[l];
        }
    }
    return out;
}

double composed_value(double load, double th_max, double power) {
    if (load == 0.0) return 0.0;
    return load * th_max / power;
}

}  // namespace

PredictionCurve predict_targets(const ModelBundle& power, const ModelBundle& throughput, const ModelBundle& perf,
                                std::span<const double> config_row) {
    check_trio(power, throughput, perf);
    const auto& names = FeatureSchema::config_features();
    if (config_row.size() != names.size()) {
        throw SchemaError("expected " + std::to_string(names.size()) + " configuration features, got " +
                          std::to_string(config_row.size()));
    }
    PredictionCurve curve;
    for (std::size_t c = 0; c < names.size(); ++c)
        if (is_missing(config_row[c])) curve.imputed.push_back(names[c]);

    Matrix config(1, names.size());
    std::copy(config_row.begin(), config_row.end(), config.row(0).begin());
    std::array<double, kLevelCount> loads{};
    for (std::size_t i = 0; i < kLevelCount; ++i) loads[i] = level_fraction(i);
    const Matrix rows = with_loads(config, loads);

    PredictionFlags flags;
    const auto p = bundle_predict(power, rows, &flags);
    const auto e = bundle_predict(perf, rows);
    curve.max_throughput = bundle_predict(throughput, config)[0];
    for (std::size_t i = 0; i < kLevelCount; ++i) {
        curve.load[i] = loads[i];
        curve.power[i] = p[i];
        curve.perf[i] = e[i];
        curve.composed[i] = loads[i] == 0.0 || p[i] > 0.0 ? composed_value(loads[i], curve.max_throughput, p[i])
                                       : std::numeric_limits<double>::quiet_NaN();
    }
    if (curve.imputed.size() == names.size()) curve.flags.push_back("low_confidence_all_features_imputed");
    if (curve.power[kLevelCount - 1] < curve.power[0]) curve.flags.push_back("power_decreases_with_load");
    if (std::any_of(curve.power.begin(), curve.power.end(), [](double v) { return v <= 0.0; }))
        curve.flags.push_back("nonpositive_power");
    if (curve.max_throughput <= 0.0) curve.flags.push_back("nonpositive_throughput");
    return curve;
}

Eq1Report consistency_check_eq1(const ModelBundle& power, const ModelBundle& throughput, const ModelBundle& perf,
                                const Matrix& configs, std::span<const double> loads) {
    check_trio(power, throughput, perf);
    if (configs.cols() != FeatureSchema::config_features().size()) {
        throw SchemaError("configurations need " + std::to_string(FeatureSchema::config_features().size()) +
                          " features");
    }
    if (loads.empty() || configs.rows() == 0) throw ArgumentError("need at least one configuration and one load");
    const Matrix rows = with_loads(configs, loads);
    const auto p = bundle_predict(power, rows);
    const auto e = bundle_predict(perf, rows);
    const auto th = bundle_predict(throughput, configs);

    Eq1Report report;
    std::vector<double> rel;
    for (std::size_t i = 0; i < configs.rows(); ++i) {
        for (std::size_t l = 0; l < loads.size(); ++l) {
            const std::size_t k = i * loads.size() + l;
            Eq1Cell c;
            c.config = i;
            c.load = loads[l];
            c.direct = e[k];
            if (p[k] <= 0.0 && loads[l] != 0.0) {
                c.flagged = true;
                c.composed = std::numeric_limits<double>::quiet_NaN();
                c.residual = c.relative = std::numeric_limits<double>::quiet_NaN();
                ++report.flagged;
            } else {
                c.composed = composed_value(loads[l], th[i], p[k]);
                c.residual = std::abs(c.direct - c.composed);
                c.relative = c.residual / std::max(std::abs(c.direct), 1e-12);
                rel.push_back(c.relative);
            }
            report.cells.push_back(c);
        }
    }
    if (!rel.empty()) {
        std::sort(rel.begin(), rel.end());
        auto quantile = [&](double q) {
            // linear interpolation between order statistics
            const double pos = q * static_cast<double>(rel.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, rel.size() - 1);
            return rel[lo] + (pos - static_cast<double>(lo)) * (rel[hi] - rel[lo]);
        };
        report.median_relative = quantile(0.5);
        report.p95_relative = quantile(0.95);
    } else {
        report.median_relative = report.p95_relative = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

}  // namespace serverlens
