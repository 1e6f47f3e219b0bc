#include "serverlens/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

namespace serverlens {

namespace {

void check_pair(std::span<const double> y, std::span<const double> yhat, const char* who) {
    if (y.size() != yhat.size()) {
        throw ArgumentError(std::string(who) + ": " + std::to_string(y.size()) + " observations but " +
                            std::to_string(yhat.size()) + " predictions");
    }
    if (y.empty()) throw ArgumentError(std::string(who) + ": no observations");
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!std::isfinite(y[i]) || !std::isfinite(yhat[i])) {
            throw ArgumentError(std::string(who) + ": non-finite value at index " + std::to_string(i));
        }
    }
}

double sse(std::span<const double> y, std::span<const double> yhat) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return s;
}

double sst(std::span<const double> y) {
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double s = 0.0;
    for (double v : y) s += (v - mean) * (v - mean);
    return s;
}

}  // namespace

double rmse(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "rmse");
    return std::sqrt(sse(y, yhat) / static_cast<double>(y.size()));
}

double r_squared(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "r_squared");
    const double total = sst(y);
    if (total == 0.0) throw ArgumentError("r_squared: observations are constant");
    return 1.0 - sse(y, yhat) / total;
}

MapeResult mape(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "mape");
    MapeResult r;
    double s = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (std::abs(y[i]) <= kZeroObservation) {
            ++r.excluded;
            continue;
        }
        s += std::abs(y[i] - yhat[i]) / std::abs(y[i]);
        ++used;
    }
    r.value = used ? s / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

double maape(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "maape");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double err = std::abs(y[i] - yhat[i]);
        if (err == 0.0) continue;
        // atan of +inf is exactly pi/2
        s += y[i] == 0.0 ? std::numbers::pi / 2.0 : std::atan(err / std::abs(y[i]));
    }
    return s / static_cast<double>(y.size());
}

MetricsReport evaluate_metrics(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "evaluate_metrics");
    MetricsReport m;
    m.n = y.size();
    m.rmse = rmse(y, yhat);
    const double total = sst(y);
    m.r2 = total > 0.0 ? 1.0 - sse(y, yhat) / total : std::numeric_limits<double>::quiet_NaN();
    const auto mp = mape(y, yhat);
    m.mape = mp.value;
    m.mape_excluded = mp.excluded;
    m.maape = maape(y, yhat);
    return m;
}

// ---------------------------------------------------------------------------

ImportanceReport permutation_importance(const Predictor& predictor, const Matrix& rows, std::span<const double> y,
                                        const std::vector<std::string>& names, const ImportanceOptions& options) {
    if (options.repeats == 0) throw ArgumentError("permutation_importance: repeats must be at least 1");
    if (names.size() != rows.cols()) {
        throw ArgumentError("permutation_importance: " + std::to_string(names.size()) + " names for " +
                            std::to_string(rows.cols()) + " columns");
    }
    if (rows.rows() != y.size()) throw ArgumentError("permutation_importance: row and target counts differ");

    ImportanceReport report;
    report.repeats = options.repeats;
    report.partition = options.partition;
    report.baseline_r2 = r_squared(y, predictor(rows));

    const std::size_t d = rows.cols();
    const std::size_t r = options.repeats;
    report.features.resize(d);

    auto score_feature = [&](std::size_t j) {
        Matrix shuffled = rows;
        std::vector<std::size_t> perm(rows.rows());
        auto& out = report.features[j];
        out.feature = names[j];
        out.column = j;
        out.samples.resize(r);
        for (std::size_t k = 0; k < r; ++k) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::mt19937_64 rng(derive_seed(options.seed, "importance", j * r + k));
            std::shuffle(perm.begin(), perm.end(), rng);
            for (std::size_t i = 0; i < rows.rows(); ++i) shuffled(i, j) = rows(perm[i], j);
            out.samples[k] = report.baseline_r2 - r_squared(y, predictor(shuffled));
        }
        out.mean = std::accumulate(out.samples.begin(), out.samples.end(), 0.0) / static_cast<double>(r);
        if (r > 1) {
            double ss = 0.0;
            for (double s : out.samples) ss += (s - out.mean) * (s - out.mean);
            out.sd = std::sqrt(ss / static_cast<double>(r - 1));
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, d));
    if (threads == 1) {
        for (std::size_t j = 0; j < d; ++j) score_feature(j);
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr failure;
        std::mutex guard;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t j = t; j < d; j += threads) score_feature(j);
                } catch (...) {
                    const std::lock_guard lock(guard);
                    if (!failure) failure = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    std::stable_sort(report.features.begin(), report.features.end(),
                     [](const FeatureImportance& a, const FeatureImportance& b) { return a.mean > b.mean; });
    return report;
}

ImportanceReport permutation_importance(const TrainedModel& model, const Matrix& rows, std::span<const double> y,
                                        const std::vector<std::string>& names, const ImportanceOptions& options) {
    return permutation_importance([&model](const Matrix& x) { return predict(model, x); }, rows, y, names, options);
}

// ---------------------------------------------------------------------------

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
    out << "target,learner,partition,n,rmse,r2,mape,mape_excluded,maape\n";
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out << r.target << ',' << r.learner << ',' << r.partition << ',' << m.n << ',' << format_number(m.rmse) << ','
            << format_number(m.r2) << ',' << format_number(m.mape) << ',' << m.mape_excluded << ','
            << format_number(m.maape) << '\n';
    }
}

void write_importance_csv(std::ostream& out, const std::string& target, const ImportanceReport& report) {
    out << "target,partition,rank,feature,mean_decrease,sd_decrease,repeats,baseline_r2\n";
    for (std::size_t i = 0; i < report.features.size(); ++i) {
        const auto& f = report.features[i];
        out << target << ',' << report.partition << ',' << i + 1 << ',' << f.feature << ',' << format_number(f.mean)
            << ',' << format_number(f.sd) << ',' << report.repeats << ',' << format_number(report.baseline_r2) << '\n';
    }
}

}  // namespace serverlens
