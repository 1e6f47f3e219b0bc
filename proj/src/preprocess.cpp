#include "serverlens/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "serverlens/simd.hpp"

namespace serverlens {

namespace {

void require_training(const TaggedRows& rows, std::string_view what) {
    if (rows.partition != Partition::Train) {
        throw ArgumentError(std::string(what) + " accepts training rows only, got " +
                            std::string(to_string(rows.partition)) + " rows");
    }
}

}  // namespace

ImputerModel fit_imputer(const TaggedRows& train, std::size_t k, const std::vector<std::string>& feature_names) {
    require_training(train, "fit_imputer");
    const Matrix& x = train.rows;
    if (x.rows() == 0) {
        throw ArgumentError("fit_imputer: no training rows");
    }
    if (k < 1 || k > x.rows()) {
        throw ArgumentError("fit_imputer: k must lie in [1, " + std::to_string(x.rows()) + "], got " +
                            std::to_string(k));
    }
    ImputerModel model;
    model.k = k;
    model.reference = x;
    model.means.assign(x.cols(), 0.0);
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double s = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double v = x(i, j);
            if (!is_missing(v)) {
                s += v;
                ++count;
            }
        }
        if (count == 0) {
            const std::string name = j < feature_names.size() ? feature_names[j] : "#" + std::to_string(j);
            throw FitError("fit_imputer: feature " + name + " is missing in every training row");
        }
        model.means[j] = s / static_cast<double>(count);
    }
    return model;
}

Matrix apply_imputer(const ImputerModel& model, const Matrix& rows, std::vector<Diagnostic>* diagnostics) {
    const std::size_t d = model.means.size();
    if (rows.cols() != d) {
        throw ArgumentError("apply_imputer: expected " + std::to_string(d) + " features, got " +
                            std::to_string(rows.cols()));
    }
    const Matrix& ref = model.reference;
    Matrix out = rows;
    std::vector<double> dist(ref.rows());
    std::vector<std::size_t> order(ref.rows());

    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const auto missing = static_cast<std::size_t>(std::count_if(row.begin(), row.end(), is_missing));
        if (missing == 0) {
            continue;
        }
        if (missing == d) {
            std::copy(model.means.begin(), model.means.end(), row.begin());
            if (diagnostics != nullptr) {
                diagnostics->push_back({r + 1, "", "all features missing; imputed from training means"});
            }
            continue;
        }
        const auto query = rows.row(r);
        for (std::size_t i = 0; i < ref.rows(); ++i) {
            std::size_t shared = 0;
            const double sq = simd::masked_squared_distance(query, ref.row(i), shared);
            dist[i] = shared == 0 ? std::numeric_limits<double>::infinity()
                                  : std::sqrt(sq * static_cast<double>(d) / static_cast<double>(shared));
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

        for (std::size_t j = 0; j < d; ++j) {
            if (!is_missing(query[j])) {
                continue;
            }
            double s = 0.0;
            std::size_t used = 0;
            for (std::size_t idx : order) {
                if (used == model.k || std::isinf(dist[idx])) {
                    break;
                }
                const double v = ref(idx, j);
                if (is_missing(v)) {
                    continue;  // next-nearest neighbour instead
                }
                s += v;
                ++used;
            }
            row[j] = used == 0 ? model.means[j] : s / static_cast<double>(used);
        }
    }
    return out;
}

ScalerModel fit_scaler(const TaggedRows& train) {
    require_training(train, "fit_scaler");
    const Matrix& x = train.rows;
    if (x.rows() < 2) {
        throw FitError("fit_scaler: need at least 2 rows, got " + std::to_string(x.rows()));
    }
    const std::size_t d = x.cols();
    const double n = static_cast<double>(x.rows());
    ScalerModel m;
    m.mean.assign(d, 0.0);
    m.sd.assign(d, 1.0);
    m.zero_variance.assign(d, false);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double v = x(i, j);
            if (is_missing(v)) {
                throw FitError("fit_scaler: rows must be complete (missing value in column " + std::to_string(j) +
                               ")");
            }
            s += v;
        }
        const double mean = s / n;
        double ss = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double c = x(i, j) - mean;
            ss += c * c;
        }
        const double sd = std::sqrt(ss / n);
        m.mean[j] = mean;
        // Variance indistinguishable from rounding noise counts as zero.
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            m.zero_variance[j] = true;
        } else {
            m.sd[j] = sd;
        }
    }
    return m;
}

Matrix apply_scaler(const ScalerModel& model, const Matrix& rows) {
    if (rows.cols() != model.size()) {
        throw ArgumentError("apply_scaler: expected " + std::to_string(model.size()) + " features, got " +
                            std::to_string(rows.cols()));
    }
    Matrix out = rows;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] = (r[j] - model.mean[j]) / model.sd[j];
        }
    }
    return out;
}

Matrix invert_scaler(const ScalerModel& model, const Matrix& rows) {
    if (rows.cols() != model.size()) {
        throw ArgumentError("invert_scaler: expected " + std::to_string(model.size()) + " features, got " +
                            std::to_string(rows.cols()));
    }
    Matrix out = rows;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] = r[j] * model.sd[j] + model.mean[j];
        }
    }
    return out;
}

}  // namespace serverlens
