#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "serverlens/learners.hpp"
#include "serverlens/simd.hpp"

namespace serverlens {

std::size_t polynomial_width(std::size_t features, int degree) {
    if (degree < 1 || degree > 4) {
        throw ArgumentError("polynomial degree must lie in [1, 4], got " + std::to_string(degree));
    }
    // C(d + k, k) - 1, built up incrementally to stay in integers.
    std::size_t total = 0;
    std::size_t count = 1;
    for (int k = 1; k <= degree; ++k) {
        count = count * (features + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
        total += count;
    }
    return total;
}

Matrix expand_polynomial(const Matrix& rows, int degree) {
    const std::size_t d = rows.cols();
    const std::size_t width = polynomial_width(d, degree);
    for (double v : rows.data()) {
        if (!std::isfinite(v)) {
            throw ArgumentError("expand_polynomial requires complete, finite rows");
        }
    }
    if (degree == 1) {
        return rows;
    }
    Matrix out(rows.rows(), width);
    // Each output column remembers the highest input index in its monomial;
    // degree-k columns extend degree-(k-1) columns by x_j with j >= that index.
    std::vector<std::size_t> parent;
    std::vector<std::size_t> last;
    parent.reserve(width);
    last.reserve(width);
    for (std::size_t j = 0; j < d; ++j) {
        parent.push_back(width);
        last.push_back(j);
    }
    std::size_t prev_begin = 0;
    std::size_t prev_end = d;
    for (int k = 2; k <= degree; ++k) {
        for (std::size_t c = prev_begin; c < prev_end; ++c) {
            for (std::size_t j = last[c]; j < d; ++j) {
                parent.push_back(c);
                last.push_back(j);
            }
        }
        prev_begin = prev_end;
        prev_end = parent.size();
    }

    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const auto in = rows.row(i);
        auto o = out.row(i);
        for (std::size_t c = 0; c < width; ++c) {
            o[c] = parent[c] == width ? in[last[c]] : o[parent[c]] * in[last[c]];
        }
    }
    return out;
}

namespace {

// Column-major centred copy of the design for coordinate descent.
struct CenteredDesign {
    std::size_t n = 0;
    std::size_t p = 0;
    std::vector<double> cols;   // p columns of length n
    std::vector<double> means;  // column means
    std::vector<double> scale;  // |x_j|^2 / n after centring
    std::vector<double> y;      // centred
    double y_mean = 0.0;

    std::span<const double> col(std::size_t j) const { return {cols.data() + j * n, n}; }
};

CenteredDesign center(const Matrix& x, std::span<const double> y) {
    if (x.rows() != y.size()) {
        throw ArgumentError("elastic net: row count and target length differ");
    }
    if (x.rows() == 0) {
        throw FitError("elastic net: no training rows");
    }
    CenteredDesign c;
    c.n = x.rows();
    c.p = x.cols();
    c.cols.resize(c.n * c.p);
    c.means.assign(c.p, 0.0);
    c.scale.assign(c.p, 0.0);
    const double n = static_cast<double>(c.n);
    for (std::size_t j = 0; j < c.p; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < c.n; ++i) {
            const double v = x(i, j);
            if (!std::isfinite(v)) {
                throw ArgumentError("elastic net: non-finite input at row " + std::to_string(i));
            }
            s += v;
        }
        c.means[j] = s / n;
        double* col = c.cols.data() + j * c.n;
        for (std::size_t i = 0; i < c.n; ++i) col[i] = x(i, j) - c.means[j];
        c.scale[j] = simd::dot(c.col(j), c.col(j)) / n;
    }
    double ys = 0.0;
    for (double v : y) {
        if (!std::isfinite(v)) {
            throw ArgumentError("elastic net: non-finite target");
        }
        ys += v;
    }
    c.y_mean = ys / n;
    c.y.resize(c.n);
    for (std::size_t i = 0; i < c.n; ++i) c.y[i] = y[i] - c.y_mean;
    return c;
}

double soft_threshold(double z, double t) noexcept {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

struct Convergence {
    double tolerance = 1e-14;  // relative to mean(y_centred^2)
    std::size_t max_sweeps = 100000;
};

// Pipeline fits trade the last digits for bounded run time.
constexpr Convergence kPipelineConvergence{1e-9, 2000};

ElasticNetFit solve_centered(const CenteredDesign& c, double l1_ratio, double lambda, const ElasticNetFit* warm,
                             Convergence conv = {}) {
    const double n = static_cast<double>(c.n);
    ElasticNetFit fit;
    fit.beta.assign(c.p, 0.0);
    if (warm != nullptr && warm->beta.size() == c.p) fit.beta = warm->beta;

    std::vector<double> r = c.y;
    for (std::size_t j = 0; j < c.p; ++j) {
        if (fit.beta[j] != 0.0) simd::axpy(-fit.beta[j], c.col(j), r);
    }
    const double l1 = lambda * l1_ratio;
    const double l2 = lambda * (1.0 - l1_ratio);
    const double yy = simd::dot(c.y, c.y) / n;
    const double tol = conv.tolerance * std::max(yy, 1e-300);

    // One coordinate pass over `coords`; returns the largest weighted change.
    auto sweep = [&](std::span<const std::size_t> coords) {
        double worst = 0.0;
        for (std::size_t j : coords) {
            const double v = c.scale[j];
            const double old = fit.beta[j];
            if (v <= 0.0) {
                fit.beta[j] = 0.0;
                continue;
            }
            const double z = simd::dot(c.col(j), r) / n + v * old;
            const double updated = soft_threshold(z, l1) / (v + l2);
            const double delta = updated - old;
            if (delta != 0.0) {
                simd::axpy(-delta, c.col(j), r);
                fit.beta[j] = updated;
                worst = std::max(worst, v * delta * delta);
            }
        }
        ++fit.sweeps;
        return worst;
    };

    std::vector<std::size_t> all(c.p);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> active;
    fit.converged = false;
    while (fit.sweeps < conv.max_sweeps) {
        if (sweep(all) < tol) {
            fit.converged = true;
            break;
        }
        active.clear();
        for (std::size_t j = 0; j < c.p; ++j) {
            if (fit.beta[j] != 0.0) active.push_back(j);
        }
        while (fit.sweeps < conv.max_sweeps && sweep(active) >= tol) {
        }
    }
    double icpt = c.y_mean;
    for (std::size_t j = 0; j < c.p; ++j) icpt -= fit.beta[j] * c.means[j];
    fit.intercept = icpt;
    return fit;
}

double lambda_max_centered(const CenteredDesign& c, double l1_ratio) {
    double m = 0.0;
    for (std::size_t j = 0; j < c.p; ++j) m = std::max(m, std::abs(simd::dot(c.col(j), c.y)));
    return m / (static_cast<double>(c.n) * std::max(l1_ratio, 1e-3));
}

std::vector<double> linear_predict(const Matrix& x, const std::vector<double>& beta, double intercept) {
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = intercept + simd::dot(x.row(i), beta);
    return out;
}

}  // namespace

ElasticNetFit elastic_net_solve(const Matrix& x, std::span<const double> y, double l1_ratio, double lambda,
                                const ElasticNetFit* warm_start) {
    if (!(l1_ratio >= 0.0 && l1_ratio <= 1.0)) {
        throw ArgumentError("elastic net mixing parameter must lie in [0, 1]");
    }
    if (!(lambda >= 0.0)) {
        throw ArgumentError("elastic net lambda must be non-negative");
    }
    return solve_centered(center(x, y), l1_ratio, lambda, warm_start);
}

double elastic_net_lambda_max(const Matrix& x, std::span<const double> y, double l1_ratio) {
    return lambda_max_centered(center(x, y), l1_ratio);
}

std::vector<double> elastic_net_lambda_grid(double lambda_max) {
    constexpr int kPoints = 20;
    std::vector<double> grid(kPoints);
    for (int k = 0; k < kPoints; ++k) {
        grid[k] = lambda_max * std::pow(1e-5, static_cast<double>(k) / (kPoints - 1));
    }
    return grid;
}

LinearModel fit_elastic_net(const FitData& data, double l1_ratio, int degree, const FitOptions& options,
                            std::vector<Diagnostic>* diagnostics) {
    if (!(l1_ratio >= 0.0 && l1_ratio <= 1.0)) {
        throw ArgumentError("elastic net mixing parameter must lie in [0, 1]");
    }
    const std::size_t width = polynomial_width(data.x.cols(), degree);

    // Very wide expansions are fitted on a seeded row subsample.
    Matrix train = data.x;
    std::vector<double> y(data.y.begin(), data.y.end());
    if (options.linear_max_cells != kUncapped && train.rows() * width > options.linear_max_cells) {
        const std::size_t keep = std::max<std::size_t>(2, options.linear_max_cells / width);
        if (keep < train.rows()) {
            std::vector<std::size_t> idx(train.rows());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::mt19937_64 rng(derive_seed(options.seed, "linear_rows"));
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(keep);
            std::sort(idx.begin(), idx.end());
            train = train.select_rows(idx);
            std::vector<double> ys;
            ys.reserve(keep);
            for (auto i : idx) ys.push_back(y[i]);
            y = std::move(ys);
            if (diagnostics != nullptr) {
                diagnostics->push_back({0, "degree", "elastic net fitted on " + std::to_string(keep) +
                                                         " sampled rows (expansion width " + std::to_string(width) +
                                                         ")"});
            }
        }
    }

    const Matrix xe = expand_polynomial(train, degree);
    const CenteredDesign c = center(xe, y);
    const Matrix ve = data.val_x.rows() > 0 ? expand_polynomial(data.val_x, degree) : Matrix(0, width);

    LinearModel model;
    model.input_dim = data.x.cols();
    model.degree = degree;
    model.l1_ratio = l1_ratio;

    const double lmax = lambda_max_centered(c, l1_ratio);
    if (!(lmax > 0.0)) {
        model.coefficients.assign(width, 0.0);
        model.intercept = c.y_mean;
        return model;
    }
    const auto grid = elastic_net_lambda_grid(lmax);
    double best_score = std::numeric_limits<double>::infinity();
    ElasticNetFit warm;
    bool have_warm = false;
    for (double lambda : grid) {
        ElasticNetFit fit = solve_centered(c, l1_ratio, lambda, have_warm ? &warm : nullptr, kPipelineConvergence);
        if (!fit.converged && diagnostics != nullptr) {
            diagnostics->push_back({0, "lambda", "coordinate descent hit the sweep limit"});
        }
        double score;
        if (ve.rows() > 0) {
            const auto pred = linear_predict(ve, fit.beta, fit.intercept);
            double ss = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - data.val_y[i]) * (pred[i] - data.val_y[i]);
            score = std::sqrt(ss / static_cast<double>(pred.size()));
        } else {
            score = lambda == grid.back() ? 0.0 : 1.0;  // no validation rows: least regularised
        }
        if (std::isfinite(score) && score < best_score) {
            best_score = score;
            model.coefficients = fit.beta;
            model.intercept = fit.intercept;
            model.lambda = lambda;
        }
        warm = std::move(fit);
        have_warm = true;
    }
    if (model.coefficients.empty()) {
        throw FitError("elastic net: no finite validation score on the lambda grid");
    }
    return model;
}

}  // namespace serverlens
