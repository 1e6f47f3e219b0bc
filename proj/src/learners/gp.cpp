#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "serverlens/learners.hpp"
#include "serverlens/simd.hpp"
#include "internal.hpp"

namespace serverlens {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

const double kSqrt3 = std::sqrt(3.0);
const double kSqrt5 = std::sqrt(5.0);

}  // namespace

std::string_view to_string(KernelKind kind) noexcept {
    switch (kind) {
        case KernelKind::Rbf: return "rbf";
        case KernelKind::Matern12: return "matern12";
        case KernelKind::Matern32: return "matern32";
        case KernelKind::Matern52: return "matern52";
    }
    return "rbf";
}

KernelKind parse_kernel(std::string_view name) {
    for (auto k : {KernelKind::Rbf, KernelKind::Matern12, KernelKind::Matern32, KernelKind::Matern52}) {
        if (to_string(k) == name) return k;
    }
    throw ArgumentError("unknown kernel '" + std::string(name) + "'");
}

double KernelSpec::operator()(double r) const noexcept {
    const double s = r / lengthscale;
    switch (kind) {
        case KernelKind::Rbf: return signal_variance * std::exp(-0.5 * s * s);
        case KernelKind::Matern12: return signal_variance * std::exp(-s);
        case KernelKind::Matern32: return signal_variance * (1.0 + kSqrt3 * s) * std::exp(-kSqrt3 * s);
        case KernelKind::Matern52:
            return signal_variance * (1.0 + kSqrt5 * s + 5.0 * s * s / 3.0) * std::exp(-kSqrt5 * s);
    }
    return 0.0;
}

double KernelSpec::log_lengthscale_derivative(double r) const noexcept {
    const double s = r / lengthscale;
    switch (kind) {
        case KernelKind::Rbf: return signal_variance * s * s * std::exp(-0.5 * s * s);
        case KernelKind::Matern12: return signal_variance * s * std::exp(-s);
        case KernelKind::Matern32: return signal_variance * 3.0 * s * s * std::exp(-kSqrt3 * s);
        case KernelKind::Matern52:
            return signal_variance * (5.0 / 3.0) * s * s * (1.0 + kSqrt5 * s) * std::exp(-kSqrt5 * s);
    }
    return 0.0;
}

namespace {

Mat cross_kernel(const Matrix& a, const Matrix& b, const KernelSpec& k, Mat* dlog_ell = nullptr) {
    Mat out(a.rows(), b.rows());
    if (dlog_ell != nullptr) dlog_ell->resize(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double r = std::sqrt(std::max(0.0, simd::squared_distance(a.row(i), b.row(j))));
            out(i, j) = k(r);
            if (dlog_ell != nullptr) (*dlog_ell)(i, j) = k.log_lengthscale_derivative(r);
        }
    }
    return out;
}

// Cholesky of K, retrying with jitter 1e-8*sigma^2 escalated x10 up to 1e-2*sigma^2.
Eigen::LLT<Mat> factor_with_jitter(Mat k, double signal_variance) {
    Eigen::LLT<Mat> llt(k);
    if (llt.info() == Eigen::Success) return llt;
    for (double rel = 1e-8; rel <= 1e-2 * 1.0000001; rel *= 10.0) {
        Mat kj = k;
        kj.diagonal().array() += rel * signal_variance;
        llt.compute(kj);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw FitError("GP: inducing Gram matrix not positive definite even with jitter 1e-2*sigma^2");
}

Vec to_vec(std::span<const double> y) {
    Vec v(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) v(static_cast<Eigen::Index>(i)) = y[i];
    return v;
}

// Ut = L^-1 K_mn, B = noise I + Ut Ut^T.
struct SorFactors {
    Eigen::LLT<Mat> kmm;
    Mat ut;
    Eigen::LLT<Mat> b;
};

SorFactors sor_factors(const Mat& kmm, const Mat& knm, double noise, double signal_variance) {
    SorFactors f{factor_with_jitter(kmm, signal_variance), Mat(), Eigen::LLT<Mat>()};
    f.ut = f.kmm.matrixL().solve(knm.transpose());
    Mat b = f.ut * f.ut.transpose();
    b.diagonal().array() += noise;
    f.b.compute(b);
    if (f.b.info() != Eigen::Success) {
        throw FitError("GP: inducing-point system not positive definite");
    }
    return f;
}

}  // namespace

GpLikelihood gp_log_likelihood(const Matrix& x, std::span<const double> y, const Matrix& inducing,
                               const KernelSpec& kernel) {
    const auto n = static_cast<Eigen::Index>(x.rows());
    const auto m = static_cast<Eigen::Index>(inducing.rows());
    const double sn = kernel.noise_variance;
    Mat dkmm;
    Mat dknm;
    const Mat kmm = cross_kernel(inducing, inducing, kernel, &dkmm);
    const Mat knm = cross_kernel(x, inducing, kernel, &dknm);
    const SorFactors f = sor_factors(kmm, knm, sn, kernel.signal_variance);
    const Vec yv = to_vec(y);

    const Vec c = f.ut * yv;
    const Vec binv_c = f.b.solve(c);
    const double yqy = (yv.squaredNorm() - c.dot(binv_c)) / sn;
    const Mat lb = f.b.matrixL();
    const double logdet_b = 2.0 * lb.diagonal().array().log().sum();
    const double logdet_q = static_cast<double>(n - m) * std::log(sn) + logdet_b;
    const double nn = static_cast<double>(n);

    GpLikelihood out;
    out.value = (-0.5 * yqy - 0.5 * logdet_q - 0.5 * nn * std::log(2.0 * std::numbers::pi)) / nn;

    const Vec alpha = (yv - f.ut.transpose() * binv_c) / sn;
    const Mat binv = f.b.solve(Mat::Identity(m, m));
    const double tr_qinv = (nn - static_cast<double>(m) + sn * binv.trace()) / sn;

    // d/d log lengthscale through K_nm and K_mm.
    const Mat w = f.kmm.matrixU().solve(f.ut);
    const Mat w_qinv = (w - (w * f.ut.transpose()) * binv * f.ut) / sn;
    const Vec w_alpha = w * alpha;
    const Mat p = w_alpha * alpha.transpose() - w_qinv;
    const double t1 = (p.array() * dknm.transpose().array()).sum();
    const double t2 = ((p * w.transpose()).array() * dkmm.array()).sum();
    out.gradient[0] = 0.5 * (2.0 * t1 - t2) / nn;

    const Vec ut_alpha = f.ut * alpha;
    out.gradient[1] = 0.5 * (ut_alpha.squaredNorm() - (nn - sn * tr_qinv)) / nn;
    out.gradient[2] = sn * 0.5 * (alpha.squaredNorm() - tr_qinv) / nn;
    return out;
}

Matrix kmeanspp_seed(const Matrix& x, std::size_t m, std::uint64_t seed) {
    if (x.rows() == 0 || m == 0) {
        throw ArgumentError("kmeanspp_seed: need at least one row and one centre");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, x.rows() - 1);
    std::vector<std::size_t> chosen{first(rng)};
    std::vector<double> d2(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) d2[i] = simd::squared_distance(x.row(i), x.row(chosen[0]));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (chosen.size() < m) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        if (!(total > 0.0)) break;  // every row coincides with a centre
        const double target = unit(rng) * total;
        double acc = 0.0;
        std::size_t pick = x.rows() - 1;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            acc += d2[i];
            if (acc > target && d2[i] > 0.0) {
                pick = i;
                break;
            }
        }
        while (d2[pick] <= 0.0 && pick > 0) --pick;
        chosen.push_back(pick);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            d2[i] = std::min(d2[i], simd::squared_distance(x.row(i), x.row(pick)));
        }
    }
    return x.select_rows(chosen);
}

namespace {

std::vector<std::size_t> seeded_subset(std::size_t n, std::size_t keep, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (keep >= n) return idx;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
}

double median_pairwise_distance(const Matrix& z) {
    std::vector<double> d;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = i + 1; j < z.rows(); ++j) d.push_back(std::sqrt(simd::squared_distance(z.row(i), z.row(j))));
    }
    if (d.empty()) return 1.0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid > 0.0 ? *mid : 1.0;
}

}  // namespace

GpModel fit_gp(const FitData& data, const GpParams& params, const FitOptions& options,
               std::vector<Diagnostic>* diagnostics) {
    if (data.x.rows() == 0) throw FitError("fit_gp: no training rows");
    if (data.x.rows() != data.y.size()) throw ArgumentError("fit_gp: row count and target length differ");
    for (double v : data.x.data()) {
        if (!std::isfinite(v)) throw ArgumentError("fit_gp: non-finite input");
    }
    for (double v : data.y) {
        if (!std::isfinite(v)) throw ArgumentError("fit_gp: non-finite target");
    }
    auto note = [&](std::string field, std::string message) {
        if (diagnostics != nullptr) diagnostics->push_back({0, std::move(field), std::move(message)});
    };

    Matrix x = data.x;
    std::vector<double> y(data.y.begin(), data.y.end());
    if (x.rows() > options.gp_max_rows) {
        const auto idx = seeded_subset(x.rows(), options.gp_max_rows, derive_seed(options.seed, "gp_rows"));
        x = x.select_rows(idx);
        std::vector<double> ys;
        for (auto i : idx) ys.push_back(y[i]);
        y = std::move(ys);
        note("rows", "GP trained on " + std::to_string(x.rows()) + " sampled rows");
    }
    const std::size_t n = x.rows();

    GpModel model;
    model.input_dim = x.cols();
    model.y_mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : y) ss += (v - model.y_mean) * (v - model.y_mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    model.y_scale = sd > 0.0 ? sd : 1.0;
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = (y[i] - model.y_mean) / model.y_scale;

    std::size_t m = params.inducing;
    if (m == 0) throw ArgumentError("fit_gp: need at least one inducing location");
    if (m > n) {
        note("n_inducing", "inducing locations reduced to the " + std::to_string(n) + " training rows");
        m = n;
    }
    model.inducing = kmeanspp_seed(x, m, derive_seed(options.seed, "gp_inducing"));
    if (model.inducing.rows() < m) {
        note("n_inducing", "only " + std::to_string(model.inducing.rows()) + " distinct inducing locations");
    }

    KernelSpec k;
    k.kind = params.kernel;
    k.lengthscale = params.lengthscale > 0.0 ? params.lengthscale : median_pairwise_distance(model.inducing);
    k.signal_variance = params.signal_variance > 0.0 ? params.signal_variance : 1.0;
    k.noise_variance = params.noise_variance > 0.0 ? params.noise_variance : 0.1;

    if (params.optimise && options.gp_iterations > 0) {
        Matrix xh = x;
        std::vector<double> yh = ys;
        if (n > options.gp_hyper_rows) {
            const auto idx = seeded_subset(n, options.gp_hyper_rows, derive_seed(options.seed, "gp_hyper_rows"));
            xh = x.select_rows(idx);
            yh.clear();
            for (auto i : idx) yh.push_back(ys[i]);
        }
        // Gradient ascent in log space inside a box; the best iterate is kept.
        const std::array<double, 3> lo = {std::log(1e-3), std::log(1e-4), std::log(1e-6)};
        const std::array<double, 3> hi = {std::log(1e3), std::log(1e4), std::log(10.0)};
        std::array<double, 3> theta = {std::log(k.lengthscale), std::log(k.signal_variance), std::log(k.noise_variance)};
        for (std::size_t t = 0; t < 3; ++t) theta[t] = std::clamp(theta[t], lo[t], hi[t]);
        KernelSpec best = k;
        double best_value = -std::numeric_limits<double>::infinity();
        for (std::size_t it = 0; it < options.gp_iterations; ++it) {
            KernelSpec cur = k;
            cur.lengthscale = std::exp(theta[0]);
            cur.signal_variance = std::exp(theta[1]);
            cur.noise_variance = std::exp(theta[2]);
            GpLikelihood ll;
            try {
                ll = gp_log_likelihood(xh, yh, model.inducing, cur);
            } catch (const FitError& e) {
                note("kernel", std::string("hyperparameter search stopped: ") + e.what());
                break;
            }
            if (!std::isfinite(ll.value)) break;
            if (ll.value > best_value) {
                best_value = ll.value;
                best = cur;
            }
            bool finite = true;
            for (std::size_t t = 0; t < 3; ++t) {
                if (!std::isfinite(ll.gradient[t])) finite = false;
            }
            if (!finite) break;
            for (std::size_t t = 0; t < 3; ++t) {
                theta[t] = std::clamp(theta[t] + params.learning_rate * ll.gradient[t], lo[t], hi[t]);
            }
        }
        if (std::isfinite(best_value)) k = best;
    }
    model.kernel = k;

    const Mat kmm = cross_kernel(model.inducing, model.inducing, k);
    const Mat knm = cross_kernel(x, model.inducing, k);
    const SorFactors f = sor_factors(kmm, knm, k.noise_variance, k.signal_variance);
    const Vec wv = f.kmm.matrixU().solve(f.b.solve(f.ut * to_vec(ys)));
    model.weights.assign(wv.data(), wv.data() + wv.size());
    for (double v : model.weights) {
        if (!std::isfinite(v)) throw FitError("fit_gp: non-finite predictive weights");
    }
    return model;
}

}  // namespace serverlens

namespace serverlens::detail {

std::vector<double> predict_gp(const GpModel& model, const Matrix& rows) {
    std::vector<double> out(rows.rows());
    std::vector<double> kz(model.inducing.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t j = 0; j < kz.size(); ++j) {
            kz[j] = model.kernel(std::sqrt(std::max(0.0, simd::squared_distance(rows.row(i), model.inducing.row(j)))));
        }
        out[i] = model.y_mean + model.y_scale * simd::dot(kz, model.weights);
    }
    return out;
}

}  // namespace serverlens::detail
