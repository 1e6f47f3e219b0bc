#include "serverlens/hpo.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

namespace serverlens {

std::string_view to_string(ParamKind kind) noexcept {
    switch (kind) {
        case ParamKind::ContinuousUniform: return "continuous_uniform";
        case ParamKind::IntegerUniform: return "integer_uniform";
        case ParamKind::LogUniform: return "log_uniform";
        case ParamKind::Categorical: return "categorical";
    }
    return "continuous_uniform";
}

ParamSpec ParamSpec::continuous(std::string name, double lo, double hi) {
    return {std::move(name), ParamKind::ContinuousUniform, lo, hi, {}};
}

ParamSpec ParamSpec::integer(std::string name, std::int64_t lo, std::int64_t hi) {
    return {std::move(name), ParamKind::IntegerUniform, static_cast<double>(lo), static_cast<double>(hi), {}};
}

ParamSpec ParamSpec::log_uniform(std::string name, double lo, double hi) {
    return {std::move(name), ParamKind::LogUniform, lo, hi, {}};
}

ParamSpec ParamSpec::categorical(std::string name, std::vector<std::string> options) {
    return {std::move(name), ParamKind::Categorical, 0.0, 0.0, std::move(options)};
}

void ParamSpec::validate() const {
    if (kind == ParamKind::Categorical) {
        if (options.empty()) throw ArgumentError("parameter '" + name + "' has no options");
        return;
    }
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
        throw ArgumentError("parameter '" + name + "' needs finite bounds with lo <= hi");
    }
    if (kind == ParamKind::LogUniform && lo <= 0.0) {
        throw ArgumentError("parameter '" + name + "' is log-uniform and needs lo > 0");
    }
    if (kind == ParamKind::IntegerUniform && (lo != std::floor(lo) || hi != std::floor(hi))) {
        throw ArgumentError("parameter '" + name + "' has non-integral bounds");
    }
}

std::size_t ParamSpec::encoded_width() const noexcept {
    return kind == ParamKind::Categorical ? options.size() : 1;
}

bool ParamSpec::contains(const ParamValue& value) const {
    switch (kind) {
        case ParamKind::Categorical: {
            const auto* s = std::get_if<std::string>(&value);
            return s && std::find(options.begin(), options.end(), *s) != options.end();
        }
        case ParamKind::IntegerUniform: {
            const auto* i = std::get_if<std::int64_t>(&value);
            return i && static_cast<double>(*i) >= lo && static_cast<double>(*i) <= hi;
        }
        default: {
            double v;
            if (const auto* d = std::get_if<double>(&value)) {
                v = *d;
            } else if (const auto* i = std::get_if<std::int64_t>(&value)) {
                v = static_cast<double>(*i);
            } else {
                return false;
            }
            return v >= lo && v <= hi;
        }
    }
}

std::size_t SearchSpace::encoded_width() const noexcept {
    std::size_t w = 0;
    for (const auto& p : params) w += p.encoded_width();
    return w;
}

const ParamSpec* SearchSpace::find(std::string_view name) const noexcept {
    for (const auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

SearchSpace search_space(LearnerKind learner) {
    using P = ParamSpec;
    SearchSpace s{learner, {}};
    switch (learner) {
        case LearnerKind::ElasticNet:
            s.params = {P::continuous("l1_ratio", 0.0, 1.0)};
            break;
        case LearnerKind::ElasticNetPoly:
            s.params = {P::continuous("l1_ratio", 0.0, 1.0), P::integer("degree", 1, 4)};
            break;
        case LearnerKind::Gp:
            s.params = {P::integer("n_inducing", 30, 256),
                        P::categorical("kernel", {"rbf", "matern12", "matern32", "matern52"}),
                        P::log_uniform("learning_rate", 1e-5, 1.0)};
            break;
        case LearnerKind::Gbt:
            s.params = {P::continuous("colsample_bytree", 0.0, 1.0), P::continuous("subsample", 0.0, 1.0),
                        P::integer("max_depth", 1, 10),                P::integer("n_rounds", 1000, 20000),
                        P::continuous("reg_alpha", 0.0, 1e3),          P::continuous("reg_lambda", 0.0, 1e3),
                        P::log_uniform("learning_rate", 1e-5, 1.0)};
            break;
        case LearnerKind::Rf:
            s.params = {P::continuous("colsample_bytree", 0.0, 1.0),  P::continuous("colsample_bylevel", 0.0, 1.0),
                        P::continuous("colsample_bynode", 0.0, 1.0),  P::integer("max_depth", 1, 10),
                        P::integer("n_trees", 1000, 2000),             P::continuous("reg_alpha", 0.0, 1e3),
                        P::continuous("reg_lambda", 0.0, 1e3),         P::log_uniform("learning_rate", 1e-5, 1.0)};
            break;
        case LearnerKind::Ffn:
            s.params = {P::integer("hidden_layers", 0, 5), P::integer("hidden_nodes", 10, 200),
                        P::continuous("dropout", 0.05, 0.3), P::log_uniform("learning_rate", 1e-5, 1.0)};
            break;
    }
    return s;
}

std::string search_space_table() {
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    std::ostringstream out;
    out << "learner\thyperparameter\tdistribution\tlow\thigh\toptions\n";
    for (auto learner : kAllLearners) {
        for (const auto& p : search_space(learner).params) {
            out << to_string(learner) << '\t' << p.name << '\t' << to_string(p.kind) << '\t';
            if (p.kind == ParamKind::Categorical) {
                out << "-\t-\t";
                for (std::size_t i = 0; i < p.options.size(); ++i) out << (i ? "," : "") << p.options[i];
            } else {
                out << num(p.lo) << '\t' << num(p.hi) << "\t-";
            }
            out << '\n';
        }
    }
    return out.str();
}

namespace {

ParamValue draw(const ParamSpec& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    switch (p.kind) {
        case ParamKind::ContinuousUniform:
            return p.lo == p.hi ? p.lo : std::min(p.hi, p.lo + (p.hi - p.lo) * unit(rng));
        case ParamKind::IntegerUniform: {
            std::uniform_int_distribution<std::int64_t> d(static_cast<std::int64_t>(p.lo),
                                                          static_cast<std::int64_t>(p.hi));
            return d(rng);
        }
        case ParamKind::LogUniform: {
            if (p.lo == p.hi) return p.lo;
            const double l = std::log(p.lo);
            return std::clamp(std::exp(l + (std::log(p.hi) - l) * unit(rng)), p.lo, p.hi);
        }
        case ParamKind::Categorical: {
            std::uniform_int_distribution<std::size_t> d(0, p.options.size() - 1);
            return p.options[d(rng)];
        }
    }
    return 0.0;
}

double as_real(const ParamValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    return static_cast<double>(std::get<std::int64_t>(v));
}

}  // namespace

std::vector<HyperParams> sample_hyperparams(const SearchSpace& space, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ArgumentError("sample_hyperparams: n must be at least 1");
    for (const auto& p : space.params) p.validate();
    std::mt19937_64 rng(seed);
    std::vector<HyperParams> out(n);
    for (auto& hp : out)
        for (const auto& p : space.params) hp.set(p.name, draw(p, rng));
    return out;
}

std::vector<double> encode(const SearchSpace& space, const HyperParams& hp) {
    for (const auto& [name, value] : hp.values()) {
        if (!space.find(name)) throw ArgumentError("encode: '" + name + "' is not in the search space");
    }
    std::vector<double> out;
    out.reserve(space.encoded_width());
    for (const auto& p : space.params) {
        if (!hp.contains(p.name)) throw ArgumentError("encode: '" + p.name + "' is missing");
        const auto& v = hp.values().find(p.name)->second;
        if (!p.contains(v)) throw ArgumentError("encode: '" + p.name + "' is out of range");
        switch (p.kind) {
            case ParamKind::Categorical: {
                const auto& s = std::get<std::string>(v);
                for (const auto& o : p.options) out.push_back(o == s ? 1.0 : 0.0);
                break;
            }
            case ParamKind::LogUniform: {
                const double span = std::log(p.hi) - std::log(p.lo);
                out.push_back(span > 0.0 ? (std::log(as_real(v)) - std::log(p.lo)) / span : 0.0);
                break;
            }
            default:
                out.push_back(p.hi > p.lo ? (as_real(v) - p.lo) / (p.hi - p.lo) : 0.0);
        }
    }
    return out;
}

HyperParams decode(const SearchSpace& space, std::span<const double> coords) {
    if (coords.size() != space.encoded_width()) {
        throw ArgumentError("decode: expected " + std::to_string(space.encoded_width()) + " coordinates, got " +
                            std::to_string(coords.size()));
    }
    HyperParams hp;
    std::size_t k = 0;
    for (const auto& p : space.params) {
        if (p.kind == ParamKind::Categorical) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < p.options.size(); ++i)
                if (coords[k + i] > coords[k + best]) best = i;
            hp.set(p.name, p.options[best]);
            k += p.options.size();
            continue;
        }
        const double u = std::clamp(coords[k++], 0.0, 1.0);
        switch (p.kind) {
            case ParamKind::IntegerUniform:
                hp.set(p.name, static_cast<std::int64_t>(std::clamp(std::floor(p.lo + u * (p.hi - p.lo) + 0.5), p.lo, p.hi)));
                break;
            case ParamKind::LogUniform: {
                const double l = std::log(p.lo);
                hp.set(p.name, std::clamp(std::exp(l + u * (std::log(p.hi) - l)), p.lo, p.hi));
                break;
            }
            default:
                hp.set(p.name, std::clamp(p.lo + u * (p.hi - p.lo), p.lo, p.hi));
        }
    }
    return hp;
}

double expected_improvement(double mean, double sd, double best) {
    if (sd < 0.0 || std::isnan(sd)) throw ArgumentError("expected_improvement: sd must be non-negative");
    const double gap = best - mean;
    if (sd == 0.0) return std::max(0.0, gap);
    const double z = gap / sd;
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return std::max(0.0, gap * cdf + sd * pdf);
}

// ---------------------------------------------------------------------------

void TrialHistory::add(Trial trial) {
    trial.index = trials_.size();
    trials_.push_back(std::move(trial));
}

bool TrialHistory::any_success() const noexcept {
    return std::any_of(trials_.begin(), trials_.end(), [](const Trial& t) { return !t.failed; });
}

std::size_t TrialHistory::best_index() const {
    std::size_t best = trials_.size();
    for (std::size_t i = 0; i < trials_.size(); ++i) {
        if (trials_[i].failed) continue;
        if (best == trials_.size() || trials_[i].y < trials_[best].y) best = i;
    }
    if (best == trials_.size()) throw FitError("no successful trial");
    return best;
}

double TrialHistory::best_value() const { return trials_[best_index()].y; }

std::vector<double> TrialHistory::best_so_far() const {
    std::vector<double> out;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : trials_) {
        if (!t.failed) best = std::min(best, t.y);
        out.push_back(best);
    }
    return out;
}

void TrialHistory::write_log(std::ostream& out) const {
    out << "trial\tobjective\tstatus\tseconds\thyperparameters\n";
    for (const auto& t : trials_) {
        char y[32];
        char s[32];
        std::snprintf(y, sizeof y, "%.17g", t.y);
        std::snprintf(s, sizeof s, "%.3f", t.seconds);
        out << t.index << '\t' << y << '\t' << (t.failed ? "failed" : "ok") << '\t' << s << '\t'
            << t.x.to_string();
        if (t.failed && !t.error.empty()) {
            std::string reason = t.error;
            std::replace_if(reason.begin(), reason.end(), [](char c) { return c == '\t' || c == '\n'; }, ' ');
            out << '\t' << reason;
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SurrogateFit {
    double value;
    double grad[3];
    MatrixXd chol;
    VectorXd alpha;
};

MatrixXd squared_distances(const Matrix& x) {
    const std::size_t n = x.rows();
    MatrixXd d2(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        d2(i, i) = 0.0;
        for (std::size_t j = 0; j < i; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const double t = x(i, c) - x(j, c);
                s += t * t;
            }
            d2(i, j) = d2(j, i) = s;
        }
    }
    return d2;
}

// Per-row log marginal likelihood and its gradient in (log l, log s2, log noise).
bool surrogate_likelihood(const MatrixXd& d2, const VectorXd& y, double ell, double s2, double noise,
                          SurrogateFit& out) {
    const Eigen::Index n = y.size();
    const MatrixXd kf = (s2 * (-0.5 / (ell * ell) * d2.array()).exp()).matrix();
    for (double jitter = 0.0; jitter <= 1e-2 * s2; jitter = jitter == 0.0 ? 1e-8 * s2 : jitter * 10.0) {
        MatrixXd k = kf;
        k.diagonal().array() += noise + jitter;
        Eigen::LLT<MatrixXd> llt(k);
        if (llt.info() != Eigen::Success) continue;
        out.chol = llt.matrixL();
        out.alpha = llt.solve(y);
        const MatrixXd kinv = llt.solve(MatrixXd::Identity(n, n));
        const MatrixXd w = out.alpha * out.alpha.transpose() - kinv;
        const double logdet = 2.0 * out.chol.diagonal().array().log().sum();
        const double dn = static_cast<double>(n);
        out.value = (-0.5 * y.dot(out.alpha) - 0.5 * logdet - 0.5 * dn * std::log(2.0 * std::numbers::pi)) / dn;
        const MatrixXd dl = (kf.array() * d2.array() / (ell * ell)).matrix();
        out.grad[0] = 0.5 * (w.array() * dl.array()).sum() / dn;
        out.grad[1] = 0.5 * (w.array() * kf.array()).sum() / dn;
        out.grad[2] = 0.5 * noise * w.trace() / dn;
        return std::isfinite(out.value);
    }
    return false;
}

}  // namespace

Surrogate::Surrogate(const Matrix& x, std::span<const double> y, std::size_t iterations) : x_(x) {
    const std::size_t n = x.rows();
    if (n == 0 || y.size() != n) throw ArgumentError("surrogate: need matching, non-empty x and y");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    y_mean_ = mean;
    y_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
    VectorXd ys(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) ys(static_cast<Eigen::Index>(i)) = (y[i] - y_mean_) / y_scale_;

    const MatrixXd d2 = squared_distances(x);
    const double lo[3] = {std::log(1e-2), std::log(1e-2), std::log(1e-6)};
    const double hi[3] = {std::log(1e1), std::log(1e2), std::log(1.0)};
    double theta[3] = {std::log(0.3 * std::sqrt(static_cast<double>(std::max<std::size_t>(1, x.cols())))), 0.0,
                       std::log(1e-2)};
    for (int k = 0; k < 3; ++k) theta[k] = std::clamp(theta[k], lo[k], hi[k]);

    SurrogateFit fit;
    SurrogateFit best_fit;
    double best_theta[3] = {theta[0], theta[1], theta[2]};
    double best_value = -std::numeric_limits<double>::infinity();
    const double step = 0.2;
    for (std::size_t it = 0; it <= iterations; ++it) {
        if (!surrogate_likelihood(d2, ys, std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2]), fit)) break;
        if (fit.value > best_value) {
            best_value = fit.value;
            best_fit = fit;
            std::copy(theta, theta + 3, best_theta);
        }
        if (it == iterations) break;
        for (int k = 0; k < 3; ++k) theta[k] = std::clamp(theta[k] + step * fit.grad[k], lo[k], hi[k]);
    }
    if (!std::isfinite(best_value)) throw FitError("surrogate: kernel matrix could not be factorised");

    lengthscale_ = std::exp(best_theta[0]);
    signal_ = std::exp(best_theta[1]);
    noise_ = std::exp(best_theta[2]);
    alpha_.assign(best_fit.alpha.data(), best_fit.alpha.data() + n);
    chol_.resize(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            chol_[i * n + j] = best_fit.chol(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
}

Surrogate::Prediction Surrogate::predict(std::span<const double> x) const {
    const std::size_t n = x_.rows();
    if (x.size() != x_.cols()) throw SchemaError("surrogate: query width mismatch");
    std::vector<double> k(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) {
            const double t = x[c] - x_(i, c);
            s += t * t;
        }
        k[i] = signal_ * std::exp(-0.5 * s / (lengthscale_ * lengthscale_));
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += k[i] * alpha_[i];
    // v = L^-1 k by forward substitution, then var = s2 - |v|^2
    for (std::size_t i = 0; i < n; ++i) {
        double s = k[i];
        for (std::size_t j = 0; j < i; ++j) s -= chol_[i * n + j] * k[j];
        k[i] = s / chol_[i * n + i];
    }
    double var = signal_;
    for (double v : k) var -= v * v;
    return {y_mean_ + y_scale_ * mean, y_scale_ * std::sqrt(std::max(0.0, var))};
}

// ---------------------------------------------------------------------------

BayesResult bayes_optimize(const Objective& objective, const SearchSpace& space, const BayesOptions& options) {
    if (options.n_init < 2 || options.budget < options.n_init) {
        throw ArgumentError("bayes_optimize: need budget >= n_init >= 2");
    }
    if (options.candidates == 0) throw ArgumentError("bayes_optimize: candidates must be positive");
    for (const auto& p : space.params) p.validate();

    TrialHistory history;
    auto evaluate = [&](HyperParams hp) {
        Trial t;
        t.x = std::move(hp);
        const auto start = std::chrono::steady_clock::now();
        try {
            t.y = objective(t.x);
            if (!std::isfinite(t.y)) {
                t.failed = true;
                t.error = "non-finite objective";
            }
        } catch (const std::exception& e) {
            t.failed = true;
            t.error = e.what();
        }
        t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (t.failed) {
            double worst = -std::numeric_limits<double>::infinity();
            for (const auto& prev : history.trials())
                if (!prev.failed) worst = std::max(worst, prev.y);
            t.y = std::isfinite(worst) ? worst + 1.0 : std::numeric_limits<double>::quiet_NaN();
        }
        history.add(std::move(t));
    };

    const auto initial = sample_hyperparams(space, options.n_init, derive_seed(options.seed, "bo_init"));
    for (const auto& hp : initial) evaluate(hp);

    for (std::size_t step = options.n_init; step < options.budget; ++step) {
        const auto candidates =
            sample_hyperparams(space, options.candidates, derive_seed(options.seed, "bo_candidates", step));
        if (!history.any_success()) {
            evaluate(candidates.front());
            continue;
        }
        double worst = -std::numeric_limits<double>::infinity();
        for (const auto& t : history.trials())
            if (!t.failed) worst = std::max(worst, t.y);
        Matrix xs(0, space.encoded_width());
        std::vector<double> ys;
        for (const auto& t : history.trials()) {
            xs.append_row(encode(space, t.x));
            ys.push_back(t.failed ? worst + 1.0 : t.y);
        }
        const Surrogate surrogate(xs, ys);
        const double best = history.best_value();
        std::size_t pick = 0;
        double pick_ei = -1.0;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const auto enc = encode(space, candidates[c]);
            const auto pred = surrogate.predict(enc);
            const double ei = expected_improvement(pred.mean, pred.sd, best);
            if (ei > pick_ei) {
                pick_ei = ei;
                pick = c;
            }
        }
        evaluate(candidates[pick]);
    }

    if (!history.any_success()) {
        const std::string reason = history.trials().empty() ? std::string() : history.trials().back().error;
        throw AllTrialsFailed("all " + std::to_string(history.size()) + " trials failed; last error: " + reason,
                              std::move(history));
    }
    BayesResult result;
    result.best = history.trials()[history.best_index()].x;
    result.history = std::move(history);
    return result;
}

}  // namespace serverlens
