#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "serverlens/common.hpp"
#include "serverlens/hyperparams.hpp"
#include "serverlens/learners.hpp"

namespace serverlens {

enum class ParamKind { ContinuousUniform, IntegerUniform, LogUniform, Categorical };

std::string_view to_string(ParamKind kind) noexcept;

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::ContinuousUniform;
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::string> options;  // categorical only

    static ParamSpec continuous(std::string name, double lo, double hi);
    static ParamSpec integer(std::string name, std::int64_t lo, std::int64_t hi);
    static ParamSpec log_uniform(std::string name, double lo, double hi);
    static ParamSpec categorical(std::string name, std::vector<std::string> options);

    // Throws ArgumentError when the bounds or options are unusable.
    void validate() const;
    // Number of encoded coordinates: one, or one per option.
    std::size_t encoded_width() const noexcept;
    bool contains(const ParamValue& value) const;
};

struct SearchSpace {
    LearnerKind learner = LearnerKind::Gbt;
    std::vector<ParamSpec> params;

    std::size_t encoded_width() const noexcept;
    const ParamSpec* find(std::string_view name) const noexcept;
};

SearchSpace search_space(LearnerKind learner);

// Tab-separated listing of every learner's space, one row per dimension.
// Header: learner, hyperparameter, distribution, low, high, options.
std::string search_space_table();

std::vector<HyperParams> sample_hyperparams(const SearchSpace& space, std::size_t n, std::uint64_t seed);

// Unit-cube coordinates; categorical dimensions become one-hot blocks.
std::vector<double> encode(const SearchSpace& space, const HyperParams& hp);
// Integers round half up, categories take the first maximal coordinate,
// everything is clamped into range.
HyperParams decode(const SearchSpace& space, std::span<const double> coords);

// Minimisation form. sd must be non-negative.
double expected_improvement(double mean, double sd, double best);

struct Trial {
    std::size_t index = 0;
    HyperParams x;
    double y = 0.0;       // objective, or the penalty when failed
    bool failed = false;
    std::string error;    // failure reason
    double seconds = 0.0;
};

class TrialHistory {
public:
    void add(Trial trial);
    const std::vector<Trial>& trials() const noexcept { return trials_; }
    std::size_t size() const noexcept { return trials_.size(); }

    bool any_success() const noexcept;
    // Index of the first successful trial attaining the minimum. Throws when none succeeded.
    std::size_t best_index() const;
    double best_value() const;
    // Best successful value after each trial; +inf until the first success.
    std::vector<double> best_so_far() const;

    // trial, objective, status, seconds, hyperparameters; tab separated with a header
    void write_log(std::ostream& out) const;

private:
    std::vector<Trial> trials_;
};

// Lower is better. Throwing or returning a non-finite value marks the trial failed.
using Objective = std::function<double(const HyperParams&)>;

struct BayesOptions {
    std::size_t budget = 50;
    std::size_t n_init = 10;
    std::size_t candidates = 1024;
    std::uint64_t seed = 0;
};

struct BayesResult {
    HyperParams best;
    TrialHistory history;
};

struct AllTrialsFailed : FitError {
    AllTrialsFailed(const std::string& what, TrialHistory h) : FitError(what), history(std::move(h)) {}
    TrialHistory history;
};

BayesResult bayes_optimize(const Objective& objective, const SearchSpace& space, const BayesOptions& options);

// Exact GP regression with an RBF kernel plus white noise, used as the BO
// surrogate. Exposed for testing.
class Surrogate {
public:
    // y is standardised internally; hyperparameters by marginal-likelihood ascent.
    Surrogate(const Matrix& x, std::span<const double> y, std::size_t iterations = 100);

    struct Prediction {
        double mean;
        double sd;
    };
    // In the original y units.
    Prediction predict(std::span<const double> x) const;

    double lengthscale() const noexcept { return lengthscale_; }
    double signal_variance() const noexcept { return signal_; }
    double noise_variance() const noexcept { return noise_; }

private:
    Matrix x_;
    std::vector<double> alpha_;
    std::vector<double> chol_;  // lower factor, row-major n*n
    double y_mean_ = 0.0;
    double y_scale_ = 1.0;
    double lengthscale_ = 0.3;
    double signal_ = 1.0;
    double noise_ = 1e-2;
};

}  // namespace serverlens
