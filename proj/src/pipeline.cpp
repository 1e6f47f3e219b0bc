#include "serverlens/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <map>

namespace serverlens {

std::string_view to_string(Profile p) noexcept { return p == Profile::Desk ? "desk" : "full"; }

Profile parse_profile(std::string_view text) {
    if (text == "desk") return Profile::Desk;
    if (text == "full") return Profile::Full;
    throw ConfigError("unknown profile '" + std::string(text) + "' (expected desk or full)");
}

std::string_view to_string(SplitScheme s) noexcept {
    return s == SplitScheme::RandomByServer ? "random" : "time_series";
}

SplitScheme parse_scheme(std::string_view text) {
    if (text == "random") return SplitScheme::RandomByServer;
    if (text == "time_series" || text == "time") return SplitScheme::TimeSeries;
    throw ConfigError("unknown split scheme '" + std::string(text) + "' (expected random or time_series)");
}

PipelineConfig PipelineConfig::desk() { return {}; }

PipelineConfig PipelineConfig::full() {
    PipelineConfig c;
    c.profile = Profile::Full;
    c.budget = 50;
    c.max_rounds = kUncapped;
    c.max_trees = kUncapped;
    c.gp_max_rows = kUncapped;
    c.gp_hyper_rows = kUncapped;
    c.ffn_max_epochs = 500;
    c.ffn_max_rows = kUncapped;
    c.linear_max_cells = kUncapped;
    return c;
}

void PipelineConfig::validate() const {
    if (learners.empty()) throw ConfigError("no learners enabled");
    for (std::size_t i = 0; i < learners.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (learners[i] == learners[j])
                throw ConfigError("learner " + std::string(to_string(learners[i])) + " listed twice");
    if (n_init < 2 || budget < n_init) throw ConfigError("need budget >= n_init >= 2");
    if (candidates == 0) throw ConfigError("candidates must be at least 1");
    if (imputer_k == 0) throw ConfigError("imputer k must be at least 1");
    const std::pair<const char*, std::size_t> caps[] = {
        {"max_rounds", max_rounds},         {"max_trees", max_trees},       {"gp_max_rows", gp_max_rows},
        {"gp_hyper_rows", gp_hyper_rows},   {"ffn_max_epochs", ffn_max_epochs}, {"ffn_max_rows", ffn_max_rows},
        {"linear_max_cells", linear_max_cells}};
    for (const auto& [name, v] : caps)
        if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
    if (scheme == SplitScheme::TimeSeries && horizon < 1) throw ConfigError("horizon must be at least 1");
    if (threads == 0) throw ConfigError("threads must be at least 1");
}

FitOptions PipelineConfig::fit_options(LearnerKind learner) const {
    FitOptions o;
    o.seed = derive_seed(seed, "fit", static_cast<std::uint64_t>(learner));
    o.max_rounds = max_rounds;
    o.max_trees = max_trees;
    o.gp_max_rows = gp_max_rows;
    o.gp_hyper_rows = gp_hyper_rows;
    o.ffn_max_epochs = ffn_max_epochs;
    o.ffn_max_rows = ffn_max_rows;
    o.linear_max_cells = linear_max_cells;
    o.threads = threads;
    return o;
}

namespace {

nlohmann::json cap_json(std::size_t v) {
    return v == kUncapped ? nlohmann::json(nullptr) : nlohmann::json(v);
}

std::size_t cap_from(const nlohmann::json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).is_null() ? kUncapped : j.at(key).get<std::size_t>();
}

}  // namespace

nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json learners = nlohmann::json::array();
    for (auto l : c.learners) learners.push_back(to_string(l));
    return {{"target", to_string(c.target)},
            {"profile", to_string(c.profile)},
            {"scheme", to_string(c.scheme)},
            {"baseline_year", c.baseline_year},
            {"horizon", c.horizon},
            {"imputer_k", c.imputer_k},
            {"budget", c.budget},
            {"n_init", c.n_init},
            {"candidates", c.candidates},
            {"learners", learners},
            {"max_rounds", cap_json(c.max_rounds)},
            {"max_trees", cap_json(c.max_trees)},
            {"gp_max_rows", cap_json(c.gp_max_rows)},
            {"gp_hyper_rows", cap_json(c.gp_hyper_rows)},
            {"ffn_max_epochs", cap_json(c.ffn_max_epochs)},
            {"ffn_max_rows", cap_json(c.ffn_max_rows)},
            {"linear_max_cells", cap_json(c.linear_max_cells)},
            {"importance_repeats", c.importance_repeats},
            {"select_on_validation", c.select_on_validation},
            {"threads", c.threads},
            {"seed", c.seed}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    try {
        PipelineConfig c = j.contains("profile") && j.at("profile").get<std::string>() == "full" ? PipelineConfig::full()
                                                                                                : PipelineConfig::desk();
        static const std::vector<std::string> known = {
            "target",     "profile",     "scheme",     "baseline_year",  "horizon",        "imputer_k",
            "budget",     "n_init",      "candidates", "learners",       "max_rounds",     "max_trees",
            "gp_max_rows", "gp_hyper_rows", "ffn_max_epochs", "ffn_max_rows", "linear_max_cells",
            "importance_repeats", "select_on_validation", "threads", "seed"};
        for (const auto& [key, value] : j.items())
            if (std::find(known.begin(), known.end(), key) == known.end())
                throw ConfigError("unknown configuration key '" + key + "'");
        if (j.contains("target")) c.target = parse_target(j.at("target").get<std::string>());
        if (j.contains("scheme")) c.scheme = parse_scheme(j.at("scheme").get<std::string>());
        c.baseline_year = j.value("baseline_year", c.baseline_year);
        c.horizon = j.value("horizon", c.horizon);
        c.imputer_k = j.value("imputer_k", c.imputer_k);
        c.budget = j.value("budget", c.budget);
        c.n_init = j.value("n_init", c.n_init);
        c.candidates = j.value("candidates", c.candidates);
        if (j.contains("learners")) {
            c.learners.clear();
            for (const auto& l : j.at("learners")) c.learners.push_back(parse_learner(l.get<std::string>()));
        }
        c.max_rounds = cap_from(j, "max_rounds", c.max_rounds);
        c.max_trees = cap_from(j, "max_trees", c.max_trees);
        c.gp_max_rows = cap_from(j, "gp_max_rows", c.gp_max_rows);
        c.gp_hyper_rows = cap_from(j, "gp_hyper_rows", c.gp_hyper_rows);
        c.ffn_max_epochs = cap_from(j, "ffn_max_epochs", c.ffn_max_epochs);
        c.ffn_max_rows = cap_from(j, "ffn_max_rows", c.ffn_max_rows);
        c.linear_max_cells = cap_from(j, "linear_max_cells", c.linear_max_cells);
        c.importance_repeats = j.value("importance_repeats", c.importance_repeats);
        c.select_on_validation = j.value("select_on_validation", c.select_on_validation);
        c.threads = j.value("threads", c.threads);
        c.seed = j.value("seed", c.seed);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

// ---------------------------------------------------------------------------

const LeaderboardEntry& Leaderboard::entry(LearnerKind learner) const {
    for (const auto& e : entries)
        if (e.learner == learner) return e;
    throw ArgumentError("leaderboard has no entry for " + std::string(to_string(learner)));
}

LearnerKind select_best(const Leaderboard& board, bool on_validation) {
    const LeaderboardEntry* best = nullptr;
    auto order = [](LearnerKind k) {
        return static_cast<std::size_t>(std::find(kAllLearners.begin(), kAllLearners.end(), k) - kAllLearners.begin());
    };
    bool use_test = !on_validation;
    for (const auto& e : board.entries)
        if (!e.failed && !e.test) use_test = false;
    for (const auto& e : board.entries) {
        if (e.failed) continue;
        if (!best) {
            best = &e;
            continue;
        }
        const auto& a = use_test ? *e.test : e.validation;
        const auto& b = use_test ? *best->test : best->validation;
        if (a.maape != b.maape) {
            if (a.maape < b.maape) best = &e;
        } else if (a.rmse != b.rmse) {
            if (a.rmse < b.rmse) best = &e;
        } else if (order(e.learner) < order(best->learner)) {
            best = &e;
        }
    }
    if (!best) throw FitError("no learner trained successfully");
    return best->learner;
}

std::vector<MetricsRow> leaderboard_rows(const Leaderboard& board) {
    std::vector<MetricsRow> rows;
    const std::string target(to_string(board.target));
    for (const auto& e : board.entries) {
        if (e.failed) continue;
        const std::string learner(to_string(e.learner));
        rows.push_back({target, learner, "train", e.train});
        rows.push_back({target, learner, "validation", e.validation});
        if (e.test) rows.push_back({target, learner, "test", *e.test});
    }
    return rows;
}

// ---------------------------------------------------------------------------

void apply_structural_zero(TargetKind target, const Matrix& raw_rows, std::vector<double>& predictions) {
    if (target != TargetKind::PerfToPower || raw_rows.cols() == 0) return;
    const std::size_t l = raw_rows.cols() - 1;
    for (std::size_t i = 0; i < raw_rows.rows(); ++i)
        if (raw_rows(i, l) == 0.0) predictions[i] = 0.0;
}

namespace {

// KNN imputation, except that rows with no configuration feature at all take
// the training means for those features instead of neighbours matched on load.
Matrix impute_rows(const ImputerModel& imputer, const FeatureSchema& schema, const Matrix& raw, PredictionFlags* flags,
                   std::vector<Diagnostic>* diagnostics) {
    Matrix rows = raw;
    const std::size_t d = schema.size();
    const std::size_t config_cols = schema.has_load() ? d - 1 : d;
    const auto stop = static_cast<std::ptrdiff_t>(config_cols);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        auto r = rows.row(i);
        if (std::none_of(r.begin(), r.end(), is_missing)) continue;
        if (flags) flags->imputed_rows.push_back(i);
        if (std::all_of(r.begin(), r.begin() + stop, is_missing)) {
            if (flags) ++flags->all_missing_rows;
            if (diagnostics) diagnostics->push_back({i + 1, "", "all features missing; imputed from training means"});
            std::copy(imputer.means.begin(), imputer.means.begin() + stop, r.begin());
        }
    }
    return apply_imputer(imputer, rows, diagnostics);
}

}  // namespace

std::vector<double> bundle_predict(const ModelBundle& bundle, const Matrix& raw_rows, PredictionFlags* flags) {
    const std::size_t d = bundle.schema.size();
    if (raw_rows.cols() != d) {
        throw SchemaError("bundle expects " + std::to_string(d) + " features, got " + std::to_string(raw_rows.cols()));
    }
    if (flags && !flags->imputed_rows.empty()) *flags = {};
    const Matrix imputed = impute_rows(bundle.imputer, bundle.schema, raw_rows, flags, nullptr);
    auto out = predict(bundle.model, apply_scaler(bundle.scaler, imputed));
    apply_structural_zero(bundle.target, imputed, out);
    return out;
}

// ---------------------------------------------------------------------------

PreparedData prepare_data(const DesignMatrix& matrix, const SplitIndices& split, std::size_t imputer_k) {
    PreparedData d;
    d.split = split;
    const Partition parts[3] = {Partition::Train, Partition::Validation, Partition::Test};
    for (int p = 0; p < 3; ++p) {
        const auto& idx = split.rows(parts[p]);
        d.raw[p] = matrix.rows.select_rows(idx);
        d.y[p].reserve(idx.size());
        for (auto i : idx) d.y[p].push_back(matrix.y[i]);
    }
    if (d.raw[0].empty()) throw ArgumentError("training partition is empty");
    d.imputer = fit_imputer({Partition::Train, d.raw[0]}, std::min(imputer_k, d.raw[0].rows()), matrix.schema.names);
    Matrix imputed[3];
    for (int p = 0; p < 3; ++p) {
        std::vector<Diagnostic> diags;
        imputed[p] = impute_rows(d.imputer, matrix.schema, d.raw[p], nullptr, &diags);
        for (auto& g : diags) {
            g.field = std::string(to_string(parts[p]));
            d.diagnostics.push_back(std::move(g));
        }
    }
    d.scaler = fit_scaler({Partition::Train, imputed[0]});
    for (int p = 0; p < 3; ++p) d.x[p] = apply_scaler(d.scaler, imputed[p]);
    for (std::size_t c = 0; c < d.scaler.size(); ++c)
        if (d.scaler.zero_variance[c])
            d.diagnostics.push_back({0, matrix.schema.names[c], "zero variance in training rows; left unscaled"});
    return d;
}

namespace {

MetricsReport score(TargetKind target, const TrainedModel& model, const PreparedData& d, int p) {
    auto pred = predict(model, d.x[p]);
    // structural zero keys off the imputed load column, which equals the raw one
    apply_structural_zero(target, d.raw[p], pred);
    return evaluate_metrics(d.y[p], pred);
}

TunedLearner tune_learner(LearnerKind kind, TargetKind target, const PreparedData& d, const PipelineConfig& config) {
    TunedLearner out;
    out.entry.learner = kind;
    const auto start = std::chrono::steady_clock::now();
    const FitOptions fit = config.fit_options(kind);
    const FitData data{d.x[0], d.y[0], d.x[1], d.y[1]};

    double best = std::numeric_limits<double>::infinity();
    auto objective = [&](const HyperParams& hp) {
        auto model = fit_learner(kind, data, hp, fit);
        auto pred = predict(model, d.x[1]);
        apply_structural_zero(target, d.raw[1], pred);
        const double v = rmse(d.y[1], pred);
        if (v < best) {
            best = v;
            out.model = std::move(model);
        }
        return v;
    };
    BayesOptions bo;
    bo.budget = config.budget;
    bo.n_init = config.n_init;
    bo.candidates = config.candidates;
    bo.seed = derive_seed(config.seed, "bo", static_cast<std::uint64_t>(kind));
    try {
        auto result = bayes_optimize(objective, search_space(kind), bo);
        out.entry.hyperparams = result.best;
        out.history = std::move(result.history);
    } catch (const AllTrialsFailed& e) {
        out.entry.failed = true;
        out.entry.error = e.what();
        out.history = e.history;
        out.model.reset();
    }
    out.entry.trials = out.history.size();
    for (const auto& t : out.history.trials()) out.entry.failed_trials += t.failed ? 1 : 0;
    if (out.model) {
        out.entry.train = score(target, *out.model, d, 0);
        out.entry.validation = score(target, *out.model, d, 1);
        if (!d.y[2].empty()) out.entry.test = score(target, *out.model, d, 2);
    }
    out.entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

std::vector<TunedLearner> tune_all(const PreparedData& d, TargetKind target, const PipelineConfig& config) {
    if (d.y[1].empty()) throw ArgumentError("validation partition is empty");
    std::vector<TunedLearner> tuned;
    for (auto kind : config.learners) tuned.push_back(tune_learner(kind, target, d, config));
    if (std::all_of(tuned.begin(), tuned.end(), [](const TunedLearner& t) { return t.entry.failed; })) {
        std::string why;
        for (const auto& t : tuned) why += "\n  " + std::string(to_string(t.entry.learner)) + ": " + t.entry.error;
        throw FitError("every learner failed" + why);
    }
    return tuned;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<FeatureRange> observed_ranges(const FeatureSchema& schema, const Matrix& raw) {
    std::vector<FeatureRange> out;
    for (std::size_t c = 0; c < schema.size(); ++c) {
        FeatureRange r{schema.names[c], std::numeric_limits<double>::infinity(),
                       -std::numeric_limits<double>::infinity(), 0};
        for (std::size_t i = 0; i < raw.rows(); ++i) {
            const double v = raw(i, c);
            if (is_missing(v)) continue;
            r.min = std::min(r.min, v);
            r.max = std::max(r.max, v);
            ++r.observed;
        }
        if (r.observed == 0) r.min = r.max = kMissing;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

SplitIndices make_split(const DesignMatrix& matrix, const PipelineConfig& config) {
    return config.scheme == SplitScheme::RandomByServer ? random_server_split(matrix, derive_seed(config.seed, "split"))
                                                        : time_series_split(matrix, config.baseline_year, config.horizon);
}

ImportanceReport bundle_importance(const ModelBundle& bundle, const Matrix& raw_rows, std::span<const double> y,
                                   const ImportanceOptions& options) {
    return permutation_importance([&bundle](const Matrix& raw) { return bundle_predict(bundle, raw); }, raw_rows, y,
                                  bundle.schema.names, options);
}

TrainingResult run_training(const DesignMatrix& matrix, const PipelineConfig& config) {
    config.validate();
    if (matrix.size() == 0) throw ArgumentError("no usable rows in the dataset");
    if (matrix.target != config.target) throw ConfigError("design matrix target differs from the configuration");

    TrainingResult result;
    result.diagnostics = matrix.diagnostics;
    result.split = make_split(matrix, config);
    PreparedData d = prepare_data(matrix, result.split, config.imputer_k);
    result.diagnostics.insert(result.diagnostics.end(), d.diagnostics.begin(), d.diagnostics.end());

    auto tuned = tune_all(d, config.target, config);
    result.leaderboard.target = config.target;
    for (auto& t : tuned) {
        result.leaderboard.entries.push_back(t.entry);
        result.histories.push_back(std::move(t.history));
    }
    const LearnerKind winner = select_best(result.leaderboard, config.select_on_validation);
    auto& chosen = *std::find_if(tuned.begin(), tuned.end(), [&](const TunedLearner& t) { return t.entry.learner == winner; });

    ModelBundle& b = result.bundle;
    b.target = config.target;
    b.schema = matrix.schema;
    b.imputer = d.imputer;
    b.scaler = d.scaler;
    b.learner = winner;
    b.hyperparams = chosen.entry.hyperparams;
    b.model = *chosen.model;
    b.leaderboard = result.leaderboard;
    b.ranges = observed_ranges(matrix.schema, d.raw[0]);
    b.provenance.data_fingerprint = fingerprint(matrix);
    b.provenance.seed = config.seed;
    b.provenance.created = utc_now();
    b.provenance.profile = std::string(to_string(config.profile));
    b.provenance.train_servers = partition_servers(matrix, result.split, Partition::Train).size();
    b.provenance.config = to_json(config);

    if (config.importance_repeats > 0) {
        const int p = d.y[2].empty() ? 1 : 2;
        ImportanceOptions io;
        io.repeats = config.importance_repeats;
        io.seed = derive_seed(config.seed, "importance");
        io.threads = config.threads;
        io.partition = p == 2 ? "test" : "validation";
        try {
            b.importance = bundle_importance(b, d.raw[p], d.y[p], io);
        } catch (const ArgumentError& e) {
            result.diagnostics.push_back({0, "importance", std::string("skipped: ") + e.what()});
        }
    }
    return result;
}

TrainingResult run_training(const std::vector<ServerRecord>& records, const PipelineConfig& config) {
    config.validate();
    return run_training(build_design_matrix(records, config.target), config);
}

// ---------------------------------------------------------------------------

std::vector<std::pair<int, double>> ProspectiveGrid::horizon_means() const {
    std::map<int, std::pair<double, int>> acc;
    for (const auto& c : cells) {
        if (c.empty || !c.skipped.empty()) continue;
        auto& [sum, n] = acc[c.horizon];
        sum += c.test.maape;
        ++n;
    }
    std::vector<std::pair<int, double>> out;
    for (const auto& [h, v] : acc) out.emplace_back(h, v.first / v.second);
    return out;
}

ProspectiveGrid prospective_experiment(const DesignMatrix& matrix, const PipelineConfig& config,
                                       const ProspectiveOptions& options) {
    config.validate();
    if (options.first_baseline > options.last_baseline || options.max_horizon < 1) {
        throw ArgumentError("prospective: empty baseline or horizon range");
    }
    ProspectiveGrid grid;
    for (int base = options.first_baseline; base <= options.last_baseline; ++base) {
        std::vector<SplitIndices> splits;
        bool any_test = false;
        for (int h = 1; h <= options.max_horizon; ++h) {
            splits.push_back(time_series_split(matrix, base, h));
            any_test = any_test || !splits.back().test_empty();
        }
        std::vector<GridCell> row;
        for (int h = 1; h <= options.max_horizon; ++h) {
            GridCell c;
            c.baseline_year = base;
            c.horizon = h;
            c.empty = splits[static_cast<std::size_t>(h - 1)].test_empty();
            c.test_servers = partition_servers(matrix, splits[static_cast<std::size_t>(h - 1)], Partition::Test).size();
            row.push_back(c);
        }
        if (any_test) {
            PipelineConfig cell_config = config;
            cell_config.scheme = SplitScheme::TimeSeries;
            cell_config.baseline_year = base;
            cell_config.seed = derive_seed(config.seed, "prospective", static_cast<std::uint64_t>(base));
            try {
                // train and validation depend only on the baseline
                const PreparedData d = prepare_data(matrix, splits.front(), config.imputer_k);
                const auto tuned = tune_all(d, matrix.target, cell_config);
                for (auto& c : row) {
                    if (c.empty) continue;
                    const auto& split = splits[static_cast<std::size_t>(c.horizon - 1)];
                    Matrix raw_test = matrix.rows.select_rows(split.test);
                    std::vector<double> y_test;
                    for (auto i : split.test) y_test.push_back(matrix.y[i]);
                    const Matrix x_test = apply_scaler(d.scaler, impute_rows(d.imputer, matrix.schema, raw_test, nullptr, nullptr));
                    Leaderboard board;
                    board.target = matrix.target;
                    for (const auto& t : tuned) {
                        LeaderboardEntry e = t.entry;
                        if (t.model) {
                            auto pred = predict(*t.model, x_test);
                            apply_structural_zero(matrix.target, raw_test, pred);
                            e.test = evaluate_metrics(y_test, pred);
                        }
                        board.entries.push_back(std::move(e));
                    }
                    const auto winner = select_best(board, config.select_on_validation);
                    c.winner = std::string(to_string(winner));
                    c.test = *board.entry(winner).test;
                }
            } catch (const Error& e) {
                for (auto& c : row)
                    if (!c.empty) c.skipped = e.what();
            }
        }
        grid.cells.insert(grid.cells.end(), row.begin(), row.end());
    }
    if (std::none_of(grid.cells.begin(), grid.cells.end(),
                     [](const GridCell& c) { return !c.empty && c.skipped.empty(); })) {
        throw ArgumentError("prospective: no baseline/horizon cell could be evaluated");
    }
    return grid;
}

void write_grid_csv(std::ostream& out, const ProspectiveGrid& grid) {
    out << "baseline_year,horizon,status,test_servers,winner,rmse,r2,mape,mape_excluded,maape\n";
    for (const auto& c : grid.cells) {
        out << c.baseline_year << ',' << c.horizon << ',';
        if (c.empty) {
            out << "empty_test," << c.test_servers << ",,,,,,\n";
        } else if (!c.skipped.empty()) {
            out << "skipped," << c.test_servers << ",,,,,,\n";
        } else {
            out << "ok," << c.test_servers << ',' << c.winner << ',' << format_number(c.test.rmse) << ','
                << format_number(c.test.r2) << ',' << format_number(c.test.mape) << ',' << c.test.mape_excluded << ','
                << format_number(c.test.maape) << '\n';
        }
    }
}

void write_horizon_means_csv(std::ostream& out, const ProspectiveGrid& grid) {
    out << "horizon,cells,mean_maape\n";
    for (const auto& [h, mean] : grid.horizon_means()) {
        const auto n = std::count_if(grid.cells.begin(), grid.cells.end(), [h = h](const GridCell& c) {
            return c.horizon == h && !c.empty && c.skipped.empty();
        });
        out << h << ',' << n << ',' << format_number(mean) << '\n';
    }
}

}  // namespace serverlens
