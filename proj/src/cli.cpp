#include "serverlens/cli.hpp"

#include <zlib.h>

#include <charconv>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "serverlens/pipeline.hpp"
#include "serverlens/service.hpp"

namespace serverlens {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ofstream open_output(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write " + path);
    return out;
}

json file_digest(const std::string& path) {
    const std::string bytes = read_file(path);
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return {{"path", path}, {"bytes", bytes.size()}, {"crc32", buf}};
}

// <dir>/<stem><suffix> next to an output file.
std::string sibling(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

json flags_json(const CLI::App& sub) {
    json j = json::object();
    for (const CLI::Option* o : sub.get_options()) {
        const std::string name = o->get_name();
        if (name == "--help") continue;
        if (o->count() > 0) {
            const auto& r = o->results();
            j[name] = r.size() == 1 ? json(r[0]) : json(r);
        } else {
            const auto d = o->get_default_str();
            j[name] = d.empty() ? json(nullptr) : json(d);
        }
    }
    return j;
}

json seeds_json(const PipelineConfig& c) {
    json learners = json::object();
    for (auto k : c.learners) {
        learners[std::string(to_string(k))] = {{"bo", derive_seed(c.seed, "bo", static_cast<std::uint64_t>(k))},
                                               {"fit", c.fit_options(k).seed}};
    }
    return {{"master", c.seed},
            {"split", derive_seed(c.seed, "split")},
            {"importance", derive_seed(c.seed, "importance")},
            {"learners", std::move(learners)}};
}

void write_manifest(const std::string& path, const json& manifest) {
    auto out = open_output(path);
    out << manifest.dump(2) << '\n';
}

DesignMatrix load_matrix(const std::string& data, const std::string& mapping_path, TargetKind target,
                         std::ostream& err) {
    const auto mapping = mapping_path.empty() ? ColumnMapping::defaults() : ColumnMapping::load(mapping_path);
    const auto ingest = load_records(data, mapping);
    if (!ingest.diagnostics.empty()) err << ingest.diagnostics.size() << " ingest diagnostics in " << data << '\n';
    auto matrix = build_design_matrix(ingest.records, target);
    if (matrix.multi_node_excluded) err << matrix.multi_node_excluded << " multi-node servers excluded\n";
    return matrix;
}

struct DataFlags {
    std::string data;
    std::string mapping;

    void add(CLI::App* sub) {
        sub->add_option("--data", data, "Results export or canonical CSV")->required();
        sub->add_option("--mapping", mapping, "Column mapping file (key = column)");
    }
};

struct TrainFlags {
    std::string target;
    std::string config;
    std::optional<std::string> profile;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k, budget, n_init, candidates, repeats;
    std::optional<unsigned> threads;
    std::optional<std::string> learners, scheme;
    std::optional<int> baseline, horizon;
    bool select_on_validation = false;

    void add(CLI::App* sub) {
        sub->add_option("--target", target, "power, throughput or perf")->required();
        sub->add_option("--config", config, "Pipeline configuration JSON");
        sub->add_option("--profile", profile, "desk or full");
        sub->add_option("--seed", seed, "Master seed");
        sub->add_option("--k", k, "Imputer neighbours");
        sub->add_option("--budget", budget, "Bayesian optimisation trials per learner");
        sub->add_option("--n-init", n_init, "Initial random trials");
        sub->add_option("--candidates", candidates, "Acquisition candidates per step");
        sub->add_option("--learners", learners, "Comma-separated learner list");
        sub->add_option("--scheme", scheme, "random or time_series");
        sub->add_option("--baseline", baseline, "Baseline year for the time split");
        sub->add_option("--horizon", horizon, "Horizon in years for the time split");
        sub->add_option("--threads", threads, "Worker threads");
        sub->add_option("--importance-repeats", repeats, "Permutation repeats, 0 to skip");
        sub->add_flag("--select-on-validation", select_on_validation, "Pick the winner on validation metrics");
    }

    PipelineConfig resolve() const {
        json j = config.empty() ? json::object() : json::parse(read_file(config), nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ConfigError("configuration file " + config + " is not a JSON object");
        if (profile) j["profile"] = *profile;
        j["target"] = target;
        if (seed) j["seed"] = *seed;
        if (k) j["imputer_k"] = *k;
        if (budget) j["budget"] = *budget;
        if (n_init) j["n_init"] = *n_init;
        if (candidates) j["candidates"] = *candidates;
        if (repeats) j["importance_repeats"] = *repeats;
        if (threads) j["threads"] = *threads;
        if (scheme) j["scheme"] = *scheme;
        if (baseline) j["baseline_year"] = *baseline;
        if (horizon) j["horizon"] = *horizon;
        if (select_on_validation) j["select_on_validation"] = true;
        if (learners) {
            json list = json::array();
            std::stringstream ss(*learners);
            for (std::string item; std::getline(ss, item, ',');)
                if (!item.empty()) list.push_back(item);
            j["learners"] = list;
        }
        auto c = pipeline_config_from_json(j);
        c.validate();
        return c;
    }
};

struct BundleTrio {
    std::string power, throughput, perf;

    void add(CLI::App* sub) {
        sub->add_option("--power", power, "Power bundle")->required();
        sub->add_option("--throughput", throughput, "Max-throughput bundle")->required();
        sub->add_option("--perf", perf, "Perf-to-power bundle")->required();
    }

    PredictionService load() const { return {load_bundle(power), load_bundle(throughput), load_bundle(perf)}; }

    json digests() const { return json::array({file_digest(power), file_digest(throughput), file_digest(perf)}); }
};

json base_manifest(const std::string& command, const std::vector<std::string>& args, const CLI::App& sub) {
    return {{"tool", "serverlens"}, {"command", command}, {"argv", args}, {"flags", flags_json(sub)}};
}

Matrix partition_rows(const DesignMatrix& m, std::span<const std::size_t> idx, std::vector<double>& y) {
    y.clear();
    for (auto i : idx) y.push_back(m.y[i]);
    return m.rows.select_rows(idx);
}

// Row indices of a named partition of the bundle's own split, or all rows.
std::vector<std::size_t> bundle_partition(const ModelBundle& bundle, const DesignMatrix& matrix,
                                          const std::string& partition, std::ostream& err) {
    if (partition == "all") {
        std::vector<std::size_t> idx(matrix.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return idx;
    }
    Partition p;
    if (partition == "train") p = Partition::Train;
    else if (partition == "validation") p = Partition::Validation;
    else if (partition == "test") p = Partition::Test;
    else throw ArgumentError("unknown partition '" + partition + "' (expected train, validation, test or all)");
    if (fingerprint(matrix) != bundle.provenance.data_fingerprint)
        err << "warning: data differs from the bundle's training data; partitions may not match\n";
    const auto config = pipeline_config_from_json(bundle.provenance.config);
    auto idx = make_split(matrix, config).rows(p);
    if (idx.empty()) throw ArgumentError("the " + partition + " partition is empty");
    return idx;
}

}  // namespace

int resolve_port(int flag_port, const char* env_value) {
    if (!env_value || !*env_value) return flag_port;
    int port = 0;
    const std::string_view s(env_value);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), port);
    if (ec != std::errc() || ptr != s.data() + s.size() || port < 0 || port > 65535)
        throw ConfigError("SERVERLENS_PORT is not a valid port: " + std::string(s));
    return port;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Server power and performance modelling", "serverlens"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    std::string manifest_path;
    const auto manifest_for = [&](const std::string& fallback) { return manifest_path.empty() ? fallback : manifest_path; };

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Parse an export into canonical records");
    DataFlags ingest_data;
    ingest_data.add(ingest);
    std::string ingest_out, ingest_diag;
    ingest->add_option("--out", ingest_out, "Canonical CSV")->required();
    ingest->add_option("--diagnostics", ingest_diag, "Write diagnostics here");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
    SyntheticSpec spec;
    std::string synth_out, synth_format = "canonical";
    std::optional<int> shift_year;
    synth->add_option("--n", spec.n_servers, "Servers");
    synth->add_option("--seed", spec.seed, "Seed");
    synth->add_option("--noise", spec.noise_sd, "Multiplicative noise sd");
    synth->add_option("--missing", spec.missing_rate, "Missing-cell rate");
    synth->add_option("--multi-node", spec.multi_node_rate, "Multi-node record rate");
    synth->add_option("--first-year", spec.first_year, "First availability year");
    synth->add_option("--last-year", spec.last_year, "Last availability year");
    synth->add_option("--shift-year", shift_year, "Throughput shift from this year on");
    synth->add_option("--shift-factor", spec.shift_factor, "Throughput shift factor");
    synth->add_option("--format", synth_format, "canonical or export")->check(CLI::IsMember({"canonical", "export"}));
    synth->add_option("--out", synth_out, "Output CSV")->required();

    // split
    auto* split = app.add_subcommand("split", "Write the server partition");
    DataFlags split_data;
    split_data.add(split);
    TrainFlags split_flags;
    split_flags.add(split);
    std::string split_out;
    split->add_option("--out", split_out, "Split file")->required();

    // train
    auto* train = app.add_subcommand("train", "Tune all learners and write the winning bundle");
    DataFlags train_data;
    train_data.add(train);
    TrainFlags train_flags;
    train_flags.add(train);
    std::string train_out, train_board, train_importance, train_trials;
    train->add_option("--out", train_out, "Bundle file")->required();
    train->add_option("--leaderboard", train_board, "Leaderboard CSV (default next to the bundle)");
    train->add_option("--importance", train_importance, "Importance CSV");
    train->add_option("--trials-dir", train_trials, "Directory for per-learner trial logs");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score a bundle on data");
    DataFlags eval_data;
    eval_data.add(evaluate);
    std::string eval_bundle, eval_partition = "test", eval_out;
    evaluate->add_option("--bundle", eval_bundle, "Bundle file")->required();
    evaluate->add_option("--partition", eval_partition, "train, validation, test or all");
    evaluate->add_option("--out", eval_out, "Also write the metrics CSV here");

    // importance
    auto* importance = app.add_subcommand("importance", "Permutation importance of a bundle");
    DataFlags imp_data;
    imp_data.add(importance);
    std::string imp_bundle, imp_partition = "test", imp_out;
    std::size_t imp_repeats = 10;
    unsigned imp_threads = 1;
    std::optional<std::uint64_t> imp_seed;
    importance->add_option("--bundle", imp_bundle, "Bundle file")->required();
    importance->add_option("--partition", imp_partition, "train, validation, test or all");
    importance->add_option("--repeats", imp_repeats, "Permutations per feature");
    importance->add_option("--seed", imp_seed, "Master seed (default: the bundle's)");
    importance->add_option("--threads", imp_threads, "Worker threads");
    importance->add_option("--out", imp_out, "Importance CSV")->required();

    // prospective
    auto* prospective = app.add_subcommand("prospective", "Baseline x horizon time-split grid");
    DataFlags pro_data;
    pro_data.add(prospective);
    TrainFlags pro_flags;
    pro_flags.add(prospective);
    ProspectiveOptions pro_opts;
    std::string pro_out, pro_means;
    prospective->add_option("--first-baseline", pro_opts.first_baseline, "First baseline year");
    prospective->add_option("--last-baseline", pro_opts.last_baseline, "Last baseline year");
    prospective->add_option("--max-horizon", pro_opts.max_horizon, "Largest horizon in years");
    prospective->add_option("--out", pro_out, "Grid CSV")->required();
    prospective->add_option("--means", pro_means, "Per-horizon means CSV (default next to the grid)");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Predict curves for one configuration");
    BundleTrio predict_bundles;
    predict_bundles.add(predict_cmd);
    std::string request_path, predict_out;
    std::vector<std::string> sets;
    predict_cmd->add_option("--request", request_path, "Request JSON file");
    predict_cmd->add_option("--set", sets, "field=value, repeatable");
    predict_cmd->add_option("--out", predict_out, "Write the response here instead of stdout");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP prediction service");
    BundleTrio serve_bundles;
    serve_bundles.add(serve);
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (SERVERLENS_PORT overrides)");

    for (auto* sub : app.get_subcommands({}))
        sub->add_option("--manifest", manifest_path, "Run manifest path");

    std::vector<const char*> argv{"serverlens"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUser;
    }

    try {
        if (ingest->parsed()) {
            const auto mapping =
                ingest_data.mapping.empty() ? ColumnMapping::defaults() : ColumnMapping::load(ingest_data.mapping);
            const auto result = load_records(ingest_data.data, mapping);
            {
                auto f = open_output(ingest_out);
                write_canonical_csv(f, result.records);
            }
            if (!ingest_diag.empty()) {
                auto f = open_output(ingest_diag);
                for (const auto& d : result.diagnostics) f << d << '\n';
            }
            out << result.records.size() << " records, " << result.diagnostics.size() << " diagnostics\n";
            auto m = base_manifest("ingest", args, *ingest);
            m["inputs"] = json::array({file_digest(ingest_data.data)});
            m["outputs"] = json::array({ingest_out});
            write_manifest(manifest_for(sibling(ingest_out, ".manifest.json")), m);
        } else if (synth->parsed()) {
            spec.shift_year = shift_year;
            const auto corpus = generate_synthetic(spec);
            {
                auto f = open_output(synth_out);
                if (synth_format == "canonical") write_canonical_csv(f, corpus.records);
                else write_results_csv(f, corpus.records, ColumnMapping::defaults());
            }
            out << corpus.records.size() << " synthetic servers\n";
            auto m = base_manifest("synth", args, *synth);
            m["seeds"] = {{"master", spec.seed}};
            m["outputs"] = json::array({synth_out});
            write_manifest(manifest_for(sibling(synth_out, ".manifest.json")), m);
        } else if (split->parsed()) {
            const auto config = split_flags.resolve();
            const auto matrix = load_matrix(split_data.data, split_data.mapping, config.target, err);
            const auto s = make_split(matrix, config);
            {
                auto f = open_output(split_out);
                write_split(f, matrix, s);
            }
            out << s.train.size() << " train, " << s.validation.size() << " validation, " << s.test.size()
                << " test rows\n";
            auto m = base_manifest("split", args, *split);
            m["config"] = to_json(config);
            m["seeds"] = {{"master", config.seed}, {"split", derive_seed(config.seed, "split")}};
            m["data_fingerprint"] = fingerprint(matrix);
            m["inputs"] = json::array({file_digest(split_data.data)});
            m["outputs"] = json::array({split_out});
            write_manifest(manifest_for(sibling(split_out, ".manifest.json")), m);
        } else if (train->parsed()) {
            const auto config = train_flags.resolve();
            const auto matrix = load_matrix(train_data.data, train_data.mapping, config.target, err);
            const auto result = run_training(matrix, config);
            save_bundle(result.bundle, train_out);
            const std::string board = train_board.empty() ? sibling(train_out, "_leaderboard.csv") : train_board;
            std::vector<std::string> outputs{train_out, board};
            {
                auto f = open_output(board);
                const auto rows = leaderboard_rows(result.leaderboard);
                write_metrics_csv(f, rows);
            }
            if (!train_importance.empty()) {
                if (!result.bundle.importance) throw ArgumentError("no importance report (importance repeats were 0)");
                auto f = open_output(train_importance);
                write_importance_csv(f, std::string(to_string(config.target)), *result.bundle.importance);
                outputs.push_back(train_importance);
            }
            if (!train_trials.empty()) {
                for (std::size_t i = 0; i < result.histories.size(); ++i) {
                    const auto path = (fs::path(train_trials) / (std::string(to_string(config.target)) + "_" +
                                                                 std::string(to_string(result.leaderboard.entries[i].learner)) +
                                                                 "_trials.tsv"))
                                          .string();
                    auto f = open_output(path);
                    result.histories[i].write_log(f);
                    outputs.push_back(path);
                }
            }
            for (const auto& e : result.leaderboard.entries)
                if (e.failed) err << "learner " << to_string(e.learner) << " failed: " << e.error << '\n';
            for (const auto& d : result.diagnostics) err << d << '\n';
            const auto& best = result.leaderboard.entry(result.bundle.learner);
            const auto& m = best.test ? *best.test : best.validation;
            out << "winner " << to_string(result.bundle.learner) << " (" << (best.test ? "test" : "validation")
                << " maape " << format_number(m.maape) << ", rmse " << format_number(m.rmse) << ")\n";

            auto manifest = base_manifest("train", args, *train);
            manifest["config"] = to_json(config);
            manifest["seeds"] = seeds_json(config);
            manifest["data_fingerprint"] = fingerprint(matrix);
            manifest["inputs"] = json::array({file_digest(train_data.data)});
            manifest["outputs"] = outputs;
            manifest["bundle_checksum"] = bundle_checksum(result.bundle);
            write_manifest(manifest_for(sibling(train_out, ".manifest.json")), manifest);
        } else if (evaluate->parsed()) {
            const auto bundle = load_bundle(eval_bundle);
            const auto matrix = load_matrix(eval_data.data, eval_data.mapping, bundle.target, err);
            const auto idx = bundle_partition(bundle, matrix, eval_partition, err);
            std::vector<double> y;
            const Matrix raw = partition_rows(matrix, idx, y);
            const auto report = evaluate_metrics(y, bundle_predict(bundle, raw));
            const std::vector<MetricsRow> rows{
                {std::string(to_string(bundle.target)), std::string(to_string(bundle.learner)), eval_partition, report}};
            write_metrics_csv(out, rows);
            if (!eval_out.empty()) {
                auto f = open_output(eval_out);
                write_metrics_csv(f, rows);
            }
            auto m = base_manifest("evaluate", args, *evaluate);
            m["data_fingerprint"] = fingerprint(matrix);
            m["bundle_config"] = bundle.provenance.config;
            m["inputs"] = json::array({file_digest(eval_bundle), file_digest(eval_data.data)});
            m["metrics"] = metrics_to_json(report);
            write_manifest(manifest_for(eval_out.empty() ? "serverlens-evaluate.manifest.json"
                                                         : sibling(eval_out, ".manifest.json")),
                           m);
        } else if (importance->parsed()) {
            const auto bundle = load_bundle(imp_bundle);
            const auto matrix = load_matrix(imp_data.data, imp_data.mapping, bundle.target, err);
            const auto idx = bundle_partition(bundle, matrix, imp_partition, err);
            std::vector<double> y;
            const Matrix raw = partition_rows(matrix, idx, y);
            ImportanceOptions io;
            io.repeats = imp_repeats;
            io.threads = imp_threads;
            io.partition = imp_partition;
            const std::uint64_t master = imp_seed.value_or(bundle.provenance.seed);
            io.seed = derive_seed(master, "importance");
            const auto report = bundle_importance(bundle, raw, y, io);
            {
                auto f = open_output(imp_out);
                write_importance_csv(f, std::string(to_string(bundle.target)), report);
            }
            out << "top feature " << report.features.front().feature << " (mean decrease "
                << format_number(report.features.front().mean) << ")\n";
            auto m = base_manifest("importance", args, *importance);
            m["seeds"] = {{"master", master}, {"importance", io.seed}};
            m["data_fingerprint"] = fingerprint(matrix);
            m["inputs"] = json::array({file_digest(imp_bundle), file_digest(imp_data.data)});
            m["outputs"] = json::array({imp_out});
            write_manifest(manifest_for(sibling(imp_out, ".manifest.json")), m);
        } else if (prospective->parsed()) {
            auto config = pro_flags.resolve();
            const auto matrix = load_matrix(pro_data.data, pro_data.mapping, config.target, err);
            const auto grid = prospective_experiment(matrix, config, pro_opts);
            const std::string means = pro_means.empty() ? sibling(pro_out, "_horizon_means.csv") : pro_means;
            {
                auto f = open_output(pro_out);
                write_grid_csv(f, grid);
            }
            {
                auto f = open_output(means);
                write_horizon_means_csv(f, grid);
            }
            for (const auto& [h, v] : grid.horizon_means()) out << "horizon " << h << " mean maape " << format_number(v) << '\n';
            for (const auto& c : grid.cells)
                if (!c.skipped.empty()) err << "baseline " << c.baseline_year << " skipped: " << c.skipped << '\n';

            auto m = base_manifest("prospective", args, *prospective);
            m["config"] = to_json(config);
            json baselines = json::object();
            for (int b = pro_opts.first_baseline; b <= pro_opts.last_baseline; ++b) {
                PipelineConfig cell = config;
                cell.seed = derive_seed(config.seed, "prospective", static_cast<std::uint64_t>(b));
                baselines[std::to_string(b)] = seeds_json(cell);
            }
            m["seeds"] = {{"master", config.seed}, {"baselines", std::move(baselines)}};
            m["data_fingerprint"] = fingerprint(matrix);
            m["inputs"] = json::array({file_digest(pro_data.data)});
            m["outputs"] = json::array({pro_out, means});
            write_manifest(manifest_for(sibling(pro_out, ".manifest.json")), m);
        } else if (predict_cmd->parsed()) {
            const auto service = predict_bundles.load();
            json request = json::object();
            if (!request_path.empty()) {
                request = json::parse(read_file(request_path), nullptr, false);
                if (request.is_discarded()) throw ArgumentError("request file " + request_path + " is not valid JSON");
            }
            for (const auto& s : sets) {
                const auto eq = s.find('=');
                if (eq == std::string::npos) throw ArgumentError("--set expects field=value, got '" + s + "'");
                const std::string key = s.substr(0, eq), value = s.substr(eq + 1);
                double v = 0.0;
                const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
                request[key] = ec == std::errc() && ptr == value.data() + value.size() ? json(v) : json(value);
            }
            const auto response = service.predict_json(request);
            if (predict_out.empty()) {
                out << response.dump(2) << '\n';
            } else {
                auto f = open_output(predict_out);
                f << response.dump(2) << '\n';
            }
            auto m = base_manifest("predict", args, *predict_cmd);
            m["request"] = request;
            m["inputs"] = predict_bundles.digests();
            write_manifest(manifest_for(predict_out.empty() ? "serverlens-predict.manifest.json"
                                                            : sibling(predict_out, ".manifest.json")),
                           m);
        } else if (serve->parsed()) {
            const auto service = serve_bundles.load();
            const int resolved = resolve_port(port, std::getenv("SERVERLENS_PORT"));
            auto m = base_manifest("serve", args, *serve);
            m["port"] = resolved;
            m["inputs"] = serve_bundles.digests();
            write_manifest(manifest_for("serverlens-serve.manifest.json"), m);

            sigset_t set, old;
            sigemptyset(&set);
            sigaddset(&set, SIGINT);
            sigaddset(&set, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &set, &old);
            HttpServer server(service);
            const int bound = server.bind(host, resolved);
            std::thread worker([&] { server.listen(); });
            server.wait_until_ready();
            err << "listening on " << host << ':' << bound << '\n';
            int sig = 0;
            sigwait(&set, &sig);
            server.stop();
            worker.join();
            pthread_sigmask(SIG_SETMASK, &old, nullptr);
            err << "stopped\n";
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitOk;
}

}  // namespace serverlens
