#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "serverlens/cli.hpp"
#include "serverlens/pipeline.hpp"

using namespace serverlens;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Workdir {
    fs::path root;
    Workdir() : root(fs::temp_directory_path() / ("serverlens_cli_" + std::to_string(::getpid()))) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workdir() { fs::remove_all(root); }
    std::string operator/(const std::string& name) const { return (root / name).string(); }
};

std::vector<std::string> quick_train(const std::string& data, const std::string& target, const std::string& out) {
    return {"train",    "--data",   data, "--target",     target, "--learners", "gbt", "--budget", "4",
            "--n-init", "2",        "--candidates", "64", "--importance-repeats", "2", "--seed", "3",
            "--out",    out};
}

}  // namespace

TEST_CASE("usage and exit codes") {
    auto r = cli({"--help"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("train") != std::string::npos);

    r = cli({"train", "--target", "power", "--data", "d.csv", "--out", "b.slb", "--bogus"});
    CHECK(r.code == kExitUser);
    CHECK(r.err.find("--bogus") != std::string::npos);
    CHECK(r.err.find("Usage") != std::string::npos);

    CHECK(cli({}).code == kExitUser);
    CHECK(cli({"fly"}).code == kExitUser);

    r = cli({"train", "--target", "power", "--data", "missing.csv", "--out", "b.slb"});
    CHECK(r.code == kExitUser);
    CHECK(r.err.find("missing.csv") != std::string::npos);
}

TEST_CASE("port resolution") {
    CHECK(resolve_port(8080, nullptr) == 8080);
    CHECK(resolve_port(8080, "") == 8080);
    CHECK(resolve_port(8080, "9191") == 9191);
    CHECK_THROWS_AS(resolve_port(8080, "http"), ConfigError);
    CHECK_THROWS_AS(resolve_port(8080, "70000"), ConfigError);
}

TEST_CASE("pipeline stages end to end") {
    Workdir dir;
    const auto data = dir / "synth.csv";

    SUBCASE("synth is deterministic") {
        REQUIRE(cli({"synth", "--n", "100", "--seed", "7", "--out", data}).code == 0);
        const auto first = slurp(data);
        const auto manifest = slurp(dir / "synth.manifest.json");
        REQUIRE(cli({"synth", "--n", "100", "--seed", "7", "--out", data}).code == 0);
        CHECK(slurp(data) == first);
        CHECK(slurp(dir / "synth.manifest.json") == manifest);
        REQUIRE(cli({"synth", "--n", "100", "--seed", "8", "--out", data}).code == 0);
        CHECK(slurp(data) != first);
        CHECK(json::parse(manifest)["seeds"]["master"] == 7);
    }

    SUBCASE("ingest and split") {
        const auto raw = dir / "export.csv";
        REQUIRE(cli({"synth", "--n", "60", "--seed", "2", "--format", "export", "--out", raw}).code == 0);
        auto r = cli({"ingest", "--data", raw, "--out", dir / "canonical.csv", "--diagnostics", dir / "diag.txt"});
        REQUIRE(r.code == 0);
        CHECK(r.out.rfind("60 records", 0) == 0);
        CHECK(fs::exists(dir / "canonical.manifest.json"));

        r = cli({"split", "--data", dir / "canonical.csv", "--target", "power", "--seed", "4", "--out", dir / "split.txt"});
        REQUIRE(r.code == 0);
        CHECK(r.out.find("train") != std::string::npos);
        const auto m = json::parse(slurp(dir / "split.manifest.json"));
        CHECK(m["seeds"]["split"] == derive_seed(4, "split"));
        CHECK(m["data_fingerprint"].get<std::string>().size() > 0);

        r = cli({"split", "--data", dir / "canonical.csv", "--target", "power", "--scheme", "time_series", "--horizon",
                 "0", "--out", dir / "split2.txt"});
        CHECK(r.code == kExitUser);
    }

    SUBCASE("train, evaluate, importance, predict") {
        REQUIRE(cli({"synth", "--n", "120", "--seed", "9", "--missing", "0.05", "--out", data}).code == 0);
        auto args = quick_train(data, "power", dir / "power.slb");
        args.insert(args.end(), {"--importance", dir / "power_importance.csv", "--trials-dir", dir / "trials"});
        auto r = cli(args);
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(r.out.rfind("winner gbt", 0) == 0);
        CHECK(fs::exists(dir / "trials/power_gbt_trials.tsv"));
        const auto board = slurp(dir / "power_leaderboard.csv");
        CHECK(board.rfind("target,learner,partition,n,rmse,r2,mape,mape_excluded,maape\n", 0) == 0);

        const auto manifest = json::parse(slurp(dir / "power.manifest.json"));
        CHECK(manifest["command"] == "train");
        CHECK(manifest["seeds"]["split"] == derive_seed(3, "split"));
        CHECK(manifest["seeds"]["learners"]["gbt"]["bo"] ==
              derive_seed(3, "bo", static_cast<std::uint64_t>(LearnerKind::Gbt)));
        CHECK(manifest["config"]["budget"] == 4);
        CHECK(manifest["flags"]["--budget"] == "4");
        CHECK(manifest["flags"]["--profile"].is_null());

        // replaying the manifest reproduces the run
        const auto importance = slurp(dir / "power_importance.csv");
        auto replay = manifest["argv"].get<std::vector<std::string>>();
        for (auto& a : replay)
            if (a == dir / "power.slb") a = dir / "replay.slb";
        REQUIRE(cli(replay).code == 0);
        CHECK(slurp(dir / "replay_leaderboard.csv") == board);
        CHECK(slurp(dir / "power_importance.csv") == importance);

        const auto bundle = load_bundle(dir / "power.slb");
        CHECK(bundle.provenance.config["seed"] == 3);
        r = cli({"evaluate", "--bundle", dir / "power.slb", "--data", data, "--manifest", dir / "eval.json"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const auto& test = *bundle.leaderboard.entry(bundle.learner).test;
        std::ostringstream expected;
        const std::vector<MetricsRow> rows{{"power", "gbt", "test", test}};
        write_metrics_csv(expected, rows);
        CHECK(r.out == expected.str());
        CHECK(fs::exists(dir / "eval.json"));

        r = cli({"evaluate", "--bundle", dir / "power.slb", "--data", data, "--partition", "all", "--manifest",
                 dir / "eval_all.json"});
        REQUIRE(r.code == 0);
        CHECK(r.out.find("power,gbt,all,1320,") != std::string::npos);
        CHECK(cli({"evaluate", "--bundle", dir / "power.slb", "--data", data, "--partition", "bogus", "--manifest",
                   dir / "x.json"})
                  .code == kExitUser);

        r = cli({"importance", "--bundle", dir / "power.slb", "--data", data, "--repeats", "2", "--out",
                 dir / "imp.csv"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(slurp(dir / "imp.csv") == slurp(dir / "power_importance.csv"));

        REQUIRE(cli(quick_train(data, "throughput", dir / "throughput.slb")).code == 0);
        REQUIRE(cli(quick_train(data, "perf", dir / "perf.slb")).code == 0);
        const std::vector<std::string> trio = {"--power", dir / "power.slb", "--throughput", dir / "throughput.slb",
                                               "--perf", dir / "perf.slb"};
        std::vector<std::string> predict = {"predict", "--set", "cc=2", "--set", "cpc=8", "--set", "ddt=ssd",
                                            "--manifest", dir / "predict.json"};
        predict.insert(predict.end(), trio.begin(), trio.end());
        r = cli(predict);
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const auto response = json::parse(r.out);
        REQUIRE(response["power"].size() == 11);
        CHECK(response["power"][10]["load"] == 1.0);
        CHECK(json::parse(slurp(dir / "predict.json"))["request"]["ddt"] == "ssd");

        predict.push_back("--set");
        predict.push_back("gpu_count=1");
        r = cli(predict);
        CHECK(r.code == kExitUser);
        CHECK(r.err.find("gpu_count") != std::string::npos);

        std::ofstream(dir / "corrupt.slb") << slurp(dir / "perf.slb").substr(0, 100);
        std::vector<std::string> corrupt = {"predict", "--power", dir / "power.slb", "--throughput",
                                            dir / "throughput.slb", "--perf", dir / "corrupt.slb"};
        r = cli(corrupt);
        CHECK(r.code == kExitUser);
        CHECK(r.err.find("error") != std::string::npos);
    }

    SUBCASE("prospective grid") {
        REQUIRE(cli({"synth", "--n", "120", "--seed", "4", "--first-year", "2010", "--last-year", "2016", "--out",
                     data})
                    .code == 0);
        auto args = quick_train(data, "throughput", dir / "grid.csv");
        args[0] = "prospective";
        args.insert(args.end(), {"--first-baseline", "2014", "--last-baseline", "2016", "--max-horizon", "2"});
        const auto r = cli(args);
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const auto grid = slurp(dir / "grid.csv");
        CHECK(grid.rfind("baseline_year,horizon,status", 0) == 0);
        CHECK(grid.find("2016,1,empty_test") != std::string::npos);
        CHECK(slurp(dir / "grid_horizon_means.csv").rfind("horizon,cells,mean_maape\n", 0) == 0);
        const auto m = json::parse(slurp(dir / "grid.manifest.json"));
        CHECK(m["seeds"]["baselines"]["2015"]["master"] == derive_seed(3, "prospective", 2015));
    }
}
