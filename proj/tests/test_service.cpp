#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "serverlens/service.hpp"

using namespace serverlens;
using nlohmann::json;

namespace {

struct Trio {
    ModelBundle power, throughput, perf;
};

const Trio& trio() {
    static const Trio t = [] {
        SyntheticSpec spec;
        spec.n_servers = 150;
        spec.seed = 21;
        spec.missing_rate = 0.05;
        const auto corpus = generate_synthetic(spec);
        auto train = [&](TargetKind target) {
            PipelineConfig c = PipelineConfig::desk();
            c.target = target;
            c.learners = {LearnerKind::Gbt};
            c.budget = 4;
            c.n_init = 2;
            c.candidates = 64;
            c.importance_repeats = 2;
            c.seed = 5;
            return run_training(corpus.records, c).bundle;
        };
        return Trio{train(TargetKind::Power), train(TargetKind::MaxThroughput), train(TargetKind::PerfToPower)};
    }();
    return t;
}

const PredictionService& service() {
    static const PredictionService s(trio().power, trio().throughput, trio().perf);
    return s;
}

}  // namespace

TEST_CASE("service construction") {
    CHECK_THROWS_AS(PredictionService(trio().throughput, trio().power, trio().perf), ArgumentError);
    CHECK_THROWS_AS(PredictionService(trio().power, trio().throughput, trio().power), ArgumentError);
}

TEST_CASE("health and schema") {
    const auto h = service().health();
    CHECK(h.status == 200);
    CHECK(h.body["status"] == "ok");
    CHECK(h.body["bundles"]["power"]["checksum"] == bundle_checksum(trio().power));
    CHECK(h.body["bundles"]["perf"]["checksum"] == bundle_checksum(trio().perf));

    const auto s = service().schema().body;
    REQUIRE(s["features"].size() == 14);
    std::vector<std::string> names;
    for (const auto& f : s["features"]) names.push_back(f["name"].get<std::string>());
    CHECK(names == std::vector<std::string>{"cc", "cpc", "tpc", "cf", "cs_l1d", "cs_l1i", "cs_l2", "cs_l3", "mmc",
                                            "mms", "ddc", "dds", "ddt", "had_date"});
    const auto& cc = s["features"][0];
    CHECK(cc["type"] == "number");
    CHECK(cc["units"] == "chips");
    CHECK(cc["min"].get<double>() <= cc["max"].get<double>());
    CHECK(cc["observed"].get<std::size_t>() > 0);
    CHECK(s["features"][12]["options"] == json::array({"hdd", "ssd"}));
    const auto& had = s["features"][13];
    CHECK(had["type"] == "date");
    CHECK(had["min"].get<std::string>().size() == 10);
    CHECK(s["load_levels"].size() == 11);
}

TEST_CASE("predict") {
    const auto r = service().predict(R"({"cc": 2, "cpc": 8})");
    REQUIRE(r.status == 200);
    const auto& b = r.body;
    REQUIRE(b["power"].size() == 11);
    REQUIRE(b["perf_to_power"].size() == 11);
    REQUIRE(b["eq1_composed"].size() == 11);
    for (std::size_t i = 0; i < 11; ++i) {
        CHECK(b["power"][i]["load"].get<double>() == doctest::Approx(i / 10.0));
        if (i) CHECK(b["power"][i]["load"].get<double>() > b["power"][i - 1]["load"].get<double>());
        CHECK(b["power"][i]["watts"].is_number());
    }
    CHECK(b["perf_to_power"][0]["ssj_ops_per_watt"].get<double>() == 0.0);
    CHECK(b["eq1_composed"][0]["ssj_ops_per_watt"].get<double>() == 0.0);
    CHECK(b["max_throughput"].get<double>() > 0.0);
    const auto imputed = b["flags"]["imputed"].get<std::vector<std::string>>();
    CHECK(imputed.size() == 12);
    CHECK(std::find(imputed.begin(), imputed.end(), "cc") == imputed.end());
    CHECK(std::find(imputed.begin(), imputed.end(), "ddt") != imputed.end());
    CHECK(b["provenance"]["power"]["learner"] == "gbt");

    SUBCASE("identical requests give identical responses") {
        CHECK(service().predict(R"({"cpc": 8, "cc": 2})").body == b);
    }
    SUBCASE("empty request is flagged low confidence") {
        const auto e = service().predict("{}").body;
        const auto sanity = e["flags"]["sanity"].get<std::vector<std::string>>();
        CHECK(std::find(sanity.begin(), sanity.end(), "low_confidence_all_features_imputed") != sanity.end());
        CHECK(e["max_throughput"].is_number());
    }
    SUBCASE("categorical, date and range handling") {
        const auto e = service().predict(R"({"cc": 64, "ddt": "SSD", "had_date": "2015-06-01", "mms": null})").body;
        const auto outside = e["flags"]["out_of_range"].get<std::vector<std::string>>();
        CHECK(outside == std::vector<std::string>{"cc"});
        const auto imputed = e["flags"]["imputed"].get<std::vector<std::string>>();
        CHECK(std::find(imputed.begin(), imputed.end(), "ddt") == imputed.end());
        CHECK(std::find(imputed.begin(), imputed.end(), "had_date") == imputed.end());
        CHECK(std::find(imputed.begin(), imputed.end(), "mms") != imputed.end());
    }
    SUBCASE("strict schema") {
        const auto bad = service().predict(R"({"cc": 2, "gpu_count": 4})");
        CHECK(bad.status == 422);
        CHECK(bad.body["field"] == "gpu_count");
        CHECK(bad.body["error"].get<std::string>().find("gpu_count") != std::string::npos);
        CHECK(service().predict(R"({"l": 0.5})").body["field"] == "l");
        CHECK(service().predict(R"({"CC": 2})").body["field"] == "CC");
        CHECK(service().predict(R"({"ddt": "tape"})").body["field"] == "ddt");
        CHECK(service().predict(R"({"had_date": "someday"})").body["field"] == "had_date");
        CHECK(service().predict(R"({"cf": "fast"})").body["field"] == "cf");
        CHECK(service().predict("[1, 2]").status == 422);
        const auto malformed = service().predict(R"({"cc": )");
        CHECK(malformed.status == 400);
        CHECK(malformed.body["error"].get<std::string>().find("malformed") != std::string::npos);
    }
}

TEST_CASE("importance endpoint") {
    const auto r = service().importance().body;
    for (const char* t : {"power", "throughput", "perf"}) {
        REQUIRE(r[t].is_object());
        CHECK(r[t]["repeats"] == 2);
        CHECK(r[t]["features"].size() >= 15);
    }
}

TEST_CASE("http front end") {
    HttpServer server(service());
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread worker([&] { server.listen(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    {
        auto res = client.Get("/health");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(json::parse(res->body)["status"] == "ok");
        CHECK(res->get_header_value("Content-Type") == "application/json");
    }
    {
        auto res = client.Get("/schema");
        REQUIRE(res);
        CHECK(json::parse(res->body)["features"].size() == 14);
        res = client.Get("/importance");
        REQUIRE(res);
        CHECK(json::parse(res->body).contains("throughput"));
    }
    {
        auto res = client.Post("/predict", R"({"cc": 2, "gpu_count": 1})", "application/json");
        REQUIRE(res);
        CHECK(res->status >= 400);
        CHECK(res->status < 500);
        CHECK(res->body.find("gpu_count") != std::string::npos);
        res = client.Post("/predict", "not json", "application/json");
        REQUIRE(res);
        CHECK(res->status == 400);
        res = client.Get("/nothing");
        REQUIRE(res);
        CHECK(res->status == 404);
    }

    const std::string body = R"({"cc": 2, "cpc": 8, "ddt": "hdd", "had_date": "2014-03-01"})";
    const std::string expected = service().predict(body).body.dump();

    SUBCASE("concurrent identical requests") {
        std::atomic<int> mismatches{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < 4; ++t) {
            pool.emplace_back([&] {
                httplib::Client c("127.0.0.1", port);
                for (int i = 0; i < 20; ++i) {
                    auto res = c.Post("/predict", body, "application/json");
                    if (!res || res->status != 200 || res->body != expected) ++mismatches;
                }
            });
        }
        for (auto& th : pool) th.join();
        CHECK(mismatches == 0);
    }
    SUBCASE("p95 latency under 50 ms") {
        std::vector<double> ms;
        for (int i = 0; i < 200; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            auto res = client.Post("/predict", body, "application/json");
            const auto t1 = std::chrono::steady_clock::now();
            REQUIRE(res);
            REQUIRE(res->status == 200);
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(ms.begin(), ms.end());
        const double p95 = ms[static_cast<std::size_t>(0.95 * (ms.size() - 1))];
        MESSAGE("p95 /predict latency ms: " << p95);
        CHECK(p95 < 50.0);
    }

    server.stop();
    worker.join();
}
