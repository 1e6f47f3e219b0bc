#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "serverlens/pipeline.hpp"

namespace serverlens {

// One field of a prediction request. Names are the lower-cased feature
// abbreviations; ddt is "hdd" or "ssd" and had_date a calendar date string.
struct RequestField {
    std::string name;
    std::string type;  // number, category or date
    std::string units;
    std::string description;
};

const std::vector<RequestField>& request_fields();

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

// Stateless request handling over three immutable bundles.
class PredictionService {
public:
    // ArgumentError unless the bundles are power, throughput and perf in that
    // order and share the configuration schema.
    PredictionService(ModelBundle power, ModelBundle throughput, ModelBundle perf);

    ServiceResponse health() const;
    ServiceResponse schema() const;
    ServiceResponse importance() const;
    ServiceResponse predict(std::string_view body) const;

    // Request object -> 15 configuration values. ArgumentError names the
    // offending field.
    std::vector<double> parse_request(const nlohmann::json& request) const;
    // Full response for an already parsed request; throws on bad input.
    nlohmann::json predict_json(const nlohmann::json& request) const;

    const ModelBundle& bundle(TargetKind target) const;

private:
    ModelBundle power_, throughput_, perf_;
    std::string checksums_[3];
};

// Minimal blocking HTTP front end. bind() with port 0 picks a free port.
class HttpServer {
public:
    explicit HttpServer(const PredictionService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    int bind(const std::string& host, int port);
    // Blocks until stop(); in-flight requests finish first.
    void listen();
    // Returns once listen() accepts connections.
    void wait_until_ready() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace serverlens
