#include <iostream>
#include <mutex>

#include "httplib.h"
#include "serverlens/service.hpp"

namespace serverlens {

struct HttpServer::Impl {
    const PredictionService& service;
    httplib::Server server;
    std::mutex log_guard;

    explicit Impl(const PredictionService& s) : service(s) {}

    void log(const std::string& line) {
        const std::lock_guard lock(log_guard);
        std::cerr << line << '\n';
    }

    static void reply(httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    void routes() {
        server.Get("/health", [this](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });
        server.Get("/schema", [this](const httplib::Request&, httplib::Response& res) { reply(res, service.schema()); });
        server.Get("/importance",
                   [this](const httplib::Request&, httplib::Response& res) { reply(res, service.importance()); });
        server.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
            try {
                reply(res, service.predict(req.body));
            } catch (const std::exception& e) {
                log(std::string("predict failed: ") + e.what());
                reply(res, {500, {{"error", std::string("prediction failed: ") + e.what()}}});
            }
        });
        server.set_exception_handler([this](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
            std::string what = "unknown error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            log(req.method + " " + req.path + " failed: " + what);
            reply(res, {500, {{"error", what}}});
        });
    }
};

HttpServer::HttpServer(const PredictionService& service) : impl_(std::make_unique<Impl>(service)) { impl_->routes(); }

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw ArgumentError("cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw ArgumentError("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace serverlens
