#pragma once

// HTTP transport for the harness: a client for a /v1/generate endpoint and
// routes that serve a MockEndpoint over the same wire format.

#include <memory>
#include <mutex>
#include <string>

#include "httplib.h"

#include "chembench/error.hpp"
#include "chembench/harness.hpp"

namespace chembench::http {

inline constexpr const char* kGeneratePath = "/v1/generate";

struct Endpoint {
  std::string host;
  int port = 0;
  std::string path = kGeneratePath;
};

// Accepts "http://host:port[/path]" or "host:port".
inline Endpoint parse_endpoint(std::string_view url) {
  std::string s(url);
  if (s.starts_with("http://")) s = s.substr(7);
  else if (s.find("://") != std::string::npos) throw ConfigError("only http:// endpoints are supported: " + std::string(url));
  Endpoint e;
  const auto slash = s.find('/');
  if (slash != std::string::npos) {
    e.path = s.substr(slash);
    s.resize(slash);
  }
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("endpoint needs host:port: " + std::string(url));
  e.host = s.substr(0, colon);
  try {
    e.port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad port in endpoint: " + std::string(url));
  }
  if (e.host.empty() || e.port <= 0 || e.port > 65535) throw ConfigError("bad endpoint: " + std::string(url));
  return e;
}

// httplib::Client is not thread-safe, so each call opens its own connection.
class HttpGenerationClient : public harness::GenerationClient {
 public:
  explicit HttpGenerationClient(Endpoint ep, int timeout_seconds = 60) : ep_(std::move(ep)), timeout_(timeout_seconds) {}

  harness::GenerationResponse generate(const harness::GenerationRequest& req) override {
    httplib::Client cli(ep_.host, ep_.port);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    auto res = cli.Post(ep_.path, req.to_json().dump(), "application/json");
    if (!res) return {std::nullopt, std::nullopt, "transport error: " + httplib::to_string(res.error())};
    if (res->status != 200) return {std::nullopt, std::nullopt, "HTTP " + std::to_string(res->status)};
    json body;
    try {
      body = json::parse(res->body);
    } catch (const json::parse_error& e) {
      return {std::nullopt, std::nullopt, std::string("bad response body: ") + e.what()};
    }
    return harness::GenerationResponse::from_json(body);
  }

 private:
  Endpoint ep_;
  int timeout_;
};

// Serves `mock` at POST /v1/generate. Injected failures come back as 503.
inline void install_mock_routes(httplib::Server& server, harness::MockEndpoint& mock) {
  server.Post(kGeneratePath, [&mock](const httplib::Request& req, httplib::Response& res) {
    harness::GenerationRequest greq;
    try {
      greq = harness::GenerationRequest::from_json(json::parse(req.body));
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(ordered_json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    const auto out = mock.generate(greq);
    res.status = out.error ? 503 : 200;
    res.set_content(out.to_json().dump(), "application/json");
  });
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
}

// In-process server on an ephemeral localhost port, stopped on destruction.
class MockServer {
 public:
  explicit MockServer(harness::MockEndpoint& mock) {
    install_mock_routes(server_, mock);
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw RuntimeFailure("cannot bind mock server");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  int port() const noexcept { return port_; }
  Endpoint endpoint() const { return {"127.0.0.1", port_, kGeneratePath}; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace chembench::http
