#pragma once

// Stateless HTTP compression service.
//
//   POST /v1/compress {context, question?, constraint?}
//   GET  /healthz
//   GET  /version
//
// Handlers are plain functions from request body to (status, body) so they
// can be exercised without a socket; Service wires them into cpp-httplib.

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "tpc/engine.hpp"

namespace tpc {

struct HttpReply {
  int status = 200;
  std::string body;
};

/// HTTP status for an engine error code: 422 for constraints, 502 when a
/// backend failed, 400 for other caller errors.
inline int http_status_for(ErrorCode code) {
  if (code == ErrorCode::InvalidConstraint) return 422;
  if (is_backend_failure(code)) return 502;
  switch (code) {
    case ErrorCode::EmptyDocument:
    case ErrorCode::EmptyQuestion:
    case ErrorCode::MarkerCollision:
    case ErrorCode::ParseFailure:
      return 400;
    default:
      return 500;
  }
}

inline HttpReply error_reply(int status, std::string_view code, std::string_view message) {
  return {status, nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

inline HttpReply error_reply(const Error& e) { return error_reply(http_status_for(e.code()), to_string(e.code()), e.what()); }

struct ServiceState {
  EngineConfig config;
  BackendSet backends;
  std::string digest;

  ServiceState(EngineConfig c, BackendSet b) : config(std::move(c)), backends(std::move(b)), digest(config_digest(config)) {}
};

inline HttpReply handle_compress(const ServiceState& s, std::string_view body) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return error_reply(400, "ParseFailure", std::string("request body is not JSON: ") + e.what());
  }
  if (!req.is_object()) return error_reply(400, "ParseFailure", "request body must be a JSON object");
  for (const auto& [key, _] : req.items()) {
    if (key != "context" && key != "question" && key != "constraint") {
      return error_reply(400, "ParseFailure", "unknown field '" + key + "'");
    }
  }
  if (!req.contains("context") || !req["context"].is_string()) {
    return error_reply(400, "ParseFailure", "'context' must be a string");
  }
  std::optional<std::string> question;
  if (req.contains("question") && !req["question"].is_null()) {
    if (!req["question"].is_string()) return error_reply(400, "ParseFailure", "'question' must be a string");
    question = req["question"].get<std::string>();
  }

  try {
    CompressionConstraint constraint = s.config.constraint;
    if (req.contains("constraint") && !req["constraint"].is_null()) {
      constraint = constraint_from_json(req["constraint"]);
    }
    const RawDocument doc{"request", req["context"].get<std::string>(), {}};
    const auto run = compress_document(s.config, s.backends, doc, question, constraint);
    return {200, compression_json(run, s.digest).dump()};
  } catch (const Error& e) {
    return error_reply(e);
  }
}

inline HttpReply handle_healthz(const ServiceState& s) {
  auto probe = [](auto& backend) {
    try {
      return backend.healthy() ? "ok" : "down";
    } catch (...) {
      return "down";
    }
  };
  nlohmann::json status = {{"descriptor", probe(*s.backends.descriptor)}, {"embedder", probe(*s.backends.embedder)}};
  bool all_ok = true;
  for (const auto& [_, v] : status.items()) all_ok = all_ok && v == "ok";
  return {200, nlohmann::json{{"status", all_ok ? "ok" : "degraded"}, {"backend_status", status}}.dump()};
}

inline HttpReply handle_version(const ServiceState& s) { return {200, version_json(s.digest).dump()}; }

class Service {
 public:
  explicit Service(ServiceState state) : state_(std::move(state)) {
    auto send = [](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    auto starting = [this, send](httplib::Response& res) {
      if (ready_.load()) return false;
      send(res, error_reply(503, "Starting", "startup health check in progress"));
      return true;
    };
    server_.Post("/v1/compress", [this, send, starting](const httplib::Request& req, httplib::Response& res) {
      if (!starting(res)) send(res, handle_compress(state_, req.body));
    });
    server_.Get("/healthz", [this, send, starting](const httplib::Request&, httplib::Response& res) {
      if (!starting(res)) send(res, handle_healthz(state_));
    });
    server_.Get("/version", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, handle_version(state_));
    });
  }

  ~Service() { stop(); }

  /// Binds and starts serving (503 until mark_ready). Returns the bound port.
  int start(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Polls backend health until both compression backends answer or the
  /// deadline passes. On success the service starts accepting requests.
  bool startup_check(std::chrono::milliseconds deadline, std::chrono::milliseconds interval = std::chrono::milliseconds(250)) {
    const auto until = std::chrono::steady_clock::now() + deadline;
    for (;;) {
      bool ok = false;
      try {
        ok = state_.backends.descriptor->healthy() && state_.backends.embedder->healthy();
      } catch (...) {
        ok = false;
      }
      if (ok) {
        ready_ = true;
        return true;
      }
      if (std::chrono::steady_clock::now() >= until) return false;
      std::this_thread::sleep_for(interval);
    }
  }

  void mark_ready() { ready_ = true; }
  bool ready() const { return ready_.load(); }

  /// Stops accepting connections; in-flight requests finish first.
  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  const ServiceState& state() const { return state_; }

 private:
  ServiceState state_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<bool> ready_{false};
};

}  // namespace tpc
