#pragma once

// HTTP JSON clients for remote generation and embedding services.
//
//   POST {base}/generate {prompt, params}             -> {completions: [text]}
//   POST {base}/score    {prompt, continuation, top_k} -> {positions: [{entries: [[id, logprob]],
//                                                          gold_logprob, gold_token?, is_truncated?}]}
//   POST {base}/embed    {text, marker}                -> {vectors: [[x]]}
//   GET  {base}/health                                 -> 200 when ready
//
// Transport failures and 5xx replies are retried with exponential backoff and
// jitter; 4xx replies are not. 501 from /score means the service has no
// log-probabilities; 413 means the prompt exceeds the model window.

#include <chrono>
#include <cstdlib>
#include <memory>
#include <random>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "tpc/backends.hpp"
#include "tpc/error.hpp"

namespace tpc::remote {

/// Process-wide cap on concurrent remote requests, shared by every client
/// built from one config.
class InflightLimiter {
 public:
  explicit InflightLimiter(std::size_t max_inflight)
      : sem_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_inflight, 1, kMax))) {}

  class Slot {
   public:
    explicit Slot(InflightLimiter& l) : l_(l) { l_.sem_.acquire(); }
    ~Slot() { l_.sem_.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    InflightLimiter& l_;
  };

 private:
  static constexpr std::size_t kMax = 1024;
  std::counting_semaphore<kMax> sem_;
};

struct ClientOptions {
  std::string base_url;
  std::string api_key_env;
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_ms = 200;
  std::shared_ptr<InflightLimiter> limiter;
};

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline Endpoint parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidParams, "base_url needs a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorCode::InvalidParams, "base_url scheme must be http or https: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) e.prefix = url.substr(path_start);
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  if (e.origin.size() == scheme_end + 3) throw Error(ErrorCode::InvalidParams, "base_url has no host: " + url);
  return e;
}

class JsonClient {
 public:
  JsonClient(std::string name, ClientOptions opts) : name_(std::move(name)), opts_(std::move(opts)) {
    endpoint_ = parse_base_url(opts_.base_url);
    if (!opts_.api_key_env.empty()) {
      const char* key = std::getenv(opts_.api_key_env.c_str());
      if (!key || !*key) {
        throw Error(ErrorCode::InvalidParams,
                    name_ + ": environment variable " + opts_.api_key_env + " is not set");
      }
      api_key_ = key;
    }
    if (!opts_.limiter) opts_.limiter = std::make_shared<InflightLimiter>(8);
  }

  const std::string& name() const { return name_; }

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
      if (attempt > 0) backoff(attempt);
      httplib::Result res = [&] {
        InflightLimiter::Slot slot(*opts_.limiter);
        auto cli = client();
        return cli.Post(endpoint_.prefix + path, headers(), payload, "application/json");
      }();
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      const int status = res->status;
      if (status >= 200 && status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error&) {
          throw Error(ErrorCode::BackendRejected, name_ + path + " returned malformed JSON");
        }
      }
      if (status == 501) throw Error(ErrorCode::LogprobsUnsupported, name_ + path + " is not implemented (501)");
      if (status == 413) throw Error(ErrorCode::ContextOverflow, name_ + path + ": prompt exceeds the model window");
      if (status >= 500) {
        last_error = "HTTP " + std::to_string(status);
        continue;
      }
      throw Error(ErrorCode::BackendRejected,
                  name_ + path + " rejected the request: HTTP " + std::to_string(status) + " " + excerpt(res->body));
    }
    throw Error(ErrorCode::BackendUnavailable, name_ + path + " unavailable after " +
                                                   std::to_string(opts_.max_retries + 1) + " attempts (" + last_error + ")");
  }

  bool health() const {
    InflightLimiter::Slot slot(*opts_.limiter);
    auto cli = client();
    auto res = cli.Get(endpoint_.prefix + "/health", headers());
    return res && res->status == 200;
  }

 private:
  httplib::Client client() const {
    httplib::Client cli(endpoint_.origin);
    const auto ms = std::chrono::milliseconds(opts_.timeout_ms);
    cli.set_connection_timeout(ms);
    cli.set_read_timeout(ms);
    cli.set_write_timeout(ms);
    return cli;
  }

  httplib::Headers headers() const {
    httplib::Headers h;
    if (!api_key_.empty()) h.emplace("Authorization", "Bearer " + api_key_);
    return h;
  }

  void backoff(int attempt) const {
    thread_local std::mt19937_64 jitter{std::random_device{}()};
    const long base = static_cast<long>(opts_.backoff_ms) << (attempt - 1);
    const long extra = opts_.backoff_ms > 0 ? static_cast<long>(jitter() % static_cast<unsigned long>(opts_.backoff_ms)) : 0;
    std::this_thread::sleep_for(std::chrono::milliseconds(base + extra));
  }

  static std::string excerpt(const std::string& body) { return body.size() > 200 ? body.substr(0, 200) + "..." : body; }

  std::string name_;
  ClientOptions opts_;
  Endpoint endpoint_;
  std::string api_key_;
};

class RemoteGenerationBackend final : public GenerationBackend {
 public:
  RemoteGenerationBackend(std::string id, ClientOptions opts) : id_(std::move(id)), client_(id_, std::move(opts)) {}

  std::string id() const override { return id_; }

  std::vector<Completion> generate(std::string_view prompt, const GenerationParams& params) const override {
    nlohmann::json p = {{"max_new_tokens", params.max_new_tokens},
                        {"temperature", params.temperature},
                        {"top_p", params.top_p},
                        {"num_candidates", params.num_candidates},
                        {"stop_sequences", params.stop_sequences}};
    if (params.seed) p["seed"] = *params.seed;
    const auto reply = client_.post("/generate", {{"prompt", prompt}, {"params", p}});
    std::vector<Completion> out;
    try {
      const auto& completions = reply.at("completions");
      for (std::size_t i = 0; i < completions.size(); ++i) out.push_back({completions[i].get<std::string>(), i});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::BackendRejected, id_ + "/generate: unexpected response shape: " + e.what());
    }
    return out;
  }

  std::vector<TokenDistribution> score_continuation(std::string_view prompt, std::string_view continuation,
                                                    std::size_t top_k) const override {
    const auto reply =
        client_.post("/score", {{"prompt", prompt}, {"continuation", continuation}, {"top_k", top_k}});
    std::vector<TokenDistribution> out;
    try {
      const auto& positions = reply.at("positions");
      for (std::size_t t = 0; t < positions.size(); ++t) {
        const auto& pos = positions[t];
        TokenDistribution d;
        d.position = t;
        for (const auto& e : pos.at("entries")) d.entries.emplace_back(e.at(0).get<TokenId>(), e.at(1).get<double>());
        d.gold_logprob = pos.at("gold_logprob").get<double>();
        d.is_truncated = pos.contains("is_truncated") ? pos["is_truncated"].get<bool>() : d.entries.size() >= top_k;
        if (pos.contains("gold_token")) {
          d.gold_token = pos["gold_token"].get<TokenId>();
        } else {
          // Unknown id: the gold token is the same token under either prompt,
          // so a per-position placeholder aligns correctly.
          d.gold_token = -2 - static_cast<TokenId>(t);
          for (const auto& [tok, lp] : d.entries) {
            if (lp == d.gold_logprob) {
              d.gold_token = tok;
              break;
            }
          }
        }
        out.push_back(std::move(d));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::BackendRejected, id_ + "/score: unexpected response shape: " + e.what());
    }
    return out;
  }

  bool healthy() const override { return client_.health(); }

 private:
  std::string id_;
  JsonClient client_;
};

class RemoteEmbeddingBackend final : public EmbeddingBackend {
 public:
  RemoteEmbeddingBackend(std::string id, std::size_t dim, std::size_t max_input_tokens, ClientOptions opts)
      : id_(std::move(id)), dim_(dim), max_input_tokens_(max_input_tokens), client_(id_, std::move(opts)) {}

  std::string id() const override { return id_; }
  std::size_t dim() const override { return dim_; }
  std::size_t max_input_tokens() const override { return max_input_tokens_; }

  std::vector<std::vector<double>> embed_raw(const MarkedText& marked) const override {
    const auto reply = client_.post("/embed", {{"text", marked.text}, {"marker", marked.marker}});
    try {
      return reply.at("vectors").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::BackendRejected, id_ + "/embed: unexpected response shape: " + e.what());
    }
  }

  bool healthy() const override { return client_.health(); }

 private:
  std::string id_;
  std::size_t dim_;
  std::size_t max_input_tokens_;
  JsonClient client_;
};

}  // namespace tpc::remote
