#pragma once

// Token-level scoring against an external LLM service. The core only sees the
// LlmClient interface; HttpLlmClient speaks the JSON-over-HTTP wire protocol
// and MockLlmClient is a deterministic offline stand-in.
//
// Wire protocol (POST, application/json):
//   /v1/token_score   {"id", "model", "prompt", "target"} -> {"id", "logprob"}
//   /v1/sequence_nll  {"id", "model", "text"}             -> {"id", "nll", "token_count"}

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "curator/corpus.hpp"
#include "curator/error.hpp"
#include "curator/random.hpp"

namespace curator {

/// Environment variable holding a bearer token for the scoring endpoint.
inline constexpr const char* kApiTokenEnv = "CURATOR_API_TOKEN";

struct TokenScoreRequest {
  std::string request_id;
  std::string prompt;
  std::string target_token;
};

struct SequenceNllRequest {
  std::string request_id;
  std::string text;
};

struct SequenceNllResponse {
  double nll = 0.0;  // total, in nats
  std::uint64_t token_count = 0;
};

struct ClientConfig {
  std::string endpoint;  // e.g. "http://127.0.0.1:8080"
  std::string model = "default";
  std::size_t max_in_flight = 8;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{50};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds max_backoff{2000};
  std::string api_token;
};

inline void validate(const ClientConfig& c) {
  if (c.max_in_flight < 1) throw Error(ErrorKind::invalid_argument, "max_in_flight must be at least 1");
  if (c.timeout.count() <= 0) throw Error(ErrorKind::invalid_argument, "timeout must be positive");
  if (c.max_retries < 0) throw Error(ErrorKind::invalid_argument, "retry budget must be nonnegative");
  if (!(c.backoff_multiplier >= 1.0)) throw Error(ErrorKind::invalid_argument, "backoff multiplier must be >= 1");
}

/// Failure of a single request. Always names the request id.
class LlmError : public Error {
 public:
  LlmError(ErrorKind kind, std::string request_id, const std::string& message, int status = 0)
      : Error(kind, "request '" + request_id + "': " + message),
        request_id_(std::move(request_id)),
        status_(status) {}

  const std::string& request_id() const noexcept { return request_id_; }
  int status() const noexcept { return status_; }

 private:
  std::string request_id_;
  int status_;
};

inline void validate(const TokenScoreRequest& r) {
  if (r.prompt.empty()) throw LlmError(ErrorKind::invalid_argument, r.request_id, "empty prompt");
  if (r.target_token.empty()) throw LlmError(ErrorKind::invalid_argument, r.request_id, "empty target token");
}

class LlmClient {
 public:
  virtual ~LlmClient() = default;

  /// log P(target_token | prompt), always <= 0.
  virtual double score_token(const TokenScoreRequest& req) = 0;
  virtual SequenceNllResponse sequence_nll(const SequenceNllRequest& req) = 0;

  virtual const std::string& model() const = 0;
  virtual std::size_t max_in_flight() const = 0;
};

// ---------------------------------------------------------------------------

/// Deterministic stand-in. logprob = -(hash(prompt, target) mapped to (0, 5]);
/// sequence NLL uses one whitespace-delimited word per token and a per-token
/// NLL in (0, 5] derived from the text hash.
class MockLlmClient final : public LlmClient {
 public:
  explicit MockLlmClient(std::string model = "mock", std::size_t max_in_flight = 8)
      : model_(std::move(model)), max_in_flight_(max_in_flight) {}

  static double mock_logprob(std::string_view prompt, std::string_view target) {
    const std::uint64_t h = hash_combine(stable_hash(prompt), stable_hash(target));
    return -unit_to_half_open_five(h);
  }

  static SequenceNllResponse mock_nll(std::string_view text) {
    SequenceNllResponse r;
    r.token_count = word_count(text);
    r.nll = unit_to_half_open_five(stable_hash(text)) * static_cast<double>(r.token_count);
    return r;
  }

  static std::uint64_t word_count(std::string_view text) {
    std::uint64_t n = 0;
    bool in_word = false;
    for (unsigned char c : text) {
      const bool space = std::isspace(c) != 0;
      if (!space && !in_word) ++n;
      in_word = !space;
    }
    return n;
  }

  double score_token(const TokenScoreRequest& req) override {
    validate(req);
    return mock_logprob(req.prompt, req.target_token);
  }

  SequenceNllResponse sequence_nll(const SequenceNllRequest& req) override {
    if (is_blank(req.text)) throw LlmError(ErrorKind::invalid_argument, req.request_id, "empty text");
    return mock_nll(req.text);
  }

  const std::string& model() const override { return model_; }
  std::size_t max_in_flight() const override { return max_in_flight_; }

 private:
  // (0, 5]: 5 * (1 - u) with u uniform on [0, 1).
  static double unit_to_half_open_five(std::uint64_t h) {
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return 5.0 * (1.0 - u);
  }

  std::string model_;
  std::size_t max_in_flight_;
};

// ---------------------------------------------------------------------------

class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(ClientConfig config) : config_(std::move(config)) {
    validate(config_);
    if (config_.endpoint.empty()) throw Error(ErrorKind::invalid_argument, "endpoint is required");
    if (config_.api_token.empty())
      if (const char* tok = std::getenv(kApiTokenEnv)) config_.api_token = tok;
  }

  const ClientConfig& config() const noexcept { return config_; }
  const std::string& model() const override { return config_.model; }
  std::size_t max_in_flight() const override { return config_.max_in_flight; }

  double score_token(const TokenScoreRequest& req) override {
    validate(req);
    nlohmann::json body = {
        {"id", req.request_id}, {"model", config_.model}, {"prompt", req.prompt}, {"target", req.target_token}};
    const auto j = post_with_retries("/v1/token_score", req.request_id, body);
    if (!j.contains("logprob") || !j["logprob"].is_number())
      throw LlmError(ErrorKind::protocol, req.request_id, "response lacks numeric 'logprob'");
    const double lp = j["logprob"].get<double>();
    if (!std::isfinite(lp)) throw LlmError(ErrorKind::protocol, req.request_id, "non-finite logprob");
    if (lp > 0.0)
      throw LlmError(ErrorKind::protocol, req.request_id,
                     "logprob " + std::to_string(lp) + " is positive; probabilities cannot exceed 1");
    return lp;
  }

  SequenceNllResponse sequence_nll(const SequenceNllRequest& req) override {
    if (is_blank(req.text)) throw LlmError(ErrorKind::invalid_argument, req.request_id, "empty text");
    nlohmann::json body = {{"id", req.request_id}, {"model", config_.model}, {"text", req.text}};
    const auto j = post_with_retries("/v1/sequence_nll", req.request_id, body);
    if (!j.contains("nll") || !j["nll"].is_number() || !j.contains("token_count") ||
        !j["token_count"].is_number_integer())
      throw LlmError(ErrorKind::protocol, req.request_id, "response lacks 'nll' / 'token_count'");
    SequenceNllResponse r;
    r.nll = j["nll"].get<double>();
    const auto tokens = j["token_count"].get<std::int64_t>();
    if (!std::isfinite(r.nll) || r.nll < 0.0)
      throw LlmError(ErrorKind::protocol, req.request_id, "nll must be finite and nonnegative");
    if (tokens < 1) throw LlmError(ErrorKind::protocol, req.request_id, "token_count must be at least 1");
    r.token_count = static_cast<std::uint64_t>(tokens);
    return r;
  }

 private:
  static bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

  nlohmann::json post_with_retries(const std::string& path, const std::string& request_id,
                                   const nlohmann::json& body) {
    const std::string payload = body.dump();
    auto backoff = config_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
      std::optional<LlmError> failure;
      httplib::Client cli(config_.endpoint);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
      cli.set_connection_timeout(secs.count(), usecs.count());
      cli.set_read_timeout(secs.count(), usecs.count());
      cli.set_write_timeout(secs.count(), usecs.count());
      httplib::Headers headers;
      if (!config_.api_token.empty()) headers.emplace("Authorization", "Bearer " + config_.api_token);
      auto res = cli.Post(path, headers, payload, "application/json");
      if (!res) {
        failure.emplace(ErrorKind::transport, request_id, "transport failure: " + httplib::to_string(res.error()));
      } else if (res->status < 200 || res->status >= 300) {
        LlmError err(ErrorKind::service, request_id,
                     "service returned HTTP " + std::to_string(res->status) + ": " + res->body, res->status);
        if (!retryable_status(res->status)) throw err;
        failure.emplace(std::move(err));
      } else {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw LlmError(ErrorKind::protocol, request_id, std::string("malformed response: ") + e.what());
        }
        if (!j.is_object()) throw LlmError(ErrorKind::protocol, request_id, "response is not an object");
        if (j.contains("id") && (!j["id"].is_string() || j["id"].get<std::string>() != request_id))
          throw LlmError(ErrorKind::protocol, request_id, "response id does not match request id");
        return j;
      }
      if (attempt >= config_.max_retries) throw *failure;
      std::this_thread::sleep_for(backoff);
      backoff = std::min(config_.max_backoff,
                         std::chrono::milliseconds(static_cast<std::int64_t>(
                             static_cast<double>(backoff.count()) * config_.backoff_multiplier)));
    }
  }

  ClientConfig config_;
};

// ---------------------------------------------------------------------------
// Bounded-concurrency batch execution.

/// Result of one request inside a batch: either a value or an error message.
template <class T>
struct Outcome {
  std::optional<T> value;
  std::string error;

  bool ok() const noexcept { return value.has_value(); }
};

/// Runs fn(i) for i in [0, n) on at most `max_in_flight` worker threads.
/// Completion order is unspecified; results land at their input index.
template <class T, class Fn>
std::vector<Outcome<T>> run_bounded(std::size_t n, std::size_t max_in_flight, Fn&& fn) {
  std::vector<Outcome<T>> out(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        out[i].value = fn(i);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, std::max<std::size_t>(n, 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  return out;
}

inline std::vector<Outcome<double>> score_tokens(LlmClient& client, std::span<const TokenScoreRequest> reqs) {
  return run_bounded<double>(reqs.size(), client.max_in_flight(),
                             [&](std::size_t i) { return client.score_token(reqs[i]); });
}

inline std::vector<Outcome<SequenceNllResponse>> sequence_nlls(LlmClient& client,
                                                               std::span<const SequenceNllRequest> reqs) {
  return run_bounded<SequenceNllResponse>(reqs.size(), client.max_in_flight(),
                                          [&](std::size_t i) { return client.sequence_nll(reqs[i]); });
}

}  // namespace curator
