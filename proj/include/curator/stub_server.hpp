#pragma once

// In-process HTTP stub implementing the scoring wire protocol. Used by the
// test suites and by tools/curator_stub_server. By default it answers with
// the same values as MockLlmClient, and it can inject transient failures
// and latency while recording peak request concurrency.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "curator/error.hpp"
#include "curator/llm_client.hpp"

namespace curator {

struct StubOptions {
  std::function<double(const std::string& prompt, const std::string& target)> logprob =
      [](const std::string& p, const std::string& t) { return MockLlmClient::mock_logprob(p, t); };
  std::function<SequenceNllResponse(const std::string& text)> nll = [](const std::string& text) {
    return MockLlmClient::mock_nll(text);
  };
  // Artificial service latency per request.
  std::chrono::milliseconds delay{0};
  // When n > 0, the first attempt of every n-th distinct request id gets a 503.
  std::size_t fail_every_nth = 0;
  // Required bearer token; empty disables the check.
  std::string required_token;
  std::size_t worker_threads = 32;
};

class StubLlmServer {
 public:
  explicit StubLlmServer(StubOptions options = {}) : options_(std::move(options)) {
    const std::size_t workers = options_.worker_threads;
    server_.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
    server_.Post("/v1/token_score", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const nlohmann::json& body, nlohmann::json& out) {
        const auto prompt = body.at("prompt").get<std::string>();
        const auto target = body.at("target").get<std::string>();
        out["logprob"] = options_.logprob(prompt, target);
      });
    });
    server_.Post("/v1/sequence_nll", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const nlohmann::json& body, nlohmann::json& out) {
        const auto r = options_.nll(body.at("text").get<std::string>());
        out["nll"] = r.nll;
        out["token_count"] = r.token_count;
      });
    });
  }

  StubLlmServer(const StubLlmServer&) = delete;
  StubLlmServer& operator=(const StubLlmServer&) = delete;

  ~StubLlmServer() { stop(); }

  /// Binds to `port` (0 picks a free port) and starts serving in the background.
  void start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error(ErrorKind::io, "stub server could not bind " + host);
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  /// Blocks until stop() is called from another thread or a signal handler.
  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const { return "http://" + host_ + ":" + std::to_string(port_); }
  int port() const noexcept { return port_; }

  std::size_t peak_in_flight() const noexcept { return peak_in_flight_.load(); }
  std::size_t total_requests() const noexcept { return total_requests_.load(); }
  std::size_t injected_failures() const noexcept { return injected_failures_.load(); }

 private:
  template <class Fill>
  void handle(const httplib::Request& req, httplib::Response& res, Fill fill) {
    const std::size_t now = ++in_flight_;
    for (std::size_t peak = peak_in_flight_.load(); now > peak && !peak_in_flight_.compare_exchange_weak(peak, now);) {
    }
    ++total_requests_;
    struct Leave {
      std::atomic<std::size_t>& n;
      ~Leave() { --n; }
    } leave{in_flight_};

    if (options_.delay.count() > 0) std::this_thread::sleep_for(options_.delay);

    if (!options_.required_token.empty() &&
        req.get_header_value("Authorization") != "Bearer " + options_.required_token) {
      res.status = 401;
      res.set_content(R"({"error":"unauthorized"})", "application/json");
      return;
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content(R"({"error":"malformed body"})", "application/json");
      return;
    }
    const std::string id = body.value("id", std::string{});
    if (should_fail(id)) {
      ++injected_failures_;
      res.status = 503;
      res.set_content(R"({"error":"transient"})", "application/json");
      return;
    }
    nlohmann::json out;
    out["id"] = id;
    try {
      fill(body, out);
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    res.set_content(out.dump(), "application/json");
  }

  bool should_fail(const std::string& id) {
    if (options_.fail_every_nth == 0) return false;
    std::lock_guard lock(mutex_);
    auto [it, inserted] = attempts_.try_emplace(id, 0);
    ++it->second;
    if (!inserted) return false;
    return attempts_.size() % options_.fail_every_nth == 0;
  }

  StubOptions options_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_;
  int port_ = -1;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> peak_in_flight_{0};
  std::atomic<std::size_t> total_requests_{0};
  std::atomic<std::size_t> injected_failures_{0};
  std::mutex mutex_;
  std::unordered_map<std::string, int> attempts_;
};

}  // namespace curator
