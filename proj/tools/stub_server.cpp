// Local stand-in for a scoring service. Serves /v1/token_score and
// /v1/sequence_nll with the mock model's values until interrupted.
//
//   curator_stub_server --port 8080 [--delay-ms 5] [--fail-every 10]

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "curator/stub_server.hpp"

namespace {
curator::StubLlmServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stub LLM scoring service"};
  std::string host = "127.0.0.1";
  int port = 8080;
  long delay_ms = 0;
  std::size_t fail_every = 0;
  app.add_option("--host", host, "Bind address")->capture_default_str();
  app.add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();
  app.add_option("--delay-ms", delay_ms, "Artificial latency per request");
  app.add_option("--fail-every", fail_every, "503 on the first attempt of every n-th request id");
  CLI11_PARSE(app, argc, argv);

  curator::StubOptions opts;
  opts.delay = std::chrono::milliseconds(delay_ms);
  opts.fail_every_nth = fail_every;
  if (const char* tok = std::getenv(curator::kApiTokenEnv)) opts.required_token = tok;
  curator::StubLlmServer server(opts);
  try {
    server.start(host, port);
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << server.endpoint() << std::endl;
  server.wait();
  return 0;
}
