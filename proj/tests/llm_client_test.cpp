#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "curator/llm_client.hpp"
#include "curator/stub_server.hpp"

using namespace curator;
using namespace std::chrono_literals;

namespace {

ClientConfig config_for(const StubLlmServer& s) {
  ClientConfig c;
  c.endpoint = s.endpoint();
  c.model = "stub";
  c.initial_backoff = 1ms;
  c.max_backoff = 5ms;
  c.timeout = 5000ms;
  return c;
}

template <class Fn>
LlmError llm_error_of(Fn&& fn) {
  try {
    fn();
  } catch (const LlmError& e) {
    return e;
  }
  ADD_FAILURE() << "expected LlmError";
  return LlmError(ErrorKind::invalid_argument, "", "none");
}

}  // namespace

TEST(MockClient, DeterministicAndBounded) {
  MockLlmClient mock;
  TokenScoreRequest req{"r1", "Is this good? yes or no.", "yes"};
  const double a = mock.score_token(req);
  EXPECT_EQ(a, mock.score_token(req));
  EXPECT_LE(a, 0.0);
  EXPECT_GE(a, -5.0);
  TokenScoreRequest other{"r2", "A different prompt", "yes"};
  EXPECT_NE(a, mock.score_token(other));
}

TEST(MockClient, SequenceNll) {
  MockLlmClient mock;
  const auto r = mock.sequence_nll({"s", "four words right here"});
  EXPECT_EQ(r.token_count, 4u);
  EXPECT_GT(r.nll, 0.0);
  EXPECT_EQ(r.nll, mock.sequence_nll({"s2", "four words right here"}).nll);
  EXPECT_EQ(llm_error_of([&] { mock.sequence_nll({"blank", "  \t\n"}); }).request_id(), "blank");
  EXPECT_THROW(mock.score_token({"e", "", "yes"}), LlmError);
}

TEST(HttpClient, BatchOfHundredRespectsInFlightCap) {
  StubOptions opt;
  opt.delay = 15ms;
  StubLlmServer stub(opt);
  stub.start();
  auto cfg = config_for(stub);
  cfg.max_in_flight = 8;
  HttpLlmClient client(cfg);
  std::vector<TokenScoreRequest> reqs;
  for (int i = 0; i < 100; ++i) reqs.push_back({"q" + std::to_string(i), "prompt number " + std::to_string(i), "yes"});
  const auto out = score_tokens(client, reqs);
  ASSERT_EQ(out.size(), 100u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    ASSERT_TRUE(out[i].ok()) << out[i].error;
    EXPECT_EQ(*out[i].value, MockLlmClient::mock_logprob(reqs[i].prompt, "yes"));
  }
  EXPECT_LE(stub.peak_in_flight(), 8u);
  EXPECT_GE(stub.peak_in_flight(), 2u);
  EXPECT_EQ(stub.total_requests(), 100u);
}

TEST(HttpClient, PositiveLogprobIsProtocolViolation) {
  StubOptions opt;
  opt.logprob = [](const std::string&, const std::string&) { return 0.25; };
  StubLlmServer stub(opt);
  stub.start();
  HttpLlmClient client(config_for(stub));
  const auto e = llm_error_of([&] { client.score_token({"bad", "p", "yes"}); });
  EXPECT_EQ(e.kind(), ErrorKind::protocol);
  EXPECT_EQ(e.request_id(), "bad");
  EXPECT_EQ(stub.total_requests(), 1u);  // not retried
}

TEST(HttpClient, TransientFailuresRetried) {
  StubOptions opt;
  opt.fail_every_nth = 1;  // every id fails on its first attempt
  StubLlmServer stub(opt);
  stub.start();
  auto cfg = config_for(stub);
  cfg.max_retries = 0;
  HttpLlmClient no_retry(cfg);
  const auto e = llm_error_of([&] { no_retry.score_token({"a", "p", "yes"}); });
  EXPECT_EQ(e.kind(), ErrorKind::service);
  EXPECT_EQ(e.status(), 503);

  cfg.max_retries = 2;
  HttpLlmClient with_retry(cfg);
  EXPECT_EQ(with_retry.score_token({"b", "p", "yes"}), MockLlmClient::mock_logprob("p", "yes"));
  EXPECT_EQ(stub.injected_failures(), 2u);
}

TEST(HttpClient, UnreachableEndpointIsTransportError) {
  ClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1";
  cfg.max_retries = 1;
  cfg.initial_backoff = 1ms;
  cfg.timeout = 500ms;
  HttpLlmClient client(cfg);
  const auto e = llm_error_of([&] { client.score_token({"gone", "p", "yes"}); });
  EXPECT_EQ(e.kind(), ErrorKind::transport);
  EXPECT_NE(std::string(e.what()).find("gone"), std::string::npos);
}

TEST(HttpClient, BearerToken) {
  StubOptions opt;
  opt.required_token = "s3cret";
  StubLlmServer stub(opt);
  stub.start();
  auto cfg = config_for(stub);
  cfg.api_token = "wrong";
  HttpLlmClient bad(cfg);
  const auto e = llm_error_of([&] { bad.score_token({"a", "p", "yes"}); });
  EXPECT_EQ(e.status(), 401);
  cfg.api_token = "s3cret";
  HttpLlmClient good(cfg);
  EXPECT_LE(good.score_token({"a", "p", "yes"}), 0.0);
}

TEST(HttpClient, FixedNllFromStub) {
  StubOptions opt;
  opt.nll = [](const std::string&) { return SequenceNllResponse{2.0, 4}; };
  StubLlmServer stub(opt);
  stub.start();
  HttpLlmClient client(config_for(stub));
  const auto r = client.sequence_nll({"n", "whatever text"});
  EXPECT_EQ(r.nll, 2.0);
  EXPECT_EQ(r.token_count, 4u);
  EXPECT_NEAR(std::exp(r.nll / r.token_count), std::exp(0.5), 1e-15);
}

TEST(HttpClient, InvalidConfig) {
  ClientConfig cfg;
  EXPECT_THROW(HttpLlmClient{cfg}, Error);
  cfg.endpoint = "http://127.0.0.1:9";
  cfg.max_in_flight = 0;
  EXPECT_THROW(HttpLlmClient{cfg}, Error);
}

TEST(RunBounded, ResultsLandAtInputIndex) {
  std::atomic<int> active{0}, peak{0};
  const auto out = run_bounded<int>(50, 4, [&](std::size_t i) {
    const int now = ++active;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(1ms);
    --active;
    if (i == 7) throw std::runtime_error("seven");
    return static_cast<int>(i * i);
  });
  for (std::size_t i = 0; i < 50; ++i) {
    if (i == 7) {
      EXPECT_EQ(out[i].error, "seven");
      continue;
    }
    EXPECT_EQ(*out[i].value, static_cast<int>(i * i));
  }
  EXPECT_LE(peak.load(), 4);
}
