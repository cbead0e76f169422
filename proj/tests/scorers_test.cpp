#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "curator/scorers.hpp"
#include "curator/stub_server.hpp"
#include "fixtures.hpp"

using namespace curator;
using namespace std::chrono_literals;
using curator::testing::make_examples;
using curator::testing::square_blob;
using curator::testing::TempDir;
using curator::testing::write_embedding_corpus;

namespace {

// Client returning fixed values, for arithmetic checks.
class FixedClient final : public LlmClient {
 public:
  FixedClient(double logprob, SequenceNllResponse nll) : logprob_(logprob), nll_(nll) {}
  double score_token(const TokenScoreRequest&) override { return logprob_; }
  SequenceNllResponse sequence_nll(const SequenceNllRequest&) override { return nll_; }
  const std::string& model() const override { return model_; }
  std::size_t max_in_flight() const override { return 2; }

 private:
  double logprob_;
  SequenceNllResponse nll_;
  std::string model_ = "fixed";
};

ClientConfig stub_config(const StubLlmServer& s, int retries) {
  ClientConfig c;
  c.endpoint = s.endpoint();
  c.model = "stub";
  c.max_retries = retries;
  c.initial_backoff = 1ms;
  c.max_backoff = 4ms;
  return c;
}

HashFamilySpec euclid(std::uint32_t d, double bw, std::uint32_t rows, std::uint32_t range, std::uint64_t seed) {
  return {HashKind::euclidean_pstable, d, bw, rows, range, seed};
}

}  // namespace

TEST(Prompt, Substitution) {
  PromptTemplate t;
  t.text = "### {X} ### Keep? yes/no";
  t.placeholder = "{X}";
  const auto r = make_prompt(t, {"a", "hello", {}});
  EXPECT_EQ(r.prompt, "### hello ### Keep? yes/no");
  EXPECT_FALSE(r.truncated);
}

TEST(Prompt, DefaultTemplateCarriesText) {
  const auto r = make_prompt(PromptTemplate{}, {"a", "Some paragraph.", {}});
  EXPECT_NE(r.prompt.find("### Some paragraph. ###"), std::string::npos);
  EXPECT_NE(r.prompt.find("Answer yes or no."), std::string::npos);
}

TEST(Prompt, TruncationStaysWithinBudget) {
  PromptTemplate t;
  t.text = "{text}";
  t.max_chars = 10;
  const auto r = make_prompt(t, {"a", std::string(50, 'z'), {}});
  EXPECT_TRUE(r.truncated);
  EXPECT_LE(r.prompt.size(), t.max_chars + t.ellipsis.size());
  EXPECT_EQ(r.prompt, std::string(10, 'z') + "...");

  // Multi-byte code points are never split.
  const auto u = make_prompt(t, {"b", "ééééééééééééé", {}});
  EXPECT_EQ(utf8_length(u.prompt), 13u);
  EXPECT_EQ(u.prompt, "éééééééééé...");
}

TEST(Prompt, RandomTextsAppearVerbatim) {
  CounterRng rng(10);
  PromptTemplate t;
  for (int i = 0; i < 50; ++i) {
    std::string text;
    const std::size_t len = 1 + rng.next_u64() % 300;
    for (std::size_t j = 0; j < len; ++j) text += static_cast<char>('!' + rng.next_u64() % 94);
    const auto r = make_prompt(t, {"r", text, {}});
    EXPECT_NE(r.prompt.find(text), std::string::npos);
  }
}

TEST(Prompt, InvalidTemplatesAndText) {
  PromptTemplate none;
  none.text = "no placeholder";
  EXPECT_THROW(make_prompt(none, {"a", "x", {}}), Error);
  PromptTemplate twice;
  twice.text = "{text} and {text}";
  EXPECT_THROW(make_prompt(twice, {"a", "x", {}}), Error);
  EXPECT_THROW(make_prompt(PromptTemplate{}, {"a", "   ", {}}), Error);
}

TEST(ScorerIds, CarryProvenance) {
  PromptTemplate t;
  EXPECT_EQ(askllm_scorer_id("flan", t).rfind("askllm/flan@", 0), 0u);
  PromptTemplate other = t;
  other.max_chars = 100;
  EXPECT_NE(askllm_scorer_id("flan", t), askllm_scorer_id("flan", other));
  EXPECT_EQ(perplexity_scorer_id("t5-small"), "perplexity/t5-small");
  const auto spec = euclid(4, 1.0, 10, 20, 1);
  EXPECT_NE(density_scorer_id(spec, false), density_scorer_id(euclid(4, 1.0, 10, 20, 2), false));
  EXPECT_NE(density_scorer_id(spec, true).find("-l2norm"), std::string::npos);
}

TEST(AskLlm, ScoreIsExpOfLogprob) {
  FixedClient client(-0.105360516, {1.0, 1});
  const auto ex = make_examples(1);
  const auto s = askllm_score_all(client, PromptTemplate{}, ex);
  EXPECT_NEAR(s[0].raw_score, 0.9, 1e-9);
}

TEST(AskLlm, PreservesIdsAndOrder) {
  MockLlmClient mock;
  const auto ex = make_examples(2);
  const auto s = askllm_score_all(mock, PromptTemplate{}, ex);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].id, "x0");
  EXPECT_EQ(s[1].id, "x1");
  for (std::size_t i = 0; i < 2; ++i) {
    const auto prompt = make_prompt(PromptTemplate{}, ex[i]).prompt;
    EXPECT_EQ(s[i].raw_score, std::exp(MockLlmClient::mock_logprob(prompt, "yes")));
    EXPECT_GT(s[i].raw_score, 0.0);
    EXPECT_LE(s[i].raw_score, 1.0);
    EXPECT_EQ(s[i].status, ScoreStatus::scored);
  }
}

TEST(AskLlm, BlankExampleIsUnscoredAndRunContinues) {
  MockLlmClient mock;
  std::vector<ExampleRecord> ex{{"a", "fine", {}}, {"b", " ", {}}, {"c", "also fine", {}}};
  const auto s = askllm_score_all(mock, PromptTemplate{}, ex);
  EXPECT_EQ(s[0].status, ScoreStatus::scored);
  EXPECT_EQ(s[1].status, ScoreStatus::unscored);
  EXPECT_EQ(s[1].id, "b");
  EXPECT_FALSE(s[1].error.empty());
  EXPECT_EQ(s[2].status, ScoreStatus::scored);
}

TEST(AskLlm, FaultInjectionAgainstStub) {
  StubOptions opt;
  opt.fail_every_nth = 10;
  const auto ex = make_examples(200);
  std::size_t first_pass = 0;
  {
    StubLlmServer stub(opt);
    stub.start();
    HttpLlmClient client(stub_config(stub, 0));
    const auto s = askllm_score_all(client, PromptTemplate{}, ex);
    ASSERT_EQ(s.size(), 200u);
    for (const auto& r : s) first_pass += r.status == ScoreStatus::scored;
    EXPECT_EQ(stub.injected_failures(), 20u);
  }
  EXPECT_GE(first_pass, 180u);
  StubLlmServer stub(opt);
  stub.start();
  HttpLlmClient client(stub_config(stub, 3));
  const auto s = askllm_score_all(client, PromptTemplate{}, ex);
  ASSERT_EQ(s.size(), 200u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    ASSERT_EQ(s[i].status, ScoreStatus::scored) << s[i].error;
    EXPECT_EQ(s[i].id, ex[i].id);
  }
}

TEST(Perplexity, Arithmetic) {
  FixedClient certain(0.0, {0.0, 7});
  const auto ex = make_examples(3);
  for (const auto& r : perplexity_score_all(certain, ex)) EXPECT_EQ(r.raw_score, -1.0);
  FixedClient two_over_four(0.0, {2.0, 4});
  const auto s = perplexity_score_all(two_over_four, ex);
  EXPECT_NEAR(s[0].raw_score, -std::exp(0.5), 1e-12);
  EXPECT_NEAR(s[0].raw_score, -1.6487, 1e-4);
}

TEST(Perplexity, StubNllDownstream) {
  StubOptions opt;
  opt.nll = [](const std::string&) { return SequenceNllResponse{2.0, 4}; };
  StubLlmServer stub(opt);
  stub.start();
  HttpLlmClient client(stub_config(stub, 0));
  const auto s = perplexity_score_all(client, make_examples(5));
  for (const auto& r : s) EXPECT_NEAR(r.raw_score, -std::exp(0.5), 1e-12);
}

TEST(Perplexity, LowerMeanNllScoresHigher) {
  CounterRng rng(12);
  for (int i = 0; i < 500; ++i) {
    const std::uint64_t ta = 1 + rng.next_u64() % 500, tb = 1 + rng.next_u64() % 500;
    const double na = rng.uniform() * 5.0 * ta, nb = rng.uniform() * 5.0 * tb;
    if (na / ta < nb / tb) {
      EXPECT_GT(negated_perplexity(na, ta), negated_perplexity(nb, tb));
    }
  }
}

TEST(Density, SingleVectorScoresOne) {
  TempDir dir("density");
  const auto m = write_embedding_corpus(dir.path(), {{0.5f, -1.0f, 2.0f}}, 1);
  const auto r = density_score_all(m, euclid(3, 1.0, 50, 100, 1));
  ASSERT_EQ(r.scores.size(), 1u);
  EXPECT_EQ(r.scores[0].raw_score, 1.0);
  EXPECT_EQ(r.sketch.size(), 1u);
}

TEST(Density, DuplicatingEveryVectorDoublesScores) {
  TempDir a("density"), b("density");
  const auto pts = curator::testing::gaussian_points(100, 4, 3);
  auto doubled = pts;
  doubled.insert(doubled.end(), pts.begin(), pts.end());
  const auto spec = euclid(4, 1.5, 40, 200, 7);
  const auto once = density_score_all(write_embedding_corpus(a.path(), pts, 2), spec);
  const auto twice = density_score_all(write_embedding_corpus(b.path(), doubled, 3), spec);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(twice.scores[i].raw_score, 2.0 * once.scores[i].raw_score);
    EXPECT_EQ(twice.scores[i + pts.size()].raw_score, 2.0 * once.scores[i].raw_score);
  }
}

TEST(Density, PermutationEquivariant) {
  TempDir a("density"), b("density");
  const auto pts = curator::testing::gaussian_points(120, 5, 4);
  CorpusManifest ma = write_embedding_corpus(a.path(), pts, 3);
  // Same ids, reversed order, different shard split.
  std::vector<EmbeddingRecord> rev;
  for (std::size_t i = pts.size(); i-- > 0;) rev.push_back({"e" + std::to_string(i), pts[i]});
  write_embedding_shard(b / "r.emb", rev, 5);
  CorpusManifest mb;
  mb.dimension = 5;
  mb.embedding_shards.push_back({b / "r.emb", rev.size()});
  const auto spec = euclid(5, 2.0, 30, 500, 1);
  const auto ra = density_score_all(ma, spec), rb = density_score_all(mb, spec);
  std::map<std::string, double> by_id;
  for (const auto& s : ra.scores) by_id[s.id] = s.raw_score;
  for (const auto& s : rb.scores) EXPECT_EQ(by_id.at(s.id), s.raw_score);
  EXPECT_EQ(rb.scores.front().id, "e119");
}

TEST(Density, BlobScoresTrackPopulation) {
  TempDir dir("density");
  auto pts = square_blob(1800, 0.0, 21);
  // The p-stable kernel decays like bandwidth / distance, so the blobs sit
  // far apart for the cross-blob mass to be negligible.
  const auto small = square_blob(200, 1000.0, 22);
  pts.insert(pts.end(), small.begin(), small.end());
  const auto m = write_embedding_corpus(dir.path(), pts, 2);
  const double bw = estimate_bandwidth(m, 1000, 5);
  const auto spec = euclid(2, bw, 200, 1000, 3);
  const auto r = density_score_all(m, spec);
  double big = 0, little = 0, big_oracle = 0, little_oracle = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double oracle = brute_force_kernel_sum(pts, pts[i], spec);
    (i < 1800 ? big : little) += r.scores[i].raw_score;
    (i < 1800 ? big_oracle : little_oracle) += oracle;
  }
  const double ratio = (big / 1800) / (little / 200);
  const double oracle_ratio = (big_oracle / 1800) / (little_oracle / 200);
  EXPECT_NEAR(ratio, 9.0, 9.0 * 0.2) << "oracle ratio " << oracle_ratio;
  EXPECT_NEAR(oracle_ratio, 9.0, 9.0 * 0.2);
}

TEST(Density, Errors) {
  TempDir dir("density");
  const auto m = write_embedding_corpus(dir.path(), curator::testing::gaussian_points(4, 3, 1), 1);
  EXPECT_THROW(density_score_all(m, euclid(4, 1.0, 5, 10, 0)), Error);
  EXPECT_THROW(density_score_all(CorpusManifest{}, euclid(3, 1.0, 5, 10, 0)), Error);
}
