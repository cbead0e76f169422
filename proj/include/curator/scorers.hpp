#pragma once

// Scorers turn examples (or their embeddings) into ScoreRecords. Every
// scorer follows "higher means keep" under its own convention:
//   askllm      P("yes" | prompt) in (0, 1]
//   perplexity  -exp(nll / tokens), i.e. negated perplexity, <= -1
//   density     raw sketch score; a coverage signal that samplers invert

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "curator/corpus.hpp"
#include "curator/error.hpp"
#include "curator/kde_sketch.hpp"
#include "curator/llm_client.hpp"
#include "curator/lsh.hpp"
#include "curator/random.hpp"

namespace curator {

inline std::string hex64(std::uint64_t v, int digits = 16) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf + (16 - digits));
}

// ---------------------------------------------------------------------------
// Prompting

inline constexpr std::string_view kDefaultPromptTemplate =
    "This is a pretraining datapoint: ### {text} ###. Does the previous paragraph contain informative "
    "content that could help train a large language model? Answer yes or no.";

struct PromptTemplate {
  std::string text{kDefaultPromptTemplate};
  std::string placeholder = "{text}";
  // Example text longer than this many characters (code points) is cut and
  // followed by `ellipsis`.
  std::size_t max_chars = 4000;
  std::string ellipsis = "...";
};

struct RenderedPrompt {
  std::string prompt;
  bool truncated = false;
};

inline void validate(const PromptTemplate& t) {
  if (t.placeholder.empty()) throw Error(ErrorKind::invalid_argument, "prompt template: empty placeholder");
  const auto first = t.text.find(t.placeholder);
  if (first == std::string::npos)
    throw Error(ErrorKind::invalid_argument, "prompt template lacks placeholder " + t.placeholder);
  if (t.text.find(t.placeholder, first + t.placeholder.size()) != std::string::npos)
    throw Error(ErrorKind::invalid_argument, "prompt template repeats placeholder " + t.placeholder);
  if (t.max_chars == 0) throw Error(ErrorKind::invalid_argument, "prompt template: max_chars must be positive");
}

inline std::uint64_t template_hash(const PromptTemplate& t) {
  std::uint64_t h = stable_hash(t.text);
  h = hash_combine(h, stable_hash(t.placeholder));
  h = hash_combine(h, t.max_chars);
  return hash_combine(h, stable_hash(t.ellipsis));
}

/// Number of UTF-8 code points (continuation bytes are not counted).
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

/// Byte offset just past the first `chars` code points.
inline std::size_t utf8_prefix_bytes(std::string_view s, std::size_t chars) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
      if (seen == chars) return i;
      ++seen;
    }
  }
  return s.size();
}

inline RenderedPrompt make_prompt(const PromptTemplate& t, const ExampleRecord& example) {
  validate(t);
  if (is_blank(example.text))
    throw Error(ErrorKind::invalid_argument, "example '" + example.id + "' has empty text");
  RenderedPrompt out;
  std::string_view body = example.text;
  std::string cut;
  if (utf8_length(body) > t.max_chars) {
    cut.assign(body.substr(0, utf8_prefix_bytes(body, t.max_chars)));
    cut += t.ellipsis;
    body = cut;
    out.truncated = true;
  }
  const auto at = t.text.find(t.placeholder);
  out.prompt.reserve(t.text.size() + body.size());
  out.prompt.append(t.text, 0, at);
  out.prompt.append(body);
  out.prompt.append(t.text, at + t.placeholder.size());
  return out;
}

// ---------------------------------------------------------------------------
// Scorer ids

inline std::string askllm_scorer_id(const std::string& model, const PromptTemplate& t) {
  return "askllm/" + model + "@" + hex64(template_hash(t), 8);
}

inline std::string perplexity_scorer_id(const std::string& model) { return "perplexity/" + model; }

inline std::string density_scorer_id(const HashFamilySpec& spec, bool normalized) {
  return std::string("density/") + to_string(spec.kind) + (normalized ? "-l2norm" : "") + "@" +
         hex64(spec_hash(spec));
}

namespace detail {

inline ScoreRecord unscored(std::string id, const std::string& scorer_id, std::string error) {
  ScoreRecord r;
  r.id = std::move(id);
  r.scorer_id = scorer_id;
  r.status = ScoreStatus::unscored;
  r.error = std::move(error);
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ask-LLM

struct AskLlmOptions {
  std::string target_token = "yes";
};

/// One record per example, in input order. Examples whose request fails
/// (after the client's retries) come back with status unscored.
inline std::vector<ScoreRecord> askllm_score_all(LlmClient& client, const PromptTemplate& t,
                                                 std::span<const ExampleRecord> examples,
                                                 const AskLlmOptions& options = {}) {
  validate(t);
  const std::string scorer_id = askllm_scorer_id(client.model(), t);
  std::vector<ScoreRecord> out(examples.size());
  std::vector<TokenScoreRequest> requests;
  std::vector<std::size_t> slot;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    try {
      auto rendered = make_prompt(t, examples[i]);
      requests.push_back({examples[i].id, std::move(rendered.prompt), options.target_token});
      slot.push_back(i);
    } catch (const Error& e) {
      out[i] = detail::unscored(examples[i].id, scorer_id, e.what());
    }
  }
  const auto results = score_tokens(client, requests);
  for (std::size_t j = 0; j < results.size(); ++j) {
    const auto i = slot[j];
    if (!results[j].ok()) {
      out[i] = detail::unscored(examples[i].id, scorer_id, results[j].error);
      continue;
    }
    out[i].id = examples[i].id;
    out[i].scorer_id = scorer_id;
    out[i].raw_score = std::exp(*results[j].value);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Perplexity

/// Negated perplexity, natural log throughout.
inline double negated_perplexity(double total_nll, std::uint64_t tokens) {
  if (tokens == 0) throw Error(ErrorKind::invalid_argument, "perplexity needs at least one token");
  return -std::exp(total_nll / static_cast<double>(tokens));
}

inline std::vector<ScoreRecord> perplexity_score_all(LlmClient& client, std::span<const ExampleRecord> examples) {
  const std::string scorer_id = perplexity_scorer_id(client.model());
  std::vector<SequenceNllRequest> requests;
  requests.reserve(examples.size());
  for (const auto& e : examples) requests.push_back({e.id, e.text});
  const auto results = sequence_nlls(client, requests);
  std::vector<ScoreRecord> out(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!results[i].ok()) {
      out[i] = detail::unscored(examples[i].id, scorer_id, results[i].error);
      continue;
    }
    out[i].id = examples[i].id;
    out[i].scorer_id = scorer_id;
    out[i].raw_score = negated_perplexity(results[i].value->nll, results[i].value->token_count);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Density

struct DensityOptions {
  std::size_t threads = default_threads();
  // Embeddings hashed per parallel batch; bounds auxiliary memory.
  std::size_t batch = 4096;
};

inline void l2_normalize(std::vector<float>& v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (sq == 0.0) return;
  const double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
}

namespace detail {

/// Streams one embedding shard in batches, calling fn(records, buckets)
/// where buckets is row-major [records x rows].
template <class Fn>
void for_each_hashed_batch(const HashFamily& family, const ShardInfo& shard, std::uint32_t dimension,
                           bool normalize, const DensityOptions& opt, Fn&& fn) {
  EmbeddingShardReader reader(shard.path, dimension);
  if (reader.count() != shard.records)
    throw Error(ErrorKind::format, shard.path.string() + ": manifest says " + std::to_string(shard.records) +
                                       " records, header says " + std::to_string(reader.count()));
  std::vector<EmbeddingRecord> batch;
  std::vector<std::vector<float>> vectors;
  auto flush = [&] {
    if (batch.empty()) return;
    vectors.clear();
    for (auto& r : batch) vectors.push_back(std::move(r.vector));
    const auto buckets = hash_batch(family, vectors, opt.threads);
    fn(std::span<const EmbeddingRecord>(batch), std::span<const std::uint32_t>(buckets));
    batch.clear();
  };
  while (auto rec = reader.next()) {
    if (normalize) l2_normalize(rec->vector);
    batch.push_back(std::move(*rec));
    if (batch.size() >= std::max<std::size_t>(opt.batch, 1)) flush();
  }
  flush();
}

}  // namespace detail

/// Pass 1 over one shard: a private sketch holding only that shard.
inline KdeSketch sketch_shard(std::shared_ptr<const HashFamily> family, const ShardInfo& shard,
                              std::uint32_t dimension, bool normalize, const DensityOptions& opt = {}) {
  KdeSketch sketch(family);
  const std::size_t r = family->rows();
  detail::for_each_hashed_batch(*family, shard, dimension, normalize, opt,
                                [&](std::span<const EmbeddingRecord> recs, std::span<const std::uint32_t> buckets) {
                                  for (std::size_t i = 0; i < recs.size(); ++i)
                                    sketch.add_buckets(buckets.subspan(i * r, r));
                                });
  return sketch;
}

/// Pass 2 over one shard: raw sketch score for every record, in file order.
inline std::vector<ScoreRecord> score_shard(const KdeSketch& sketch, const ShardInfo& shard, std::uint32_t dimension,
                                            bool normalize, const std::string& scorer_id,
                                            const DensityOptions& opt = {}) {
  std::vector<ScoreRecord> out;
  const std::size_t r = sketch.rows();
  detail::for_each_hashed_batch(sketch.family(), shard, dimension, normalize, opt,
                                [&](std::span<const EmbeddingRecord> recs, std::span<const std::uint32_t> buckets) {
                                  for (std::size_t i = 0; i < recs.size(); ++i) {
                                    ScoreRecord s;
                                    s.id = recs[i].id;
                                    s.scorer_id = scorer_id;
                                    s.raw_score = sketch.score_buckets(buckets.subspan(i * r, r));
                                    out.push_back(std::move(s));
                                  }
                                });
  return out;
}

struct DensityResult {
  std::vector<ScoreRecord> scores;
  KdeSketch sketch;
};

/// Two linear passes: build the sketch from every shard (per-shard sketches
/// merged in shard order), then score every embedding against it.
inline DensityResult density_score_all(const CorpusManifest& manifest, const HashFamilySpec& spec,
                                       const DensityOptions& opt = {}) {
  if (manifest.embedding_shards.empty() || manifest.embedding_record_count() == 0)
    throw Error(ErrorKind::empty_input, "density scoring: manifest has no embeddings");
  if (manifest.dimension != spec.dimension)
    throw Error(ErrorKind::dimension_mismatch, "density scoring: manifest dimension " +
                                                   std::to_string(manifest.dimension) + " but spec dimension " +
                                                   std::to_string(spec.dimension));
  auto family = std::make_shared<const HashFamily>(spec);
  KdeSketch sketch(family);
  for (const auto& shard : manifest.embedding_shards)
    sketch.merge_from(sketch_shard(family, shard, manifest.dimension, manifest.normalize_embeddings, opt));
  const std::string scorer_id = density_scorer_id(spec, manifest.normalize_embeddings);
  std::vector<ScoreRecord> scores;
  scores.reserve(sketch.size());
  for (const auto& shard : manifest.embedding_shards) {
    auto part = score_shard(sketch, shard, manifest.dimension, manifest.normalize_embeddings, scorer_id, opt);
    std::move(part.begin(), part.end(), std::back_inserter(scores));
  }
  return {std::move(scores), std::move(sketch)};
}

/// Median-heuristic bandwidth for a manifest: draws a seeded subsample of at
/// most `subsample` embeddings (keyed by id, so independent of shard layout)
/// and returns their median pairwise distance.
inline double estimate_bandwidth(const CorpusManifest& manifest, std::size_t subsample = 1000,
                                 std::uint64_t seed = 0) {
  struct Keyed {
    std::uint64_t key;
    std::string id;
    std::vector<float> vec;
  };
  std::vector<Keyed> keep;
  auto cmp = [](const Keyed& a, const Keyed& b) { return a.key != b.key ? a.key < b.key : a.id < b.id; };
  auto stream = load_embeddings(manifest);
  while (auto rec = stream.next()) {
    if (manifest.normalize_embeddings) l2_normalize(rec->vector);
    Keyed k{hash_combine(seed, stable_hash(rec->id)), std::move(rec->id), std::move(rec->vector)};
    if (keep.size() < subsample) {
      keep.push_back(std::move(k));
      std::push_heap(keep.begin(), keep.end(), cmp);
    } else if (cmp(k, keep.front())) {
      std::pop_heap(keep.begin(), keep.end(), cmp);
      keep.back() = std::move(k);
      std::push_heap(keep.begin(), keep.end(), cmp);
    }
  }
  std::sort(keep.begin(), keep.end(), cmp);
  std::vector<std::vector<float>> points;
  points.reserve(keep.size());
  for (auto& k : keep) points.push_back(std::move(k.vec));
  return median_pairwise_distance(points, subsample, seed);
}

}  // namespace curator
