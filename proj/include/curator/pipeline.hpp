#pragma once

// Pipeline steps behind the command-line tool. Each step reads its inputs,
// writes everything under one output directory and never modifies inputs.
//
// Scoring steps are resumable per shard. Progress is recorded in
// <out>/progress.ledger (one completed step per line, preceded by a
// fingerprint of the job settings); intermediate artifacts live in
// <out>/work/. A resumed run skips completed steps and produces the same
// bytes as an uninterrupted one.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "curator/analysis.hpp"
#include "curator/corpus.hpp"
#include "curator/error.hpp"
#include "curator/kde_sketch.hpp"
#include "curator/llm_client.hpp"
#include "curator/samplers.hpp"
#include "curator/scorers.hpp"

namespace curator::pipeline {

namespace fs = std::filesystem;

/// Test hook: when set to n, the process stops with kInterruptedExit after
/// n steps have been committed to the ledger in this invocation.
inline constexpr const char* kAbortAfterStepsEnv = "CURATOR_ABORT_AFTER_STEPS";
inline constexpr int kInterruptedExit = 75;

class Interrupted : public Error {
 public:
  Interrupted() : Error(ErrorKind::io, "interrupted by " + std::string(kAbortAfterStepsEnv)) {}
};

class ProgressLedger {
 public:
  ProgressLedger(const fs::path& out_dir, const std::string& fingerprint, bool resume)
      : path_(out_dir / "progress.ledger"), work_(out_dir / "work") {
    if (const char* n = std::getenv(kAbortAfterStepsEnv)) abort_after_ = std::strtoll(n, nullptr, 10);
    if (resume && fs::exists(path_)) {
      std::ifstream in(path_);
      std::string line;
      std::getline(in, line);
      if (line != "fingerprint " + fingerprint)
        throw Error(ErrorKind::invalid_argument,
                    "cannot resume: " + path_.string() + " was written by a run with different settings");
      while (std::getline(in, line))
        if (!line.empty()) done_.insert(line);
    } else {
      fs::remove_all(work_);
      std::ofstream out(path_, std::ios::trunc);
      out << "fingerprint " << fingerprint << '\n';
      if (!out) throw Error(ErrorKind::io, "cannot write " + path_.string());
    }
    fs::create_directories(work_);
  }

  bool done(const std::string& step) const { return done_.count(step) != 0; }

  void mark(const std::string& step) {
    {
      std::ofstream out(path_, std::ios::app);
      out << step << '\n';
      out.flush();
      if (!out) throw Error(ErrorKind::io, "cannot append to " + path_.string());
    }
    done_.insert(step);
    if (abort_after_ >= 0 && ++committed_ >= abort_after_) throw Interrupted();
  }

  const fs::path& work_dir() const noexcept { return work_; }

 private:
  fs::path path_;
  fs::path work_;
  std::set<std::string> done_;
  long long abort_after_ = -1;
  long long committed_ = 0;
};

/// Write to a sibling temp file, then rename into place.
template <class WriteFn>
void write_atomically(const fs::path& path, WriteFn&& write) {
  fs::path tmp = path;
  tmp += ".tmp";
  write(tmp);
  fs::rename(tmp, path);
}

inline std::vector<ScoreRecord> with_percentiles(std::vector<ScoreRecord> scores) {
  if (scores.empty()) return scores;
  return compute_percentiles(scores);
}

// ---------------------------------------------------------------------------
// score-density

struct DensityJob {
  fs::path manifest;
  fs::path out_dir;
  HashKind kind = HashKind::euclidean_pstable;
  std::uint32_t rows = 1000;
  std::uint32_t range = 20000;
  std::optional<double> bandwidth;  // median heuristic when absent
  std::uint64_t seed = 0;
  bool resume = false;
  std::size_t threads = default_threads();
};

struct DensityOutcome {
  fs::path scores;
  fs::path sketch;
  HashFamilySpec spec;
  std::size_t records = 0;
};

inline DensityOutcome run_score_density(const DensityJob& job) {
  const CorpusManifest manifest = load_manifest(job.manifest);
  if (manifest.embedding_shards.empty() || manifest.embedding_record_count() == 0)
    throw Error(ErrorKind::empty_input, "manifest lists no embeddings");
  fs::create_directories(job.out_dir);

  HashFamilySpec spec;
  spec.kind = job.kind;
  spec.dimension = manifest.dimension;
  spec.rows = job.rows;
  spec.range = job.range;
  spec.seed = job.seed;
  spec.bandwidth = job.bandwidth ? *job.bandwidth
                   : job.kind == HashKind::euclidean_pstable ? estimate_bandwidth(manifest, 1000, job.seed)
                                                             : 1.0;
  validate(spec);

  const std::string fingerprint = hex64(hash_combine(spec_hash(spec), stable_hash(fs::absolute(job.manifest).string())));
  ProgressLedger ledger(job.out_dir, fingerprint, job.resume);
  const DensityOptions opt{job.threads, 4096};
  const std::string scorer_id = density_scorer_id(spec, manifest.normalize_embeddings);
  auto family = std::make_shared<const HashFamily>(spec);
  const fs::path partial = ledger.work_dir() / "sketch.partial";

  // Pass 1: fold shards into a running sketch, checkpointed after each. Build
  // steps complete in shard order, so the checkpoint holds every done shard.
  KdeSketch sketch(family);
  if (ledger.done("build 0")) sketch.merge_from(sketch_deserialize(partial));
  for (std::size_t s = 0; s < manifest.embedding_shards.size(); ++s) {
    const std::string step = "build " + std::to_string(s);
    if (ledger.done(step)) continue;
    sketch.merge_from(sketch_shard(family, manifest.embedding_shards[s], manifest.dimension,
                                   manifest.normalize_embeddings, opt));
    write_atomically(partial, [&](const fs::path& p) { sketch_serialize(sketch, p); });
    ledger.mark(step);
  }

  // Pass 2: score each shard against the finished sketch.
  for (std::size_t s = 0; s < manifest.embedding_shards.size(); ++s) {
    const std::string step = "score " + std::to_string(s);
    if (ledger.done(step)) continue;
    const auto part = score_shard(sketch, manifest.embedding_shards[s], manifest.dimension,
                                  manifest.normalize_embeddings, scorer_id, opt);
    write_atomically(ledger.work_dir() / ("score-" + std::to_string(s) + ".jsonl"),
                     [&](const fs::path& p) { write_scores(part, p); });
    ledger.mark(step);
  }

  std::vector<ScoreRecord> all;
  for (std::size_t s = 0; s < manifest.embedding_shards.size(); ++s) {
    auto part = read_scores(ledger.work_dir() / ("score-" + std::to_string(s) + ".jsonl"));
    std::move(part.begin(), part.end(), std::back_inserter(all));
  }
  DensityOutcome out{job.out_dir / "scores.jsonl", job.out_dir / "sketch.kde", spec, all.size()};
  write_scores(with_percentiles(std::move(all)), out.scores);
  sketch_serialize(sketch, out.sketch);
  return out;
}

// ---------------------------------------------------------------------------
// score-askllm / score-perplexity

enum class LlmScorer { askllm, perplexity };

struct LlmJob {
  LlmScorer scorer = LlmScorer::askllm;
  fs::path manifest;
  fs::path out_dir;
  bool mock = false;
  ClientConfig client;
  PromptTemplate prompt;
  bool resume = false;
};

struct LlmOutcome {
  fs::path scores;
  fs::path unscored;
  std::size_t scored_count = 0;
  std::size_t unscored_count = 0;
};

namespace detail {

inline void write_part(const std::vector<ScoreRecord>& recs, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (const auto& r : recs) {
    if (r.scored()) {
      out << format_score_line(r) << '\n';
    } else {
      nlohmann::ordered_json j;
      j["id"] = r.id;
      j["scorer_id"] = r.scorer_id;
      j["status"] = "unscored";
      j["error"] = r.error;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

inline std::vector<ScoreRecord> read_part(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<ScoreRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    ScoreRecord r;
    r.id = j.at("id").get<std::string>();
    r.scorer_id = j.at("scorer_id").get<std::string>();
    if (j.value("status", std::string{"scored"}) == "unscored") {
      r.status = ScoreStatus::unscored;
      r.error = j.value("error", std::string{});
    } else {
      r.raw_score = j.at("score").get<double>();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

inline LlmOutcome run_score_llm(const LlmJob& job) {
  const CorpusManifest manifest = load_manifest(job.manifest);
  if (manifest.text_shards.empty()) throw Error(ErrorKind::empty_input, "manifest lists no text shards");
  fs::create_directories(job.out_dir);

  std::unique_ptr<LlmClient> client;
  if (job.mock) {
    client = std::make_unique<MockLlmClient>(job.client.model.empty() ? "mock" : job.client.model,
                                             job.client.max_in_flight);
  } else {
    if (job.client.endpoint.empty())
      throw Error(ErrorKind::invalid_argument, "an endpoint is required unless the mock client is used");
    client = std::make_unique<HttpLlmClient>(job.client);
  }

  const std::string scorer_id = job.scorer == LlmScorer::askllm ? askllm_scorer_id(client->model(), job.prompt)
                                                                 : perplexity_scorer_id(client->model());
  std::uint64_t fp = hash_combine(stable_hash(scorer_id), stable_hash(fs::absolute(job.manifest).string()));
  fp = hash_combine(fp, stable_hash(job.mock ? std::string("mock") : job.client.endpoint));
  ProgressLedger ledger(job.out_dir, hex64(fp), job.resume);

  // Id uniqueness across shards is enforced up front by a full read.
  {
    auto stream = load_examples(manifest);
    while (stream.next()) {
    }
  }

  for (std::size_t s = 0; s < manifest.text_shards.size(); ++s) {
    const std::string step = "score " + std::to_string(s);
    if (ledger.done(step)) continue;
    std::vector<ExampleRecord> examples;
    ExampleShardReader reader(manifest.text_shards[s].path);
    while (auto e = reader.next()) examples.push_back(std::move(*e));
    const auto recs = job.scorer == LlmScorer::askllm ? askllm_score_all(*client, job.prompt, examples)
                                                       : perplexity_score_all(*client, examples);
    write_atomically(ledger.work_dir() / ("score-" + std::to_string(s) + ".jsonl"),
                     [&](const fs::path& p) { detail::write_part(recs, p); });
    // Shards with failures stay pending so a resumed run retries them.
    const bool complete = std::all_of(recs.begin(), recs.end(), [](const ScoreRecord& r) { return r.scored(); });
    if (complete) ledger.mark(step);
  }

  std::vector<ScoreRecord> scored, failed;
  for (std::size_t s = 0; s < manifest.text_shards.size(); ++s) {
    for (auto& r : detail::read_part(ledger.work_dir() / ("score-" + std::to_string(s) + ".jsonl")))
      (r.scored() ? scored : failed).push_back(std::move(r));
  }
  LlmOutcome out{job.out_dir / "scores.jsonl", job.out_dir / "unscored.jsonl", scored.size(), failed.size()};
  write_scores(with_percentiles(std::move(scored)), out.scores);
  detail::write_part(failed, out.unscored);
  return out;
}

// ---------------------------------------------------------------------------
// select

struct SelectJob {
  fs::path scores;
  fs::path out_dir;
  std::string policy = "top_k";  // also accepts the presets "density" and "askllm"
  std::optional<double> ratio;
  std::optional<std::size_t> k;
  std::uint64_t seed = 0;
  IpsDirection direction = IpsDirection::inverse;
};

inline SelectionResult run_select(const SelectJob& job) {
  if (job.ratio.has_value() == job.k.has_value())
    throw Error(ErrorKind::invalid_argument, "specify exactly one of ratio or k");
  const auto scores = read_scores(job.scores);
  if (scores.empty()) throw Error(ErrorKind::empty_input, "score file " + job.scores.string() + " is empty");
  const std::size_t k = job.k ? *job.k : ratio_to_k(*job.ratio, scores.size());
  if (k == 0)
    throw Error(ErrorKind::invalid_argument,
                "ratio " + std::to_string(*job.ratio) + " of " + std::to_string(scores.size()) + " rounds to k = 0");

  SelectionPolicy policy;
  if (job.policy == "density") {
    policy = density_preset(k, job.seed);
  } else if (job.policy == "askllm") {
    policy = askllm_preset(k);
  } else {
    policy.kind = parse_policy_kind(job.policy);
    policy.k = k;
    policy.seed = job.seed;
    // "ips" names the family; the direction flag picks inverse or direct.
    if (policy.kind == PolicyKind::inverse_propensity && job.direction == IpsDirection::direct)
      policy.kind = PolicyKind::propensity;
  }
  auto result = apply_policy(scores, policy);
  fs::create_directories(job.out_dir);
  write_selection(result, job.out_dir / "selection.txt", job.out_dir / "selection.meta.json",
                  scores.front().scorer_id);
  return result;
}

// ---------------------------------------------------------------------------
// analyze / plan

struct PlanArgs {
  double dataset_tokens = 0.0;
  double ratio = 0.0;
  double budget_tokens = 0.0;
};

struct AnalyzeJob {
  std::vector<fs::path> score_files;
  fs::path out_dir;
  std::size_t bins = 20;
  std::optional<fs::path> metrics;
  std::optional<PlanArgs> plan;
};

struct AnalyzeOutcome {
  std::optional<CorrelationMatrix> correlations;
  std::vector<Histogram> histograms;
  std::optional<OverScaling> over_scaling;
  std::optional<EpochPlan> plan;
};

inline AnalyzeOutcome run_analyze(const AnalyzeJob& job) {
  if (job.score_files.empty() && !job.metrics && !job.plan)
    throw Error(ErrorKind::invalid_argument, "analyze needs score files, a metric file or plan arguments");
  fs::create_directories(job.out_dir);
  AnalyzeOutcome out;
  std::vector<std::vector<ScoreRecord>> tables;
  for (const auto& f : job.score_files) tables.push_back(read_scores(f));
  for (std::size_t i = 0; i < tables.size(); ++i) {
    out.histograms.push_back(score_histogram(std::span<const ScoreRecord>(tables[i]), job.bins));
    write_histogram(out.histograms.back(), job.out_dir / ("histogram_" + std::to_string(i) + ".tsv"));
  }
  if (tables.size() >= 2) {
    std::vector<std::string> labels;
    for (const auto& f : job.score_files) labels.push_back(f.string());
    out.correlations = correlation_matrix(tables, labels);
    write_tau_matrix(*out.correlations, job.out_dir / "tau_matrix.tsv");
    std::ofstream sizes(job.out_dir / "tau_matrix.sizes.tsv", std::ios::binary);
    sizes << "file\trecords\tdropped\n";
    for (std::size_t i = 0; i < tables.size(); ++i)
      sizes << labels[i] << '\t' << tables[i].size() << '\t' << out.correlations->dropped[i] << '\n';
    sizes << "common\t" << out.correlations->common_ids << "\t0\n";
  }
  if (job.metrics) {
    const auto triples = read_metric_triples(*job.metrics);
    out.over_scaling = over_scaling(triples);
    write_over_scaling(*out.over_scaling, job.out_dir / "over_scaling.tsv");
  }
  if (job.plan) {
    out.plan = epoch_plan(job.plan->dataset_tokens, job.plan->ratio, job.plan->budget_tokens);
    write_epoch_plan(*out.plan, job.out_dir / "epoch_plan.tsv");
  }
  return out;
}

}  // namespace curator::pipeline
