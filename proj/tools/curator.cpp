// curator: score, select and analyze training examples.
//
//   curator score-density    --manifest m.json --out dir [--rows --range --bandwidth --kind --seed --resume]
//   curator score-askllm     --manifest m.json --out dir (--endpoint URL | --mock) [--template file]
//   curator score-perplexity --manifest m.json --out dir (--endpoint URL | --mock)
//   curator select           --scores s.jsonl --out dir (--ratio r | --k n) [--policy --direction --seed]
//   curator analyze          --scores a.jsonl [b.jsonl ...] [--metrics m.tsv] --out dir
//   curator plan             --dataset-tokens 184e9 --ratio 0.2 --budget-tokens 524e9 [--out dir]
//
// Exit status: 0 ok, 1 error, 2 usage, 3 finished with unscored rows,
// 75 stopped early by CURATOR_ABORT_AFTER_STEPS (rerun with --resume).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "curator/pipeline.hpp"

namespace {

using namespace curator;
namespace fs = std::filesystem;

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct LlmFlags {
  std::string manifest;
  std::string out;
  std::string endpoint;
  bool mock = false;
  std::string model;
  std::string template_path;
  std::size_t max_chars = 4000;
  std::size_t max_in_flight = 8;
  int retries = 3;
  long timeout_ms = 30000;
  bool resume = false;
};

void add_llm_flags(CLI::App* cmd, LlmFlags& f, bool with_template) {
  cmd->add_option("--manifest", f.manifest, "Corpus manifest (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory")->required();
  auto* endpoint = cmd->add_option("--endpoint", f.endpoint, "Scoring service base URL, e.g. http://host:port");
  auto* mock = cmd->add_flag("--mock", f.mock, "Use the deterministic offline mock model");
  endpoint->excludes(mock);
  cmd->add_option("--model", f.model, "Model identifier sent to the service");
  if (with_template) {
    cmd->add_option("--template", f.template_path, "Prompt template file containing {text} once")
        ->check(CLI::ExistingFile);
    cmd->add_option("--max-chars", f.max_chars, "Truncate example text beyond this many characters");
  }
  cmd->add_option("--max-in-flight", f.max_in_flight, "Concurrent request cap")->check(CLI::PositiveNumber);
  cmd->add_option("--retries", f.retries, "Retries per request after the first attempt");
  cmd->add_option("--timeout-ms", f.timeout_ms, "Per-request timeout in milliseconds")->check(CLI::PositiveNumber);
  cmd->add_flag("--resume", f.resume, "Skip shards already completed in <out>/progress.ledger");
}

pipeline::LlmJob make_llm_job(const LlmFlags& f, pipeline::LlmScorer scorer) {
  if (!f.mock && f.endpoint.empty())
    throw CLI::ValidationError("--endpoint", "either --endpoint or --mock is required");
  pipeline::LlmJob job;
  job.scorer = scorer;
  job.manifest = f.manifest;
  job.out_dir = f.out;
  job.mock = f.mock;
  job.resume = f.resume;
  job.client.endpoint = f.endpoint;
  job.client.model = f.model.empty() ? (f.mock ? "mock" : "default") : f.model;
  job.client.max_in_flight = f.max_in_flight;
  job.client.max_retries = f.retries;
  job.client.timeout = std::chrono::milliseconds(f.timeout_ms);
  if (!f.template_path.empty()) {
    job.prompt.text = read_file(f.template_path);
    while (!job.prompt.text.empty() && (job.prompt.text.back() == '\n' || job.prompt.text.back() == '\r'))
      job.prompt.text.pop_back();
  }
  job.prompt.max_chars = f.max_chars;
  return job;
}

int report_llm(const pipeline::LlmOutcome& o) {
  std::cout << "scored " << o.scored_count << " -> " << o.scores.string() << '\n';
  if (o.unscored_count > 0) {
    std::cerr << "unscored " << o.unscored_count << " -> " << o.unscored.string() << '\n';
    return kExitPartial;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score, select and analyze training examples for data curation"};
  app.require_subcommand(1);

  // score-density
  pipeline::DensityJob density;
  std::string density_manifest, density_out, kind = "euclidean";
  std::optional<double> bandwidth;
  auto* score_density = app.add_subcommand("score-density", "Kernel density scores from embedding shards");
  score_density->add_option("--manifest", density_manifest, "Corpus manifest (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  score_density->add_option("--out", density_out, "Output directory")->required();
  score_density->add_option("--rows", density.rows, "Sketch rows R")->capture_default_str();
  score_density->add_option("--range", density.range, "Hash range B")->capture_default_str();
  score_density->add_option("--bandwidth", bandwidth, "Kernel bandwidth (default: median pairwise distance)");
  score_density->add_option("--kind", kind, "Hash family")
      ->check(CLI::IsMember({"euclidean", "cosine"}))
      ->capture_default_str();
  score_density->add_option("--seed", density.seed, "Hash seed")->capture_default_str();
  score_density->add_option("--threads", density.threads, "Worker threads")->check(CLI::PositiveNumber);
  score_density->add_flag("--resume", density.resume, "Skip steps already completed in <out>/progress.ledger");

  LlmFlags askllm_flags, ppl_flags;
  auto* score_askllm = app.add_subcommand("score-askllm", "P(yes) quality scores from an LLM");
  add_llm_flags(score_askllm, askllm_flags, true);
  auto* score_ppl = app.add_subcommand("score-perplexity", "Negated perplexity scores from an LLM");
  add_llm_flags(score_ppl, ppl_flags, false);

  // select
  pipeline::SelectJob select;
  std::string select_scores, select_out, direction = "inverse";
  std::optional<double> ratio;
  std::optional<std::size_t> k;
  auto* select_cmd = app.add_subcommand("select", "Select an id subset from a score file");
  select_cmd->add_option("--scores", select_scores, "Score file")->required()->check(CLI::ExistingFile);
  select_cmd->add_option("--out", select_out, "Output directory")->required();
  auto* ratio_opt = select_cmd->add_option("--ratio", ratio, "Fraction of records to keep, in (0, 1]");
  auto* k_opt = select_cmd->add_option("--k", k, "Number of records to keep");
  ratio_opt->excludes(k_opt);
  select_cmd->add_option("--policy", select.policy,
                         "top_k | bottom_k | ips | propensity | uniform | density | askllm")
      ->capture_default_str();
  select_cmd->add_option("--direction", direction, "IPS weight direction")
      ->check(CLI::IsMember({"inverse", "direct"}))
      ->capture_default_str();
  select_cmd->add_option("--seed", select.seed, "Sampling seed")->capture_default_str();

  // analyze
  pipeline::AnalyzeJob analyze;
  std::vector<std::string> analyze_scores;
  std::string analyze_out, metrics;
  std::optional<double> a_dataset, a_ratio, a_budget;
  auto* analyze_cmd = app.add_subcommand("analyze", "Rank correlations, histograms, over-scaling, epoch plan");
  analyze_cmd->add_option("--scores", analyze_scores, "Score files")->check(CLI::ExistingFile);
  analyze_cmd->add_option("--out", analyze_out, "Output directory")->required();
  analyze_cmd->add_option("--bins", analyze.bins, "Histogram bins")->check(CLI::PositiveNumber)->capture_default_str();
  analyze_cmd->add_option("--metrics", metrics, "Metric triple file (TSV)")->check(CLI::ExistingFile);
  analyze_cmd->add_option("--dataset-tokens", a_dataset, "Tokens in the full dataset");
  analyze_cmd->add_option("--ratio", a_ratio, "Sampling ratio");
  analyze_cmd->add_option("--budget-tokens", a_budget, "Training token budget");

  // plan
  double p_dataset = 0, p_ratio = 0, p_budget = 0;
  std::string plan_out;
  auto* plan_cmd = app.add_subcommand("plan", "Iso-compute epoch plan for a sampling ratio");
  plan_cmd->add_option("--dataset-tokens", p_dataset, "Tokens in the full dataset")->required();
  plan_cmd->add_option("--ratio", p_ratio, "Sampling ratio in (0, 1]")->required();
  plan_cmd->add_option("--budget-tokens", p_budget, "Training token budget")->required();
  plan_cmd->add_option("--out", plan_out, "Output directory for epoch_plan.tsv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*score_density) {
      density.manifest = density_manifest;
      density.out_dir = density_out;
      density.bandwidth = bandwidth;
      density.kind = kind == "cosine" ? HashKind::cosine_signed_projection : HashKind::euclidean_pstable;
      const auto o = pipeline::run_score_density(density);
      std::cout << "scored " << o.records << " embeddings (bandwidth " << full_precision(o.spec.bandwidth)
                << ") -> " << o.scores.string() << '\n';
      return 0;
    }
    if (*score_askllm) return report_llm(pipeline::run_score_llm(make_llm_job(askllm_flags, pipeline::LlmScorer::askllm)));
    if (*score_ppl) return report_llm(pipeline::run_score_llm(make_llm_job(ppl_flags, pipeline::LlmScorer::perplexity)));
    if (*select_cmd) {
      select.scores = select_scores;
      select.out_dir = select_out;
      select.ratio = ratio;
      select.k = k;
      select.direction = direction == "direct" ? IpsDirection::direct : IpsDirection::inverse;
      if (!ratio && !k) throw CLI::ValidationError("--ratio/--k", "one of --ratio or --k is required");
      const auto r = pipeline::run_select(select);
      std::cout << "selected " << r.ids.size() << " of " << r.population << " ("
                << to_string(r.policy.kind) << ") -> " << (fs::path(select_out) / "selection.txt").string() << '\n';
      return 0;
    }
    if (*analyze_cmd) {
      for (const auto& s : analyze_scores) analyze.score_files.emplace_back(s);
      analyze.out_dir = analyze_out;
      if (!metrics.empty()) analyze.metrics = metrics;
      if (a_dataset || a_ratio || a_budget) {
        if (!(a_dataset && a_ratio && a_budget))
          throw CLI::ValidationError("--dataset-tokens/--ratio/--budget-tokens", "all three are needed for a plan");
        analyze.plan = pipeline::PlanArgs{*a_dataset, *a_ratio, *a_budget};
      }
      const auto o = pipeline::run_analyze(analyze);
      if (o.correlations) {
        std::cout << "kendall tau-b over " << o.correlations->common_ids << " common ids:\n";
        for (std::size_t a = 0; a < o.correlations->labels.size(); ++a) {
          for (std::size_t b = 0; b < o.correlations->labels.size(); ++b)
            std::cout << (b ? "\t" : "") << fixed(o.correlations->tau[a][b], 4);
          std::cout << '\n';
        }
      }
      if (o.over_scaling) std::cout << "over-scaling " << fixed(o.over_scaling->percent, 2) << "%\n";
      if (o.plan) std::cout << "epochs " << fixed(o.plan->epochs, 2) << '\n';
      std::cout << "reports -> " << analyze_out << '\n';
      return 0;
    }
    if (*plan_cmd) {
      const auto p = epoch_plan(p_dataset, p_ratio, p_budget);
      std::cout << "sampled_tokens " << full_precision(p.sampled_tokens) << "\nepochs " << fixed(p.epochs, 2) << '\n';
      if (!plan_out.empty()) {
        fs::create_directories(plan_out);
        write_epoch_plan(p, fs::path(plan_out) / "epoch_plan.tsv");
      }
      return 0;
    }
  } catch (const CLI::Error& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const pipeline::Interrupted& e) {
    std::cerr << "curator: " << e.what() << '\n';
    return pipeline::kInterruptedExit;
  } catch (const std::exception& e) {
    std::cerr << "curator: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
