#pragma once

// Selection policies over score tables: deterministic top/bottom-K and
// seeded weighted sampling without replacement.
//
// Weighted sampling uses the order-statistic key method: each item draws
// u_i ~ U(0,1) from a generator keyed by (seed, id) and gets key
// u_i^(1/w_i); the k largest keys win. Keys are compared in log space
// (log u_i / w_i), which preserves the order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "curator/corpus.hpp"
#include "curator/error.hpp"
#include "curator/random.hpp"

namespace curator {

enum class PolicyKind { top_k, bottom_k, inverse_propensity, propensity, uniform_random };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::top_k: return "top_k";
    case PolicyKind::bottom_k: return "bottom_k";
    case PolicyKind::inverse_propensity: return "inverse_propensity";
    case PolicyKind::propensity: return "propensity";
    case PolicyKind::uniform_random: return "uniform_random";
  }
  return "unknown";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
  if (s == "top_k" || s == "top-k") return PolicyKind::top_k;
  if (s == "bottom_k" || s == "bottom-k") return PolicyKind::bottom_k;
  if (s == "inverse_propensity" || s == "ips") return PolicyKind::inverse_propensity;
  if (s == "propensity") return PolicyKind::propensity;
  if (s == "uniform_random" || s == "uniform") return PolicyKind::uniform_random;
  throw Error(ErrorKind::invalid_argument, "unknown selection policy '" + std::string(s) + "'");
}

enum class IpsDirection { inverse, direct };

struct SelectionPolicy {
  PolicyKind kind = PolicyKind::top_k;
  std::size_t k = 1;
  std::uint64_t seed = 0;
};

/// Density preset: inverse propensity over density scores (coverage).
inline SelectionPolicy density_preset(std::size_t k, std::uint64_t seed) {
  return {PolicyKind::inverse_propensity, k, seed};
}

/// Ask-LLM preset: keep the k highest "yes" probabilities.
inline SelectionPolicy askllm_preset(std::size_t k) { return {PolicyKind::top_k, k, 0}; }

struct WeightSummary {
  double min = 0.0;
  double max = 0.0;
  double sum = 0.0;
};

struct SelectionResult {
  std::vector<std::string> ids;  // in selection order
  SelectionPolicy policy;
  std::size_t population = 0;
  std::optional<WeightSummary> weights;  // stochastic kinds only
};

/// k = round-half-up(ratio * n).
inline std::size_t ratio_to_k(double ratio, std::size_t n) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(ErrorKind::invalid_argument, "ratio must lie in (0, 1]");
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
}

namespace detail {

inline void check_selection_input(std::span<const ScoreRecord> scores, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::invalid_argument, "sample size k must be positive");
  if (k > scores.size())
    throw Error(ErrorKind::invalid_argument,
                "k = " + std::to_string(k) + " exceeds population " + std::to_string(scores.size()));
  std::unordered_set<std::string_view> seen;
  seen.reserve(scores.size());
  for (const auto& s : scores) {
    if (std::isnan(s.raw_score)) throw Error(ErrorKind::non_finite, "NaN score for '" + s.id + "'");
    if (!std::isfinite(s.raw_score)) throw Error(ErrorKind::non_finite, "non-finite score for '" + s.id + "'");
    if (!seen.insert(s.id).second) throw Error(ErrorKind::duplicate_id, "duplicate id '" + s.id + "' in scores");
  }
}

struct Keyed {
  double key;
  std::size_t index;
};

/// Indices of the k largest keys, largest first; ties broken by ascending id.
inline std::vector<std::size_t> top_k_indices(std::vector<Keyed> keyed, std::size_t k,
                                              std::span<const ScoreRecord> scores) {
  auto better = [&](const Keyed& a, const Keyed& b) {
    if (a.key != b.key) return a.key > b.key;
    return scores[a.index].id < scores[b.index].id;
  };
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k - 1), keyed.end(), better);
  keyed.resize(k);
  std::sort(keyed.begin(), keyed.end(), better);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (const auto& e : keyed) out.push_back(e.index);
  return out;
}

inline double selection_uniform(std::uint64_t seed, std::string_view id) {
  return to_open_unit(hash_combine(splitmix64(seed), stable_hash(id)));
}

inline SelectionResult weighted_select(std::span<const ScoreRecord> scores, std::size_t k, std::uint64_t seed,
                                       const std::vector<double>& weights, SelectionPolicy policy) {
  std::vector<Keyed> keyed(scores.size());
  WeightSummary summary{weights.front(), weights.front(), 0.0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    keyed[i] = {std::log(selection_uniform(seed, scores[i].id)) / weights[i], i};
    summary.min = std::min(summary.min, weights[i]);
    summary.max = std::max(summary.max, weights[i]);
    summary.sum += weights[i];
  }
  SelectionResult res;
  for (auto i : top_k_indices(std::move(keyed), k, scores)) res.ids.push_back(scores[i].id);
  res.policy = policy;
  res.population = scores.size();
  res.weights = summary;
  return res;
}

}  // namespace detail

inline SelectionResult select_top_k(std::span<const ScoreRecord> scores, std::size_t k) {
  detail::check_selection_input(scores, k);
  std::vector<detail::Keyed> keyed(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) keyed[i] = {scores[i].raw_score, i};
  SelectionResult res;
  for (auto i : detail::top_k_indices(std::move(keyed), k, scores)) res.ids.push_back(scores[i].id);
  res.policy = {PolicyKind::top_k, k, 0};
  res.population = scores.size();
  return res;
}

inline SelectionResult select_bottom_k(std::span<const ScoreRecord> scores, std::size_t k) {
  detail::check_selection_input(scores, k);
  std::vector<detail::Keyed> keyed(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) keyed[i] = {-scores[i].raw_score, i};
  SelectionResult res;
  for (auto i : detail::top_k_indices(std::move(keyed), k, scores)) res.ids.push_back(scores[i].id);
  res.policy = {PolicyKind::bottom_k, k, 0};
  res.population = scores.size();
  return res;
}

/// Weighted sampling without replacement with weights 1/s (inverse) or s
/// (direct). Scores must be strictly positive.
inline SelectionResult select_ips(std::span<const ScoreRecord> scores, std::size_t k, IpsDirection direction,
                                  std::uint64_t seed) {
  detail::check_selection_input(scores, k);
  std::vector<double> weights(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i].raw_score;
    if (!(s > 0.0))
      throw Error(ErrorKind::invalid_argument,
                  "propensity sampling needs positive scores; '" + scores[i].id + "' has " + std::to_string(s));
    weights[i] = direction == IpsDirection::inverse ? 1.0 / s : s;
  }
  const auto kind = direction == IpsDirection::inverse ? PolicyKind::inverse_propensity : PolicyKind::propensity;
  return detail::weighted_select(scores, k, seed, weights, {kind, k, seed});
}

inline SelectionResult select_uniform(std::span<const std::string> ids, std::size_t k, std::uint64_t seed) {
  std::vector<ScoreRecord> scores(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) scores[i].id = ids[i];
  detail::check_selection_input(scores, k);
  return detail::weighted_select(scores, k, seed, std::vector<double>(ids.size(), 1.0),
                                 {PolicyKind::uniform_random, k, seed});
}

inline SelectionResult apply_policy(std::span<const ScoreRecord> scores, const SelectionPolicy& policy) {
  switch (policy.kind) {
    case PolicyKind::top_k: return select_top_k(scores, policy.k);
    case PolicyKind::bottom_k: return select_bottom_k(scores, policy.k);
    case PolicyKind::inverse_propensity: return select_ips(scores, policy.k, IpsDirection::inverse, policy.seed);
    case PolicyKind::propensity: return select_ips(scores, policy.k, IpsDirection::direct, policy.seed);
    case PolicyKind::uniform_random: {
      std::vector<std::string> ids;
      ids.reserve(scores.size());
      for (const auto& s : scores) ids.push_back(s.id);
      return select_uniform(ids, policy.k, policy.seed);
    }
  }
  throw Error(ErrorKind::invalid_argument, "unknown policy kind");
}

/// Writes the id list (one per line) and a JSON metadata sidecar.
inline void write_selection(const SelectionResult& res, const std::filesystem::path& ids_path,
                            const std::filesystem::path& meta_path, const std::string& scorer_id = {}) {
  {
    std::ofstream out(ids_path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + ids_path.string());
    for (const auto& id : res.ids) out << id << '\n';
    if (!out) throw Error(ErrorKind::io, "write failed for " + ids_path.string());
  }
  nlohmann::ordered_json meta;
  meta["policy"] = to_string(res.policy.kind);
  meta["k"] = res.policy.k;
  meta["population"] = res.population;
  meta["seed"] = res.policy.seed;
  if (!scorer_id.empty()) meta["scorer_id"] = scorer_id;
  if (res.weights) meta["weights"] = {{"min", res.weights->min}, {"max", res.weights->max}, {"sum", res.weights->sum}};
  std::ofstream out(meta_path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + meta_path.string());
  out << meta.dump(2) << '\n';
}

}  // namespace curator
