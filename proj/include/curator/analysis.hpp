#pragma once

// Comparison instruments for samplers: rank correlation between scorers,
// score histograms, over-scaling and iso-compute epoch accounting. Report
// writers emit tab-separated tables with a header row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "curator/corpus.hpp"
#include "curator/error.hpp"

namespace curator {

// ---------------------------------------------------------------------------
// Kendall tau-b in O(N log N) (Knight's algorithm): sort by (x, y), count
// ties, then count discordant pairs as merge-sort inversions of y.

namespace detail {

inline std::int64_t tie_pairs(std::int64_t run) { return run * (run - 1) / 2; }

// Stable merge sort of v counting inversions (pairs i < j with v[i] > v[j]).
inline std::int64_t sort_count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = sort_count_inversions(v, buf, lo, mid) + sort_count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace detail

inline double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::invalid_argument, "kendall_tau: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorKind::invalid_argument, "kendall_tau: need at least 2 observations");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error(ErrorKind::non_finite, "kendall_tau: non-finite score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });

  const auto total = detail::tie_pairs(static_cast<std::int64_t>(n));
  std::int64_t x_ties = 0, joint_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    x_ties += detail::tie_pairs(static_cast<std::int64_t>(j - i));
    for (std::size_t a = i; a < j;) {
      std::size_t b = a + 1;
      while (b < j && y[order[b]] == y[order[a]]) ++b;
      joint_ties += detail::tie_pairs(static_cast<std::int64_t>(b - a));
      a = b;
    }
    i = j;
  }

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::int64_t swaps = detail::sort_count_inversions(ys, buf, 0, n);

  std::int64_t y_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && ys[j] == ys[i]) ++j;
    y_ties += detail::tie_pairs(static_cast<std::int64_t>(j - i));
    i = j;
  }

  const std::int64_t untied_x = total - x_ties;
  const std::int64_t untied_y = total - y_ties;
  if (untied_x == 0 || untied_y == 0)
    throw Error(ErrorKind::invalid_argument, "kendall_tau: undefined when one input is entirely tied");
  const std::int64_t concordant_minus_discordant = total - x_ties - y_ties + joint_ties - 2 * swaps;
  return static_cast<double>(concordant_minus_discordant) /
         std::sqrt(static_cast<double>(untied_x) * static_cast<double>(untied_y));
}

/// Tau-b between two score tables over the same id set (any order).
inline double kendall_tau(std::span<const ScoreRecord> a, std::span<const ScoreRecord> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::invalid_argument, "kendall_tau: score tables cover different ids");
  std::unordered_map<std::string_view, double> lookup;
  lookup.reserve(b.size());
  for (const auto& r : b)
    if (!lookup.emplace(r.id, r.raw_score).second)
      throw Error(ErrorKind::duplicate_id, "kendall_tau: duplicate id '" + r.id + "'");
  std::vector<double> x, y;
  x.reserve(a.size());
  y.reserve(a.size());
  for (const auto& r : a) {
    auto it = lookup.find(r.id);
    if (it == lookup.end())
      throw Error(ErrorKind::invalid_argument, "kendall_tau: id '" + r.id + "' missing from second table");
    x.push_back(r.raw_score);
    y.push_back(it->second);
  }
  return kendall_tau_b(x, y);
}

// ---------------------------------------------------------------------------

struct CorrelationMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> tau;
  std::size_t common_ids = 0;
  std::vector<std::size_t> dropped;  // per input: records outside the intersection
};

/// Pairwise tau-b over the ids present in every table.
inline CorrelationMatrix correlation_matrix(std::span<const std::vector<ScoreRecord>> tables,
                                            std::vector<std::string> labels = {}) {
  if (tables.empty()) throw Error(ErrorKind::empty_input, "correlation_matrix: no score tables");
  const std::size_t m = tables.size();
  if (labels.empty())
    for (const auto& t : tables) labels.push_back(t.empty() ? std::string{} : t.front().scorer_id);
  if (labels.size() != m) throw Error(ErrorKind::invalid_argument, "correlation_matrix: label count mismatch");

  std::unordered_map<std::string_view, std::size_t> hits;
  for (const auto& t : tables) {
    std::unordered_map<std::string_view, bool> seen;
    for (const auto& r : t)
      if (seen.emplace(r.id, true).second) ++hits[r.id];
  }
  // Common ids in the first table's order.
  std::vector<std::string_view> common;
  for (const auto& r : tables.front())
    if (hits[r.id] == m) common.push_back(r.id);
  if (common.empty()) throw Error(ErrorKind::empty_input, "correlation_matrix: score tables share no ids");

  std::vector<std::vector<double>> columns(m, std::vector<double>(common.size()));
  CorrelationMatrix out;
  out.labels = std::move(labels);
  out.common_ids = common.size();
  for (std::size_t f = 0; f < m; ++f) {
    std::unordered_map<std::string_view, double> lookup;
    for (const auto& r : tables[f]) lookup.emplace(r.id, r.raw_score);
    for (std::size_t i = 0; i < common.size(); ++i) columns[f][i] = lookup.at(common[i]);
    out.dropped.push_back(tables[f].size() - common.size());
  }
  out.tau.assign(m, std::vector<double>(m, 1.0));
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) out.tau[a][b] = out.tau[b][a] = kendall_tau_b(columns[a], columns[b]);
  return out;
}

// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]; the last bin is closed on the right.
inline Histogram score_histogram(std::span<const double> scores, std::size_t bins) {
  if (scores.empty()) throw Error(ErrorKind::empty_input, "score_histogram: no scores");
  if (bins == 0) throw Error(ErrorKind::invalid_argument, "score_histogram: bins must be positive");
  for (double s : scores)
    if (!std::isfinite(s)) throw Error(ErrorKind::non_finite, "score_histogram: non-finite score");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(bins);
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double s : scores) {
    std::size_t b = 0;
    if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((s - lo) / width));
    ++h.counts[b];
  }
  return h;
}

inline Histogram score_histogram(std::span<const ScoreRecord> scores, std::size_t bins) {
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& s : scores) v.push_back(s.raw_score);
  return score_histogram(v, bins);
}

// ---------------------------------------------------------------------------
// Over-scaling: the share of the gap between a model trained on the full data
// and the next-larger model (also on full data) that sampling closes.

struct MetricTriple {
  std::string metric;
  double sampled_value = 0.0;
  double full_value = 0.0;
  double reference_value = 0.0;
  bool higher_is_better = true;
};

struct OverScaling {
  double percent = 0.0;
  std::size_t used = 0;
  std::vector<std::string> skipped;  // metrics whose reference equals full
};

inline OverScaling over_scaling(std::span<const MetricTriple> triples) {
  OverScaling out;
  double sum = 0.0;
  for (const auto& t : triples) {
    if (!std::isfinite(t.sampled_value) || !std::isfinite(t.full_value) || !std::isfinite(t.reference_value))
      throw Error(ErrorKind::non_finite, "over_scaling: non-finite value for metric '" + t.metric + "'");
    const double sign = t.higher_is_better ? 1.0 : -1.0;
    const double sampled = sign * t.sampled_value;
    const double full = sign * t.full_value;
    const double reference = sign * t.reference_value;
    if (reference == full) {
      out.skipped.push_back(t.metric);
      continue;
    }
    sum += 100.0 * (sampled - full) / (reference - full);
    ++out.used;
  }
  if (out.used == 0) throw Error(ErrorKind::empty_input, "over_scaling: no usable metric triples");
  out.percent = sum / static_cast<double>(out.used);
  return out;
}

// ---------------------------------------------------------------------------
// Iso-compute epochs: a fixed token budget spent on a sampled dataset.

struct EpochPlan {
  double dataset_tokens = 0.0;
  double sampling_ratio = 0.0;
  double budget_tokens = 0.0;
  double sampled_tokens = 0.0;
  double epochs = 0.0;
};

inline EpochPlan epoch_plan(double dataset_tokens, double ratio, double budget_tokens) {
  if (!(dataset_tokens > 0.0) || !(budget_tokens > 0.0) || !std::isfinite(dataset_tokens) ||
      !std::isfinite(budget_tokens))
    throw Error(ErrorKind::invalid_argument, "epoch_plan: token counts must be positive");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(ErrorKind::invalid_argument, "epoch_plan: ratio must lie in (0, 1]");
  EpochPlan p{dataset_tokens, ratio, budget_tokens, ratio * dataset_tokens, 0.0};
  p.epochs = budget_tokens / p.sampled_tokens;
  return p;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline std::string full_precision(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

namespace detail {
inline std::ofstream open_report(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write report " + path.string());
  return out;
}
}  // namespace detail

/// Square table: header row of labels, then one row per label.
inline void write_tau_matrix(const CorrelationMatrix& m, const std::filesystem::path& path) {
  auto out = detail::open_report(path);
  out << "scorer";
  for (const auto& l : m.labels) out << '\t' << l;
  out << '\n';
  for (std::size_t a = 0; a < m.labels.size(); ++a) {
    out << m.labels[a];
    for (std::size_t b = 0; b < m.labels.size(); ++b) out << '\t' << full_precision(m.tau[a][b]);
    out << '\n';
  }
}

inline void write_histogram(const Histogram& h, const std::filesystem::path& path) {
  auto out = detail::open_report(path);
  out << "bin\tlower\tupper\tcount\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << i << '\t' << full_precision(h.edges[i]) << '\t' << full_precision(h.edges[i + 1]) << '\t' << h.counts[i]
        << '\n';
}

inline void write_over_scaling(const OverScaling& o, const std::filesystem::path& path) {
  auto out = detail::open_report(path);
  out << "over_scaling_percent\tmetrics_used\tmetrics_skipped\n";
  out << full_precision(o.percent) << '\t' << o.used << '\t' << o.skipped.size() << '\n';
}

inline void write_epoch_plan(const EpochPlan& p, const std::filesystem::path& path) {
  auto out = detail::open_report(path);
  out << "dataset_tokens\tsampling_ratio\tbudget_tokens\tsampled_tokens\tepochs\n";
  out << full_precision(p.dataset_tokens) << '\t' << full_precision(p.sampling_ratio) << '\t'
      << full_precision(p.budget_tokens) << '\t' << full_precision(p.sampled_tokens) << '\t' << fixed(p.epochs, 2)
      << '\n';
}

/// Metric file: tab-separated with header
///   metric  sampled  full  reference  higher_is_better
/// where higher_is_better is 1/0 or true/false.
inline std::vector<MetricTriple> read_metric_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open metric file " + path.string());
  std::vector<MetricTriple> out;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (line_no == 1 && line.rfind("metric", 0) == 0) continue;
    std::istringstream fields(line);
    MetricTriple t;
    std::string hib;
    if (!(std::getline(fields, t.metric, '\t') && fields >> t.sampled_value >> t.full_value >> t.reference_value >> hib))
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": expected 5 tab-separated fields");
    if (hib == "1" || hib == "true") t.higher_is_better = true;
    else if (hib == "0" || hib == "false") t.higher_is_better = false;
    else throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": bad higher_is_better '" + hib + "'");
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace curator
