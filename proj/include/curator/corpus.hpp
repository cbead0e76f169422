#pragma once

// Corpus data model: example/embedding/score records, the shard manifest,
// streaming shard readers and the score-file format.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "curator/error.hpp"

namespace curator {

static_assert(std::endian::native == std::endian::little,
              "binary shard formats assume a little-endian host");

namespace fs = std::filesystem;

struct ExampleRecord {
  std::string id;
  std::string text;
  std::optional<std::uint64_t> token_count;

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

struct EmbeddingRecord {
  std::string id;
  std::vector<float> vector;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

enum class ScoreStatus { scored, unscored };

/// Higher raw_score always means "better to keep" under the scorer's own
/// convention. Unscored records carry the failure reason in `error` and
/// never enter a score file.
struct ScoreRecord {
  std::string id;
  std::string scorer_id;
  double raw_score = 0.0;
  std::optional<double> percentile;
  ScoreStatus status = ScoreStatus::scored;
  std::string error;

  bool scored() const noexcept { return status == ScoreStatus::scored; }

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

// ---------------------------------------------------------------------------
// Manifest

struct ShardInfo {
  fs::path path;
  std::uint64_t records = 0;

  friend bool operator==(const ShardInfo&, const ShardInfo&) = default;
};

struct CorpusManifest {
  std::vector<ShardInfo> text_shards;
  std::vector<ShardInfo> embedding_shards;
  std::uint32_t dimension = 0;
  std::uint64_t total_tokens = 0;
  // Length-normalize embeddings before density estimation.
  bool normalize_embeddings = false;

  std::uint64_t text_record_count() const {
    std::uint64_t n = 0;
    for (const auto& s : text_shards) n += s.records;
    return n;
  }
  std::uint64_t embedding_record_count() const {
    std::uint64_t n = 0;
    for (const auto& s : embedding_shards) n += s.records;
    return n;
  }

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

/// Manifest JSON:
///   {"dimension": d, "total_tokens": t, "normalize_embeddings": false,
///    "text_shards": [{"path": "...", "records": n}, ...],
///    "embedding_shards": [{"path": "...", "records": n}, ...]}
/// Relative shard paths resolve against the manifest's directory.
inline CorpusManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "manifest " + path.string() + ": " + e.what());
  }
  CorpusManifest m;
  const fs::path base = path.parent_path();
  auto shards = [&](const char* key) {
    std::vector<ShardInfo> out;
    if (!j.contains(key)) return out;
    for (const auto& s : j.at(key)) {
      ShardInfo info;
      fs::path p = s.at("path").get<std::string>();
      info.path = p.is_absolute() ? p : base / p;
      info.records = s.at("records").get<std::uint64_t>();
      out.push_back(std::move(info));
    }
    return out;
  };
  try {
    m.text_shards = shards("text_shards");
    m.embedding_shards = shards("embedding_shards");
    m.dimension = j.value("dimension", std::uint32_t{0});
    m.total_tokens = j.value("total_tokens", std::uint64_t{0});
    m.normalize_embeddings = j.value("normalize_embeddings", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "manifest " + path.string() + ": " + e.what());
  }
  return m;
}

inline void save_manifest(const CorpusManifest& m, const fs::path& path) {
  nlohmann::ordered_json j;
  j["dimension"] = m.dimension;
  j["total_tokens"] = m.total_tokens;
  j["normalize_embeddings"] = m.normalize_embeddings;
  auto shards = [](const std::vector<ShardInfo>& v) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& s : v) arr.push_back({{"path", s.path.string()}, {"records", s.records}});
    return arr;
  };
  j["text_shards"] = shards(m.text_shards);
  j["embedding_shards"] = shards(m.embedding_shards);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Text shards: one JSON object per line with keys id, text, token_count?.

inline ExampleRecord parse_example_line(std::string_view line, const fs::path& shard,
                                        std::uint64_t line_no) {
  auto fail = [&](const std::string& why) {
    return Error(ErrorKind::parse,
                 shard.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw fail("record is not an object");
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string key 'id'");
  if (!j.contains("text") || !j["text"].is_string()) throw fail("missing string key 'text'");
  ExampleRecord rec;
  rec.id = j["id"].get<std::string>();
  if (rec.id.empty()) throw fail("empty id");
  rec.text = j["text"].get<std::string>();
  if (j.contains("token_count") && !j["token_count"].is_null()) {
    if (!j["token_count"].is_number_unsigned()) throw fail("token_count must be a nonnegative integer");
    rec.token_count = j["token_count"].get<std::uint64_t>();
  }
  return rec;
}

inline std::string format_example_line(const ExampleRecord& rec) {
  nlohmann::ordered_json j;
  j["id"] = rec.id;
  j["text"] = rec.text;
  if (rec.token_count) j["token_count"] = *rec.token_count;
  return j.dump();
}

inline void write_text_shard(const fs::path& path, std::span<const ExampleRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write text shard " + path.string());
  for (const auto& r : records) out << format_example_line(r) << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

/// Streams one text shard in file order. Empty lines are skipped.
class ExampleShardReader {
 public:
  explicit ExampleShardReader(fs::path path) : path_(std::move(path)), in_(path_, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::io, "missing text shard " + path_.string());
  }

  std::optional<ExampleRecord> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      return parse_example_line(line, path_, line_no_);
    }
    return std::nullopt;
  }

  const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
  std::ifstream in_;
  std::uint64_t line_no_ = 0;
};

/// Reads every shard of a manifest in shard-then-offset order, enforcing id
/// uniqueness and the per-shard record counts.
class ExampleStream {
 public:
  explicit ExampleStream(CorpusManifest manifest) : manifest_(std::move(manifest)) {}

  std::optional<ExampleRecord> next() {
    while (true) {
      if (!reader_) {
        if (shard_ >= manifest_.text_shards.size()) return std::nullopt;
        reader_.emplace(manifest_.text_shards[shard_].path);
        in_shard_ = 0;
      }
      if (auto rec = reader_->next()) {
        ++in_shard_;
        if (!seen_.insert(rec->id).second)
          throw Error(ErrorKind::duplicate_id,
                      "duplicate id '" + rec->id + "' in " + reader_->path().string());
        return rec;
      }
      const auto expected = manifest_.text_shards[shard_].records;
      if (in_shard_ != expected)
        throw Error(ErrorKind::format, reader_->path().string() + ": manifest says " +
                                           std::to_string(expected) + " records, found " +
                                           std::to_string(in_shard_));
      reader_.reset();
      ++shard_;
    }
  }

 private:
  CorpusManifest manifest_;
  std::size_t shard_ = 0;
  std::uint64_t in_shard_ = 0;
  std::optional<ExampleShardReader> reader_;
  std::unordered_set<std::string> seen_;
};

inline ExampleStream load_examples(const CorpusManifest& manifest) { return ExampleStream(manifest); }

inline std::vector<ExampleRecord> read_all(ExampleStream stream) {
  std::vector<ExampleRecord> out;
  while (auto r = stream.next()) out.push_back(std::move(*r));
  return out;
}

// ---------------------------------------------------------------------------
// Embedding shards.
//   magic "EMB1", u32 dimension, u64 count,
//   then per record: u32 id length, id bytes, dimension x f32.

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
bool get_le(std::istream& in, T& value) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) return false;
  std::memcpy(&value, buf, sizeof(T));
  return true;
}

}  // namespace detail

inline constexpr char kEmbeddingMagic[4] = {'E', 'M', 'B', '1'};

inline void write_embedding_shard(const fs::path& path, std::span<const EmbeddingRecord> records,
                                  std::uint32_t dimension) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write embedding shard " + path.string());
  out.write(kEmbeddingMagic, 4);
  detail::put_le<std::uint32_t>(out, dimension);
  detail::put_le<std::uint64_t>(out, records.size());
  for (const auto& r : records) {
    if (r.vector.size() != dimension)
      throw Error(ErrorKind::dimension_mismatch,
                  "record '" + r.id + "' has " + std::to_string(r.vector.size()) +
                      " components, shard dimension is " + std::to_string(dimension));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.id.size()));
    out.write(r.id.data(), static_cast<std::streamsize>(r.id.size()));
    out.write(reinterpret_cast<const char*>(r.vector.data()),
              static_cast<std::streamsize>(r.vector.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

class EmbeddingShardReader {
 public:
  /// `expected_dimension` of 0 accepts whatever the header declares.
  explicit EmbeddingShardReader(fs::path path, std::uint32_t expected_dimension = 0)
      : path_(std::move(path)), in_(path_, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::io, "missing embedding shard " + path_.string());
    char magic[4];
    if (!in_.read(magic, 4) || !detail::get_le(in_, dimension_) || !detail::get_le(in_, count_))
      throw Error(ErrorKind::truncated, path_.string() + ": truncated header");
    if (std::memcmp(magic, kEmbeddingMagic, 4) != 0)
      throw Error(ErrorKind::format, path_.string() + ": bad magic, expected EMB1");
    if (expected_dimension != 0 && dimension_ != expected_dimension)
      throw Error(ErrorKind::dimension_mismatch,
                  path_.string() + ": header dimension " + std::to_string(dimension_) +
                      " does not match manifest dimension " + std::to_string(expected_dimension));
  }

  std::uint32_t dimension() const noexcept { return dimension_; }
  std::uint64_t count() const noexcept { return count_; }
  const fs::path& path() const noexcept { return path_; }

  std::optional<EmbeddingRecord> next() {
    if (read_ >= count_) return std::nullopt;
    auto truncated = [&] {
      return Error(ErrorKind::truncated, path_.string() + ": truncated at record " + std::to_string(read_));
    };
    std::uint32_t id_len = 0;
    if (!detail::get_le(in_, id_len)) throw truncated();
    EmbeddingRecord rec;
    rec.id.resize(id_len);
    if (!in_.read(rec.id.data(), id_len)) throw truncated();
    rec.vector.resize(dimension_);
    if (!in_.read(reinterpret_cast<char*>(rec.vector.data()),
                  static_cast<std::streamsize>(dimension_ * sizeof(float))))
      throw truncated();
    for (float v : rec.vector)
      if (!std::isfinite(v))
        throw Error(ErrorKind::non_finite, path_.string() + ": non-finite component in '" + rec.id + "'");
    ++read_;
    return rec;
  }

 private:
  fs::path path_;
  std::ifstream in_;
  std::uint32_t dimension_ = 0;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
};

class EmbeddingStream {
 public:
  explicit EmbeddingStream(CorpusManifest manifest) : manifest_(std::move(manifest)) {}

  std::optional<EmbeddingRecord> next() {
    while (true) {
      if (!reader_) {
        if (shard_ >= manifest_.embedding_shards.size()) return std::nullopt;
        const auto& info = manifest_.embedding_shards[shard_];
        reader_.emplace(info.path, manifest_.dimension);
        if (reader_->count() != info.records)
          throw Error(ErrorKind::format, info.path.string() + ": manifest says " +
                                             std::to_string(info.records) + " records, header says " +
                                             std::to_string(reader_->count()));
      }
      if (auto rec = reader_->next()) return rec;
      reader_.reset();
      ++shard_;
    }
  }

 private:
  CorpusManifest manifest_;
  std::size_t shard_ = 0;
  std::optional<EmbeddingShardReader> reader_;
};

inline EmbeddingStream load_embeddings(const CorpusManifest& manifest) { return EmbeddingStream(manifest); }

inline std::vector<EmbeddingRecord> read_all(EmbeddingStream stream) {
  std::vector<EmbeddingRecord> out;
  while (auto r = stream.next()) out.push_back(std::move(*r));
  return out;
}

// ---------------------------------------------------------------------------
// Score files: one JSON object per line with keys id, scorer_id, score,
// percentile?. Doubles are printed in shortest round-trip form.

inline std::string format_score_line(const ScoreRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["scorer_id"] = r.scorer_id;
  j["score"] = r.raw_score;
  if (r.percentile) j["percentile"] = *r.percentile;
  return j.dump();
}

inline void write_scores(std::span<const ScoreRecord> records, const fs::path& path) {
  for (const auto& r : records) {
    if (!r.scored())
      throw Error(ErrorKind::invalid_argument, "unscored record '" + r.id + "' cannot enter a score file");
    if (r.scorer_id != records.front().scorer_id)
      throw Error(ErrorKind::invalid_argument, "mixed scorer_id in one score file: '" +
                                                   records.front().scorer_id + "' and '" + r.scorer_id + "'");
    if (!std::isfinite(r.raw_score))
      throw Error(ErrorKind::non_finite, "non-finite score for '" + r.id + "'");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write score file " + path.string());
  for (const auto& r : records) out << format_score_line(r) << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

inline std::vector<ScoreRecord> read_scores(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open score file " + path.string());
  std::vector<ScoreRecord> out;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      return Error(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(e.what());
    }
    ScoreRecord r;
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("scorer_id") ||
        !j["scorer_id"].is_string() || !j.contains("score") || !j["score"].is_number())
      throw fail("expected keys id, scorer_id, score");
    r.id = j["id"].get<std::string>();
    r.scorer_id = j["scorer_id"].get<std::string>();
    r.raw_score = j["score"].get<double>();
    if (j.contains("percentile") && !j["percentile"].is_null()) {
      if (!j["percentile"].is_number()) throw fail("percentile must be a number");
      r.percentile = j["percentile"].get<double>();
    }
    if (!out.empty() && out.front().scorer_id != r.scorer_id)
      throw fail("mixed scorer_id '" + out.front().scorer_id + "' and '" + r.scorer_id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

/// percentile = 100 * (average 1-based ascending rank) / N. Ties share the
/// mean of the ranks they span. Output order follows input order.
inline std::vector<ScoreRecord> compute_percentiles(std::span<const ScoreRecord> scores) {
  if (scores.empty()) throw Error(ErrorKind::empty_input, "compute_percentiles: no scores");
  for (const auto& s : scores) {
    if (!std::isfinite(s.raw_score)) throw Error(ErrorKind::non_finite, "non-finite score for '" + s.id + "'");
    if (s.scorer_id != scores.front().scorer_id)
      throw Error(ErrorKind::invalid_argument, "compute_percentiles: mixed scorer_id");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a].raw_score < scores[b].raw_score; });
  std::vector<ScoreRecord> out(scores.begin(), scores.end());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]].raw_score == scores[order[i]].raw_score) ++j;
    // ranks i+1 .. j+1
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    const double pct = 100.0 * mean_rank / static_cast<double>(n);
    for (std::size_t t = i; t <= j; ++t) out[order[t]].percentile = pct;
    i = j + 1;
  }
  return out;
}

}  // namespace curator
