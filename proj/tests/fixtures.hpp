#pragma once

// Shared test helpers: scratch directories and synthetic point clouds.

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "curator/corpus.hpp"
#include "curator/random.hpp"

namespace curator::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("curator-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::vector<float>> gaussian_points(std::size_t n, std::size_t d, std::uint64_t seed,
                                                       double scale = 1.0) {
  CounterRng rng(seed);
  std::vector<std::vector<float>> out(n, std::vector<float>(d));
  for (auto& p : out)
    for (auto& x : p) x = static_cast<float>(scale * rng.normal());
  return out;
}

/// Uniform points in the unit square [0,1]^2 shifted by (dx, 0).
inline std::vector<std::vector<float>> square_blob(std::size_t n, double dx, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<std::vector<float>> out(n, std::vector<float>(2));
  for (auto& p : out) {
    p[0] = static_cast<float>(dx + rng.uniform());
    p[1] = static_cast<float>(rng.uniform());
  }
  return out;
}

/// Splits points into `shards` contiguous embedding shards under `dir` (ids
/// "<prefix><index>") and saves manifest.json next to them.
inline CorpusManifest write_embedding_corpus(const std::filesystem::path& dir,
                                             const std::vector<std::vector<float>>& points, std::size_t shards,
                                             const std::string& prefix = "e") {
  CorpusManifest m;
  m.dimension = static_cast<std::uint32_t>(points.empty() ? 0 : points[0].size());
  const std::size_t step = (points.size() + shards - 1) / shards;
  for (std::size_t s = 0; s < shards; ++s) {
    std::vector<EmbeddingRecord> recs;
    for (std::size_t i = s * step; i < std::min(points.size(), (s + 1) * step); ++i)
      recs.push_back({prefix + std::to_string(i), points[i]});
    const auto path = dir / ("emb-" + std::to_string(s) + ".emb");
    write_embedding_shard(path, recs, m.dimension);
    m.embedding_shards.push_back({path, recs.size()});
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

/// Text shard of `n` examples with ids "<prefix><index>" and short varied text.
inline std::vector<ExampleRecord> make_examples(std::size_t n, const std::string& prefix = "x") {
  static const char* words[] = {"river", "stone", "lattice", "quiet", "engine", "harbor", "pixel", "orbit"};
  std::vector<ExampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (std::size_t w = 0; w < 3 + i % 5; ++w) text += std::string(w ? " " : "") + words[(i * 7 + w * 3) % 8];
    out.push_back({prefix + std::to_string(i), text + " #" + std::to_string(i), std::nullopt});
  }
  return out;
}

}  // namespace curator::testing
