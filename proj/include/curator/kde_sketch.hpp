#pragma once

// R x B counter-matrix kernel density sketch. Each inserted vector bumps one
// counter per row; a query's score is the mean count across the buckets it
// hashes to. Counts are additive, so per-shard sketches merge exactly.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "curator/corpus.hpp"
#include "curator/error.hpp"
#include "curator/lsh.hpp"
#include "curator/parallel.hpp"

namespace curator {

class KdeSketch {
 public:
  using Counter = std::uint32_t;

  explicit KdeSketch(const HashFamilySpec& spec)
      : family_(std::make_shared<const HashFamily>(spec)) {
    allocate();
  }

  /// Shares an already-built family (avoids regenerating projections).
  explicit KdeSketch(std::shared_ptr<const HashFamily> family) : family_(std::move(family)) {
    allocate();
  }

  const HashFamilySpec& spec() const noexcept { return family_->spec(); }
  const HashFamily& family() const noexcept { return *family_; }
  std::shared_ptr<const HashFamily> shared_family() const noexcept { return family_; }
  std::uint32_t rows() const noexcept { return family_->rows(); }
  std::uint32_t range() const noexcept { return family_->range(); }
  std::uint64_t size() const noexcept { return inserted_; }

  /// Bytes held by the counter matrix alone.
  std::size_t payload_bytes() const noexcept { return counts_.size() * sizeof(Counter); }

  std::span<const Counter> counts() const noexcept { return counts_; }
  Counter count(std::uint32_t row, std::uint32_t bucket) const {
    return counts_.at(static_cast<std::size_t>(row) * range() + bucket);
  }

  std::uint64_t row_sum(std::uint32_t row) const {
    std::uint64_t s = 0;
    const auto* c = counts_.data() + static_cast<std::size_t>(row) * range();
    for (std::uint32_t b = 0; b < range(); ++b) s += c[b];
    return s;
  }

  void add(std::span<const float> x) {
    std::vector<std::uint32_t> buckets(rows());
    family_->hash_all(x, buckets);
    add_buckets(buckets);
  }

  /// Inserts a point given its precomputed per-row buckets. Either every
  /// row is incremented or, on overflow, none is.
  void add_buckets(std::span<const std::uint32_t> buckets) {
    check_buckets(buckets);
    for (std::uint32_t r = 0; r < rows(); ++r)
      if (counts_[index(r, buckets[r])] == std::numeric_limits<Counter>::max())
        throw Error(ErrorKind::overflow, "sketch counter overflow at row " + std::to_string(r));
    for (std::uint32_t r = 0; r < rows(); ++r) ++counts_[index(r, buckets[r])];
    ++inserted_;
  }

  /// Raw count-scale score: (1/R) * sum_r counts[r, h_r(y)].
  double score(std::span<const float> y) const {
    std::vector<std::uint32_t> buckets(rows());
    family_->hash_all(y, buckets);
    return score_buckets(buckets);
  }

  double score_buckets(std::span<const std::uint32_t> buckets) const {
    if (inserted_ == 0) throw Error(ErrorKind::empty_input, "cannot score against an empty sketch");
    check_buckets(buckets);
    std::uint64_t total = 0;
    for (std::uint32_t r = 0; r < rows(); ++r) total += counts_[index(r, buckets[r])];
    return static_cast<double>(total) / static_cast<double>(rows());
  }

  /// Raw score divided by N: estimates the kernel mean (1/N) sum_i k(x_i, y).
  double normalized_score(std::span<const float> y) const {
    return score(y) / static_cast<double>(inserted_);
  }

  /// Adds `other` into this sketch. Requires identical specs, seed included.
  void merge_from(const KdeSketch& other) {
    if (!(spec() == other.spec()))
      throw Error(ErrorKind::spec_mismatch, "cannot merge sketches with different hash family specs");
    for (std::size_t i = 0; i < counts_.size(); ++i)
      if (counts_[i] > std::numeric_limits<Counter>::max() - other.counts_[i])
        throw Error(ErrorKind::overflow, "sketch counter overflow during merge");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    inserted_ += other.inserted_;
  }

  friend bool operator==(const KdeSketch& a, const KdeSketch& b) {
    return a.spec() == b.spec() && a.inserted_ == b.inserted_ && a.counts_ == b.counts_;
  }

 private:
  friend KdeSketch sketch_deserialize(const std::filesystem::path& path);

  void allocate() {
    const std::size_t cells = static_cast<std::size_t>(family_->rows()) * family_->range();
    try {
      counts_.assign(cells, 0);
    } catch (const std::bad_alloc&) {
      throw Error(ErrorKind::allocation,
                  "cannot allocate sketch payload of " + std::to_string(cells * sizeof(Counter)) + " bytes");
    }
  }

  std::size_t index(std::uint32_t row, std::uint32_t bucket) const noexcept {
    return static_cast<std::size_t>(row) * range() + bucket;
  }

  void check_buckets(std::span<const std::uint32_t> buckets) const {
    if (buckets.size() != rows())
      throw Error(ErrorKind::invalid_argument, "expected one bucket per sketch row");
    for (auto b : buckets)
      if (b >= range()) throw Error(ErrorKind::invalid_argument, "bucket out of range");
  }

  std::shared_ptr<const HashFamily> family_;
  std::vector<Counter> counts_;
  std::uint64_t inserted_ = 0;
};

inline KdeSketch sketch_new(const HashFamilySpec& spec) { return KdeSketch(spec); }

inline KdeSketch sketch_merge(const KdeSketch& a, const KdeSketch& b) {
  KdeSketch out = a;
  out.merge_from(b);
  return out;
}

/// Hashes a batch of points in parallel into a row-major [points x rows]
/// bucket buffer.
inline std::vector<std::uint32_t> hash_batch(const HashFamily& family,
                                             std::span<const std::vector<float>> points,
                                             std::size_t threads = default_threads()) {
  const std::size_t r = family.rows();
  std::vector<std::uint32_t> buckets(points.size() * r);
  parallel_chunks(points.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      family.hash_all(points[i], std::span<std::uint32_t>(buckets.data() + i * r, r));
  });
  return buckets;
}

/// Single-pass serial build.
inline KdeSketch build_sketch(const HashFamilySpec& spec, std::span<const std::vector<float>> points) {
  KdeSketch sketch(spec);
  std::vector<std::uint32_t> buckets(sketch.rows());
  for (const auto& p : points) {
    sketch.family().hash_all(p, buckets);
    sketch.add_buckets(buckets);
  }
  return sketch;
}

/// Shard-parallel build: each worker fills a private sketch over a
/// contiguous slice, then the partial sketches are merged in shard order.
inline KdeSketch build_sketch_sharded(const HashFamilySpec& spec, std::span<const std::vector<float>> points,
                                      std::size_t shards) {
  if (shards == 0) throw Error(ErrorKind::invalid_argument, "shard count must be positive");
  auto family = std::make_shared<const HashFamily>(spec);
  std::vector<KdeSketch> partial;
  partial.reserve(shards);
  for (std::size_t s = 0; s < shards; ++s) partial.emplace_back(family);
  const std::size_t step = (points.size() + shards - 1) / shards;
  std::vector<std::exception_ptr> errors(shards);
  {
    std::vector<std::jthread> workers;
    for (std::size_t s = 0; s < shards; ++s) {
      workers.emplace_back([&, s] {
        try {
          const std::size_t begin = std::min(points.size(), s * step);
          const std::size_t end = std::min(points.size(), begin + step);
          std::vector<std::uint32_t> buckets(family->rows());
          for (std::size_t i = begin; i < end; ++i) {
            family->hash_all(points[i], buckets);
            partial[s].add_buckets(buckets);
          }
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  KdeSketch out(family);
  for (const auto& p : partial) out.merge_from(p);
  return out;
}

/// Raw scores for a batch of queries, computed in parallel over the
/// immutable sketch.
inline std::vector<double> score_batch(const KdeSketch& sketch, std::span<const std::vector<float>> queries,
                                       std::size_t threads = default_threads()) {
  std::vector<double> out(queries.size());
  parallel_chunks(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::uint32_t> buckets(sketch.rows());
    for (std::size_t i = begin; i < end; ++i) {
      sketch.family().hash_all(queries[i], buckets);
      out[i] = sketch.score_buckets(buckets);
    }
  });
  return out;
}

/// Exact kernel mean (1/N) sum_i k(x_i, y), with k the family's collision
/// probability. The quantity the normalized sketch score estimates.
inline double brute_force_kernel_sum(std::span<const std::vector<float>> data, std::span<const float> y,
                                     const HashFamilySpec& spec) {
  if (data.empty()) throw Error(ErrorKind::empty_input, "brute_force_kernel_sum: empty data");
  double sum = 0.0;
  for (const auto& x : data) sum += collision_probability(spec, x, y);
  return sum / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Sketch file: "KDE1", u16 version, spec {u8 kind, u32 dimension,
// f64 bandwidth, u32 rows, u32 range, u64 seed}, u64 N, row-major u32 counts.

inline constexpr char kSketchMagic[4] = {'K', 'D', 'E', '1'};
inline constexpr std::uint16_t kSketchVersion = 1;

inline void sketch_serialize(const KdeSketch& sketch, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write sketch file " + path.string());
  const auto& spec = sketch.spec();
  out.write(kSketchMagic, 4);
  detail::put_le<std::uint16_t>(out, kSketchVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(spec.kind));
  detail::put_le<std::uint32_t>(out, spec.dimension);
  detail::put_le<double>(out, spec.bandwidth);
  detail::put_le<std::uint32_t>(out, spec.rows);
  detail::put_le<std::uint32_t>(out, spec.range);
  detail::put_le<std::uint64_t>(out, spec.seed);
  detail::put_le<std::uint64_t>(out, sketch.size());
  const auto counts = sketch.counts();
  out.write(reinterpret_cast<const char*>(counts.data()),
            static_cast<std::streamsize>(counts.size() * sizeof(KdeSketch::Counter)));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

inline KdeSketch sketch_deserialize(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open sketch file " + path.string());
  auto truncated = [&] { return Error(ErrorKind::truncated, path.string() + ": truncated sketch file"); };
  char magic[4];
  if (!in.read(magic, 4)) throw truncated();
  if (std::memcmp(magic, kSketchMagic, 4) != 0)
    throw Error(ErrorKind::format, path.string() + ": bad magic, expected KDE1");
  std::uint16_t version = 0;
  if (!detail::get_le(in, version)) throw truncated();
  if (version != kSketchVersion)
    throw Error(ErrorKind::format, path.string() + ": unsupported sketch version " + std::to_string(version) +
                                       " (expected " + std::to_string(kSketchVersion) + ")");
  HashFamilySpec spec;
  std::uint8_t kind = 0;
  std::uint64_t n = 0;
  if (!detail::get_le(in, kind) || !detail::get_le(in, spec.dimension) || !detail::get_le(in, spec.bandwidth) ||
      !detail::get_le(in, spec.rows) || !detail::get_le(in, spec.range) || !detail::get_le(in, spec.seed) ||
      !detail::get_le(in, n))
    throw truncated();
  if (kind > 1) throw Error(ErrorKind::format, path.string() + ": unknown hash kind " + std::to_string(kind));
  spec.kind = static_cast<HashKind>(kind);
  try {
    validate(spec);
  } catch (const Error& e) {
    throw Error(ErrorKind::format, path.string() + ": invalid spec in header: " + e.what());
  }
  KdeSketch sketch(spec);
  auto& counts = sketch.counts_;
  if (!in.read(reinterpret_cast<char*>(counts.data()),
               static_cast<std::streamsize>(counts.size() * sizeof(KdeSketch::Counter))))
    throw truncated();
  if (in.peek() != std::char_traits<char>::eof())
    throw Error(ErrorKind::format, path.string() + ": trailing bytes after sketch payload");
  sketch.inserted_ = n;
  for (std::uint32_t r = 0; r < sketch.rows(); ++r)
    if (sketch.row_sum(r) != n)
      throw Error(ErrorKind::format, path.string() + ": row " + std::to_string(r) + " does not sum to N");
  return sketch;
}

}  // namespace curator
