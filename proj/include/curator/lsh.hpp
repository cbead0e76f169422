#pragma once

// Seeded locality-sensitive hash families. The collision probability of a
// single (pre-modulo) hash row is the kernel the density sketch estimates.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "curator/error.hpp"
#include "curator/random.hpp"

namespace curator {

enum class HashKind : std::uint8_t {
  euclidean_pstable = 0,
  cosine_signed_projection = 1,
};

inline const char* to_string(HashKind kind) {
  return kind == HashKind::euclidean_pstable ? "euclidean-pstable" : "cosine-signed-projection";
}

struct HashFamilySpec {
  HashKind kind = HashKind::euclidean_pstable;
  std::uint32_t dimension = 0;
  double bandwidth = 1.0;  // euclidean only
  std::uint32_t rows = 1;
  std::uint32_t range = 2;
  std::uint64_t seed = 0;

  friend bool operator==(const HashFamilySpec&, const HashFamilySpec&) = default;
};

inline void validate(const HashFamilySpec& spec) {
  if (spec.dimension == 0) throw Error(ErrorKind::invalid_argument, "hash family: dimension must be positive");
  if (spec.rows == 0) throw Error(ErrorKind::invalid_argument, "hash family: rows must be positive");
  if (spec.range < 2) throw Error(ErrorKind::invalid_argument, "hash family: range must be at least 2");
  if (spec.kind == HashKind::euclidean_pstable && !(spec.bandwidth > 0.0 && std::isfinite(spec.bandwidth)))
    throw Error(ErrorKind::invalid_argument, "hash family: bandwidth must be positive and finite");
  if (spec.kind != HashKind::euclidean_pstable && spec.kind != HashKind::cosine_signed_projection)
    throw Error(ErrorKind::invalid_argument, "hash family: unknown kind");
}

/// Sign bits per row for the cosine family: the widest pattern that still
/// fits in the range without modulo folding, capped at 16.
inline std::uint32_t cosine_bits(std::uint32_t range) {
  return std::clamp<std::uint32_t>(static_cast<std::uint32_t>(std::bit_width(range)) - 1, 1, 16);
}

/// Stable 64-bit digest of a spec, used in scorer ids.
inline std::uint64_t spec_hash(const HashFamilySpec& spec) {
  std::uint64_t bw_bits = 0;
  static_assert(sizeof bw_bits == sizeof spec.bandwidth);
  std::memcpy(&bw_bits, &spec.bandwidth, sizeof bw_bits);
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(spec.kind));
  for (std::uint64_t v : {std::uint64_t{spec.dimension}, bw_bits, std::uint64_t{spec.rows},
                          std::uint64_t{spec.range}, spec.seed})
    h = hash_combine(h, v);
  return h;
}

namespace detail {

// Fixed-order dot product: sixteen float lanes (vectorizable) folded into a
// double. Every hash computation goes through here so building and scoring
// agree bit for bit.
inline double dot(const float* w, const float* x, std::size_t d) noexcept {
  constexpr std::size_t kLanes = 16;
  float acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= d; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += w[i + l] * x[i + l];
  double sum = 0.0;
  for (; i < d; ++i) sum += static_cast<double>(w[i]) * x[i];
  for (float a : acc) sum += a;
  return sum;
}

inline std::uint32_t reduce_mod(std::int64_t index, std::uint32_t range) noexcept {
  const auto b = static_cast<std::int64_t>(range);
  const std::int64_t r = index % b;
  return static_cast<std::uint32_t>(r < 0 ? r + b : r);
}

}  // namespace detail

/// R independent hash functions drawn deterministically from a spec.
/// Immutable after construction and safe to share across threads.
class HashFamily {
 public:
  explicit HashFamily(const HashFamilySpec& spec) : spec_(spec) {
    validate(spec_);
    per_row_ = spec_.kind == HashKind::euclidean_pstable ? 1 : cosine_bits(spec_.range);
    const std::size_t d = spec_.dimension;
    projections_.resize(static_cast<std::size_t>(spec_.rows) * per_row_ * d);
    if (spec_.kind == HashKind::euclidean_pstable) offsets_.resize(spec_.rows);
    for (std::uint32_t r = 0; r < spec_.rows; ++r) {
      CounterRng rng(hash_combine(spec_.seed, r));
      float* w = projections_.data() + static_cast<std::size_t>(r) * per_row_ * d;
      for (std::size_t i = 0; i < per_row_ * d; ++i) w[i] = static_cast<float>(rng.normal());
      if (spec_.kind == HashKind::euclidean_pstable) offsets_[r] = rng.uniform() * spec_.bandwidth;
    }
  }

  const HashFamilySpec& spec() const noexcept { return spec_; }
  std::uint32_t rows() const noexcept { return spec_.rows; }
  std::uint32_t range() const noexcept { return spec_.range; }
  std::uint32_t dimension() const noexcept { return spec_.dimension; }

  /// Projection vector(s) of a row: one for euclidean, cosine_bits() for cosine.
  std::span<const float> projection(std::uint32_t row) const {
    check_row(row);
    const std::size_t len = per_row_ * spec_.dimension;
    return {projections_.data() + row * len, len};
  }

  double offset(std::uint32_t row) const {
    check_row(row);
    return offsets_.empty() ? 0.0 : offsets_[row];
  }

  /// Hash index before range reduction. Euclidean: floor((w.x + b) / bandwidth).
  /// Cosine: the sign pattern of the row's projections as an integer.
  std::int64_t raw_index(std::uint32_t row, std::span<const float> x) const {
    check_row(row);
    check_dim(x);
    return raw_index_unchecked(row, x.data());
  }

  std::uint32_t hash_row(std::uint32_t row, std::span<const float> x) const {
    return detail::reduce_mod(raw_index(row, x), spec_.range);
  }

  /// Bucket of every row; `out` must hold rows() entries.
  void hash_all(std::span<const float> x, std::span<std::uint32_t> out) const {
    check_dim(x);
    if (out.size() != spec_.rows)
      throw Error(ErrorKind::invalid_argument, "hash_all: output span must hold one bucket per row");
    for (std::uint32_t r = 0; r < spec_.rows; ++r)
      out[r] = detail::reduce_mod(raw_index_unchecked(r, x.data()), spec_.range);
  }

 private:
  std::int64_t raw_index_unchecked(std::uint32_t row, const float* x) const noexcept {
    const std::size_t d = spec_.dimension;
    const float* w = projections_.data() + static_cast<std::size_t>(row) * per_row_ * d;
    if (spec_.kind == HashKind::euclidean_pstable) {
      const double proj = detail::dot(w, x, d) + offsets_[row];
      return static_cast<std::int64_t>(std::floor(proj / spec_.bandwidth));
    }
    std::int64_t pattern = 0;
    for (std::uint32_t b = 0; b < per_row_; ++b)
      pattern = (pattern << 1) | (detail::dot(w + b * d, x, d) >= 0.0 ? 1 : 0);
    return pattern;
  }

  void check_row(std::uint32_t row) const {
    if (row >= spec_.rows)
      throw Error(ErrorKind::invalid_argument,
                  "row " + std::to_string(row) + " out of range [0, " + std::to_string(spec_.rows) + ")");
  }
  void check_dim(std::span<const float> x) const {
    if (x.size() != spec_.dimension)
      throw Error(ErrorKind::dimension_mismatch, "vector has " + std::to_string(x.size()) +
                                                     " components, family expects " +
                                                     std::to_string(spec_.dimension));
  }

  HashFamilySpec spec_;
  std::size_t per_row_ = 1;
  std::vector<float> projections_;
  std::vector<double> offsets_;
};

inline HashFamily family_new(const HashFamilySpec& spec) { return HashFamily(spec); }

/// Collision probability of one p-stable row at distance `distance` with
/// bucket width `bandwidth` (offsets uniform on [0, bandwidth)).
inline double pstable_collision(double distance, double bandwidth) {
  if (distance <= 0.0) return 1.0;
  if (!std::isfinite(distance)) return 0.0;
  const double r = bandwidth / distance;
  // 1 - 2*Phi(-r) - 2/(sqrt(2 pi) r) * (1 - exp(-r^2/2)), written stably.
  const double p = std::erf(r / std::numbers::sqrt2) -
                   2.0 / (std::sqrt(2.0 * std::numbers::pi) * r) * -std::expm1(-0.5 * r * r);
  return std::clamp(p, 0.0, 1.0);
}

/// Collision probability of one cosine row given the angle between vectors.
inline double cosine_collision(double angle, std::uint32_t range) {
  return std::pow(1.0 - angle / std::numbers::pi, static_cast<double>(cosine_bits(range)));
}

/// The kernel k(x, y) realized by the family: the pre-modulo collision
/// probability of a single row.
inline double collision_probability(const HashFamilySpec& spec, std::span<const float> x,
                                    std::span<const float> y) {
  if (x.size() != y.size() || x.size() != spec.dimension)
    throw Error(ErrorKind::dimension_mismatch, "collision_probability: dimension mismatch");
  if (spec.kind == HashKind::euclidean_pstable) {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double diff = static_cast<double>(x[i]) - y[i];
      sq += diff * diff;
    }
    return pstable_collision(std::sqrt(sq), spec.bandwidth);
  }
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += static_cast<double>(x[i]) * y[i];
    xx += static_cast<double>(x[i]) * x[i];
    yy += static_cast<double>(y[i]) * y[i];
  }
  double angle;
  if (xx == 0.0 && yy == 0.0) {
    angle = 0.0;
  } else if (xx == 0.0 || yy == 0.0) {
    // A zero vector hashes to all-ones; a random sign matches half the time.
    angle = std::numbers::pi / 2.0;
  } else {
    angle = std::acos(std::clamp(xy / std::sqrt(xx * yy), -1.0, 1.0));
  }
  return cosine_collision(angle, spec.range);
}

/// Median pairwise Euclidean distance over a seeded subsample of at most
/// `subsample` points. Default bandwidth heuristic.
inline double median_pairwise_distance(std::span<const std::vector<float>> points,
                                       std::size_t subsample = 1000, std::uint64_t seed = 0) {
  if (points.size() < 2) throw Error(ErrorKind::invalid_argument, "median heuristic needs at least 2 points");
  std::vector<std::size_t> idx(points.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t m = std::min(subsample, points.size());
  CounterRng rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<double> dists;
  dists.reserve(m * (m - 1) / 2);
  for (std::size_t a = 0; a < m; ++a) {
    const auto& p = points[idx[a]];
    for (std::size_t b = a + 1; b < m; ++b) {
      const auto& q = points[idx[b]];
      if (p.size() != q.size()) throw Error(ErrorKind::dimension_mismatch, "median heuristic: mixed dimensions");
      double sq = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double diff = static_cast<double>(p[i]) - q[i];
        sq += diff * diff;
      }
      dists.push_back(std::sqrt(sq));
    }
  }
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  if (!(median > 0.0)) throw Error(ErrorKind::invalid_argument, "median pairwise distance is zero");
  return median;
}

}  // namespace curator
