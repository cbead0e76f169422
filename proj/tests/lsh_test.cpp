#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "curator/lsh.hpp"
#include "fixtures.hpp"

using namespace curator;
using curator::testing::gaussian_points;

namespace {

HashFamilySpec euclid(std::uint32_t d, double bw, std::uint32_t rows, std::uint32_t range, std::uint64_t seed) {
  return {HashKind::euclidean_pstable, d, bw, rows, range, seed};
}

// p(c) = 2 * int_0^bw (1/c) phi(t/c) (1 - t/bw) dt, by composite Simpson.
double pstable_by_quadrature(double c, double bw) {
  const int n = 20000;
  const double h = bw / n;
  auto f = [&](double t) {
    const double z = t / c;
    return 2.0 / c * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) * (1.0 - t / bw);
  };
  double s = f(0.0) + f(bw);
  for (int i = 1; i < n; ++i) s += f(i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST(HashFamily, SameSpecSameBuckets) {
  const auto spec = euclid(16, 2.0, 64, 1000, 42);
  const auto a = family_new(spec);
  const auto b = family_new(spec);
  const auto pts = gaussian_points(50, 16, 1);
  std::vector<std::uint32_t> ha(64), hb(64);
  for (const auto& p : pts) {
    a.hash_all(p, ha);
    b.hash_all(p, hb);
    EXPECT_EQ(ha, hb);
  }
}

TEST(HashFamily, DifferentSeedsDiffer) {
  const auto a = family_new(euclid(16, 2.0, 64, 1000, 1));
  const auto b = family_new(euclid(16, 2.0, 64, 1000, 2));
  const auto pts = gaussian_points(10, 16, 5);
  std::size_t differing = 0;
  std::vector<std::uint32_t> ha(64), hb(64);
  for (const auto& p : pts) {
    a.hash_all(p, ha);
    b.hash_all(p, hb);
    for (std::size_t r = 0; r < 64; ++r) differing += ha[r] != hb[r];
  }
  EXPECT_GT(differing, 320u);  // chance agreement is high with few occupied buckets
}

TEST(HashFamily, DifferentSeedsRarelyAgreeOnWholeSignature) {
  const auto a = family_new(euclid(16, 2.0, 8, 1000, 11));
  const auto b = family_new(euclid(16, 2.0, 8, 1000, 12));
  std::vector<std::uint32_t> ha(8), hb(8);
  std::size_t full = 0;
  for (const auto& p : gaussian_points(100, 16, 13)) {
    a.hash_all(p, ha);
    b.hash_all(p, hb);
    full += ha == hb;
  }
  EXPECT_LT(full, 5u);
}

TEST(HashFamily, InvalidSpecs) {
  EXPECT_THROW(family_new(euclid(0, 1.0, 4, 10, 0)), Error);
  EXPECT_THROW(family_new(euclid(4, 0.0, 4, 10, 0)), Error);
  EXPECT_THROW(family_new(euclid(4, -1.0, 4, 10, 0)), Error);
  EXPECT_THROW(family_new(euclid(4, std::nan(""), 4, 10, 0)), Error);
  EXPECT_THROW(family_new(euclid(4, 1.0, 0, 10, 0)), Error);
  EXPECT_THROW(family_new(euclid(4, 1.0, 4, 1, 0)), Error);
}

TEST(HashFamily, DimensionMismatch) {
  const auto f = family_new(euclid(4, 1.0, 2, 10, 0));
  std::vector<float> x(3, 1.0f);
  try {
    f.hash_row(0, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension_mismatch);
  }
}

TEST(HashFamily, ZeroVectorLandsInBucketZero) {
  const auto f = family_new(euclid(8, 3.0, 100, 997, 9));
  std::vector<float> zero(8, 0.0f);
  for (std::uint32_t r = 0; r < 100; ++r) {
    EXPECT_EQ(f.raw_index(r, zero), 0);
    EXPECT_EQ(f.hash_row(r, zero), 0u);
  }
}

TEST(HashFamily, OffsetsInsideBandwidth) {
  const auto f = family_new(euclid(4, 2.5, 500, 10, 3));
  for (std::uint32_t r = 0; r < 500; ++r) {
    EXPECT_GE(f.offset(r), 0.0);
    EXPECT_LT(f.offset(r), 2.5);
  }
}

TEST(HashFamily, BucketsStayInRange) {
  const auto f = family_new(euclid(6, 0.1, 32, 7, 4));
  const auto pts = gaussian_points(200, 6, 8, 50.0);
  std::vector<std::uint32_t> h(32);
  for (const auto& p : pts) {
    f.hash_all(p, h);
    for (auto b : h) EXPECT_LT(b, 7u);
  }
}

TEST(HashFamily, TranslationAlongProjectionShiftsIndexByOne) {
  const double bw = 1.5;
  const auto f = family_new(euclid(5, bw, 20, 1000, 17));
  const auto pts = gaussian_points(30, 5, 99);
  std::size_t checked = 0;
  for (std::uint32_t r = 0; r < 20; ++r) {
    const auto w = f.projection(r);
    double ww = 0.0;
    for (float v : w) ww += static_cast<double>(v) * v;
    for (const auto& x : pts) {
      double proj = f.offset(r);
      for (std::size_t i = 0; i < 5; ++i) proj += static_cast<double>(w[i]) * x[i];
      const double frac = proj / bw - std::floor(proj / bw);
      if (frac < 0.05 || frac > 0.95) continue;  // keep clear of floor boundaries
      std::vector<float> y(x);
      for (std::size_t i = 0; i < 5; ++i) y[i] = static_cast<float>(x[i] + bw * w[i] / ww);
      EXPECT_EQ(f.raw_index(r, y), f.raw_index(r, x) + 1);
      ++checked;
    }
  }
  EXPECT_GT(checked, 400u);
}

TEST(CollisionProbability, ClosedFormMatchesQuadrature) {
  for (double c : {0.1, 0.5, 1.0, 2.0, 3.0, 10.0}) {
    EXPECT_NEAR(pstable_collision(c, 1.0), pstable_by_quadrature(c, 1.0), 1e-6) << c;
    EXPECT_NEAR(pstable_collision(2.0 * c, 2.0), pstable_by_quadrature(c, 1.0), 1e-6) << c;
  }
  EXPECT_NEAR(pstable_collision(1.0, 1.0), 0.368749, 1e-5);
}

TEST(CollisionProbability, LimitsAndMonotonicity) {
  const auto spec = euclid(3, 2.0, 1, 2, 0);
  std::vector<float> x{1, 2, 3};
  EXPECT_DOUBLE_EQ(collision_probability(spec, x, x), 1.0);
  std::vector<float> far{1e6f, 0, 0};
  EXPECT_LT(collision_probability(spec, x, far), 1e-5);
  double prev = 1.0;
  for (double c = 0.01; c < 50.0; c *= 1.3) {
    const double p = pstable_collision(c, 2.0);
    EXPECT_LE(p, prev);
    EXPECT_GE(p, 0.0);
    prev = p;
  }
}

TEST(CollisionProbability, Symmetric) {
  const auto pts = gaussian_points(20, 7, 12);
  for (auto kind : {HashKind::euclidean_pstable, HashKind::cosine_signed_projection}) {
    HashFamilySpec spec{kind, 7, 1.3, 1, 16, 0};
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
      EXPECT_DOUBLE_EQ(collision_probability(spec, pts[i], pts[i + 1]),
                       collision_probability(spec, pts[i + 1], pts[i]));
  }
}

TEST(CollisionProbability, MonteCarloEuclidean) {
  const double bw = 1.0;
  const std::uint32_t rows = 8000;
  const auto f = family_new(euclid(4, bw, rows, 2, 77));
  std::vector<float> x{0.3f, -0.2f, 0.1f, 0.5f};
  for (double c : {0.5, 1.0, 2.0}) {
    std::vector<float> y(x);
    y[1] += static_cast<float>(c);
    std::size_t hits = 0;
    for (std::uint32_t r = 0; r < rows; ++r) hits += f.raw_index(r, x) == f.raw_index(r, y);
    EXPECT_NEAR(static_cast<double>(hits) / rows, pstable_collision(c, bw), 0.025) << c;
  }
}

TEST(CollisionProbability, MonteCarloCosine) {
  const std::uint32_t rows = 8000;
  HashFamilySpec spec{HashKind::cosine_signed_projection, 3, 1.0, rows, 2, 5};
  ASSERT_EQ(cosine_bits(2), 1u);
  const auto f = family_new(spec);
  const double angle = std::numbers::pi / 3.0;
  std::vector<float> x{1, 0, 0};
  std::vector<float> y{static_cast<float>(std::cos(angle)), static_cast<float>(std::sin(angle)), 0};
  std::size_t hits = 0;
  for (std::uint32_t r = 0; r < rows; ++r) hits += f.raw_index(r, x) == f.raw_index(r, y);
  EXPECT_NEAR(collision_probability(spec, x, y), 2.0 / 3.0, 1e-6);
  EXPECT_NEAR(static_cast<double>(hits) / rows, 2.0 / 3.0, 0.025);
}

TEST(CollisionProbability, CosineMultiBitIsPower) {
  HashFamilySpec spec{HashKind::cosine_signed_projection, 2, 1.0, 1, 16, 0};
  ASSERT_EQ(cosine_bits(16), 4u);
  std::vector<float> x{1, 0}, y{0, 1};
  EXPECT_NEAR(collision_probability(spec, x, y), std::pow(0.5, 4), 1e-12);
}

TEST(MedianHeuristic, KnownConfiguration) {
  // Distances among {0, 1, 3} on a line: 1, 2, 3.
  std::vector<std::vector<float>> pts{{0.0f}, {1.0f}, {3.0f}};
  EXPECT_DOUBLE_EQ(median_pairwise_distance(pts), 2.0);
  std::vector<std::vector<float>> four{{0.0f}, {1.0f}, {3.0f}, {7.0f}};
  // 1,2,3,4,6,7 -> (3+4)/2
  EXPECT_DOUBLE_EQ(median_pairwise_distance(four), 3.5);
  std::vector<std::vector<float>> same{{1.0f}, {1.0f}};
  EXPECT_THROW(median_pairwise_distance(same), Error);
}
