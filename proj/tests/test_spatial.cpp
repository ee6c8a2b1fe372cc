#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lotnext/spatial.hpp"
#include "test_util.hpp"

using namespace lotnext;

namespace {

constexpr long double kPi = 3.141592653589793238462643383279502884L;

// Spherical law in atan2 form (Vincenty, equal axes), extended precision.
double reference_distance(const GeoPoint& a, const GeoPoint& b) {
  const long double r = kPi / 180.0L;
  const long double p1 = a.lat * r, p2 = b.lat * r, dl = (b.lon - a.lon) * r;
  const long double x = std::cos(p2) * std::sin(dl);
  const long double y = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl);
  const long double z = std::sin(p1) * std::sin(p2) + std::cos(p1) * std::cos(p2) * std::cos(dl);
  return static_cast<double>(6371.0L * std::atan2(std::sqrt(x * x + y * y), z));
}

GeoPoint random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lat(-90.0, 90.0), lon(-180.0, 180.0);
  return {lat(rng), lon(rng)};
}

}  // namespace

TEST(Haversine, SpecExamples) {
  const GeoPoint x{12.5, -40.25};
  EXPECT_EQ(haversine(x, x), 0.0);
  EXPECT_NEAR(haversine({0, 0}, {0, 1}), 111.195, 0.001);
  EXPECT_NEAR(haversine({0, 0}, {0, 180}), 20015.09, 0.01);
  EXPECT_NEAR(haversine({0, 0}, {0, 1}), 6371.0 * static_cast<double>(kPi) / 180.0, 1e-9);
}

TEST(Haversine, AgreesWithReferenceAndIsAMetric) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_point(rng), b = random_point(rng), c = random_point(rng);
    const double ab = haversine(a, b);
    EXPECT_NEAR(ab, reference_distance(a, b), 1e-6);
    EXPECT_GE(ab, 0.0);
    EXPECT_DOUBLE_EQ(ab, haversine(b, a));
    EXPECT_LE(haversine(a, c), ab + haversine(b, c) + 1e-9);
  }
}

TEST(PairWeight, SpecExamples) {
  const SpatialParams p{1.0, 1e-10};
  const GeoPoint a{30.0, -97.0};
  EXPECT_DOUBLE_EQ(pair_weight(a, a, p), 1.0 + 1e-10);
  EXPECT_DOUBLE_EQ(pair_weight(a, {31.0, -96.0}, {0.0, 1e-10}), 1.0 + 1e-10);
  // a point exactly 1 km east along the equator
  const GeoPoint origin{0.0, 0.0};
  const GeoPoint one_km{0.0, 180.0 / (static_cast<double>(kPi) * 6371.0)};
  EXPECT_NEAR(pair_weight(origin, one_km, p), 0.367879, 1e-6);
}

TEST(PairWeight, MonotoneAndPositive) {
  const SpatialParams p{0.3, 1e-10};
  double prev = 2.0;
  for (int i = 0; i <= 200; ++i) {
    const double w = pair_weight({0, 0}, {0, 0.05 * i}, p);
    EXPECT_GT(w, 0.0);
    EXPECT_LE(w, prev);
    prev = w;
  }
}

TEST(MixingMatrix, RowsNormalizedAndCausal) {
  std::mt19937_64 rng(12);
  std::vector<GeoPoint> pts;
  for (int i = 0; i < 6; ++i) pts.push_back({30.0 + 0.01 * i, -97.0 + 0.02 * (i % 3)});
  const auto m = spatial_mixing_matrix(pts, {1.0, 1e-10});
  for (int k = 0; k < 6; ++k) {
    EXPECT_NEAR(m.row(k).sum(), 1.0, 1e-12);
    for (int j = k + 1; j < 6; ++j) EXPECT_EQ(m(k, j), 0.0);
    for (int j = 0; j <= k; ++j) {
      const double expected = pair_weight(pts[j], pts[k], {1.0, 1e-10});
      double denom = 0.0;
      for (int i = 0; i <= k; ++i) denom += pair_weight(pts[i], pts[k], {1.0, 1e-10});
      EXPECT_NEAR(m(k, j), expected / denom, 1e-14);
    }
  }
}

TEST(SpatialAttention, BetaZeroGivesPrefixMeans) {
  std::mt19937_64 rng(13);
  const Matrix z = lotnext::testing::random_matrix(rng, 7, 3);
  std::vector<GeoPoint> pts;
  for (int i = 0; i < 7; ++i) pts.push_back(random_point(rng));
  const std::vector<ad::Segment> segs = {{0, 4}, {4, 3}};
  ad::Tape tape;
  const auto out = spatial_context_attention(tape.constant(z), segs, pts, {0.0, 1e-10}).value();
  for (const auto& s : segs) {
    for (int k = 0; k < s.length; ++k) {
      const RowVector mean = z.middleRows(s.start, k + 1).colwise().mean();
      EXPECT_LT((out.row(s.start + k) - mean).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(SpatialAttention, SingleLocationIgnoresBeta) {
  std::mt19937_64 rng(14);
  const Matrix z = lotnext::testing::random_matrix(rng, 5, 2);
  const std::vector<GeoPoint> pts(5, GeoPoint{40.0, 10.0});
  const std::vector<ad::Segment> segs = {{0, 5}};
  ad::Tape tape;
  const auto a = spatial_context_attention(tape.constant(z), segs, pts, {0.0, 1e-10}).value();
  const auto b = spatial_context_attention(tape.constant(z), segs, pts, {50.0, 1e-10}).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpatialAttention, LargeBetaKeepsOwnRow) {
  std::mt19937_64 rng(15);
  const Matrix z = lotnext::testing::random_matrix(rng, 6, 4);
  std::vector<GeoPoint> pts;
  for (int i = 0; i < 6; ++i) pts.push_back({30.0 + 0.1 * i, -97.0});
  const std::vector<ad::Segment> segs = {{0, 6}};
  ad::Tape tape;
  const auto out = spatial_context_attention(tape.constant(z), segs, pts, {1e6, 1e-10}).value();
  for (int k = 0; k < 6; ++k) EXPECT_LT((out.row(k) - z.row(k)).norm(), 1e-4);
}

TEST(SpatialAttention, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  std::vector<GeoPoint> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({30.0 + 0.005 * i, -97.0 - 0.003 * i});
  const std::vector<ad::Segment> segs = {{0, 2}, {2, 3}};
  const Matrix proj = lotnext::testing::random_matrix(rng, 5, 3);
  const double err = lotnext::testing::gradcheck(
      [&](ad::Tape&, const std::vector<ad::Var>& v) {
        return ad::sum(ad::mul_const(spatial_context_attention(v[0], segs, pts, {1.0, 1e-10}), proj));
      },
      {lotnext::testing::random_matrix(rng, 5, 3)});
  EXPECT_LT(err, 1e-6);
}
