#include "ndp/perlin.hpp"
#include "ndp/scenegen.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace ndp;

namespace {

Scan road_patch(std::uint64_t seed, std::size_t n = 2000, float half = 5.f) {
  const auto spec = ClassSpec::synthetic_default();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-half, half);
  Scan s;
  for (std::size_t i = 0; i < n; ++i) {
    s.cloud.push_back({u(rng), u(rng), 0.0f});
    s.labels.push_back(spec.road_id, 0, spec);
  }
  return s;
}

}  // namespace

TEST(Perlin, ZeroAtLatticeNodes) {
  for (std::uint64_t seed : {0ull, 7ull, 99ull}) {
    PerlinField f{0.5, seed, 0.25, -1.0};
    for (int i = -5; i <= 5; ++i)
      for (int j = -5; j <= 5; ++j) EXPECT_EQ(perlin2d(f, f.origin_u + i * 0.5, f.origin_v + j * 0.5), 0.0);
  }
}

TEST(Perlin, ContinuousAndBounded) {
  PerlinField f{0.7, 3, 0.0, 0.0};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int k = 0; k < 20000; ++k) {
    const double x = u(rng), y = u(rng);
    const double v = perlin2d(f, x, y);
    EXPECT_LE(std::abs(v), 1.0);
    EXPECT_LT(std::abs(v - perlin2d(f, x + 1e-6, y)), 1e-4);
  }
}

TEST(Perlin, DeterministicUnderSeed) {
  PerlinField a{1.0, 11, 0.0, 0.0}, b = a, c{1.0, 12, 0.0, 0.0};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  int differ = 0;
  for (int k = 0; k < 1000; ++k) {
    const double x = u(rng), y = u(rng);
    EXPECT_EQ(perlin2d(a, x, y), perlin2d(b, x, y));
    differ += perlin2d(a, x, y) != perlin2d(c, x, y);
  }
  EXPECT_GT(differ, 900);
}

TEST(Perlin, GradientsAreUnit) {
  PerlinField f{1.0, 5, 0.0, 0.0};
  for (int i = -3; i < 3; ++i)
    for (int j = -3; j < 3; ++j) {
      const auto [gx, gy] = f.gradient(i, j);
      EXPECT_NEAR(gx * gx + gy * gy, 1.0, 1e-12);
    }
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(linear_quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(linear_quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(linear_quantile({4, 1, 3, 2}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(linear_quantile({0, 10}, 0.3), 3.0);
}

TEST(PerlinRaise, AlphaZeroLeavesGeometryButRelabels) {
  const auto spec = ClassSpec::synthetic_default();
  const Scan s = road_patch(1);
  RaiseConfig cfg;
  cfg.alpha = 0.0;
  cfg.seed = 4;
  const auto r = perlin_raise(s.cloud, s.labels, spec, cfg);
  ASSERT_TRUE(r.report.applied);
  EXPECT_EQ(r.cloud, s.cloud);
  EXPECT_FALSE(r.report.labeled_indices.empty());
  for (std::size_t i : r.report.labeled_indices) EXPECT_EQ(r.labels.role[i], Role::AuxOod);
}

TEST(PerlinRaise, RhoOneSelectsWholeNeighborhood) {
  const auto spec = ClassSpec::synthetic_default();
  const Scan s = road_patch(2, 3000, 3.f);
  RaiseConfig cfg;
  cfg.rho = 1.0;
  cfg.seed = 9;
  const auto r = perlin_raise(s.cloud, s.labels, spec, cfg);
  EXPECT_GT(r.report.neighborhood_size, 0u);
  EXPECT_EQ(r.report.selected_size, r.report.neighborhood_size);
}

TEST(PerlinRaise, ContractOverSeeds) {
  const auto spec = ClassSpec::synthetic_default();
  SceneConfig sc = SceneConfig::long_tail(8000, 0);
  double frac = 0.0;
  int runs = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    sc.seed = seed;
    const Scan s = generate_scene(sc, spec);
    RaiseConfig cfg;
    cfg.seed = seed * 31 + 1;
    const auto r = perlin_raise(s.cloud, s.labels, spec, cfg);
    frac += double(r.report.selected_size) / double(r.report.neighborhood_size);
    ++runs;
    std::set<std::size_t> raised(r.report.raised_indices.begin(), r.report.raised_indices.end());
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
      const double dz = double(r.cloud.points[i].z) - double(s.cloud.points[i].z);
      EXPECT_EQ(r.cloud.points[i].x, s.cloud.points[i].x);
      EXPECT_EQ(r.cloud.points[i].y, s.cloud.points[i].y);
      if (!raised.count(i)) {
        EXPECT_EQ(dz, 0.0);
        continue;
      }
      EXPECT_GE(dz, 0.0);
      EXPECT_LE(dz, cfg.alpha);
      EXPECT_LE(oracle::dist2(s.cloud.points[i], r.report.center), cfg.r * cfg.r + 1e-9);
      EXPECT_EQ(s.labels.semantic[i], spec.road_id);
    }
  }
  frac /= runs;
  EXPECT_GE(frac, 0.25);
  EXPECT_LE(frac, 0.35);
}

TEST(PerlinRaise, TooFewRoadPointsIsContractError) {
  const auto spec = ClassSpec::synthetic_default();
  Scan s;
  s.cloud.push_back({0, 0, 0});
  s.labels.push_back(spec.road_id, 0, spec);
  EXPECT_THROW(perlin_raise(s.cloud, s.labels, spec, RaiseConfig{}), ContractError);
}

TEST(PerlinRaise, NoClusterReturnsInputUnchanged) {
  // Sparse road: nothing within eps of anything, so DBSCAN yields only noise.
  const auto spec = ClassSpec::synthetic_default();
  Scan s;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      s.cloud.push_back({float(i) * 0.3f, float(j) * 0.3f, 0.f});
      s.labels.push_back(spec.road_id, 0, spec);
    }
  RaiseConfig cfg;
  cfg.dbscan_eps = 0.05;
  cfg.seed = 3;
  const auto r = perlin_raise(s.cloud, s.labels, spec, cfg);
  EXPECT_FALSE(r.report.applied);
  EXPECT_EQ(r.cloud, s.cloud);
  EXPECT_EQ(r.labels, s.labels);
}

TEST(RaiseSamplerTest, RadiusWithinRange) {
  RaiseSampler sampler;
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    const auto c = sampler.sample(rng);
    EXPECT_GE(c.r, 0.75);
    EXPECT_LE(c.r, 1.5);
    EXPECT_EQ(c.alpha, 0.4);
    EXPECT_EQ(c.rho, 0.3);
  }
}
