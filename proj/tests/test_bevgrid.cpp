#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "raliflow/bevgrid.hpp"
#include "raliflow/grad_check.hpp"

using namespace raliflow;
using namespace raliflow::ad;

namespace {

GridSpec grid_at_origin(double res, std::size_t w, std::size_t h) { return {0.0, 0.0, res, w, h}; }

PillarEncoder random_encoder(std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> w(kPointFeatureWidth * c), b(c);
  for (auto& x : w) x = u(rng);
  for (auto& x : b) x = u(rng);
  return {Tensor::from({kPointFeatureWidth, c}, w, true), Tensor::from({c}, b, true)};
}

std::vector<double> brute_force_distance_sq(const std::vector<unsigned char>& dyn, const GridSpec& g) {
  std::vector<double> out(dyn.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < dyn.size(); ++i) {
    const auto ix = static_cast<long>(i % g.width), iy = static_cast<long>(i / g.width);
    for (std::size_t j = 0; j < dyn.size(); ++j) {
      if (!dyn[j]) continue;
      const long dx = ix - static_cast<long>(j % g.width), dy = iy - static_cast<long>(j / g.width);
      out[i] = std::min(out[i], static_cast<double>(dx * dx + dy * dy));
    }
  }
  return out;
}

}  // namespace

TEST(Pillarize, CellAssignmentExamples) {
  const GridSpec g = grid_at_origin(0.1, 8, 8);
  LidarCloud c;
  c.points = {{{0.05, 0.05, 0}, 0}, {{0.10, 0, 0}, 0}, {{-0.01, 0, 0}, 0}, {{0.35, 0.72, 1}, 0}};
  const auto a = pillarize(c, g);
  EXPECT_EQ(a.cell[0], 0);
  EXPECT_EQ(a.cell[1], 1);
  EXPECT_EQ(a.cell[2], -1);
  EXPECT_EQ(a.cell[3], 7 * 8 + 3);
  EXPECT_EQ(a.in_grid, (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(a.cell_points[1], (std::vector<std::size_t>{1}));
}

TEST(EncodePillars, EmptyCellsZeroAndSinglePointIdentity) {
  std::mt19937_64 rng(1);
  const GridSpec g = grid_at_origin(1.0, 4, 4);
  RadarCloud c;
  c.points = {{{0.3, 0.4, -1.0}, 2.0, 0.0, 5.0}, {{2.5, 3.5, 0.5}, -1.0, 0.0, 1.0}};
  const auto enc = random_encoder(6, rng);
  const auto a = pillarize(c, g);
  const FeatureMap m = encode_pillars(c, a, g, enc);
  ASSERT_EQ(m.features.shape(), (Shape{16, 6}));
  const Tensor h = relu(add(matmul(point_features(c, a, g), enc.weight), enc.bias));
  for (std::size_t cell = 0; cell < 16; ++cell) {
    EXPECT_EQ(m.occupancy[cell] != 0, cell == 0 || cell == 3 * 4 + 2);
    for (std::size_t j = 0; j < 6; ++j) {
      const double v = m.features[cell * 6 + j];
      if (cell == 0) EXPECT_EQ(v, h[j]);
      else if (cell == 14) EXPECT_EQ(v, h[6 + j]);
      else EXPECT_EQ(v, 0.0);
    }
  }
  // Offsets are measured from the cell center.
  const Tensor f = point_features(c, a, g);
  EXPECT_NEAR(f[0], -0.2, 1e-15);
  EXPECT_NEAR(f[1], -0.1, 1e-15);
  EXPECT_EQ(f[3], 2.0);
  EXPECT_EQ(f[4], 0.5);
}

TEST(EncodePillars, PermutationInvariantWithinCells) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  const GridSpec g = grid_at_origin(0.5, 4, 4);
  LidarCloud c;
  for (int i = 0; i < 40; ++i) c.points.push_back({{u(rng), u(rng), u(rng) - 1}, u(rng)});
  const auto enc = random_encoder(8, rng);
  const auto base = encode_pillars(c, pillarize(c, g), g, enc);
  for (int t = 0; t < 5; ++t) {
    LidarCloud s = c;
    std::shuffle(s.points.begin(), s.points.end(), rng);
    const auto a = pillarize(s, g);
    const auto m = encode_pillars(s, a, g, enc);
    EXPECT_EQ(m.occupancy, base.occupancy);
    for (std::size_t i = 0; i < m.features.numel(); ++i) EXPECT_EQ(m.features[i], base.features[i]);
    for (std::size_t cell = 0; cell < 16; ++cell) EXPECT_EQ(m.occupancy[cell] != 0, !a.cell_points[cell].empty());
  }
}

TEST(EncodePillars, GradientCheckOnToyCloud) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(30 + seed);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    const GridSpec g = grid_at_origin(1.0, 2, 2);
    RadarCloud c;
    for (int i = 0; i < 5; ++i) c.points.push_back({{u(rng), u(rng), u(rng)}, u(rng) - 1, 0.0, 3 * u(rng)});
    auto enc = random_encoder(4, rng);
    const auto a = pillarize(c, g);
    Tensor x = point_features(c, a, g);
    x = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
    std::vector<double> wv(16);
    for (auto& v : wv) v = u(rng);
    const Tensor w = Tensor::from({4, 4}, wv);
    auto f = [&] { return sum(mul(encode_pillars(x, a, g, enc).features, w)); };
    const auto r = grad_check(f, {x, enc.weight, enc.bias});
    EXPECT_TRUE(r.passed) << r.max_rel_error;
  }
}

TEST(EncodePillars, ShapeMismatch) {
  std::mt19937_64 rng(3);
  const GridSpec g = grid_at_origin(1.0, 2, 2);
  LidarCloud c;
  c.points = {{{0.5, 0.5, 0}, 0}};
  const auto a = pillarize(c, g);
  EXPECT_THROW(encode_pillars(Tensor::zeros({2, 5}), a, g, random_encoder(3, rng)), Error);
}

TEST(DynamicMap, Examples) {
  const GridSpec g = grid_at_origin(1.0, 3, 1);
  RadarCloud c;
  c.points = {{{0.5, 0.5, 0}, 0.05, 0, 0}, {{1.5, 0.5, 0}, -0.2, 0, 0}, {{2.5, 0.5, 0}, 0.05, 0, 0},
              {{2.6, 0.5, 0}, 0.3, 0, 0}};
  EXPECT_EQ(dynamic_radar_map(c, g), (std::vector<unsigned char>{0, 1, 1}));
}

TEST(Heatmap, SpotValues) {
  EXPECT_EQ(gaussian_weight(0.0, 10.0), 1.0);
  EXPECT_NEAR(gaussian_weight(0.1, 10.0), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(gaussian_weight(0.25, 10.0), 0.0820849986238988, 1e-12);

  // Neighbor of a dynamic cell at 0.5 m spacing.
  const GridSpec g = grid_at_origin(0.5, 3, 3);
  std::vector<unsigned char> dyn(9, 0);
  dyn[4] = 1;
  const auto h = gaussian_heatmap(dyn, g);
  EXPECT_EQ(h.values[4], 1.0);
  EXPECT_NEAR(h.values[5], std::exp(-2.5), 1e-12);
  EXPECT_NEAR(h.values[0], std::exp(-5.0), 1e-12);

  const GridSpec gs = grid_at_origin(1.0 / std::sqrt(10.0), 3, 1);
  const auto hs = gaussian_heatmap({1, 0, 0}, gs);
  EXPECT_NEAR(hs.values[1], std::exp(-1.0), 1e-12);
}

TEST(Heatmap, NoDynamicCellIsUnity) {
  const GridSpec g = grid_at_origin(0.2, 4, 4);
  const auto h = gaussian_heatmap(std::vector<unsigned char>(16, 0), g);
  for (double v : h.values) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(gaussian_heatmap(std::vector<unsigned char>(15, 0), g), Error);
}

TEST(Heatmap, MatchesBruteForceExactly) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = trial < 10 ? 64 : 5 + rng() % 40;
    const std::size_t hgt = trial < 10 ? 64 : 3 + rng() % 40;
    const GridSpec g = {-6.4, -6.4, 0.2, w, hgt};
    std::vector<unsigned char> dyn(w * hgt, 0);
    const std::size_t n = 1 + rng() % (trial % 3 == 0 ? 3 : 60);
    for (std::size_t k = 0; k < n; ++k) dyn[rng() % dyn.size()] = 1;
    const auto h = gaussian_heatmap(dyn, g);
    const auto bf = brute_force_distance_sq(dyn, g);
    double prev_d = -1, prev_g = 2;
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < dyn.size(); ++i) {
      const double d2 = bf[i] * (g.resolution * g.resolution);
      ASSERT_EQ(h.distance_sq[i], d2) << i;
      ASSERT_EQ(h.values[i], gaussian_weight(d2, 10.0));
      pairs.emplace_back(h.distance_sq[i], h.values[i]);
    }
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [d, v] : pairs) {
      EXPECT_GE(d, prev_d);
      EXPECT_LE(v, prev_g);
      prev_d = d;
      prev_g = v;
    }
    EXPECT_EQ(*std::max_element(h.values.begin(), h.values.end()), 1.0);
  }
}
