#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "raliflow/preprocess.hpp"

using namespace raliflow;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<Vec3> disc_plane(double z0, double slope, int rings, int spokes, double r_max) {
  std::vector<Vec3> pts;
  for (int i = 1; i <= rings; ++i) {
    const double r = r_max * i / rings;
    for (int k = 0; k < spokes; ++k) {
      const double a = 2 * kPi * (k + 0.5) / spokes;
      pts.emplace_back(r * std::cos(a), r * std::sin(a), z0 + slope * r);
    }
  }
  return pts;
}

RadarCloud radar_of(std::vector<std::pair<Vec3, double>> pts, std::string frame = "f0") {
  RadarCloud c;
  c.frame_id = std::move(frame);
  for (auto& [p, arv] : pts) c.points.push_back({p, arv, 0.0, 1.0});
  return c;
}

LidarCloud lidar_of(std::vector<Vec3> pts, std::string frame = "f0") {
  LidarCloud c;
  c.frame_id = std::move(frame);
  for (auto& p : pts) c.points.push_back({p, 0.5});
  return c;
}

}  // namespace

TEST(RemoveGround, FlatPlaneAllGround) {
  const auto pts = disc_plane(-1.8, 0.0, 40, 128, 20.0);
  const auto keep = remove_ground(pts, GroundParams{});
  for (bool k : keep) EXPECT_FALSE(k);
}

TEST(RemoveGround, PoleKeptPlaneRemoved) {
  auto pts = disc_plane(-1.8, 0.0, 40, 128, 20.0);
  const std::size_t plane = pts.size();
  for (int i = 0; i <= 20; ++i) pts.emplace_back(6.0, 0.5, 0.1 * i);
  const auto keep = remove_ground(pts, GroundParams{});
  for (std::size_t i = 0; i < plane; ++i) EXPECT_FALSE(keep[i]) << i;
  for (std::size_t i = plane; i < pts.size(); ++i) EXPECT_TRUE(keep[i]) << i;
}

TEST(RemoveGround, GentleRampIsGround) {
  const double slope = std::tan(5.0 * kPi / 180.0);
  const auto pts = disc_plane(-1.8, slope, 40, 128, 20.0);
  const auto keep = remove_ground(pts, GroundParams{});
  for (bool k : keep) EXPECT_FALSE(k);
}

TEST(RemoveGround, EmptyCloudThrows) {
  try {
    remove_ground(std::vector<Vec3>{}, GroundParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCloud);
  }
}

TEST(RemoveGround, InvalidParams) {
  GroundParams p;
  p.max_slope = kPi / 2;
  EXPECT_THROW(remove_ground(std::vector<Vec3>{{1, 0, 0}}, p), Error);
}

TEST(RemoveGround, RotationInvariantForSectorInteriorScene) {
  // Every point sits mid-sector, so a rotation by whole sectors relabels
  // sectors without moving points across boundaries.
  GroundParams params;
  const double sector = 2 * kPi / params.num_segments;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ur(1.0, 25.0), uz(-0.1, 0.1), off(-0.3, 0.3);
  std::vector<std::pair<double, double>> polar;  // (angle, range)
  std::vector<double> zs;
  for (int i = 0; i < 3000; ++i) {
    const int s = static_cast<int>(rng() % params.num_segments);
    const double r = ur(rng);
    polar.emplace_back((s + 0.5 + off(rng)) * sector, r);
    zs.push_back(i % 7 == 0 ? -1.8 + 2.0 * std::abs(uz(rng)) * 10 : -1.8 + uz(rng));
  }
  auto scene = [&](int shift) {
    std::vector<Vec3> pts;
    for (std::size_t i = 0; i < polar.size(); ++i) {
      const double a = polar[i].first + shift * sector;
      pts.emplace_back(polar[i].second * std::cos(a), polar[i].second * std::sin(a), zs[i]);
    }
    return pts;
  };
  const auto base = remove_ground(scene(0), params);
  for (int shift : {1, 5, 17, 31}) EXPECT_EQ(remove_ground(scene(shift), params), base) << shift;
}

TEST(RemoveGround, CombinedSplitsByModality) {
  const auto radar = radar_of({{{5, 0, -1.8}, 0.0}, {{5, 0, 0.5}, 0.0}});
  const auto lidar = lidar_of(disc_plane(-1.8, 0.0, 20, 64, 10.0));
  const auto [kr, kl] = remove_ground(radar, lidar, GroundParams{});
  ASSERT_EQ(kr.size(), 2u);
  EXPECT_FALSE(kr[0]);
  EXPECT_TRUE(kr[1]);
  EXPECT_EQ(kl.size(), lidar.size());
}

TEST(ProjectRadar, IdentityTranslationRoundTrip) {
  const auto radar = radar_of({{{1, 2, 3}, 4.0}, {{-5, 0.5, 0}, -1.0}});
  const auto same = project_radar_to_lidar(radar, SE3Transform::identity());
  for (std::size_t i = 0; i < radar.size(); ++i) EXPECT_EQ(same[i].position, radar[i].position);

  const auto shifted = project_radar_to_lidar(radar, SE3Transform::translate({0.5, 0, 0.2}));
  EXPECT_EQ(shifted[0].position, Vec3(1.5, 2, 3.2));
  EXPECT_EQ(shifted[1].arv, -1.0);

  const SE3Transform t = SE3Transform::from_yaw(0.7, {1, -2, 0.3});
  const auto back = project_radar_to_lidar(project_radar_to_lidar(radar, t), se3_inverse(t));
  for (std::size_t i = 0; i < radar.size(); ++i) EXPECT_LE((back[i].position - radar[i].position).norm(), 1e-9);
}

TEST(Denoise, HardThresholdExample) {
  const auto lidar = lidar_of({{1, 0, 0}});
  const auto r = denoise_radar(radar_of({{{1, 0, 0}, 1.0}, {{1, 0, 0}, -2.0}, {{1, 0, 0}, 3.0}, {{1, 0, 0}, 0.2}}),
                               lidar, DenoiseParams{});
  ASSERT_TRUE(r.mu);
  EXPECT_DOUBLE_EQ(*r.mu, 12.0);
  for (bool k : r.keep) EXPECT_TRUE(k);

  // A 15 m/s point joins the dynamic set; with enough ordinary dynamic
  // points mu stays near 12 and the outlier is dropped.
  std::vector<std::pair<Vec3, double>> pts;
  for (int k = 0; k < 10; ++k)
    for (double v : {1.0, 2.0, 3.0}) pts.push_back({{1, 0, 0}, v});
  pts.push_back({{1, 0, 0}, 15.0});
  const auto r2 = denoise_radar(radar_of(pts), lidar, DenoiseParams{});
  EXPECT_DOUBLE_EQ(*r2.mu, 75.0 / 31.0 + 10.0);
  EXPECT_FALSE(r2.keep.back());
  EXPECT_FALSE(r2.keep_hard.back());
  EXPECT_EQ(std::count(r2.keep.begin(), r2.keep.end(), false), 1);
}

TEST(Denoise, NoDynamicPointsSkipsHardStage) {
  const auto radar = radar_of({{{1, 0, 0}, 0.1}, {{1, 0, 0}, -0.4}});
  const auto r = denoise_radar(radar, lidar_of({{1, 0, 0}}), DenoiseParams{});
  EXPECT_FALSE(r.mu);
  for (bool k : r.keep_hard) EXPECT_TRUE(k);
}

TEST(Denoise, IsolatedRadarPointDropped) {
  const auto radar = radar_of({{{0, 0, 0}, 0.0}, {{5, 0, 0}, 0.0}});
  const auto r = denoise_radar(radar, lidar_of({{0.1, 0.1, 0}}), DenoiseParams{});
  EXPECT_TRUE(r.keep[0]);
  EXPECT_FALSE(r.keep[1]);
}

TEST(Denoise, FrameMismatch) {
  try {
    denoise_radar(radar_of({{{0, 0, 0}, 0.0}}, "a"), lidar_of({{0, 0, 0}}, "b"), DenoiseParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FrameMismatch);
  }
}

TEST(Denoise, SharedCellAndThresholdProperties) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10, 10), a(-6, 6);
  for (int trial = 0; trial < 50; ++trial) {
    RadarCloud radar;
    LidarCloud lidar;
    radar.frame_id = lidar.frame_id = "f";
    for (int i = 0; i < 60; ++i) radar.points.push_back({{u(rng), u(rng), 0}, a(rng), 0, 0});
    for (int i = 0; i < 40; ++i) lidar.points.push_back({{u(rng), u(rng), 0}, 0});
    // Co-locate a few radar points with LiDAR points.
    for (int i = 0; i < 10; ++i) radar.points[static_cast<std::size_t>(i)].position = lidar[static_cast<std::size_t>(i)].position;
    const auto r = denoise_radar(radar, lidar, DenoiseParams{});
    for (int i = 0; i < 10; ++i) EXPECT_TRUE(r.keep_soft[static_cast<std::size_t>(i)]);
    double max_kept = 0.0;
    for (std::size_t i = 0; i < radar.size(); ++i)
      if (r.keep[i]) max_kept = std::max(max_kept, std::abs(radar[i].arv));
    ASSERT_TRUE(r.mu);
    EXPECT_LE(max_kept, *r.mu);
    EXPECT_EQ(denoise_radar(radar, lidar, DenoiseParams{}).keep, r.keep);
  }
}
