#include <gtest/gtest.h>

#include "raliflow/labelgen.hpp"
#include "raliflow/synthgen.hpp"

using namespace raliflow;

TEST(SplitMix64, ReferenceStream) {
  SplitMix64 g(0);
  EXPECT_EQ(g.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(g.next(), 0x6E789E6AA1B965F4ULL);
  SplitMix64 u(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
    ASSERT_LT(u.below(3), 3u);
  }
  EXPECT_NE(SplitMix64::derive(1, 0), SplitMix64::derive(1, 1));
}

TEST(Synthgen, DeterministicInSeed) {
  SceneConfig cfg;
  cfg.seed = 42;
  const auto a = generate_scene(cfg), b = generate_scene(cfg);
  ASSERT_EQ(a.radar_src.size(), b.radar_src.size());
  ASSERT_EQ(a.lidar_tgt.size(), b.lidar_tgt.size());
  for (std::size_t i = 0; i < a.radar_src.size(); ++i) {
    EXPECT_EQ(a.radar_src[i].position, b.radar_src[i].position);
    EXPECT_EQ(a.radar_src[i].arv, b.radar_src[i].arv);
  }
  cfg.seed = 43;
  const auto c = generate_scene(cfg);
  EXPECT_TRUE(c.radar_src.size() != a.radar_src.size() || c.radar_src[0].position != a.radar_src[0].position);
}

TEST(Synthgen, InvalidConfig) {
  SceneConfig cfg;
  cfg.dt = 0;
  EXPECT_THROW(generate_scene(cfg), Error);
  cfg = {};
  cfg.radar_per_object_max = 2;
  EXPECT_THROW(generate_scene(cfg), Error);
}

TEST(Synthgen, StaticSceneHasZeroFlow) {
  SceneConfig cfg;
  cfg.seed = 5;
  cfg.box_speed_max = 0;
  cfg.max_yaw_rate = 0;
  cfg.n_boxes = 0;
  const auto s = generate_scene(cfg);
  for (const auto& f : s.lidar_flow) EXPECT_EQ(f, Vec3::Zero());
  for (const auto& f : s.radar_flow) EXPECT_EQ(f, Vec3::Zero());
}

TEST(Synthgen, ScenePropertiesOverManySeeds) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SceneConfig cfg;
    cfg.seed = seed;
    const auto s = generate_scene(cfg);
    ASSERT_FALSE(s.boxes_src.empty());
    ASSERT_EQ(s.boxes_src.size(), s.boxes_tgt.size());
    const double half = 0.5 * cfg.extent;
    for (std::size_t i = 0; i < s.radar_src.size(); ++i) {
      const auto& p = s.radar_src[i];
      EXPECT_LT(std::abs(p.position.x()), half);
      const double truth = radial_project(p.position, s.radar_flow[i] / cfg.dt);
      if (s.radar_outlier[i]) {
        EXPECT_GT(std::abs(p.arv), cfg.outlier_arv - 1.0);
      } else {
        EXPECT_LT(std::abs(p.arv - truth), 6 * cfg.arv_noise) << "seed " << seed << " point " << i;
      }
      if (s.radar_object[i] >= 0) {
        const auto& box = s.boxes_src[static_cast<std::size_t>(s.radar_object[i])];
        EXPECT_LE((p.position - box.center).norm(), LabelParams{}.distance_threshold(box.class_label) + 1e-9);
      }
    }
    // Every LiDAR object point lies inside its box; in-box labels reproduce the truth.
    const auto labels = label_frame(s.radar_src, s.lidar_src, s.boxes_src, s.boxes_tgt, s.ego, LabelParams{});
    for (std::size_t i = 0; i < s.lidar_src.size(); ++i) {
      if (s.lidar_object[i] < 0) continue;
      ASSERT_TRUE(labels.lidar_labels.instance_id[i]) << "seed " << seed;
      EXPECT_LT((labels.lidar_labels.gt_flows[i] - s.lidar_flow[i]).norm(), 1e-9);
    }
  }
}

TEST(Synthgen, OracleLabelsMatchLibraryBitForBit) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SceneConfig cfg;
    cfg.seed = seed;
    const auto s = generate_scene(cfg);
    const LabelParams lp;
    const auto lib = label_frame(s.radar_src, s.lidar_src, s.boxes_src, s.boxes_tgt, s.ego, lp);
    const auto ref = oracle_label_flow(s.radar_src, s.boxes_src, s.boxes_tgt, s.ego, lp);
    ASSERT_EQ(lib.radar_labels.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_EQ(lib.radar_labels.gt_flows[i], ref.gt_flows[i]);
      EXPECT_EQ(lib.radar_labels.instance_id[i], ref.instance_id[i]);
      EXPECT_EQ(lib.radar_labels.mask[i], ref.mask[i]);
      EXPECT_EQ(lib.radar_labels.motion_class[i], ref.motion_class[i]);
    }
  }
}
