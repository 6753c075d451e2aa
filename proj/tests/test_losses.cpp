#include <gtest/gtest.h>

#include <numeric>

#include "raliflow/grad_check.hpp"
#include "raliflow/losses.hpp"
#include "raliflow/metrics.hpp"

using namespace raliflow;
using namespace raliflow::ad;

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Tensor param(const std::vector<Vec3>& v) {
  const Tensor t = from_vec3(v);
  return Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, true);
}

}  // namespace

TEST(SpeedBuckets, Thresholds) {
  const std::vector<Vec3> f{{0.75, 0, 0}, {0.1, 0, 0}, {0.35, 0, 0}, {0.5, 0, 0}, {0.2, 0, 0}};
  const auto b = speed_buckets(f, all_indices(f.size()), 0.5);
  EXPECT_EQ(b.fast, (std::vector<Index>{0}));
  EXPECT_EQ(b.slow, (std::vector<Index>{1}));
  // 1.0 is not > 1.0 and 0.4 is not < 0.4.
  EXPECT_EQ(b.medium, (std::vector<Index>{2, 3, 4}));
  EXPECT_THROW(speed_buckets(f, {7}, 0.1), Error);
  EXPECT_THROW(speed_buckets(f, {0}, 0.0), Error);
}

TEST(FlowLoss, Examples) {
  const std::vector<Vec3> gt{{0.2, 0, 0}, {0.0, 0, 0}, {0.01, 0, 0}};
  const auto b = speed_buckets(gt, all_indices(3), 0.1);
  EXPECT_EQ(lidar_flow_loss(from_vec3(gt), gt, b).item(), 0.0);

  std::vector<Vec3> pred = gt;
  for (auto& p : pred) p.y() += 1.0;
  SpeedBuckets one{{}, {0, 1, 2}, {}};
  EXPECT_DOUBLE_EQ(lidar_flow_loss(from_vec3(pred), gt, one).item(), 1.0);

  // Bucket means 0.2 and 0.4.
  std::vector<Vec3> p2 = gt;
  p2[0].z() += 0.2;
  p2[1].z() += 0.4;
  p2[2].z() += 0.4;
  SpeedBuckets two{{0}, {1, 2}, {}};
  EXPECT_NEAR(lidar_flow_loss(from_vec3(p2), gt, two).item(), 0.6, 1e-15);
  EXPECT_THROW(lidar_flow_loss(from_vec3(p2), {gt[0]}, two), Error);
}

TEST(RadarLoss, MaskExamples) {
  const std::vector<Vec3> gt{{0.0, 0, 0}, {0.0, 0, 0}};
  std::vector<Vec3> pred{{0.5, 0, 0}, {100.0, 0, 0}};
  SpeedBuckets b{{1}, {0}, {}};
  EXPECT_DOUBLE_EQ(masked_radar_flow_loss(from_vec3(pred), gt, {1, 0}, b).item(), 0.5);
  EXPECT_EQ(masked_radar_flow_loss(from_vec3(pred), gt, {0, 0}, b).item(), 0.0);
  EXPECT_THROW(masked_radar_flow_loss(from_vec3(pred), gt, {1}, b), Error);
}

TEST(RadarLoss, MaskedPointsAreGradientInert) {
  const std::vector<Vec3> pv{{0.3, 0.1, 0}, {0.2, -0.4, 0.1}, {0.05, 0.0, 0.02}};
  std::vector<Vec3> gt{{0.1, 0, 0}, {0.5, 0, 0}, {0.0, 0.01, 0}};
  const std::vector<unsigned char> mask{1, 0, 1};
  SpeedBuckets b{{0, 1}, {2}, {}};
  auto grad_for = [&](const std::vector<Vec3>& g) {
    Tensor p = param(pv);
    const Tensor l = masked_radar_flow_loss(p, g, mask, b);
    backward(l);
    return std::make_pair(l.item(), p.grad());
  };
  const auto base = grad_for(gt);
  gt[1] = Vec3(-7, 3, 9);
  const auto moved = grad_for(gt);
  EXPECT_EQ(base.first, moved.first);
  EXPECT_EQ(base.second, moved.second);
  EXPECT_EQ(base.second[3], 0.0);
}

TEST(InstanceLoss, Examples) {
  const std::vector<Vec3> gt{{0.2, 0, 0}, {0.2, 0, 0}, {0.2, 0, 0}};
  const std::vector<std::optional<int>> ids{0, 0, 1};
  const auto elig = all_indices(3);
  const Tensor pred = from_vec3({{2, 0, 0}, {1, 0, 0}, {5, 5, 5}});
  EXPECT_DOUBLE_EQ(instance_consistency_loss({{&pred, &gt, &ids, &elig}}, 2, 0.1).item(), 0.5);

  const Tensor same = from_vec3({{1, 2, 3}, {1, 2, 3}, {4, 0, 0}});
  EXPECT_EQ(instance_consistency_loss({{&same, &gt, &ids, &elig}}, 2, 0.1).item(), 0.0);

  // Slow points are not part of the dynamic set.
  const std::vector<Vec3> slow{{0.2, 0, 0}, {0.01, 0, 0}, {0.2, 0, 0}};
  EXPECT_EQ(instance_consistency_loss({{&pred, &slow, &ids, &elig}}, 2, 0.1).item(), 0.0);
}

TEST(InstanceLoss, MergesModalitiesAndStopsTargetGradient) {
  const std::vector<Vec3> gt_r{{0.2, 0, 0}}, gt_l{{0.2, 0, 0}, {0.2, 0, 0}};
  const std::vector<std::optional<int>> id_r{0}, id_l{0, std::nullopt};
  const auto er = all_indices(1), el = all_indices(2);
  Tensor pr = param({{3, 0, 0}});
  Tensor pl = param({{1, 0, 0}, {9, 9, 9}});
  const Tensor l = instance_consistency_loss({{&pr, &gt_r, &id_r, &er}, {&pl, &gt_l, &id_l, &el}}, 1, 0.1);
  EXPECT_DOUBLE_EQ(l.item(), 1.0);
  backward(l);
  EXPECT_EQ(pr.grad(), (std::vector<double>{0, 0, 0}));  // kappa is the radar point
  EXPECT_DOUBLE_EQ(pl.grad()[0], -0.5);
}

TEST(InstanceLoss, TranslationInvariant) {
  const std::vector<Vec3> gt(4, Vec3(0.3, 0, 0));
  const std::vector<std::optional<int>> ids{0, 0, 0, 0};
  const auto elig = all_indices(4);
  const std::vector<Vec3> base{{3, 0, 0}, {1, 0.5, 0}, {0.2, 0.1, 0}, {1.5, -1, 0}};
  std::vector<Vec3> shifted = base;
  for (auto& v : shifted) v += Vec3(0.1, 0.05, 0.0);
  const Tensor a = from_vec3(base), b = from_vec3(shifted);
  EXPECT_NEAR(instance_consistency_loss({{&a, &gt, &ids, &elig}}, 1, 0.1).item(),
              instance_consistency_loss({{&b, &gt, &ids, &elig}}, 1, 0.1).item(), 1e-14);
}

TEST(TotalLoss, SumAndLinearity) {
  EXPECT_EQ(total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)).item(), 0.0);
  EXPECT_EQ(total_loss(Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(3)).item(), 6.0);

  const std::vector<Vec3> pv{{0.3, 0.1, 0}, {0.2, -0.4, 0.1}, {0.05, 0.0, 0.02}};
  const std::vector<Vec3> gt{{0.1, 0, 0}, {0.15, 0, 0}, {0.0, 0.01, 0}};
  const std::vector<std::optional<int>> ids{0, 0, std::nullopt};
  const auto elig = all_indices(3);
  const auto b = speed_buckets(pv, elig, 0.1);
  Tensor p = param(pv);
  auto li = [&] { return lidar_flow_loss(p, gt, b); };
  auto ra = [&] { return masked_radar_flow_loss(p, gt, {1, 1, 0}, b); };
  auto ins = [&] { return instance_consistency_loss({{&p, &gt, &ids, &elig}}, 1, 0.1); };
  std::vector<double> parts(9, 0.0);
  for (const auto& fn : {std::function<Tensor()>(li), std::function<Tensor()>(ra), std::function<Tensor()>(ins)}) {
    p.zero_grad();
    backward(fn());
    const auto g = p.grad();
    for (std::size_t i = 0; i < 9; ++i) parts[i] += g[i];
  }
  p.zero_grad();
  backward(total_loss(li(), ra(), ins()));
  const auto g = p.grad();
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(g[i], parts[i], 1e-15);

  // The instance term's target moves with p under finite differences but is
  // held constant in backward, so only the other two terms are probed.
  const auto rep = grad_check([&] { return total_loss(li(), ra(), Tensor::scalar(0.0)); }, {p});
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Metrics, Epe3d) {
  const std::vector<Vec3> gt(4, Vec3(1, 1, 1));
  std::vector<Vec3> pred = gt;
  for (auto& v : pred) v += Vec3(0.3, 0.4, 0.0);
  EXPECT_NEAR(epe_3d(pred, gt), 0.5, 1e-15);
  EXPECT_THROW(epe_3d(pred, {gt[0]}), Error);
  EXPECT_EQ(epe_3d({}, {}), 0.0);
}

TEST(Metrics, ThreeWayFromPublishedClassMeans) {
  EXPECT_NEAR(*combine_3way(0.1562, 0.0152, 0.0359), 0.0691, 5e-5);
  EXPECT_NEAR(*combine_3way(0.1282, 0.0116, 0.0269), 0.0556, 5e-5);
  EXPECT_DOUBLE_EQ(*combine_3way(0.3, std::nullopt, 0.1), 0.2);
  EXPECT_FALSE(combine_3way(std::nullopt, std::nullopt, std::nullopt));
}

TEST(Metrics, AccumulatorPerClass) {
  const std::vector<Vec3> gt(4, Vec3::Zero());
  const std::vector<Vec3> pred{{0.1, 0, 0}, {0.3, 0, 0}, {0.2, 0, 0}, {0.4, 0, 0}};
  const std::vector<MotionClass> cls{MotionClass::FD, MotionClass::FD, MotionClass::BS, MotionClass::BS};
  const ModalityMetrics m = epe_3way(pred, gt, cls);
  EXPECT_NEAR(*m.epe_fd, 0.2, 1e-15);
  EXPECT_NEAR(*m.epe_bs, 0.3, 1e-15);
  EXPECT_FALSE(m.epe_fs);
  EXPECT_FALSE(m.all_classes_present());
  EXPECT_NEAR(*m.epe_3way, (*m.epe_fd + *m.epe_bs) / 2, 1e-12);
  EXPECT_NEAR(m.epe_3d, 0.25, 1e-15);
  const auto j = to_json(MetricsReport{m, m});
  EXPECT_TRUE(j["radar"]["epe_fs"].is_null());
  EXPECT_EQ(j["lidar"]["counts"]["fd"], 2);
  EXPECT_FALSE(j["lidar"]["all_classes_present"].get<bool>());
}
