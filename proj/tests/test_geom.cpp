#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "raliflow/geom.hpp"

using namespace raliflow;

namespace {

constexpr double kPi = std::numbers::pi;

void expect_vec_near(const Vec3& a, const Vec3& b, double tol) {
  EXPECT_NEAR(a.x(), b.x(), tol);
  EXPECT_NEAR(a.y(), b.y(), tol);
  EXPECT_NEAR(a.z(), b.z(), tol);
}

SE3Transform random_transform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  if (axis.norm() < 1e-3) axis = Eigen::Vector3d::UnitZ();
  const Eigen::AngleAxisd aa(u(rng) * kPi, axis.normalized());
  return {aa.toRotationMatrix(), Vec3(5 * u(rng), 5 * u(rng), 5 * u(rng))};
}

TrackedBox make_box(int id, Vec3 c, BoxDims d, double yaw) {
  TrackedBox b;
  b.track_id = id;
  b.class_label = "car";
  b.center = c;
  b.dims = d;
  b.yaw = yaw;
  return b;
}

}  // namespace

TEST(Se3, ApplyExamples) {
  expect_vec_near(se3_apply(SE3Transform::identity(), {1, 2, 3}), {1, 2, 3}, 0.0);
  expect_vec_near(se3_apply(SE3Transform::translate({1, 0, 0}), {0, 0, 0}), {1, 0, 0}, 0.0);
  expect_vec_near(se3_apply(SE3Transform::from_yaw(kPi / 2), {1, 0, 0}), {0, 1, 0}, 1e-15);
}

TEST(Se3, InverseAndCompose) {
  const auto inv = se3_inverse(SE3Transform::identity());
  EXPECT_TRUE(inv.rotation.isIdentity(0.0));
  EXPECT_TRUE(inv.translation.isZero(0.0));

  std::mt19937_64 rng(7);
  const SE3Transform t = random_transform(rng);
  const SE3Transform id = se3_compose(t, se3_inverse(t));
  EXPECT_LE((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(id.translation.cwiseAbs().maxCoeff(), 1e-9);

  const auto c = se3_compose(SE3Transform::translate({1, 0, 0}), SE3Transform::translate({0, 2, 0}));
  expect_vec_near(se3_apply(c, Vec3::Zero()), {1, 2, 0}, 0.0);
}

TEST(Se3, RoundTripAndCompositionProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    const SE3Transform a = random_transform(rng);
    const SE3Transform b = random_transform(rng);
    ASSERT_TRUE(a.is_valid());
    const Vec3 p(u(rng), u(rng), u(rng));
    expect_vec_near(se3_apply(se3_inverse(a), se3_apply(a, p)), p, 1e-9);
    expect_vec_near(se3_apply(se3_compose(a, b), p), se3_apply(a, se3_apply(b, p)), 1e-9);
  }
}

TEST(Se3, MatrixRoundTrip) {
  std::mt19937_64 rng(3);
  const SE3Transform t = random_transform(rng);
  const SE3Transform back = SE3Transform::from_matrix(t.to_matrix());
  EXPECT_EQ(back.rotation, t.rotation);
  EXPECT_EQ(back.translation, t.translation);
}

TEST(RadialProject, Examples) {
  EXPECT_DOUBLE_EQ(radial_project({3, 4, 0}, {1, 0, 0}), 0.6);
  EXPECT_DOUBLE_EQ(radial_project({0, 0, 5}, {1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(radial_project({1, 0, 0}, {2, 0, 0}), 2.0);
}

TEST(RadialProject, DegeneratePointThrows) {
  try {
    radial_project({0, 0, 1e-7}, {1, 0, 0});
    FAIL() << "expected DegeneratePoint";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegeneratePoint);
  }
}

TEST(RadialProject, AlongLineOfSightRecoversScale) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    if (p.norm() <= 1e-3) continue;
    const double lambda = u(rng);
    EXPECT_NEAR(radial_project(p, lambda * p / p.norm()), lambda, 1e-12 * (1 + std::abs(lambda)));
  }
}

TEST(BoxContains, Examples) {
  const auto box = make_box(1, {0, 0, 0}, {2, 2, 2}, 0.0);
  EXPECT_TRUE(box_contains(box, {0.9, 0, 0}));
  EXPECT_FALSE(box_contains(box, {1.1, 0, 0}));
  EXPECT_TRUE(box_contains(box, {1.0, 1.0, -1.0}));  // closed faces

  // yaw 90 deg swaps the footprint: length 4 now runs along y.
  const auto turned = make_box(2, {0, 0, 0}, {4, 2, 2}, kPi / 2);
  EXPECT_TRUE(box_contains(turned, {0, 1.9, 0}));
  EXPECT_FALSE(box_contains(turned, {1.9, 0, 0}));
}

TEST(BoxContains, YawEquivariance) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_real_distribution<double> dim(0.5, 4.0);
  int agree = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto box = make_box(1, {u(rng), u(rng), 0.3 * u(rng)}, {dim(rng), dim(rng), dim(rng)},
                              wrap_angle(u(rng)));
    const Vec3 p(u(rng), u(rng), u(rng));
    const SE3Transform rot = SE3Transform::from_yaw(u(rng), {u(rng), u(rng), 0.0});
    const auto moved = transform_box(rot, box);
    const Vec3 q = se3_apply(rot, p);
    // Skip points within rounding distance of a face.
    const Vec3 local = yaw_rotation(box.yaw).transpose() * (p - box.center);
    const double margin = std::min({std::abs(std::abs(local.x()) - 0.5 * box.dims.length),
                                    std::abs(std::abs(local.y()) - 0.5 * box.dims.width),
                                    std::abs(std::abs(local.z()) - 0.5 * box.dims.height)});
    if (margin < 1e-9) continue;
    EXPECT_EQ(box_contains(box, p), box_contains(moved, q));
    ++agree;
  }
  EXPECT_GT(agree, 1900);
}

TEST(RigidBoxFlow, Examples) {
  const auto src = make_box(4, {2, 3, 0}, {4, 2, 1.5}, 0.0);
  auto tgt = src;
  tgt.center += Vec3(1, 0, 0);
  expect_vec_near(rigid_box_flow(src, tgt, {7, -2, 1}), {1, 0, 0}, 1e-12);

  auto spun = src;
  spun.yaw = kPi / 2;
  expect_vec_near(rigid_box_flow(src, spun, src.center), {0, 0, 0}, 1e-12);
  // center + (1,0,0) swings to center + (0,1,0).
  expect_vec_near(rigid_box_flow(src, spun, src.center + Vec3(1, 0, 0)), {-1, 1, 0}, 1e-12);
}

TEST(RigidBoxFlow, TrackMismatchThrows) {
  const auto a = make_box(1, {0, 0, 0}, {1, 1, 1}, 0.0);
  const auto b = make_box(2, {0, 0, 0}, {1, 1, 1}, 0.0);
  try {
    rigid_box_flow(a, b, Vec3::Zero());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrackMismatch);
  }
}

TEST(RigidBoxFlow, ReExpressionRotatesFlow) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    const auto src = make_box(1, {u(rng), u(rng), 0}, {4, 2, 1.5}, wrap_angle(u(rng)));
    auto tgt = src;
    tgt.center += Vec3(0.2 * u(rng), 0.2 * u(rng), 0.0);
    tgt.yaw = wrap_angle(src.yaw + 0.05 * u(rng));
    const Vec3 p(u(rng), u(rng), u(rng));
    const SE3Transform t = SE3Transform::from_yaw(u(rng), {u(rng), u(rng), u(rng)});
    const Vec3 flow = rigid_box_flow(src, tgt, p);
    const Vec3 moved = rigid_box_flow(transform_box(t, src), transform_box(t, tgt), se3_apply(t, p));
    expect_vec_near(moved, t.rotation * flow, 1e-9);
  }
}

TEST(EgoCompensate, IdentityAndRoundTrip) {
  LidarCloud cloud;
  cloud.points.push_back({{1, 2, 3}, 0.5});
  cloud.points.push_back({{-4, 0.5, -1.8}, 0.1});
  const auto same = ego_compensate(cloud, EgoMotion{});
  for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(same[i].position, cloud[i].position);

  std::mt19937_64 rng(1);
  EgoMotion ego{random_transform(rng), 0.1};
  LidarCloud tgt = cloud;
  for (auto& p : tgt.points) p.position = se3_apply(ego.t_src_to_tgt, p.position);
  const auto back = ego_compensate(tgt, ego);
  for (std::size_t i = 0; i < cloud.size(); ++i) expect_vec_near(back[i].position, cloud[i].position, 1e-9);
}

TEST(EgoCompensate, StaticWorldPointHasZeroDisplacement) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 100; ++i) {
    const EgoMotion ego{SE3Transform::from_yaw(0.01 * u(rng), {0.1 * u(rng), 0.01 * u(rng), 0}), 0.1};
    RadarCloud tgt;
    const Vec3 world(u(rng), u(rng), u(rng));
    tgt.points.push_back({se3_apply(ego.t_src_to_tgt, world), 0.0, 0.0, 0.0});
    const auto comp = ego_compensate(tgt, ego);
    EXPECT_LE((comp[0].position - world).norm(), 1e-9);
  }
}

TEST(WrapAngle, Range) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
}
