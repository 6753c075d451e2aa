#pragma once

// Geometric value types: points, rigid transforms, tracked boxes and flow
// fields. Everything here is double precision and side-effect free.

// Eigen's small-product kernel sums in an order that depends on operand
// alignment; always taking the blocked path keeps results bit-identical
// across runs.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <numbers>
#include <string>
#include <vector>

#include "raliflow/error.hpp"

namespace raliflow {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

inline Mat3 yaw_rotation(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Mat3 r;
  r << c, -s, 0.0,
       s,  c, 0.0,
       0.0, 0.0, 1.0;
  return r;
}

/// Rigid transform p -> R p + t.
struct SE3Transform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static SE3Transform identity() { return {}; }
  static SE3Transform translate(const Vec3& t) { return {Mat3::Identity(), t}; }
  static SE3Transform from_yaw(double yaw, const Vec3& t = Vec3::Zero()) {
    return {yaw_rotation(yaw), t};
  }

  /// Row-major 4x4 homogeneous matrix.
  std::array<double, 16> to_matrix() const {
    std::array<double, 16> m{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r * 4 + c] = rotation(r, c);
      m[r * 4 + 3] = translation(r);
    }
    m[15] = 1.0;
    return m;
  }

  static SE3Transform from_matrix(const std::array<double, 16>& m) {
    SE3Transform t;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) t.rotation(r, c) = m[r * 4 + c];
      t.translation(r) = m[r * 4 + 3];
    }
    return t;
  }

  bool is_valid(double tol = 1e-9) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
  }

  /// Heading of the rotated x axis in the xy plane.
  double yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }
};

inline Vec3 se3_apply(const SE3Transform& t, const Vec3& p) {
  return t.rotation * p + t.translation;
}

inline SE3Transform se3_inverse(const SE3Transform& t) {
  const Mat3 rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

/// compose(a, b) applies b first, then a.
inline SE3Transform se3_compose(const SE3Transform& a, const SE3Transform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

/// Component of v along the line of sight from the sensor origin to p.
/// Positive means receding from the sensor.
inline double radial_project(const Vec3& p, const Vec3& v) {
  const double range = p.norm();
  if (!(range > 1e-6)) {
    throw Error(ErrorCode::DegeneratePoint, "radial projection at the sensor origin");
  }
  return v.dot(p / range);
}

enum class Modality { radar, lidar };

struct RadarPoint {
  Vec3 position = Vec3::Zero();
  double arv = 0.0;  // absolute radial velocity, m/s, positive = receding
  double rrv = 0.0;  // relative radial velocity, carried only
  double rcs = 0.0;  // dBsm
};

struct LidarPoint {
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;
};

template <class Point>
struct modality_of;
template <>
struct modality_of<RadarPoint> {
  static constexpr Modality value = Modality::radar;
};
template <>
struct modality_of<LidarPoint> {
  static constexpr Modality value = Modality::lidar;
};

/// Ordered, index-addressable cloud; flow fields align with it by index.
template <class Point>
struct PointCloud {
  std::vector<Point> points;
  std::string frame_id;

  static constexpr Modality modality = modality_of<Point>::value;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Point& operator[](std::size_t i) const { return points[i]; }
  Point& operator[](std::size_t i) { return points[i]; }
};

using RadarCloud = PointCloud<RadarPoint>;
using LidarCloud = PointCloud<LidarPoint>;

/// Subset of a cloud selected by a keep mask, order preserved.
template <class Point>
PointCloud<Point> select(const PointCloud<Point>& cloud, const std::vector<bool>& keep) {
  if (keep.size() != cloud.size()) {
    throw Error(ErrorCode::LengthMismatch, "mask length differs from cloud size");
  }
  PointCloud<Point> out;
  out.frame_id = cloud.frame_id;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (keep[i]) out.points.push_back(cloud.points[i]);
  }
  return out;
}

struct BoxDims {
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
};

struct TrackedBox {
  int track_id = 0;
  std::string class_label;
  Vec3 center = Vec3::Zero();
  BoxDims dims;
  double yaw = 0.0;

  /// Maps box-local coordinates to the sensor frame.
  SE3Transform pose() const { return SE3Transform::from_yaw(yaw, center); }

  double half_diagonal() const {
    return 0.5 * std::sqrt(dims.length * dims.length + dims.width * dims.width +
                           dims.height * dims.height);
  }
};

/// Re-expresses a box under a rigid transform whose rotation is about z.
inline TrackedBox transform_box(const SE3Transform& t, const TrackedBox& box) {
  TrackedBox out = box;
  out.center = se3_apply(t, box.center);
  out.yaw = wrap_angle(box.yaw + t.yaw());
  return out;
}

/// Closed-interval membership in box-local axes.
inline bool box_contains(const TrackedBox& box, const Vec3& p) {
  const Vec3 local = yaw_rotation(box.yaw).transpose() * (p - box.center);
  return std::abs(local.x()) <= 0.5 * box.dims.length &&
         std::abs(local.y()) <= 0.5 * box.dims.width &&
         std::abs(local.z()) <= 0.5 * box.dims.height;
}

/// Displacement of p when carried rigidly from box_src to box_tgt.
inline Vec3 rigid_box_flow(const TrackedBox& box_src, const TrackedBox& box_tgt, const Vec3& p) {
  if (box_src.track_id != box_tgt.track_id) {
    throw Error(ErrorCode::TrackMismatch, "boxes belong to different tracks");
  }
  const SE3Transform motion = se3_compose(box_tgt.pose(), se3_inverse(box_src.pose()));
  return se3_apply(motion, p) - p;
}

struct EgoMotion {
  SE3Transform t_src_to_tgt;
  double dt = 0.1;
};

/// Moves target-frame points into the source frame so static structure
/// coincides across the pair.
template <class Point>
PointCloud<Point> ego_compensate(const PointCloud<Point>& cloud_tgt, const EgoMotion& ego) {
  const SE3Transform back = se3_inverse(ego.t_src_to_tgt);
  PointCloud<Point> out = cloud_tgt;
  for (auto& pt : out.points) pt.position = se3_apply(back, pt.position);
  return out;
}

inline std::vector<TrackedBox> ego_compensate(const std::vector<TrackedBox>& boxes_tgt,
                                              const EgoMotion& ego) {
  const SE3Transform back = se3_inverse(ego.t_src_to_tgt);
  std::vector<TrackedBox> out;
  out.reserve(boxes_tgt.size());
  for (const auto& b : boxes_tgt) out.push_back(transform_box(back, b));
  return out;
}

enum class MotionClass { FD, BS, FS };

constexpr const char* to_string(MotionClass c) {
  switch (c) {
    case MotionClass::FD: return "FD";
    case MotionClass::BS: return "BS";
    case MotionClass::FS: return "FS";
  }
  return "BS";
}

inline MotionClass motion_class_from_string(const std::string& s) {
  if (s == "FD") return MotionClass::FD;
  if (s == "FS") return MotionClass::FS;
  if (s == "BS") return MotionClass::BS;
  throw Error(ErrorCode::SchemaViolation, "unknown motion class '" + s + "'");
}

/// Per-point flows (meters over dt, source-frame axes) with labels.
struct FlowField {
  std::vector<Vec3> flows;
  std::vector<Vec3> gt_flows;
  std::vector<unsigned char> mask;
  std::vector<MotionClass> motion_class;
  std::vector<std::optional<int>> instance_id;

  static FlowField zeros(std::size_t n) {
    FlowField f;
    f.flows.assign(n, Vec3::Zero());
    f.gt_flows.assign(n, Vec3::Zero());
    f.mask.assign(n, 1);
    f.motion_class.assign(n, MotionClass::BS);
    f.instance_id.assign(n, std::nullopt);
    return f;
  }

  std::size_t size() const { return gt_flows.size(); }
};

}  // namespace raliflow
