#pragma once

// Synthetic radar + LiDAR frame pairs with exact ground truth, and
// brute-force reference implementations used to cross-check the pipeline.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "raliflow/geom.hpp"
#include "raliflow/labelgen.hpp"
#include "raliflow/rng.hpp"

namespace raliflow {

struct SceneConfig {
  std::uint64_t seed = 1;
  double extent = 12.8;  // square side, centered on the source sensor
  int n_boxes = 3;
  double box_speed_min = 0.0;
  double box_speed_max = 6.0;
  double parked_fraction = 0.3;  // boxes other than the first that stand still
  double max_yaw_rate = 0.5;     // rad/s
  double lidar_density = 40.0;   // points per m^2 of visible surface
  double ground_density = 1.5;
  double lidar_noise = 0.01;
  int radar_per_object_min = 5;
  int radar_per_object_max = 15;
  int radar_clutter = 8;           // static returns on walls
  int radar_isolated = 3;          // static returns away from any structure
  double radar_jitter = 0.15;      // per-axis sigma, truncated at 2 sigma
  double outside_fraction = 0.3;   // radar object returns pushed out of the box
  double outside_offset_max = 0.4;
  double arv_noise = 0.2;
  int outlier_count = 2;
  double outlier_arv = 30.0;
  double ego_speed_min = 0.0;
  double ego_speed_max = 3.0;
  double max_ego_yaw_rate = 0.1;
  double dt = 0.1;
  double ground_z = -1.8;
  double wall_height = 1.2;
  SE3Transform radar_extrinsic = SE3Transform::identity();  // radar -> LiDAR

  void validate() const {
    const bool ok = extent > 0 && n_boxes >= 0 && box_speed_min >= 0 && box_speed_max >= box_speed_min &&
                    parked_fraction >= 0 && parked_fraction <= 1 && max_yaw_rate >= 0 && lidar_density >= 0 &&
                    ground_density >= 0 && lidar_noise >= 0 && radar_per_object_min >= 0 &&
                    radar_per_object_max >= radar_per_object_min && radar_clutter >= 0 && radar_isolated >= 0 &&
                    radar_jitter >= 0 && outside_fraction >= 0 && outside_fraction <= 1 &&
                    outside_offset_max >= 0 && arv_noise >= 0 && outlier_count >= 0 && outlier_arv >= 0 &&
                    ego_speed_min >= 0 && ego_speed_max >= ego_speed_min && max_ego_yaw_rate >= 0 && dt > 0 &&
                    wall_height > 0 && radar_extrinsic.is_valid();
    if (!ok) throw Error(ErrorCode::ConfigInvalid, "scene config has a negative or inconsistent field");
  }
};

/// Source frame truth is expressed in the source LiDAR frame; flows are
/// ego-compensated displacements over one frame interval.
struct SyntheticScene {
  std::string src_id;
  std::string tgt_id;
  RadarCloud radar_src;  // radar frame
  LidarCloud lidar_src;
  RadarCloud radar_tgt;
  LidarCloud lidar_tgt;
  std::vector<TrackedBox> boxes_src;  // each frame's boxes in that frame's LiDAR coordinates
  std::vector<TrackedBox> boxes_tgt;
  EgoMotion ego;
  SE3Transform radar_extrinsic;

  std::vector<Vec3> radar_flow;
  std::vector<Vec3> lidar_flow;
  std::vector<int> radar_object;  // box index or -1
  std::vector<int> lidar_object;
  std::vector<unsigned char> radar_outlier;
  std::vector<unsigned char> radar_isolated;
  std::vector<double> box_speed;
};

namespace detail {

struct Face {
  Vec3 center;   // local
  Vec3 normal;   // local, outward
  Vec3 u, v;     // local tangent axes
  double hu, hv;  // half sizes along u, v
};

inline std::vector<Face> box_faces(const BoxDims& d) {
  const double l = 0.5 * d.length, w = 0.5 * d.width, h = 0.5 * d.height;
  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
  return {{l * ex, ex, ey, ez, w, h},  {-l * ex, -ex, ey, ez, w, h}, {w * ey, ey, ex, ez, l, h},
          {-w * ey, -ey, ex, ez, l, h}, {h * ez, ez, ex, ey, l, w}};
}

inline BoxDims class_dims(const std::string& cls) {
  if (cls == "car") return {4.0, 1.8, 1.5};
  if (cls == "pedestrian") return {0.6, 0.6, 1.7};
  return {1.8, 0.6, 1.6};  // cyclist
}

struct Wall {
  Vec3 a, b;  // base segment endpoints (world, at ground height)
};

inline double truncated_normal(SplitMix64& rng, double sigma) {
  if (sigma == 0.0) return 0.0;
  double x;
  do x = rng.normal(0.0, sigma);
  while (std::abs(x) > 2.0 * sigma);
  return x;
}

// Inset keeps surface samples strictly inside the box despite rounding.
constexpr double kFaceInset = 0.02;

inline Vec3 sample_face(const Face& f, SplitMix64& rng) {
  const double su = f.hu - kFaceInset, sv = f.hv - kFaceInset;
  return f.center - kFaceInset * f.normal + rng.uniform(-su, su) * f.u + rng.uniform(-sv, sv) * f.v;
}

inline bool face_visible(const TrackedBox& box, const Face& f, const Vec3& sensor) {
  const SE3Transform pose = box.pose();
  const Vec3 c = se3_apply(pose, f.center);
  const Vec3 n = pose.rotation * f.normal;
  return n.dot(sensor - c) > 0.0;
}

}  // namespace detail

/// Deterministic scene: walls, sparse ground, moving boxes sampled by a
/// surface LiDAR model and a sparse noisy radar, seen from two sensor poses
/// one frame apart.
inline SyntheticScene generate_scene(const SceneConfig& cfg, const LabelParams& label_params = LabelParams{}) {
  cfg.validate();
  SplitMix64 rng(cfg.seed);
  constexpr double pi = std::numbers::pi;
  const double half = 0.5 * cfg.extent;
  const double dt = cfg.dt;
  SyntheticScene s;
  s.src_id = "s" + std::to_string(cfg.seed) + "_0";
  s.tgt_id = "s" + std::to_string(cfg.seed) + "_1";
  s.radar_extrinsic = cfg.radar_extrinsic;

  // Ego: the target sensor pose in the source (world) frame.
  const double ego_speed = rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max);
  const double ego_yaw = rng.uniform(-cfg.max_ego_yaw_rate, cfg.max_ego_yaw_rate) * dt;
  const SE3Transform tgt_pose = SE3Transform::from_yaw(ego_yaw, {ego_speed * dt, 0.0, 0.0});
  s.ego = {se3_inverse(tgt_pose), dt};
  const Vec3 ego_velocity(ego_speed, 0.0, 0.0);

  // Walls along the far +-y edges.
  std::vector<detail::Wall> walls;
  for (double side : {1.0, -1.0}) {
    const double y = side * rng.uniform(0.85 * half, 0.95 * half);
    const double len = rng.uniform(0.4 * cfg.extent, 0.65 * cfg.extent);
    const double cx = rng.uniform(-0.15 * cfg.extent, 0.15 * cfg.extent);
    walls.push_back({{cx - 0.5 * len, y, cfg.ground_z}, {cx + 0.5 * len, y, cfg.ground_z}});
  }

  // Boxes.
  const std::vector<std::string> classes{"car", "pedestrian", "cyclist"};
  std::vector<TrackedBox> world0, world1;
  std::vector<double> reach;  // clearance radius per box
  const double box_limit_x = 0.78 * half, box_limit_y = 0.62 * half;
  for (int k = 0; k < cfg.n_boxes; ++k) {
    TrackedBox b;
    b.track_id = 100 + k;
    b.class_label = classes[rng.below(classes.size())];
    b.dims = detail::class_dims(b.class_label);
    const double r = std::max(b.half_diagonal(), label_params.distance_threshold(b.class_label));
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      b.center = Vec3(rng.uniform(-box_limit_x, box_limit_x), rng.uniform(-box_limit_y, box_limit_y),
                      cfg.ground_z + 0.5 * b.dims.height);
      if (std::hypot(b.center.x(), b.center.y()) < 2.5) continue;
      placed = true;
      for (std::size_t j = 0; j < world0.size() && placed; ++j) {
        const double d = std::hypot(b.center.x() - world0[j].center.x(), b.center.y() - world0[j].center.y());
        placed = d >= r + reach[j] + 0.3;
      }
    }
    if (!placed) break;  // the area is full; fewer boxes
    double speed = 0.0, heading = rng.uniform(-pi, pi), yaw_rate = 0.0;
    if (k == 0) {
      // Keeps the frame's dynamic radar population non-trivial.
      speed = rng.uniform(std::max(2.0, cfg.box_speed_min), std::max(2.0, cfg.box_speed_max));
      heading = std::atan2(b.center.y(), b.center.x()) + rng.uniform(-pi / 4, pi / 4) + (rng.uniform() < 0.5 ? 0 : pi);
      yaw_rate = rng.uniform(-cfg.max_yaw_rate, cfg.max_yaw_rate);
    } else if (rng.uniform() >= cfg.parked_fraction) {
      speed = rng.uniform(cfg.box_speed_min, cfg.box_speed_max);
      yaw_rate = rng.uniform(-cfg.max_yaw_rate, cfg.max_yaw_rate);
    }
    b.yaw = wrap_angle(heading);
    TrackedBox b1 = b;
    b1.center += speed * dt * Vec3(std::cos(b.yaw), std::sin(b.yaw), 0.0);
    b1.yaw = wrap_angle(b.yaw + yaw_rate * dt);
    world0.push_back(b);
    world1.push_back(b1);
    reach.push_back(r);
    s.box_speed.push_back(speed);
  }

  auto in_extent = [&](const Vec3& p) { return std::abs(p.x()) < half && std::abs(p.y()) < half; };
  auto in_any_footprint = [&](const Vec3& p, const std::vector<TrackedBox>& boxes) {
    for (const auto& b : boxes) {
      Vec3 q = p;
      q.z() = b.center.z();
      if (box_contains(b, q)) return true;
    }
    return false;
  };
  auto object_flow = [&](std::size_t k, const Vec3& p) { return rigid_box_flow(world0[k], world1[k], p); };
  const SE3Transform lidar_to_radar = se3_inverse(cfg.radar_extrinsic);
  // ARV measured in the radar frame; positions and velocities arrive in the
  // world (LiDAR) frame of the given sensor pose.
  auto measure_arv = [&](const Vec3& p_lidar, const Vec3& v_lidar) {
    return radial_project(se3_apply(lidar_to_radar, p_lidar), lidar_to_radar.rotation * v_lidar);
  };

  // One frame: `to_frame` maps world points into that frame's LiDAR frame,
  // `boxes` are the world boxes at that time.
  struct FrameOut {
    RadarCloud radar;
    LidarCloud lidar;
    std::vector<Vec3> radar_flow, lidar_flow;
    std::vector<int> radar_object, lidar_object;
    std::vector<unsigned char> outlier, isolated;
  };
  auto make_frame = [&](const SE3Transform& to_frame, const std::vector<TrackedBox>& boxes,
                        const std::vector<TrackedBox>& boxes_other, bool forward) {
    FrameOut f;
    const Vec3 sensor = se3_apply(se3_inverse(to_frame), Vec3::Zero());
    auto flow_of = [&](std::size_t k, const Vec3& p) {
      // Displacement of the material point at p over the interval, in world.
      return forward ? object_flow(k, p) : Vec3(-rigid_box_flow(boxes[k], boxes_other[k], p));
    };
    auto add_lidar = [&](const Vec3& world, double intensity, int obj, const Vec3& flow) {
      const Vec3 p = se3_apply(to_frame, world);
      if (!in_extent(p)) return;
      f.lidar.points.push_back({p, intensity});
      f.lidar_flow.push_back(flow);
      f.lidar_object.push_back(obj);
    };
    auto add_radar = [&](const Vec3& world, double arv_true_mps, int obj, const Vec3& flow, bool outlier,
                         bool isolated) {
      const Vec3 p = se3_apply(to_frame, world);
      if (!in_extent(p)) return;
      const double arv = outlier ? arv_true_mps : arv_true_mps + rng.normal(0.0, cfg.arv_noise);
      const Vec3 pr = se3_apply(lidar_to_radar, p);
      const double rrv = arv - radial_project(pr, lidar_to_radar.rotation * (to_frame.rotation * ego_velocity));
      f.radar.points.push_back({pr, arv, rrv, rng.uniform(-5.0, 20.0)});
      f.radar_flow.push_back(flow);
      f.radar_object.push_back(obj);
      f.outlier.push_back(outlier ? 1 : 0);
      f.isolated.push_back(isolated ? 1 : 0);
    };
    auto noisy = [&](Vec3 p) {
      if (cfg.lidar_noise > 0) p += Vec3(rng.normal(0, cfg.lidar_noise), rng.normal(0, cfg.lidar_noise),
                                         rng.normal(0, cfg.lidar_noise) * 0.5);
      return p;
    };

    // Ground.
    const auto n_ground = static_cast<int>(std::lround(cfg.ground_density * cfg.extent * cfg.extent));
    for (int i = 0; i < n_ground; ++i) {
      const Vec3 local(rng.uniform(-half, half), rng.uniform(-half, half), 0.0);
      Vec3 w = se3_apply(se3_inverse(to_frame), local);
      w.z() = cfg.ground_z + rng.normal(0.0, 0.02);
      if (in_any_footprint(w, boxes)) continue;
      add_lidar(w, rng.uniform(0.05, 0.2), -1, Vec3::Zero());
    }
    // Walls.
    for (const auto& wall : walls) {
      const double len = (wall.b - wall.a).norm();
      const auto n = static_cast<int>(std::lround(cfg.lidar_density * len * cfg.wall_height));
      for (int i = 0; i < n; ++i) {
        Vec3 w = wall.a + rng.uniform() * (wall.b - wall.a);
        w.z() = cfg.ground_z + rng.uniform(0.0, cfg.wall_height);
        add_lidar(noisy(w), rng.uniform(0.3, 0.9), -1, Vec3::Zero());
      }
    }
    // Object surfaces.
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const SE3Transform pose = boxes[k].pose();
      for (const auto& face : detail::box_faces(boxes[k].dims)) {
        if (!detail::face_visible(boxes[k], face, sensor)) continue;
        const double area = 4.0 * face.hu * face.hv;
        const auto n = static_cast<int>(std::lround(cfg.lidar_density * area));
        for (int i = 0; i < n; ++i) {
          const Vec3 w = se3_apply(pose, detail::sample_face(face, rng));
          add_lidar(w, rng.uniform(0.2, 1.0), static_cast<int>(k), flow_of(k, w));
        }
      }
    }

    // Radar object returns.
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const auto& box = boxes[k];
      const SE3Transform pose = box.pose();
      std::vector<detail::Face> visible;
      for (const auto& face : detail::box_faces(box.dims))
        if (detail::face_visible(box, face, sensor)) visible.push_back(face);
      if (visible.empty()) continue;
      const auto count = cfg.radar_per_object_min +
                         static_cast<int>(rng.below(static_cast<std::uint64_t>(
                             cfg.radar_per_object_max - cfg.radar_per_object_min + 1)));
      const double threshold = label_params.distance_threshold(box.class_label);
      for (int i = 0; i < count; ++i) {
        const bool push_out = rng.uniform() < cfg.outside_fraction;
        Vec3 w = box.center;
        for (int attempt = 0; attempt < 200; ++attempt) {
          const auto& face = visible[rng.below(visible.size())];
          Vec3 local = detail::sample_face(face, rng);
          local += Vec3(detail::truncated_normal(rng, cfg.radar_jitter), detail::truncated_normal(rng, cfg.radar_jitter),
                        detail::truncated_normal(rng, cfg.radar_jitter));
          if (push_out) {
            // Past the face plane by up to outside_offset_max.
            const double depth = local.dot(face.normal) - face.center.dot(face.normal);
            local += (rng.uniform(0.05, cfg.outside_offset_max + 0.05) - depth) * face.normal;
          }
          w = se3_apply(pose, local);
          if ((w - box.center).norm() <= threshold && (push_out ? !box_contains(box, w) : true)) break;
        }
        const Vec3 flow = flow_of(k, w);
        const Vec3 v = flow / dt;
        add_radar(w, measure_arv(se3_apply(to_frame, w), to_frame.rotation * v), static_cast<int>(k), flow, false,
                  false);
      }
    }
    // Static clutter on walls, outliers on walls, isolated returns.
    auto wall_point = [&] {
      const auto& wall = walls[rng.below(walls.size())];
      Vec3 w = wall.a + rng.uniform(0.1, 0.9) * (wall.b - wall.a);
      w.z() = cfg.ground_z + rng.uniform(0.3, cfg.wall_height);
      return w;
    };
    for (int i = 0; i < cfg.radar_clutter; ++i) add_radar(wall_point(), 0.0, -1, Vec3::Zero(), false, false);
    for (int i = 0; i < cfg.outlier_count; ++i) {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      add_radar(wall_point(), sign * (cfg.outlier_arv + rng.uniform(-1.0, 1.0)), -1, Vec3::Zero(), true, false);
    }
    for (int i = 0; i < cfg.radar_isolated; ++i) {
      // Open space between the sensor and the walls, clear of boxes.
      Vec3 w;
      for (int attempt = 0; attempt < 200; ++attempt) {
        w = Vec3(rng.uniform(-0.7 * half, 0.7 * half), rng.uniform(-0.5 * half, 0.5 * half),
                 cfg.ground_z + rng.uniform(0.5, 1.5));
        bool clear = std::hypot(w.x(), w.y()) > 1.5;
        for (const auto& b : boxes) clear = clear && (w - b.center).norm() > b.half_diagonal() + 3.5;
        if (clear) break;
      }
      add_radar(w, 0.0, -1, Vec3::Zero(), false, true);
    }
    return f;
  };

  FrameOut f0 = make_frame(SE3Transform::identity(), world0, world1, true);
  FrameOut f1 = make_frame(s.ego.t_src_to_tgt, world1, world0, false);

  s.radar_src = std::move(f0.radar);
  s.lidar_src = std::move(f0.lidar);
  s.radar_src.frame_id = s.lidar_src.frame_id = s.src_id;
  s.radar_tgt = std::move(f1.radar);
  s.lidar_tgt = std::move(f1.lidar);
  s.radar_tgt.frame_id = s.lidar_tgt.frame_id = s.tgt_id;
  s.radar_flow = std::move(f0.radar_flow);
  s.lidar_flow = std::move(f0.lidar_flow);
  s.radar_object = std::move(f0.radar_object);
  s.lidar_object = std::move(f0.lidar_object);
  s.radar_outlier = std::move(f0.outlier);
  s.radar_isolated = std::move(f0.isolated);
  s.boxes_src = world0;
  for (const auto& b : world1) s.boxes_tgt.push_back(transform_box(s.ego.t_src_to_tgt, b));
  return s;
}

/// Reference local cross-attention on raw arrays (row-major [H*W, C]
/// features, [C, C] projections, [9, C] relative positions). An empty `g`
/// means G = 1. Returns [H*W, C].
inline std::vector<double> oracle_naive_attention(const std::vector<double>& query, const std::vector<unsigned char>& q_occ,
                                                  const std::vector<double>& key, const std::vector<unsigned char>& k_occ,
                                                  const std::vector<double>& g, const std::vector<double>& w_q,
                                                  const std::vector<double>& w_k, const std::vector<double>& relpos,
                                                  std::size_t width, std::size_t height, std::size_t c) {
  std::vector<double> out(width * height * c, 0.0);
  for (std::size_t qy = 0; qy < height; ++qy) {
    for (std::size_t qx = 0; qx < width; ++qx) {
      const std::size_t qc = qy * width + qx;
      if (!q_occ[qc]) continue;
      // Projected query.
      std::vector<double> qv(c, 0.0);
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t i = 0; i < c; ++i) qv[j] += query[qc * c + i] * w_q[i * c + j];
      // Full 3x3 logit vector; unoccupied or off-grid slots are masked.
      double logits[9];
      bool present[9];
      for (int o = 0; o < 9; ++o) {
        present[o] = false;
        logits[o] = 0.0;
        const long kx = static_cast<long>(qx) + (o % 3) - 1;
        const long ky = static_cast<long>(qy) + (o / 3) - 1;
        if (kx < 0 || ky < 0 || kx >= static_cast<long>(width) || ky >= static_cast<long>(height)) continue;
        const auto kc = static_cast<std::size_t>(ky) * width + static_cast<std::size_t>(kx);
        if (!k_occ[kc]) continue;
        present[o] = true;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          double kv = 0.0;
          for (std::size_t i = 0; i < c; ++i) kv += key[kc * c + i] * w_k[i * c + j];
          dot += qv[j] * kv;
        }
        logits[o] = dot / std::sqrt(static_cast<double>(c)) * (g.empty() ? 1.0 : g[kc]);
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (int o = 0; o < 9; ++o)
        if (present[o]) mx = std::max(mx, logits[o]);
      if (!std::isfinite(mx)) continue;
      double z = 0.0;
      double wts[9];
      for (int o = 0; o < 9; ++o) {
        wts[o] = present[o] ? std::exp(logits[o] - mx) : 0.0;
        z += wts[o];
      }
      for (int o = 0; o < 9; ++o) {
        if (!present[o]) continue;
        const long kx = static_cast<long>(qx) + (o % 3) - 1;
        const long ky = static_cast<long>(qy) + (o / 3) - 1;
        const auto kc = static_cast<std::size_t>(ky) * width + static_cast<std::size_t>(kx);
        for (std::size_t j = 0; j < c; ++j)
          out[qc * c + j] += wts[o] / z * (key[kc * c + j] + relpos[static_cast<std::size_t>(o) * c + j]);
      }
    }
  }
  return out;
}

/// Reference radar labels: every point is tested against every box with no
/// pruning. Target boxes are given in the target frame.
inline FlowField oracle_label_flow(const RadarCloud& radar, const std::vector<TrackedBox>& boxes_src,
                                   const std::vector<TrackedBox>& boxes_tgt, const EgoMotion& ego,
                                   const LabelParams& params) {
  const SE3Transform back = se3_inverse(ego.t_src_to_tgt);
  std::vector<TrackedBox> tgt_for(boxes_src.size());
  for (std::size_t k = 0; k < boxes_src.size(); ++k) {
    bool found = false;
    for (const auto& t : boxes_tgt) {
      if (t.track_id == boxes_src[k].track_id) {
        tgt_for[k] = transform_box(back, t);
        found = true;
      }
    }
    if (!found) throw Error(ErrorCode::TrackMismatch, "oracle: unmatched track");
  }
  FlowField f = FlowField::zeros(radar.size());
  for (std::size_t i = 0; i < radar.size(); ++i) {
    const Vec3& p = radar[i].position;
    int best = -1;
    for (std::size_t k = 0; k < boxes_src.size(); ++k) {
      if (!box_contains(boxes_src[k], p)) continue;
      const double d = (p - boxes_src[k].center).norm();
      if (best < 0) {
        best = static_cast<int>(k);
        continue;
      }
      const double bd = (p - boxes_src[static_cast<std::size_t>(best)].center).norm();
      if (d < bd || (d == bd && boxes_src[k].track_id < boxes_src[static_cast<std::size_t>(best)].track_id)) {
        best = static_cast<int>(k);
      }
    }
    if (best < 0 && std::abs(radar[i].arv) > params.dynamic_arv_min) {
      int nearest = -1;
      for (std::size_t k = 0; k < boxes_src.size(); ++k) {
        const double d = (p - boxes_src[k].center).norm();
        if (nearest < 0) {
          nearest = static_cast<int>(k);
          continue;
        }
        const double nd = (p - boxes_src[static_cast<std::size_t>(nearest)].center).norm();
        if (d < nd || (d == nd && boxes_src[k].track_id < boxes_src[static_cast<std::size_t>(nearest)].track_id)) {
          nearest = static_cast<int>(k);
        }
      }
      if (nearest >= 0) {
        const auto n = static_cast<std::size_t>(nearest);
        if ((p - boxes_src[n].center).norm() <= params.distance_threshold(boxes_src[n].class_label)) {
          const Vec3 cand = rigid_box_flow(boxes_src[n], tgt_for[n], p);
          if (std::abs(radial_project(p, cand / ego.dt) - radar[i].arv) < params.gamma_thre) best = nearest;
        }
      }
    }
    if (best >= 0) {
      const auto b = static_cast<std::size_t>(best);
      f.gt_flows[i] = rigid_box_flow(boxes_src[b], tgt_for[b], p);
      f.instance_id[i] = best;
    }
    f.mask[i] = std::abs(radial_project(p, f.gt_flows[i] / ego.dt) - radar[i].arv) < params.gamma_thre ? 1 : 0;
    if (f.instance_id[i]) {
      f.motion_class[i] = f.gt_flows[i].norm() / ego.dt >= params.dynamic_speed_min ? MotionClass::FD : MotionClass::FS;
    }
  }
  return f;
}

}  // namespace raliflow
