#pragma once

// Scene flow labels from tracked boxes: rigid in-box flow, out-of-box radar
// recovery, confidence masks and FD/BS/FS classes.

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "raliflow/geom.hpp"

namespace raliflow {

struct LabelParams {
  double gamma_thre = 1.0;       // m/s
  double dynamic_arv_min = 0.5;  // m/s
  std::map<std::string, double> class_dist_thresholds{
      {"car", 3.0}, {"pedestrian", 1.0}, {"cyclist", 1.5}, {"other", 2.0}};
  double dynamic_speed_min = 0.5;  // m/s

  void validate() const {
    if (!(gamma_thre > 0) || !(dynamic_arv_min > 0) || !(dynamic_speed_min > 0)) {
      throw Error(ErrorCode::ConfigInvalid, "label thresholds must be positive");
    }
    if (!class_dist_thresholds.count("other")) {
      throw Error(ErrorCode::ConfigInvalid, "class_dist_thresholds needs an 'other' entry");
    }
    for (const auto& [cls, d] : class_dist_thresholds) {
      if (!(d > 0)) throw Error(ErrorCode::ConfigInvalid, "distance threshold for '" + cls + "' must be positive");
    }
  }

  // Unknown classes fall back to "other".
  double distance_threshold(const std::string& cls) const {
    const auto it = class_dist_thresholds.find(cls);
    return it != class_dist_thresholds.end() ? it->second : class_dist_thresholds.at("other");
  }
};

/// A tracked object seen in both frames. Target boxes are expressed in the
/// source frame (ego-compensated).
struct Instance {
  int index = 0;
  TrackedBox src;
  TrackedBox tgt;
};

struct LabeledFrame {
  RadarCloud radar;
  FlowField radar_labels;
  LidarCloud lidar;
  FlowField lidar_labels;
  std::vector<Instance> instances;
  double dt = 0.1;
};

inline void check_unique_track_ids(const std::vector<TrackedBox>& boxes) {
  std::unordered_set<int> seen;
  for (const auto& b : boxes) {
    if (!seen.insert(b.track_id).second) {
      throw Error(ErrorCode::DuplicateTrackId, "track id " + std::to_string(b.track_id) + " appears twice");
    }
  }
}

/// Pairs source boxes with target boxes by track id, in source order.
/// Instance index = position in boxes_src.
inline std::vector<Instance> match_instances(const std::vector<TrackedBox>& boxes_src,
                                             const std::vector<TrackedBox>& boxes_tgt) {
  check_unique_track_ids(boxes_src);
  check_unique_track_ids(boxes_tgt);
  std::unordered_map<int, const TrackedBox*> by_id;
  for (const auto& b : boxes_tgt) by_id[b.track_id] = &b;
  std::vector<Instance> out;
  out.reserve(boxes_src.size());
  for (std::size_t i = 0; i < boxes_src.size(); ++i) {
    const auto it = by_id.find(boxes_src[i].track_id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::TrackMismatch,
                  "track id " + std::to_string(boxes_src[i].track_id) + " has no box in the target frame");
    }
    out.push_back({static_cast<int>(i), boxes_src[i], *it->second});
  }
  return out;
}

namespace detail {

// Smaller center distance wins; equal distances go to the lower track id.
inline bool closer(double d, int id, double best_d, int best_id) {
  return d < best_d || (d == best_d && id < best_id);
}

}  // namespace detail

/// Rigid flow for points inside a source box; all others get zero flow and no
/// instance. Overlaps resolve to the nearest box center.
template <class P>
FlowField generate_inbox_labels(const PointCloud<P>& cloud, const std::vector<Instance>& instances) {
  FlowField out = FlowField::zeros(cloud.size());
  std::vector<double> reach(instances.size());
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const double r = instances[k].src.half_diagonal();
    reach[k] = r * r * (1.0 + 1e-9) + 1e-12;
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud[i].position;
    const Instance* best = nullptr;
    double best_d = 0.0;
    for (std::size_t k = 0; k < instances.size(); ++k) {
      const auto& box = instances[k].src;
      if ((p - box.center).squaredNorm() > reach[k]) continue;
      if (!box_contains(box, p)) continue;
      const double d = (p - box.center).norm();
      if (!best || detail::closer(d, box.track_id, best_d, best->src.track_id)) {
        best = &instances[k];
        best_d = d;
      }
    }
    if (best) {
      out.gt_flows[i] = rigid_box_flow(best->src, best->tgt, p);
      out.instance_id[i] = best->index;
    }
  }
  return out;
}

/// Does v (meters per frame) agree with the measured ARV within gamma_thre?
inline bool arv_consistent(const Vec3& p, const Vec3& flow, double arv, double dt, double gamma_thre) {
  return std::abs(radial_project(p, flow / dt) - arv) < gamma_thre;
}

/// Out-of-box recovery: a static-labeled radar point with |arv| above the
/// dynamic gate adopts the rigid flow of its nearest box when it lies within
/// that box's class distance and the flow's radial speed matches its ARV.
inline FlowField recover_outbox_radar(const RadarCloud& radar, FlowField labels,
                                      const std::vector<Instance>& instances, const LabelParams& params,
                                      double dt) {
  params.validate();
  if (labels.size() != radar.size()) throw Error(ErrorCode::LengthMismatch, "labels do not match radar cloud");
  for (std::size_t i = 0; i < radar.size(); ++i) {
    if (labels.instance_id[i] || std::abs(radar[i].arv) <= params.dynamic_arv_min) continue;
    const Vec3& p = radar[i].position;
    const Instance* best = nullptr;
    double best_d = 0.0;
    for (const auto& inst : instances) {
      const double d = (p - inst.src.center).norm();
      if (!best || detail::closer(d, inst.src.track_id, best_d, best->src.track_id)) {
        best = &inst;
        best_d = d;
      }
    }
    if (!best || best_d > params.distance_threshold(best->src.class_label)) continue;
    const Vec3 cand = rigid_box_flow(best->src, best->tgt, p);
    if (arv_consistent(p, cand, radar[i].arv, dt, params.gamma_thre)) {
      labels.gt_flows[i] = cand;
      labels.instance_id[i] = best->index;
    }
  }
  return labels;
}

/// m_i = 1 iff the label's radial speed agrees with the measured ARV.
inline std::vector<unsigned char> confidence_mask(const RadarCloud& radar, const FlowField& labels,
                                                  double gamma_thre, double dt) {
  if (labels.size() != radar.size()) throw Error(ErrorCode::LengthMismatch, "labels do not match radar cloud");
  std::vector<unsigned char> mask(radar.size());
  for (std::size_t i = 0; i < radar.size(); ++i) {
    mask[i] = arv_consistent(radar[i].position, labels.gt_flows[i], radar[i].arv, dt, gamma_thre) ? 1 : 0;
  }
  return mask;
}

inline std::vector<MotionClass> classify_points(const FlowField& labels, double dt, double dynamic_speed_min) {
  std::vector<MotionClass> out(labels.size(), MotionClass::BS);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels.instance_id[i]) continue;
    out[i] = labels.gt_flows[i].norm() / dt >= dynamic_speed_min ? MotionClass::FD : MotionClass::FS;
  }
  return out;
}

/// Full label pass for one frame pair. Clouds are source-frame points;
/// target boxes arrive in the target sensor frame and are ego-compensated
/// here.
inline LabeledFrame label_frame(const RadarCloud& radar, const LidarCloud& lidar,
                                const std::vector<TrackedBox>& boxes_src,
                                const std::vector<TrackedBox>& boxes_tgt, const EgoMotion& ego,
                                const LabelParams& params) {
  params.validate();
  LabeledFrame out;
  out.radar = radar;
  out.lidar = lidar;
  out.dt = ego.dt;
  out.instances = match_instances(boxes_src, ego_compensate(boxes_tgt, ego));

  out.radar_labels = recover_outbox_radar(radar, generate_inbox_labels(radar, out.instances), out.instances,
                                          params, ego.dt);
  out.radar_labels.mask = confidence_mask(radar, out.radar_labels, params.gamma_thre, ego.dt);
  out.radar_labels.motion_class = classify_points(out.radar_labels, ego.dt, params.dynamic_speed_min);

  out.lidar_labels = generate_inbox_labels(lidar, out.instances);
  out.lidar_labels.motion_class = classify_points(out.lidar_labels, ego.dt, params.dynamic_speed_min);
  return out;
}

}  // namespace raliflow
