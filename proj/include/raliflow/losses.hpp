#pragma once

// Speed-bucketed flow losses, the radar confidence-masked loss and the
// per-instance dynamic consistency loss.

#include <string>
#include <vector>

#include "raliflow/geom.hpp"
#include "raliflow/tensor.hpp"

namespace raliflow {

enum class BucketSource { pred, gt };

inline BucketSource bucket_source_from_string(const std::string& s) {
  if (s == "pred") return BucketSource::pred;
  if (s == "gt") return BucketSource::gt;
  throw Error(ErrorCode::ConfigInvalid, "bucket_source must be 'pred' or 'gt', got '" + s + "'");
}

inline std::string to_string(BucketSource b) { return b == BucketSource::pred ? "pred" : "gt"; }

struct SpeedBuckets {
  std::vector<ad::Index> fast;    // speed > 1.0 m/s
  std::vector<ad::Index> slow;    // speed < 0.4 m/s
  std::vector<ad::Index> medium;  // otherwise
};

/// Flow rows as Vec3 (values only, no gradient).
inline std::vector<Vec3> to_vec3(const ad::Tensor& flows) {
  if (flows.ndim() != 2 || flows.dim(1) != 3) throw Error(ErrorCode::ShapeMismatch, "flows must be [N, 3]");
  std::vector<Vec3> out(flows.dim(0));
  const auto v = flows.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  return out;
}

inline ad::Tensor from_vec3(const std::vector<Vec3>& flows) {
  std::vector<double> v(flows.size() * 3);
  for (std::size_t i = 0; i < flows.size(); ++i)
    for (int j = 0; j < 3; ++j) v[3 * i + static_cast<std::size_t>(j)] = flows[i][j];
  return ad::Tensor::from({flows.size(), 3}, std::move(v));
}

/// Buckets the `candidates` by ||flow|| / dt.
inline SpeedBuckets speed_buckets(const std::vector<Vec3>& flows, const std::vector<std::size_t>& candidates,
                                  double dt) {
  if (!(dt > 0)) throw Error(ErrorCode::ConfigInvalid, "dt must be positive");
  SpeedBuckets b;
  for (std::size_t i : candidates) {
    if (i >= flows.size()) throw Error(ErrorCode::IndexOutOfRange, "bucket candidate out of range");
    const double s = flows[i].norm() / dt;
    const auto idx = static_cast<ad::Index>(i);
    if (s > 1.0) b.fast.push_back(idx);
    else if (s < 0.4) b.slow.push_back(idx);
    else b.medium.push_back(idx);
  }
  return b;
}

/// sum over non-empty buckets of the mean L2 error inside the bucket.
inline ad::Tensor bucketed_flow_loss(const ad::Tensor& pred, const std::vector<Vec3>& gt, const SpeedBuckets& b) {
  if (pred.ndim() != 2 || pred.dim(1) != 3) throw Error(ErrorCode::ShapeMismatch, "pred must be [N, 3]");
  if (pred.dim(0) != gt.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "pred has " + std::to_string(pred.dim(0)) + " rows, gt " + std::to_string(gt.size()));
  }
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (const auto* bucket : {&b.fast, &b.slow, &b.medium}) {
    if (bucket->empty()) continue;
    std::vector<Vec3> target;
    target.reserve(bucket->size());
    for (ad::Index i : *bucket) target.push_back(gt[static_cast<std::size_t>(i)]);
    const ad::Tensor err = ad::l2_norm_rows(ad::sub(ad::gather_rows(pred, *bucket), from_vec3(target)));
    total = ad::add(total, ad::mean(err));
  }
  return total;
}

inline ad::Tensor lidar_flow_loss(const ad::Tensor& pred, const std::vector<Vec3>& gt, const SpeedBuckets& b) {
  return bucketed_flow_loss(pred, gt, b);
}

/// Buckets restricted to mask-1 points, then the same bucketed loss.
inline ad::Tensor masked_radar_flow_loss(const ad::Tensor& pred, const std::vector<Vec3>& gt,
                                         const std::vector<unsigned char>& mask, const SpeedBuckets& b) {
  if (mask.size() != gt.size()) throw Error(ErrorCode::LengthMismatch, "mask and gt lengths differ");
  auto keep = [&](const std::vector<ad::Index>& in) {
    std::vector<ad::Index> out;
    for (ad::Index i : in)
      if (mask[static_cast<std::size_t>(i)]) out.push_back(i);
    return out;
  };
  return bucketed_flow_loss(pred, gt, {keep(b.fast), keep(b.slow), keep(b.medium)});
}

/// One modality's view for the instance loss.
struct InstanceLossInput {
  const ad::Tensor* pred;
  const std::vector<Vec3>* gt;
  const std::vector<std::optional<int>>* instance_id;
  const std::vector<std::size_t>* eligible;  // points considered (ascending)
};

/// For each instance: P^D = its eligible points (radar first, then LiDAR)
/// with gt speed >= speed_min; kappa = the one with the largest predicted
/// flow (first on ties); loss = mean over P^D of ||V(p) - V(p_kappa)|| with
/// V(p_kappa) held constant. Instances with fewer than two points add 0.
inline ad::Tensor instance_consistency_loss(const std::vector<InstanceLossInput>& modalities,
                                            std::size_t num_instances, double dt, double speed_min = 0.5,
                                            bool detach_target = true) {
  struct Member {
    std::size_t modality;
    ad::Index row;
  };
  std::vector<std::vector<Member>> members(num_instances);
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    const auto& in = modalities[m];
    if (in.pred->dim(0) != in.gt->size() || in.instance_id->size() != in.gt->size()) {
      throw Error(ErrorCode::LengthMismatch, "instance loss inputs disagree in length");
    }
    for (std::size_t i : *in.eligible) {
      const auto& id = (*in.instance_id)[i];
      if (!id || (*in.gt)[i].norm() / dt < speed_min) continue;
      if (*id < 0 || static_cast<std::size_t>(*id) >= num_instances) {
        throw Error(ErrorCode::IndexOutOfRange, "instance id " + std::to_string(*id));
      }
      members[static_cast<std::size_t>(*id)].push_back({m, static_cast<ad::Index>(i)});
    }
  }
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (const auto& group : members) {
    if (group.size() <= 1) continue;
    std::vector<ad::Tensor> parts;
    std::vector<std::vector<ad::Index>> rows(modalities.size());
    for (const auto& mem : group) rows[mem.modality].push_back(mem.row);
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      if (!rows[m].empty()) parts.push_back(ad::gather_rows(*modalities[m].pred, rows[m]));
    }
    const ad::Tensor stacked = parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
    const auto v = stacked.data();
    std::size_t kappa = 0;
    double best = -1.0;
    for (std::size_t r = 0; r < group.size(); ++r) {
      const double n = Vec3(v[3 * r], v[3 * r + 1], v[3 * r + 2]).norm();
      if (n > best) {
        best = n;
        kappa = r;
      }
    }
    const ad::Tensor target =
        detach_target ? ad::Tensor::from({3}, {v[3 * kappa], v[3 * kappa + 1], v[3 * kappa + 2]})
                      : ad::reshape(ad::gather_rows(stacked, {static_cast<ad::Index>(kappa)}), {3});
    total = ad::add(total, ad::mean(ad::l2_norm_rows(ad::sub(stacked, target))));
  }
  return total;
}

inline ad::Tensor total_loss(const ad::Tensor& l_li, const ad::Tensor& l_ra, const ad::Tensor& l_ins) {
  return ad::add(ad::add(l_li, l_ra), l_ins);
}

}  // namespace raliflow
