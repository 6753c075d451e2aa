#pragma once

// Ground removal, radar-to-LiDAR projection and cross-modal radar denoising.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <unordered_set>
#include <vector>

#include "raliflow/geom.hpp"

namespace raliflow {

struct GroundParams {
  int num_segments = 32;
  int num_bins = 64;
  double max_slope = 0.15;          // rad
  double ground_z_tolerance = 0.25;  // m
  double seed_z_max = 0.3;           // m above the sensor-ground estimate

  void validate() const {
    if (num_segments <= 0 || num_bins <= 0 || !(max_slope > 0) ||
        !(max_slope < std::numbers::pi / 2) || !(ground_z_tolerance > 0) || !(seed_z_max > 0)) {
      throw Error(ErrorCode::ConfigInvalid, "ground parameters must be positive, slope < pi/2");
    }
  }
};

struct DenoiseParams {
  double dynamic_arv_min = 0.5;  // m/s
  double theta_thre = 10.0;      // m/s
  double bev_grid = 0.8;         // m

  void validate() const {
    if (!(dynamic_arv_min > 0) || !(theta_thre > 0) || !(bev_grid > 0)) {
      throw Error(ErrorCode::ConfigInvalid, "denoise parameters must be positive");
    }
  }
};

namespace detail {

struct GroundLine {
  double slope = 0.0;
  double intercept = 0.0;
  double r_begin = 0.0;
  double r_end = 0.0;

  double at(double r) const { return slope * r + intercept; }
};

// Least-squares z = a r + b; a single sample gives a flat line.
inline std::pair<double, double> fit_line(const std::vector<std::pair<double, double>>& pts) {
  if (pts.size() == 1) return {0.0, pts[0].second};
  double sr = 0, sz = 0, srr = 0, srz = 0;
  for (const auto& [r, z] : pts) {
    sr += r;
    sz += z;
    srr += r * r;
    srz += r * z;
  }
  const double n = static_cast<double>(pts.size());
  const double den = n * srr - sr * sr;
  if (std::abs(den) < 1e-12) return {0.0, sz / n};
  const double a = (n * srz - sr * sz) / den;
  return {a, (sz - a * sr) / n};
}

}  // namespace detail

/// Polar-grid line-fit ground segmentation on positions expressed with the
/// sensor at the origin. Returns keep_mask (false = ground).
///
/// Points are binned into angular sectors and radial bins (bin length =
/// max range / num_bins); each bin's lowest point is its prototype. Per
/// sector, prototypes are swept outward and grown into lines by incremental
/// least squares while the slope stays within max_slope and every member
/// stays within ground_z_tolerance of the fit. A new line may only start at
/// a prototype consistent with the previous line, or (for the first line)
/// within seed_z_max of the ground estimate, the median of the per-sector
/// lowest prototypes.
inline std::vector<bool> remove_ground(const std::vector<Vec3>& positions, const GroundParams& params) {
  params.validate();
  if (positions.empty()) throw Error(ErrorCode::EmptyCloud, "ground removal on an empty cloud");
  const auto nseg = static_cast<std::size_t>(params.num_segments);
  const auto nbin = static_cast<std::size_t>(params.num_bins);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  double max_range = 0.0;
  for (const auto& p : positions) max_range = std::max(max_range, std::hypot(p.x(), p.y()));
  const double bin_len = max_range > 0 ? max_range * (1.0 + 1e-12) / static_cast<double>(nbin) : 1.0;

  std::vector<std::size_t> seg_of(positions.size());
  std::vector<double> range_of(positions.size());
  // Lowest (r, z) per (sector, bin).
  std::vector<std::optional<std::pair<double, double>>> proto(nseg * nbin);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Vec3& p = positions[i];
    double ang = std::atan2(p.y(), p.x());
    if (ang < 0) ang += two_pi;
    auto s = static_cast<std::size_t>(ang / two_pi * static_cast<double>(nseg));
    s = std::min(s, nseg - 1);
    const double r = std::hypot(p.x(), p.y());
    const auto b = std::min(static_cast<std::size_t>(r / bin_len), nbin - 1);
    seg_of[i] = s;
    range_of[i] = r;
    auto& slot = proto[s * nbin + b];
    if (!slot || p.z() < slot->second || (p.z() == slot->second && r < slot->first)) {
      slot = std::make_pair(r, p.z());
    }
  }

  std::vector<double> sector_min;
  for (std::size_t s = 0; s < nseg; ++s) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < nbin; ++b) {
      if (const auto& slot = proto[s * nbin + b]) m = std::min(m, slot->second);
    }
    if (std::isfinite(m)) sector_min.push_back(m);
  }
  std::sort(sector_min.begin(), sector_min.end());
  const double ground_estimate = sector_min[sector_min.size() / 2];

  std::vector<std::vector<detail::GroundLine>> lines(nseg);
  for (std::size_t s = 0; s < nseg; ++s) {
    std::vector<std::pair<double, double>> current;
    std::optional<detail::GroundLine> previous;
    auto close_line = [&] {
      if (current.empty()) return;
      const auto [a, b0] = detail::fit_line(current);
      detail::GroundLine line{a, b0, current.front().first, current.back().first};
      lines[s].push_back(line);
      previous = line;
      current.clear();
    };
    auto can_start = [&](double r, double z) {
      if (previous) return std::abs(z - previous->at(r)) <= params.ground_z_tolerance;
      return z <= ground_estimate + params.seed_z_max;
    };
    for (std::size_t b = 0; b < nbin; ++b) {
      const auto& slot = proto[s * nbin + b];
      if (!slot) continue;
      const auto [r, z] = *slot;
      if (current.empty()) {
        if (can_start(r, z)) current.push_back(*slot);
        continue;
      }
      auto trial = current;
      trial.push_back(*slot);
      const auto [a, b0] = detail::fit_line(trial);
      bool ok = std::abs(std::atan(a)) <= params.max_slope;
      for (std::size_t k = 0; ok && k < trial.size(); ++k) {
        ok = std::abs(trial[k].second - (a * trial[k].first + b0)) <= params.ground_z_tolerance;
      }
      if (ok) {
        current = std::move(trial);
      } else {
        close_line();
        if (can_start(r, z)) current.push_back(*slot);
      }
    }
    close_line();
  }

  std::vector<bool> keep(positions.size(), true);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& sector_lines = lines[seg_of[i]];
    if (sector_lines.empty()) continue;
    const double r = range_of[i];
    // Line whose range span is nearest to r.
    const detail::GroundLine* best = nullptr;
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& line : sector_lines) {
      const double gap = r < line.r_begin ? line.r_begin - r : (r > line.r_end ? r - line.r_end : 0.0);
      if (gap < best_gap) {
        best_gap = gap;
        best = &line;
      }
    }
    if (best_gap <= bin_len && std::abs(positions[i].z() - best->at(r)) <= params.ground_z_tolerance) {
      keep[i] = false;
    }
  }
  return keep;
}

/// Ground removal over the combined radar + LiDAR scan; returns one mask per
/// modality.
inline std::pair<std::vector<bool>, std::vector<bool>> remove_ground(const RadarCloud& radar,
                                                                     const LidarCloud& lidar,
                                                                     const GroundParams& params) {
  std::vector<Vec3> all;
  all.reserve(radar.size() + lidar.size());
  for (const auto& p : radar.points) all.push_back(p.position);
  for (const auto& p : lidar.points) all.push_back(p.position);
  const auto keep = remove_ground(all, params);
  return {std::vector<bool>(keep.begin(), keep.begin() + static_cast<std::ptrdiff_t>(radar.size())),
          std::vector<bool>(keep.begin() + static_cast<std::ptrdiff_t>(radar.size()), keep.end())};
}

/// Moves radar positions into the LiDAR frame. ARV is a scalar measured
/// along the radar line of sight and is carried unchanged.
inline RadarCloud project_radar_to_lidar(const RadarCloud& radar, const SE3Transform& extrinsic) {
  RadarCloud out = radar;
  for (auto& p : out.points) p.position = se3_apply(extrinsic, p.position);
  return out;
}

struct DenoiseResult {
  std::vector<bool> keep;
  std::vector<bool> keep_hard;  // ARV threshold stage
  std::vector<bool> keep_soft;  // LiDAR context stage
  std::optional<double> mu;     // unset when the frame has no dynamic points
};

/// Two-stage radar outlier removal. Hard stage: mu = mean |arv| over points
/// with |arv| > dynamic_arv_min, plus theta_thre; points with |arv| > mu are
/// dropped. Soft stage: a radar point is dropped when the 3x3 BEV cells
/// around it hold no LiDAR point. Cells are half-open, anchored at the
/// min-xy corner of both clouds.
inline DenoiseResult denoise_radar(const RadarCloud& radar, const LidarCloud& lidar,
                                   const DenoiseParams& params) {
  params.validate();
  if (radar.frame_id != lidar.frame_id) {
    throw Error(ErrorCode::FrameMismatch,
                "radar frame '" + radar.frame_id + "' vs lidar frame '" + lidar.frame_id + "'");
  }
  DenoiseResult out;
  const std::size_t n = radar.size();
  out.keep_hard.assign(n, true);
  out.keep_soft.assign(n, true);

  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : radar.points) {
    if (std::abs(p.arv) > params.dynamic_arv_min) {
      sum += std::abs(p.arv);
      ++count;
    }
  }
  if (count > 0) {
    out.mu = sum / static_cast<double>(count) + params.theta_thre;
    for (std::size_t i = 0; i < n; ++i) out.keep_hard[i] = std::abs(radar[i].arv) <= *out.mu;
  }

  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  for (const auto& p : radar.points) {
    min_x = std::min(min_x, p.position.x());
    min_y = std::min(min_y, p.position.y());
  }
  for (const auto& p : lidar.points) {
    min_x = std::min(min_x, p.position.x());
    min_y = std::min(min_y, p.position.y());
  }
  auto cell_of = [&](const Vec3& p) {
    return std::make_pair(static_cast<std::int64_t>(std::floor((p.x() - min_x) / params.bev_grid)),
                          static_cast<std::int64_t>(std::floor((p.y() - min_y) / params.bev_grid)));
  };
  auto key = [](std::int64_t cx, std::int64_t cy) {
    return (static_cast<std::uint64_t>(cx + (1 << 30)) << 32) ^ static_cast<std::uint64_t>(cy + (1 << 30));
  };
  std::unordered_set<std::uint64_t> occupied;
  occupied.reserve(lidar.size());
  for (const auto& p : lidar.points) {
    const auto [cx, cy] = cell_of(p.position);
    occupied.insert(key(cx, cy));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto [cx, cy] = cell_of(radar[i].position);
    bool found = false;
    for (std::int64_t dy = -1; dy <= 1 && !found; ++dy)
      for (std::int64_t dx = -1; dx <= 1 && !found; ++dx) found = occupied.count(key(cx + dx, cy + dy)) > 0;
    out.keep_soft[i] = found;
  }

  out.keep.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.keep[i] = out.keep_hard[i] && out.keep_soft[i];
  return out;
}

}  // namespace raliflow
