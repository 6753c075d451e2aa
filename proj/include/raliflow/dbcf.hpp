#pragma once

// Dynamic-aware local cross-attention between radar and LiDAR pillar maps.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "raliflow/bevgrid.hpp"
#include "raliflow/tensor.hpp"

namespace raliflow {

enum class FusionMode { concat, dbcf_no_g, dbcf };

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::concat: return "concat";
    case FusionMode::dbcf_no_g: return "dbcf_no_g";
    case FusionMode::dbcf: return "dbcf";
  }
  return "?";
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "concat") return FusionMode::concat;
  if (s == "dbcf_no_g") return FusionMode::dbcf_no_g;
  if (s == "dbcf") return FusionMode::dbcf;
  throw Error(ErrorCode::ConfigInvalid, "unknown fusion mode '" + s + "'");
}

/// One attention direction: query/key projections [C, C] and the 3x3
/// relative-position table [9, C] added to values.
struct AttentionParams {
  ad::Tensor w_q;
  ad::Tensor w_k;
  ad::Tensor relpos;
};

/// Offset index of key cell (qx+dx, qy+dy): (dy+1)*3 + (dx+1).
inline constexpr int relpos_index(int dx, int dy) { return (dy + 1) * 3 + (dx + 1); }

/// For every occupied query cell, softmax over the occupied key cells of its
/// 3x3 window of (q W_q . k W_k) / sqrt(C) * G(key cell), applied to values
/// f_k + relpos[offset]. Returns [H*W, C]; rows without keys are zero.
/// `g` may be null, meaning G = 1.
inline ad::Tensor local_cross_attention(const FeatureMap& query, const FeatureMap& key, const GaussianHeatmap* g,
                                        const AttentionParams& p) {
  using ad::Index;
  using ad::Tensor;
  if (!(query.grid == key.grid) || (g && !(g->grid == query.grid))) {
    throw Error(ErrorCode::GridMismatch, "attention maps live on different grids");
  }
  const std::size_t c = query.channels();
  if (key.channels() != c || p.w_q.shape() != ad::Shape{c, c} || p.w_k.shape() != ad::Shape{c, c} ||
      p.relpos.shape() != ad::Shape{9, c}) {
    throw Error(ErrorCode::ShapeMismatch, "attention channel mismatch");
  }
  const GridSpec& grid = query.grid;
  const std::size_t cells = grid.num_cells();
  const auto w = static_cast<long>(grid.width);
  const auto h = static_cast<long>(grid.height);

  std::vector<Index> q_cells, k_cells;
  std::vector<Index> k_slot(cells, -1);
  for (std::size_t i = 0; i < cells; ++i) {
    if (query.occupancy[i]) q_cells.push_back(static_cast<Index>(i));
    if (key.occupancy[i]) {
      k_slot[i] = static_cast<Index>(k_cells.size());
      k_cells.push_back(static_cast<Index>(i));
    }
  }

  // Enumerate (query, key) pairs.
  std::vector<Index> pair_q, pair_k, pair_q_cell, pair_k_cell, pair_off;
  std::vector<double> pair_scale;
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  for (std::size_t qi = 0; qi < q_cells.size(); ++qi) {
    const long qc = q_cells[qi];
    const long qx = qc % w, qy = qc / w;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const long kx = qx + dx, ky = qy + dy;
        if (kx < 0 || ky < 0 || kx >= w || ky >= h) continue;
        const auto kc = static_cast<std::size_t>(ky * w + kx);
        if (k_slot[kc] < 0) continue;
        pair_q.push_back(static_cast<Index>(qi));
        pair_k.push_back(k_slot[kc]);
        pair_q_cell.push_back(qc);
        pair_k_cell.push_back(static_cast<Index>(kc));
        pair_off.push_back(relpos_index(dx, dy));
        pair_scale.push_back(inv_sqrt_c * (g ? g->values[kc] : 1.0));
      }
    }
  }
  if (pair_q.empty()) return Tensor::zeros({cells, c});

  const Tensor q = ad::matmul(ad::gather_rows(query.features, q_cells), p.w_q);
  const Tensor k = ad::matmul(ad::gather_rows(key.features, k_cells), p.w_k);
  const std::size_t np = pair_q.size();
  const Tensor logits = ad::mul(ad::rows_dot(ad::gather_rows(q, pair_q), ad::gather_rows(k, pair_k)),
                                Tensor::from({np}, std::move(pair_scale)));
  const Tensor weights = ad::segment_softmax(logits, std::move(pair_q), q_cells.size());
  const Tensor values = ad::add(ad::gather_rows(key.features, std::move(pair_k_cell)),
                                ad::gather_rows(p.relpos, std::move(pair_off)));
  return ad::scatter_add_rows(ad::mul_rows(values, weights), std::move(pair_q_cell), cells);
}

struct FusedMaps {
  FeatureMap radar;
  FeatureMap lidar;
};

/// psi_R = A(L -> R) + phi_R and psi_L = A(R -> L) + phi_L, both weighted by
/// this frame's radar heatmap. Concat mode skips attention entirely.
inline FusedMaps dbcf_fuse(const FeatureMap& phi_radar, const FeatureMap& phi_lidar, const GaussianHeatmap& g,
                           const AttentionParams& lidar_to_radar, const AttentionParams& radar_to_lidar,
                           FusionMode mode = FusionMode::dbcf) {
  if (!(phi_radar.grid == phi_lidar.grid)) throw Error(ErrorCode::GridMismatch, "radar/lidar maps differ in grid");
  if (mode == FusionMode::concat) return {phi_radar, phi_lidar};
  const GaussianHeatmap* gp = mode == FusionMode::dbcf ? &g : nullptr;
  FusedMaps out{phi_radar, phi_lidar};
  out.radar.features = ad::add(local_cross_attention(phi_radar, phi_lidar, gp, lidar_to_radar), phi_radar.features);
  out.lidar.features = ad::add(local_cross_attention(phi_lidar, phi_radar, gp, radar_to_lidar), phi_lidar.features);
  return out;
}

}  // namespace raliflow
