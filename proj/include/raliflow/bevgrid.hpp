#pragma once

// Bird's-eye-view pillars: cell assignment, the pillar feature encoder, the
// dynamic radar map and its Gaussian distance heatmap.

#include <cmath>
#include <limits>
#include <vector>

#include "raliflow/geom.hpp"
#include "raliflow/tensor.hpp"

namespace raliflow {

struct GridSpec {
  double x0 = -6.4;
  double y0 = -6.4;
  double resolution = 0.2;
  std::size_t width = 64;   // cells along x
  std::size_t height = 64;  // cells along y

  std::size_t num_cells() const { return width * height; }

  void validate() const {
    if (!(resolution > 0) || width == 0 || height == 0 || !std::isfinite(x0) || !std::isfinite(y0)) {
      throw Error(ErrorCode::ConfigInvalid, "grid needs positive resolution and non-zero size");
    }
  }

  bool operator==(const GridSpec&) const = default;

  /// Flat cell index iy * width + ix, or -1 outside the grid.
  ad::Index cell_of(const Vec3& p) const {
    const double fx = std::floor((p.x() - x0) / resolution);
    const double fy = std::floor((p.y() - y0) / resolution);
    if (!(fx >= 0) || !(fy >= 0) || fx >= static_cast<double>(width) || fy >= static_cast<double>(height)) return -1;
    return static_cast<ad::Index>(fy) * static_cast<ad::Index>(width) + static_cast<ad::Index>(fx);
  }

  Vec3 cell_center(std::size_t cell) const {
    const std::size_t ix = cell % width;
    const std::size_t iy = cell / width;
    return {x0 + (static_cast<double>(ix) + 0.5) * resolution, y0 + (static_cast<double>(iy) + 0.5) * resolution,
            0.0};
  }
};

struct PillarAssignment {
  std::vector<ad::Index> cell;                  // per point; -1 = out of grid
  std::vector<std::vector<std::size_t>> cell_points;  // per cell, point indices in order
  std::vector<std::size_t> in_grid;             // indices of in-grid points, ascending

  std::vector<ad::Index> in_grid_cells() const {
    std::vector<ad::Index> out;
    out.reserve(in_grid.size());
    for (std::size_t i : in_grid) out.push_back(cell[i]);
    return out;
  }
};

template <class P>
PillarAssignment pillarize(const PointCloud<P>& cloud, const GridSpec& grid) {
  grid.validate();
  PillarAssignment a;
  a.cell.resize(cloud.size());
  a.cell_points.resize(grid.num_cells());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const ad::Index c = grid.cell_of(cloud[i].position);
    a.cell[i] = c;
    if (c >= 0) {
      a.cell_points[static_cast<std::size_t>(c)].push_back(i);
      a.in_grid.push_back(i);
    }
  }
  return a;
}

inline constexpr std::size_t kPointFeatureWidth = 5;

inline void point_extras(const RadarPoint& p, double* out) {
  out[0] = p.arv;
  out[1] = 0.1 * p.rcs;
}
inline void point_extras(const LidarPoint& p, double* out) {
  out[0] = p.intensity;
  out[1] = 0.0;
}

/// Raw per-point inputs [dx, dy, z, extra0, extra1] for in-grid points, with
/// dx, dy measured from the cell center.
template <class P>
ad::Tensor point_features(const PointCloud<P>& cloud, const PillarAssignment& a, const GridSpec& grid) {
  std::vector<double> v(a.in_grid.size() * kPointFeatureWidth);
  for (std::size_t r = 0; r < a.in_grid.size(); ++r) {
    const auto& p = cloud[a.in_grid[r]];
    const Vec3 c = grid.cell_center(static_cast<std::size_t>(a.cell[a.in_grid[r]]));
    double* row = v.data() + r * kPointFeatureWidth;
    row[0] = p.position.x() - c.x();
    row[1] = p.position.y() - c.y();
    row[2] = p.position.z();
    point_extras(p, row + 3);
  }
  return ad::Tensor::from({a.in_grid.size(), kPointFeatureWidth}, std::move(v));
}

/// Dense H x W x C map with an occupancy mask; unoccupied cells are zero.
struct FeatureMap {
  GridSpec grid;
  ad::Tensor features;  // [H*W, C]
  std::vector<unsigned char> occupancy;

  std::size_t channels() const { return features.dim(1); }
};

struct PillarEncoder {
  ad::Tensor weight;  // [5, C]
  ad::Tensor bias;    // [C]
};

/// Shared linear + ReLU per point, then max over the points of each cell.
inline FeatureMap encode_pillars(const ad::Tensor& point_inputs, const PillarAssignment& a,
                                 const GridSpec& grid, const PillarEncoder& enc) {
  if (point_inputs.ndim() != 2 || point_inputs.dim(0) != a.in_grid.size() ||
      point_inputs.dim(1) != enc.weight.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "pillar inputs " + ad::shape_str(point_inputs.shape()) +
                                              " do not match assignment/encoder");
  }
  FeatureMap out;
  out.grid = grid;
  out.occupancy.assign(grid.num_cells(), 0);
  for (std::size_t c = 0; c < grid.num_cells(); ++c) out.occupancy[c] = a.cell_points[c].empty() ? 0 : 1;
  const ad::Tensor h = ad::relu(ad::add(ad::matmul(point_inputs, enc.weight), enc.bias));
  out.features = ad::segment_max_rows(h, a.in_grid_cells(), grid.num_cells());
  return out;
}

template <class P>
FeatureMap encode_pillars(const PointCloud<P>& cloud, const PillarAssignment& a, const GridSpec& grid,
                          const PillarEncoder& enc) {
  return encode_pillars(point_features(cloud, a, grid), a, grid, enc);
}

/// Cells holding at least one radar point with |arv| above the threshold.
inline std::vector<unsigned char> dynamic_radar_map(const RadarCloud& radar, const GridSpec& grid,
                                                    double arv_min = 0.1) {
  grid.validate();
  std::vector<unsigned char> dyn(grid.num_cells(), 0);
  for (const auto& p : radar.points) {
    const ad::Index c = grid.cell_of(p.position);
    if (c >= 0 && std::abs(p.arv) > arv_min) dyn[static_cast<std::size_t>(c)] = 1;
  }
  return dyn;
}

struct GaussianHeatmap {
  GridSpec grid;
  std::vector<double> distance_sq;  // m^2; infinite when no dynamic cell exists
  std::vector<double> values;
  double sigma_sq_inv = 10.0;

  ad::Tensor tensor() const { return ad::Tensor::from({values.size()}, values); }
};

inline double gaussian_weight(double distance_sq, double sigma_sq_inv) {
  return std::exp(-distance_sq * sigma_sq_inv);
}

namespace detail {

// Squared distance transform of one line (Felzenszwalb-Huttenlocher lower
// envelope of parabolas). Entries of f that are infinite are not sites.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v;
  std::vector<double> z;
  v.reserve(n);
  z.reserve(n + 1);
  for (std::size_t q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    while (!v.empty()) {
      const std::size_t p = v.back();
      const double s = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q - p));
      if (s <= z[z.size() - 2]) {
        v.pop_back();
        z.pop_back();
      } else {
        z.back() = s;
        z.push_back(std::numeric_limits<double>::infinity());
        v.push_back(q);
        break;
      }
    }
    if (v.empty()) {
      v.push_back(q);
      z.assign({-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()});
    }
  }
  d.assign(n, std::numeric_limits<double>::infinity());
  if (v.empty()) return;
  std::size_t k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace detail

/// Exact squared distance, in cells^2, from each cell to the nearest set
/// cell; infinite everywhere when no cell is set.
inline std::vector<double> squared_distance_transform(const std::vector<unsigned char>& sites, std::size_t width,
                                                      std::size_t height) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(width * height);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = sites[i] ? 0.0 : inf;
  std::vector<double> line, out;
  line.resize(height);
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) line[y] = grid[y * width + x];
    detail::edt_1d(line, out);
    for (std::size_t y = 0; y < height; ++y) grid[y * width + x] = out[y];
  }
  line.resize(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) line[x] = grid[y * width + x];
    detail::edt_1d(line, out);
    for (std::size_t x = 0; x < width; ++x) grid[y * width + x] = out[x];
  }
  return grid;
}

/// G = exp(-D^2 / sigma^2) with D the metric distance between cell centers
/// and the nearest dynamic cell center. With no dynamic cell, G is 1.
inline GaussianHeatmap gaussian_heatmap(const std::vector<unsigned char>& dyn, const GridSpec& grid,
                                        double sigma_sq_inv = 10.0) {
  grid.validate();
  if (dyn.size() != grid.num_cells()) throw Error(ErrorCode::GridMismatch, "dynamic map size differs from grid");
  if (!(sigma_sq_inv > 0)) throw Error(ErrorCode::ConfigInvalid, "sigma_sq_inv must be positive");
  GaussianHeatmap g;
  g.grid = grid;
  g.sigma_sq_inv = sigma_sq_inv;
  g.distance_sq = squared_distance_transform(dyn, grid.width, grid.height);
  g.values.resize(dyn.size());
  const double res_sq = grid.resolution * grid.resolution;
  for (std::size_t i = 0; i < dyn.size(); ++i) {
    if (std::isfinite(g.distance_sq[i])) {
      g.distance_sq[i] *= res_sq;
      g.values[i] = gaussian_weight(g.distance_sq[i], sigma_sq_inv);
    } else {
      g.values[i] = 1.0;
    }
  }
  return g;
}

}  // namespace raliflow
