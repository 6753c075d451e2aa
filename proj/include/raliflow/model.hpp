#pragma once

// The full joint radar/LiDAR flow network and its parameters.

#include <cmath>
#include <string>
#include <vector>

#include "raliflow/bevgrid.hpp"
#include "raliflow/dbcf.hpp"
#include "raliflow/flow_head.hpp"
#include "raliflow/optim.hpp"
#include "raliflow/rng.hpp"
#include "raliflow/unet.hpp"

namespace raliflow {

struct ModelConfig {
  std::size_t channels = 32;      // pillar / fused feature width C
  std::size_t embed = 64;         // U-Net output width C_e
  std::size_t gru_hidden = 64;
  std::size_t gru_iterations = 4;
  std::size_t unet_depth = 2;
  std::size_t unet_base = 16;     // first-level U-Net width, doubled per level
  double sigma_sq_inv = 10.0;
  FusionMode fusion = FusionMode::dbcf;
  std::uint64_t init_seed = 20240601;

  void validate(const GridSpec& grid) const {
    if (channels == 0 || embed == 0 || gru_hidden == 0 || unet_base == 0 || unet_depth == 0) {
      throw Error(ErrorCode::ConfigInvalid, "model widths and depth must be positive");
    }
    if (gru_iterations < 1) throw Error(ErrorCode::ConfigInvalid, "gru_iterations must be >= 1");
    if (!(sigma_sq_inv > 0)) throw Error(ErrorCode::ConfigInvalid, "sigma_sq_inv must be positive");
    const std::size_t f = std::size_t{1} << unet_depth;
    if (grid.width % f != 0 || grid.height % f != 0) {
      throw Error(ErrorCode::ConfigInvalid,
                  "grid " + std::to_string(grid.width) + "x" + std::to_string(grid.height) +
                      " not divisible by " + std::to_string(f));
    }
  }
};

/// Everything about one frame that does not depend on parameters.
struct EncodedFrame {
  PillarAssignment radar_assign;
  PillarAssignment lidar_assign;
  ad::Tensor radar_inputs;  // [Mr, 5]
  ad::Tensor lidar_inputs;  // [Ml, 5]
  GaussianHeatmap heatmap;
};

struct EncodedPair {
  EncodedFrame src;
  EncodedFrame tgt;
};

inline EncodedFrame encode_frame(const RadarCloud& radar, const LidarCloud& lidar, const GridSpec& grid,
                                 double sigma_sq_inv) {
  EncodedFrame f;
  f.radar_assign = pillarize(radar, grid);
  f.lidar_assign = pillarize(lidar, grid);
  f.radar_inputs = point_features(radar, f.radar_assign, grid);
  f.lidar_inputs = point_features(lidar, f.lidar_assign, grid);
  f.heatmap = gaussian_heatmap(dynamic_radar_map(radar, grid), grid, sigma_sq_inv);
  return f;
}

struct FlowPrediction {
  ad::Tensor radar;  // [Nr, 3], meters per frame interval
  ad::Tensor lidar;  // [Nl, 3]
};

class Model {
 public:
  Model(const ModelConfig& cfg, const GridSpec& grid) : cfg_(cfg), grid_(grid) {
    grid_.validate();
    cfg_.validate(grid_);
    SplitMix64 rng(cfg_.init_seed);
    const std::size_t c = cfg_.channels;

    enc_radar_ = {he_uniform("enc.radar.w", {kPointFeatureWidth, c}, kPointFeatureWidth, rng),
                  uniform("enc.radar.b", {c}, kPointFeatureWidth, rng)};
    enc_lidar_ = {he_uniform("enc.lidar.w", {kPointFeatureWidth, c}, kPointFeatureWidth, rng),
                  uniform("enc.lidar.b", {c}, kPointFeatureWidth, rng)};
    att_l2r_ = attention("att.l2r", rng);
    att_r2l_ = attention("att.r2l", rng);

    const UNetShape us{4 * c, cfg_.unet_base, cfg_.unet_depth, cfg_.embed};
    for (std::size_t i = 0; i < us.depth; ++i) {
      const std::size_t in = i == 0 ? us.in_channels : us.width(i - 1);
      unet_.enc.push_back(conv("unet.enc" + std::to_string(i), 3, in, us.width(i), rng));
      unet_.down.push_back(conv("unet.down" + std::to_string(i), 3, us.width(i), us.width(i), rng));
    }
    const std::size_t deepest = us.width(us.depth - 1);
    unet_.mid = conv("unet.mid", 3, deepest, deepest, rng);
    unet_.dec.resize(us.depth);
    for (std::size_t i = us.depth; i-- > 0;) {
      const std::size_t below = i + 1 == us.depth ? deepest : us.width(i + 1);
      unet_.dec[i] = conv("unet.dec" + std::to_string(i), 3, below + us.width(i), us.width(i), rng);
    }
    unet_.head = conv("unet.head", 1, us.width(0), cfg_.embed, rng);

    head_radar_ = head("head.radar", rng);
    head_lidar_ = head("head.lidar", rng);
  }

  // Tensors are shared handles; a copy would alias the same weights.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const GridSpec& grid() const { return grid_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  const AttentionParams& attention_lidar_to_radar() const { return att_l2r_; }
  const AttentionParams& attention_radar_to_lidar() const { return att_r2l_; }
  const UNetParams& unet() const { return unet_; }

  FusedMaps fuse(const EncodedFrame& f) const {
    const FeatureMap phi_r = encode_pillars(f.radar_inputs, f.radar_assign, grid_, enc_radar_);
    const FeatureMap phi_l = encode_pillars(f.lidar_inputs, f.lidar_assign, grid_, enc_lidar_);
    return dbcf_fuse(phi_r, phi_l, f.heatmap, att_l2r_, att_r2l_, cfg_.fusion);
  }

  FlowPrediction forward(const EncodedPair& pair) const {
    const FusedMaps s = fuse(pair.src);
    const FusedMaps t = fuse(pair.tgt);
    const std::size_t c = cfg_.channels;
    const ad::Tensor stacked =
        ad::concat({s.radar.features, s.lidar.features, t.radar.features, t.lidar.features}, 1);
    const ad::Tensor x = ad::reshape(stacked, {grid_.height, grid_.width, 4 * c});
    const ad::Tensor emb = ad::reshape(unet_forward(x, unet_), {grid_.num_cells(), cfg_.embed});
    return {gru_flow_head(emb, s.radar.features, t.radar.features, pair.src.radar_inputs, pair.src.radar_assign,
                          head_radar_, cfg_.gru_iterations),
            gru_flow_head(emb, s.lidar.features, t.lidar.features, pair.src.lidar_inputs, pair.src.lidar_assign,
                          head_lidar_, cfg_.gru_iterations)};
  }

 private:
  ad::Tensor uniform(const std::string& name, ad::Shape shape, std::size_t fan_in, SplitMix64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return params_.add(name, std::move(shape), std::move(v));
  }

  // Layers followed by ReLU: variance 2 / fan_in, so activations keep their
  // scale through the U-Net.
  ad::Tensor he_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in, SplitMix64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return params_.add(name, std::move(shape), std::move(v));
  }

  ad::Tensor zeros(const std::string& name, ad::Shape shape) {
    const std::size_t n = ad::shape_numel(shape);
    return params_.add(name, std::move(shape), std::vector<double>(n, 0.0));
  }

  AttentionParams attention(const std::string& prefix, SplitMix64& rng) {
    const std::size_t c = cfg_.channels;
    return {uniform(prefix + ".wq", {c, c}, c, rng), uniform(prefix + ".wk", {c, c}, c, rng),
            uniform(prefix + ".relpos", {9, c}, c, rng)};
  }

  ConvLayer conv(const std::string& prefix, std::size_t k, std::size_t in, std::size_t out, SplitMix64& rng) {
    const std::size_t fan_in = k * k * in;
    return {he_uniform(prefix + ".w", {k, k, in, out}, fan_in, rng), zeros(prefix + ".b", {out})};
  }

  FlowHeadParams head(const std::string& prefix, SplitMix64& rng) {
    const std::size_t d0 = cfg_.embed + 2 * cfg_.channels + 3;
    const std::size_t hid = cfg_.gru_hidden;
    const std::size_t gin = d0 + 3 + hid;
    FlowHeadParams p;
    p.w_init = uniform(prefix + ".init.w", {d0, hid}, d0, rng);
    p.b_init = uniform(prefix + ".init.b", {hid}, d0, rng);
    p.gru.w_z = uniform(prefix + ".gru.wz", {gin, hid}, gin, rng);
    p.gru.b_z = uniform(prefix + ".gru.bz", {hid}, gin, rng);
    p.gru.w_r = uniform(prefix + ".gru.wr", {gin, hid}, gin, rng);
    p.gru.b_r = uniform(prefix + ".gru.br", {hid}, gin, rng);
    p.gru.w_h = uniform(prefix + ".gru.wh", {gin, hid}, gin, rng);
    p.gru.b_h = uniform(prefix + ".gru.bh", {hid}, gin, rng);
    p.w_delta = zeros(prefix + ".delta.w", {hid, 3});
    p.b_delta = zeros(prefix + ".delta.b", {3});
    return p;
  }

  ModelConfig cfg_;
  GridSpec grid_;
  ad::ParameterSet params_;
  PillarEncoder enc_radar_;
  PillarEncoder enc_lidar_;
  AttentionParams att_l2r_;
  AttentionParams att_r2l_;
  UNetParams unet_;
  FlowHeadParams head_radar_;
  FlowHeadParams head_lidar_;
};

}  // namespace raliflow
