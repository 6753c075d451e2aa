#pragma once

// PipelineConfig: every tunable of the pipeline in one JSON document. Keys
// absent from a file keep their defaults; unknown keys are rejected.

#include <cmath>
#include <set>
#include <string>

#include <json.hpp>

#include "raliflow/bevgrid.hpp"
#include "raliflow/labelgen.hpp"
#include "raliflow/losses.hpp"
#include "raliflow/model.hpp"
#include "raliflow/preprocess.hpp"
#include "raliflow/synthgen.hpp"

namespace raliflow {

struct DatasetConfig {
  std::size_t train_pairs = 200;
  std::size_t test_pairs = 20;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;  // pairs per Adam step; gradients are summed
  double lr = 1e-3;            // first-epoch learning rate
  double lr_final = 1e-4;      // cosine decay reaches this in the last epoch
  std::uint64_t seed = 7;      // shuffling
  BucketSource bucket_source = BucketSource::pred;
  // Stop the gradient through the instance loss's largest-flow target. Off
  // by default: with it on, every member is pulled toward one point's
  // prediction and training drifts.
  bool detach_instance_target = false;
  std::size_t instance_warmup_epochs = 3;  // epochs trained on L_li + L_ra only
};

struct PipelineConfig {
  GridSpec grid;
  GroundParams ground;
  DenoiseParams denoise;
  LabelParams label;
  ModelConfig model;
  SceneConfig scene;
  DatasetConfig dataset;
  TrainConfig train;

  void validate() const;
};

namespace config_detail {

using json = nlohmann::ordered_json;

/// Reads fields from a JSON object, remembering which keys were consumed.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw Error(ErrorCode::ConfigInvalid, section_ + " must be an object");
  }

  template <class T>
  void operator()(const char* key, T& v) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      read(j_.at(key), v);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigInvalid, section_ + "." + key + ": " + e.what());
    }
  }

  void mark(const char* key) { seen_.insert(key); }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw Error(ErrorCode::ConfigInvalid, "unknown key " + section_ + "." + k);
  }

 private:
  template <class T>
  static void read(const json& j, T& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw Error(ErrorCode::ConfigInvalid, "expected true or false");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!j.is_number_unsigned()) throw Error(ErrorCode::ConfigInvalid, "expected a non-negative integer");
    }
    if constexpr (std::is_same_v<T, int>) {
      if (!j.is_number_integer()) throw Error(ErrorCode::ConfigInvalid, "expected an integer");
    }
    v = j.get<T>();
  }
  static void read(const json& j, FusionMode& v) { v = fusion_mode_from_string(j.get<std::string>()); }
  static void read(const json& j, BucketSource& v) { v = bucket_source_from_string(j.get<std::string>()); }
  static void read(const json& j, SE3Transform& v) {
    if (!j.is_array() || j.size() != 16) throw Error(ErrorCode::ConfigInvalid, "expected 16 numbers");
    std::array<double, 16> m{};
    for (std::size_t i = 0; i < 16; ++i) m[i] = j[i].get<double>();
    v = SE3Transform::from_matrix(m);
  }

  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) {}

  template <class T>
  void operator()(const char* key, const T& v) {
    if constexpr (std::is_same_v<T, FusionMode> || std::is_same_v<T, BucketSource>) {
      j_[key] = to_string(v);
    } else if constexpr (std::is_same_v<T, SE3Transform>) {
      j_[key] = v.to_matrix();
    } else {
      j_[key] = v;
    }
  }

 private:
  json& j_;
};

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, GridSpec> {
  v("x0", g.x0);
  v("y0", g.y0);
  v("resolution", g.resolution);
  v("width", g.width);
  v("height", g.height);
}

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, GroundParams> {
  v("num_segments", g.num_segments);
  v("num_bins", g.num_bins);
  v("max_slope", g.max_slope);
  v("ground_z_tolerance", g.ground_z_tolerance);
  v("seed_z_max", g.seed_z_max);
}

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, DenoiseParams> {
  v("dynamic_arv_min", g.dynamic_arv_min);
  v("theta_thre", g.theta_thre);
  v("bev_grid", g.bev_grid);
}

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, LabelParams> {
  v("gamma_thre", g.gamma_thre);
  v("dynamic_arv_min", g.dynamic_arv_min);
  v("class_dist_thresholds", g.class_dist_thresholds);
  v("dynamic_speed_min", g.dynamic_speed_min);
}

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, ModelConfig> {
  v("channels", g.channels);
  v("embed", g.embed);
  v("gru_hidden", g.gru_hidden);
  v("gru_iterations", g.gru_iterations);
  v("unet_depth", g.unet_depth);
  v("unet_base", g.unet_base);
  v("sigma_sq_inv", g.sigma_sq_inv);
  v("fusion", g.fusion);
  v("init_seed", g.init_seed);
}

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, SceneConfig> {
  v("seed", g.seed);
  v("extent", g.extent);
  v("n_boxes", g.n_boxes);
  v("box_speed_min", g.box_speed_min);
  v("box_speed_max", g.box_speed_max);
  v("parked_fraction", g.parked_fraction);
  v("max_yaw_rate", g.max_yaw_rate);
  v("lidar_density", g.lidar_density);
  v("ground_density", g.ground_density);
  v("lidar_noise", g.lidar_noise);
  v("radar_per_object_min", g.radar_per_object_min);
  v("radar_per_object_max", g.radar_per_object_max);
  v("radar_clutter", g.radar_clutter);
  v("radar_isolated", g.radar_isolated);
  v("radar_jitter", g.radar_jitter);
  v("outside_fraction", g.outside_fraction);
  v("outside_offset_max", g.outside_offset_max);
  v("arv_noise", g.arv_noise);
  v("outlier_count", g.outlier_count);
  v("outlier_arv", g.outlier_arv);
  v("ego_speed_min", g.ego_speed_min);
  v("ego_speed_max", g.ego_speed_max);
  v("max_ego_yaw_rate", g.max_ego_yaw_rate);
  v("dt", g.dt);
  v("ground_z", g.ground_z);
  v("wall_height", g.wall_height);
  v("radar_extrinsic", g.radar_extrinsic);
}

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, DatasetConfig> {
  v("train_pairs", g.train_pairs);
  v("test_pairs", g.test_pairs);
}

template <class V, class G>
void fields(V& v, G& g) requires std::is_same_v<std::remove_const_t<G>, TrainConfig> {
  v("epochs", g.epochs);
  v("batch_size", g.batch_size);
  v("lr", g.lr);
  v("lr_final", g.lr_final);
  v("seed", g.seed);
  v("bucket_source", g.bucket_source);
  v("detach_instance_target", g.detach_instance_target);
  v("instance_warmup_epochs", g.instance_warmup_epochs);
}

template <class V, class C>
void sections(V& visit, C& c) {
  visit("grid", c.grid);
  visit("ground", c.ground);
  visit("denoise", c.denoise);
  visit("label", c.label);
  visit("model", c.model);
  visit("scene", c.scene);
  visit("dataset", c.dataset);
  visit("train", c.train);
}

}  // namespace config_detail

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  using namespace config_detail;
  json out = json::object();
  auto visit = [&](const char* name, const auto& section) {
    json j = json::object();
    Writer w(j);
    fields(w, section);
    out[name] = std::move(j);
  };
  sections(visit, c);
  return out;
}

/// Defaults overridden by whatever `j` specifies; validated.
inline PipelineConfig config_from_json(const nlohmann::ordered_json& j) {
  using namespace config_detail;
  PipelineConfig c;
  Reader top(j, "config");
  auto visit = [&](const char* name, auto& section) {
    json empty = json::object();
    top.mark(name);
    const json& sj = j.contains(name) ? j.at(name) : empty;
    Reader r(sj, name);
    fields(r, section);
    r.finish();
  };
  sections(visit, c);
  top.finish();
  c.validate();
  return c;
}

inline void PipelineConfig::validate() const {
  grid.validate();
  ground.validate();
  denoise.validate();
  label.validate();
  model.validate(grid);
  scene.validate();
  if (train.epochs == 0 || train.batch_size == 0 || !(train.lr > 0) || !(train.lr_final > 0)) {
    throw Error(ErrorCode::ConfigInvalid,
                "train.epochs, train.batch_size, train.lr and train.lr_final must be positive");
  }
  if (dataset.train_pairs + dataset.test_pairs == 0) {
    throw Error(ErrorCode::ConfigInvalid, "dataset needs at least one pair");
  }
  const double cells = scene.extent / grid.resolution;
  if (std::abs(cells - std::round(cells)) > 1e-9 * std::max(1.0, cells)) {
    throw Error(ErrorCode::ConfigInvalid, "scene.extent must be a multiple of grid.resolution");
  }
}

}  // namespace raliflow
