#pragma once

// End-to-end driver pieces shared by the CLI and the acceptance suite:
// synthetic dataset creation, per-pair preprocessing and labeling, training
// with checkpoints, evaluation, inference and the fusion ablation.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "raliflow/checkpoint.hpp"
#include "raliflow/config.hpp"
#include "raliflow/dataset.hpp"
#include "raliflow/metrics.hpp"

namespace raliflow {

/// Worker count: RALIFLOW_THREADS when set and positive, else the hardware
/// concurrency.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("RALIFLOW_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n). Results must be written by index so the
/// output does not depend on scheduling. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Dataset synthesis.

inline std::string pair_frame_id(std::size_t k, int which) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair%05zu_%d", k, which);
  return buf;
}

/// Pair k uses scene seed derive(scene.seed, k); the first train_pairs
/// pairs form the "train" split and the rest "test".
inline Dataset synthesize_dataset(const PipelineConfig& cfg, std::size_t threads = 1) {
  const std::size_t n = cfg.dataset.train_pairs + cfg.dataset.test_pairs;
  std::vector<SyntheticScene> scenes(n);
  parallel_for(n, threads, [&](std::size_t k) {
    SceneConfig sc = cfg.scene;
    sc.seed = SplitMix64::derive(cfg.scene.seed, k);
    scenes[k] = generate_scene(sc, cfg.label);
  });
  Dataset ds;
  ds.dt = cfg.scene.dt;
  ds.radar_extrinsic = cfg.scene.radar_extrinsic;
  for (std::size_t k = 0; k < n; ++k) {
    auto& s = scenes[k];
    FrameRecord a{pair_frame_id(k, 0), std::move(s.radar_src), std::move(s.lidar_src), s.boxes_src,
                  s.ego.t_src_to_tgt};
    FrameRecord b{pair_frame_id(k, 1), std::move(s.radar_tgt), std::move(s.lidar_tgt), s.boxes_tgt, std::nullopt};
    a.radar.frame_id = a.lidar.frame_id = a.id;
    b.radar.frame_id = b.lidar.frame_id = b.id;
    ds.pairs.push_back({a.id, b.id, k < cfg.dataset.train_pairs ? "train" : "test"});
    ds.frames.push_back(std::move(a));
    ds.frames.push_back(std::move(b));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing and labels.

struct PreprocessedFrame {
  RadarCloud radar;  // surviving points, LiDAR frame
  LidarCloud lidar;  // non-ground points
  std::vector<bool> radar_ground_keep;  // per raw radar row
  std::vector<bool> lidar_ground_keep;  // per raw LiDAR row
  DenoiseResult denoise;                // per ground-kept radar point
  std::vector<bool> radar_keep;         // per raw radar row
};

/// Radar projection, ground removal over the combined scan, then radar
/// denoising against the remaining LiDAR.
inline PreprocessedFrame preprocess_frame(const FrameRecord& f, const SE3Transform& radar_extrinsic,
                                          const PipelineConfig& cfg) {
  PreprocessedFrame out;
  const RadarCloud radar = project_radar_to_lidar(f.radar, radar_extrinsic);
  std::tie(out.radar_ground_keep, out.lidar_ground_keep) = remove_ground(radar, f.lidar, cfg.ground);
  const RadarCloud radar_ng = select(radar, out.radar_ground_keep);
  out.lidar = select(f.lidar, out.lidar_ground_keep);
  out.denoise = denoise_radar(radar_ng, out.lidar, cfg.denoise);
  out.radar = select(radar_ng, out.denoise.keep);
  out.radar_keep.assign(radar.size(), false);
  for (std::size_t i = 0, j = 0; i < radar.size(); ++i) {
    if (out.radar_ground_keep[i]) out.radar_keep[i] = out.denoise.keep[j++];
  }
  return out;
}

/// A labeled, encoded training/evaluation pair. Target clouds are moved into
/// the source frame before encoding, so predicted flow excludes ego motion.
struct PreparedPair {
  std::string src_id;
  std::string tgt_id;
  LabeledFrame labels;  // source-frame clouds and their labels
  EncodedPair encoded;
};

inline LabeledFrame label_pair(const Dataset& ds, const PairRecord& p, const PreprocessedFrame& src,
                               const PipelineConfig& cfg) {
  const FrameRecord& a = ds.frame(p.src);
  const FrameRecord& b = ds.frame(p.tgt);
  return label_frame(src.radar, src.lidar, a.boxes, b.boxes, EgoMotion{*a.ego, ds.dt}, cfg.label);
}

inline PreparedPair prepare_pair(const Dataset& ds, const PairRecord& p, const PipelineConfig& cfg) {
  const FrameRecord& a = ds.frame(p.src);
  const FrameRecord& b = ds.frame(p.tgt);
  const PreprocessedFrame src = preprocess_frame(a, ds.radar_extrinsic, cfg);
  const PreprocessedFrame tgt = preprocess_frame(b, ds.radar_extrinsic, cfg);
  const EgoMotion ego{*a.ego, ds.dt};
  PreparedPair out;
  out.src_id = p.src;
  out.tgt_id = p.tgt;
  out.labels = label_pair(ds, p, src, cfg);
  out.encoded.src = encode_frame(src.radar, src.lidar, cfg.grid, cfg.model.sigma_sq_inv);
  out.encoded.tgt = encode_frame(ego_compensate(tgt.radar, ego), ego_compensate(tgt.lidar, ego), cfg.grid,
                                 cfg.model.sigma_sq_inv);
  return out;
}

inline std::vector<PreparedPair> prepare_pairs(const Dataset& ds, const std::vector<PairRecord>& pairs,
                                               const PipelineConfig& cfg, std::size_t threads = 1) {
  std::vector<PreparedPair> out(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) { out[i] = prepare_pair(ds, pairs[i], cfg); });
  return out;
}

// ---------------------------------------------------------------------------
// Losses for one pair.

struct PairLoss {
  ad::Tensor l_li;
  ad::Tensor l_ra;
  ad::Tensor l_ins;
  ad::Tensor total;
};

inline PairLoss pair_loss(const FlowPrediction& pred, const PreparedPair& p, BucketSource source,
                          double dynamic_speed_min, bool detach_instance_target = false) {
  const LabeledFrame& lab = p.labels;
  const auto& ra = p.encoded.src.radar_assign;
  const auto& la = p.encoded.src.lidar_assign;
  const std::vector<std::size_t> r_in(ra.in_grid.begin(), ra.in_grid.end());
  const std::vector<std::size_t> l_in(la.in_grid.begin(), la.in_grid.end());
  const auto& r_gt = lab.radar_labels.gt_flows;
  const auto& l_gt = lab.lidar_labels.gt_flows;
  const bool by_pred = source == BucketSource::pred;
  const SpeedBuckets rb = speed_buckets(by_pred ? to_vec3(pred.radar) : r_gt, r_in, lab.dt);
  const SpeedBuckets lb = speed_buckets(by_pred ? to_vec3(pred.lidar) : l_gt, l_in, lab.dt);
  PairLoss out;
  out.l_li = lidar_flow_loss(pred.lidar, l_gt, lb);
  out.l_ra = masked_radar_flow_loss(pred.radar, r_gt, lab.radar_labels.mask, rb);
  out.l_ins = instance_consistency_loss({{&pred.radar, &r_gt, &lab.radar_labels.instance_id, &r_in},
                                         {&pred.lidar, &l_gt, &lab.lidar_labels.instance_id, &l_in}},
                                        lab.instances.size(), lab.dt, dynamic_speed_min,
                                        detach_instance_target);
  out.total = total_loss(out.l_li, out.l_ra, out.l_ins);
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct EpochLog {
  std::size_t epoch = 0;
  double l_li = 0.0;
  double l_ra = 0.0;
  double l_ins = 0.0;
  double l_total = 0.0;
};

inline nlohmann::ordered_json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"L_li", e.l_li}, {"L_ra", e.l_ra}, {"L_ins", e.l_ins}, {"L_total", e.l_total}};
}

/// Model plus optimizer state and the number of finished epochs.
class Trainer {
 public:
  explicit Trainer(const PipelineConfig& cfg) : cfg_(cfg), model_(cfg.model, cfg.grid) {}

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  std::size_t epochs_done() const { return epochs_done_; }

  /// Epoch numbers start at 1. Visit order is a Fisher-Yates shuffle seeded
  /// with derive(train.seed, epoch); gradients within a batch are summed in
  /// visit order before one Adam step.
  EpochLog run_epoch(const std::vector<PreparedPair>& data) {
    const std::size_t epoch = epochs_done_ + 1;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(SplitMix64::derive(cfg_.train.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const ad::AdamOptions adam{learning_rate(epoch)};
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg_.train.batch_size) {
      model_.params().zero_grad();
      const std::size_t end = std::min(order.size(), start + cfg_.train.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        const PreparedPair& p = data[order[k]];
        const PairLoss l = pair_loss(model_.forward(p.encoded), p, cfg_.train.bucket_source,
                                     cfg_.label.dynamic_speed_min, cfg_.train.detach_instance_target);
        if (!ad::all_finite(l.total)) throw Error(ErrorCode::NonFinite, "loss diverged on pair " + p.src_id);
        // L_ins only pulls an instance's points together; before the network
        // has any sense of direction it just collapses them toward zero.
        ad::backward(epoch > cfg_.train.instance_warmup_epochs ? l.total : ad::add(l.l_li, l.l_ra));
        log.l_li += l.l_li.item();
        log.l_ra += l.l_ra.item();
        log.l_ins += l.l_ins.item();
        log.l_total += l.total.item();
      }
      ad::adam_step(model_.params(), adam);
    }
    const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
    log.l_li /= n;
    log.l_ra /= n;
    log.l_ins /= n;
    log.l_total /= n;
    epochs_done_ = epoch;
    return log;
  }

  /// Cosine decay from train.lr at epoch 1 to train.lr_final at train.epochs.
  double learning_rate(std::size_t epoch) const {
    const auto& t = cfg_.train;
    if (t.epochs <= 1) return t.lr;
    const double x = static_cast<double>(std::min(epoch, t.epochs) - 1) / static_cast<double>(t.epochs - 1);
    return t.lr_final + 0.5 * (t.lr - t.lr_final) * (1.0 + std::cos(std::numbers::pi * x));
  }

  std::vector<ad::NamedTensor> checkpoint() const {
    auto t = ad::snapshot(model_.params());
    t.push_back({"train.epochs_done", {1}, {static_cast<double>(epochs_done_)}});
    return t;
  }

  void restore(const std::vector<ad::NamedTensor>& t) {
    ad::restore(model_.params(), t);
    epochs_done_ = 0;
    for (const auto& x : t)
      if (x.name == "train.epochs_done") epochs_done_ = static_cast<std::size_t>(x.data.at(0));
  }

 private:
  PipelineConfig cfg_;
  Model model_;
  std::size_t epochs_done_ = 0;
};

/// Trains to cfg.train.epochs, writing `checkpoint.bin` after every epoch and
/// one JSON line per epoch to `train_log.jsonl` (appended on resume) and to
/// `echo` when given. Resuming continues from the checkpoint's epoch count.
inline std::vector<EpochLog> train_to_dir(const PipelineConfig& cfg, const std::vector<PreparedPair>& train,
                                          const fs::path& out_dir, const std::optional<fs::path>& resume = {},
                                          std::ostream* echo = nullptr) {
  Trainer trainer(cfg);
  if (resume) {
    if (!fs::exists(*resume)) throw Error(ErrorCode::MissingFile, "no checkpoint at " + resume->string());
    trainer.restore(ad::read_checkpoint(resume->string()));
  }
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  std::vector<EpochLog> logs;
  while (trainer.epochs_done() < cfg.train.epochs) {
    logs.push_back(trainer.run_epoch(train));
    const std::string line = to_json(logs.back()).dump();
    log << line << '\n' << std::flush;
    if (echo) *echo << line << '\n' << std::flush;
    const fs::path tmp = out_dir / "checkpoint.bin.tmp";
    ad::write_checkpoint(tmp.string(), trainer.checkpoint());
    fs::rename(tmp, out_dir / "checkpoint.bin");
  }
  return logs;
}

/// Loads parameters (no optimizer state needed) into a fresh model.
inline Model load_model(const PipelineConfig& cfg, const fs::path& checkpoint) {
  Model m(cfg.model, cfg.grid);
  ad::restore(m.params(), ad::read_checkpoint(checkpoint.string()));
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation and inference.

struct PairPrediction {
  std::vector<Vec3> radar;
  std::vector<Vec3> lidar;
};

/// Null model = zero flow everywhere.
inline std::vector<PairPrediction> predict(const Model* model, const std::vector<PreparedPair>& data,
                                           std::size_t threads = 1) {
  std::vector<PairPrediction> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    if (!model) {
      out[i] = {std::vector<Vec3>(data[i].labels.radar.size(), Vec3::Zero()),
                std::vector<Vec3>(data[i].labels.lidar.size(), Vec3::Zero())};
      return;
    }
    const FlowPrediction f = model->forward(data[i].encoded);
    out[i] = {to_vec3(f.radar), to_vec3(f.lidar)};
  });
  return out;
}

inline MetricsReport evaluate(const std::vector<PairPrediction>& pred, const std::vector<PreparedPair>& data) {
  MetricsAccumulator radar, lidar;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LabeledFrame& lab = data[i].labels;
    radar.add(pred[i].radar, lab.radar_labels.gt_flows, lab.radar_labels.motion_class);
    lidar.add(pred[i].lidar, lab.lidar_labels.gt_flows, lab.lidar_labels.motion_class);
  }
  return {radar.result(), lidar.result()};
}

inline std::string flow_csv(const std::vector<Vec3>& positions, const std::vector<Vec3>& flows) {
  std::string s = "x,y,z,fx,fy,fz\n";
  for (std::size_t i = 0; i < flows.size(); ++i) {
    s += io::fmt(positions[i].x()) + ',' + io::fmt(positions[i].y()) + ',' + io::fmt(positions[i].z()) + ',' +
         io::fmt(flows[i].x()) + ',' + io::fmt(flows[i].y()) + ',' + io::fmt(flows[i].z()) + '\n';
  }
  return s;
}

template <class P>
std::vector<Vec3> positions_of(const PointCloud<P>& c) {
  std::vector<Vec3> v;
  v.reserve(c.size());
  for (const auto& p : c.points) v.push_back(p.position);
  return v;
}

/// G as an H x W CSV, first row = lowest y.
inline std::string heatmap_csv(const GaussianHeatmap& g) {
  std::string s;
  for (std::size_t y = 0; y < g.grid.height; ++y) {
    for (std::size_t x = 0; x < g.grid.width; ++x) {
      if (x) s += ',';
      s += io::fmt(g.values[y * g.grid.width + x]);
    }
    s += '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------
// Ablation over fusion modes.

struct AblationEntry {
  FusionMode fusion;
  std::vector<EpochLog> logs;
  MetricsReport metrics;
};

/// Trains and evaluates one model per fusion mode from identical
/// initial conditions; `on_epoch` sees every log line.
inline std::vector<AblationEntry> run_ablation(
    const PipelineConfig& cfg, const std::vector<PreparedPair>& train, const std::vector<PreparedPair>& test,
    const std::function<void(FusionMode, const EpochLog&)>& on_epoch = {}) {
  std::vector<AblationEntry> out;
  for (FusionMode mode : {FusionMode::concat, FusionMode::dbcf_no_g, FusionMode::dbcf}) {
    PipelineConfig c = cfg;
    c.model.fusion = mode;
    Trainer t(c);
    AblationEntry e{mode, {}, {}};
    for (std::size_t k = 0; k < c.train.epochs; ++k) {
      e.logs.push_back(t.run_epoch(train));
      if (on_epoch) on_epoch(mode, e.logs.back());
    }
    e.metrics = evaluate(predict(&t.model(), test), test);
    out.push_back(std::move(e));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const std::vector<AblationEntry>& entries) {
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    runs.push_back({{"fusion", to_string(e.fusion)},
                    {"final_L_total", e.logs.empty() ? 0.0 : e.logs.back().l_total},
                    {"metrics", to_json(e.metrics)}});
  }
  // Informational: modes sorted by LiDAR then radar 3D EPE.
  std::vector<std::size_t> idx(entries.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto key = [&](std::size_t i) { return entries[i].metrics.lidar.epe_3d + entries[i].metrics.radar.epe_3d; };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  nlohmann::ordered_json order = nlohmann::ordered_json::array();
  for (std::size_t i : idx) order.push_back(to_string(entries[i].fusion));
  return {{"runs", runs}, {"ordering_by_epe_3d", order}};
}

}  // namespace raliflow
