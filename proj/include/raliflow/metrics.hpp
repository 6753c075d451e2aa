#pragma once

// End-point error: overall mean and the unweighted FD/BS/FS average.

#include <array>
#include <optional>
#include <vector>

#include <json.hpp>

#include "raliflow/geom.hpp"

namespace raliflow {

inline double epe_3d(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::LengthMismatch, "pred/gt lengths differ");
  if (pred.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - gt[i]).norm();
  return s / static_cast<double>(pred.size());
}

/// Mean of the classes that have points; nullopt when none do.
inline std::optional<double> combine_3way(std::optional<double> fd, std::optional<double> bs,
                                          std::optional<double> fs) {
  double s = 0.0;
  int n = 0;
  for (const auto& v : {fd, bs, fs}) {
    if (v) {
      s += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

struct ModalityMetrics {
  double epe_3d = 0.0;
  std::optional<double> epe_3way;
  std::optional<double> epe_fd;
  std::optional<double> epe_bs;
  std::optional<double> epe_fs;
  std::size_t count_fd = 0;
  std::size_t count_bs = 0;
  std::size_t count_fs = 0;

  bool all_classes_present() const { return count_fd > 0 && count_bs > 0 && count_fs > 0; }
};

/// Accumulates per-point errors over many frames.
class MetricsAccumulator {
 public:
  void add(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, const std::vector<MotionClass>& cls) {
    if (pred.size() != gt.size() || cls.size() != gt.size()) {
      throw Error(ErrorCode::LengthMismatch, "pred/gt/class lengths differ");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double e = (pred[i] - gt[i]).norm();
      total_ += e;
      ++count_;
      const auto k = static_cast<std::size_t>(cls[i]);
      sums_[k] += e;
      ++counts_[k];
    }
  }

  ModalityMetrics result() const {
    ModalityMetrics m;
    m.epe_3d = count_ ? total_ / static_cast<double>(count_) : 0.0;
    auto mean = [&](MotionClass c) -> std::optional<double> {
      const auto k = static_cast<std::size_t>(c);
      if (!counts_[k]) return std::nullopt;
      return sums_[k] / static_cast<double>(counts_[k]);
    };
    m.epe_fd = mean(MotionClass::FD);
    m.epe_bs = mean(MotionClass::BS);
    m.epe_fs = mean(MotionClass::FS);
    m.count_fd = counts_[static_cast<std::size_t>(MotionClass::FD)];
    m.count_bs = counts_[static_cast<std::size_t>(MotionClass::BS)];
    m.count_fs = counts_[static_cast<std::size_t>(MotionClass::FS)];
    m.epe_3way = combine_3way(m.epe_fd, m.epe_bs, m.epe_fs);
    return m;
  }

 private:
  double total_ = 0.0;
  std::size_t count_ = 0;
  std::array<double, 3> sums_{};
  std::array<std::size_t, 3> counts_{};
};

inline ModalityMetrics epe_3way(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                                const std::vector<MotionClass>& cls) {
  MetricsAccumulator acc;
  acc.add(pred, gt, cls);
  return acc.result();
}

struct MetricsReport {
  ModalityMetrics radar;
  ModalityMetrics lidar;
};

inline nlohmann::ordered_json to_json(const ModalityMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["epe_3d"] = m.epe_3d;
  j["epe_3way"] = opt(m.epe_3way);
  j["epe_fd"] = opt(m.epe_fd);
  j["epe_bs"] = opt(m.epe_bs);
  j["epe_fs"] = opt(m.epe_fs);
  j["counts"] = {{"fd", m.count_fd}, {"bs", m.count_bs}, {"fs", m.count_fs}};
  j["all_classes_present"] = m.all_classes_present();
  return j;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  return {{"radar", to_json(r.radar)}, {"lidar", to_json(r.lidar)}};
}

}  // namespace raliflow
