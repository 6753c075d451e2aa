#pragma once

// On-disk dataset: manifest.json plus per-frame CSV/JSON files.
//
//   manifest.json   {"dt", "radar_extrinsic": [16], "frames": [{id, radar,
//                    lidar, boxes, ego}], "pairs": [{src, tgt, split}]}
//   radar CSV       x,y,z,arv,rrv,rcs        (radar sensor frame)
//   lidar CSV       x,y,z,intensity
//   boxes JSON      [{track_id, class, cx, cy, cz, l, w, h, yaw}]
//   ego JSON        4x4 row-major transform from this frame to the next
//   labels CSV      fx,fy,fz,mask,class,instance_id   (-1 = none)
//
// Doubles are written with 17 significant digits so a write/read round trip
// is exact.

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "raliflow/geom.hpp"

namespace raliflow {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct FrameRecord {
  std::string id;
  RadarCloud radar;
  LidarCloud lidar;
  std::vector<TrackedBox> boxes;
  std::optional<SE3Transform> ego;  // to the pair partner, on source frames
};

struct PairRecord {
  std::string src;
  std::string tgt;
  std::string split = "train";
};

struct Dataset {
  double dt = 0.1;
  SE3Transform radar_extrinsic = SE3Transform::identity();
  std::vector<FrameRecord> frames;
  std::vector<PairRecord> pairs;

  const FrameRecord& frame(const std::string& id) const {
    for (const auto& f : frames)
      if (f.id == id) return f;
    throw Error(ErrorCode::SchemaViolation, "no frame '" + id + "' in dataset");
  }

  std::vector<PairRecord> split(const std::string& name) const {
    std::vector<PairRecord> out;
    for (const auto& p : pairs)
      if (name == "all" || p.split == name) out.push_back(p);
    return out;
  }
};

namespace io {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out << text;
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Parses a CSV with the exact header `header`; every row must have the
/// same number of numeric fields.
inline std::vector<std::vector<double>> read_csv(const fs::path& path, const std::string& header) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error(ErrorCode::SchemaViolation, path.string() + ": expected header '" + header + "'");
  }
  const std::size_t cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.c_str();
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) break;
      row.push_back(v);
      p = end;
      if (*p != ',') break;
      ++p;
    }
    if (row.size() != cols || *p != '\0') {
      throw Error(ErrorCode::SchemaViolation, path.string() + ":" + std::to_string(lineno) + ": bad row");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string se3_to_text(const SE3Transform& t) {
  json j = json::array();
  for (double v : t.to_matrix()) j.push_back(v);
  return j.dump() + "\n";
}

inline SE3Transform se3_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 16) throw Error(ErrorCode::SchemaViolation, where + ": need 16 numbers");
  std::array<double, 16> m{};
  for (std::size_t i = 0; i < 16; ++i) m[i] = j[i].get<double>();
  const SE3Transform t = SE3Transform::from_matrix(m);
  if (!t.is_valid(1e-6)) throw Error(ErrorCode::SchemaViolation, where + ": not a rigid transform");
  return t;
}

}  // namespace io

inline std::string radar_csv(const RadarCloud& c) {
  std::string s = "x,y,z,arv,rrv,rcs\n";
  for (const auto& p : c.points) {
    s += io::fmt(p.position.x()) + ',' + io::fmt(p.position.y()) + ',' + io::fmt(p.position.z()) + ',' +
         io::fmt(p.arv) + ',' + io::fmt(p.rrv) + ',' + io::fmt(p.rcs) + '\n';
  }
  return s;
}

inline std::string lidar_csv(const LidarCloud& c) {
  std::string s = "x,y,z,intensity\n";
  for (const auto& p : c.points) {
    s += io::fmt(p.position.x()) + ',' + io::fmt(p.position.y()) + ',' + io::fmt(p.position.z()) + ',' +
         io::fmt(p.intensity) + '\n';
  }
  return s;
}

inline RadarCloud read_radar_csv(const fs::path& path, const std::string& frame_id) {
  RadarCloud c;
  c.frame_id = frame_id;
  for (const auto& r : io::read_csv(path, "x,y,z,arv,rrv,rcs")) c.points.push_back({{r[0], r[1], r[2]}, r[3], r[4], r[5]});
  return c;
}

inline LidarCloud read_lidar_csv(const fs::path& path, const std::string& frame_id) {
  LidarCloud c;
  c.frame_id = frame_id;
  for (const auto& r : io::read_csv(path, "x,y,z,intensity")) c.points.push_back({{r[0], r[1], r[2]}, r[3]});
  return c;
}

inline json boxes_json(const std::vector<TrackedBox>& boxes) {
  json j = json::array();
  for (const auto& b : boxes) {
    j.push_back({{"track_id", b.track_id},
                 {"class", b.class_label},
                 {"cx", b.center.x()},
                 {"cy", b.center.y()},
                 {"cz", b.center.z()},
                 {"l", b.dims.length},
                 {"w", b.dims.width},
                 {"h", b.dims.height},
                 {"yaw", b.yaw}});
  }
  return j;
}

inline std::vector<TrackedBox> boxes_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw Error(ErrorCode::SchemaViolation, where + ": boxes must be an array");
  std::vector<TrackedBox> out;
  try {
    for (const auto& e : j) {
      TrackedBox b;
      b.track_id = e.at("track_id").get<int>();
      b.class_label = e.at("class").get<std::string>();
      b.center = Vec3(e.at("cx").get<double>(), e.at("cy").get<double>(), e.at("cz").get<double>());
      b.dims = {e.at("l").get<double>(), e.at("w").get<double>(), e.at("h").get<double>()};
      b.yaw = e.at("yaw").get<double>();
      if (!(b.dims.length > 0 && b.dims.width > 0 && b.dims.height > 0)) {
        throw Error(ErrorCode::SchemaViolation, where + ": box dimensions must be positive");
      }
      out.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, where + ": " + e.what());
  }
  return out;
}

inline std::string labels_csv(const FlowField& f) {
  std::string s = "fx,fy,fz,mask,class,instance_id\n";
  for (std::size_t i = 0; i < f.size(); ++i) {
    s += io::fmt(f.gt_flows[i].x()) + ',' + io::fmt(f.gt_flows[i].y()) + ',' + io::fmt(f.gt_flows[i].z()) + ',' +
         std::to_string(int{f.mask[i]}) + ',' + std::to_string(static_cast<int>(f.motion_class[i])) + ',' +
         std::to_string(f.instance_id[i].value_or(-1)) + '\n';
  }
  return s;
}

/// Class column: 0 = FD, 1 = BS, 2 = FS.
inline FlowField read_labels_csv(const fs::path& path) {
  const auto rows = io::read_csv(path, "fx,fy,fz,mask,class,instance_id");
  FlowField f = FlowField::zeros(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if ((r[3] != 0 && r[3] != 1) || (r[4] != 0 && r[4] != 1 && r[4] != 2) || r[5] < -1) {
      throw Error(ErrorCode::SchemaViolation, path.string() + ": bad label row " + std::to_string(i + 2));
    }
    f.gt_flows[i] = Vec3(r[0], r[1], r[2]);
    f.mask[i] = static_cast<unsigned char>(r[3]);
    f.motion_class[i] = static_cast<MotionClass>(static_cast<int>(r[4]));
    if (r[5] >= 0) f.instance_id[i] = static_cast<int>(r[5]);
  }
  return f;
}

inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  json frames = json::array();
  for (const auto& f : ds.frames) {
    const std::string radar = "radar/" + f.id + ".csv", lidar = "lidar/" + f.id + ".csv",
                      boxes = "boxes/" + f.id + ".json";
    io::write_text(dir / radar, radar_csv(f.radar));
    io::write_text(dir / lidar, lidar_csv(f.lidar));
    io::write_json(dir / boxes, boxes_json(f.boxes));
    json entry{{"id", f.id}, {"radar", radar}, {"lidar", lidar}, {"boxes", boxes}, {"ego", nullptr}};
    if (f.ego) {
      const std::string ego = "ego/" + f.id + ".json";
      io::write_text(dir / ego, io::se3_to_text(*f.ego));
      entry["ego"] = ego;
    }
    frames.push_back(std::move(entry));
  }
  json pairs = json::array();
  for (const auto& p : ds.pairs) pairs.push_back({{"src", p.src}, {"tgt", p.tgt}, {"split", p.split}});
  json ext = json::array();
  for (double v : ds.radar_extrinsic.to_matrix()) ext.push_back(v);
  io::write_json(dir / "manifest.json",
                 {{"dt", ds.dt}, {"radar_extrinsic", ext}, {"frames", frames}, {"pairs", pairs}});
}

inline Dataset read_dataset(const fs::path& dir) {
  const json m = io::read_json(dir / "manifest.json");
  Dataset ds;
  try {
    ds.dt = m.at("dt").get<double>();
    if (!(ds.dt > 0)) throw Error(ErrorCode::SchemaViolation, "manifest dt must be positive");
    if (m.contains("radar_extrinsic")) ds.radar_extrinsic = io::se3_from_json(m["radar_extrinsic"], "radar_extrinsic");
    for (const auto& e : m.at("frames")) {
      FrameRecord f;
      f.id = e.at("id").get<std::string>();
      f.radar = read_radar_csv(dir / e.at("radar").get<std::string>(), f.id);
      f.lidar = read_lidar_csv(dir / e.at("lidar").get<std::string>(), f.id);
      f.boxes = boxes_from_json(io::read_json(dir / e.at("boxes").get<std::string>()), f.id + " boxes");
      if (e.contains("ego") && !e["ego"].is_null()) {
        f.ego = io::se3_from_json(io::read_json(dir / e["ego"].get<std::string>()), f.id + " ego");
      }
      ds.frames.push_back(std::move(f));
    }
    for (const auto& e : m.at("pairs")) {
      PairRecord p{e.at("src").get<std::string>(), e.at("tgt").get<std::string>(), e.value("split", "train")};
      if (!ds.frame(p.src).ego) throw Error(ErrorCode::SchemaViolation, "pair source '" + p.src + "' has no ego");
      ds.frame(p.tgt);
      ds.pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, "manifest.json: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace raliflow
