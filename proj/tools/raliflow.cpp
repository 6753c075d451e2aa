// raliflow: command-line driver for the synthetic radar/LiDAR scene flow
// pipeline. Errors go to stderr as one JSON object and exit with status 2.

#include <iostream>

#include <CLI11.hpp>

#include "raliflow/pipeline.hpp"

using namespace raliflow;
using json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
};

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : config_from_json(io::read_json(c.config_path));
  if (c.seed) {
    cfg.scene.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  cfg.validate();
  return cfg;
}

std::vector<PairRecord> pairs_of(const Dataset& ds, const std::string& split) {
  auto pairs = ds.split(split);
  if (pairs.empty()) throw Error(ErrorCode::SchemaViolation, "split '" + split + "' has no pairs");
  return pairs;
}

std::string mask_csv(const std::string& header, const std::vector<std::vector<bool>>& cols) {
  std::string s = header + "\n";
  for (std::size_t i = 0; i < (cols.empty() ? 0 : cols[0].size()); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (k) s += ',';
      s += cols[k][i] ? '1' : '0';
    }
    s += '\n';
  }
  return s;
}

void run_synth(const PipelineConfig& cfg, const fs::path& out) {
  write_dataset(out, synthesize_dataset(cfg, thread_count()));
}

void run_preprocess(const PipelineConfig& cfg, const fs::path& data, const fs::path& out) {
  const Dataset ds = read_dataset(data);
  std::vector<PreprocessedFrame> frames(ds.frames.size());
  parallel_for(ds.frames.size(), thread_count(),
               [&](std::size_t i) { frames[i] = preprocess_frame(ds.frames[i], ds.radar_extrinsic, cfg); });
  json summary = json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& id = ds.frames[i].id;
    const auto& p = frames[i];
    // Per raw radar row; denoise stages only exist for ground-kept rows.
    std::vector<bool> hard(p.radar_ground_keep.size(), false), soft(hard);
    for (std::size_t r = 0, j = 0; r < hard.size(); ++r) {
      if (!p.radar_ground_keep[r]) continue;
      hard[r] = p.denoise.keep_hard[j];
      soft[r] = p.denoise.keep_soft[j];
      ++j;
    }
    io::write_text(out / (id + ".radar_mask.csv"),
                   mask_csv("ground_keep,hard_keep,soft_keep,keep", {p.radar_ground_keep, hard, soft, p.radar_keep}));
    io::write_text(out / (id + ".lidar_mask.csv"), mask_csv("ground_keep", {p.lidar_ground_keep}));
    io::write_text(out / (id + ".radar.csv"), radar_csv(p.radar));
    io::write_text(out / (id + ".lidar.csv"), lidar_csv(p.lidar));
    summary.push_back({{"frame", id},
                       {"radar_in", p.radar_keep.size()},
                       {"radar_kept", p.radar.size()},
                       {"lidar_in", p.lidar_ground_keep.size()},
                       {"lidar_kept", p.lidar.size()},
                       {"mu", p.denoise.mu ? json(*p.denoise.mu) : json()}});
  }
  io::write_json(out / "preprocess.json", summary);
}

void run_labelgen(const PipelineConfig& cfg, const fs::path& data, const fs::path& out) {
  const Dataset ds = read_dataset(data);
  std::vector<LabeledFrame> labels(ds.pairs.size());
  parallel_for(ds.pairs.size(), thread_count(), [&](std::size_t i) {
    const auto& p = ds.pairs[i];
    labels[i] = label_pair(ds, p, preprocess_frame(ds.frame(p.src), ds.radar_extrinsic, cfg), cfg);
  });
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& id = ds.pairs[i].src;
    const auto& l = labels[i];
    io::write_text(out / (id + ".radar.csv"), radar_csv(l.radar));
    io::write_text(out / (id + ".radar_labels.csv"), labels_csv(l.radar_labels));
    io::write_text(out / (id + ".lidar.csv"), lidar_csv(l.lidar));
    io::write_text(out / (id + ".lidar_labels.csv"), labels_csv(l.lidar_labels));
  }
}

void run_train(const PipelineConfig& cfg, const fs::path& data, const fs::path& out,
               const std::optional<fs::path>& resume) {
  const Dataset ds = read_dataset(data);
  const auto train = prepare_pairs(ds, pairs_of(ds, "train"), cfg, thread_count());
  io::write_json(out / "config.json", to_json(cfg));
  train_to_dir(cfg, train, out, resume, &std::cout);
}

void run_eval(const PipelineConfig& cfg, const fs::path& data, const std::optional<fs::path>& checkpoint,
              const std::string& split, const fs::path& out) {
  const Dataset ds = read_dataset(data);
  const auto test = prepare_pairs(ds, pairs_of(ds, split), cfg, thread_count());
  const Model model = checkpoint ? load_model(cfg, *checkpoint) : Model(cfg.model, cfg.grid);
  const json report = {{"split", split},
                       {"pairs", test.size()},
                       {"model", to_json(evaluate(predict(&model, test, thread_count()), test))},
                       {"zero_flow", to_json(evaluate(predict(nullptr, test), test))}};
  io::write_json(out, report);
  std::cout << report.dump(2) << '\n';
}

void run_infer(const PipelineConfig& cfg, const fs::path& data, const std::optional<fs::path>& checkpoint,
               const std::string& split, const fs::path& out) {
  const Dataset ds = read_dataset(data);
  const auto pairs = prepare_pairs(ds, pairs_of(ds, split), cfg, thread_count());
  const Model model = checkpoint ? load_model(cfg, *checkpoint) : Model(cfg.model, cfg.grid);
  const auto pred = predict(&model, pairs, thread_count());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& l = pairs[i].labels;
    io::write_text(out / (pairs[i].src_id + ".radar_flow.csv"), flow_csv(positions_of(l.radar), pred[i].radar));
    io::write_text(out / (pairs[i].src_id + ".lidar_flow.csv"), flow_csv(positions_of(l.lidar), pred[i].lidar));
  }
}

void run_heatmap(const PipelineConfig& cfg, const fs::path& data, const std::string& frame, const fs::path& out) {
  const Dataset ds = read_dataset(data);
  const PreprocessedFrame p = preprocess_frame(ds.frame(frame), ds.radar_extrinsic, cfg);
  io::write_text(out, heatmap_csv(gaussian_heatmap(dynamic_radar_map(p.radar, cfg.grid), cfg.grid,
                                                   cfg.model.sigma_sq_inv)));
}

void run_ablation(const PipelineConfig& cfg, const fs::path& data, const fs::path& out) {
  const Dataset ds = read_dataset(data);
  const auto train = prepare_pairs(ds, pairs_of(ds, "train"), cfg, thread_count());
  const auto test = prepare_pairs(ds, pairs_of(ds, "test"), cfg, thread_count());
  const auto entries = run_ablation(cfg, train, test, [](FusionMode m, const EpochLog& e) {
    json line = to_json(e);
    line["fusion"] = to_string(m);
    std::cout << line.dump() << '\n' << std::flush;
  });
  json report = to_json(entries);
  report["zero_flow"] = to_json(evaluate(predict(nullptr, test), test));
  io::write_json(out / "ablation.json", report);
}

int fail(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar/LiDAR scene flow pipeline on synthetic data"};
  app.require_subcommand(0, 1);
  Common common;
  app.add_option("--config", common.config_path, "Pipeline config JSON (defaults when omitted)");
  app.add_option("--seed", common.seed, "Overrides scene.seed and train.seed");
  app.add_flag("--print-config", common.print_config, "Print the effective config and exit");

  std::string data, out, frame, split = "test";
  std::optional<std::string> checkpoint, resume;
  std::optional<std::size_t> epochs;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", out, "Dataset directory")->required();

  auto* preprocess = app.add_subcommand("preprocess", "Ground removal, projection and radar denoising");
  auto* labelgen = app.add_subcommand("labelgen", "Flow labels for every pair's source frame");
  auto* train = app.add_subcommand("train", "Train and write checkpoints");
  auto* eval = app.add_subcommand("eval", "Metrics JSON for a split");
  auto* infer = app.add_subcommand("infer", "Per-point flow CSVs for a split");
  auto* heatmap = app.add_subcommand("inspect-heatmap", "Gaussian heatmap of one frame as CSV");
  auto* ablation = app.add_subcommand("ablation", "Train and evaluate each fusion mode");
  for (auto* sub : {preprocess, labelgen, train, eval, infer, heatmap, ablation}) {
    sub->add_option("--data", data, "Dataset directory")->required();
  }
  for (auto* sub : {preprocess, labelgen, train, infer, ablation}) {
    sub->add_option("--out", out, "Output directory")->required();
  }
  eval->add_option("--out", out, "Metrics JSON path")->required();
  heatmap->add_option("--out", out, "CSV path")->required();
  train->add_option("--epochs", epochs, "Total epochs (overrides train.epochs)");
  train->add_option("--resume", resume, "Checkpoint to continue from");
  for (auto* sub : {eval, infer}) {
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint (untrained model when omitted)");
    sub->add_option("--split", split, "train, test or all")->capture_default_str();
  }
  heatmap->add_option("--frame", frame, "Frame id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what());
  }

  try {
    PipelineConfig cfg = load_config(common);
    if (epochs) {
      cfg.train.epochs = *epochs;
      cfg.validate();
    }
    if (common.print_config) {
      std::cout << to_json(cfg).dump(2) << '\n';
      return 0;
    }
    auto opt_path = [](const std::optional<std::string>& s) {
      return s ? std::optional<fs::path>(*s) : std::nullopt;
    };
    if (*synth) run_synth(cfg, out);
    else if (*preprocess) run_preprocess(cfg, data, out);
    else if (*labelgen) run_labelgen(cfg, data, out);
    else if (*train) run_train(cfg, data, out, opt_path(resume));
    else if (*eval) run_eval(cfg, data, opt_path(checkpoint), split, out);
    else if (*infer) run_infer(cfg, data, opt_path(checkpoint), split, out);
    else if (*heatmap) run_heatmap(cfg, data, frame, out);
    else if (*ablation) run_ablation(cfg, data, out);
    else {
      std::cout << app.help();
      return 1;
    }
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("SchemaViolation", e.what());
  } catch (const std::exception& e) {
    return fail("InternalError", e.what());
  }
  return 0;
}
