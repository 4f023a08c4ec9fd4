#pragma once

// Command-line front end: generate, train, calibrate, detect, eval.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 data error, 4 numerical divergence, 5 calibration error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "orbit/pipeline.hpp"

namespace orbit::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4, kCalibration = 5 };

/// Everything a run can be configured with; serialised as JSON.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  ModelConfig model = ModelConfig::desk();
  TrainConfig train = TrainConfig::desk();
  SynthRanges synth;
  int n_videos = 8;
  DetectOptions detect;
  nlohmann::json model_overrides = nlohmann::json::object();
  nlohmann::json train_overrides = nlohmann::json::object();
  std::optional<std::uint64_t> model_seed, train_seed;
};

inline void apply_preset(RunConfig& rc, const std::string& preset) {
  if (preset == "desk") {
    rc.model = ModelConfig::desk();
    rc.train = TrainConfig::desk();
  } else if (preset == "paper") {
    rc.model = ModelConfig::paper();
    rc.train = TrainConfig{};
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
  }
  rc.preset = preset;
}

inline void update_synth(RunConfig& rc, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth must be an object");
  auto range = [](const nlohmann::json& v, double& lo, double& hi, const std::string& key) {
    const auto r = v.get<std::vector<double>>();
    if (r.size() != 2) throw ConfigError("synth." + key + " must be [min, max]");
    lo = r[0];
    hi = r[1];
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_videos") rc.n_videos = v.get<int>();
      else if (key == "fps") range(v, rc.synth.fps_min, rc.synth.fps_max, key);
      else if (key == "heart_rate") range(v, rc.synth.hr_min, rc.synth.hr_max, key);
      else if (key == "systole_fraction") rc.synth.systole_fraction = v.get<double>();
      else if (key == "contraction_amplitude") rc.synth.contraction_amplitude = v.get<double>();
      else if (key == "noise") rc.synth.noise = v.get<double>();
      else if (key == "num_frames") rc.synth.num_frames = v.get<int>();
      else if (key == "frame_size") rc.synth.frame_size = v.get<int>();
      else if (key == "random_phase") rc.synth.random_phase = v.get<bool>();
      else throw ConfigError("unknown key synth." + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
}

inline void update_detect(RunConfig& rc, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("detect must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "smoothing_width") rc.detect.smoothing_width = v.get<int>();
      else if (key == "prominence_factor") rc.detect.prominence_factor = v.get<double>();
      else if (key == "min_distance") {
        if (v.is_null()) rc.detect.min_distance.reset();
        else rc.detect.min_distance = v.get<int>();
      } else
        throw ConfigError("unknown key detect." + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("detect: ") + e.what());
  }
  if (rc.detect.smoothing_width < 1 || rc.detect.smoothing_width % 2 == 0)
    throw ConfigError("detect.smoothing_width must be odd and positive");
  if (rc.detect.prominence_factor < 0) throw ConfigError("detect.prominence_factor must be >= 0");
  if (rc.detect.min_distance && *rc.detect.min_distance < 1) throw ConfigError("detect.min_distance must be >= 1");
}

/// Parses a config object. Sections are applied over the preset; unknown keys are errors.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig rc;
  for (const auto& [key, _] : j.items())
    if (key != "preset" && key != "seed" && key != "model" && key != "train" && key != "synth" && key != "detect")
      throw ConfigError("unknown config key '" + key + "'");
  try {
    apply_preset(rc, j.value("preset", std::string("desk")));
    rc.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("model")) {
    rc.model_overrides = j["model"];
    update_from_json(rc.model, rc.model_overrides);
    if (rc.model_overrides.contains("init_seed")) rc.model_seed = rc.model.init_seed;
  }
  if (j.contains("train")) {
    rc.train_overrides = j["train"];
    update_from_json(rc.train, rc.train_overrides);
    if (rc.train_overrides.contains("seed")) rc.train_seed = rc.train.seed;
  }
  if (j.contains("synth")) update_synth(rc, j["synth"]);
  if (j.contains("detect")) update_detect(rc, j["detect"]);
  return rc;
}

/// Re-applies the preset (the flag wins over the file) and derives section seeds from the top-level seed.
inline void finalize(RunConfig& rc, const std::optional<std::string>& preset_flag,
                     const std::optional<std::uint64_t>& seed_flag, std::optional<int> threads, bool strict) {
  if (preset_flag && *preset_flag != rc.preset) {
    apply_preset(rc, *preset_flag);
    update_from_json(rc.model, rc.model_overrides);
    update_from_json(rc.train, rc.train_overrides);
  }
  if (seed_flag) {
    rc.seed = *seed_flag;
    rc.model_seed.reset();
    rc.train_seed.reset();
  }
  rc.model.init_seed = rc.model_seed.value_or(rc.seed);
  rc.train.seed = rc.train_seed.value_or(rc.seed);
  if (threads) {
    if (*threads < 1) throw ConfigError("--threads must be >= 1");
    rc.train.threads = *threads;
  }
  if (strict) rc.train.strict_deterministic = true;
  try {
    rc.model.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  rc.train.validate(rc.model);
}

inline nlohmann::json read_config_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("cannot open config " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline void require_dir(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is required");
  if (!fs::is_directory(p)) throw DataError(what + " " + p.string() + " does not exist");
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is required");
  if (!fs::is_regular_file(p)) throw DataError(what + " " + p.string() + " does not exist");
}

/// Creates the directory and probes that it is writable.
inline void prepare_output_dir(const fs::path& p) {
  if (p.empty()) throw ConfigError("output path is required");
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw ConfigError("cannot create output directory " + p.string());
  const auto probe = p / ".orbit_write_probe";
  {
    std::ofstream os(probe);
    if (!os) throw ConfigError("output directory " + p.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

inline fs::path calibration_sidecar(const fs::path& checkpoint) { return checkpoint.string() + ".calibration.json"; }

// ---------------------------------------------------------------------------
// Commands

inline int cmd_generate(const RunConfig& rc, const fs::path& out, std::ostream& log) {
  if (rc.n_videos < 1) throw ConfigError("synth.n_videos must be >= 1");
  prepare_output_dir(out);
  write_synthetic_dataset(out, rc.n_videos, rc.synth, rc.seed);
  log << "wrote " << rc.n_videos << " videos to " << out.string() << '\n';
  return kOk;
}

inline int cmd_train(const RunConfig& rc, const fs::path& data, const fs::path& valid, const fs::path& out, bool resume,
                     std::ostream& log) {
  require_dir(data, "dataset");
  if (!valid.empty()) require_dir(valid, "validation dataset");
  prepare_output_dir(out);
  auto records = read_dataset(data);
  std::vector<VideoRecord> valid_records;
  if (!valid.empty()) {
    valid_records = read_dataset(valid);
  } else {
    const auto vidx = validation_split(static_cast<int>(records.size()), rc.train.validation_fraction, rc.train.seed);
    std::vector<VideoRecord> keep;
    for (int i = 0; i < static_cast<int>(records.size()); ++i) {
      if (std::binary_search(vidx.begin(), vidx.end(), i)) valid_records.push_back(std::move(records[i]));
      else keep.push_back(std::move(records[i]));
    }
    records = std::move(keep);
  }

  std::optional<LatentModel<float>> start;
  std::optional<CheckpointMeta> resume_meta;
  if (resume) {
    const auto last = out / "last.ckpt";
    require_file(last, "resume checkpoint");
    auto ck = load_checkpoint<float>(last);
    if (!(ck.model.config() == rc.model)) throw ConfigError("resume: checkpoint model config differs from the run config");
    start.emplace(std::move(ck.model));
    resume_meta = ck.meta;
    log << "resuming from epoch " << ck.meta.epoch << ", step " << ck.meta.step << '\n';
  } else {
    start.emplace(rc.model);
  }

  std::vector<EpochRecord> curve;
  if (resume && fs::exists(out / "loss.csv")) {
    // Earlier rows are kept; the resumed run's pre-training row repeats the last epoch.
    std::ifstream is(out / "loss.csv");
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto f = detail::split_csv_line(line);
      if (f.size() != 3) continue;
      EpochRecord r;
      r.epoch = std::stoi(f[0]);
      r.train_loss = f[1].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[1]);
      r.valid_loss = std::stod(f[2]);
      if (r.epoch < resume_meta->epoch) curve.push_back(r);
    }
  }
  double best_valid = std::numeric_limits<double>::infinity();
  if (resume && fs::is_regular_file(out / "best.ckpt")) best_valid = load_checkpoint<float>(out / "best.ckpt").meta.valid_loss;
  TrainHooks<float> hooks;
  hooks.log = [&](const std::string& s) { log << s << std::endl; };
  hooks.on_epoch = [&](const EpochRecord& rec, const LatentModel<float>& m, const CheckpointMeta& meta, bool) {
    curve.push_back(rec);
    write_text(out / "loss.csv", loss_csv(curve));
    if (rec.valid_loss < best_valid) {
      best_valid = rec.valid_loss;
      save_checkpoint(out / "best.ckpt", m, meta);
    }
    save_checkpoint(out / "last.ckpt", m, meta);
  };
  const auto res = train(to_train_videos(records), to_train_videos(valid_records), *start, rc.train, hooks, resume_meta);
  nlohmann::json summary{{"best_valid_loss", best_valid},
                         {"zero_velocity_valid_loss", res.zero_velocity_valid_loss},
                         {"steps", res.last_meta.step},
                         {"max_orthonormality_error", res.max_orthonormality_error},
                         {"skipped", res.skipped}};
  write_json(out / "train_summary.json", summary);
  log << "best valid loss " << best_valid << '\n';
  return kOk;
}

inline int cmd_calibrate(const RunConfig& rc, const fs::path& checkpoint, const fs::path& data, std::ostream& log) {
  require_file(checkpoint, "checkpoint");
  require_dir(data, "calibration dataset");
  const auto ck = load_checkpoint<float>(checkpoint);
  const auto cal = calibrate_phase_labels(ck.model, calibration_set(read_dataset(data), ck.model.config().input_size),
                                          rc.detect);
  write_json(calibration_sidecar(checkpoint), to_json(cal));
  log << "ED polarity: " << to_string(cal.ed_polarity) << " (votes peak " << cal.votes_peak << ", valley "
      << cal.votes_valley << ", abstained " << cal.abstained << ")\n";
  return kOk;
}

inline int cmd_detect(const RunConfig& rc, const fs::path& checkpoint, const fs::path& calibration,
                      const fs::path& data, const fs::path& out, std::ostream& log) {
  require_file(checkpoint, "checkpoint");
  require_dir(data, "dataset");
  const fs::path cal_path = calibration.empty() ? calibration_sidecar(checkpoint) : calibration;
  if (!fs::is_regular_file(cal_path))
    throw CalibrationError("no calibration found at " + cal_path.string() + "; run `orbit calibrate --checkpoint " +
                           checkpoint.string() + " --data <validation set>` first");
  prepare_output_dir(out);
  const auto ck = load_checkpoint<float>(checkpoint);
  const auto cal = calibration_from_json(read_json(cal_path));
  const auto preds = predict_dataset(ck.model, cal, read_dataset(data), rc.detect, rc.train.effective_threads());
  write_text(out / "predictions.csv", predictions_csv(preds));
  write_text(out / "trajectories.csv", trajectories_csv(preds));
  int flagged = 0;
  for (const auto& p : preds) flagged += p.prediction.degenerate;
  log << "predicted " << preds.size() << " videos (" << flagged << " flagged degenerate)\n";
  return kOk;
}

inline int cmd_eval(const fs::path& predictions, const fs::path& data, const fs::path& out, std::ostream& log) {
  require_file(predictions, "predictions");
  require_dir(data, "dataset");
  prepare_output_dir(out);
  const auto events = evaluate_predictions(read_dataset(data), read_predictions_csv(predictions));
  const auto rows = group_report(events);
  write_text(out / "events.csv", events_csv(events));
  write_text(out / "grouped.csv", grouped_csv(rows));
  const auto summary = summary_json(rows);
  write_json(out / "summary.json", summary);
  log << summary.dump(2) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

/// Runs the command line; `out` receives the summaries, `err` diagnostics.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Self-supervised cardiac phase detection from latent motion trajectories", "orbit"};
  app.require_subcommand(1);
  std::string config_path, preset;
  std::uint64_t seed = 0;
  int threads = 1;
  bool strict = false;
  app.add_option("--config", config_path, "JSON run configuration");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for generation, initialisation and sampling");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads");
  app.add_flag("--strict-deterministic", strict, "Single-threaded, bit-reproducible execution");
  auto* preset_opt = app.add_option("--preset", preset, "Model preset")->check(CLI::IsMember({"desk", "paper"}));

  std::string data, valid, out_dir, checkpoint, calibration, predictions;
  bool resume = false;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  gen->add_option("--out", out_dir, "Output dataset directory")->required();
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--data", data, "Training dataset")->required();
  trn->add_option("--valid", valid, "Validation dataset (default: split off the training set)");
  trn->add_option("--out", out_dir, "Run directory for checkpoints and loss curves")->required();
  trn->add_flag("--resume", resume, "Continue from <out>/last.ckpt");
  auto* cal = app.add_subcommand("calibrate", "Fix the ED/ES turning-point polarity of a checkpoint");
  cal->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  cal->add_option("--data", data, "Calibration dataset with ground truth")->required();
  auto* det = app.add_subcommand("detect", "Predict ED/ES frames");
  det->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  det->add_option("--calibration", calibration, "Calibration file (default: the checkpoint sidecar)");
  det->add_option("--data", data, "Dataset to analyse")->required();
  det->add_option("--out", out_dir, "Output directory")->required();
  auto* evl = app.add_subcommand("eval", "Score predictions against ground truth");
  evl->add_option("--predictions", predictions, "predictions.csv from detect")->required();
  evl->add_option("--data", data, "Dataset with ground truth")->required();
  evl->add_option("--out", out_dir, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    RunConfig rc = config_path.empty() ? parse_run_config(nlohmann::json::object())
                                       : parse_run_config(read_config_file(config_path));
    finalize(rc, *preset_opt ? std::optional<std::string>(preset) : std::nullopt,
             *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt,
             *threads_opt ? std::optional<int>(threads) : std::nullopt, strict);
    if (*gen) return cmd_generate(rc, out_dir, out);
    if (*trn) return cmd_train(rc, data, valid, out_dir, resume, out);
    if (*cal) return cmd_calibrate(rc, checkpoint, data, out);
    if (*det) return cmd_detect(rc, checkpoint, calibration, data, out_dir, out);
    if (*evl) return cmd_eval(predictions, data, out_dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ContractError& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kDivergence;
  } catch (const CalibrationError& e) {
    err << "calibration error: " << e.what() << '\n';
    return kCalibration;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace orbit::cli
