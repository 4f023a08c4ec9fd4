#pragma once

// Glue between the on-disk dataset layout and the training, detection and
// evaluation stages; also the predictions and trajectories table formats.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "orbit/dataset.hpp"
#include "orbit/eval.hpp"
#include "orbit/phase.hpp"
#include "orbit/trainer.hpp"

namespace orbit {

template <class T = float>
std::vector<TrainVideo<T>> to_train_videos(const std::vector<VideoRecord>& records) {
  std::vector<TrainVideo<T>> out;
  for (const auto& r : records) out.push_back({r.meta.id, r.video.cast<T>(), r.meta.crop});
  return out;
}

/// Test-mode preprocessing: ROI crop and resize to the model input, all frames kept.
template <class T = float>
Video<T> inference_video(const VideoRecord& r, int input_size) {
  CropBox roi = r.meta.crop;
  if (roi.height == 0) roi = {0, 0, r.video.height(), r.video.width()};
  return preprocess_video(r.video.cast<T>(), roi, PreprocessMode::test, PreprocessSizes::for_input(input_size));
}

template <class T = float>
std::vector<CalibrationVideo<T>> calibration_set(const std::vector<VideoRecord>& records, int input_size) {
  std::vector<CalibrationVideo<T>> out;
  for (const auto& r : records) {
    if (!r.meta.truth) throw DataError("calibration video " + r.meta.id + " has no ground truth");
    out.push_back({r.meta.id, inference_video<T>(r, input_size), r.meta.annotated_ed, r.meta.annotated_es});
  }
  return out;
}

struct VideoPrediction {
  std::string id;
  PhasePrediction prediction;
};

template <class T>
std::vector<VideoPrediction> predict_dataset(const LatentModel<T>& model, const PhaseCalibration& cal,
                                             const std::vector<VideoRecord>& records, const DetectOptions& opt = {},
                                             int threads = 1) {
  std::vector<VideoPrediction> out(records.size());
  detail::parallel_for(static_cast<int>(records.size()), threads, [&](int i) {
    out[i] = {records[i].meta.id,
              detect_phases(model, inference_video<T>(records[i], model.config().input_size), cal, opt)};
  });
  return out;
}

inline std::vector<EventError> evaluate_predictions(const std::vector<VideoRecord>& records,
                                                    const std::vector<VideoPrediction>& predictions) {
  std::map<std::string, const VideoPrediction*> by_id;
  for (const auto& p : predictions) by_id[p.id] = &p;
  std::vector<EventError> events;
  for (const auto& r : records) {
    if (!r.meta.truth) throw DataError("video " + r.meta.id + " has no ground truth");
    const auto it = by_id.find(r.meta.id);
    if (it == by_id.end()) throw DataError("no prediction for video " + r.meta.id);
    VideoEvaluation v;
    v.video_id = r.meta.id;
    v.orientation = r.meta.orientation;
    v.fps = r.meta.fps;
    v.gt_ed_all = r.meta.truth->ed_frames;
    v.gt_ed = r.meta.annotated_ed;
    v.gt_es = r.meta.annotated_es;
    v.pred_ed = it->second->prediction.ed_frames;
    v.pred_es = it->second->prediction.es_frames;
    v.trajectory = it->second->prediction.trajectory.curve;
    const auto ev = evaluate_video(v);
    events.insert(events.end(), ev.begin(), ev.end());
  }
  if (by_id.size() != records.size()) {
    for (const auto& p : predictions) {
      bool found = false;
      for (const auto& r : records) found = found || r.meta.id == p.id;
      if (!found) throw DataError("prediction for unknown video " + p.id);
    }
  }
  return events;
}

// ---------------------------------------------------------------------------
// Tables

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? " " : "") << v[k];
  return os.str();
}

inline std::vector<int> split_ints(const std::string& s, const std::string& where) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw DataError(where + ": bad frame index '" + tok + "'");
    }
  }
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

/// One row per video: frame lists are space separated; flags is empty or "degenerate".
inline std::string predictions_csv(const std::vector<VideoPrediction>& preds) {
  std::ostringstream os;
  os << "video_id,ed_frames,es_frames,flags,curve\n";
  for (const auto& p : preds) {
    os << p.id << ',' << detail::join_ints(p.prediction.ed_frames) << ','
       << detail::join_ints(p.prediction.es_frames) << ',' << (p.prediction.degenerate ? "degenerate" : "") << ',';
    std::ostringstream c;
    c.precision(9);
    const auto& curve = p.prediction.trajectory.curve;
    for (std::size_t k = 0; k < curve.size(); ++k) c << (k ? " " : "") << curve[k];
    os << c.str() << '\n';
  }
  return os.str();
}

inline std::vector<VideoPrediction> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || detail::split_csv_line(line).at(0) != "video_id")
    throw DataError(path.string() + ": missing header");
  std::vector<VideoPrediction> out;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(row);
    if (f.size() < 4) throw DataError(where + ": expected at least 4 fields");
    VideoPrediction p;
    p.id = f[0];
    p.prediction.ed_frames = detail::split_ints(f[1], where);
    p.prediction.es_frames = detail::split_ints(f[2], where);
    p.prediction.degenerate = f[3] == "degenerate";
    if (f.size() > 4) {
      std::istringstream c(f[4]);
      double v;
      while (c >> v) p.prediction.trajectory.curve.push_back(v);
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Long format: video_id, frame, curve, then every motion coordinate.
inline std::string trajectories_csv(const std::vector<VideoPrediction>& preds) {
  int m = 0;
  for (const auto& p : preds) m = std::max(m, p.prediction.trajectory.motion_dim);
  std::ostringstream os;
  os.precision(9);
  os << "video_id,frame,curve";
  for (int k = 0; k < m; ++k) os << ",alpha_" << k;
  os << '\n';
  for (const auto& p : preds) {
    const auto& tr = p.prediction.trajectory;
    for (int t = 0; t < tr.frames; ++t) {
      os << p.id << ',' << t << ',' << tr.curve[t];
      for (int k = 0; k < tr.motion_dim; ++k) os << ',' << tr.alpha[static_cast<std::size_t>(t) * tr.motion_dim + k];
      os << '\n';
    }
  }
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

}  // namespace orbit
