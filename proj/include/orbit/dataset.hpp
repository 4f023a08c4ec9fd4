#pragma once

// On-disk dataset layout: one directory per video holding frame_NNNN.pgm
// (8-bit binary PGM) and meta.json, plus a top-level manifest.json.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/errors.hpp"
#include "orbit/image.hpp"
#include "orbit/preprocess.hpp"
#include "orbit/synth.hpp"

namespace orbit {

namespace fs = std::filesystem;

struct VideoMeta {
  std::string id;
  double fps = 0;
  int orientation = 0;
  CropBox crop;
  std::optional<GroundTruth> truth;
  /// Events the evaluation scores; defaults to the full ground truth.
  std::vector<int> annotated_ed, annotated_es;
  nlohmann::json synth = nullptr;  // generator parameters when synthetic
};

struct VideoRecord {
  VideoMeta meta;
  Video<float> video;  // intensities in [0, 1]
};

// ---------------------------------------------------------------------------
// PGM

inline void write_pgm(const fs::path& path, const Image<double>& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> buf(img.size());
  for (std::size_t k = 0; k < buf.size(); ++k)
    buf[k] = static_cast<unsigned char>(std::lround(std::clamp(img.values()[k], 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

/// Reads an 8- or 16-bit binary PGM, scaled to [0, 1] by its maxval.
inline Image<float> read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string line;
        std::getline(is, line);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P5") throw DataError(path.string() + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw DataError(path.string() + ": bad PGM header");
  Image<float> img(h, w);
  const std::size_t n = img.size();
  if (maxval < 256) {
    std::vector<unsigned char> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!is) throw DataError(path.string() + ": truncated PGM data");
    for (std::size_t k = 0; k < n; ++k) img.values()[k] = static_cast<float>(buf[k]) / static_cast<float>(maxval);
  } else {
    std::vector<unsigned char> buf(2 * n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
    if (!is) throw DataError(path.string() + ": truncated PGM data");
    for (std::size_t k = 0; k < n; ++k)
      img.values()[k] = static_cast<float>(buf[2 * k] * 256 + buf[2 * k + 1]) / static_cast<float>(maxval);
  }
  return img;
}

inline std::string frame_filename(int t) {
  std::ostringstream os;
  os << "frame_" << std::setw(4) << std::setfill('0') << t << ".pgm";
  return os.str();
}

// ---------------------------------------------------------------------------
// Metadata

inline nlohmann::json to_json(const SynthParams& p) {
  return {{"fps", p.fps},
          {"heart_rate", p.heart_rate},
          {"systole_fraction", p.systole_fraction},
          {"contraction_amplitude", p.contraction_amplitude},
          {"orientation", p.orientation},
          {"noise", p.noise},
          {"texture_seed", p.texture_seed},
          {"noise_seed", p.noise_seed},
          {"num_frames", p.num_frames},
          {"frame_size", p.frame_size},
          {"phase_offset", p.phase_offset}};
}

inline nlohmann::json to_json(const VideoMeta& m) {
  nlohmann::json j;
  j["id"] = m.id;
  j["fps"] = m.fps;
  j["orientation"] = m.orientation;
  j["crop_box"] = {m.crop.y0, m.crop.x0, m.crop.height, m.crop.width};
  if (m.truth) {
    j["ground_truth"] = {{"ed_frames", m.truth->ed_frames},
                         {"es_frames", m.truth->es_frames},
                         {"period_frames", m.truth->period_frames},
                         {"annotated_ed", m.annotated_ed},
                         {"annotated_es", m.annotated_es}};
  }
  if (!m.synth.is_null()) j["synth"] = m.synth;
  return j;
}

inline VideoMeta meta_from_json(const nlohmann::json& j, const std::string& where) {
  VideoMeta m;
  try {
    m.id = j.at("id").get<std::string>();
    m.fps = j.at("fps").get<double>();
    m.orientation = j.value("orientation", 0);
    if (j.contains("crop_box")) {
      const auto c = j.at("crop_box").get<std::vector<int>>();
      if (c.size() != 4) throw DataError(where + ": crop_box needs 4 integers");
      m.crop = {c[0], c[1], c[2], c[3]};
    }
    if (j.contains("ground_truth")) {
      const auto& g = j.at("ground_truth");
      GroundTruth gt;
      gt.ed_frames = g.at("ed_frames").get<std::vector<int>>();
      gt.es_frames = g.at("es_frames").get<std::vector<int>>();
      gt.period_frames = g.value("period_frames", 0.0);
      gt.orientation = m.orientation;
      m.annotated_ed = g.contains("annotated_ed") ? g.at("annotated_ed").get<std::vector<int>>() : gt.ed_frames;
      m.annotated_es = g.contains("annotated_es") ? g.at("annotated_es").get<std::vector<int>>() : gt.es_frames;
      m.truth = std::move(gt);
    }
    if (j.contains("synth")) m.synth = j.at("synth");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  if (!(m.fps > 0)) throw DataError(where + ": fps must be positive");
  return m;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw DataError("failed writing " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Videos and datasets

inline void write_video(const fs::path& dir, const Video<double>& video, const VideoMeta& meta) {
  fs::create_directories(dir);
  for (int t = 0; t < video.frames(); ++t) write_pgm(dir / frame_filename(t), video.frame(t));
  write_json(dir / "meta.json", to_json(meta));
}

inline VideoRecord read_video(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("video directory " + dir.string() + " does not exist");
  VideoRecord r;
  r.meta = meta_from_json(read_json(dir / "meta.json"), (dir / "meta.json").string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError(dir.string() + ": no frames");
  std::vector<Image<float>> frames;
  for (const auto& f : files) frames.push_back(read_pgm(f));
  for (const auto& f : frames)
    if (!f.same_shape(frames.front())) throw DataError(dir.string() + ": frames differ in size");
  r.video = Video<float>(frames);
  if (r.meta.crop.height == 0) r.meta.crop = {0, 0, r.video.height(), r.video.width()};
  return r;
}

/// Video directories of a dataset: the manifest order if present, else sorted subdirectories.
inline std::vector<fs::path> dataset_video_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset directory " + root.string() + " does not exist");
  std::vector<fs::path> dirs;
  if (fs::exists(root / "manifest.json")) {
    const auto man = read_json(root / "manifest.json");
    try {
      for (const auto& v : man.at("videos")) dirs.push_back(root / v.at("dir").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError((root / "manifest.json").string() + ": " + e.what());
    }
  } else {
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && fs::exists(e.path() / "meta.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw DataError("dataset " + root.string() + " contains no videos");
  return dirs;
}

inline std::vector<VideoRecord> read_dataset(const fs::path& root) {
  std::vector<VideoRecord> out;
  for (const auto& d : dataset_video_dirs(root)) out.push_back(read_video(d));
  return out;
}

/// Annotation covers events at least a quarter cycle (and 2 frames) from either end.
inline int annotation_margin(double period_frames) {
  return std::max(2, static_cast<int>(std::ceil(0.25 * period_frames)));
}

/// Generates and writes a synthetic dataset; returns the manifest.
inline nlohmann::json write_synthetic_dataset(const fs::path& root, int n_videos, const SynthRanges& ranges,
                                              std::uint64_t seed) {
  const auto params = draw_dataset_params(n_videos, ranges, seed);
  fs::create_directories(root);
  nlohmann::json man;
  man["seed"] = seed;
  man["ranges"] = {{"fps", {ranges.fps_min, ranges.fps_max}},
                   {"heart_rate", {ranges.hr_min, ranges.hr_max}},
                   {"systole_fraction", ranges.systole_fraction},
                   {"contraction_amplitude", ranges.contraction_amplitude},
                   {"noise", ranges.noise},
                   {"num_frames", ranges.num_frames},
                   {"frame_size", ranges.frame_size},
                   {"random_phase", ranges.random_phase}};
  man["videos"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::ostringstream id;
    id << "video_" << std::setw(4) << std::setfill('0') << i;
    const auto [video, truth] = generate_video(params[i]);
    VideoMeta meta;
    meta.id = id.str();
    meta.fps = params[i].fps;
    meta.orientation = params[i].orientation;
    meta.crop = {0, 0, video.height(), video.width()};
    const int margin = annotation_margin(truth.period_frames);
    meta.annotated_ed = interior_events(truth.ed_frames, video.frames(), margin);
    meta.annotated_es = interior_events(truth.es_frames, video.frames(), margin);
    meta.truth = truth;
    meta.synth = to_json(params[i]);
    write_video(root / meta.id, video, meta);
    man["videos"].push_back({{"id", meta.id}, {"dir", meta.id}, {"params", meta.synth}});
  }
  write_json(root / "manifest.json", man);
  return man;
}

}  // namespace orbit
