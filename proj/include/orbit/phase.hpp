#pragma once

// Latent trajectories and turning-point based ED/ES detection.
//
// Turning points follow scipy.signal.find_peaks semantics: strict local maxima
// with plateau midpoints, then the distance filter (higher peaks first), then
// the prominence filter on the survivors.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/checkpoint.hpp"
#include "orbit/errors.hpp"
#include "orbit/image.hpp"
#include "orbit/model.hpp"

namespace orbit {

enum class Polarity { peak, valley };

inline std::string to_string(Polarity p) { return p == Polarity::peak ? "peak" : "valley"; }

inline Polarity polarity_from_string(const std::string& s) {
  if (s == "peak") return Polarity::peak;
  if (s == "valley") return Polarity::valley;
  throw DataError("unknown polarity '" + s + "'");
}

inline Polarity opposite(Polarity p) { return p == Polarity::peak ? Polarity::valley : Polarity::peak; }

struct Trajectory {
  int frames = 0;
  int motion_dim = 0;
  std::vector<double> alpha;  // frames × motion_dim
  std::vector<double> curve;  // analysed 1-D signal
  int direction = 0;
  int smoothing_width = 1;  // width actually applied
};

inline double mean_of(const std::vector<double>& x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Population standard deviation.
inline double stddev_of(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  const double m = mean_of(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

struct DirectionChoice {
  std::vector<double> curve;
  int index = 0;
};

/// The coordinate with the largest temporal variance; differences below 1e-9 favour the lower index.
inline DirectionChoice select_direction(const std::vector<double>& alpha, int frames, int m) {
  detail::require(m >= 1 && frames >= 1 && alpha.size() == static_cast<std::size_t>(frames) * m,
                  "select_direction: alpha must be frames x M");
  auto column = [&](int c) {
    std::vector<double> col(frames);
    for (int t = 0; t < frames; ++t) col[t] = alpha[static_cast<std::size_t>(t) * m + c];
    return col;
  };
  int best = 0;
  double best_var = std::pow(stddev_of(column(0)), 2);
  for (int c = 1; c < m; ++c) {
    const double v = std::pow(stddev_of(column(c)), 2);
    if (v > best_var + 1e-9) {
      best = c;
      best_var = v;
    }
  }
  return {column(best), best};
}

/// Centred moving average; the window shrinks to the available samples at the ends.
inline std::vector<double> moving_average(const std::vector<double>& x, int width) {
  detail::require(width >= 1 && width % 2 == 1, "moving_average: width must be odd and positive");
  const int n = static_cast<int>(x.size()), r = width / 2;
  std::vector<double> out(n);
  for (int t = 0; t < n; ++t) {
    double s = 0;
    int c = 0;
    for (int k = std::max(0, t - r); k <= std::min(n - 1, t + r); ++k) {
      s += x[k];
      ++c;
    }
    out[t] = s / c;
  }
  return out;
}

/// Smoothing is skipped for curves shorter than 12 frames.
inline int applied_smoothing(int frames, int width) { return frames < 12 ? 1 : width; }

inline Trajectory make_trajectory(std::vector<double> alpha, int frames, int m, int smoothing_width = 3) {
  Trajectory tr;
  tr.frames = frames;
  tr.motion_dim = m;
  auto choice = select_direction(alpha, frames, m);
  tr.alpha = std::move(alpha);
  tr.direction = choice.index;
  tr.smoothing_width = applied_smoothing(frames, smoothing_width);
  tr.curve = tr.smoothing_width > 1 ? moving_average(choice.curve, tr.smoothing_width) : std::move(choice.curve);
  for (double v : tr.curve)
    if (!std::isfinite(v)) throw NumericalError("trajectory contains non-finite values");
  return tr;
}

/// α_t = f₂(encode(I_t)) for every frame of a video already at the model input size.
template <class T>
Trajectory extract_trajectory(const LatentModel<T>& model, const Video<T>& video, int smoothing_width = 3) {
  const int s = model.config().input_size;
  if (video.height() != s || video.width() != s)
    throw ContractError("extract_trajectory: frames are " + std::to_string(video.height()) + "x" +
                        std::to_string(video.width()) + ", model expects " + std::to_string(s) + "x" +
                        std::to_string(s));
  detail::require(video.frames() >= 1, "extract_trajectory: empty video");
  const auto st = model.infer_latents(video);
  return make_trajectory(std::vector<double>(st.alpha.begin(), st.alpha.end()), video.frames(),
                         model.config().motion_dim, smoothing_width);
}

// ---------------------------------------------------------------------------
// Peak finding

namespace peaks {

/// Strict local maxima; a flat top reports its midpoint (rounded down). End samples never qualify.
inline std::vector<int> local_maxima(const std::vector<double>& x) {
  std::vector<int> out;
  const int n = static_cast<int>(x.size());
  int i = 1;
  while (i < n - 1) {
    if (x[i - 1] < x[i]) {
      int ahead = i + 1;
      while (ahead < n - 1 && x[ahead] == x[i]) ++ahead;
      if (x[ahead] < x[i]) {
        out.push_back((i + ahead - 1) / 2);
        i = ahead;
      }
    }
    ++i;
  }
  return out;
}

/// Keeps peaks in order of decreasing height, removing lower ones closer than `distance`.
/// Equal heights: the later peak takes precedence.
inline std::vector<int> select_by_distance(const std::vector<double>& x, const std::vector<int>& pk, int distance) {
  const int n = static_cast<int>(pk.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x[pk[a]] < x[pk[b]]; });
  std::vector<char> keep(n, 1);
  for (int r = n - 1; r >= 0; --r) {
    const int j = order[r];
    if (!keep[j]) continue;
    for (int k = j - 1; k >= 0 && pk[j] - pk[k] < distance; --k) keep[k] = 0;
    for (int k = j + 1; k < n && pk[k] - pk[j] < distance; ++k) keep[k] = 0;
  }
  std::vector<int> out;
  for (int k = 0; k < n; ++k)
    if (keep[k]) out.push_back(pk[k]);
  return out;
}

/// Height above the higher of the two lowest points reached before a strictly higher sample (or the end).
inline double prominence(const std::vector<double>& x, int peak) {
  const int n = static_cast<int>(x.size());
  double left = x[peak], right = x[peak];
  for (int i = peak; i >= 0 && x[i] <= x[peak]; --i) left = std::min(left, x[i]);
  for (int i = peak; i < n && x[i] <= x[peak]; ++i) right = std::min(right, x[i]);
  return x[peak] - std::max(left, right);
}

struct PeakSet {
  std::vector<int> index;
  std::vector<double> prominence;
};

inline PeakSet find_peaks(const std::vector<double>& x, int min_distance, double min_prominence) {
  detail::require(min_distance >= 1, "find_peaks: min_distance must be >= 1");
  PeakSet out;
  for (int p : select_by_distance(x, local_maxima(x), min_distance)) {
    const double pr = prominence(x, p);
    if (pr >= min_prominence) {
      out.index.push_back(p);
      out.prominence.push_back(pr);
    }
  }
  return out;
}

}  // namespace peaks

struct TurningPoints {
  std::vector<int> peaks, valleys;
  std::vector<double> peak_prominence, valley_prominence;
};

/// Peaks of the curve and peaks of its negation under the same filters.
inline TurningPoints detect_turning_points(const std::vector<double>& curve, int min_distance, double prominence) {
  detail::require(curve.size() >= 3, "detect_turning_points: need at least 3 samples");
  std::vector<double> neg(curve.size());
  std::transform(curve.begin(), curve.end(), neg.begin(), [](double v) { return -v; });
  auto p = peaks::find_peaks(curve, min_distance, prominence);
  auto v = peaks::find_peaks(neg, min_distance, prominence);
  return {std::move(p.index), std::move(v.index), std::move(p.prominence), std::move(v.prominence)};
}

inline double default_prominence(const std::vector<double>& curve, double factor = 0.25) {
  return factor * stddev_of(curve);
}

/// Dominant period from the normalised autocorrelation (per-lag unbiased): the first local
/// maximum after the first negative lag, above 3·√(2/T), refined by a parabola through its
/// neighbours. Lags up to T/2 are examined.
inline std::optional<double> autocorrelation_period(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 8) return std::nullopt;
  const double m = mean_of(x);
  std::vector<double> d(n);
  for (int t = 0; t < n; ++t) d[t] = x[t] - m;
  double c0 = 0;
  for (double v : d) c0 += v * v;
  c0 /= n;
  if (!(c0 > 1e-300)) return std::nullopt;
  const int max_lag = n / 2;
  std::vector<double> r(max_lag + 1);
  for (int k = 0; k <= max_lag; ++k) {
    double s = 0;
    for (int t = 0; t + k < n; ++t) s += d[t] * d[t + k];
    r[k] = s / (n - k) / c0;
  }
  int k0 = 1;
  while (k0 <= max_lag && r[k0] >= 0) ++k0;
  const double threshold = 3.0 * std::sqrt(2.0 / n);
  for (int k = k0 + 1; k < max_lag; ++k) {
    if (r[k] >= r[k - 1] && r[k] > r[k + 1] && r[k] > threshold) {
      const double den = r[k - 1] - 2 * r[k] + r[k + 1];
      const double delta = den < 0 ? 0.5 * (r[k - 1] - r[k + 1]) / den : 0.0;
      return k + delta;
    }
  }
  return std::nullopt;
}

/// round(P/2) with ties to even, or T/8 when no significant period exists; at least 1.
inline int auto_min_distance(const std::vector<double>& curve) {
  detail::require(curve.size() >= 8, "auto_min_distance: need at least 8 samples");
  const auto p = autocorrelation_period(curve);
  const double d = p ? std::nearbyint(0.5 * *p) : std::floor(static_cast<double>(curve.size()) / 8.0);
  return std::max(1, static_cast<int>(d));
}

// ---------------------------------------------------------------------------
// Calibration and detection

struct DetectOptions {
  int smoothing_width = 3;
  double prominence_factor = 0.25;
  std::optional<int> min_distance;  // automatic when empty
};

struct PhaseCalibration {
  Polarity ed_polarity = Polarity::peak;
  std::string model_id;
  int votes_peak = 0, votes_valley = 0, abstained = 0;
};

inline nlohmann::json to_json(const PhaseCalibration& c) {
  return {{"ed_polarity", to_string(c.ed_polarity)},
          {"es_polarity", to_string(opposite(c.ed_polarity))},
          {"model_id", c.model_id},
          {"votes", {{"peak", c.votes_peak}, {"valley", c.votes_valley}, {"abstained", c.abstained}}}};
}

inline PhaseCalibration calibration_from_json(const nlohmann::json& j) {
  PhaseCalibration c;
  try {
    c.ed_polarity = polarity_from_string(j.at("ed_polarity").get<std::string>());
    c.model_id = j.at("model_id").get<std::string>();
    if (j.contains("votes")) {
      c.votes_peak = j["votes"].value("peak", 0);
      c.votes_valley = j["votes"].value("valley", 0);
      c.abstained = j["votes"].value("abstained", 0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError(std::string("malformed calibration: ") + e.what());
  }
  return c;
}

struct PhasePrediction {
  std::vector<int> ed_frames, es_frames;
  Trajectory trajectory;
  int min_distance = 0;
  double prominence = 0;
  bool degenerate = false;
  std::string diagnostic;
};

inline double mean_nearest_distance(const std::vector<int>& events, const std::vector<int>& candidates) {
  if (candidates.empty() || events.empty()) return std::numeric_limits<double>::infinity();
  double s = 0;
  for (int e : events) {
    int best = std::numeric_limits<int>::max();
    for (int c : candidates) best = std::min(best, std::abs(e - c));
    s += best;
  }
  return s / static_cast<double>(events.size());
}

/// One video's vote: the polarity whose turning points lie nearer (on average) to the ED events.
inline std::optional<Polarity> polarity_vote(const std::vector<double>& curve, const std::vector<int>& ed_events,
                                             const DetectOptions& opt = {}) {
  if (curve.size() < 8) return std::nullopt;
  const int dist = opt.min_distance.value_or(auto_min_distance(curve));
  const auto tp = detect_turning_points(curve, dist, default_prominence(curve, opt.prominence_factor));
  const double dp = mean_nearest_distance(ed_events, tp.peaks);
  const double dv = mean_nearest_distance(ed_events, tp.valleys);
  if (dp < dv) return Polarity::peak;
  if (dv < dp) return Polarity::valley;
  return std::nullopt;
}

/// Majority over per-video votes; an exact tie is an error.
inline PhaseCalibration majority_polarity(const std::vector<std::optional<Polarity>>& votes, std::string model_id) {
  if (votes.empty()) throw CalibrationError("calibration set is empty");
  PhaseCalibration c;
  c.model_id = std::move(model_id);
  for (const auto& v : votes) {
    if (!v) ++c.abstained;
    else if (*v == Polarity::peak) ++c.votes_peak;
    else ++c.votes_valley;
  }
  if (c.votes_peak == c.votes_valley)
    throw CalibrationError("calibration vote tied (" + std::to_string(c.votes_peak) + " peak, " +
                           std::to_string(c.votes_valley) + " valley); add more calibration videos");
  c.ed_polarity = c.votes_peak > c.votes_valley ? Polarity::peak : Polarity::valley;
  return c;
}

template <class T>
struct CalibrationVideo {
  std::string id;
  Video<T> video;  // at the model input size
  std::vector<int> ed_frames, es_frames;
};

template <class T>
PhaseCalibration calibrate_phase_labels(const LatentModel<T>& model, const std::vector<CalibrationVideo<T>>& set,
                                        const DetectOptions& opt = {}) {
  if (set.empty()) throw CalibrationError("calibration set is empty");
  std::vector<std::optional<Polarity>> votes;
  for (const auto& v : set) {
    if (v.ed_frames.empty() || v.es_frames.empty())
      throw CalibrationError("calibration video " + v.id + " needs at least one ED and one ES event");
    votes.push_back(polarity_vote(extract_trajectory(model, v.video, opt.smoothing_width).curve, v.ed_frames, opt));
  }
  return majority_polarity(votes, model_fingerprint(model));
}

namespace detail {

struct Event {
  int frame;
  bool ed;
  double prominence;
};

/// Drops the lower-prominence member of adjacent same-type events until types alternate (ties drop the later one).
inline std::vector<Event> interleave(std::vector<Event> ev) {
  std::sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.frame < b.frame; });
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t k = 1; k < ev.size(); ++k) {
      if (ev[k].ed != ev[k - 1].ed) continue;
      ev.erase(ev.begin() + static_cast<std::ptrdiff_t>(ev[k].prominence > ev[k - 1].prominence ? k - 1 : k));
      changed = true;
      break;
    }
  }
  return ev;
}

}  // namespace detail

/// Turning points of an extracted trajectory mapped to ED/ES by a calibrated polarity.
inline PhasePrediction detect_from_trajectory(Trajectory tr, Polarity ed_polarity, const DetectOptions& opt = {}) {
  PhasePrediction pred;
  const auto& c = tr.curve;
  const double sd = stddev_of(c);
  if (c.size() < 8 || !(sd > 1e-12 * (1 + std::abs(mean_of(c))))) {
    pred.degenerate = true;
    pred.diagnostic = c.size() < 8 ? "trajectory shorter than 8 frames" : "trajectory is constant";
    pred.trajectory = std::move(tr);
    return pred;
  }
  pred.min_distance = opt.min_distance.value_or(auto_min_distance(c));
  pred.prominence = default_prominence(c, opt.prominence_factor);
  const auto tp = detect_turning_points(c, pred.min_distance, pred.prominence);
  const bool ed_is_peak = ed_polarity == Polarity::peak;
  std::vector<detail::Event> ev;
  for (std::size_t k = 0; k < tp.peaks.size(); ++k) ev.push_back({tp.peaks[k], ed_is_peak, tp.peak_prominence[k]});
  for (std::size_t k = 0; k < tp.valleys.size(); ++k)
    ev.push_back({tp.valleys[k], !ed_is_peak, tp.valley_prominence[k]});
  for (const auto& e : detail::interleave(std::move(ev))) (e.ed ? pred.ed_frames : pred.es_frames).push_back(e.frame);
  if (pred.ed_frames.empty() && pred.es_frames.empty()) {
    pred.degenerate = true;
    pred.diagnostic = "no turning points";
  }
  pred.trajectory = std::move(tr);
  return pred;
}

template <class T>
PhasePrediction detect_phases(const LatentModel<T>& model, const Video<T>& video, const PhaseCalibration& cal,
                              const DetectOptions& opt = {}) {
  if (cal.model_id != model_fingerprint(model))
    throw CalibrationError("calibration belongs to model " + cal.model_id + ", not " + model_fingerprint(model) +
                           "; run calibrate for this checkpoint");
  return detect_from_trajectory(extract_trajectory(model, video, opt.smoothing_width), cal.ed_polarity, opt);
}

}  // namespace orbit
