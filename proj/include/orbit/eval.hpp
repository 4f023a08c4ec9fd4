#pragma once

// Event matching and timing metrics: MAE in frames, milliseconds and percent of
// the cardiac cycle, the 50 %-cycle success rate, and per-orientation grouping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/errors.hpp"
#include "orbit/phase.hpp"

namespace orbit {

enum class Phase { ed, es };

inline std::string to_string(Phase p) { return p == Phase::ed ? "ED" : "ES"; }

struct MatchedEvent {
  int gt = 0;
  std::optional<int> pred;  // nearest prediction; empty when there are none
  int error = 0;            // |gt − pred| in frames (0 when unmatched)
};

/// Each ground-truth event independently takes its nearest prediction; ties go to the earlier prediction.
inline std::vector<MatchedEvent> match_events(const std::vector<int>& gt, const std::vector<int>& pred) {
  std::vector<MatchedEvent> out;
  for (int g : gt) {
    MatchedEvent m{g, std::nullopt, 0};
    for (int p : pred)
      if (!m.pred || std::abs(g - p) < m.error) {
        m.pred = p;
        m.error = std::abs(g - p);
      }
    out.push_back(m);
  }
  return out;
}

/// Median spacing of consecutive ED events; with fewer than two, the trajectory's autocorrelation period.
inline double cycle_length(const std::vector<int>& gt_ed, const std::vector<double>* trajectory = nullptr) {
  if (gt_ed.size() >= 2) {
    std::vector<double> gaps;
    for (std::size_t k = 1; k < gt_ed.size(); ++k) gaps.push_back(gt_ed[k] - gt_ed[k - 1]);
    std::sort(gaps.begin(), gaps.end());
    const std::size_t n = gaps.size();
    return n % 2 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
  }
  if (trajectory) {
    if (const auto p = autocorrelation_period(*trajectory)) return *p;
    throw DataError("cycle_length: trajectory has no significant period and fewer than 2 ED events are annotated");
  }
  throw DataError("cycle_length: need at least 2 ED events or a trajectory");
}

struct EventError {
  std::string video_id;
  Phase phase = Phase::ed;
  int orientation = 0;
  double fps = 0;
  double cycle_frames = 0;
  int gt = 0;
  std::optional<int> pred;
  int error_frames = 0;

  double ms_per_frame() const { return 1000.0 / fps; }
  double error_ms() const { return error_frames * ms_per_frame(); }
  double error_pct_cycle() const { return 100.0 * error_frames / cycle_frames; }
};

struct Stat {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsRecord {
  Stat mae_frames, mae_ms, mae_pct_cycle;
  double success_rate = std::numeric_limits<double>::quiet_NaN();
  int n_events = 0;
  int matched = 0;
  int unmatched = 0;
};

namespace detail {

/// Mean and population standard deviation.
inline Stat describe(const std::vector<double>& x) {
  Stat s;
  if (x.empty()) return s;
  double m = 0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - m) * (v - m);
  s.mean = m;
  s.std = std::sqrt(var / static_cast<double>(x.size()));
  return s;
}

}  // namespace detail

/// Aggregates without the non-empty precondition (means are NaN when nothing matched).
inline MetricsRecord summarize(const std::vector<EventError>& events, double threshold_pct = 50.0) {
  MetricsRecord r;
  r.n_events = static_cast<int>(events.size());
  std::vector<double> f, ms, pct;
  int success = 0;
  for (const auto& e : events) {
    if (!e.pred) {
      ++r.unmatched;
      continue;
    }
    ++r.matched;
    f.push_back(e.error_frames);
    ms.push_back(e.error_ms());
    pct.push_back(e.error_pct_cycle());
    success += e.error_pct_cycle() < threshold_pct;
  }
  r.mae_frames = detail::describe(f);
  r.mae_ms = detail::describe(ms);
  r.mae_pct_cycle = detail::describe(pct);
  // Unmatched events count as failures.
  if (r.n_events > 0) r.success_rate = static_cast<double>(success) / r.n_events;
  return r;
}

/// Metrics over a collection of events; at least one must be matched.
inline MetricsRecord compute_metrics(const std::vector<EventError>& events, double threshold_pct = 50.0) {
  const auto r = summarize(events, threshold_pct);
  if (r.matched == 0) throw DataError("compute_metrics: no matched events");
  return r;
}

/// Ground truth and prediction for one video.
struct VideoEvaluation {
  std::string video_id;
  int orientation = 0;
  double fps = 0;
  std::vector<int> gt_ed_all;        // full ED list, for the cycle length
  std::vector<int> gt_ed, gt_es;     // scored events
  std::vector<int> pred_ed, pred_es;
  std::vector<double> trajectory;    // cycle fallback
};

inline std::vector<EventError> evaluate_video(const VideoEvaluation& v) {
  if (!(v.fps > 0)) throw DataError("evaluate_video: " + v.video_id + " has no valid fps");
  const double cycle = cycle_length(v.gt_ed_all.size() >= 2 ? v.gt_ed_all : v.gt_ed,
                                    v.trajectory.empty() ? nullptr : &v.trajectory);
  std::vector<EventError> out;
  for (const auto phase : {Phase::ed, Phase::es}) {
    const auto& gt = phase == Phase::ed ? v.gt_ed : v.gt_es;
    const auto& pred = phase == Phase::ed ? v.pred_ed : v.pred_es;
    for (const auto& m : match_events(gt, pred))
      out.push_back({v.video_id, phase, v.orientation, v.fps, cycle, m.gt, m.pred, m.error});
  }
  return out;
}

struct GroupRow {
  std::optional<int> orientation;  // empty: all orientations
  Phase phase = Phase::ed;
  MetricsRecord metrics;
};

/// One row per (orientation bin, phase) in ascending bin order, then the two overall rows.
inline std::vector<GroupRow> group_report(const std::vector<EventError>& events, double threshold_pct = 50.0) {
  std::map<int, std::vector<EventError>> by_bin[2];
  std::vector<EventError> all[2];
  for (const auto& e : events) {
    const int p = e.phase == Phase::ed ? 0 : 1;
    by_bin[p][e.orientation].push_back(e);
    all[p].push_back(e);
  }
  std::vector<GroupRow> rows;
  std::map<int, bool> bins;
  for (const auto& e : events) bins[e.orientation] = true;
  for (const auto& [bin, _] : bins)
    for (int p = 0; p < 2; ++p)
      if (by_bin[p].count(bin)) rows.push_back({bin, p ? Phase::es : Phase::ed, summarize(by_bin[p][bin], threshold_pct)});
  for (int p = 0; p < 2; ++p) rows.push_back({std::nullopt, p ? Phase::es : Phase::ed, summarize(all[p], threshold_pct)});
  return rows;
}

/// max − min of per-bin mean MAE-frames for one phase (bins with no matched event are ignored).
inline double orientation_spread(const std::vector<GroupRow>& rows, Phase phase) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : rows)
    if (r.orientation && r.phase == phase && !std::isnan(r.metrics.mae_frames.mean)) {
      lo = std::min(lo, r.metrics.mae_frames.mean);
      hi = std::max(hi, r.metrics.mae_frames.mean);
    }
  return hi >= lo ? hi - lo : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline nlohmann::json stat_json(const Stat& s) {
  auto f = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"mean", f(s.mean)}, {"std", f(s.std)}};
}

}  // namespace detail

inline std::string events_csv(const std::vector<EventError>& events) {
  std::ostringstream os;
  os << "video_id,phase,orientation,fps,cycle_frames,gt_frame,pred_frame,error_frames,error_ms,error_pct_cycle\n";
  for (const auto& e : events) {
    os << e.video_id << ',' << to_string(e.phase) << ',' << e.orientation << ',' << detail::num(e.fps) << ','
       << detail::num(e.cycle_frames) << ',' << e.gt << ',';
    if (e.pred)
      os << *e.pred << ',' << e.error_frames << ',' << detail::num(e.error_ms()) << ','
         << detail::num(e.error_pct_cycle());
    else
      os << ",,,";
    os << '\n';
  }
  return os.str();
}

inline std::string grouped_csv(const std::vector<GroupRow>& rows) {
  std::ostringstream os;
  os << "orientation,phase,n_events,matched,unmatched,mae_frames_mean,mae_frames_std,mae_ms_mean,mae_ms_std,"
        "mae_pct_cycle_mean,mae_pct_cycle_std,success_rate\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    os << (r.orientation ? std::to_string(*r.orientation) : "all") << ',' << to_string(r.phase) << ',' << m.n_events
       << ',' << m.matched << ',' << m.unmatched << ',' << detail::num(m.mae_frames.mean) << ','
       << detail::num(m.mae_frames.std) << ',' << detail::num(m.mae_ms.mean) << ',' << detail::num(m.mae_ms.std) << ','
       << detail::num(m.mae_pct_cycle.mean) << ',' << detail::num(m.mae_pct_cycle.std) << ','
       << detail::num(m.success_rate) << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const MetricsRecord& m) {
  return {{"mae_frames", detail::stat_json(m.mae_frames)},
          {"mae_ms", detail::stat_json(m.mae_ms)},
          {"mae_pct_cycle", detail::stat_json(m.mae_pct_cycle)},
          {"success_rate", std::isnan(m.success_rate) ? nlohmann::json(nullptr) : nlohmann::json(m.success_rate)},
          {"n_events", m.n_events},
          {"matched", m.matched},
          {"unmatched", m.unmatched}};
}

inline nlohmann::json summary_json(const std::vector<GroupRow>& rows) {
  nlohmann::json j;
  for (const auto& r : rows)
    if (!r.orientation) j["overall"][to_string(r.phase)] = to_json(r.metrics);
  for (const auto phase : {Phase::ed, Phase::es}) {
    const double s = orientation_spread(rows, phase);
    j["orientation_spread_frames"][to_string(phase)] = std::isnan(s) ? nlohmann::json(nullptr) : nlohmann::json(s);
  }
  return j;
}

}  // namespace orbit
