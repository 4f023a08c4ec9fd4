#pragma once

// Analytic beating-heart phantom with known ED/ES frames.
//
// The phantom is an elliptical myocardial wall with a septum and an
// atrioventricular band (four chambers) on a smooth textured background. At
// cycle phase θ the heart is scaled about its centre by r(θ) = 1 − A·s(θ),
// where s rises by a raised cosine over [0, systole_fraction] and falls back
// over the rest of the cycle. ED is θ = 0 (largest area), ES is
// θ = systole_fraction (smallest area).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "orbit/errors.hpp"
#include "orbit/image.hpp"
#include "orbit/preprocess.hpp"
#include "orbit/rng.hpp"

namespace orbit {

struct SynthParams {
  double fps = 40.0;
  double heart_rate = 120.0;
  double systole_fraction = 0.4;
  double contraction_amplitude = 0.18;
  int orientation = 0;  // degrees, multiple of 45
  double noise = 0.02;  // speckle variance
  std::uint64_t texture_seed = 0;
  std::uint64_t noise_seed = 1;
  int num_frames = 100;
  int frame_size = 80;
  /// Cycle phase at frame 0, in [0, 1).
  double phase_offset = 0.0;

  double period_frames() const { return 60.0 * fps / heart_rate; }

  void validate() const {
    detail::require(fps > 0 && heart_rate > 0, "SynthParams: fps and heart_rate must be positive");
    detail::require(systole_fraction > 0 && systole_fraction < 1, "SynthParams: systole_fraction must be in (0,1)");
    detail::require(contraction_amplitude >= 0 && contraction_amplitude < 0.5,
                    "SynthParams: contraction_amplitude must be in [0, 0.5)");
    detail::require(orientation >= 0 && orientation < 360 && orientation % 45 == 0,
                    "SynthParams: orientation must be one of 0, 45, ..., 315");
    detail::require(noise >= 0, "SynthParams: noise must be >= 0");
    detail::require(num_frames >= 1, "SynthParams: num_frames must be >= 1");
    detail::require(frame_size >= 16 && frame_size % 2 == 0, "SynthParams: frame_size must be even and >= 16");
    detail::require(phase_offset >= 0 && phase_offset < 1, "SynthParams: phase_offset must be in [0,1)");
  }
};

struct GroundTruth {
  std::vector<int> ed_frames;
  std::vector<int> es_frames;
  double period_frames = 0;
  int orientation = 0;
};

/// θ_t = frac(t · HR / (60 · fps) + phase_offset).
inline std::vector<double> phase_curve(const SynthParams& p) {
  p.validate();
  std::vector<double> theta(p.num_frames);
  const double rate = p.heart_rate / (60.0 * p.fps);
  for (int t = 0; t < p.num_frames; ++t) {
    const double x = t * rate + p.phase_offset;
    theta[t] = x - std::floor(x);
  }
  return theta;
}

/// Contraction profile s(θ) ∈ [0, 1]: 0 at ED, 1 at ES.
inline double contraction_profile(double theta, double systole_fraction) {
  constexpr double pi = std::numbers::pi;
  theta -= std::floor(theta);
  if (theta <= systole_fraction) return 0.5 * (1 - std::cos(pi * theta / systole_fraction));
  return 0.5 * (1 + std::cos(pi * (theta - systole_fraction) / (1 - systole_fraction)));
}

/// Events at the rounded continuous times (k − phase_offset)·P and (k + sf − phase_offset)·P inside the video.
inline GroundTruth ground_truth(const SynthParams& p) {
  p.validate();
  GroundTruth g;
  g.period_frames = p.period_frames();
  g.orientation = p.orientation;
  const double per = g.period_frames;
  for (int k = 0;; ++k) {
    const double ed = (k - p.phase_offset) * per;
    const double es = (k + p.systole_fraction - p.phase_offset) * per;
    if (std::lround(ed) > p.num_frames - 1 && std::lround(es) > p.num_frames - 1) break;
    const long red = std::lround(ed), res = std::lround(es);
    if (red >= 0 && red <= p.num_frames - 1) g.ed_frames.push_back(static_cast<int>(red));
    if (res >= 0 && res <= p.num_frames - 1) g.es_frames.push_back(static_cast<int>(res));
  }
  return g;
}

/// Events at least `margin` frames from both ends of a `frames`-long video.
inline std::vector<int> interior_events(const std::vector<int>& events, int frames, int margin) {
  std::vector<int> out;
  for (int e : events)
    if (e >= margin && e <= frames - 1 - margin) out.push_back(e);
  return out;
}

namespace detail {

struct Wave {
  double ky, kx, phase, amp;
};

inline std::vector<Wave> random_waves(Rng& rng, int count, double kmin, double kmax) {
  std::vector<Wave> w(count);
  for (auto& x : w) {
    const double k = rng.uniform(kmin, kmax), dir = rng.uniform(0, 2 * std::numbers::pi);
    x = {k * std::sin(dir), k * std::cos(dir), rng.uniform(0, 2 * std::numbers::pi), rng.uniform(0.5, 1.0)};
  }
  double total = 0;
  for (const auto& x : w) total += x.amp;
  for (auto& x : w) x.amp /= total;
  return w;
}

/// Sum of plane waves normalised to [-1, 1].
inline double texture(const std::vector<Wave>& w, double y, double x) {
  double s = 0;
  for (const auto& q : w) s += q.amp * std::sin(q.ky * y + q.kx * x + q.phase);
  return s;
}

/// 0 outside, 1 inside, linear over one pixel around d = 0 (d in pixels, positive inside).
inline double soft_inside(double d) { return std::clamp(d + 0.5, 0.0, 1.0); }

/// Heart geometry in pixels, relative to the frame centre, apex pointing up at 0°.
struct Phantom {
  double ay, ax;         // outer semi-axes
  double wall;           // wall thickness
  double septum_x, septum_w;
  double av_y, av_w;
  double cy, cx;         // heart centre offset from frame centre
  std::vector<Wave> background, myocardium;
};

inline Phantom make_phantom(int size, std::uint64_t texture_seed) {
  Rng rng(texture_seed);
  const double h = size / 2.0;
  Phantom ph;
  ph.ay = h * rng.uniform(0.58, 0.66);
  ph.ax = h * rng.uniform(0.46, 0.54);
  ph.wall = h * rng.uniform(0.11, 0.14);
  ph.septum_x = h * rng.uniform(-0.06, 0.06);
  ph.septum_w = h * rng.uniform(0.08, 0.11);
  ph.av_y = h * rng.uniform(0.12, 0.22);
  ph.av_w = h * rng.uniform(0.07, 0.09);
  ph.cy = h * rng.uniform(-0.04, 0.04);
  ph.cx = h * rng.uniform(-0.04, 0.04);
  ph.background = random_waves(rng, 6, 0.06, 0.20);
  ph.myocardium = random_waves(rng, 6, 0.25, 0.55);
  return ph;
}

struct Membership {
  double outer = 0;   // inside the heart outline
  double tissue = 0;  // wall, septum or AV band, relative to the heart interior
  double qy = 0, qx = 0;
};

/// Soft membership at scene point (y, x) (pixels from the frame centre, unrotated) for heart scale r.
inline Membership membership(const Phantom& ph, double y, double x, double r) {
  Membership m;
  m.qy = (y - ph.cy) / r;
  m.qx = (x - ph.cx) / r;
  const double rho = std::hypot(m.qy / ph.ay, m.qx / ph.ax);
  // Approximate signed distances (template pixels, times r for image pixels).
  const double d_outer = (1 - rho) * 0.5 * (ph.ay + ph.ax) * r;
  if (d_outer < -1) return m;
  const double iy = ph.ay - ph.wall, ix = ph.ax - ph.wall;
  const double rho_in = std::hypot(m.qy / iy, m.qx / ix);
  const double d_inner = (1 - rho_in) * 0.5 * (iy + ix) * r;
  m.outer = soft_inside(d_outer);
  const double cavity = soft_inside(d_inner);
  const double septum = soft_inside((0.5 * ph.septum_w - std::abs(m.qx - ph.septum_x)) * r);
  const double av = soft_inside((0.5 * ph.av_w - std::abs(m.qy - ph.av_y)) * r);
  m.tissue = std::max(1 - cavity, cavity * std::max(septum, av));
  return m;
}

inline double render_point(const Phantom& ph, double y, double x, double r) {
  const double bg = 0.30 + 0.10 * texture(ph.background, y, x);
  const auto m = membership(ph, y, x, r);
  if (m.outer <= 0) return bg;
  const double myo = 0.74 + 0.12 * texture(ph.myocardium, m.qy, m.qx);
  const double blood = 0.08;
  const double heart = m.tissue * myo + (1 - m.tissue) * blood;
  return (1 - m.outer) * bg + m.outer * heart;
}

}  // namespace detail

namespace detail {

/// Evaluates f(scene_y, scene_x) on an n·ss grid in the base orientation (0° or 45°).
template <class F>
Image<double> sample_base(const SynthParams& p, int ss, F&& f) {
  const int n = p.frame_size * ss;
  const double c = (n - 1) / 2.0;
  const double beta = (p.orientation % 90) * std::numbers::pi / 180.0;
  const double cb = std::cos(beta), sb = std::sin(beta);
  Image<double> img(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double y = (i - c) / ss, x = (j - c) / ss;
      // Clockwise by β, matching the quarter-turn convention at β = 90°: (y, x) shows scene point (−x, y).
      img(i, j) = f(y * cb - x * sb, y * sb + x * cb);
    }
  return img;
}

inline double heart_scale(const SynthParams& p, double theta) {
  return 1 - p.contraction_amplitude * contraction_profile(theta, p.systole_fraction);
}

}  // namespace detail

/// Noise-free frame at cycle phase θ rendered in the base orientation (0° or 45°), before any quarter turn.
inline Image<double> render_base_frame(const SynthParams& p, const detail::Phantom& ph, double theta) {
  const double r = detail::heart_scale(p, theta);
  return detail::sample_base(p, 1, [&](double y, double x) { return detail::render_point(ph, y, x, r); });
}

/// Soft myocardial tissue mask of frame t on a grid supersampled `ss` times, in the video's orientation.
inline Image<double> render_tissue_mask(const SynthParams& p, int t, int ss = 1) {
  p.validate();
  detail::require(t >= 0 && t < p.num_frames && ss >= 1, "render_tissue_mask: bad frame or supersampling");
  const auto ph = detail::make_phantom(p.frame_size, p.texture_seed);
  const double r = detail::heart_scale(p, phase_curve(p)[t]);
  const auto img = detail::sample_base(p, ss, [&](double y, double x) {
    const auto m = detail::membership(ph, y, x, r);
    return m.outer * m.tissue;
  });
  return rotate_quarter(img, p.orientation / 90);
}

/// Renders the video; the scene is drawn at orientation mod 90 and turned by exact quarter turns,
/// so orientations differing by 90° are exact grid rotations of each other (noise included).
inline std::pair<Video<double>, GroundTruth> generate_video(const SynthParams& p) {
  p.validate();
  const auto ph = detail::make_phantom(p.frame_size, p.texture_seed);
  const auto theta = phase_curve(p);
  Rng noise(p.noise_seed);
  const double sd = std::sqrt(p.noise);
  std::vector<Image<double>> frames;
  frames.reserve(p.num_frames);
  for (int t = 0; t < p.num_frames; ++t) {
    auto img = render_base_frame(p, ph, theta[t]);
    for (auto& v : img.values()) {
      const double g = noise.normal();
      if (sd > 0) v = std::clamp(v * (1 + sd * g), 0.0, 1.0);
    }
    frames.push_back(std::move(img));
  }
  return {rotate_quarter(Video<double>(frames), p.orientation / 90), ground_truth(p)};
}

struct SynthRanges {
  double fps_min = 30, fps_max = 80;
  double hr_min = 110, hr_max = 160;
  double systole_fraction = 0.4;
  double contraction_amplitude = 0.18;
  double noise = 0.02;
  int num_frames = 100;
  int frame_size = 80;
  bool random_phase = true;

  void validate() const {
    detail::require(fps_min > 0 && fps_min <= fps_max, "SynthRanges: bad fps range");
    detail::require(hr_min > 0 && hr_min <= hr_max, "SynthRanges: bad heart-rate range");
  }
};

/// Parameter draws for a dataset. Orientation bins are dealt from successive
/// seeded permutations of the 8 bins, so every block of 8 videos covers all bins.
inline std::vector<SynthParams> draw_dataset_params(int n_videos, const SynthRanges& ranges, std::uint64_t seed) {
  if (n_videos < 1) throw ConfigError("dataset needs at least one video");
  ranges.validate();
  Rng rng(seed);
  std::vector<SynthParams> out;
  std::array<int, 8> bins{};
  for (int i = 0; i < n_videos; ++i) {
    if (i % 8 == 0) {
      for (int b = 0; b < 8; ++b) bins[b] = 45 * b;
      rng.shuffle(bins.begin(), bins.end());
    }
    SynthParams p;
    p.orientation = bins[i % 8];
    p.fps = rng.uniform(ranges.fps_min, ranges.fps_max);
    p.heart_rate = rng.uniform(ranges.hr_min, ranges.hr_max);
    p.systole_fraction = ranges.systole_fraction;
    p.contraction_amplitude = ranges.contraction_amplitude;
    p.noise = ranges.noise;
    p.num_frames = ranges.num_frames;
    p.frame_size = ranges.frame_size;
    p.phase_offset = ranges.random_phase ? rng.uniform() : 0.0;
    p.texture_seed = rng.fork();
    p.noise_seed = rng.fork();
    p.validate();
    out.push_back(p);
  }
  return out;
}

}  // namespace orbit
