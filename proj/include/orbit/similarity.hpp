#pragma once

// Windowed local normalized cross-correlation and the video-level
// registration loss built on pairwise flows.

#include <utility>
#include <vector>

#include "orbit/diffeo.hpp"

namespace orbit {

struct LossConfig {
  int window = 9;
  int max_offset = 5;
  double epsilon = 1e-5;
  int exp_steps = kDefaultExpSteps;
  /// Weight of the optional diffusion penalty on velocities; 0 reproduces the plain registration loss.
  double smoothness_weight = 0.0;

  void validate() const {
    detail::require(window >= 3 && window % 2 == 1, "LossConfig: window must be odd and >= 3");
    detail::require(max_offset >= 1, "LossConfig: max_offset must be >= 1");
    detail::require(epsilon > 0, "LossConfig: epsilon must be positive");
    detail::require(exp_steps >= 1, "LossConfig: exp_steps must be >= 1");
    detail::require(smoothness_weight >= 0, "LossConfig: smoothness_weight must be >= 0");
  }
};

namespace kernels {

/// Sum over the (2r+1)² window centred on each pixel; out-of-image taps contribute zero.
template <class T>
void box_sum(const T* in, int h, int w, int r, T* out) {
  std::vector<T> tmp(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    const T* row = in + static_cast<std::size_t>(i) * w;
    for (int j = 0; j < w; ++j) {
      T s = 0;
      const int lo = std::max(0, j - r), hi = std::min(w - 1, j + r);
      for (int k = lo; k <= hi; ++k) s += row[k];
      tmp[static_cast<std::size_t>(i) * w + j] = s;
    }
  }
  for (int i = 0; i < h; ++i) {
    const int lo = std::max(0, i - r), hi = std::min(h - 1, i + r);
    T* orow = out + static_cast<std::size_t>(i) * w;
    for (int j = 0; j < w; ++j) orow[j] = 0;
    for (int k = lo; k <= hi; ++k) {
      const T* trow = tmp.data() + static_cast<std::size_t>(k) * w;
      for (int j = 0; j < w; ++j) orow[j] += trow[j];
    }
  }
}

/// Number of in-image pixels in the window around (i, j).
inline int window_count(int i, int j, int h, int w, int r) {
  const int rows = std::min(h - 1, i + r) - std::max(0, i - r) + 1;
  const int cols = std::min(w - 1, j + r) - std::max(0, j - r) + 1;
  return rows * cols;
}

template <class T>
struct NccStats {
  std::vector<T> sa, sb, saa, sbb, sab, count;
};

template <class T>
NccStats<T> ncc_stats(const T* a, const T* b, int h, int w, int r) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<T> aa(n), bb(n), ab(n);
  for (std::size_t k = 0; k < n; ++k) {
    aa[k] = a[k] * a[k];
    bb[k] = b[k] * b[k];
    ab[k] = a[k] * b[k];
  }
  NccStats<T> s;
  s.sa.resize(n);
  s.sb.resize(n);
  s.saa.resize(n);
  s.sbb.resize(n);
  s.sab.resize(n);
  s.count.resize(n);
  box_sum(a, h, w, r, s.sa.data());
  box_sum(b, h, w, r, s.sb.data());
  box_sum(aa.data(), h, w, r, s.saa.data());
  box_sum(bb.data(), h, w, r, s.sbb.data());
  box_sum(ab.data(), h, w, r, s.sab.data());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) s.count[static_cast<std::size_t>(i) * w + j] = static_cast<T>(window_count(i, j, h, w, r));
  return s;
}

/// Mean over pixels of cross² / (var_a · var_b + eps), where cross and var are
/// window sums of centred products (n·cov and n·var).
template <class T>
T ncc_forward(const T* a, const T* b, int h, int w, int window, T eps) {
  const int r = window / 2;
  const auto s = ncc_stats(a, b, h, w, r);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  T total = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const T cnt = s.count[k];
    const T cross = s.sab[k] - s.sa[k] * s.sb[k] / cnt;
    const T va = s.saa[k] - s.sa[k] * s.sa[k] / cnt;
    const T vb = s.sbb[k] - s.sb[k] * s.sb[k] / cnt;
    total += cross * cross / (va * vb + eps);
  }
  return total / static_cast<T>(n);
}

template <class T>
void ncc_backward(const T* a, const T* b, int h, int w, int window, T eps, T gout, T* ga, T* gb) {
  const int r = window / 2;
  const auto s = ncc_stats(a, b, h, w, r);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  const T gpix = gout / static_cast<T>(n);
  std::vector<T> g_sa(n), g_sb(n), g_saa(n), g_sbb(n), g_sab(n);
  for (std::size_t k = 0; k < n; ++k) {
    const T cnt = s.count[k];
    const T cross = s.sab[k] - s.sa[k] * s.sb[k] / cnt;
    const T va = s.saa[k] - s.sa[k] * s.sa[k] / cnt;
    const T vb = s.sbb[k] - s.sb[k] * s.sb[k] / cnt;
    const T den = va * vb + eps;
    const T cc = cross * cross / den;
    const T d_cross = gpix * T(2) * cross / den;
    const T d_va = -gpix * cc * vb / den;
    const T d_vb = -gpix * cc * va / den;
    g_sab[k] = d_cross;
    g_saa[k] = d_va;
    g_sbb[k] = d_vb;
    g_sa[k] = -d_cross * s.sb[k] / cnt - T(2) * d_va * s.sa[k] / cnt;
    g_sb[k] = -d_cross * s.sa[k] / cnt - T(2) * d_vb * s.sb[k] / cnt;
  }
  // The window-sum operator is self-adjoint (symmetric window, same clipping).
  std::vector<T> b_sa(n), b_sb(n), b_saa(n), b_sbb(n), b_sab(n);
  box_sum(g_sab.data(), h, w, r, b_sab.data());
  if (ga) {
    box_sum(g_sa.data(), h, w, r, b_sa.data());
    box_sum(g_saa.data(), h, w, r, b_saa.data());
    for (std::size_t k = 0; k < n; ++k) ga[k] += b_sa[k] + T(2) * a[k] * b_saa[k] + b[k] * b_sab[k];
  }
  if (gb) {
    box_sum(g_sb.data(), h, w, r, b_sb.data());
    box_sum(g_sbb.data(), h, w, r, b_sbb.data());
    for (std::size_t k = 0; k < n; ++k) gb[k] += b_sb[k] + T(2) * b[k] * b_sbb[k] + a[k] * b_sab[k];
  }
}

}  // namespace kernels

/// Spatial mean of the squared local correlation coefficient over window×window neighbourhoods.
template <class T>
T local_ncc(const Image<T>& a, const Image<T>& b, int window = 9, T epsilon = T(1e-5)) {
  detail::require(a.same_shape(b), "local_ncc: shape mismatch");
  detail::require(window >= 1 && window % 2 == 1, "local_ncc: window must be odd");
  return kernels::ncc_forward(a.values().data(), b.values().data(), a.height(), a.width(), window, epsilon);
}

/// Ordered (t, t+f) frame pairs registered by the loss, grouped by offset f = 1..max_offset.
inline std::vector<std::pair<int, int>> registration_pairs(int frames, int max_offset) {
  std::vector<std::pair<int, int>> pairs;
  for (int f = 1; f <= std::min(max_offset, frames - 1); ++f)
    for (int t = 0; t + f < frames; ++t) pairs.emplace_back(t, t + f);
  return pairs;
}

namespace ad {

template <class T>
Var<T> local_ncc(const Var<T>& a, const Var<T>& b, int window = 9, T epsilon = T(1e-5)) {
  orbit::detail::require(a.shape() == b.shape(), "local_ncc: shape mismatch");
  orbit::detail::require(window >= 1 && window % 2 == 1, "local_ncc: window must be odd");
  int c, h, w;
  detail::image_dims(a, c, h, w);
  orbit::detail::require(c == 1, "local_ncc: single-channel images required");
  const T value = kernels::ncc_forward(a.value().data(), b.value().data(), h, w, window, epsilon);
  return make_op<T>({1}, {value}, {a, b}, [h, w, window, epsilon](Node<T>& self) {
    kernels::ncc_backward(self.parents[0]->value.data(), self.parents[1]->value.data(), h, w, window, epsilon,
                          self.grad[0], self.parent_grad(0), self.parent_grad(1));
  });
}

/// Negative sum over all frame pairs (t, t+f), f ≤ max_offset, of the forward
/// and backward NCC after warping each frame with the pairwise flow
/// exp(V_target_side − V_other). `velocities` is [T,2,H,W].
template <class T>
Var<T> video_registration_loss(const Video<T>& video, const Var<T>& velocities, const LossConfig& cfg) {
  cfg.validate();
  const int n = video.frames(), h = video.height(), w = video.width();
  orbit::detail::require(n >= 2, "video_registration_loss: need at least 2 frames");
  orbit::detail::require(velocities.shape() == Shape({n, 2, h, w}),
                         "video_registration_loss: velocities must be [T,2,H,W] matching the video, got " +
                             shape_str(velocities.shape()));
  std::vector<Var<T>> frames, vel;
  frames.reserve(n);
  vel.reserve(n);
  for (int t = 0; t < n; ++t) {
    auto f = video.frame_values(t);
    frames.push_back(Var<T>::constant({h, w}, std::vector<T>(f.begin(), f.end())));
    vel.push_back(select(velocities, t));
  }
  const T eps = static_cast<T>(cfg.epsilon);
  std::vector<Var<T>> terms;
  for (const auto& [t, u] : registration_pairs(n, cfg.max_offset)) {
    // Φ_{t←u} = exp(V_t − V_u) applied to I_t is compared with I_u, and vice versa.
    const auto fwd = exp_svf(sub(vel[t], vel[u]), cfg.exp_steps);
    const auto bwd = exp_svf(sub(vel[u], vel[t]), cfg.exp_steps);
    terms.push_back(local_ncc(warp(frames[t], fwd), frames[u], cfg.window, eps));
    terms.push_back(local_ncc(warp(frames[u], bwd), frames[t], cfg.window, eps));
  }
  auto loss = scale(add_scalars(terms), T(-1));
  if (cfg.smoothness_weight > 0) {
    std::vector<Var<T>> pen;
    for (int t = 0; t < n; ++t) pen.push_back(smoothness_penalty(vel[t]));
    loss = add(loss, scale(add_scalars(pen), static_cast<T>(cfg.smoothness_weight)));
  }
  return loss;
}

}  // namespace ad

template <class T>
T video_registration_loss(const Video<T>& video, const std::vector<VelocityField<T>>& velocities,
                          const LossConfig& cfg) {
  detail::require(static_cast<int>(velocities.size()) == video.frames(),
                  "video_registration_loss: one velocity field per frame required");
  std::vector<T> packed;
  for (const auto& v : velocities) {
    detail::require(v.height() == video.height() && v.width() == video.width(),
                    "video_registration_loss: velocity field shape mismatch");
    packed.insert(packed.end(), v.values().begin(), v.values().end());
  }
  const auto vel = ad::Var<T>::constant({video.frames(), 2, video.height(), video.width()}, std::move(packed));
  return ad::video_registration_loss(video, vel, cfg).item();
}

}  // namespace orbit
