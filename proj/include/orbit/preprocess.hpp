#pragma once

// Video preprocessing for training and inference: ROI crop, resize, temporal
// downsampling, exact 90° rotations and random clip sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "orbit/errors.hpp"
#include "orbit/image.hpp"
#include "orbit/rng.hpp"

namespace orbit {

struct CropBox {
  int y0 = 0, x0 = 0, height = 0, width = 0;
  bool operator==(const CropBox&) const = default;
};

enum class PreprocessMode { train, test };

/// Target sizes: training frames are resized larger than the model input so a
/// random crop of `input_size` can be taken (156 → 128 at full scale).
struct PreprocessSizes {
  int train_size = 78;
  int input_size = 64;
  int temporal_downsample = 2;

  static PreprocessSizes for_input(int input_size) {
    return {static_cast<int>(std::lround(input_size * 156.0 / 128.0)), input_size, 2};
  }
};

/// Quarter turns clockwise of a square video: out(i, j) = in(n−1−j, i) per turn.
template <class T>
Video<T> rotate_quarter(const Video<T>& v, int quarter_turns) {
  detail::require(v.height() == v.width(), "rotate_quarter: frames must be square");
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return v;
  const int n = v.height();
  Video<T> out(v.frames(), n, n);
  for (int t = 0; t < v.frames(); ++t)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        int si = i, sj = j;
        for (int r = 0; r < k; ++r) {
          const int pi = n - 1 - sj, pj = si;
          si = pi;
          sj = pj;
        }
        out(t, i, j) = v(t, si, sj);
      }
  return out;
}

template <class T>
Image<T> rotate_quarter(const Image<T>& img, int quarter_turns) {
  return rotate_quarter(Video<T>(std::vector<Image<T>>{img}), quarter_turns).frame(0);
}

/// The 0°, 90°, 180° and 270° clockwise members, in that order.
template <class T>
std::array<Video<T>, 4> rotation_augment(const Video<T>& v) {
  detail::require(v.height() == v.width(), "rotation_augment: frames must be square");
  return {v, rotate_quarter(v, 1), rotate_quarter(v, 2), rotate_quarter(v, 3)};
}

/// Bilinear resize with half-pixel centres (edge-clamped).
template <class T>
Video<T> resize_video(const Video<T>& v, int out_h, int out_w) {
  detail::require(out_h >= 1 && out_w >= 1, "resize_video: bad target size");
  if (out_h == v.height() && out_w == v.width()) return v;
  struct Tap {
    int i0, i1;
    T f;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double s = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double src = std::clamp((o + 0.5) * s - 0.5, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(src);
      t[o] = {i0, std::min(i0 + 1, in - 1), static_cast<T>(src - i0)};
    }
    return t;
  };
  const auto ty = taps(v.height(), out_h), tx = taps(v.width(), out_w);
  Video<T> out(v.frames(), out_h, out_w);
  for (int t = 0; t < v.frames(); ++t)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        const auto& a = ty[i];
        const auto& b = tx[j];
        const T top = (1 - b.f) * v(t, a.i0, b.i0) + b.f * v(t, a.i0, b.i1);
        const T bot = (1 - b.f) * v(t, a.i1, b.i0) + b.f * v(t, a.i1, b.i1);
        out(t, i, j) = (1 - a.f) * top + a.f * bot;
      }
  return out;
}

template <class T>
Video<T> crop_video(const Video<T>& v, const CropBox& box, int first_frame = 0, int frames = -1, int stride = 1) {
  detail::require(box.y0 >= 0 && box.x0 >= 0 && box.height >= 1 && box.width >= 1 &&
                      box.y0 + box.height <= v.height() && box.x0 + box.width <= v.width(),
                  "crop_video: crop box outside the frame");
  if (frames < 0) frames = (v.frames() - first_frame + stride - 1) / stride;
  detail::require(first_frame >= 0 && first_frame + (frames - 1) * stride < v.frames() || frames == 0,
                  "crop_video: frame range outside the video");
  Video<T> out(frames, box.height, box.width);
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < box.height; ++i)
      for (int j = 0; j < box.width; ++j) out(t, i, j) = v(first_frame + t * stride, box.y0 + i, box.x0 + j);
  return out;
}

/// Crop the ROI, then resize. Train mode resizes to `train_size` and keeps every
/// `temporal_downsample`-th frame; test mode resizes to `input_size` and keeps
/// all frames. Input intensities must already be in [0, 1]; values are clamped.
template <class T>
Video<T> preprocess_video(const Video<T>& raw, const CropBox& roi, PreprocessMode mode, const PreprocessSizes& sizes) {
  if (raw.empty()) throw DataError("preprocess_video: empty video");
  if (roi.y0 < 0 || roi.x0 < 0 || roi.height < 1 || roi.width < 1 || roi.y0 + roi.height > raw.height() ||
      roi.x0 + roi.width > raw.width())
    throw DataError("preprocess_video: crop box outside the frame");
  const int stride = mode == PreprocessMode::train ? sizes.temporal_downsample : 1;
  const int size = mode == PreprocessMode::train ? sizes.train_size : sizes.input_size;
  auto v = resize_video(crop_video(raw, roi, 0, -1, stride), size, size);
  for (auto& x : v.storage()) x = std::clamp(x, T(0), T(1));
  return v;
}

struct ClipWindow {
  int start = 0, y0 = 0, x0 = 0, length = 0, size = 0;
};

/// Uniformly drawn clip window: `length` consecutive frames and one square crop.
template <class T>
ClipWindow draw_clip_window(const Video<T>& v, int length, int crop, Rng& rng) {
  if (v.frames() < length)
    throw DataError("sample_clip: video has " + std::to_string(v.frames()) + " frames, clip needs " +
                    std::to_string(length));
  detail::require(crop >= 1 && crop <= v.height() && crop <= v.width(), "sample_clip: crop larger than frame");
  ClipWindow w;
  w.length = length;
  w.size = crop;
  w.start = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.frames() - length + 1)));
  w.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.height() - crop + 1)));
  w.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.width() - crop + 1)));
  return w;
}

template <class T>
Video<T> extract_clip(const Video<T>& v, const ClipWindow& w) {
  return crop_video(v, CropBox{w.y0, w.x0, w.size, w.size}, w.start, w.length);
}

template <class T>
Video<T> sample_clip(const Video<T>& v, int length, int crop, Rng& rng) {
  return extract_clip(v, draw_clip_window(v, length, crop, rng));
}

}  // namespace orbit
