#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "orbit/errors.hpp"

namespace orbit {

/// Single-channel H×W image, row-major.
template <class T>
class Image {
 public:
  Image() = default;
  Image(int height, int width, T fill = T(0))
      : height_(height), width_(width), values_(checked_size(height, width), fill) {}
  Image(int height, int width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    detail::require(values_.size() == checked_size(height, width), "Image: value count mismatch");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  T& operator()(int i, int j) { return values_[static_cast<std::size_t>(i) * width_ + j]; }
  T operator()(int i, int j) const { return values_[static_cast<std::size_t>(i) * width_ + j]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  bool same_shape(const Image& o) const { return height_ == o.height_ && width_ == o.width_; }
  bool operator==(const Image&) const = default;

  template <class U>
  Image<U> cast() const {
    return Image<U>(height_, width_, std::vector<U>(values_.begin(), values_.end()));
  }

 private:
  static std::size_t checked_size(int h, int w) {
    detail::require(h >= 1 && w >= 1, "Image: dimensions must be positive");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

/// Frames fed to the network must be at least 8×8 with even sides.
template <class T>
void validate_frame(const Image<T>& img) {
  detail::require(img.height() >= 8 && img.width() >= 8, "frame must be at least 8x8");
  detail::require(img.height() % 2 == 0 && img.width() % 2 == 0, "frame sides must be even");
  for (T v : img.values()) detail::require(std::isfinite(static_cast<double>(v)), "frame values must be finite");
}

struct DisplacementTag {};
struct VelocityTag {};
struct CoordTag {};

/// Two-channel H×W field stored channel-planar: plane 0 is dy (rows), plane 1 is dx (columns).
/// Displacements follow Φ(x) = x + u(x); coordinate grids hold absolute (y, x) positions.
template <class T, class Tag>
class Field {
 public:
  Field() = default;
  Field(int height, int width, T fill = T(0))
      : height_(height), width_(width), values_(checked_size(height, width), fill) {}
  Field(int height, int width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    detail::require(values_.size() == checked_size(height, width), "Field: value count mismatch");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  T& dy(int i, int j) { return values_[static_cast<std::size_t>(i) * width_ + j]; }
  T dy(int i, int j) const { return values_[static_cast<std::size_t>(i) * width_ + j]; }
  T& dx(int i, int j) { return values_[plane_size() + static_cast<std::size_t>(i) * width_ + j]; }
  T dx(int i, int j) const { return values_[plane_size() + static_cast<std::size_t>(i) * width_ + j]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  template <class OtherTag>
  bool same_shape(const Field<T, OtherTag>& o) const {
    return height_ == o.height() && width_ == o.width();
  }
  bool same_shape(const Image<T>& img) const { return height_ == img.height() && width_ == img.width(); }
  bool operator==(const Field&) const = default;

  /// Largest per-pixel vector norm.
  T max_norm() const {
    T best = 0;
    const std::size_t n = plane_size();
    for (std::size_t k = 0; k < n; ++k) {
      best = std::max(best, static_cast<T>(std::hypot(values_[k], values_[n + k])));
    }
    return best;
  }

  template <class OtherTag>
  Field<T, OtherTag> retag() const {
    return Field<T, OtherTag>(height_, width_, values_);
  }

 private:
  static std::size_t checked_size(int h, int w) {
    detail::require(h >= 1 && w >= 1, "Field: dimensions must be positive");
    return 2 * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

template <class T>
using DisplacementField = Field<T, DisplacementTag>;
template <class T>
using VelocityField = Field<T, VelocityTag>;
template <class T>
using CoordGrid = Field<T, CoordTag>;

/// T×H×W grayscale clip with intensities in [0, 1].
template <class T>
class Video {
 public:
  Video() = default;
  Video(int frames, int height, int width, T fill = T(0))
      : frames_(frames), height_(height), width_(width),
        values_(static_cast<std::size_t>(frames) * height * width, fill) {
    detail::require(frames >= 0 && height >= 1 && width >= 1, "Video: bad dimensions");
  }
  Video(int frames, int height, int width, std::vector<T> values)
      : frames_(frames), height_(height), width_(width), values_(std::move(values)) {
    detail::require(values_.size() == static_cast<std::size_t>(frames) * height * width,
                    "Video: value count mismatch");
  }
  explicit Video(const std::vector<Image<T>>& frames) {
    if (frames.empty()) return;
    height_ = frames.front().height();
    width_ = frames.front().width();
    frames_ = static_cast<int>(frames.size());
    values_.reserve(frames.size() * frames.front().size());
    for (const auto& f : frames) {
      detail::require(f.height() == height_ && f.width() == width_, "Video: frame size mismatch");
      values_.insert(values_.end(), f.values().begin(), f.values().end());
    }
  }

  int frames() const { return frames_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t frame_size() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return frames_ == 0; }

  T& operator()(int t, int i, int j) { return values_[t * frame_size() + static_cast<std::size_t>(i) * width_ + j]; }
  T operator()(int t, int i, int j) const {
    return values_[t * frame_size() + static_cast<std::size_t>(i) * width_ + j];
  }

  std::span<const T> frame_values(int t) const { return {values_.data() + t * frame_size(), frame_size()}; }
  std::span<T> frame_values(int t) { return {values_.data() + t * frame_size(), frame_size()}; }

  Image<T> frame(int t) const {
    auto s = frame_values(t);
    return Image<T>(height_, width_, std::vector<T>(s.begin(), s.end()));
  }

  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }
  bool operator==(const Video&) const = default;

  template <class U>
  Video<U> cast() const {
    return Video<U>(frames_, height_, width_, std::vector<U>(values_.begin(), values_.end()));
  }

 private:
  int frames_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

}  // namespace orbit
