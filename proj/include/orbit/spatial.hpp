#pragma once

// Bilinear sampling, warping and displacement composition on 2-D grids.
//
// Conventions used throughout the library:
//   * fields are channel-planar with plane 0 = dy (row offset) and plane 1 = dx;
//   * a displacement u defines Φ(x) = x + u(x);
//   * sampling positions outside the image are clamped to the border.

#include <algorithm>
#include <cmath>
#include <vector>

#include "orbit/autodiff.hpp"
#include "orbit/image.hpp"

namespace orbit {

namespace kernels {

template <class T>
struct Tap {
  int y0, y1, x0, x1;
  T wy, wx;
  // Derivative of the clamped coordinate w.r.t. the raw one (0 outside the image).
  T dclamp_y, dclamp_x;
};

template <class T>
inline Tap<T> bilinear_tap(T y, T x, int h, int w) {
  Tap<T> t{};
  t.dclamp_y = (y >= T(0) && y <= T(h - 1)) ? T(1) : T(0);
  t.dclamp_x = (x >= T(0) && x <= T(w - 1)) ? T(1) : T(0);
  const T yc = std::clamp(y, T(0), T(h - 1));
  const T xc = std::clamp(x, T(0), T(w - 1));
  if (h == 1) {
    t.y0 = t.y1 = 0;
    t.wy = 0;
  } else {
    t.y0 = std::min(static_cast<int>(std::floor(yc)), h - 2);
    t.y1 = t.y0 + 1;
    t.wy = yc - static_cast<T>(t.y0);
  }
  if (w == 1) {
    t.x0 = t.x1 = 0;
    t.wx = 0;
  } else {
    t.x0 = std::min(static_cast<int>(std::floor(xc)), w - 2);
    t.x1 = t.x0 + 1;
    t.wx = xc - static_cast<T>(t.x0);
  }
  return t;
}

/// Samples `channels` planes of an h×w image at the positions held in a
/// 2-plane coordinate array of oh×ow points. When `relative` is set the
/// coordinate array is a displacement added to the output pixel position.
template <class T>
void sample_forward(const T* img, int channels, int h, int w, const T* coords, int oh, int ow, bool relative,
                    T* out) {
  const std::size_t np = static_cast<std::size_t>(oh) * ow;
  const std::size_t ip = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * ow + j;
      T y = coords[p], x = coords[np + p];
      if (relative) {
        y += static_cast<T>(i);
        x += static_cast<T>(j);
      }
      const auto t = bilinear_tap(y, x, h, w);
      const T w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx, w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
      for (int c = 0; c < channels; ++c) {
        const T* im = img + c * ip;
        out[c * np + p] = w00 * im[t.y0 * w + t.x0] + w01 * im[t.y0 * w + t.x1] + w10 * im[t.y1 * w + t.x0] +
                          w11 * im[t.y1 * w + t.x1];
      }
    }
  }
}

/// Accumulates gradients of sample_forward into gimg and/or gcoords (either may be null).
template <class T>
void sample_backward(const T* img, int channels, int h, int w, const T* coords, int oh, int ow, bool relative,
                     const T* gout, T* gimg, T* gcoords) {
  const std::size_t np = static_cast<std::size_t>(oh) * ow;
  const std::size_t ip = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * ow + j;
      T y = coords[p], x = coords[np + p];
      if (relative) {
        y += static_cast<T>(i);
        x += static_cast<T>(j);
      }
      const auto t = bilinear_tap(y, x, h, w);
      T gy = 0, gx = 0;
      for (int c = 0; c < channels; ++c) {
        const T g = gout[c * np + p];
        if (g == T(0)) continue;
        const T* im = img + c * ip;
        const T v00 = im[t.y0 * w + t.x0], v01 = im[t.y0 * w + t.x1];
        const T v10 = im[t.y1 * w + t.x0], v11 = im[t.y1 * w + t.x1];
        if (gimg) {
          T* gi = gimg + c * ip;
          gi[t.y0 * w + t.x0] += g * (1 - t.wy) * (1 - t.wx);
          gi[t.y0 * w + t.x1] += g * (1 - t.wy) * t.wx;
          gi[t.y1 * w + t.x0] += g * t.wy * (1 - t.wx);
          gi[t.y1 * w + t.x1] += g * t.wy * t.wx;
        }
        if (gcoords) {
          gy += g * ((1 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
          gx += g * ((1 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
        }
      }
      if (gcoords) {
        gcoords[p] += gy * t.dclamp_y;
        gcoords[np + p] += gx * t.dclamp_x;
      }
    }
  }
}

/// out = inner + sample(outer, grid + inner); both fields 2×h×w.
template <class T>
void compose_forward(const T* outer, const T* inner, int h, int w, T* out) {
  const std::size_t np = static_cast<std::size_t>(h) * w;
  sample_forward(outer, 2, h, w, inner, h, w, true, out);
  for (std::size_t k = 0; k < 2 * np; ++k) out[k] += inner[k];
}

template <class T>
void compose_backward(const T* outer, const T* inner, int h, int w, const T* gout, T* gouter, T* ginner) {
  const std::size_t np = static_cast<std::size_t>(h) * w;
  if (ginner)
    for (std::size_t k = 0; k < 2 * np; ++k) ginner[k] += gout[k];
  sample_backward(outer, 2, h, w, inner, h, w, true, gout, gouter, ginner);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Value API

/// Grid whose entry (i, j) is the absolute position (i, j).
template <class T = double>
CoordGrid<T> identity_grid(int height, int width) {
  CoordGrid<T> g(height, width);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      g.dy(i, j) = static_cast<T>(i);
      g.dx(i, j) = static_cast<T>(j);
    }
  return g;
}

template <class T>
Image<T> bilinear_sample(const Image<T>& img, const CoordGrid<T>& coords) {
  detail::require(coords.same_shape(img), "bilinear_sample: coordinate grid shape does not match image");
  Image<T> out(img.height(), img.width());
  kernels::sample_forward(img.values().data(), 1, img.height(), img.width(), coords.values().data(), coords.height(),
                          coords.width(), false, out.values().data());
  return out;
}

/// img ∘ Φ with Φ(x) = x + disp(x).
template <class T>
Image<T> warp(const Image<T>& img, const DisplacementField<T>& disp) {
  detail::require(disp.same_shape(img), "warp: displacement shape does not match image");
  Image<T> out(img.height(), img.width());
  kernels::sample_forward(img.values().data(), 1, img.height(), img.width(), disp.values().data(), disp.height(),
                          disp.width(), true, out.values().data());
  return out;
}

/// Displacement of Φ_outer ∘ Φ_inner: inner(x) + outer(x + inner(x)).
template <class T>
DisplacementField<T> compose_displacements(const DisplacementField<T>& outer, const DisplacementField<T>& inner) {
  detail::require(outer.same_shape(inner), "compose_displacements: shape mismatch");
  DisplacementField<T> out(outer.height(), outer.width());
  kernels::compose_forward(outer.values().data(), inner.values().data(), outer.height(), outer.width(),
                           out.values().data());
  return out;
}

/// det(I + ∇u) with central differences inside and one-sided differences on the border.
template <class T>
Image<T> jacobian_determinant(const DisplacementField<T>& disp) {
  const int h = disp.height(), w = disp.width();
  detail::require(h >= 3 && w >= 3, "jacobian_determinant: field must be at least 3x3");
  auto diff_y = [&](auto comp, int i, int j) -> T {
    if (i == 0) return comp(1, j) - comp(0, j);
    if (i == h - 1) return comp(h - 1, j) - comp(h - 2, j);
    return (comp(i + 1, j) - comp(i - 1, j)) / T(2);
  };
  auto diff_x = [&](auto comp, int i, int j) -> T {
    if (j == 0) return comp(i, 1) - comp(i, 0);
    if (j == w - 1) return comp(i, w - 1) - comp(i, w - 2);
    return (comp(i, j + 1) - comp(i, j - 1)) / T(2);
  };
  auto uy = [&](int i, int j) { return disp.dy(i, j); };
  auto ux = [&](int i, int j) { return disp.dx(i, j); };
  Image<T> det(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const T a = T(1) + diff_y(uy, i, j), b = diff_x(uy, i, j);
      const T c = diff_y(ux, i, j), d = T(1) + diff_x(ux, i, j);
      det(i, j) = a * d - b * c;
    }
  return det;
}

// ---------------------------------------------------------------------------
// Differentiable API. Images are [C,H,W] or [H,W]; fields are [2,H,W].

namespace ad {

namespace detail {
template <class T>
void image_dims(const Var<T>& img, int& c, int& h, int& w) {
  const auto& s = img.shape();
  orbit::detail::require(s.size() == 2 || s.size() == 3, "image Var must be [H,W] or [C,H,W]");
  c = s.size() == 3 ? s[0] : 1;
  h = s[s.size() - 2];
  w = s[s.size() - 1];
}
template <class T>
void field_dims(const Var<T>& f, int& h, int& w) {
  const auto& s = f.shape();
  orbit::detail::require(s.size() == 3 && s[0] == 2, "field Var must be [2,H,W], got " + shape_str(s));
  h = s[1];
  w = s[2];
}
}  // namespace detail

/// Samples img at absolute coordinates ([2,H,W]).
template <class T>
Var<T> bilinear_sample(const Var<T>& img, const Var<T>& coords) {
  int c, h, w, ch, cw;
  detail::image_dims(img, c, h, w);
  detail::field_dims(coords, ch, cw);
  orbit::detail::require(ch == h && cw == w, "bilinear_sample: coordinate grid shape does not match image");
  std::vector<T> out(img.size());
  kernels::sample_forward(img.value().data(), c, h, w, coords.value().data(), h, w, false, out.data());
  return make_op<T>(img.shape(), std::move(out), {img, coords}, [c, h, w](Node<T>& self) {
    kernels::sample_backward(self.parents[0]->value.data(), c, h, w, self.parents[1]->value.data(), h, w, false,
                             self.grad.data(), self.parent_grad(0), self.parent_grad(1));
  });
}

template <class T>
Var<T> warp(const Var<T>& img, const Var<T>& disp) {
  int c, h, w, dh, dw;
  detail::image_dims(img, c, h, w);
  detail::field_dims(disp, dh, dw);
  orbit::detail::require(dh == h && dw == w, "warp: displacement shape does not match image");
  std::vector<T> out(img.size());
  kernels::sample_forward(img.value().data(), c, h, w, disp.value().data(), h, w, true, out.data());
  return make_op<T>(img.shape(), std::move(out), {img, disp}, [c, h, w](Node<T>& self) {
    kernels::sample_backward(self.parents[0]->value.data(), c, h, w, self.parents[1]->value.data(), h, w, true,
                             self.grad.data(), self.parent_grad(0), self.parent_grad(1));
  });
}

template <class T>
Var<T> compose_displacements(const Var<T>& outer, const Var<T>& inner) {
  orbit::detail::require(outer.shape() == inner.shape(), "compose_displacements: shape mismatch");
  int h, w;
  detail::field_dims(outer, h, w);
  std::vector<T> out(outer.size());
  kernels::compose_forward(outer.value().data(), inner.value().data(), h, w, out.data());
  return make_op<T>(outer.shape(), std::move(out), {outer, inner}, [h, w](Node<T>& self) {
    kernels::compose_backward(self.parents[0]->value.data(), self.parents[1]->value.data(), h, w, self.grad.data(),
                              self.parent_grad(0), self.parent_grad(1));
  });
}

}  // namespace ad

/// Conversions between value types and Vars.
template <class T>
ad::Var<T> to_var(const Image<T>& img, bool requires_grad = false) {
  ad::Shape s{img.height(), img.width()};
  return requires_grad ? ad::Var<T>::parameter(s, img.storage()) : ad::Var<T>::constant(s, img.storage());
}

template <class T, class Tag>
ad::Var<T> to_var(const Field<T, Tag>& f, bool requires_grad = false) {
  ad::Shape s{2, f.height(), f.width()};
  return requires_grad ? ad::Var<T>::parameter(s, f.storage()) : ad::Var<T>::constant(s, f.storage());
}

template <class T>
Image<T> image_from_var(const ad::Var<T>& v) {
  const auto& s = v.shape();
  detail::require(s.size() >= 2, "image_from_var: need at least 2 dims");
  const int h = s[s.size() - 2], w = s[s.size() - 1];
  detail::require(v.size() == static_cast<std::size_t>(h) * w, "image_from_var: single channel required");
  return Image<T>(h, w, std::vector<T>(v.value().begin(), v.value().end()));
}

template <class Tag, class T>
Field<T, Tag> field_from_var(const ad::Var<T>& v) {
  int h, w;
  ad::detail::field_dims(v, h, w);
  return Field<T, Tag>(h, w, std::vector<T>(v.value().begin(), v.value().end()));
}

}  // namespace orbit
