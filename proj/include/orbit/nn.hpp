#pragma once

// Convolutional building blocks over [N,C,H,W] Vars.

#include <cmath>
#include <vector>

#include "orbit/autodiff.hpp"

namespace orbit::ad {

namespace detail {

template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* col) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[static_cast<std::size_t>(oy) * ow + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* col, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* gx) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) gx[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += row[static_cast<std::size_t>(oy) * ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation: x[N,C,H,W] * w[O,C,k,k] + b[O] with zero padding.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  orbit::detail::require(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3],
                         "conv2d: bad shapes " + shape_str(xs) + " / " + shape_str(ws));
  orbit::detail::require(bias.size() == static_cast<std::size_t>(ws[0]), "conv2d: bias size mismatch");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3], o = ws[0], k = ws[2];
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  orbit::detail::require(oh >= 1 && ow >= 1, "conv2d: output would be empty");
  const int ckk = c * k * k;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  namespace ed = orbit::ad::detail;
  std::vector<T> out(static_cast<std::size_t>(n) * o * cols);
  ed::RowMat<T> col(ckk, static_cast<int>(cols));
  const auto wm = ed::aligned(weight.value().data(), o, ckk);
  for (int s = 0; s < n; ++s) {
    detail::im2col(x.value().data() + static_cast<std::size_t>(s) * c * h * w, c, h, w, k, stride, pad, oh, ow,
                   col.data());
    ed::RowMat<T> y = wm * col;
    for (int oc = 0; oc < o; ++oc) y.row(oc).array() += bias.value()[oc];
    ed::store(out.data() + static_cast<std::size_t>(s) * o * cols, y, false);
  }
  return make_op<T>({n, o, oh, ow}, std::move(out), {x, weight, bias},
                    [n, c, h, w, o, k, stride, pad, oh, ow, ckk, cols](Node<T>& self) {
                      namespace ed = orbit::ad::detail;
                      const auto& xv = self.parents[0]->value;
                      const auto wm = ed::aligned(self.parents[1]->value.data(), o, ckk);
                      T* gx = self.parent_grad(0);
                      T* gw = self.parent_grad(1);
                      T* gb = self.parent_grad(2);
                      ed::RowMat<T> col(ckk, static_cast<int>(cols)), gcol(ckk, static_cast<int>(cols));
                      for (int s = 0; s < n; ++s) {
                        const auto gy =
                            ed::aligned(self.grad.data() + static_cast<std::size_t>(s) * o * cols, o, static_cast<int>(cols));
                        if (gb)
                          for (int oc = 0; oc < o; ++oc) gb[oc] += gy.row(oc).sum();
                        if (gw) {
                          detail::im2col(xv.data() + static_cast<std::size_t>(s) * c * h * w, c, h, w, k, stride, pad,
                                         oh, ow, col.data());
                          const ed::RowMat<T> d = gy * col.transpose();
                          ed::store(gw, d, true);
                        }
                        if (gx) {
                          gcol.noalias() = wm.transpose() * gy;
                          detail::col2im(gcol.data(), c, h, w, k, stride, pad, oh, ow,
                                         gx + static_cast<std::size_t>(s) * c * h * w);
                        }
                      }
                    });
}

namespace detail {
struct UpTap {
  int i0, i1;
  double lambda;
};
/// Source taps for ×2 bilinear upsampling with half-pixel centres.
inline std::vector<UpTap> upsample_taps(int in) {
  std::vector<UpTap> taps(2 * static_cast<std::size_t>(in));
  for (int o = 0; o < 2 * in; ++o) {
    const double src = std::max(0.0, (o + 0.5) * 0.5 - 0.5);
    const int i0 = std::min(static_cast<int>(src), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}
}  // namespace detail

/// Bilinear ×2 upsampling of x[N,C,H,W].
template <class T>
Var<T> upsample2x(const Var<T>& x) {
  const auto& xs = x.shape();
  orbit::detail::require(xs.size() == 4, "upsample2x: need [N,C,H,W]");
  const int planes = xs[0] * xs[1], h = xs[2], w = xs[3], oh = 2 * h, ow = 2 * w;
  const auto ty = detail::upsample_taps(h), tx = detail::upsample_taps(w);
  std::vector<T> out(static_cast<std::size_t>(planes) * oh * ow);
  for (int p = 0; p < planes; ++p) {
    const T* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const T ly = static_cast<T>(ty[i].lambda);
      const T* r0 = src + static_cast<std::size_t>(ty[i].i0) * w;
      const T* r1 = src + static_cast<std::size_t>(ty[i].i1) * w;
      for (int j = 0; j < ow; ++j) {
        const T lx = static_cast<T>(tx[j].lambda);
        const T top = (1 - lx) * r0[tx[j].i0] + lx * r0[tx[j].i1];
        const T bot = (1 - lx) * r1[tx[j].i0] + lx * r1[tx[j].i1];
        dst[static_cast<std::size_t>(i) * ow + j] = (1 - ly) * top + ly * bot;
      }
    }
  }
  return make_op<T>({xs[0], xs[1], oh, ow}, std::move(out), {x}, [planes, h, w, oh, ow, ty, tx](Node<T>& self) {
    T* g = self.parent_grad(0);
    for (int p = 0; p < planes; ++p) {
      const T* gy = self.grad.data() + static_cast<std::size_t>(p) * oh * ow;
      T* gs = g + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < oh; ++i) {
        const T ly = static_cast<T>(ty[i].lambda);
        T* r0 = gs + static_cast<std::size_t>(ty[i].i0) * w;
        T* r1 = gs + static_cast<std::size_t>(ty[i].i1) * w;
        for (int j = 0; j < ow; ++j) {
          const T lx = static_cast<T>(tx[j].lambda);
          const T v = gy[static_cast<std::size_t>(i) * ow + j];
          r0[tx[j].i0] += (1 - ly) * (1 - lx) * v;
          r0[tx[j].i1] += (1 - ly) * lx * v;
          r1[tx[j].i0] += ly * (1 - lx) * v;
          r1[tx[j].i1] += ly * lx * v;
        }
      }
    }
  });
}

/// Per-sample, per-channel normalisation over the spatial axes (no affine part).
template <class T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
  const auto& xs = x.shape();
  orbit::detail::require(xs.size() == 4, "instance_norm: need [N,C,H,W]");
  const int planes = xs[0] * xs[1];
  const std::size_t m = static_cast<std::size_t>(xs[2]) * xs[3];
  std::vector<T> out(x.size()), inv_std(planes);
  for (int p = 0; p < planes; ++p) {
    const T* src = x.value().data() + p * m;
    T mu = 0;
    for (std::size_t k = 0; k < m; ++k) mu += src[k];
    mu /= static_cast<T>(m);
    T var = 0;
    for (std::size_t k = 0; k < m; ++k) var += (src[k] - mu) * (src[k] - mu);
    var /= static_cast<T>(m);
    inv_std[p] = T(1) / std::sqrt(var + eps);
    for (std::size_t k = 0; k < m; ++k) out[p * m + k] = (src[k] - mu) * inv_std[p];
  }
  return make_op<T>(xs, std::move(out), {x}, [planes, m, inv_std](Node<T>& self) {
    T* g = self.parent_grad(0);
    for (int p = 0; p < planes; ++p) {
      const T* y = self.value.data() + p * m;
      const T* gy = self.grad.data() + p * m;
      T mg = 0, mgy = 0;
      for (std::size_t k = 0; k < m; ++k) {
        mg += gy[k];
        mgy += gy[k] * y[k];
      }
      mg /= static_cast<T>(m);
      mgy /= static_cast<T>(m);
      for (std::size_t k = 0; k < m; ++k) g[p * m + k] += inv_std[p] * (gy[k] - mg - y[k] * mgy);
    }
  });
}

/// Radial soft clamp of 2-vector fields x[N,2,H,W]: y = cap·tanh(|x|/cap)·x/|x|,
/// so |y| < cap everywhere and y ≈ x for |x| ≪ cap.
template <class T>
Var<T> velocity_cap(const Var<T>& x, T cap) {
  const auto& xs = x.shape();
  orbit::detail::require(xs.size() == 4 && xs[1] == 2, "velocity_cap: need [N,2,H,W]");
  orbit::detail::require(cap > 0, "velocity_cap: cap must be positive");
  const int n = xs[0];
  const std::size_t m = static_cast<std::size_t>(xs[2]) * xs[3];
  std::vector<T> out(x.size());
  const auto& v = x.value();
  auto factor = [cap](T r) { return r < T(1e-4) * cap ? T(1) - r * r / (T(3) * cap * cap) : cap * std::tanh(r / cap) / r; };
  for (int s = 0; s < n; ++s)
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t iy = (2 * static_cast<std::size_t>(s)) * m + k, ix = iy + m;
      const T f = factor(std::hypot(v[iy], v[ix]));
      out[iy] = f * v[iy];
      out[ix] = f * v[ix];
    }
  return make_op<T>(xs, std::move(out), {x}, [n, m, cap, factor](Node<T>& self) {
    const auto& v = self.parents[0]->value;
    T* g = self.parent_grad(0);
    for (int s = 0; s < n; ++s)
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t iy = (2 * static_cast<std::size_t>(s)) * m + k, ix = iy + m;
        const T a = v[iy], b = v[ix], r = std::hypot(a, b);
        const T f = factor(r);
        // (df/dr)/r, with its small-r limit -2/(3 cap²).
        T dfr;
        if (r < T(1e-4) * cap) {
          dfr = T(-2) / (T(3) * cap * cap);
        } else {
          const T t = std::tanh(r / cap);
          dfr = ((T(1) - t * t) - f) / (r * r);
        }
        const T proj = a * self.grad[iy] + b * self.grad[ix];
        g[iy] += f * self.grad[iy] + dfr * proj * a;
        g[ix] += f * self.grad[ix] + dfr * proj * b;
      }
  });
}

}  // namespace orbit::ad
