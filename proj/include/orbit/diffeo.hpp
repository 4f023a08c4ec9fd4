#pragma once

// Stationary velocity field exponentiation (scaling and squaring) and the
// first-order BCH pairwise flow between two frames' velocities.

#include <cmath>
#include <vector>

#include "orbit/autodiff.hpp"
#include "orbit/spatial.hpp"

namespace orbit {

inline constexpr int kDefaultExpSteps = 6;

namespace kernels {

/// Fills `chain` with u_0 = v / 2^steps, u_{k+1} = u_k ∘ u_k; chain[steps] is exp(v).
template <class T>
void exp_svf_chain(const T* v, int h, int w, int steps, std::vector<std::vector<T>>& chain) {
  const std::size_t n = 2 * static_cast<std::size_t>(h) * w;
  const T s = std::ldexp(T(1), -steps);
  chain.assign(static_cast<std::size_t>(steps) + 1, std::vector<T>(n));
  for (std::size_t k = 0; k < n; ++k) chain[0][k] = v[k] * s;
  for (int k = 0; k < steps; ++k) compose_forward(chain[k].data(), chain[k].data(), h, w, chain[k + 1].data());
}

template <class T>
void exp_svf_backward(const std::vector<std::vector<T>>& chain, int h, int w, const T* gout, T* gv) {
  const int steps = static_cast<int>(chain.size()) - 1;
  const std::size_t n = 2 * static_cast<std::size_t>(h) * w;
  std::vector<T> g(gout, gout + n), gnext(n);
  for (int k = steps - 1; k >= 0; --k) {
    std::fill(gnext.begin(), gnext.end(), T(0));
    compose_backward(chain[k].data(), chain[k].data(), h, w, g.data(), gnext.data(), gnext.data());
    g.swap(gnext);
  }
  const T s = std::ldexp(T(1), -steps);
  for (std::size_t k = 0; k < n; ++k) gv[k] += g[k] * s;
}

}  // namespace kernels

/// exp(v) by scaling and squaring.
template <class T>
DisplacementField<T> exp_svf(const VelocityField<T>& v, int steps = kDefaultExpSteps) {
  detail::require(steps >= 1, "exp_svf: steps must be >= 1");
  std::vector<std::vector<T>> chain;
  kernels::exp_svf_chain(v.values().data(), v.height(), v.width(), steps, chain);
  return DisplacementField<T>(v.height(), v.width(), std::move(chain.back()));
}

/// exp(-v): the inverse of exp(v) up to integration error.
template <class T>
DisplacementField<T> inverse_flow(const VelocityField<T>& v, int steps = kDefaultExpSteps) {
  VelocityField<T> neg = v;
  for (auto& x : neg.values()) x = -x;
  return exp_svf(neg, steps);
}

/// Φ_{j←i} = exp(v_j − v_i); warps frame j toward frame i.
template <class T>
DisplacementField<T> pairwise_flow(const VelocityField<T>& v_i, const VelocityField<T>& v_j,
                                   int steps = kDefaultExpSteps) {
  detail::require(v_i.same_shape(v_j), "pairwise_flow: shape mismatch");
  VelocityField<T> diff(v_i.height(), v_i.width());
  for (std::size_t k = 0; k < diff.values().size(); ++k) diff.values()[k] = v_j.values()[k] - v_i.values()[k];
  return exp_svf(diff, steps);
}

namespace ad {

template <class T>
Var<T> exp_svf(const Var<T>& v, int steps = kDefaultExpSteps) {
  orbit::detail::require(steps >= 1, "exp_svf: steps must be >= 1");
  int h, w;
  detail::field_dims(v, h, w);
  std::vector<std::vector<T>> chain;
  kernels::exp_svf_chain(v.value().data(), h, w, steps, chain);
  std::vector<T> out = chain.back();
  if (!v.requires_grad()) return Var<T>::constant(v.shape(), std::move(out));
  return make_op<T>(v.shape(), std::move(out), {v}, [chain = std::move(chain), h, w](Node<T>& self) {
    kernels::exp_svf_backward(chain, h, w, self.grad.data(), self.parent_grad(0));
  });
}

template <class T>
Var<T> pairwise_flow(const Var<T>& v_i, const Var<T>& v_j, int steps = kDefaultExpSteps) {
  return exp_svf(sub(v_j, v_i), steps);
}

/// Mean squared forward difference of a [2,H,W] field (diffusion regulariser).
template <class T>
Var<T> smoothness_penalty(const Var<T>& v) {
  int h, w;
  detail::field_dims(v, h, w);
  const std::size_t np = static_cast<std::size_t>(h) * w;
  const auto& x = v.value();
  T acc = 0;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::size_t p = c * np + static_cast<std::size_t>(i) * w + j;
        if (i + 1 < h) acc += (x[p + w] - x[p]) * (x[p + w] - x[p]);
        if (j + 1 < w) acc += (x[p + 1] - x[p]) * (x[p + 1] - x[p]);
      }
  const T norm = T(1) / static_cast<T>(2 * np);
  return make_op<T>({1}, {acc * norm}, {v}, [h, w, np, norm](Node<T>& self) {
    const auto& x = self.parents[0]->value;
    T* g = self.parent_grad(0);
    const T s = T(2) * norm * self.grad[0];
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const std::size_t p = c * np + static_cast<std::size_t>(i) * w + j;
          if (i + 1 < h) {
            const T d = x[p + w] - x[p];
            g[p + w] += s * d;
            g[p] -= s * d;
          }
          if (j + 1 < w) {
            const T d = x[p + 1] - x[p];
            g[p + 1] += s * d;
            g[p] -= s * d;
          }
        }
  });
}

}  // namespace ad

}  // namespace orbit
