#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "orbit/errors.hpp"

namespace orbit {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a list of flat parameter tensors, with bias-corrected moments.
template <class T>
class Adam {
 public:
  Adam(AdamConfig cfg, const std::vector<std::size_t>& sizes) : cfg_(cfg) {
    detail::require(cfg.learning_rate > 0 && cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1 &&
                        cfg.epsilon > 0,
                    "Adam: invalid hyper-parameters");
    for (auto n : sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }

  std::int64_t steps() const { return t_; }

  /// params[k] -= lr · m̂ / (√v̂ + ε); grads are read, not modified.
  void step(std::vector<std::vector<T>*> params, const std::vector<std::vector<T>>& grads) {
    detail::require(params.size() == m_.size() && grads.size() == m_.size(), "Adam: tensor count mismatch");
    ++t_;
    const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < m_.size(); ++k) {
      auto& p = *params[k];
      const auto& g = grads[k];
      detail::require(p.size() == m_[k].size() && g.size() == m_[k].size(), "Adam: tensor size mismatch");
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1 - cfg_.beta1) * gi;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * gi * gi;
        const double mhat = m_[k][i] / c1, vhat = v_[k][i] / c2;
        p[i] = static_cast<T>(p[i] - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace orbit
