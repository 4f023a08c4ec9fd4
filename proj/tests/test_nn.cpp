#include <gtest/gtest.h>

#include <functional>

#include "orbit/model.hpp"
#include "orbit/nn.hpp"
#include "support/assertions.hpp"

namespace orbit {
namespace {

using V = ad::Var<double>;

/// Gradient of sum(w ⊙ op(x)) with respect to one argument, against central differences.
testing::GradCheck check_op(const std::function<V(const std::vector<V>&)>& op, const std::vector<ad::Shape>& shapes,
                            std::size_t wrt, std::uint64_t seed) {
  std::vector<std::vector<double>> vals;
  for (std::size_t k = 0; k < shapes.size(); ++k) vals.push_back(testing::random_weights(ad::numel(shapes[k]), seed + k));
  auto build = [&](const std::vector<double>& x, bool grad) {
    std::vector<V> in;
    for (std::size_t k = 0; k < shapes.size(); ++k)
      in.push_back(k == wrt ? (grad ? V::parameter(shapes[k], x) : V::constant(shapes[k], x))
                            : V::constant(shapes[k], vals[k]));
    return in;
  };
  const auto probe = op(build(vals[wrt], false));
  const auto wts = testing::random_weights(probe.size(), seed + 100);
  const auto weight = V::constant(probe.shape(), wts);
  auto in = build(vals[wrt], true);
  ad::backward(ad::sum(ad::mul(op(in), weight)));
  auto f = [&](const std::vector<double>& x) { return ad::sum(ad::mul(op(build(x, false)), weight)).item(); };
  return testing::gradient_check(f, vals[wrt], in[wrt].grad(), 1e-5);
}

TEST(Conv2d, MatchesDirectLoops) {
  const int n = 2, c = 3, h = 7, w = 6, o = 4, k = 3;
  for (int stride : {1, 2}) {
    const auto x = testing::random_weights(n * c * h * w, 1);
    const auto wt = testing::random_weights(o * c * k * k, 2);
    const auto b = testing::random_weights(o, 3);
    const auto y = ad::conv2d(V::constant({n, c, h, w}, x), V::constant({o, c, k, k}, wt), V::constant({o}, b), stride, 1);
    const int oh = (h + 2 - k) / stride + 1, ow = (w + 2 - k) / stride + 1;
    ASSERT_EQ(y.shape(), ad::Shape({n, o, oh, ow}));
    double worst = 0;
    for (int s = 0; s < n; ++s)
      for (int oc = 0; oc < o; ++oc)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            double acc = b[oc];
            for (int ci = 0; ci < c; ++ci)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = i * stride - 1 + ky, ix = j * stride - 1 + kx;
                  if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                  acc += wt[((oc * c + ci) * k + ky) * k + kx] * x[((s * c + ci) * h + iy) * w + ix];
                }
            worst = std::max(worst, std::abs(acc - y.value()[((s * o + oc) * oh + i) * ow + j]));
          }
    EXPECT_LT(worst, 1e-12) << "stride " << stride;
  }
}

TEST(Conv2d, Gradients) {
  auto op = [](const std::vector<V>& a) { return ad::conv2d(a[0], a[1], a[2], 2, 1); };
  const std::vector<ad::Shape> shapes{{2, 3, 6, 6}, {4, 3, 3, 3}, {4}};
  for (std::size_t wrt = 0; wrt < 3; ++wrt)
    EXPECT_PRED_FORMAT2(testing::GradOk, check_op(op, shapes, wrt, 10 * wrt), 1e-7) << "arg " << wrt;
}

TEST(Upsample2x, HalfPixelTaps) {
  const auto y = ad::upsample2x(V::constant({1, 1, 1, 2}, {1.0, 2.0}));
  ASSERT_EQ(y.shape(), ad::Shape({1, 1, 2, 4}));
  const std::vector<double> row{1.0, 1.25, 1.75, 2.0};
  for (int j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(y.value()[j], row[j]);
    EXPECT_DOUBLE_EQ(y.value()[4 + j], row[j]);
  }
}

TEST(Upsample2x, PreservesConstantsAndHasExactGradient) {
  const auto y = ad::upsample2x(V::constant({2, 3, 4, 5}, std::vector<double>(120, 0.7)));
  for (double v : y.value()) EXPECT_DOUBLE_EQ(v, 0.7);
  auto op = [](const std::vector<V>& a) { return ad::upsample2x(a[0]); };
  EXPECT_PRED_FORMAT2(testing::GradOk, check_op(op, {{2, 2, 3, 4}}, 0, 5), 1e-8);
}

TEST(InstanceNorm, ZeroMeanUnitVariancePerPlane) {
  const auto x = testing::random_weights(2 * 3 * 5 * 5, 4);
  const auto y = ad::instance_norm(V::constant({2, 3, 5, 5}, x));
  for (int p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (int k = 0; k < 25; ++k) m += y.value()[p * 25 + k];
    m /= 25;
    for (int k = 0; k < 25; ++k) v += (y.value()[p * 25 + k] - m) * (y.value()[p * 25 + k] - m);
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v / 25, 1, 1e-3);
  }
  auto op = [](const std::vector<V>& a) { return ad::instance_norm(a[0]); };
  EXPECT_PRED_FORMAT2(testing::GradOk, check_op(op, {{2, 3, 4, 4}}, 0, 6), 1e-7);
}

TEST(VelocityCap, BoundedAndNearIdentityForSmallInputs) {
  std::vector<double> x{1e-3, 30.0, -2e-3, -40.0};
  const auto y = ad::velocity_cap(V::constant({1, 2, 1, 2}, x), 8.0);
  EXPECT_NEAR(y.value()[0], 1e-3, 1e-9);
  EXPECT_NEAR(y.value()[2], -2e-3, 1e-9);
  EXPECT_LT(std::hypot(y.value()[1], y.value()[3]), 8.0);
  // Direction is preserved.
  EXPECT_NEAR(y.value()[1] / y.value()[3], 30.0 / -40.0, 1e-12);
  auto op = [](const std::vector<V>& a) { return ad::velocity_cap(ad::scale(a[0], 6.0), 4.0); };
  EXPECT_PRED_FORMAT2(testing::GradOk, check_op(op, {{2, 2, 3, 3}}, 0, 7), 1e-7);
  auto small = [](const std::vector<V>& a) { return ad::velocity_cap(ad::scale(a[0], 1e-5), 4.0); };
  EXPECT_PRED_FORMAT2(testing::GradOk, check_op(small, {{1, 2, 2, 2}}, 0, 8), 1e-6);
}

TEST(Dense, LinearMatmulAndRowOps) {
  auto lin = [](const std::vector<V>& a) { return ad::leaky_relu(ad::linear(a[0], a[1], a[2])); };
  const std::vector<ad::Shape> ls{{3, 5}, {4, 5}, {4}};
  for (std::size_t wrt = 0; wrt < 3; ++wrt)
    EXPECT_PRED_FORMAT2(testing::GradOk, check_op(lin, ls, wrt, 20 + wrt), 1e-7) << "arg " << wrt;
  auto mm = [](const std::vector<V>& a) { return ad::tanh(ad::matmul(a[0], a[1])); };
  for (std::size_t wrt = 0; wrt < 2; ++wrt)
    EXPECT_PRED_FORMAT2(testing::GradOk, check_op(mm, {{3, 4}, {4, 2}}, wrt, 30 + wrt), 1e-7);
  auto rows = [](const std::vector<V>& a) { return ad::add_rows(a[0], ad::reshape(ad::mean_rows(a[1]), {4})); };
  for (std::size_t wrt = 0; wrt < 2; ++wrt)
    EXPECT_PRED_FORMAT2(testing::GradOk, check_op(rows, {{3, 4}, {5, 4}}, wrt, 40 + wrt), 1e-8);
}

TEST(GramSchmidt, HandExample) {
  // Rows (3,4,0) and (1,0,0): e1 = (0.6,0.8,0); r2 − (r2·e1)e1 = (0.64,−0.48,0) → (0.8,−0.6,0).
  const auto e = orthonormalize<double>({3, 4, 0, 1, 0, 0}, 2, 3);
  const std::vector<double> want{0.6, 0.8, 0, 0.8, -0.6, 0};
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(e[k], want[k], 1e-7);
}

TEST(GramSchmidt, OrthonormalAndSpanPreserving) {
  for (int m = 1; m <= 8; ++m) {
    const int d = 32;
    const auto raw = testing::random_weights(m * d, 300 + m);
    const auto e = orthonormalize(raw, m, d);
    EXPECT_LT(orthonormality_error<double>(e, m, d), 1e-6) << "M=" << m;
    // Every raw row lies in span(E): its residual after projection vanishes.
    for (int a = 0; a < m; ++a) {
      std::vector<double> r(raw.begin() + a * d, raw.begin() + (a + 1) * d);
      for (int b = 0; b < m; ++b) {
        double c = 0;
        for (int k = 0; k < d; ++k) c += r[k] * e[b * d + k];
        for (int k = 0; k < d; ++k) r[k] -= c * e[b * d + k];
      }
      double norm = 0;
      for (double v : r) norm += v * v;
      EXPECT_LT(std::sqrt(norm), 1e-9);
    }
  }
}

TEST(GramSchmidt, RankDeficientThrows) {
  EXPECT_THROW(orthonormalize<double>({1, 2, 3, 2, 4, 6}, 2, 3), NumericalError);
  EXPECT_THROW(orthonormalize<double>({0, 0, 0}, 1, 3), NumericalError);
}

TEST(GramSchmidt, Gradient) {
  auto op = [](const std::vector<V>& a) { return ad::orthonormalize(a[0]); };
  EXPECT_PRED_FORMAT2(testing::GradOk, check_op(op, {{3, 6}}, 0, 50), 1e-7);
}

}  // namespace
}  // namespace orbit
