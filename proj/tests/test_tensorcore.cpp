#include <gtest/gtest.h>

#include <cmath>

#include "orbit/diffeo.hpp"
#include "orbit/spatial.hpp"
#include "support/assertions.hpp"

namespace orbit {
namespace {

using testing::gradient_check;
using testing::random_image;
using testing::random_weights;

TEST(IdentityGrid, TwoByTwo) {
  const auto g = identity_grid<double>(2, 2);
  EXPECT_EQ(g.dy(0, 0), 0);
  EXPECT_EQ(g.dx(0, 1), 1);
  EXPECT_EQ(g.dy(1, 0), 1);
  EXPECT_EQ(g.dx(1, 0), 0);
  EXPECT_EQ(g.dy(1, 1), 1);
  EXPECT_EQ(g.dx(1, 1), 1);
}

TEST(IdentityGrid, SingleRow) {
  const auto g = identity_grid<double>(1, 3);
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(g.dy(0, j), 0);
    EXPECT_EQ(g.dx(0, j), j);
  }
}

TEST(BilinearSample, IdentityGridReproducesImage) {
  const auto img = random_image(9, 7, 3);
  EXPECT_EQ(bilinear_sample(img, identity_grid<double>(9, 7)), img);
}

TEST(BilinearSample, RampShiftIsExactInInterior) {
  Image<double> ramp(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) ramp(i, j) = j;
  auto coords = identity_grid<double>(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) coords.dx(i, j) += 1.0;
  const auto out = bilinear_sample(ramp, coords);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 7; ++j) EXPECT_DOUBLE_EQ(out(i, j), j + 1.0);
}

TEST(BilinearSample, HalfIntegerOffsetsMatchPerPixelOracle) {
  const auto img = random_image(4, 4, 11);
  auto coords = identity_grid<double>(4, 4);
  Rng rng(5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      coords.dy(i, j) += (rng.uniform() < 0.5 ? 0.5 : 0.0);
      coords.dx(i, j) += 0.5;
    }
  const auto out = bilinear_sample(img, coords);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      EXPECT_NEAR(out(i, j), testing::interp_oracle(img.storage(), 4, 4, coords.dy(i, j), coords.dx(i, j)), 1e-12);
  // Interior half-integer point in both axes is the average of its four neighbours.
  auto c2 = identity_grid<double>(4, 4);
  c2.dy(1, 1) = 1.5;
  c2.dx(1, 1) = 1.5;
  const auto o2 = bilinear_sample(img, c2);
  EXPECT_NEAR(o2(1, 1), (img(1, 1) + img(1, 2) + img(2, 1) + img(2, 2)) / 4, 1e-12);
}

TEST(BilinearSample, OutOfBoundsClampsToBorder) {
  const auto img = random_image(5, 5, 2);
  auto coords = identity_grid<double>(5, 5);
  coords.dy(0, 0) = -3.0;
  coords.dx(0, 0) = 10.0;
  EXPECT_DOUBLE_EQ(bilinear_sample(img, coords)(0, 0), img(0, 4));
}

TEST(BilinearSample, ShapeMismatchThrows) {
  EXPECT_THROW(bilinear_sample(random_image(4, 4, 1), identity_grid<double>(4, 5)), ContractError);
}

TEST(Warp, ZeroDisplacementIsIdentity) {
  const auto img = random_image(10, 12, 4);
  EXPECT_EQ(warp(img, DisplacementField<double>(10, 12)), img);
}

TEST(Warp, ConstantShiftOfRamp) {
  Image<double> ramp(10, 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) ramp(i, j) = j;
  DisplacementField<double> d(10, 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) d.dx(i, j) = 2.0;
  const auto out = warp(ramp, d);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(out(i, j), j + 2.0);
}

TEST(Warp, EqualsSamplingAtGridPlusDisplacement) {
  const auto img = random_image(8, 8, 9);
  const auto d = testing::smooth_random_field<DisplacementTag>(8, 8, 2.5, 17, 2.0);
  auto coords = identity_grid<double>(8, 8);
  for (std::size_t k = 0; k < coords.values().size(); ++k) coords.values()[k] += d.values()[k];
  EXPECT_EQ(warp(img, d), bilinear_sample(img, coords));
}

TEST(Warp, ShapeMismatchThrows) {
  EXPECT_THROW(warp(random_image(4, 4, 1), DisplacementField<double>(5, 4)), ContractError);
}

TEST(Compose, ZeroIsTwoSidedIdentity) {
  const auto d = testing::smooth_random_field<DisplacementTag>(12, 12, 2.0, 3, 3.0);
  const DisplacementField<double> zero(12, 12);
  EXPECT_EQ(compose_displacements(zero, d), d);
  EXPECT_EQ(compose_displacements(d, zero), d);
}

TEST(Compose, TranslationsAdd) {
  DisplacementField<double> a(10, 10), b(10, 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      a.dy(i, j) = 1.0;
      a.dx(i, j) = -0.5;
      b.dy(i, j) = 0.25;
      b.dx(i, j) = 2.0;
    }
  const auto c = compose_displacements(a, b);
  for (int i = 2; i < 8; ++i)
    for (int j = 2; j < 7; ++j) {
      EXPECT_NEAR(c.dy(i, j), 1.25, 1e-12);
      EXPECT_NEAR(c.dx(i, j), 1.5, 1e-12);
    }
}

TEST(Compose, DoubleWarpOracleOnSmoothImages) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto img = testing::smooth_image(32, 32, 100 + seed);
    const auto a = testing::smooth_random_field<DisplacementTag>(32, 32, 1.5, 200 + seed);
    const auto b = testing::smooth_random_field<DisplacementTag>(32, 32, 1.5, 300 + seed);
    const auto once = warp(img, compose_displacements(a, b));
    const auto twice = warp(warp(img, a), b);
    double worst = 0;
    for (int i = 4; i < 28; ++i)
      for (int j = 4; j < 28; ++j) worst = std::max(worst, std::abs(once(i, j) - twice(i, j)));
    EXPECT_LE(worst, 1e-3) << "seed " << seed;
  }
}

TEST(Jacobian, ZeroDisplacementIsOne) {
  const auto det = jacobian_determinant(DisplacementField<double>(6, 6));
  for (double v : det.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Jacobian, LinearDisplacement) {
  DisplacementField<double> d(9, 9);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      d.dy(i, j) = 0.1 * i;
      d.dx(i, j) = 0.2 * j;
    }
  const auto det = jacobian_determinant(d);
  for (int i = 1; i < 8; ++i)
    for (int j = 1; j < 8; ++j) EXPECT_NEAR(det(i, j), 1.32, 1e-12);
}

TEST(Jacobian, PositiveForSmoothExponentials) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto v = testing::smooth_random_field<VelocityTag>(32, 32, 2.0, 40 + seed);
    const auto det = jacobian_determinant(exp_svf(v, 6));
    for (double x : det.values()) EXPECT_GT(x, 0.0);
  }
}

// ---------------------------------------------------------------------------
// Gradient contract: sum(output · fixed random weights) vs central differences.

double weighted(std::span<const double> out, const std::vector<double>& w) {
  double s = 0;
  for (std::size_t k = 0; k < out.size(); ++k) s += out[k] * w[k];
  return s;
}

TEST(Gradients, BilinearSampleImageAndCoords) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int h = 6, w = 7;
    const auto img = random_image(h, w, seed);
    auto coords = identity_grid<double>(h, w);
    Rng rng(seed + 50);
    for (auto& c : coords.values()) c += rng.uniform(-1.3, 1.3);
    const auto wts = random_weights(img.size(), seed + 99);
    auto vi = to_var(img, true);
    auto vc = to_var(coords, true);
    auto out = ad::bilinear_sample(vi, vc);
    ad::backward(ad::sum(ad::mul(out, ad::Var<double>::constant(out.shape(), wts))));
    auto f_img = [&](const std::vector<double>& x) {
      return weighted(bilinear_sample(Image<double>(h, w, x), coords).values(), wts);
    };
    auto f_crd = [&](const std::vector<double>& x) {
      return weighted(bilinear_sample(img, CoordGrid<double>(h, w, x)).values(), wts);
    };
    EXPECT_PRED_FORMAT2(testing::GradOk, gradient_check(f_img, img.storage(), vi.grad()), 1e-4);
    EXPECT_PRED_FORMAT2(testing::GradOk, gradient_check(f_crd, coords.storage(), vc.grad()), 1e-4);
  }
}

TEST(Gradients, Warp) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int h = 8, w = 8;
    const auto img = random_image(h, w, seed + 7);
    auto d = testing::smooth_random_field<DisplacementTag>(h, w, 1.7, seed + 8, 2.0);
    const auto wts = random_weights(img.size(), seed + 9);
    auto vi = to_var(img, true);
    auto vd = to_var(d, true);
    ad::backward(ad::sum(ad::mul(ad::warp(vi, vd), ad::Var<double>::constant({h, w}, wts))));
    auto f_img = [&](const std::vector<double>& x) { return weighted(warp(Image<double>(h, w, x), d).values(), wts); };
    auto f_d = [&](const std::vector<double>& x) {
      return weighted(warp(img, DisplacementField<double>(h, w, x)).values(), wts);
    };
    EXPECT_PRED_FORMAT2(testing::GradOk, gradient_check(f_img, img.storage(), vi.grad()), 1e-4);
    EXPECT_PRED_FORMAT2(testing::GradOk, gradient_check(f_d, d.storage(), vd.grad()), 1e-4);
  }
}

TEST(Gradients, Compose) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int h = 7, w = 9;
    auto a = testing::smooth_random_field<DisplacementTag>(h, w, 1.4, seed + 1, 2.0);
    auto b = testing::smooth_random_field<DisplacementTag>(h, w, 1.1, seed + 2, 2.0);
    const auto wts = random_weights(a.values().size(), seed + 3);
    auto va = to_var(a, true), vb = to_var(b, true);
    ad::backward(ad::sum(ad::mul(ad::compose_displacements(va, vb), ad::Var<double>::constant(va.shape(), wts))));
    auto fa = [&](const std::vector<double>& x) {
      return weighted(compose_displacements(DisplacementField<double>(h, w, x), b).values(), wts);
    };
    auto fb = [&](const std::vector<double>& x) {
      return weighted(compose_displacements(a, DisplacementField<double>(h, w, x)).values(), wts);
    };
    EXPECT_PRED_FORMAT2(testing::GradOk, gradient_check(fa, a.storage(), va.grad()), 1e-4);
    EXPECT_PRED_FORMAT2(testing::GradOk, gradient_check(fb, b.storage(), vb.grad()), 1e-4);
  }
}

}  // namespace
}  // namespace orbit
