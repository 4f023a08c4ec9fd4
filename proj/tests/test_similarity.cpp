#include <gtest/gtest.h>

#include "orbit/similarity.hpp"
#include "support/assertions.hpp"

namespace orbit {
namespace {

TEST(LocalNcc, SelfSimilarity) {
  const auto img = testing::random_image(32, 32, 1);
  EXPECT_GE(local_ncc(img, img, 9), 0.999);
  EXPECT_LE(local_ncc(img, img, 9), 1.0);
}

TEST(LocalNcc, AffineIntensityInvariance) {
  const auto img = testing::random_image(32, 32, 2);
  Image<double> mapped = img;
  for (auto& v : mapped.values()) v = 2 * v + 0.3;
  EXPECT_GE(local_ncc(img, mapped, 9), 0.999);
}

TEST(LocalNcc, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = testing::random_image(16, 16, 10 + seed);
    const auto b = testing::random_image(16, 16, 50 + seed);
    EXPECT_NEAR(local_ncc(a, b, 5), testing::ncc_oracle(a, b, 5, 1e-5), 1e-6);
  }
}

TEST(LocalNcc, SymmetricAndBounded) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = testing::random_image(20, 18, seed);
    const auto b = testing::smooth_image(20, 18, seed + 3);
    const double ab = local_ncc(a, b, 9), ba = local_ncc(b, a, 9);
    EXPECT_NEAR(ab, ba, 1e-6);
    EXPECT_GE(ab, -1e-3);
    EXPECT_LE(ab, 1 + 1e-3);
  }
}

TEST(LocalNcc, FlatImagesScoreZero) {
  Image<double> flat(16, 16, 0.4);
  EXPECT_NEAR(local_ncc(flat, flat, 9), 0.0, 1e-9);
}

TEST(LocalNcc, Errors) {
  const auto a = testing::random_image(8, 8, 1);
  EXPECT_THROW(local_ncc(a, a, 4), ContractError);
  EXPECT_THROW(local_ncc(a, testing::random_image(8, 9, 1), 9), ContractError);
}

TEST(LocalNcc, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = testing::random_image(10, 9, seed + 100);
    const auto b = testing::random_image(10, 9, seed + 200);
    auto va = to_var(a, true), vb = to_var(b, true);
    ad::backward(ad::local_ncc(va, vb, 5));
    auto fa = [&](const std::vector<double>& x) { return local_ncc(Image<double>(10, 9, x), b, 5); };
    auto fb = [&](const std::vector<double>& x) { return local_ncc(a, Image<double>(10, 9, x), 5); };
    EXPECT_PRED_FORMAT2(testing::GradOk, testing::gradient_check(fa, a.storage(), va.grad()), 1e-4);
    EXPECT_PRED_FORMAT2(testing::GradOk, testing::gradient_check(fb, b.storage(), vb.grad()), 1e-4);
  }
}

TEST(RegistrationPairs, CountFollowsDoubleSum) {
  EXPECT_EQ(registration_pairs(25, 5).size(), 110u);
  int brute = 0;
  for (int f = 1; f <= 5; ++f)
    for (int t = 1; t <= 25 - f; ++t) ++brute;
  EXPECT_EQ(brute, 110);
  EXPECT_EQ(registration_pairs(3, 5).size(), 3u);
  EXPECT_EQ(registration_pairs(2, 1).size(), 1u);
}

Video<double> random_video(int t, int h, int w, std::uint64_t seed) {
  std::vector<Image<double>> frames;
  for (int k = 0; k < t; ++k) frames.push_back(testing::random_image(h, w, seed + k));
  return Video<double>(frames);
}

TEST(VideoLoss, StaticVideoReachesOptimum) {
  const auto img = testing::random_image(16, 16, 4);
  const Video<double> video(std::vector<Image<double>>{img, img, img});
  const std::vector<VelocityField<double>> vel(3, VelocityField<double>(16, 16));
  LossConfig cfg;
  EXPECT_NEAR(video_registration_loss(video, vel, cfg), -6.0, 1e-3);
}

TEST(VideoLoss, MatchesNaivePairMaterialisation) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const int t = 5, h = 12, w = 12;
    const auto video = random_video(t, h, w, 10 * seed);
    std::vector<VelocityField<double>> vel;
    for (int k = 0; k < t; ++k) vel.push_back(testing::smooth_random_field<VelocityTag>(h, w, 1.5, 77 + seed * 10 + k, 3.0));
    LossConfig cfg;
    cfg.max_offset = 3;
    double naive = 0;
    for (int f = 1; f <= 3; ++f)
      for (int a = 0; a + f < t; ++a) {
        const int b = a + f;
        const auto ia = video.frame(a), ib = video.frame(b);
        naive -= local_ncc(warp(ia, pairwise_flow(vel[b], vel[a])), ib, 9);
        naive -= local_ncc(warp(ib, pairwise_flow(vel[a], vel[b])), ia, 9);
      }
    EXPECT_NEAR(video_registration_loss(video, vel, cfg), naive, 1e-5);
  }
}

TEST(VideoLoss, LengthMismatchThrows) {
  const auto video = random_video(3, 8, 8, 1);
  const std::vector<VelocityField<double>> vel(2, VelocityField<double>(8, 8));
  EXPECT_THROW(video_registration_loss(video, vel, LossConfig{}), ContractError);
}

TEST(VideoLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const int t = 4, h = 16, w = 16;
    const auto video = random_video(t, h, w, 300 + 10 * seed);
    std::vector<double> packed;
    for (int k = 0; k < t; ++k) {
      const auto f = testing::smooth_random_field<VelocityTag>(h, w, 1.5, 400 + seed * 10 + k, 3.0);
      packed.insert(packed.end(), f.values().begin(), f.values().end());
    }
    LossConfig cfg;
    cfg.window = 5;
    cfg.max_offset = 2;
    auto v = ad::Var<double>::parameter({t, 2, h, w}, packed);
    ad::backward(ad::video_registration_loss(video, v, cfg));
    auto f = [&](const std::vector<double>& x) {
      return ad::video_registration_loss(video, ad::Var<double>::constant({t, 2, h, w}, x), cfg).item();
    };
    EXPECT_PRED_FORMAT2(testing::GradOk, testing::gradient_check(f, packed, v.grad()), 1e-3);
  }
}

}  // namespace
}  // namespace orbit
