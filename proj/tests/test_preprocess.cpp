#include <gtest/gtest.h>

#include "orbit/preprocess.hpp"
#include "support/oracles.hpp"

namespace orbit {
namespace {

Video<double> ramp_video(int frames, int n) {
  Video<double> v(frames, n, n);
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) v(t, i, j) = (t * n * n + i * n + j) / static_cast<double>(frames * n * n);
  return v;
}

TEST(PreprocessVideo, TrainModeDownsamplesAndResizes) {
  const auto raw = ramp_video(50, 40);
  const PreprocessSizes sizes{156, 128, 2};
  const auto tr = preprocess_video(raw, CropBox{0, 0, 40, 40}, PreprocessMode::train, sizes);
  EXPECT_EQ(tr.frames(), 25);
  EXPECT_EQ(tr.height(), 156);
  EXPECT_EQ(tr.width(), 156);
  const auto te = preprocess_video(raw, CropBox{0, 0, 40, 40}, PreprocessMode::test, sizes);
  EXPECT_EQ(te.frames(), 50);
  EXPECT_EQ(te.height(), 128);
}

TEST(PreprocessVideo, ConstantVideoStaysConstantInUnitRange) {
  const Video<double> raw(6, 20, 20, 0.37);
  const auto out = preprocess_video(raw, CropBox{2, 3, 16, 16}, PreprocessMode::test, PreprocessSizes{20, 12, 2});
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.37);
}

TEST(PreprocessVideo, RoiCropSelectsRegion) {
  const auto raw = ramp_video(2, 10);
  const auto out = preprocess_video(raw, CropBox{2, 3, 4, 4}, PreprocessMode::test, PreprocessSizes{4, 4, 2});
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) EXPECT_EQ(out(t, i, j), raw(t, 2 + i, 3 + j));
}

TEST(PreprocessVideo, Errors) {
  const auto raw = ramp_video(2, 10);
  EXPECT_THROW(preprocess_video(raw, CropBox{5, 5, 6, 6}, PreprocessMode::test, PreprocessSizes{}), DataError);
  EXPECT_THROW(preprocess_video(Video<double>(), CropBox{0, 0, 1, 1}, PreprocessMode::test, PreprocessSizes{}),
               DataError);
}

TEST(Resize, LinearRampIsReproducedInTheInterior) {
  Video<double> v(1, 16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) v(0, i, j) = 0.5 * i + 0.25 * j;
  const auto r = resize_video(v, 8, 8);
  // Output pixel o samples source coordinate 2o + 0.5.
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(r(0, i, j), 0.5 * (2 * i + 0.5) + 0.25 * (2 * j + 0.5), 1e-12);
}

TEST(RotationAugment, GroupStructure) {
  const auto v = ramp_video(3, 6);
  const auto aug = rotation_augment(v);
  EXPECT_EQ(aug[0], v);
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        EXPECT_EQ(aug[2](t, i, j), v(t, 5 - i, 5 - j));
        EXPECT_EQ(aug[1](t, i, j), v(t, 5 - j, i));
      }
  const auto again = rotation_augment(aug[1]);
  EXPECT_EQ(again[1], aug[2]);
  EXPECT_EQ(again[2], aug[3]);
  EXPECT_EQ(again[3], aug[0]);
  EXPECT_THROW(rotation_augment(Video<double>(1, 4, 6)), ContractError);
}

TEST(RotationAugment, TopEdgeMovesToRightEdgeClockwise) {
  Video<double> v(1, 4, 4);
  v(0, 0, 1) = 1;  // top edge
  const auto r = rotate_quarter(v, 1);
  EXPECT_EQ(r(0, 1, 3), 1.0);
}

TEST(SampleClip, ForcedChoiceAndDeterminism) {
  const auto v = ramp_video(25, 20);
  Rng a(5), b(5);
  const auto wa = draw_clip_window(v, 25, 16, a);
  const auto wb = draw_clip_window(v, 25, 16, b);
  EXPECT_EQ(wa.start, 0);
  EXPECT_EQ(wa.y0, wb.y0);
  EXPECT_EQ(wa.x0, wb.x0);
  const auto clip = extract_clip(v, wa);
  EXPECT_EQ(clip.frames(), 25);
  EXPECT_EQ(clip.height(), 16);
  for (int t = 0; t < 25; ++t) EXPECT_EQ(clip(t, 3, 4), v(t, wa.y0 + 3, wa.x0 + 4));
  Rng c(1);
  EXPECT_THROW(sample_clip(ramp_video(10, 20), 25, 16, c), DataError);
}

TEST(SampleClip, WindowsStayInsideOverManyDraws) {
  const auto v = ramp_video(40, 30);
  Rng rng(2024);
  std::vector<int> seen_start(16, 0), seen_y(7, 0);
  for (int k = 0; k < 1000; ++k) {
    const auto w = draw_clip_window(v, 25, 24, rng);
    ASSERT_GE(w.start, 0);
    ASSERT_LE(w.start + 25, 40);
    ASSERT_GE(w.y0, 0);
    ASSERT_GE(w.x0, 0);
    ASSERT_LE(w.y0 + 24, 30);
    ASSERT_LE(w.x0 + 24, 30);
    ++seen_start[w.start];
    ++seen_y[w.y0];
  }
  for (int s : seen_start) EXPECT_GT(s, 0);
  for (int s : seen_y) EXPECT_GT(s, 0);
}

}  // namespace
}  // namespace orbit
