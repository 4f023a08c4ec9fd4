#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "orbit/dataset.hpp"
#include "orbit/synth.hpp"
#include "support/oracles.hpp"

namespace orbit {
namespace {

/// Foreground pixel count of a rendered video: 5×5 box mean above 0.5 (myocardium is the only bright structure).
std::vector<int> area_curve(const Video<double>& v) {
  std::vector<int> area(v.frames(), 0);
  const int n = v.height();
  for (int t = 0; t < v.frames(); ++t)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0;
        int c = 0;
        for (int di = -2; di <= 2; ++di)
          for (int dj = -2; dj <= 2; ++dj) {
            const int a = i + di, b = j + dj;
            if (a < 0 || b < 0 || a >= n || b >= n) continue;
            s += v(t, a, b);
            ++c;
          }
        area[t] += s / c > 0.5;
      }
  return area;
}

/// Index of the extreme value in [lo, hi]; the middle of a tied run.
int extreme_in(const std::vector<int>& a, int lo, int hi, bool maximum) {
  int best = a[lo];
  for (int t = lo; t <= hi; ++t) best = maximum ? std::max(best, a[t]) : std::min(best, a[t]);
  std::vector<int> at;
  for (int t = lo; t <= hi; ++t)
    if (a[t] == best) at.push_back(t);
  return at[at.size() / 2];
}

double pearson(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k] / n;
    mb += b[k] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(PhaseCurve, ArithmeticExamples) {
  SynthParams p;
  p.fps = 40;
  p.heart_rate = 120;
  p.num_frames = 60;
  const auto g = ground_truth(p);
  EXPECT_EQ(g.period_frames, 20.0);
  EXPECT_EQ(g.ed_frames, (std::vector<int>{0, 20, 40}));
  EXPECT_EQ(g.es_frames, (std::vector<int>{8, 28, 48}));
  const auto theta = phase_curve(p);
  EXPECT_DOUBLE_EQ(theta[0], 0.0);
  EXPECT_DOUBLE_EQ(theta[5], 0.25);
  EXPECT_DOUBLE_EQ(theta[20], 0.0);

  p.fps = 30;
  p.heart_rate = 140;
  p.num_frames = 100;
  const auto g2 = ground_truth(p);
  EXPECT_NEAR(g2.period_frames, 12.857142857, 1e-8);
  for (std::size_t k = 0; k < g2.ed_frames.size(); ++k)
    EXPECT_EQ(g2.ed_frames[k], std::lround(k * 60.0 * 30 / 140)) << k;
}

TEST(PhaseCurve, ProfileShape) {
  EXPECT_DOUBLE_EQ(contraction_profile(0.0, 0.4), 0.0);
  EXPECT_DOUBLE_EQ(contraction_profile(0.4, 0.4), 1.0);
  EXPECT_NEAR(contraction_profile(0.2, 0.4), 0.5, 1e-15);
  EXPECT_NEAR(contraction_profile(0.7, 0.4), 0.5, 1e-15);
  EXPECT_NEAR(contraction_profile(1.0, 0.4), 0.0, 1e-15);
}

TEST(SynthParams, Validation) {
  SynthParams p;
  p.systole_fraction = 1.0;
  EXPECT_THROW(p.validate(), ContractError);
  p = {};
  p.contraction_amplitude = 0.5;
  EXPECT_THROW(p.validate(), ContractError);
  p = {};
  p.orientation = 30;
  EXPECT_THROW(p.validate(), ContractError);
  p = {};
  p.fps = 0;
  EXPECT_THROW(p.validate(), ContractError);
}

TEST(GenerateVideo, ZeroAmplitudeGivesStaticFrames) {
  SynthParams p;
  p.contraction_amplitude = 0;
  p.noise = 0;
  p.num_frames = 10;
  const auto v = generate_video(p).first;
  for (int t = 1; t < v.frames(); ++t)
    for (std::size_t k = 0; k < v.frame_size(); ++k) ASSERT_EQ(v.frame_values(t)[k], v.frame_values(0)[k]);
}

TEST(GenerateVideo, QuarterTurnOrientationsAreExactGridRotations) {
  for (int base : {0, 45}) {
    SynthParams p;
    p.orientation = base;
    p.num_frames = 6;
    p.texture_seed = 7;
    p.noise_seed = 8;
    const auto v0 = generate_video(p).first;
    for (int k = 1; k < 4; ++k) {
      p.orientation = base + 90 * k;
      EXPECT_EQ(generate_video(p).first, rotate_quarter(v0, k)) << "orientation " << p.orientation;
    }
    p.orientation = base + 90;
    EXPECT_EQ(generate_video(p).first, rotation_augment(v0)[1]);
  }
}

TEST(GenerateVideo, FortyFiveDegreesMatchesInterpolatedRotation) {
  SynthParams p;
  p.noise = 0;
  p.num_frames = 3;
  p.texture_seed = 3;
  const auto v0 = generate_video(p).first;
  p.orientation = 45;
  const auto v45 = generate_video(p).first;
  const int n = p.frame_size;
  const double c = (n - 1) / 2.0, s = std::sqrt(0.5);
  double total = 0;
  int count = 0;
  for (int t = 0; t < 3; ++t) {
    const auto f = v0.frame(t);
    const std::vector<double> plane(f.values().begin(), f.values().end());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double y = i - c, x = j - c;
        if (std::hypot(y, x) > c - 1) continue;
        const double val = testing::interp_oracle(plane, n, n, c + (y - x) * s, c + (y + x) * s);
        total += std::abs(val - v45(t, i, j));
        ++count;
      }
  }
  EXPECT_LE(total / count, 0.02);
}

TEST(GenerateVideo, AreaCurveExtremaMatchGroundTruth) {
  struct Case {
    double fps, hr, noise, phase;
  };
  const std::vector<Case> cases{{40, 120, 0.0, 0.0},  {30, 160, 0.02, 0.3}, {80, 110, 0.02, 0.7},
                                {55, 140, 0.05, 0.5}, {80, 160, 0.05, 0.1}, {30, 110, 0.05, 0.9}};
  for (std::size_t c = 0; c < cases.size(); ++c) {
    SynthParams p;
    p.fps = cases[c].fps;
    p.heart_rate = cases[c].hr;
    p.noise = cases[c].noise;
    p.phase_offset = cases[c].phase;
    p.texture_seed = 100 + c;
    p.orientation = static_cast<int>(45 * c);
    const auto [v, g] = generate_video(p);
    // Mask area: tissue membership above 0.5 on a 4× supersampled grid.
    std::vector<int> mask_area(v.frames(), 0);
    for (int t = 0; t < v.frames(); ++t) {
      const auto mask = render_tissue_mask(p, t, 4);
      for (double m : mask.values()) mask_area[t] += m > 0.5;
    }
    const int half = static_cast<int>(g.period_frames / 4);
    int checked = 0;
    for (const auto& [events, is_max] : {std::pair{g.ed_frames, true}, std::pair{g.es_frames, false}})
      for (int e : events) {
        if (e - half < 0 || e + half >= v.frames()) continue;
        EXPECT_LE(std::abs(extreme_in(mask_area, e - half, e + half, is_max) - e), 1)
            << "case " << c << (is_max ? " ED " : " ES ") << e;
        ++checked;
      }
    EXPECT_GE(checked, 3) << "case " << c;
    // The speckled frames carry the same area signal.
    EXPECT_GT(pearson(area_curve(v), mask_area), 0.9) << "case " << c;
  }
}

TEST(GroundTruth, AlternationAndSpacing) {
  const auto params = draw_dataset_params(64, SynthRanges{}, 5);
  for (const auto& p : params) {
    const auto g = ground_truth(p);
    std::vector<std::pair<int, char>> ev;
    for (int e : g.ed_frames) ev.emplace_back(e, 'D');
    for (int e : g.es_frames) ev.emplace_back(e, 'S');
    std::sort(ev.begin(), ev.end());
    for (std::size_t k = 1; k < ev.size(); ++k) {
      EXPECT_NE(ev[k].second, ev[k - 1].second);
      EXPECT_LT(ev[k - 1].first, ev[k].first);
    }
    for (const auto* list : {&g.ed_frames, &g.es_frames})
      for (std::size_t k = 1; k < list->size(); ++k)
        EXPECT_LE(std::abs((*list)[k] - (*list)[k - 1] - g.period_frames), 1.0);
    EXPECT_GE(p.fps, 30);
    EXPECT_LE(p.fps, 80);
    EXPECT_GE(p.heart_rate, 110);
    EXPECT_LE(p.heart_rate, 160);
  }
}

TEST(Dataset, OrientationBinsCovered) {
  const auto params = draw_dataset_params(8, SynthRanges{}, 1);
  std::set<int> bins;
  for (const auto& p : params) bins.insert(p.orientation);
  EXPECT_EQ(bins.size(), 8u);
  const auto more = draw_dataset_params(24, SynthRanges{}, 2);
  std::map<int, int> counts;
  for (const auto& p : more) ++counts[p.orientation];
  for (const auto& [bin, n] : counts) EXPECT_EQ(n, 3) << bin;
  EXPECT_THROW(draw_dataset_params(0, SynthRanges{}, 1), ConfigError);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

TEST(Dataset, WrittenLayoutIsDeterministicAndReadable) {
  const auto root = std::filesystem::temp_directory_path() / "orbit_synth_test";
  std::filesystem::remove_all(root);
  SynthRanges r;
  r.num_frames = 12;
  r.frame_size = 32;
  write_synthetic_dataset(root / "a", 3, r, 99);
  write_synthetic_dataset(root / "b", 3, r, 99);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), root / "a");
    EXPECT_EQ(slurp(e.path()), slurp(root / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 3u * 13 + 1);

  const auto data = read_dataset(root / "a");
  ASSERT_EQ(data.size(), 3u);
  EXPECT_EQ(data[0].meta.id, "video_0000");
  EXPECT_EQ(data[0].video.frames(), 12);
  EXPECT_EQ(data[0].video.height(), 32);
  ASSERT_TRUE(data[0].meta.truth.has_value());
  // 8-bit quantisation of the written frames.
  const auto params = draw_dataset_params(3, r, 99);
  const auto original = generate_video(params[1]).first;
  for (std::size_t k = 0; k < original.values().size(); ++k)
    EXPECT_NEAR(data[1].video.values()[k], original.values()[k], 0.5 / 255 + 1e-6);
  std::filesystem::remove_all(root);
}

}  // namespace
}  // namespace orbit
