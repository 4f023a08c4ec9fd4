#include <gtest/gtest.h>

#include <algorithm>

#include "orbit/synth.hpp"
#include "orbit/trainer.hpp"

namespace orbit {
namespace {

ModelConfig toy_model(int input = 16) {
  ModelConfig c;
  c.latent_dim = 32;
  c.motion_dim = 1;
  c.input_size = input;
  c.encoder_channels = {4, 8};
  c.decoder_channels = {4, 4};
  c.init_seed = 3;
  return c;
}

TrainVideo<float> synth_video(const std::string& id, SynthParams p) {
  return {id, generate_video(p).first.cast<float>(), {}};
}

SynthParams small_params(int frame_size, int frames, std::uint64_t seed) {
  SynthParams p;
  p.frame_size = frame_size;
  p.num_frames = frames;
  p.texture_seed = seed;
  p.noise_seed = seed + 100;
  p.fps = 40;
  p.heart_rate = 120 + 5.0 * static_cast<double>(seed % 5);
  return p;
}

TrainConfig quick_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.learning_rate = 1e-3;
  c.batch_size = 4;
  c.seed = 17;
  return c;
}

TEST(TrainConfig, ValidationAndJson) {
  const auto m = toy_model();
  TrainConfig c;
  EXPECT_NO_THROW(c.validate(m));
  c.clip_length = 5;
  EXPECT_THROW(c.validate(m), ConfigError);
  c = {};
  c.crop_size = 12;
  EXPECT_THROW(c.validate(m), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(m), ConfigError);

  TrainConfig d;
  update_from_json(d, {{"epochs", 7}, {"loss", {{"window", 5}}}});
  EXPECT_EQ(d.epochs, 7);
  EXPECT_EQ(d.loss.window, 5);
  EXPECT_THROW(update_from_json(d, {{"epoch", 7}}), ConfigError);
  EXPECT_THROW(update_from_json(d, {{"loss", {{"windw", 5}}}}), ConfigError);
  EXPECT_THROW(update_from_json(d, {{"epochs", "many"}}), ConfigError);
  TrainConfig e;
  update_from_json(e, to_json(d));
  EXPECT_EQ(to_json(e), to_json(d));
}

TEST(ValidationSplit, SizeAndDeterminism) {
  const auto a = validation_split(20, 0.15, 4);
  EXPECT_EQ(a.size(), 3u);
  EXPECT_EQ(a, validation_split(20, 0.15, 4));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(validation_split(2, 0.15, 1).size(), 1u);
  EXPECT_THROW(validation_split(1, 0.15, 1), DataError);
}

TEST(LossCsv, PreTrainingRowHasEmptyTrainLoss) {
  const std::vector<EpochRecord> curve{{0, std::numeric_limits<double>::quiet_NaN(), -3.5}, {1, -4, -4.25}};
  EXPECT_EQ(loss_csv(curve), "epoch,train_loss,valid_loss\n0,,-3.5\n1,-4,-4.25\n");
}

TEST(Train, StaticSceneSitsAtTheIdentityOptimum) {
  SynthParams p = small_params(16, 50, 1);
  p.contraction_amplitude = 0;
  p.noise = 0;
  const std::vector<TrainVideo<float>> set{synth_video("static", p)};
  const auto cfg = quick_config(50);
  const auto res = train(set, set, LatentModel<float>(toy_model()), cfg);
  const double pairs = static_cast<double>(registration_pairs(cfg.clip_length, cfg.loss.max_offset).size());
  ASSERT_EQ(pairs, 110);
  ASSERT_EQ(res.curve.size(), 51u);
  // Identical frames give identical velocities, hence identity flows.
  EXPECT_NEAR(res.best_meta.valid_loss, res.zero_velocity_valid_loss, 1e-3);
  EXPECT_LE(res.curve.back().valid_loss, -2 * pairs * 0.99);
  EXPECT_GE(res.curve.back().valid_loss, -2 * pairs - 1e-3);
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
  std::vector<TrainVideo<float>> tr, va;
  for (int k = 0; k < 3; ++k) tr.push_back(synth_video("t" + std::to_string(k), small_params(16, 52, k)));
  va.push_back(synth_video("v", small_params(16, 52, 9)));
  auto cfg = quick_config(2);
  cfg.strict_deterministic = true;
  const auto a = train(tr, va, LatentModel<float>(toy_model()), cfg);
  const auto b = train(tr, va, LatentModel<float>(toy_model()), cfg);
  cfg.strict_deterministic = false;
  cfg.threads = 3;
  const auto c = train(tr, va, LatentModel<float>(toy_model()), cfg);
  ASSERT_EQ(a.curve.size(), 3u);
  for (const auto* other : {&b, &c}) {
    EXPECT_EQ(loss_csv(a.curve), loss_csv(other->curve));
    for (std::size_t k = 0; k < a.last.params().size(); ++k)
      EXPECT_EQ(a.last.params()[k].values, other->last.params()[k].values) << a.last.params()[k].name;
    EXPECT_EQ(a.last_meta.step, other->last_meta.step);
  }
  EXPECT_EQ(a.last_meta.step, 2 * 3);  // 12 clips per epoch in batches of 4
}

TEST(Train, ReturnsArgminCheckpointAndBeatsZeroVelocityBaseline) {
  std::vector<TrainVideo<float>> tr, va;
  for (int k = 0; k < 4; ++k) tr.push_back(synth_video("t" + std::to_string(k), small_params(32, 60, k)));
  va.push_back(synth_video("v", small_params(32, 60, 7)));
  auto cfg = quick_config(8);
  int steps_seen = 0;
  TrainHooks<float> hooks;
  hooks.on_step = [&](std::int64_t, double err) {
    ++steps_seen;
    EXPECT_LE(err, 1e-5);
  };
  const auto res = train(tr, va, LatentModel<float>(toy_model(32)), cfg, hooks);
  EXPECT_EQ(steps_seen, 8 * 4);
  double lowest = res.curve.front().valid_loss;
  for (const auto& r : res.curve) {
    EXPECT_LE(res.best_meta.valid_loss, r.valid_loss);
    lowest = std::min(lowest, r.valid_loss);
  }
  EXPECT_EQ(res.best_meta.valid_loss, lowest);
  // The selected weights reproduce the recorded validation loss.
  auto rerun = cfg;
  rerun.epochs = 0;
  const auto check = train(tr, va, res.best, rerun);
  EXPECT_NEAR(check.curve.front().valid_loss, res.best_meta.valid_loss, 1e-9);
  EXPECT_LT(res.best_meta.valid_loss, res.zero_velocity_valid_loss);
  EXPECT_LE(res.max_orthonormality_error, 1e-5);
}

TEST(Train, ResumeContinuesCounters) {
  const std::vector<TrainVideo<float>> set{synth_video("a", small_params(16, 50, 2))};
  const auto cfg = quick_config(2);
  const auto first = train(set, set, LatentModel<float>(toy_model()), cfg);
  const auto second = train(set, set, first.last, cfg, {}, first.last_meta);
  EXPECT_EQ(second.curve.front().epoch, 2);
  EXPECT_EQ(second.curve.back().epoch, 4);
  EXPECT_EQ(second.last_meta.step, 2 * first.last_meta.step);
  EXPECT_EQ(second.last_meta.epoch, 4);
}

TEST(Train, ShortVideosAreSkippedWithWarning) {
  std::vector<TrainVideo<float>> set{synth_video("long", small_params(16, 50, 1)),
                                     synth_video("short", small_params(16, 30, 2))};
  std::vector<std::string> logs;
  TrainHooks<float> hooks;
  hooks.log = [&](const std::string& s) { logs.push_back(s); };
  const auto res = train(set, set, LatentModel<float>(toy_model()), quick_config(0), hooks);
  EXPECT_EQ(res.skipped, (std::vector<std::string>{"short", "short"}));
  EXPECT_TRUE(std::any_of(logs.begin(), logs.end(), [](const std::string& s) {
    return s.find("warning: skipping short") != std::string::npos;
  }));
  const std::vector<TrainVideo<float>> only_short{set[1]};
  EXPECT_THROW(train(only_short, only_short, LatentModel<float>(toy_model()), quick_config(1)), DataError);
  EXPECT_THROW(train({}, set, LatentModel<float>(toy_model()), quick_config(1)), DataError);
}

TEST(Train, GradientGuardAbortsWithDiagnostic) {
  const std::vector<TrainVideo<float>> set{synth_video("a", small_params(16, 50, 1))};
  auto cfg = quick_config(1);
  cfg.grad_norm_limit = 1e-12;
  try {
    train(set, set, LatentModel<float>(toy_model()), cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("gradient norm"), std::string::npos);
  }
}

}  // namespace
}  // namespace orbit
