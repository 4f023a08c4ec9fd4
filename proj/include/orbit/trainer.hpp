#pragma once

// Self-supervised training loop: rotation-augmented clip sampling, Adam on the
// video registration loss, fixed validation clips and argmin checkpoint selection.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/checkpoint.hpp"
#include "orbit/model.hpp"
#include "orbit/optim.hpp"
#include "orbit/preprocess.hpp"
#include "orbit/rng.hpp"
#include "orbit/similarity.hpp"

namespace orbit {

struct TrainConfig {
  int clip_length = 25;
  int crop_size = 0;  // 0: the model input size
  int batch_size = 16;
  int epochs = 500;
  double learning_rate = 1e-4;
  int temporal_downsample = 2;
  std::uint64_t seed = 0;
  double validation_fraction = 0.15;
  double grad_norm_limit = 1e4;
  double orthonormality_tolerance = 1e-5;
  int threads = 1;
  bool strict_deterministic = false;
  LossConfig loss;

  /// Settings for the 64² desk model.
  static TrainConfig desk() {
    TrainConfig c;
    c.epochs = 30;
    c.learning_rate = 1e-3;
    return c;
  }

  int effective_crop(const ModelConfig& m) const { return crop_size > 0 ? crop_size : m.input_size; }
  int effective_threads() const { return strict_deterministic ? 1 : std::max(1, threads); }

  void validate(const ModelConfig& m) const {
    loss.validate();
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("TrainConfig: " + what);
    };
    need(clip_length >= loss.max_offset + 1, "clip_length must be at least max_offset + 1");
    need(effective_crop(m) == m.input_size, "crop_size must equal the model input size");
    need(batch_size >= 1, "batch_size must be >= 1");
    need(epochs >= 0, "epochs must be >= 0");
    need(learning_rate > 0, "learning_rate must be positive");
    need(temporal_downsample >= 1, "temporal_downsample must be >= 1");
    need(validation_fraction > 0 && validation_fraction < 1, "validation_fraction must be in (0, 1)");
    need(grad_norm_limit > 0, "grad_norm_limit must be positive");
    need(threads >= 1, "threads must be >= 1");
    need(PreprocessSizes::for_input(m.input_size).train_size >= effective_crop(m),
         "crop_size exceeds the preprocessed frame size");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"clip_length", c.clip_length},
          {"crop_size", c.crop_size},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"temporal_downsample", c.temporal_downsample},
          {"seed", c.seed},
          {"validation_fraction", c.validation_fraction},
          {"grad_norm_limit", c.grad_norm_limit},
          {"orthonormality_tolerance", c.orthonormality_tolerance},
          {"threads", c.threads},
          {"strict_deterministic", c.strict_deterministic},
          {"loss",
           {{"window", c.loss.window},
            {"max_offset", c.loss.max_offset},
            {"epsilon", c.loss.epsilon},
            {"exp_steps", c.loss.exp_steps},
            {"smoothness_weight", c.loss.smoothness_weight}}}};
}

/// Overwrites the fields present in `j`; unknown keys are a ConfigError.
inline void update_from_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "clip_length") c.clip_length = val.get<int>();
      else if (key == "crop_size") c.crop_size = val.get<int>();
      else if (key == "batch_size") c.batch_size = val.get<int>();
      else if (key == "epochs") c.epochs = val.get<int>();
      else if (key == "learning_rate") c.learning_rate = val.get<double>();
      else if (key == "temporal_downsample") c.temporal_downsample = val.get<int>();
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "validation_fraction") c.validation_fraction = val.get<double>();
      else if (key == "grad_norm_limit") c.grad_norm_limit = val.get<double>();
      else if (key == "orthonormality_tolerance") c.orthonormality_tolerance = val.get<double>();
      else if (key == "threads") c.threads = val.get<int>();
      else if (key == "strict_deterministic") c.strict_deterministic = val.get<bool>();
      else if (key == "loss") {
        if (!val.is_object()) throw ConfigError("train.loss must be an object");
        for (const auto& [lk, lv] : val.items()) {
          if (lk == "window") c.loss.window = lv.get<int>();
          else if (lk == "max_offset") c.loss.max_offset = lv.get<int>();
          else if (lk == "epsilon") c.loss.epsilon = lv.get<double>();
          else if (lk == "exp_steps") c.loss.exp_steps = lv.get<int>();
          else if (lk == "smoothness_weight") c.loss.smoothness_weight = lv.get<double>();
          else throw ConfigError("unknown key train.loss." + lk);
        }
      } else
        throw ConfigError("unknown key train." + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

template <class T>
struct TrainVideo {
  std::string id;
  Video<T> video;  // intensities in [0, 1]
  CropBox roi;     // empty box: the whole frame
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();  // NaN for the pre-training row
  double valid_loss = 0;
};

inline std::string loss_csv(const std::vector<EpochRecord>& curve) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,valid_loss\n";
  for (const auto& r : curve) {
    os << r.epoch << ',';
    if (!std::isnan(r.train_loss)) os << r.train_loss;
    os << ',' << r.valid_loss << '\n';
  }
  return os.str();
}

template <class T>
struct TrainHooks {
  std::function<void(const std::string&)> log;
  /// After every epoch (including the pre-training row); `improved` marks a new best.
  std::function<void(const EpochRecord&, const LatentModel<T>&, const CheckpointMeta&, bool improved)> on_epoch;
  /// After every optimizer step, with ‖E·Eᵀ − I‖∞ of the updated basis.
  std::function<void(std::int64_t step, double orthonormality_error)> on_step;
};

template <class T>
struct TrainResult {
  LatentModel<T> best;
  CheckpointMeta best_meta;
  LatentModel<T> last;
  CheckpointMeta last_meta;
  std::vector<EpochRecord> curve;
  double max_orthonormality_error = 0;
  /// Mean validation loss with all velocities zero (identity flows).
  double zero_velocity_valid_loss = 0;
  std::vector<std::string> skipped;
};

/// Validation indices: a seeded draw of max(1, round(fraction · n)) of n videos; needs n ≥ 2.
inline std::vector<int> validation_split(int n, double fraction, std::uint64_t seed) {
  if (n < 2) throw DataError("need at least 2 videos to split off a validation set");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed ^ 0x5eed511ull);
  rng.shuffle(idx.begin(), idx.end());
  const int k = std::clamp(static_cast<int>(std::lround(fraction * n)), 1, n - 1);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception is rethrown.
template <class F>
void parallel_for(int n, int threads, F&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <class T>
std::vector<Video<T>> prepare_members(const std::vector<TrainVideo<T>>& set, const ModelConfig& m,
                                      const TrainConfig& cfg, std::vector<std::string>& skipped,
                                      const std::function<void(const std::string&)>& log) {
  auto sizes = PreprocessSizes::for_input(m.input_size);
  sizes.temporal_downsample = cfg.temporal_downsample;
  std::vector<Video<T>> out;
  for (const auto& tv : set) {
    CropBox roi = tv.roi;
    if (roi.height == 0 || roi.width == 0) roi = {0, 0, tv.video.height(), tv.video.width()};
    auto v = preprocess_video(tv.video, roi, PreprocessMode::train, sizes);
    if (v.frames() < cfg.clip_length) {
      skipped.push_back(tv.id);
      if (log)
        log("warning: skipping " + tv.id + ": " + std::to_string(v.frames()) + " frames after downsampling, clip needs " +
            std::to_string(cfg.clip_length));
      continue;
    }
    for (auto& r : rotation_augment(v)) out.push_back(std::move(r));
  }
  return out;
}

template <class T>
T clip_loss(const LatentModel<T>& model, const Video<T>& clip, const LossConfig& loss) {
  const auto o = model.forward(model.bind(false), model.frames_var(clip));
  return ad::video_registration_loss(clip, o.velocities, loss).item();
}

template <class T>
T clip_gradient(const LatentModel<T>& model, const Video<T>& clip, const LossConfig& loss,
                std::vector<std::vector<T>>& grads) {
  const auto b = model.bind(true);
  const auto o = model.forward(b, model.frames_var(clip));
  const auto l = ad::video_registration_loss(clip, o.velocities, loss);
  ad::backward(l);
  grads.resize(b.p.size());
  for (std::size_t k = 0; k < b.p.size(); ++k) grads[k] = b.p[k].grad();
  return l.item();
}

template <class T>
double mean_loss(const LatentModel<T>& model, const std::vector<Video<T>>& clips, const LossConfig& loss, int threads) {
  std::vector<T> per(clips.size());
  parallel_for(static_cast<int>(clips.size()), threads, [&](int i) { per[i] = clip_loss(model, clips[i], loss); });
  double s = 0;
  for (T v : per) s += static_cast<double>(v);
  return s / static_cast<double>(clips.size());
}

}  // namespace detail

/// Mean loss of `clips` under identity flows.
template <class T>
double zero_velocity_loss(const std::vector<Video<T>>& clips, const LossConfig& loss) {
  double s = 0;
  for (const auto& c : clips) {
    const std::vector<VelocityField<T>> zero(c.frames(), VelocityField<T>(c.height(), c.width()));
    s += static_cast<double>(video_registration_loss(c, zero, loss));
  }
  return s / static_cast<double>(clips.size());
}

/// Fixed validation clips: one per video × rotation, windows drawn once from `seed`.
template <class T>
std::vector<Video<T>> validation_clips(const std::vector<Video<T>>& members, int length, int crop, std::uint64_t seed) {
  Rng rng(detail::mix_seed(seed, 0xa11dull));
  std::vector<Video<T>> clips;
  for (const auto& m : members) clips.push_back(sample_clip(m, length, crop, rng));
  return clips;
}

/// Trains a copy of `initial`. `resume` continues the step and epoch counters of a previous run (optimizer moments restart).
template <class T>
TrainResult<T> train(const std::vector<TrainVideo<T>>& train_set, const std::vector<TrainVideo<T>>& valid_set,
                     const LatentModel<T>& initial, const TrainConfig& cfg, const TrainHooks<T>& hooks = {},
                     const std::optional<CheckpointMeta>& resume = std::nullopt) {
  const ModelConfig& mcfg = initial.config();
  cfg.validate(mcfg);
  if (train_set.empty()) throw DataError("train: empty training set");
  if (valid_set.empty()) throw DataError("train: empty validation set");
  const int crop = cfg.effective_crop(mcfg);
  const int threads = cfg.effective_threads();

  TrainResult<T> res{initial, {}, initial, {}, {}, 0, 0, {}};
  const auto members = detail::prepare_members(train_set, mcfg, cfg, res.skipped, hooks.log);
  const auto valid_members = detail::prepare_members(valid_set, mcfg, cfg, res.skipped, hooks.log);
  if (members.empty()) throw DataError("train: no training video is long enough for one clip");
  if (valid_members.empty()) throw DataError("train: no validation video is long enough for one clip");
  const auto vclips = validation_clips(valid_members, cfg.clip_length, crop, cfg.seed);
  res.zero_velocity_valid_loss = zero_velocity_loss(vclips, cfg.loss);

  LatentModel<T> model = initial;
  std::vector<std::size_t> sizes;
  for (const auto& p : model.params()) sizes.push_back(p.values.size());
  Adam<T> adam({cfg.learning_rate, 0.9, 0.999, 1e-8}, sizes);

  CheckpointMeta meta;
  meta.extra = {{"train", to_json(cfg)}};
  int first_epoch = 1;
  if (resume) {
    meta.step = resume->step;
    meta.epoch = resume->epoch;
    first_epoch = resume->epoch + 1;
  }

  auto record_epoch = [&](int epoch, double train_loss) {
    const double vloss = detail::mean_loss(model, vclips, cfg.loss, threads);
    if (!std::isfinite(vloss)) throw NumericalError("validation loss is not finite at epoch " + std::to_string(epoch));
    const EpochRecord rec{epoch, train_loss, vloss};
    res.curve.push_back(rec);
    meta.epoch = epoch;
    meta.valid_loss = vloss;
    const bool improved = res.curve.size() == 1 || vloss < res.best_meta.valid_loss;
    if (improved) {
      res.best = model;
      res.best_meta = meta;
    }
    if (hooks.log) {
      std::ostringstream os;
      os << "epoch " << epoch << " train " << train_loss << " valid " << vloss << (improved ? " *" : "");
      hooks.log(os.str());
    }
    if (hooks.on_epoch) hooks.on_epoch(rec, model, meta, improved);
  };

  record_epoch(first_epoch - 1, std::numeric_limits<double>::quiet_NaN());

  const int basis_index = [&] {
    for (std::size_t k = 0; k < model.params().size(); ++k)
      if (model.params()[k].name == "basis.raw") return static_cast<int>(k);
    throw ContractError("train: model has no basis.raw parameter");
  }();

  for (int epoch = first_epoch; epoch < first_epoch + cfg.epochs; ++epoch) {
    Rng rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<int> order(members.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order.begin(), order.end());
    std::vector<Video<T>> clips;
    clips.reserve(order.size());
    for (int i : order) clips.push_back(sample_clip(members[i], cfg.clip_length, crop, rng));

    double epoch_loss = 0;
    for (std::size_t start = 0; start < clips.size(); start += cfg.batch_size) {
      const int nb = static_cast<int>(std::min<std::size_t>(cfg.batch_size, clips.size() - start));
      std::vector<std::vector<std::vector<T>>> per_grads(nb);
      std::vector<T> per_loss(nb);
      detail::parallel_for(nb, threads, [&](int i) {
        per_loss[i] = detail::clip_gradient(model, clips[start + i], cfg.loss, per_grads[i]);
      });
      // Fixed-order reduction.
      std::vector<std::vector<T>> grads = std::move(per_grads[0]);
      double batch_loss = static_cast<double>(per_loss[0]);
      for (int i = 1; i < nb; ++i) {
        batch_loss += static_cast<double>(per_loss[i]);
        for (std::size_t k = 0; k < grads.size(); ++k)
          for (std::size_t e = 0; e < grads[k].size(); ++e) grads[k][e] += per_grads[i][k][e];
      }
      double norm2 = 0;
      for (auto& g : grads)
        for (auto& e : g) {
          e /= static_cast<T>(nb);
          norm2 += static_cast<double>(e) * static_cast<double>(e);
        }
      batch_loss /= nb;
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(batch_loss) || !std::isfinite(norm))
        throw NumericalError("training diverged: non-finite loss or gradient at step " + std::to_string(meta.step + 1));
      if (norm > cfg.grad_norm_limit)
        throw NumericalError("training diverged: gradient norm " + std::to_string(norm) + " exceeds " +
                             std::to_string(cfg.grad_norm_limit) + " at step " + std::to_string(meta.step + 1));
      std::vector<std::vector<T>*> ptrs;
      for (auto& p : model.params()) ptrs.push_back(&p.values);
      adam.step(ptrs, grads);
      ++meta.step;
      epoch_loss += batch_loss * nb;

      const auto& raw = model.params()[basis_index];
      const auto e = orthonormalize(raw.values, raw.shape[0], raw.shape[1]);
      const double err = orthonormality_error<T>(e, raw.shape[0], raw.shape[1]);
      res.max_orthonormality_error = std::max(res.max_orthonormality_error, err);
      if (hooks.on_step) hooks.on_step(meta.step, err);
      if (!(err <= cfg.orthonormality_tolerance))
        throw NumericalError("latent basis lost orthonormality at step " + std::to_string(meta.step) +
                             " (error " + std::to_string(err) + ")");
    }
    record_epoch(epoch, epoch_loss / static_cast<double>(clips.size()));
  }
  res.last = model;
  res.last_meta = meta;
  res.best_meta.extra = meta.extra;
  return res;
}

}  // namespace orbit
