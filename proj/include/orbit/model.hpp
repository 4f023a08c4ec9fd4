#pragma once

// Latent motion model: a per-frame encoder, a static/motion decomposition of
// the latent code on a learned orthonormal subspace, and a velocity-field
// decoder.
//
//   h_t      = encode(I_t)
//   z_static = f1(mean_t h_t)
//   alpha_t  = f2(h_t)                      (M coordinates)
//   z_motion = Eᵀ alpha_t,  E = GramSchmidt(raw basis)
//   V_t      = decode(z_static + z_motion)

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "orbit/autodiff.hpp"
#include "orbit/image.hpp"
#include "orbit/nn.hpp"
#include "orbit/rng.hpp"

namespace orbit {

struct ModelConfig {
  int latent_dim = 64;
  int motion_dim = 1;
  int input_size = 64;
  std::vector<int> encoder_channels{8, 16, 32, 64};
  /// First entry: channels of the coarse grid produced by the decoder's linear
  /// layer; each further entry: output channels of one upsample+conv block.
  std::vector<int> decoder_channels{64, 32, 16, 8, 8};
  double velocity_cap = 8.0;
  std::uint64_t init_seed = 0;

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig paper() {
    ModelConfig c;
    c.latent_dim = 128;
    c.input_size = 128;
    c.encoder_channels = {16, 32, 64, 128};
    c.decoder_channels = {128, 64, 32, 16, 16};
    return c;
  }

  int decoder_blocks() const { return static_cast<int>(decoder_channels.size()) - 1; }
  int coarse_size() const { return input_size >> decoder_blocks(); }
  int encoded_size() const { return input_size >> static_cast<int>(encoder_channels.size()); }

  void validate() const {
    detail::require(motion_dim >= 1 && motion_dim <= 8, "ModelConfig: motion_dim must be in [1, 8]");
    detail::require(latent_dim >= 32, "ModelConfig: latent_dim must be >= 32");
    detail::require(motion_dim < latent_dim, "ModelConfig: motion_dim must be smaller than latent_dim");
    detail::require(!encoder_channels.empty() && decoder_channels.size() >= 2,
                    "ModelConfig: encoder needs >= 1 block and decoder >= 1 upsampling block");
    for (int c : encoder_channels) detail::require(c >= 1, "ModelConfig: channel counts must be positive");
    for (int c : decoder_channels) detail::require(c >= 1, "ModelConfig: channel counts must be positive");
    const int enc_div = 1 << encoder_channels.size();
    const int dec_div = 1 << decoder_blocks();
    detail::require(input_size >= 8 && input_size % enc_div == 0,
                    "ModelConfig: input_size must be divisible by 2^(encoder depth)");
    detail::require(input_size % dec_div == 0, "ModelConfig: input_size must be divisible by 2^(decoder blocks)");
    detail::require(velocity_cap > 0, "ModelConfig: velocity_cap must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<T> values;
};

/// Per-video latent bundle.
template <class T>
struct LatentState {
  int frames = 0;
  int latent_dim = 0;
  int motion_dim = 0;
  std::vector<T> h;         // frames × D
  std::vector<T> z_static;  // D
  std::vector<T> alpha;     // frames × M
  std::vector<T> z_motion;  // frames × D
  std::vector<T> basis;     // M × D, orthonormal rows

  T alpha_at(int t, int m) const { return alpha[static_cast<std::size_t>(t) * motion_dim + m]; }
};

namespace ad {

/// Classical Gram–Schmidt on the rows of raw[M,D], in row order.
/// Throws NumericalError when a projected row falls below min_norm.
template <class T>
Var<T> orthonormalize(const Var<T>& raw, T min_norm = T(1e-8)) {
  orbit::detail::require(raw.shape().size() == 2, "orthonormalize: need [M,D]");
  const int m = raw.dim(0);
  std::vector<Var<T>> rows;
  for (int k = 0; k < m; ++k) {
    Var<T> u = select(raw, k);
    const Var<T> r = u;
    for (int j = 0; j < k; ++j) u = sub(u, scale_by(rows[j], dot(r, rows[j])));
    try {
      rows.push_back(normalize(u, min_norm));
    } catch (const NumericalError&) {
      throw NumericalError("orthonormalize: basis is rank deficient at row " + std::to_string(k));
    }
  }
  return stack(rows);
}

}  // namespace ad

template <class T>
std::vector<T> orthonormalize(const std::vector<T>& raw, int rows, int cols) {
  detail::require(raw.size() == static_cast<std::size_t>(rows) * cols, "orthonormalize: size mismatch");
  auto e = ad::orthonormalize(ad::Var<T>::constant({rows, cols}, raw));
  return {e.value().begin(), e.value().end()};
}

/// ‖E·Eᵀ − I‖∞ for row-major E[M,D].
template <class T>
double orthonormality_error(std::span<const T> basis, int m, int d) {
  double worst = 0;
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      double s = 0;
      for (int k = 0; k < d; ++k) s += static_cast<double>(basis[a * d + k]) * basis[b * d + k];
      worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

template <class T>
class LatentModel {
 public:
  /// Parameters bound into one graph (trainable leaves or constants).
  struct Bound {
    std::vector<ad::Var<T>> p;
    const ad::Var<T>& operator[](int k) const { return p[k]; }
  };

  struct Outputs {
    ad::Var<T> velocities;  // [T,2,H,W]
    ad::Var<T> h;           // [T,D]
    ad::Var<T> z_static;    // [1,D]
    ad::Var<T> alpha;       // [T,M]
    ad::Var<T> basis;       // [M,D]
    ad::Var<T> z_motion;    // [T,D]
  };

  explicit LatentModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_layout();
    initialise();
  }

  /// Adopts existing parameter tensors (checkpoint load). Names and shapes must match the layout.
  LatentModel(ModelConfig cfg, std::vector<NamedTensor<T>> params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_layout();
    detail::require(params.size() == params_.size(), "LatentModel: parameter count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
      detail::require(params[k].name == params_[k].name && params[k].shape == params_[k].shape,
                      "LatentModel: parameter '" + params[k].name + "' does not match the configured layout");
      detail::require(params[k].values.size() == ad::numel(params[k].shape), "LatentModel: parameter size mismatch");
    }
    params_ = std::move(params);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NamedTensor<T>>& params() const { return params_; }
  std::vector<NamedTensor<T>>& params() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.values.size();
    return n;
  }

  Bound bind(bool trainable) const {
    Bound b;
    b.p.reserve(params_.size());
    for (const auto& t : params_)
      b.p.push_back(trainable ? ad::Var<T>::parameter(t.shape, t.values) : ad::Var<T>::constant(t.shape, t.values));
    return b;
  }

  // -------------------------------------------------------------------------
  // Graph-building pieces

  /// frames[N,1,S,S] → h[N,D]
  ad::Var<T> encode(const Bound& b, const ad::Var<T>& frames) const {
    ad::Var<T> x = frames;
    for (std::size_t k = 0; k < cfg_.encoder_channels.size(); ++k) {
      x = ad::conv2d(x, b[lay_.enc_w[k]], b[lay_.enc_b[k]], 2, 1);
      x = ad::leaky_relu(ad::instance_norm(x));
    }
    const int n = x.dim(0);
    x = ad::reshape(x, {n, static_cast<int>(x.size()) / n});
    return ad::linear(x, b[lay_.enc_fc_w], b[lay_.enc_fc_b]);
  }

  /// h[N,D] → z_static[1,D] (f1 applied to the mean over rows)
  ad::Var<T> static_component(const Bound& b, const ad::Var<T>& h) const {
    return mlp(b, ad::mean_rows(h), lay_.f1);
  }

  /// h[N,D] → alpha[N,M]
  ad::Var<T> motion_coords(const Bound& b, const ad::Var<T>& h) const { return mlp(b, h, lay_.f2); }

  ad::Var<T> basis(const Bound& b) const { return ad::orthonormalize(b[lay_.basis]); }

  /// z[N,D] → velocities[N,2,S,S]
  ad::Var<T> decode(const Bound& b, const ad::Var<T>& z) const {
    const int n = z.dim(0), s = cfg_.coarse_size();
    ad::Var<T> x = ad::linear(z, b[lay_.dec_fc_w], b[lay_.dec_fc_b]);
    x = ad::reshape(x, {n, cfg_.decoder_channels[0], s, s});
    for (int k = 0; k < cfg_.decoder_blocks(); ++k) {
      x = ad::upsample2x(x);
      x = ad::leaky_relu(ad::conv2d(x, b[lay_.dec_w[k]], b[lay_.dec_b[k]], 1, 1));
    }
    x = ad::conv2d(x, b[lay_.out_w], b[lay_.out_b], 1, 1);
    return ad::velocity_cap(x, static_cast<T>(cfg_.velocity_cap));
  }

  /// Full pipeline on frames[N,1,S,S].
  Outputs forward(const Bound& b, const ad::Var<T>& frames) const {
    Outputs o;
    o.h = encode(b, frames);
    o.z_static = static_component(b, o.h);
    o.alpha = motion_coords(b, o.h);
    o.basis = basis(b);
    o.z_motion = ad::matmul(o.alpha, o.basis);
    o.velocities = decode(b, ad::add_rows(o.z_motion, ad::reshape(o.z_static, {cfg_.latent_dim})));
    return o;
  }

  // -------------------------------------------------------------------------
  // Value API

  ad::Var<T> frames_var(const Video<T>& video) const {
    detail::require(video.height() == cfg_.input_size && video.width() == cfg_.input_size,
                    "LatentModel: video frames must be " + std::to_string(cfg_.input_size) + "x" +
                        std::to_string(cfg_.input_size));
    return ad::Var<T>::constant({video.frames(), 1, video.height(), video.width()}, video.storage());
  }

  std::vector<T> encode(const Image<T>& frame) const {
    detail::require(frame.height() == cfg_.input_size && frame.width() == cfg_.input_size,
                    "encode: frame size does not match input_size");
    const auto h = encode(bind(false), ad::Var<T>::constant({1, 1, frame.height(), frame.width()}, frame.storage()));
    return {h.value().begin(), h.value().end()};
  }

  /// h_all is frames × D, row-major.
  std::vector<T> static_component(const std::vector<T>& h_all) const {
    const int d = cfg_.latent_dim;
    detail::require(!h_all.empty() && h_all.size() % d == 0, "static_component: need T x D embeddings, T >= 1");
    const auto z = static_component(bind(false), ad::Var<T>::constant({static_cast<int>(h_all.size()) / d, d}, h_all));
    return {z.value().begin(), z.value().end()};
  }

  std::vector<T> motion_coords(const std::vector<T>& h) const {
    detail::require(h.size() == static_cast<std::size_t>(cfg_.latent_dim), "motion_coords: need a D-vector");
    const auto a = motion_coords(bind(false), ad::Var<T>::constant({1, cfg_.latent_dim}, h));
    return {a.value().begin(), a.value().end()};
  }

  std::vector<T> basis() const {
    const auto e = basis(bind(false));
    return {e.value().begin(), e.value().end()};
  }

  VelocityField<T> decode(const std::vector<T>& z) const {
    detail::require(z.size() == static_cast<std::size_t>(cfg_.latent_dim), "decode: need a D-vector");
    for (T v : z) detail::require(std::isfinite(static_cast<double>(v)), "decode: latent must be finite");
    const auto v = decode(bind(false), ad::Var<T>::constant({1, cfg_.latent_dim}, z));
    return VelocityField<T>(cfg_.input_size, cfg_.input_size, std::vector<T>(v.value().begin(), v.value().end()));
  }

  std::pair<std::vector<VelocityField<T>>, LatentState<T>> forward(const Video<T>& video) const {
    detail::require(video.frames() >= 1, "forward: empty video");
    const auto o = forward(bind(false), frames_var(video));
    std::vector<VelocityField<T>> vel;
    const std::size_t plane = 2 * video.frame_size();
    for (int t = 0; t < video.frames(); ++t) {
      const auto first = o.velocities.value().begin() + static_cast<std::ptrdiff_t>(t * plane);
      vel.emplace_back(cfg_.input_size, cfg_.input_size,
                       std::vector<T>(first, first + static_cast<std::ptrdiff_t>(plane)));
    }
    return {std::move(vel), to_state(o, video.frames())};
  }

  /// Motion coordinates only (the decoder is not evaluated).
  LatentState<T> infer_latents(const Video<T>& video) const {
    detail::require(video.frames() >= 1, "infer_latents: empty video");
    const auto b = bind(false);
    Outputs o;
    o.h = encode(b, frames_var(video));
    o.z_static = static_component(b, o.h);
    o.alpha = motion_coords(b, o.h);
    o.basis = basis(b);
    o.z_motion = ad::matmul(o.alpha, o.basis);
    return to_state(o, video.frames());
  }

  LatentState<T> to_state(const Outputs& o, int frames) const {
    LatentState<T> s;
    s.frames = frames;
    s.latent_dim = cfg_.latent_dim;
    s.motion_dim = cfg_.motion_dim;
    s.h.assign(o.h.value().begin(), o.h.value().end());
    s.z_static.assign(o.z_static.value().begin(), o.z_static.value().end());
    s.alpha.assign(o.alpha.value().begin(), o.alpha.value().end());
    s.z_motion.assign(o.z_motion.value().begin(), o.z_motion.value().end());
    s.basis.assign(o.basis.value().begin(), o.basis.value().end());
    return s;
  }

 private:
  struct Mlp {
    int w1, b1, w2, b2;
  };
  struct Layout {
    std::vector<int> enc_w, enc_b;
    int enc_fc_w = 0, enc_fc_b = 0;
    Mlp f1{}, f2{};
    int basis = 0;
    int dec_fc_w = 0, dec_fc_b = 0;
    std::vector<int> dec_w, dec_b;
    int out_w = 0, out_b = 0;
  };

  ad::Var<T> mlp(const Bound& b, const ad::Var<T>& x, const Mlp& m) const {
    return ad::linear(ad::leaky_relu(ad::linear(x, b[m.w1], b[m.b1])), b[m.w2], b[m.b2]);
  }

  int add_param(const std::string& name, ad::Shape shape) {
    params_.push_back({name, shape, std::vector<T>(ad::numel(shape), T(0))});
    return static_cast<int>(params_.size()) - 1;
  }

  void build_layout() {
    params_.clear();
    const int d = cfg_.latent_dim, m = cfg_.motion_dim;
    int in = 1;
    for (std::size_t k = 0; k < cfg_.encoder_channels.size(); ++k) {
      const int out = cfg_.encoder_channels[k];
      lay_.enc_w.push_back(add_param("encoder.conv" + std::to_string(k) + ".weight", {out, in, 3, 3}));
      lay_.enc_b.push_back(add_param("encoder.conv" + std::to_string(k) + ".bias", {out}));
      in = out;
    }
    const int flat = in * cfg_.encoded_size() * cfg_.encoded_size();
    lay_.enc_fc_w = add_param("encoder.fc.weight", {d, flat});
    lay_.enc_fc_b = add_param("encoder.fc.bias", {d});
    auto add_mlp = [&](const std::string& name, int out) {
      Mlp r{};
      r.w1 = add_param(name + ".0.weight", {d, d});
      r.b1 = add_param(name + ".0.bias", {d});
      r.w2 = add_param(name + ".1.weight", {out, d});
      r.b2 = add_param(name + ".1.bias", {out});
      return r;
    };
    lay_.f1 = add_mlp("static_mlp", d);
    lay_.f2 = add_mlp("motion_mlp", m);
    lay_.basis = add_param("basis.raw", {m, d});
    const int c0 = cfg_.decoder_channels[0], s = cfg_.coarse_size();
    lay_.dec_fc_w = add_param("decoder.fc.weight", {c0 * s * s, d});
    lay_.dec_fc_b = add_param("decoder.fc.bias", {c0 * s * s});
    in = c0;
    for (int k = 0; k < cfg_.decoder_blocks(); ++k) {
      const int out = cfg_.decoder_channels[k + 1];
      lay_.dec_w.push_back(add_param("decoder.up" + std::to_string(k) + ".weight", {out, in, 3, 3}));
      lay_.dec_b.push_back(add_param("decoder.up" + std::to_string(k) + ".bias", {out}));
      in = out;
    }
    lay_.out_w = add_param("decoder.out.weight", {2, in, 3, 3});
    lay_.out_b = add_param("decoder.out.bias", {2});
  }

  /// Uniform(±1/√fan_in) for weights and biases; the raw basis is unit Gaussian.
  /// The velocity head starts at 1/10 scale so initial flows are near identity.
  void initialise() {
    Rng rng(cfg_.init_seed);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (static_cast<int>(k) == lay_.basis) {
        for (auto& v : p.values) v = static_cast<T>(rng.normal());
        continue;
      }
      // Biases take the fan-in of the weight declared just before them.
      const auto& wshape = p.shape.size() == 1 ? params_[k - 1].shape : p.shape;
      const std::size_t fan_in = ad::numel(wshape) / static_cast<std::size_t>(wshape[0]);
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      if (static_cast<int>(k) == lay_.out_w || static_cast<int>(k) == lay_.out_b) bound *= 0.1;
      for (auto& v : p.values) v = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  ModelConfig cfg_;
  Layout lay_;
  std::vector<NamedTensor<T>> params_;
};

}  // namespace orbit
