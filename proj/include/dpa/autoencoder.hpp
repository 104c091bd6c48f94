#pragma once

// Progressive-growing convolutional autoencoder built from pre-activation
// residual blocks.
//
// Level j works at resolution base_resolution * 2^j with channels(j) feature
// maps. At level k the encoder is
//   from_image[k] -> blocks[k] -> pool -> enc_down[k] -> blocks[k-1] -> ... -> blocks[0] -> dense(z)
// and the decoder mirrors it with bilinear-upsample + conv3x3 between levels,
// ending in to_image[k]. While a new level fades in (alpha < 1) the encoder
// blends its first low-resolution activation with from_image[k-1](down(x)) and
// the output is blended with the nearest-upsampled to_image[k-1] output, so at
// alpha = 0 the network computes exactly upsample(previous model(down(x))).

#include <bit>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dpa/nn.hpp"
#include "dpa/perceptual_loss.hpp"

namespace dpa {

struct ModelConfig {
  int base_resolution = 8;
  int target_resolution = 32;
  int bottleneck_dim = 16;
  /// Channels at the highest-resolution level; each lower level doubles this up to max_channels.
  int base_channels = 8;
  int max_channels = 32;
  int blocks_per_level = 2;
  int input_channels = 1;

  void validate() const {
    if (base_resolution < 1) throw ConfigError("model.base_resolution", "must be positive");
    if (target_resolution < base_resolution || target_resolution % base_resolution != 0 ||
        !std::has_single_bit(static_cast<unsigned>(target_resolution / base_resolution)))
      throw ConfigError("model.target_resolution", "must be base_resolution * 2^L, got " + std::to_string(target_resolution));
    if (bottleneck_dim < 1) throw ConfigError("model.bottleneck_dim", "must be >= 1");
    if (base_channels < 1) throw ConfigError("model.base_channels", "must be >= 1");
    if (max_channels < base_channels) throw ConfigError("model.max_channels", "must be >= base_channels");
    if (blocks_per_level < 1) throw ConfigError("model.blocks_per_level", "must be >= 1");
    if (input_channels != 1 && input_channels != 3) throw ConfigError("model.input_channels", "must be 1 or 3");
  }

  /// Index L of the target level.
  int max_level() const { return std::countr_zero(static_cast<unsigned>(target_resolution / base_resolution)); }
  int resolution(int level) const { return base_resolution << level; }
  int channels(int level) const {
    const int shift = max_level() - level;
    long c = static_cast<long>(base_channels) << shift;
    return static_cast<int>(std::min<long>(c, max_channels));
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BlendState {
  int level = 0;
  double alpha = 1.0;

  void validate() const {
    if (level < 0) throw ArgumentError("negative level");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha " + std::to_string(alpha) + " outside [0, 1]");
    if (level == 0 && alpha != 1.0) throw ArgumentError("level 0 has no fade-in; alpha must be 1");
  }
  friend bool operator==(const BlendState&, const BlendState&) = default;
};

template <typename Real>
Tensor<Real> upsample_nearest(const Tensor<Real>& x) {
  return kernels::upsample_nearest2(x);
}

/// alpha * x + (1 - alpha) * upsample(down(x)), upsample being nearest-neighbour x2.
template <typename Real>
Tensor<Real> blend_input(const Tensor<Real>& x, double alpha) {
  detail::check_alpha(alpha);
  if (alpha == 1.0) return x;
  auto low = kernels::upsample_nearest2(kernels::avg_pool2(x));
  if (alpha == 0.0) return low;
  const Real a = static_cast<Real>(alpha), b = static_cast<Real>(1.0 - alpha);
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * low[i];
  return out;
}

template <typename Real>
class Autoencoder {
 public:
  Autoencoder(ModelConfig config, std::uint64_t seed) : config_(config), seed_(seed) {
    config_.validate();
    Rng rng(derive_seed(seed_, {0xB077}));
    const int c0 = config_.channels(0);
    const int flat = c0 * config_.base_resolution * config_.base_resolution;
    enc_fc_ = nn::Dense<Real>("bottleneck.enc", flat, config_.bottleneck_dim, rng);
    dec_fc_ = nn::Dense<Real>("bottleneck.dec", config_.bottleneck_dim, flat, rng);
    add_level();
  }

  Autoencoder(Autoencoder&&) noexcept = default;
  Autoencoder& operator=(Autoencoder&&) noexcept = default;
  Autoencoder(const Autoencoder&) = delete;
  Autoencoder& operator=(const Autoencoder&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const BlendState& blend() const noexcept { return blend_; }
  int level() const noexcept { return blend_.level; }
  bool at_target() const noexcept { return level() == config_.max_level(); }

  void set_alpha(double alpha) {
    BlendState b{blend_.level, alpha};
    b.validate();
    blend_ = b;
  }

  /// Adds the next resolution level; alpha restarts at 0. Existing parameters are untouched.
  void grow() {
    if (at_target())
      throw ArgumentError("autoencoder already at target resolution " + std::to_string(config_.target_resolution));
    add_level();
    blend_ = BlendState{blend_.level + 1, 0.0};
  }

  /// Differentiable forward pass on an already input-blended batch.
  ag::Var<Real> forward(const ag::Var<Real>& x_in, BlendState blend) const {
    check(x_in.value(), blend);
    const Real slope = static_cast<Real>(nn::kLeakySlope);
    const int k = blend.level;
    const bool fading = k > 0 && blend.alpha < 1.0;
    const Real alpha = static_cast<Real>(blend.alpha);

    ag::Var<Real> h = levels_[k].from_image(x_in);
    for (int j = k; j >= 0; --j) {
      for (const auto& b : levels_[j].enc_blocks) h = b(h);
      if (j == 0) break;
      h = levels_[j].enc_down(ag::avg_pool2(h));
      if (j == k && fading) h = ag::lerp(h, levels_[k - 1].from_image(ag::avg_pool2(x_in)), alpha);
    }
    const int n = x_in.value().n();
    const int c0 = config_.channels(0), b = config_.base_resolution;
    auto z = enc_fc_(ag::reshape(ag::leaky_relu(h, slope), {n, c0 * b * b, 1, 1}));
    ag::Var<Real> d = ag::reshape(dec_fc_(z), {n, c0, b, b});
    ag::Var<Real> previous;
    for (int j = 0; j <= k; ++j) {
      if (j > 0) {
        previous = d;
        d = levels_[j].dec_up(ag::leaky_relu(ag::upsample_bilinear2(d), slope));
      }
      for (const auto& blk : levels_[j].dec_blocks) d = blk(d);
    }
    auto out = levels_[k].to_image(ag::leaky_relu(d, slope));
    if (fading) {
      auto old = levels_[k - 1].to_image(ag::leaky_relu(previous, slope));
      out = ag::lerp(out, ag::upsample_nearest2(old), alpha);
    }
    return out;
  }

  /// g(x) at the given blend state; input blending is applied here.
  Tensor<Real> reconstruct(const Tensor<Real>& x, BlendState blend) const {
    check(x, blend);
    ag::NoGradGuard guard;
    auto x_in = blend.level > 0 ? blend_input(x, blend.alpha) : x;
    return forward(ag::Var<Real>::constant(std::move(x_in)), blend).value();
  }

  Tensor<Real> reconstruct(const Tensor<Real>& x) const { return reconstruct(x, blend_); }

  /// Parameters of every instantiated level, in a fixed order.
  std::vector<nn::Parameter<Real>*> parameters() {
    std::vector<nn::Parameter<Real>*> out;
    enc_fc_.collect(out);
    dec_fc_.collect(out);
    for (auto& lvl : levels_) lvl.collect(out);
    return out;
  }

  std::map<std::string, Tensor<Real>> state() const {
    std::map<std::string, Tensor<Real>> out;
    for (auto* p : const_cast<Autoencoder*>(this)->parameters()) out.emplace(p->name, p->value());
    return out;
  }

  /// Overwrites parameter values by name. Every instantiated parameter must be present.
  void load_state(const std::map<std::string, Tensor<Real>>& st) {
    for (auto* p : parameters()) {
      auto it = st.find(p->name);
      if (it == st.end()) throw FormatError("missing parameter " + p->name);
      if (!it->second.same_shape(p->value())) throw FormatError("parameter " + p->name + " has the wrong shape");
      p->value() = it->second;
    }
  }

  /// Deep copy (parameters are shared handles, so the defaulted copy would alias them).
  Autoencoder clone() const {
    Autoencoder copy(config_, seed_);
    while (copy.level() < level()) copy.grow();
    copy.blend_ = blend_;
    copy.load_state(state());
    return copy;
  }

  /// Restores level and alpha; used by checkpoint loading.
  void restore_blend(BlendState b) {
    b.validate();
    while (level() < b.level) grow();
    if (b.level != level()) throw FormatError("checkpoint level above instantiated levels");
    blend_ = b;
  }

 private:
  struct Level {
    nn::Conv2d<Real> from_image, enc_down, dec_up, to_image;
    std::vector<nn::ResidualBlock<Real>> enc_blocks, dec_blocks;

    void collect(std::vector<nn::Parameter<Real>*>& out) {
      from_image.collect(out);
      for (auto& b : enc_blocks) b.collect(out);
      if (!enc_down.weight.name.empty()) enc_down.collect(out);
      if (!dec_up.weight.name.empty()) dec_up.collect(out);
      for (auto& b : dec_blocks) b.collect(out);
      to_image.collect(out);
    }
  };

  void add_level() {
    const int j = static_cast<int>(levels_.size());
    Rng rng(derive_seed(seed_, {0x1E7E1, static_cast<std::uint64_t>(j)}));
    const int c = config_.channels(j);
    const std::string p = "L" + std::to_string(j) + ".";
    Level lvl;
    lvl.from_image = nn::Conv2d<Real>(p + "from_image", config_.input_channels, c, 1, rng);
    for (int i = 0; i < config_.blocks_per_level; ++i)
      lvl.enc_blocks.emplace_back(p + "enc" + std::to_string(i), c, rng);
    if (j > 0) {
      const int cp = config_.channels(j - 1);
      lvl.enc_down = nn::Conv2d<Real>(p + "enc_down", c, cp, 1, rng);
      lvl.dec_up = nn::Conv2d<Real>(p + "dec_up", cp, c, 3, rng);
    }
    for (int i = 0; i < config_.blocks_per_level; ++i)
      lvl.dec_blocks.emplace_back(p + "dec" + std::to_string(i), c, rng);
    lvl.to_image = nn::Conv2d<Real>(p + "to_image", c, config_.input_channels, 1, rng);
    levels_.push_back(std::move(lvl));
  }

  void check(const Tensor<Real>& x, const BlendState& blend) const {
    blend.validate();
    if (blend.level > level())
      throw ArgumentError("blend level " + std::to_string(blend.level) + " above model level " + std::to_string(level()));
    const int r = config_.resolution(blend.level);
    if (x.h() != r || x.w() != r)
      throw ShapeError("input resolution " + std::to_string(x.h()) + "x" + std::to_string(x.w()) + " does not match level " +
                       std::to_string(blend.level) + " resolution " + std::to_string(r));
    if (x.c() != config_.input_channels)
      throw ShapeError("input has " + std::to_string(x.c()) + " channels, model expects " + std::to_string(config_.input_channels));
  }

  ModelConfig config_;
  std::uint64_t seed_;
  BlendState blend_{};
  nn::Dense<Real> enc_fc_, dec_fc_;
  std::vector<Level> levels_;
};

}  // namespace dpa
