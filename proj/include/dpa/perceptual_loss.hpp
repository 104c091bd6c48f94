#pragma once

// Relative-perceptual-L1 reconstruction loss, its progressive (blended) form and
// the optional pixel-L1 term.

#include <cmath>
#include <vector>

#include "dpa/features.hpp"

namespace dpa {

struct LossConfig {
  /// Extractor stage used at each resolution level.
  std::vector<int> stage_for_level{0};
  /// Denominator guard.
  double epsilon = 1e-6;
  /// Weight of the mean absolute pixel difference; 0 disables it.
  double l1_weight = 0.0;
  /// Weight of the perceptual term; 0 gives a pure pixel-L1 autoencoder.
  double perceptual_weight = 1.0;

  void validate() const {
    if (!(epsilon > 0)) throw ConfigError("loss.epsilon", "must be > 0");
    if (!(l1_weight >= 0)) throw ConfigError("loss.l1_weight", "must be >= 0");
    if (!(perceptual_weight >= 0)) throw ConfigError("loss.perceptual_weight", "must be >= 0");
    if (stage_for_level.empty()) throw ConfigError("loss.stage_for_level", "must not be empty");
    for (std::size_t i = 1; i < stage_for_level.size(); ++i)
      if (stage_for_level[i] < stage_for_level[i - 1]) throw ConfigError("loss.stage_for_level", "must be non-decreasing");
  }

  bool uses_features() const noexcept { return perceptual_weight > 0; }

  int stage(int level) const {
    if (level < 0 || level >= static_cast<int>(stage_for_level.size()))
      throw ArgumentError("no loss stage configured for level " + std::to_string(level));
    return stage_for_level[static_cast<std::size_t>(level)];
  }
};

/// Everything needed to evaluate the loss at any level: the extractor, the
/// configuration and one FeatureStats per level (indexed by level).
template <typename Real>
struct LossContext {
  std::shared_ptr<const FeatureExtractor<Real>> extractor;
  LossConfig config;
  std::vector<FeatureStats> level_stats;

  const FeatureStats& stats(int level) const {
    if (level < 0 || level >= static_cast<int>(level_stats.size()))
      throw ArgumentError("missing feature stats for level " + std::to_string(level));
    return level_stats[static_cast<std::size_t>(level)];
  }
};

/// 2x2 average pooling.
template <typename Real>
Tensor<Real> down(const Tensor<Real>& x) {
  return kernels::avg_pool2(x);
}

/// sum|a - b| / (sum|a| + eps) over all elements of two feature tensors.
template <typename Real>
double relative_l1(const Tensor<Real>& target_features, const Tensor<Real>& recon_features, double eps) {
  if (!target_features.same_shape(recon_features)) throw ShapeError("relative_l1: shape mismatch");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < target_features.size(); ++i) {
    num += std::abs(static_cast<double>(target_features[i]) - static_cast<double>(recon_features[i]));
    den += std::abs(static_cast<double>(target_features[i]));
  }
  return num / (den + eps);
}

/// Convex combination of the high- and low-resolution terms.
inline double blend_terms(double alpha, double low_term, double high_term) {
  return alpha * high_term + (1.0 - alpha) * low_term;
}

inline double combine_terms(double perceptual_term, double pixel_l1, double l1_weight) {
  return perceptual_term + l1_weight * pixel_l1;
}

namespace detail {
inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha " + std::to_string(alpha) + " outside [0, 1]");
}

template <typename Real>
void check_pair(const Tensor<Real>& x, const Tensor<Real>& xr) {
  if (!x.same_shape(xr)) throw ShapeError("loss inputs differ in shape: " + shape_string(x) + " vs " + shape_string(xr));
}
}  // namespace detail

/// Per-item relative-perceptual-L1 between fixed targets x and reconstructions xr
/// (differentiable in xr). Returns [n, 1, 1, 1].
template <typename Real>
ag::Var<Real> perceptual_terms(const Tensor<Real>& x, const ag::Var<Real>& xr, const FeatureExtractor<Real>& extractor,
                               const FeatureStats& stats, int stage, double eps) {
  detail::check_pair(x, xr.value());
  Tensor<Real> target;
  {
    ag::NoGradGuard guard;
    target = normalize(extractor.forward(ag::Var<Real>::constant(x), stage), stats, stage).value();
  }
  auto recon = normalize(extractor.forward(xr, stage), stats, stage);
  return ag::relative_l1(target, recon, static_cast<Real>(eps));
}

/// Per-item alpha * L(f2(x), f2(xr)) + (1 - alpha) * L(f1(down x), f1(down xr)).
/// Each endpoint evaluates only its own term.
template <typename Real>
ag::Var<Real> blended_terms(const Tensor<Real>& x, const ag::Var<Real>& xr, double alpha,
                            const FeatureExtractor<Real>& extractor, const FeatureStats& stats_low, int stage_low,
                            const FeatureStats& stats_high, int stage_high, double eps) {
  detail::check_alpha(alpha);
  detail::check_pair(x, xr.value());
  if (alpha < 1.0 && (x.h() % 2 != 0 || x.w() % 2 != 0))
    throw ShapeError("blended loss needs even resolution when alpha < 1, got " + shape_string(x));
  if (alpha == 1.0) return perceptual_terms(x, xr, extractor, stats_high, stage_high, eps);
  auto low = perceptual_terms(down(x), ag::avg_pool2(xr), extractor, stats_low, stage_low, eps);
  if (alpha == 0.0) return low;
  auto high = perceptual_terms(x, xr, extractor, stats_high, stage_high, eps);
  return ag::lerp(high, low, static_cast<Real>(alpha));
}

/// Full per-item training loss at (level, alpha): weighted perceptual term
/// (blended while fading) plus the weighted pixel-L1 term.
template <typename Real>
ag::Var<Real> loss_terms(const Tensor<Real>& x, const ag::Var<Real>& xr, int level, double alpha,
                         const LossContext<Real>& ctx) {
  detail::check_alpha(alpha);
  detail::check_pair(x, xr.value());
  const auto& cfg = ctx.config;
  if (level == 0) alpha = 1.0;
  ag::Var<Real> total;
  if (cfg.perceptual_weight > 0) {
    if (!ctx.extractor) throw ArgumentError("perceptual loss needs a feature extractor");
    const auto& low_stats = alpha < 1.0 ? ctx.stats(level - 1) : ctx.stats(level);
    const int low_stage = alpha < 1.0 ? cfg.stage(level - 1) : cfg.stage(level);
    total = blended_terms(x, xr, alpha, *ctx.extractor, low_stats, low_stage, ctx.stats(level), cfg.stage(level), cfg.epsilon);
    if (cfg.perceptual_weight != 1.0) total = ag::scale(total, static_cast<Real>(cfg.perceptual_weight));
  }
  if (cfg.l1_weight > 0) {
    auto l1 = ag::scale(ag::mean_abs_diff(x, xr), static_cast<Real>(cfg.l1_weight));
    total = total.defined() ? ag::add(total, l1) : l1;
  }
  if (!total.defined()) throw ConfigError("loss", "both perceptual_weight and l1_weight are zero");
  return total;
}

// --- scalar convenience wrappers (batch mean) ---------------------------------

template <typename Real>
double batch_mean(const ag::Var<Real>& per_item) {
  double s = 0;
  for (auto v : per_item.value().storage()) s += static_cast<double>(v);
  return s / static_cast<double>(per_item.value().size());
}

template <typename Real>
double relative_perceptual_l1(const Tensor<Real>& x, const Tensor<Real>& xr, const FeatureExtractor<Real>& extractor,
                              const FeatureStats& stats, int stage, double eps = 1e-6) {
  ag::NoGradGuard guard;
  return batch_mean(perceptual_terms(x, ag::Var<Real>::constant(xr), extractor, stats, stage, eps));
}

/// Stages come from cfg.stage_for_level at blend.level - 1 (low) and blend.level (high).
template <typename Real>
double blended_loss(const Tensor<Real>& x, const Tensor<Real>& xr, int level, double alpha,
                    const FeatureExtractor<Real>& extractor, const FeatureStats& stats_low, const FeatureStats& stats_high,
                    const LossConfig& cfg) {
  detail::check_alpha(alpha);
  ag::NoGradGuard guard;
  const int stage_high = cfg.stage(level);
  const int stage_low = level > 0 ? cfg.stage(level - 1) : stage_high;
  return batch_mean(blended_terms(x, ag::Var<Real>::constant(xr), alpha, extractor, stats_low, stage_low, stats_high,
                                  stage_high, cfg.epsilon));
}

template <typename Real>
double mean_abs_pixel_diff(const Tensor<Real>& x, const Tensor<Real>& xr) {
  ag::NoGradGuard guard;
  return batch_mean(ag::mean_abs_diff(x, ag::Var<Real>::constant(xr)));
}

/// Perceptual term plus l1_weight times the mean absolute pixel difference.
template <typename Real>
double combined_loss(const Tensor<Real>& x, const Tensor<Real>& xr, const FeatureExtractor<Real>& extractor,
                     const FeatureStats& stats, int stage, const LossConfig& cfg) {
  const double perceptual = relative_perceptual_l1(x, xr, extractor, stats, stage, cfg.epsilon);
  if (cfg.l1_weight == 0.0) return perceptual;
  return combine_terms(perceptual, mean_abs_pixel_diff(x, xr), cfg.l1_weight);
}

}  // namespace dpa
