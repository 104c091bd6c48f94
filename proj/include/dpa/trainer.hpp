#pragma once

// Training loop over normal images only: progressive level schedule with a
// linear fade-in, level -> feature stage lock-step, Adam, and hold-out early
// stopping in the final (fully faded-in) phase.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/autoencoder.hpp"
#include "dpa/checkpoint.hpp"

namespace dpa {

struct TrainConfig {
  int steps_per_level = 2000;
  /// Portion of each level's budget spent fading the new level in.
  double fade_fraction = 0.5;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 32;
  double holdout_fraction = 0.1;
  int patience = 5;
  double rel_improve_tol = 1e-3;
  /// Hold-out cadence in optimizer steps.
  int eval_every = 100;
  std::uint64_t seed = 0;
  /// Step budget of train_flat; 0 means steps_per_level * (levels).
  int flat_steps = 0;
  /// Random crops of the target size from larger training images (centre crop otherwise).
  bool random_crop = false;

  void validate() const {
    if (steps_per_level < 1) throw ConfigError("train.steps_per_level", "must be positive");
    if (!(fade_fraction > 0.0 && fade_fraction <= 1.0)) throw ConfigError("train.fade_fraction", "must be in (0, 1]");
    if (!(lr > 0)) throw ConfigError("train.lr", "must be positive");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("train.beta1", "must be in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta2", "must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be positive");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("train.holdout_fraction", "must be in (0, 1)");
    if (patience < 1) throw ConfigError("train.patience", "must be positive");
    if (!(rel_improve_tol >= 0)) throw ConfigError("train.rel_improve_tol", "must be >= 0");
    if (eval_every < 1) throw ConfigError("train.eval_every", "must be positive");
    if (flat_steps < 0) throw ConfigError("train.flat_steps", "must be >= 0");
  }
};

/// Fade schedule: alpha = min(1, step / (fade_fraction * steps_per_level)); level 0 is always 1.
inline BlendState alpha_at(long step_within_level, int level, const TrainConfig& cfg) {
  if (level == 0) return {0, 1.0};
  const double window = cfg.fade_fraction * cfg.steps_per_level;
  const double a = std::min(1.0, static_cast<double>(step_within_level) / window);
  return {level, std::max(0.0, a)};
}

/// Monotone level -> stage map clamped to the extractor: clamp(level + offset, 0, n_stages - 1).
inline int level_stage(int level, int stage_offset, int n_stages) {
  if (level < 0) throw ArgumentError("negative level");
  return std::clamp(level + stage_offset, 0, n_stages - 1);
}

/// Stage map for levels 0..max_level ending at final_stage, deepening one stage per level.
inline std::vector<int> lock_step_stages(int max_level, int final_stage, int n_stages) {
  if (final_stage < 0 || final_stage >= n_stages) throw ConfigError("loss.final_stage", "outside the extractor's stages");
  std::vector<int> out;
  for (int level = 0; level <= max_level; ++level) out.push_back(level_stage(level, final_stage - max_level, n_stages));
  return out;
}

struct HoldoutEval {
  long step = 0;
  int level = 0;
  double alpha = 1.0;
  double loss = 0.0;
  friend bool operator==(const HoldoutEval&, const HoldoutEval&) = default;
};

struct TrainReport {
  std::string run_id;
  nlohmann::json config;
  /// Batch loss of every optimizer step.
  std::vector<double> loss_trace;
  /// (first step, level) for every level trained.
  std::vector<std::pair<long, int>> level_starts;
  std::vector<HoldoutEval> holdout;
  long steps_run = 0;
  /// Step of the returned parameters (-1 if none was selected).
  long best_step = -1;
  double final_holdout_loss = std::numeric_limits<double>::quiet_NaN();
  bool early_stopped = false;
  std::string abort_reason;
  std::vector<std::size_t> holdout_ids;
  std::vector<std::size_t> train_ids;
};

/// Thrown when the loss goes non-finite. Holds the report up to the failure.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, TrainReport report) : NumericError(what), report_(std::move(report)) {}
  const TrainReport& report() const noexcept { return report_; }

 private:
  TrainReport report_;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps_per_level", c.steps_per_level}, {"fade_fraction", c.fade_fraction}, {"lr", c.lr},
          {"beta1", c.beta1},  {"beta2", c.beta2},  {"batch_size", c.batch_size},
          {"holdout_fraction", c.holdout_fraction}, {"patience", c.patience},
          {"rel_improve_tol", c.rel_improve_tol},   {"eval_every", c.eval_every},
          {"seed", c.seed},    {"flat_steps", c.flat_steps}, {"random_crop", c.random_crop}};
}

inline nlohmann::json to_json(const LossConfig& c) {
  return {{"stage_for_level", c.stage_for_level}, {"epsilon", c.epsilon}, {"l1_weight", c.l1_weight},
          {"perceptual_weight", c.perceptual_weight}};
}

inline LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  c.stage_for_level = j.at("stage_for_level").get<std::vector<int>>();
  c.epsilon = j.at("epsilon").get<double>();
  c.l1_weight = j.at("l1_weight").get<double>();
  c.perceptual_weight = j.at("perceptual_weight").get<double>();
  return c;
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json j;
  j["schema"] = "dpa-train-report";
  j["version"] = 1;
  j["run_id"] = r.run_id;
  j["config"] = r.config;
  j["loss_trace"] = r.loss_trace;
  j["level_starts"] = nlohmann::json::array();
  for (auto [step, level] : r.level_starts) j["level_starts"].push_back({{"step", step}, {"level", level}});
  j["holdout"] = nlohmann::json::array();
  for (const auto& e : r.holdout) j["holdout"].push_back({{"step", e.step}, {"level", e.level}, {"alpha", e.alpha}, {"loss", e.loss}});
  j["steps_run"] = r.steps_run;
  j["best_step"] = r.best_step;
  j["final_holdout_loss"] = r.final_holdout_loss;
  j["early_stopped"] = r.early_stopped;
  j["abort_reason"] = r.abort_reason;
  j["holdout_ids"] = r.holdout_ids;
  return j;
}

struct TrainHooks {
  /// Called with the dataset indices of every gradient batch.
  std::function<void(std::span<const std::size_t>)> on_batch;
  /// Called after every hold-out evaluation.
  std::function<void(const HoldoutEval&)> on_eval;
  /// Per-level feature statistics to use instead of computing them from the training split.
  std::vector<FeatureStats> stats_override;
};

template <typename Real>
struct TrainResult {
  Autoencoder<Real> model;
  TrainReport report;
  LossContext<Real> loss;
};

namespace detail {

template <typename Real>
Tensor<Real> crop(const Tensor<Real>& img, int size, int y0, int x0) {
  if (img.h() == size && img.w() == size) return img;
  Tensor<Real> out(1, img.c(), size, size);
  for (int c = 0; c < img.c(); ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(0, c, y, x) = img.at(0, c, y0 + y, x0 + x);
  return out;
}

template <typename Real>
Tensor<Real> center_crop_to(const Tensor<Real>& img, int size) {
  if (img.h() < size || img.w() < size)
    throw ShapeError("training image " + shape_string(img) + " smaller than target resolution " + std::to_string(size));
  return crop(img, size, (img.h() - size) / 2, (img.w() - size) / 2);
}

template <typename Real>
Tensor<Real> down_to(Tensor<Real> img, int resolution) {
  while (img.h() > resolution) img = kernels::avg_pool2(img);
  return img;
}

template <typename Real>
class Trainer {
 public:
  Trainer(const std::vector<Tensor<Real>>& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
          const LossConfig& loss_cfg, std::shared_ptr<const FeatureExtractor<Real>> extractor, TrainHooks hooks, bool flat)
      : data_(data), model_cfg_(model_cfg), cfg_(cfg), hooks_(std::move(hooks)), flat_(flat) {
    model_cfg_.validate();
    cfg_.validate();
    loss_cfg.validate();
    if (data.empty()) throw DataError("training set is empty");
    max_level_ = model_cfg_.max_level();
    if (static_cast<int>(loss_cfg.stage_for_level.size()) != max_level_ + 1)
      throw ConfigError("loss.stage_for_level", "needs one stage per level (" + std::to_string(max_level_ + 1) + ")");
    if (loss_cfg.uses_features()) {
      if (!extractor) throw ArgumentError("perceptual loss needs a feature extractor");
      for (int s : loss_cfg.stage_for_level) extractor->stage_info(s);
      if (extractor->input_channels() != model_cfg_.input_channels)
        throw ConfigError("model.input_channels", "does not match the feature extractor's input channels");
    }
    ctx_.extractor = std::move(extractor);
    ctx_.config = loss_cfg;

    split();
    report_.config = {{"model", to_json(model_cfg_)}, {"train", to_json(cfg_)}, {"loss", to_json(loss_cfg)}, {"flat", flat_}};
    std::ostringstream id;
    id << std::hex << fnv1a(report_.config.dump().data(), report_.config.dump().size());
    report_.run_id = id.str();
    report_.holdout_ids = holdout_ids_;
    report_.train_ids = train_ids_;

    const int target = model_cfg_.target_resolution;
    for (auto i : holdout_ids_) holdout_full_.push_back(center_crop_to(data_[i], target));
    level_train_.resize(max_level_ + 1);
    level_holdout_.resize(max_level_ + 1);
    for (int level = first_level(); level <= max_level_; ++level) {
      const int r = model_cfg_.resolution(level);
      if (!cfg_.random_crop)
        for (auto i : train_ids_) level_train_[level].push_back(down_to(center_crop_to(data_[i], target), r));
      for (const auto& h : holdout_full_) level_holdout_[level].push_back(down_to(h, r));
    }
    prepare_stats();
  }

  TrainResult<Real> run() {
    Autoencoder<Real> model(model_cfg_, derive_seed(cfg_.seed, {0x4D4F44454C}));
    nn::Adam<Real> adam({cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8});
    Rng batch_rng(derive_seed(cfg_.seed, {0xBA7C4}));
    Rng crop_rng(derive_seed(cfg_.seed, {0xC409}));
    std::vector<std::size_t> order(train_ids_.size());
    std::size_t cursor = order.size();

    std::optional<std::map<std::string, Tensor<Real>>> best_state;
    double best = std::numeric_limits<double>::infinity();
    double reference = std::numeric_limits<double>::infinity();
    int bad_evals = 0;
    long step = 0;

    if (flat_)
      while (!model.at_target()) model.grow();
    for (int level = first_level(); level <= max_level_; ++level) {
      if (level > model.level()) model.grow();
      const long budget = flat_ ? flat_budget() : cfg_.steps_per_level;
      report_.level_starts.emplace_back(step, level);
      bool stop = false;
      for (long s = 0; s < budget && !stop; ++s, ++step) {
        const BlendState blend = flat_ ? BlendState{level, 1.0} : alpha_at(s, level, cfg_);
        model.set_alpha(blend.alpha);

        std::vector<std::size_t> batch;
        for (int b = 0; b < cfg_.batch_size; ++b) {
          if (cursor == order.size()) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            batch_rng.shuffle(order);
            cursor = 0;
          }
          batch.push_back(order[cursor++]);
        }
        std::vector<std::size_t> ids;
        for (auto b : batch) ids.push_back(train_ids_[b]);
        if (hooks_.on_batch) hooks_.on_batch(ids);

        Tensor<Real> x = batch_images(level, batch, crop_rng);
        if (blend.alpha < 1.0) x = blend_input(x, blend.alpha);
        auto params = model.parameters();
        nn::Adam<Real>::zero_grad(params);
        auto out = model.forward(ag::Var<Real>::constant(x), blend);
        auto loss = ag::mean(loss_terms(x, out, blend.level, blend.alpha, ctx_));
        const double value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(value)) {
          report_.steps_run = step;
          report_.abort_reason = "non-finite training loss at step " + std::to_string(step);
          throw TrainingDiverged(report_.abort_reason, report_);
        }
        report_.loss_trace.push_back(value);
        loss.backward();
        adam.step(params);

        const bool level_end = s + 1 == budget;
        if ((step + 1) % cfg_.eval_every == 0 || level_end) {
          const BlendState eval_blend = flat_ ? BlendState{level, 1.0} : alpha_at(s + 1, level, cfg_);
          const double h = holdout_loss(model, eval_blend);
          HoldoutEval e{step + 1, level, eval_blend.alpha, h};
          report_.holdout.push_back(e);
          if (hooks_.on_eval) hooks_.on_eval(e);
          if (!std::isfinite(h)) {
            report_.steps_run = step + 1;
            report_.abort_reason = "non-finite hold-out loss at step " + std::to_string(step + 1);
            throw TrainingDiverged(report_.abort_reason, report_);
          }
          // Early stopping only once the final level is fully faded in.
          if (level == max_level_ && eval_blend.alpha == 1.0) {
            if (h < best) {
              best = h;
              best_state = model.state();
              report_.best_step = step + 1;
            }
            if (h < reference * (1.0 - cfg_.rel_improve_tol)) {
              reference = h;
              bad_evals = 0;
            } else if (++bad_evals >= cfg_.patience) {
              report_.early_stopped = true;
              stop = true;
            }
          }
        }
      }
    }
    report_.steps_run = step;
    model.set_alpha(1.0);
    if (best_state) {
      model.load_state(*best_state);
      report_.final_holdout_loss = best;
    } else {
      report_.final_holdout_loss = holdout_loss(model, model.blend());
      report_.best_step = step;
    }
    return TrainResult<Real>{std::move(model), std::move(report_), std::move(ctx_)};
  }

 private:
  int first_level() const { return flat_ ? max_level_ : 0; }

  long flat_budget() const {
    return cfg_.flat_steps > 0 ? cfg_.flat_steps : static_cast<long>(cfg_.steps_per_level) * (max_level_ + 1);
  }

  void split() {
    std::vector<std::size_t> idx(data_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(cfg_.seed, {0x401D}));
    rng.shuffle(idx);
    const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg_.holdout_fraction * idx.size())));
    if (n_hold >= idx.size()) throw DataError("training set too small for a hold-out split (" + std::to_string(idx.size()) + " images)");
    holdout_ids_.assign(idx.begin(), idx.begin() + static_cast<long>(n_hold));
    train_ids_.assign(idx.begin() + static_cast<long>(n_hold), idx.end());
    std::sort(holdout_ids_.begin(), holdout_ids_.end());
    std::sort(train_ids_.begin(), train_ids_.end());
  }

  void prepare_stats() {
    const auto& cfg = ctx_.config;
    ctx_.level_stats.assign(max_level_ + 1, FeatureStats{-1, {}, {}, "unset", 0});
    if (!cfg.uses_features()) return;
    if (!hooks_.stats_override.empty()) {
      if (static_cast<int>(hooks_.stats_override.size()) != max_level_ + 1)
        throw ConfigError("features.stats_file", "needs one stats entry per level");
      ctx_.level_stats = hooks_.stats_override;
      return;
    }
    const int target = model_cfg_.target_resolution;
    for (int level = first_level(); level <= max_level_; ++level) {
      std::vector<Tensor<Real>> imgs;
      if (!level_train_[level].empty()) {
        imgs = level_train_[level];
      } else {
        for (auto i : train_ids_) imgs.push_back(down_to(center_crop_to(data_[i], target), model_cfg_.resolution(level)));
      }
      ctx_.level_stats[level] = compute_stats(*ctx_.extractor, imgs, cfg.stage(level), "train-normal");
    }
  }

  Tensor<Real> batch_images(int level, const std::vector<std::size_t>& batch, Rng& crop_rng) const {
    if (!cfg_.random_crop) return gather(level_train_[level], std::span<const std::size_t>(batch));
    const int target = model_cfg_.target_resolution;
    std::vector<Tensor<Real>> items;
    for (auto b : batch) {
      const auto& img = data_[train_ids_[b]];
      const int y0 = img.h() > target ? static_cast<int>(crop_rng.index(static_cast<std::size_t>(img.h() - target + 1))) : 0;
      const int x0 = img.w() > target ? static_cast<int>(crop_rng.index(static_cast<std::size_t>(img.w() - target + 1))) : 0;
      items.push_back(down_to(crop(img, target, y0, x0), model_cfg_.resolution(level)));
    }
    return stack(items);
  }

  double holdout_loss(const Autoencoder<Real>& model, BlendState blend) const {
    ag::NoGradGuard guard;
    const auto& imgs = level_holdout_[blend.level];
    double total = 0;
    for (std::size_t start = 0; start < imgs.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t end = std::min(imgs.size(), start + static_cast<std::size_t>(cfg_.batch_size));
      auto x = stack(std::span<const Tensor<Real>>(imgs).subspan(start, end - start));
      if (blend.alpha < 1.0) x = blend_input(x, blend.alpha);
      auto out = model.forward(ag::Var<Real>::constant(x), blend);
      auto per = loss_terms(x, out, blend.level, blend.alpha, ctx_);
      for (auto v : per.value().storage()) total += static_cast<double>(v);
    }
    return total / static_cast<double>(imgs.size());
  }

  const std::vector<Tensor<Real>>& data_;
  ModelConfig model_cfg_;
  TrainConfig cfg_;
  TrainHooks hooks_;
  bool flat_;
  int max_level_ = 0;
  LossContext<Real> ctx_;
  TrainReport report_;
  std::vector<std::size_t> train_ids_, holdout_ids_;
  std::vector<Tensor<Real>> holdout_full_;
  std::vector<std::vector<Tensor<Real>>> level_train_, level_holdout_;
};

}  // namespace detail

/// Progressive training: levels 0..L, each with steps_per_level steps, the first
/// fade_fraction of which fade the new level in. Returns the parameters with the
/// best hold-out loss of the final phase.
template <typename Real>
TrainResult<Real> train(const std::vector<Tensor<Real>>& normal_images, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                        std::shared_ptr<const FeatureExtractor<Real>> extractor, TrainHooks hooks = {}) {
  return detail::Trainer<Real>(normal_images, model_cfg, train_cfg, loss_cfg, std::move(extractor), std::move(hooks), false).run();
}

/// Same pipeline without progressive growing: a single level at the target
/// resolution with the deepest configured loss stage.
template <typename Real>
TrainResult<Real> train_flat(const std::vector<Tensor<Real>>& normal_images, const ModelConfig& model_cfg,
                             const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                             std::shared_ptr<const FeatureExtractor<Real>> extractor, TrainHooks hooks = {}) {
  return detail::Trainer<Real>(normal_images, model_cfg, train_cfg, loss_cfg, std::move(extractor), std::move(hooks), true).run();
}

}  // namespace dpa
