#pragma once

// Frozen multi-stage feature extractors and the per-channel statistics used to
// normalize their activations.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/autograd.hpp"
#include "dpa/random.hpp"

namespace dpa {

inline constexpr double kSigmaFloor = 1e-4;

enum class Provenance { pretrained_classifier, fixed_random };

inline const char* to_string(Provenance p) {
  return p == Provenance::fixed_random ? "fixed-random" : "pretrained-classifier";
}

struct StageInfo {
  int index = 0;
  /// Spatial reduction of this stage's output relative to the input.
  int downsample = 1;
  int channels = 0;
};

template <typename Real>
struct FeatureMap {
  int stage = 0;
  Tensor<Real> data;
};

struct FeatureStats {
  int stage = 0;
  std::vector<double> mu;
  std::vector<double> sigma;
  std::string source;
  /// Input resolution the statistics were gathered at; 0 when unspecified.
  int resolution = 0;

  int channels() const noexcept { return static_cast<int>(mu.size()); }
  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

/// Stats with mu = 0, sigma = 1; normalizing with them is the identity.
inline FeatureStats unit_stats(int stage, int channels) {
  return FeatureStats{stage, std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), "unit", 0};
}

/// A frozen extractor f. Implementations must be deterministic and must not
/// mutate their parameters.
template <typename Real>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual const std::vector<StageInfo>& stages() const = 0;
  virtual int input_channels() const = 0;
  virtual Provenance provenance() const = 0;

  /// Activations of `stage` for a batch; differentiable with respect to `images`.
  virtual ag::Var<Real> forward(const ag::Var<Real>& images, int stage) const = 0;

  int n_stages() const { return static_cast<int>(stages().size()); }

  const StageInfo& stage_info(int stage) const {
    if (stage < 0 || stage >= n_stages())
      throw ArgumentError("unknown feature stage " + std::to_string(stage) + " (extractor has " + std::to_string(n_stages()) + ")");
    return stages()[static_cast<std::size_t>(stage)];
  }

  void check_input(const Tensor<Real>& images, int stage) const {
    const auto& info = stage_info(stage);
    if (images.c() != input_channels())
      throw ShapeError("extractor expects " + std::to_string(input_channels()) + " input channels, got " + std::to_string(images.c()));
    if (images.h() % info.downsample != 0 || images.w() % info.downsample != 0)
      throw ShapeError("image " + shape_string(images) + " not divisible by stage downsample factor " + std::to_string(info.downsample));
  }
};

/// Random convolutional extractor: stage k = [avg-pool 2x2 if k > 0] -> conv3x3 -> ReLU.
/// Stage k therefore has downsample factor 2^k. Weights are He-normal, biases zero.
template <typename Real>
class FixedRandomExtractor final : public FeatureExtractor<Real> {
 public:
  FixedRandomExtractor(std::uint64_t seed, std::vector<int> channels_per_stage, int input_channels)
      : seed_(seed), channels_(std::move(channels_per_stage)), input_channels_(input_channels) {
    if (channels_.empty()) throw ArgumentError("extractor needs at least one stage");
    if (input_channels_ < 1) throw ArgumentError("extractor needs at least one input channel");
    Rng rng(derive_seed(seed, {0x58545243}));
    int in = input_channels_;
    for (std::size_t s = 0; s < channels_.size(); ++s) {
      const int out = channels_[s];
      if (out < 1) throw ArgumentError("stage channel count must be positive");
      Tensor<Real> w(out, in, 3, 3);
      const double std = std::sqrt(2.0 / (in * 9.0));
      for (auto& v : w.storage()) v = static_cast<Real>(rng.normal(0.0, std));
      weights_.push_back(ag::Var<Real>::constant(std::move(w)));
      biases_.push_back(ag::Var<Real>::constant(Tensor<Real>(1, out, 1, 1)));
      stages_.push_back(StageInfo{static_cast<int>(s), 1 << s, out});
      in = out;
    }
  }

  const std::vector<StageInfo>& stages() const override { return stages_; }
  int input_channels() const override { return input_channels_; }
  Provenance provenance() const override { return Provenance::fixed_random; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<int>& channels() const noexcept { return channels_; }

  ag::Var<Real> forward(const ag::Var<Real>& images, int stage) const override {
    this->check_input(images.value(), stage);
    // Pixels are centred on mid-gray first; uncentred [0, 1] inputs leave the
    // channels whose filters sum negative almost never active.
    ag::Var<Real> h = ag::channel_affine(images, std::vector<Real>(static_cast<std::size_t>(input_channels_), Real(0.5)),
                                         std::vector<Real>(static_cast<std::size_t>(input_channels_), Real(1)));
    for (int s = 0; s <= stage; ++s) {
      if (s > 0) h = ag::avg_pool2(h);
      h = ag::relu(ag::conv2d(h, weights_[s], biases_[s]));
    }
    return h;
  }

  /// Test hook: zero every bias (they already start at zero) or set them to a constant.
  void set_biases(Real value) {
    for (auto& b : biases_) b.mutable_value().fill(value);
  }

 private:
  std::uint64_t seed_;
  std::vector<int> channels_;
  int input_channels_;
  std::vector<StageInfo> stages_;
  std::vector<ag::Var<Real>> weights_, biases_;
};

/// Adapter for an externally supplied network (e.g. a pretrained classifier).
/// The host provides the forward pass and its vector-Jacobian product; nothing
/// here parses foreign weight formats.
template <typename Real>
class ExternalExtractor final : public FeatureExtractor<Real> {
 public:
  using ForwardFn = std::function<Tensor<Real>(const Tensor<Real>& images, int stage)>;
  using VjpFn = std::function<Tensor<Real>(const Tensor<Real>& images, int stage, const Tensor<Real>& grad_features)>;

  ExternalExtractor(std::vector<StageInfo> stages, int input_channels, ForwardFn fwd, VjpFn vjp)
      : stages_(std::move(stages)), input_channels_(input_channels), fwd_(std::move(fwd)), vjp_(std::move(vjp)) {
    for (std::size_t i = 1; i < stages_.size(); ++i)
      if (stages_[i].downsample <= stages_[i - 1].downsample)
        throw ArgumentError("extractor stages must have strictly increasing downsample factors");
  }

  const std::vector<StageInfo>& stages() const override { return stages_; }
  int input_channels() const override { return input_channels_; }
  Provenance provenance() const override { return Provenance::pretrained_classifier; }

  ag::Var<Real> forward(const ag::Var<Real>& images, int stage) const override {
    this->check_input(images.value(), stage);
    Tensor<Real> y = fwd_(images.value(), stage);
    const auto& info = this->stage_info(stage);
    if (y.n() != images.value().n() || y.c() != info.channels || y.h() != images.value().h() / info.downsample ||
        y.w() != images.value().w() / info.downsample)
      throw ShapeError("external extractor returned " + shape_string(y) + " for stage " + std::to_string(stage));
    if (!vjp_) return ag::Var<Real>::constant(std::move(y));
    Tensor<Real> input = images.value();
    return ag::custom<Real>(images, std::move(y), [vjp = vjp_, input = std::move(input), stage](const Tensor<Real>& g) {
      return vjp(input, stage, g);
    });
  }

 private:
  std::vector<StageInfo> stages_;
  int input_channels_;
  ForwardFn fwd_;
  VjpFn vjp_;
};

template <typename Real = float>
std::shared_ptr<FixedRandomExtractor<Real>> make_fixed_random_extractor(std::uint64_t seed, int n_stages,
                                                                        std::vector<int> channels_per_stage,
                                                                        int input_channels = 1) {
  if (n_stages < 1) throw ArgumentError("n_stages must be >= 1");
  if (channels_per_stage.size() == 1 && n_stages > 1) {
    // A single entry doubles per stage.
    const int base = channels_per_stage[0];
    channels_per_stage.clear();
    for (int s = 0; s < n_stages; ++s) channels_per_stage.push_back(base << s);
  }
  if (static_cast<int>(channels_per_stage.size()) != n_stages)
    throw ArgumentError("channels_per_stage must list one count per stage");
  return std::make_shared<FixedRandomExtractor<Real>>(seed, std::move(channels_per_stage), input_channels);
}

/// f(image) at `stage`. Pure: no graph is recorded.
template <typename Real>
FeatureMap<Real> extract(const FeatureExtractor<Real>& extractor, const Tensor<Real>& image, int stage) {
  ag::NoGradGuard guard;
  auto y = extractor.forward(ag::Var<Real>::constant(image), stage);
  return FeatureMap<Real>{stage, y.value()};
}

namespace detail {
// Chan et al. pairwise merge of (count, mean, M2).
struct Moments {
  double count = 0, mean = 0, m2 = 0;
  void merge(const Moments& o) {
    if (o.count == 0) return;
    const double n = count + o.count;
    const double delta = o.mean - mean;
    mean += delta * o.count / n;
    m2 += o.m2 + delta * delta * count * o.count / n;
    count = n;
  }
};
}  // namespace detail

/// Per-channel mean and standard deviation of the stage's responses, pooled over
/// every spatial position of every image. Sigma is floored at kSigmaFloor.
template <typename Real>
FeatureStats compute_stats(const FeatureExtractor<Real>& extractor, std::span<const Tensor<Real>> dataset, int stage,
                           std::string source = "train", std::size_t chunk = 64) {
  if (dataset.empty()) throw DataError("compute_stats: empty dataset");
  const int channels = extractor.stage_info(stage).channels;
  std::vector<detail::Moments> total(static_cast<std::size_t>(channels));
  ag::NoGradGuard guard;
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    const std::size_t end = std::min(dataset.size(), start + chunk);
    auto batch = stack(dataset.subspan(start, end - start));
    auto f = extractor.forward(ag::Var<Real>::constant(std::move(batch)), stage).value();
    for (int n = 0; n < f.n(); ++n)
      for (int c = 0; c < channels; ++c) {
        auto plane = f.plane(n, c);
        detail::Moments m;
        double s = 0;
        for (auto v : plane) s += static_cast<double>(v);
        m.count = static_cast<double>(plane.size());
        m.mean = s / m.count;
        for (auto v : plane) m.m2 += (static_cast<double>(v) - m.mean) * (static_cast<double>(v) - m.mean);
        total[c].merge(m);
      }
  }
  FeatureStats stats;
  stats.stage = stage;
  stats.source = std::move(source);
  stats.resolution = dataset.front().h();
  for (const auto& m : total) {
    stats.mu.push_back(m.mean);
    stats.sigma.push_back(std::max(std::sqrt(m.m2 / m.count), kSigmaFloor));
  }
  return stats;
}

template <typename Real>
FeatureStats compute_stats(const FeatureExtractor<Real>& extractor, const std::vector<Tensor<Real>>& dataset, int stage,
                           std::string source = "train") {
  return compute_stats(extractor, std::span<const Tensor<Real>>(dataset), stage, std::move(source));
}

namespace detail {
template <typename Real>
void check_stats(const FeatureStats& stats, int stage, int channels) {
  if (stats.stage != stage)
    throw ArgumentError("feature stats are for stage " + std::to_string(stats.stage) + ", features are stage " + std::to_string(stage));
  if (stats.channels() != channels || stats.sigma.size() != stats.mu.size())
    throw ShapeError("feature stats have " + std::to_string(stats.channels()) + " channels, features have " + std::to_string(channels));
}
}  // namespace detail

/// Differentiable f_hat = (f - mu) / sigma on a batch of stage activations.
template <typename Real>
ag::Var<Real> normalize(const ag::Var<Real>& features, const FeatureStats& stats, int stage) {
  detail::check_stats<Real>(stats, stage, features.value().c());
  std::vector<Real> shift, inv;
  for (std::size_t c = 0; c < stats.mu.size(); ++c) {
    shift.push_back(static_cast<Real>(stats.mu[c]));
    inv.push_back(static_cast<Real>(1.0 / std::max(stats.sigma[c], kSigmaFloor)));
  }
  return ag::channel_affine(features, std::move(shift), std::move(inv));
}

template <typename Real>
FeatureMap<Real> normalize(const FeatureMap<Real>& fm, const FeatureStats& stats) {
  ag::NoGradGuard guard;
  return FeatureMap<Real>{fm.stage, normalize(ag::Var<Real>::constant(fm.data), stats, fm.stage).value()};
}

// --- stats file -------------------------------------------------------------

inline constexpr int kStatsFormatVersion = 1;

inline nlohmann::json stats_to_json(const FeatureStats& s) {
  return {{"stage", s.stage}, {"mu", s.mu}, {"sigma", s.sigma}, {"source", s.source}, {"resolution", s.resolution}};
}

inline FeatureStats stats_from_json(const nlohmann::json& j) {
  FeatureStats s;
  s.stage = j.at("stage").get<int>();
  s.mu = j.at("mu").get<std::vector<double>>();
  s.sigma = j.at("sigma").get<std::vector<double>>();
  s.source = j.at("source").get<std::string>();
  s.resolution = j.value("resolution", 0);
  if (s.mu.size() != s.sigma.size()) throw FormatError("stats: mu and sigma lengths differ");
  for (auto& v : s.sigma) v = std::max(v, kSigmaFloor);
  return s;
}

inline void save_stats(const std::string& path, const std::vector<FeatureStats>& stats) {
  nlohmann::json j{{"format", "dpa-feature-stats"}, {"version", kStatsFormatVersion}, {"stats", nlohmann::json::array()}};
  for (const auto& s : stats) j["stats"].push_back(stats_to_json(s));
  std::ofstream out(path);
  if (!out) throw DataError("cannot write stats file " + path);
  out << j.dump(1) << '\n';
}

inline std::vector<FeatureStats> load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read stats file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("stats file " + path + ": " + e.what());
  }
  if (j.value("format", "") != "dpa-feature-stats") throw FormatError("stats file " + path + ": wrong format tag");
  if (j.value("version", 0) != kStatsFormatVersion)
    throw VersionMismatch("stats file " + path + ": version " + std::to_string(j.value("version", 0)) + ", expected " +
                          std::to_string(kStatsFormatVersion));
  std::vector<FeatureStats> out;
  for (const auto& s : j.at("stats")) out.push_back(stats_from_json(s));
  return out;
}

}  // namespace dpa
