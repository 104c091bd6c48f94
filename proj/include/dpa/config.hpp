#pragma once

// Run configuration: every knob of a CLI run, read from a flat text file of
// dotted `key = value` lines (# starts a comment) with command-line overrides.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/hparam.hpp"
#include "dpa/synthetic.hpp"

namespace dpa {

struct FeatureSpec {
  std::uint64_t seed = 7;
  int n_stages = 3;
  /// Channels per stage; a single entry doubles at every stage.
  std::vector<int> channels{16};
  /// Optional precomputed per-level stats (JSON written by save_stats) replacing training-set stats.
  std::string stats_file;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  /// Stage used at the final level; lower levels step down from it.
  int final_stage = 0;
  FeatureSpec features;
  PreprocessSpec preprocess;
  SearchSpace search;
  int k_folds = 3;
  /// steps_per_level of fold models during search.
  int trial_steps_per_level = 500;
  ValidationSpec validation;
  SweepSpec sweep;
  SynthSpec synth;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw ConfigError(key, "cannot parse '" + text + "' as a number");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  throw ConfigError(key, "cannot parse '" + text + "' as a boolean");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& text, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse(key, item));
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Search preprocessing candidates are the product of these lists.
struct PreprocessGrid {
  std::vector<int> resolutions;
  std::vector<int> grayscale, center_crop, hist_equalize;
};

inline PreprocessGrid grid_of(const SearchSpace& s) {
  PreprocessGrid g;
  auto add = [](std::vector<int>& v, int x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& p : s.preprocessing) {
    add(g.resolutions, p.target_resolution);
    add(g.grayscale, p.grayscale);
    add(g.center_crop, p.center_crop);
    add(g.hist_equalize, p.hist_equalize);
  }
  return g;
}

inline void set_grid(SearchSpace& s, const PreprocessGrid& g) {
  s.preprocessing.clear();
  for (int r : g.resolutions)
    for (int gr : g.grayscale)
      for (int c : g.center_crop)
        for (int h : g.hist_equalize) s.preprocessing.push_back({r, gr != 0, c != 0, h != 0});
}

inline std::vector<int> parse_bool_list(const std::string& key, const std::string& text) {
  return parse_list<int>(key, text, [](const std::string& k, const std::string& t) { return parse_bool(k, t) ? 1 : 0; });
}

inline std::string bool_list(const std::vector<int>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << (v[i] ? "true" : "false");
  return s.str();
}

#define DPA_INT(KEY, EXPR)                                                                                        \
  {KEY, {[](RunConfig& c, const std::string& v) { EXPR = parse_number<std::decay_t<decltype(EXPR)>>(KEY, v); }, \
         [](const RunConfig& c) { return std::to_string(EXPR); }}}
#define DPA_REAL(KEY, EXPR)                                                                  \
  {KEY, {[](RunConfig& c, const std::string& v) { EXPR = parse_number<double>(KEY, v); }, \
         [](const RunConfig& c) { return fmt(EXPR); }}}
#define DPA_BOOL(KEY, EXPR)                                                           \
  {KEY, {[](RunConfig& c, const std::string& v) { EXPR = parse_bool(KEY, v); }, \
         [](const RunConfig& c) { return std::string(EXPR ? "true" : "false"); }}}
#define DPA_INTS(KEY, EXPR)                                                                                         \
  {KEY, {[](RunConfig& c, const std::string& v) { EXPR = parse_list<int>(KEY, v, parse_number<int>); }, \
         [](const RunConfig& c) { return join(EXPR); }}}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      DPA_INT("model.base_resolution", c.model.base_resolution),
      DPA_INT("model.bottleneck_dim", c.model.bottleneck_dim),
      DPA_INT("model.base_channels", c.model.base_channels),
      DPA_INT("model.max_channels", c.model.max_channels),
      DPA_INT("model.blocks_per_level", c.model.blocks_per_level),
      DPA_INT("train.steps_per_level", c.train.steps_per_level),
      DPA_REAL("train.fade_fraction", c.train.fade_fraction),
      DPA_REAL("train.lr", c.train.lr),
      DPA_REAL("train.beta1", c.train.beta1),
      DPA_REAL("train.beta2", c.train.beta2),
      DPA_INT("train.batch_size", c.train.batch_size),
      DPA_REAL("train.holdout_fraction", c.train.holdout_fraction),
      DPA_INT("train.patience", c.train.patience),
      DPA_REAL("train.rel_improve_tol", c.train.rel_improve_tol),
      DPA_INT("train.eval_every", c.train.eval_every),
      DPA_INT("train.seed", c.train.seed),
      DPA_INT("train.flat_steps", c.train.flat_steps),
      DPA_BOOL("train.random_crop", c.train.random_crop),
      DPA_INT("loss.final_stage", c.final_stage),
      DPA_REAL("loss.epsilon", c.loss.epsilon),
      DPA_REAL("loss.l1_weight", c.loss.l1_weight),
      DPA_REAL("loss.perceptual_weight", c.loss.perceptual_weight),
      DPA_INT("features.seed", c.features.seed),
      DPA_INT("features.n_stages", c.features.n_stages),
      DPA_INTS("features.channels", c.features.channels),
      {"features.stats_file",
       {[](RunConfig& c, const std::string& v) { c.features.stats_file = trim(v); },
        [](const RunConfig& c) { return c.features.stats_file; }}},
      DPA_INT("preprocess.target_resolution", c.preprocess.target_resolution),
      DPA_BOOL("preprocess.grayscale", c.preprocess.grayscale),
      DPA_BOOL("preprocess.center_crop", c.preprocess.center_crop),
      DPA_BOOL("preprocess.hist_equalize", c.preprocess.hist_equalize),
      DPA_INTS("search.bottleneck_dims", c.search.bottleneck_dims),
      DPA_INTS("search.final_stages", c.search.final_stages),
      {"search.resolutions",
       {[](RunConfig& c, const std::string& v) {
          auto g = grid_of(c.search);
          g.resolutions = parse_list<int>("search.resolutions", v, parse_number<int>);
          set_grid(c.search, g);
        },
        [](const RunConfig& c) { return join(grid_of(c.search).resolutions); }}},
      {"search.grayscale",
       {[](RunConfig& c, const std::string& v) {
          auto g = grid_of(c.search);
          g.grayscale = parse_bool_list("search.grayscale", v);
          set_grid(c.search, g);
        },
        [](const RunConfig& c) { return bool_list(grid_of(c.search).grayscale); }}},
      {"search.center_crop",
       {[](RunConfig& c, const std::string& v) {
          auto g = grid_of(c.search);
          g.center_crop = parse_bool_list("search.center_crop", v);
          set_grid(c.search, g);
        },
        [](const RunConfig& c) { return bool_list(grid_of(c.search).center_crop); }}},
      {"search.hist_equalize",
       {[](RunConfig& c, const std::string& v) {
          auto g = grid_of(c.search);
          g.hist_equalize = parse_bool_list("search.hist_equalize", v);
          set_grid(c.search, g);
        },
        [](const RunConfig& c) { return bool_list(grid_of(c.search).hist_equalize); }}},
      DPA_INT("search.k_folds", c.k_folds),
      DPA_INT("search.trial_steps_per_level", c.trial_steps_per_level),
      DPA_INT("validation.n_types", c.validation.n_anomaly_types),
      DPA_INT("validation.n_examples", c.validation.n_examples),
      DPA_INT("validation.seed", c.validation.seed),
      DPA_INTS("sweep.n_types", c.sweep.n_types),
      DPA_INTS("sweep.n_examples", c.sweep.n_examples),
      DPA_INT("sweep.repeats", c.sweep.repeats),
      DPA_INT("sweep.seed", c.sweep.seed),
      DPA_INT("synth.resolution", c.synth.resolution),
      DPA_INT("synth.n_train", c.synth.n_train),
      DPA_INT("synth.n_test_normal", c.synth.n_test_normal),
      DPA_INT("synth.n_test_anomalous", c.synth.n_test_anomalous),
      DPA_INT("synth.n_val_pool", c.synth.n_val_pool),
      DPA_REAL("synth.strength", c.synth.strength),
      DPA_INT("synth.seed", c.synth.seed),
  };
  return table;
}

#undef DPA_INT
#undef DPA_REAL
#undef DPA_BOOL
#undef DPA_INTS

}  // namespace detail

/// Sets one dotted key. Unknown keys and unparsable values throw ConfigError naming the key.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  auto it = f.find(detail::trim(key));
  if (it == f.end()) throw ConfigError(detail::trim(key), "unknown configuration key");
  it->second.set(cfg, value);
}

/// Applies "key = value" lines on top of cfg.
inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& name = "config") {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(detail::trim(line), name + " line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  apply_config_text(cfg, in, path);
}

/// Applies "key=value" overrides.
inline void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, "override must look like key=value");
    set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
}

/// Canonical text form; reading it back reproduces the configuration.
inline std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, field] : detail::fields()) out << key << " = " << field.get(cfg) << '\n';
  return out.str();
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, field] : detail::fields()) j[key] = field.get(cfg);
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) set_config_value(cfg, key, value.get<std::string>());
  return cfg;
}

/// Derived values: model resolution follows preprocessing, stages follow final_stage.
inline void finalize_config(RunConfig& cfg) {
  cfg.model.target_resolution = cfg.preprocess.target_resolution;
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.features.n_stages < 1) throw ConfigError("features.n_stages", "must be >= 1");
  if (cfg.features.channels.size() != 1 && static_cast<int>(cfg.features.channels.size()) != cfg.features.n_stages)
    throw ConfigError("features.channels", "needs one entry or one per stage");
  if (cfg.final_stage < 0 || cfg.final_stage >= cfg.features.n_stages)
    throw ConfigError("loss.final_stage", "must be in [0, features.n_stages)");
  cfg.loss.stage_for_level = lock_step_stages(cfg.model.max_level(), cfg.final_stage, cfg.features.n_stages);
  cfg.loss.validate();
  if (cfg.k_folds < 2) throw ConfigError("search.k_folds", "must be >= 2");
  if (cfg.trial_steps_per_level < 1) throw ConfigError("search.trial_steps_per_level", "must be positive");
  for (int s : cfg.search.final_stages)
    if (s >= cfg.features.n_stages) throw ConfigError("search.final_stages", "stage " + std::to_string(s) + " beyond features.n_stages");
  cfg.search.validate();
}

template <typename Real = float>
std::shared_ptr<const FeatureExtractor<Real>> make_extractor(const FeatureSpec& spec, int input_channels) {
  return make_fixed_random_extractor<Real>(spec.seed, spec.n_stages, spec.channels, input_channels);
}

}  // namespace dpa
