#pragma once

// Weakly-supervised model selection: confined-variability validation sets,
// k-fold grid search maximizing ROC AUC, and the validation-size sensitivity sweep.
//
// Only normals are folded; the validation anomalies are scored by every fold's
// model. Fold models score the whole anomaly pool once, so resampled validation
// sets reuse the same trained models.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/data.hpp"
#include "dpa/evaluation.hpp"
#include "dpa/trainer.hpp"

namespace dpa {

/// Images with ids, labels (0 normal, 1 anomalous) and anomaly types.
struct ImageSet {
  std::vector<std::string> ids;
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> types;

  std::size_t size() const noexcept { return ids.size(); }
  void add(std::string id, Image img, int label, std::string type) {
    ids.push_back(std::move(id));
    images.push_back(std::move(img));
    labels.push_back(label);
    types.push_back(std::move(type));
  }
  ImageSet subset(std::span<const std::size_t> idx) const {
    ImageSet s;
    for (auto i : idx) s.add(ids[i], images[i], labels[i], types[i]);
    return s;
  }
  template <typename Real = float>
  std::vector<Tensor<Real>> tensors(const PreprocessSpec& spec) const {
    std::vector<Tensor<Real>> out;
    for (const auto& img : images) out.push_back(preprocess<Real>(img, spec));
    return out;
  }
};

/// Rows of one split (optionally one label), decoded from disk. Ids are manifest paths.
inline ImageSet load_image_set(const Manifest& m, Split split, std::optional<Label> label = std::nullopt) {
  ImageSet s;
  for (const auto& r : m.rows) {
    if (r.split != split || (label && r.label != *label)) continue;
    try {
      s.add(r.path, read_png(r.resolved), static_cast<int>(r.label), r.anomaly_type);
    } catch (const DataError& e) {
      throw DataError("manifest row " + std::to_string(r.line) + ": " + e.what());
    }
  }
  return s;
}

struct ValidationSpec {
  int n_anomaly_types = 1;
  int n_examples = 20;
  std::uint64_t seed = 0;
};

struct ValidationSet {
  /// Indices into the anomaly pool, ascending.
  std::vector<std::size_t> indices;
  std::vector<std::string> ids;
  std::vector<std::string> types;
};

/// Picks n_anomaly_types types uniformly (seeded) and n_examples anomalies spread
/// as evenly as possible over them. types[i] is the anomaly type of pool item i.
inline ValidationSet build_validation_set(std::span<const std::string> ids, std::span<const std::string> types,
                                          const ValidationSpec& spec) {
  if (ids.size() != types.size()) throw ArgumentError("ids and types differ in length");
  if (spec.n_anomaly_types < 1) throw ConfigError("validation.n_anomaly_types", "must be >= 1");
  if (spec.n_examples < spec.n_anomaly_types)
    throw ConfigError("validation.n_examples", "must be at least n_anomaly_types");
  std::map<std::string, std::vector<std::size_t>> by_type;
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (types[i].empty()) throw DataError("anomaly pool item '" + ids[i] + "' has no anomaly type");
    by_type[types[i]].push_back(i);
  }
  if (static_cast<int>(by_type.size()) < spec.n_anomaly_types)
    throw DataError("anomaly pool has " + std::to_string(by_type.size()) + " types, " + std::to_string(spec.n_anomaly_types) +
                    " requested");
  std::vector<std::string> names;
  for (const auto& [t, _] : by_type) names.push_back(t);
  Rng rng(derive_seed(spec.seed, {0x7A11}));
  rng.shuffle(names);
  names.resize(static_cast<std::size_t>(spec.n_anomaly_types));
  std::sort(names.begin(), names.end());

  ValidationSet v;
  const int base = spec.n_examples / spec.n_anomaly_types, extra = spec.n_examples % spec.n_anomaly_types;
  for (int k = 0; k < spec.n_anomaly_types; ++k) {
    auto members = by_type[names[static_cast<std::size_t>(k)]];
    const int want = base + (k < extra ? 1 : 0);
    if (static_cast<int>(members.size()) < want)
      throw DataError("anomaly type '" + names[static_cast<std::size_t>(k)] + "' has " + std::to_string(members.size()) +
                      " examples, " + std::to_string(want) + " requested");
    rng.shuffle(members);
    v.indices.insert(v.indices.end(), members.begin(), members.begin() + want);
  }
  std::sort(v.indices.begin(), v.indices.end());
  for (auto i : v.indices) {
    v.ids.push_back(ids[i]);
    v.types.push_back(types[i]);
  }
  return v;
}

inline ValidationSet build_validation_set(const ImageSet& pool, const ValidationSpec& spec) {
  return build_validation_set(pool.ids, pool.types, spec);
}

struct SearchSpace {
  std::vector<int> bottleneck_dims{16};
  /// Extractor stage used at the final level; earlier levels step down with it.
  std::vector<int> final_stages{0};
  std::vector<PreprocessSpec> preprocessing{PreprocessSpec{}};

  void validate() const {
    if (bottleneck_dims.empty()) throw ConfigError("search.bottleneck_dims", "must not be empty");
    if (final_stages.empty()) throw ConfigError("search.final_stages", "must not be empty");
    if (preprocessing.empty()) throw ConfigError("search.preprocessing", "must not be empty");
    for (int b : bottleneck_dims)
      if (b < 1) throw ConfigError("search.bottleneck_dims", "entries must be >= 1");
    for (int s : final_stages)
      if (s < 0) throw ConfigError("search.final_stages", "entries must be >= 0");
  }
};

struct TrialConfig {
  int bottleneck_dim = 16;
  int final_stage = 0;
  PreprocessSpec preprocess;

  std::string key() const {
    return "bn" + std::to_string(bottleneck_dim) + "-stage" + std::to_string(final_stage) + "-" + preprocess.key();
  }
  friend bool operator==(const TrialConfig&, const TrialConfig&) = default;
};

/// Every combination, in tie-break order.
inline std::vector<TrialConfig> enumerate_trials(const SearchSpace& space) {
  space.validate();
  std::vector<TrialConfig> out;
  for (int b : space.bottleneck_dims)
    for (int s : space.final_stages)
      for (const auto& p : space.preprocessing) out.push_back({b, s, p});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tuple(a.bottleneck_dim, a.final_stage, a.preprocess.key()) < std::tuple(b.bottleneck_dim, b.final_stage, b.preprocess.key());
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <typename Real>
using ExtractorFactory = std::function<std::shared_ptr<const FeatureExtractor<Real>>(int input_channels)>;

template <typename Real>
struct SearchSetup {
  /// Template model; bottleneck_dim, target_resolution and input_channels come from each trial.
  ModelConfig model;
  /// Budget of fold models.
  TrainConfig trial_train;
  /// Budget of models refit on all normals (sweep and exhaustive references).
  TrainConfig final_train;
  /// Template loss; stage_for_level comes from each trial.
  LossConfig loss;
  ExtractorFactory<Real> extractor;
  int k_folds = 3;
  std::uint64_t seed = 0;
  /// Completed trials are appended here (JSON lines) and skipped on rerun. Empty disables.
  std::string trials_log;
  /// Called before every training run with the trial key and fold (-1 for a refit).
  std::function<void(const std::string&, int)> on_train;
};

struct FoldScores {
  std::vector<std::string> normal_ids;
  std::vector<double> normal;
  /// Aligned with the anomaly set passed to the search.
  std::vector<double> anomaly;
};

struct TrialScores {
  TrialConfig config;
  bool ok = true;
  std::string error;
  std::vector<FoldScores> folds;
};

struct Trial {
  TrialConfig config;
  bool ok = true;
  std::string error;
  std::vector<double> fold_aucs;
  double mean_auc = 0.0;
};

struct SearchReport {
  std::vector<Trial> trials;
  int winner = -1;
  std::string tie_break;
  int k_folds = 3;
  std::vector<std::string> validation_ids;
  std::uint64_t seed = 0;
  bool leakage_check_passed = false;

  const Trial& best() const {
    if (winner < 0) throw NumericError("search has no completed trial");
    return trials[static_cast<std::size_t>(winner)];
  }
};

namespace detail {

inline void check_disjoint(std::span<const std::string> a, std::span<const std::string> b, const std::string& what) {
  std::set<std::string> sa(a.begin(), a.end());
  for (const auto& id : b)
    if (sa.count(id)) throw DataError("id leakage: '" + id + "' appears in both " + what);
}

/// Fold assignment of n normals: seeded permutation cut into k contiguous parts.
inline std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("search.k_folds", "must be >= 2");
  if (n < static_cast<std::size_t>(k)) throw DataError("need at least one normal image per fold");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, {0xF01D}));
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) folds[i * static_cast<std::size_t>(k) / n].push_back(perm[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

template <typename Real>
struct TrialInputs {
  ModelConfig model;
  LossConfig loss;
  std::shared_ptr<const FeatureExtractor<Real>> extractor;
};

template <typename Real>
TrialInputs<Real> trial_inputs(const SearchSetup<Real>& setup, const TrialConfig& t, int input_channels) {
  TrialInputs<Real> in;
  in.model = setup.model;
  in.model.bottleneck_dim = t.bottleneck_dim;
  in.model.target_resolution = t.preprocess.target_resolution;
  in.model.input_channels = input_channels;
  in.model.validate();
  in.loss = setup.loss;
  if (setup.loss.uses_features()) {
    if (!setup.extractor) throw ArgumentError("search needs an extractor factory");
    in.extractor = setup.extractor(input_channels);
    in.loss.stage_for_level = lock_step_stages(in.model.max_level(), t.final_stage, in.extractor->n_stages());
  } else {
    in.loss.stage_for_level.assign(static_cast<std::size_t>(in.model.max_level() + 1), 0);
  }
  return in;
}

/// Trains one model on `train_images` and scores the given sets.
template <typename Real>
std::vector<std::vector<double>> fit_and_score(const TrialInputs<Real>& in, const TrainConfig& cfg,
                                               const std::vector<Tensor<Real>>& train_images,
                                               const std::vector<const std::vector<Tensor<Real>>*>& score_sets) {
  auto result = train(train_images, in.model, cfg, in.loss, in.extractor);
  std::vector<std::vector<double>> out;
  for (const auto* s : score_sets) out.push_back(anomaly_scores(result.model, result.loss, *s));
  return out;
}

inline std::string fingerprint(const nlohmann::json& j) {
  std::ostringstream s;
  const auto text = j.dump();
  s << std::hex << fnv1a(text.data(), text.size());
  return s.str();
}

template <typename Real>
nlohmann::json setup_json(const SearchSetup<Real>& s) {
  return {{"model", to_json(s.model)}, {"trial_train", to_json(s.trial_train)}, {"loss", to_json(s.loss)},
          {"k_folds", s.k_folds},     {"seed", s.seed}};
}

inline nlohmann::json to_json(const TrialScores& t) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : t.folds) folds.push_back({{"normal_ids", f.normal_ids}, {"normal", f.normal}, {"anomaly", f.anomaly}});
  return {{"key", t.config.key()}, {"ok", t.ok}, {"error", t.error}, {"folds", folds}};
}

inline std::map<std::string, nlohmann::json> read_trials_log(const std::string& path, const std::string& fp) {
  std::map<std::string, nlohmann::json> done;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      continue;  // truncated final line of an interrupted run
    }
    if (j.value("fingerprint", "") == fp) done[j.at("key").get<std::string>()] = j;
  }
  return done;
}

}  // namespace detail

/// Trains every trial on every fold and scores the fold's held-out normals and
/// all of `anomalies`. Failed trainings mark the trial failed.
template <typename Real>
std::vector<TrialScores> score_trials(const SearchSpace& space, const SearchSetup<Real>& setup, const ImageSet& normals,
                                      const ImageSet& anomalies) {
  detail::check_disjoint(normals.ids, anomalies.ids, "the training normals and the anomaly set");
  const auto folds = detail::make_folds(normals.size(), setup.k_folds, setup.seed);
  auto fp_json = detail::setup_json(setup);
  fp_json["normals"] = normals.ids;
  fp_json["anomalies"] = anomalies.ids;
  const std::string fp = detail::fingerprint(fp_json);
  std::map<std::string, nlohmann::json> done;
  if (!setup.trials_log.empty()) done = detail::read_trials_log(setup.trials_log, fp);

  std::vector<TrialScores> out;
  std::map<std::string, std::pair<std::vector<Tensor<Real>>, std::vector<Tensor<Real>>>> cache;
  for (const auto& t : enumerate_trials(space)) {
    TrialScores ts{t, true, "", {}};
    if (auto it = done.find(t.key()); it != done.end()) {
      ts.ok = it->second.at("ok").get<bool>();
      ts.error = it->second.at("error").get<std::string>();
      for (const auto& f : it->second.at("folds"))
        ts.folds.push_back({f.at("normal_ids").get<std::vector<std::string>>(), f.at("normal").get<std::vector<double>>(),
                            f.at("anomaly").get<std::vector<double>>()});
      out.push_back(std::move(ts));
      continue;
    }
    auto& data = cache[t.preprocess.key()];
    if (data.first.empty()) {
      data.first = normals.tensors<Real>(t.preprocess);
      data.second = anomalies.tensors<Real>(t.preprocess);
    }
    try {
      auto in = detail::trial_inputs(setup, t, data.first.front().c());
      for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<Tensor<Real>> train_imgs, held;
        FoldScores fs;
        std::vector<bool> is_held(normals.size(), false);
        for (auto i : folds[f]) is_held[i] = true;
        for (std::size_t i = 0; i < normals.size(); ++i) {
          if (is_held[i]) {
            held.push_back(data.first[i]);
            fs.normal_ids.push_back(normals.ids[i]);
          } else {
            train_imgs.push_back(data.first[i]);
          }
        }
        if (setup.on_train) setup.on_train(t.key(), static_cast<int>(f));
        TrainConfig cfg = setup.trial_train;
        cfg.seed = derive_seed(setup.seed, {0x7219, f});
        auto scores = detail::fit_and_score(in, cfg, train_imgs, {&held, &data.second});
        fs.normal = std::move(scores[0]);
        fs.anomaly = std::move(scores[1]);
        ts.folds.push_back(std::move(fs));
      }
    } catch (const NumericError& e) {
      ts.ok = false;
      ts.error = e.what();
      ts.folds.clear();
    }
    if (!setup.trials_log.empty()) {
      auto j = detail::to_json(ts);
      j["fingerprint"] = fp;
      std::ofstream log(setup.trials_log, std::ios::app);
      log << j.dump() << '\n';
      if (!log) throw DataError("cannot append to trials log " + setup.trials_log);
    }
    out.push_back(std::move(ts));
  }
  return out;
}

/// Ranks trials by mean fold AUC on the chosen anomalies (indices into the scored
/// anomaly set). Ties: smaller bottleneck, then shallower stage, then preprocessing key.
inline SearchReport rank_trials(const std::vector<TrialScores>& scored, std::span<const std::size_t> anomaly_idx,
                                int k_folds) {
  SearchReport r;
  r.k_folds = k_folds;
  for (const auto& ts : scored) {
    Trial t{ts.config, ts.ok, ts.error, {}, 0.0};
    if (ts.ok) {
      for (const auto& f : ts.folds) {
        std::vector<ScoredSample> s;
        for (std::size_t i = 0; i < f.normal.size(); ++i) s.push_back({f.normal_ids[i], f.normal[i], 0});
        for (auto a : anomaly_idx) s.push_back({"a" + std::to_string(a), f.anomaly.at(a), 1});
        t.fold_aucs.push_back(roc_auc(s));
      }
      t.mean_auc = std::accumulate(t.fold_aucs.begin(), t.fold_aucs.end(), 0.0) / static_cast<double>(t.fold_aucs.size());
    }
    r.trials.push_back(std::move(t));
  }
  auto before = [](const Trial& a, const Trial& b) {
    return std::tuple(a.config.bottleneck_dim, a.config.final_stage, a.config.preprocess.key()) <
           std::tuple(b.config.bottleneck_dim, b.config.final_stage, b.config.preprocess.key());
  };
  int tied = 0;
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    const auto& t = r.trials[i];
    if (!t.ok) continue;
    if (r.winner < 0) {
      r.winner = static_cast<int>(i);
      tied = 1;
      continue;
    }
    const auto& w = r.trials[static_cast<std::size_t>(r.winner)];
    if (t.mean_auc > w.mean_auc) {
      r.winner = static_cast<int>(i);
      tied = 1;
    } else if (t.mean_auc == w.mean_auc) {
      ++tied;
      if (before(t, w)) r.winner = static_cast<int>(i);
    }
  }
  if (r.winner < 0) throw NumericError("every search trial failed");
  r.tie_break = tied > 1 ? std::to_string(tied) + " trials tied at mean AUC " + std::to_string(r.best().mean_auc) +
                               "; chose smallest bottleneck, then shallowest stage, then preprocessing key"
                         : "none";
  return r;
}

/// k-fold grid search on normals + a labelled validation anomaly set.
template <typename Real>
SearchReport cross_validate(const SearchSpace& space, const SearchSetup<Real>& setup, const ImageSet& normals,
                            const ImageSet& validation) {
  if (validation.size() == 0) throw DataError("validation set has no anomalies");
  auto scored = score_trials(space, setup, normals, validation);
  std::vector<std::size_t> all(validation.size());
  std::iota(all.begin(), all.end(), 0);
  auto r = rank_trials(scored, all, setup.k_folds);
  r.validation_ids = validation.ids;
  r.seed = setup.seed;
  r.leakage_check_passed = true;  // score_trials throws on overlap
  return r;
}

inline nlohmann::json to_json(const TrialConfig& t) {
  return {{"key", t.key()},
          {"bottleneck_dim", t.bottleneck_dim},
          {"final_stage", t.final_stage},
          {"preprocess",
           {{"target_resolution", t.preprocess.target_resolution}, {"grayscale", t.preprocess.grayscale},
            {"center_crop", t.preprocess.center_crop}, {"hist_equalize", t.preprocess.hist_equalize}}}};
}

inline nlohmann::json to_json(const SearchReport& r) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : r.trials)
    trials.push_back({{"config", to_json(t.config)}, {"ok", t.ok}, {"error", t.error}, {"fold_aucs", t.fold_aucs}, {"mean_auc", t.mean_auc}});
  return {{"schema", "dpa-search-report"},
          {"version", 1},
          {"trials", trials},
          {"winner", r.winner >= 0 ? to_json(r.best().config) : nlohmann::json()},
          {"winner_mean_auc", r.winner >= 0 ? r.best().mean_auc : 0.0},
          {"tie_break", r.tie_break},
          {"k_folds", r.k_folds},
          {"seed", r.seed},
          {"validation_ids", r.validation_ids},
          {"leakage_check_passed", r.leakage_check_passed}};
}

// --- sensitivity sweep ----------------------------------------------------------

struct SweepSpec {
  std::vector<int> n_types{1};
  std::vector<int> n_examples{20};
  int repeats = 3;
  std::uint64_t seed = 0;
};

struct SweepCell {
  int n_types = 0;
  int n_examples = 0;
  std::vector<double> test_aucs;
  std::vector<std::string> winners;
  std::vector<std::vector<std::string>> validation_ids;
  double mean = 0.0;
  double std = 0.0;
};

struct SweepReport {
  std::vector<SweepCell> cells;
  /// Test AUC of every grid configuration refit on all normals.
  std::map<std::string, double> grid_test_auc;
  double grid_max = 0.0;
  double grid_min = 0.0;
  bool leakage_check_passed = false;
};

/// For every (n_types, n_examples) cell: resample the validation set `repeats`
/// times, select the winner by cross-validation, and report its test AUC.
template <typename Real>
SweepReport sensitivity_sweep(const SearchSpace& space, const SearchSetup<Real>& setup, const SweepSpec& spec,
                              const ImageSet& normals, const ImageSet& pool, const ImageSet& test) {
  if (spec.repeats < 1) throw ConfigError("sweep.repeats", "must be >= 1");
  detail::check_disjoint(pool.ids, test.ids, "the anomaly pool and the test split");
  detail::check_disjoint(normals.ids, test.ids, "the training normals and the test split");
  auto scored = score_trials(space, setup, normals, pool);

  SweepReport rep;
  std::vector<int> test_labels = test.labels;
  rep.grid_max = -1.0;
  rep.grid_min = 2.0;
  std::map<std::string, std::pair<std::vector<Tensor<Real>>, std::vector<Tensor<Real>>>> cache;
  for (const auto& t : enumerate_trials(space)) {
    auto& data = cache[t.preprocess.key()];
    if (data.first.empty()) {
      data.first = normals.tensors<Real>(t.preprocess);
      data.second = test.tensors<Real>(t.preprocess);
    }
    auto in = detail::trial_inputs(setup, t, data.first.front().c());
    if (setup.on_train) setup.on_train(t.key(), -1);
    TrainConfig cfg = setup.final_train;
    cfg.seed = derive_seed(setup.seed, {0xF17});
    try {
      auto s = detail::fit_and_score(in, cfg, data.first, {&data.second});
      const double auc = roc_auc(s[0], test_labels);
      rep.grid_test_auc[t.key()] = auc;
      rep.grid_max = std::max(rep.grid_max, auc);
      rep.grid_min = std::min(rep.grid_min, auc);
    } catch (const NumericError&) {
      // excluded like a failed trial
    }
  }
  if (rep.grid_test_auc.empty()) throw NumericError("every refit failed");

  for (int n_ex : spec.n_examples)
    for (int n_ty : spec.n_types) {
      SweepCell cell{n_ty, n_ex, {}, {}, {}, 0.0, 0.0};
      for (int rpt = 0; rpt < spec.repeats; ++rpt) {
        ValidationSpec vs{n_ty, n_ex, derive_seed(spec.seed, {static_cast<std::uint64_t>(n_ty), static_cast<std::uint64_t>(n_ex),
                                                              static_cast<std::uint64_t>(rpt)})};
        auto v = build_validation_set(pool, vs);
        auto r = rank_trials(scored, v.indices, setup.k_folds);
        const auto key = r.best().config.key();
        auto it = rep.grid_test_auc.find(key);
        if (it == rep.grid_test_auc.end()) throw NumericError("refit of the winner " + key + " failed");
        cell.test_aucs.push_back(it->second);
        cell.winners.push_back(key);
        cell.validation_ids.push_back(v.ids);
      }
      auto s = summarize(cell.test_aucs);
      cell.mean = s.mean;
      cell.std = s.std;
      rep.cells.push_back(std::move(cell));
    }
  rep.leakage_check_passed = true;
  return rep;
}

inline nlohmann::json to_json(const SweepReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"n_types", c.n_types}, {"n_examples", c.n_examples}, {"test_aucs", c.test_aucs}, {"winners", c.winners},
                     {"validation_ids", c.validation_ids}, {"mean", c.mean}, {"std", c.std}});
  return {{"schema", "dpa-sweep-report"}, {"version", 1}, {"cells", cells}, {"grid_test_auc", r.grid_test_auc},
          {"grid_max", r.grid_max},       {"grid_min", r.grid_min}, {"leakage_check_passed", r.leakage_check_passed}};
}

/// Rows n_examples, columns n_types, cells "mean±std".
inline std::string sweep_csv(const SweepReport& r) {
  std::vector<int> types, examples;
  for (const auto& c : r.cells) {
    if (std::find(types.begin(), types.end(), c.n_types) == types.end()) types.push_back(c.n_types);
    if (std::find(examples.begin(), examples.end(), c.n_examples) == examples.end()) examples.push_back(c.n_examples);
  }
  std::ostringstream out;
  out << "n_examples";
  for (int t : types) out << ",n_types=" << t;
  out << '\n';
  char buf[64];
  for (int e : examples) {
    out << e;
    for (int t : types) {
      auto it = std::find_if(r.cells.begin(), r.cells.end(), [&](const auto& c) { return c.n_types == t && c.n_examples == e; });
      std::snprintf(buf, sizeof buf, "%.4f±%.4f", it->mean, it->std);
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dpa
