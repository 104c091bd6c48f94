// dpa: train, score, evaluate and tune deep perceptual autoencoders.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dpa/checkpoint.hpp"
#include "dpa/config.hpp"
#include "dpa/dpa.hpp"
#include "dpa/platform.hpp"

namespace fs = std::filesystem;
using namespace dpa;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
};

RunConfig load_config(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  apply_overrides(cfg, c.overrides);
  finalize_config(cfg);
  return cfg;
}

/// Creates the run directory; refuses to reuse one that holds any of `files` unless forced.
void prepare_run_dir(const std::string& dir, const std::vector<std::string>& files, bool force) {
  fs::create_directories(dir);
  if (force) return;
  for (const auto& f : files)
    if (fs::exists(fs::path(dir) / f))
      throw DataError("refusing to overwrite " + (fs::path(dir) / f).string() + " (pass --force)");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(1) + "\n"); }

std::vector<Tensor<float>> load_split(const Manifest& m, Split split, std::optional<Label> label, const PreprocessSpec& spec,
                                      std::vector<const ManifestRow*>* rows_out = nullptr) {
  std::vector<const ManifestRow*> rows;
  for (const auto* r : m.select(split))
    if (!label || r->label == *label) rows.push_back(r);
  if (rows_out) *rows_out = rows;
  return load_images<float>(rows, spec);
}

int cmd_train(const Common& c, const std::string& manifest_path, bool flat) {
  RunConfig cfg = load_config(c);
  prepare_run_dir(c.out, {"config.txt", "model.ckpt", "train_report.json"}, c.force);
  const Manifest m = load_manifest(manifest_path);
  auto normals = load_split(m, Split::train, Label::normal, cfg.preprocess);
  if (normals.empty()) throw DataError("manifest has no training images");
  cfg.model.input_channels = normals.front().c();
  auto extractor = make_extractor<float>(cfg.features, cfg.model.input_channels);
  TrainHooks hooks;
  if (!cfg.features.stats_file.empty()) hooks.stats_override = load_stats(cfg.features.stats_file);
  write_text(fs::path(c.out) / "config.txt", config_to_text(cfg));

  auto run = [&] {
    try {
      return flat ? train_flat<float>(normals, cfg.model, cfg.train, cfg.loss, extractor, hooks)
                  : train<float>(normals, cfg.model, cfg.train, cfg.loss, extractor, hooks);
    } catch (const TrainingDiverged& e) {
      write_json(fs::path(c.out) / "train_report.json", to_json(e.report()));
      throw;
    }
  };
  auto result = run();
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : result.loss.level_stats) stats.push_back(stats_to_json(s));
  nlohmann::json extras{{"run_config", config_to_json(cfg)}, {"loss", to_json(cfg.loss)}, {"stats", stats},
                        {"flat", flat},                      {"run_id", result.report.run_id}};
  save_checkpoint(result.model, (fs::path(c.out) / "model.ckpt").string(), extras);
  auto report = to_json(result.report);
  report["manifest"] = manifest_path;
  write_json(fs::path(c.out) / "train_report.json", report);
  std::cout << "trained " << result.report.steps_run << " steps, hold-out loss " << result.report.final_holdout_loss << "\n";
  return kOk;
}

struct LoadedModel {
  Autoencoder<float> model;
  LossContext<float> ctx;
  RunConfig cfg;
};

LoadedModel load_model(const std::string& path, const std::vector<std::string>& overrides) {
  auto [model, extras] = load_checkpoint_with_extras<float>(path);
  if (!extras.contains("run_config") || !extras.contains("stats")) throw FormatError("checkpoint " + path + " lacks run metadata");
  RunConfig cfg = config_from_json(extras.at("run_config"));
  apply_overrides(cfg, overrides);
  LossContext<float> ctx;
  ctx.config = loss_config_from_json(extras.at("loss"));
  for (const auto& s : extras.at("stats")) ctx.level_stats.push_back(stats_from_json(s));
  if (ctx.config.uses_features()) ctx.extractor = make_extractor<float>(cfg.features, model.config().input_channels);
  return {std::move(model), std::move(ctx), std::move(cfg)};
}

std::vector<ScoredSample> score_split(const LoadedModel& lm, const Manifest& m, Split split) {
  std::vector<const ManifestRow*> rows;
  auto images = load_split(m, split, std::nullopt, lm.cfg.preprocess, &rows);
  if (images.empty()) throw DataError("split " + to_string(split) + " is empty");
  if (images.front().h() != lm.model.config().target_resolution)
    throw ShapeError("checkpoint resolution " + std::to_string(lm.model.config().target_resolution) +
                     " does not match preprocessed data resolution " + std::to_string(images.front().h()));
  auto scores = anomaly_scores(lm.model, lm.ctx, images);
  std::vector<ScoredSample> out;
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({rows[i]->path, scores[i], static_cast<int>(rows[i]->label)});
  return out;
}

int cmd_score(const Common& c, const std::string& checkpoint, const std::string& manifest_path, const std::string& split) {
  if (fs::exists(c.out) && !c.force) throw DataError("refusing to overwrite " + c.out + " (pass --force)");
  auto lm = load_model(checkpoint, c.overrides);
  auto samples = score_split(lm, load_manifest(manifest_path), parse_split(split));
  write_scores_csv(c.out, samples);
  return kOk;
}

int cmd_eval(const Common& c, const std::vector<std::string>& checkpoints, const std::string& scores_csv,
             const std::string& manifest_path, const std::string& split) {
  prepare_run_dir(c.out, {"eval_report.json", "scores.csv", "roc.csv"}, c.force);
  std::vector<EvalReport> reports;
  std::vector<std::string> sources;
  if (!scores_csv.empty()) {
    reports.push_back(evaluate_scores(read_scores_csv(scores_csv)));
    sources.push_back(scores_csv);
  } else {
    if (checkpoints.empty()) throw ConfigError("checkpoint", "pass --checkpoint or --scores");
    const Manifest m = load_manifest(manifest_path);
    for (const auto& ck : checkpoints) {
      auto lm = load_model(ck, c.overrides);
      reports.push_back(evaluate_scores(score_split(lm, m, parse_split(split))));
      sources.push_back(ck);
    }
  }
  nlohmann::json j = to_json(reports.front());
  std::vector<double> aucs;
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    aucs.push_back(reports[i].roc_auc);
    runs.push_back({{"source", sources[i]}, {"roc_auc", reports[i].roc_auc}});
  }
  j["runs"] = runs;
  j["aggregate"] = to_json(summarize_runs(aucs));
  write_json(fs::path(c.out) / "eval_report.json", j);
  write_scores_csv((fs::path(c.out) / "scores.csv").string(), reports.front().samples);
  write_roc_csv((fs::path(c.out) / "roc.csv").string(), reports.front().roc_curve);
  std::cout << "roc_auc " << j["aggregate"]["mean"].get<double>() << "\n";
  return kOk;
}

SearchSetup<float> search_setup(const RunConfig& cfg, const std::string& log) {
  SearchSetup<float> s;
  s.model = cfg.model;
  s.trial_train = cfg.train;
  s.trial_train.steps_per_level = cfg.trial_steps_per_level;
  s.final_train = cfg.train;
  s.loss = cfg.loss;
  const FeatureSpec features = cfg.features;
  s.extractor = [features](int ch) { return make_extractor<float>(features, ch); };
  s.k_folds = cfg.k_folds;
  s.seed = cfg.train.seed;
  s.trials_log = log;
  return s;
}

void check_resume(const Common& c, bool resume, const std::vector<std::string>& outputs) {
  fs::create_directories(c.out);
  if (c.force) {
    fs::remove(fs::path(c.out) / "trials.jsonl");
    return;
  }
  std::vector<std::string> guarded = outputs;
  if (!resume) guarded.push_back("trials.jsonl");
  prepare_run_dir(c.out, guarded, false);
}

int cmd_search(const Common& c, const std::string& manifest_path, bool resume) {
  RunConfig cfg = load_config(c);
  check_resume(c, resume, {"search_report.json"});
  const Manifest m = load_manifest(manifest_path);
  auto normals = load_image_set(m, Split::train, Label::normal);
  auto pool = load_image_set(m, Split::val_pool, Label::anomalous);
  auto test = load_image_set(m, Split::test);
  auto v = build_validation_set(pool, cfg.validation);
  auto validation = pool.subset(v.indices);
  for (const auto& id : validation.ids)
    if (std::find(test.ids.begin(), test.ids.end(), id) != test.ids.end())
      throw DataError("id leakage: validation anomaly '" + id + "' is in the test split");
  write_text(fs::path(c.out) / "config.txt", config_to_text(cfg));
  auto report = cross_validate(cfg.search, search_setup(cfg, (fs::path(c.out) / "trials.jsonl").string()), normals, validation);
  auto j = to_json(report);
  j["run_config"] = config_to_json(cfg);
  write_json(fs::path(c.out) / "search_report.json", j);
  std::cout << "winner " << report.best().config.key() << " mean AUC " << report.best().mean_auc << "\n";
  return kOk;
}

int cmd_sweep(const Common& c, const std::string& manifest_path, bool resume) {
  RunConfig cfg = load_config(c);
  check_resume(c, resume, {"sweep.csv", "sweep_report.json"});
  const Manifest m = load_manifest(manifest_path);
  auto normals = load_image_set(m, Split::train, Label::normal);
  auto pool = load_image_set(m, Split::val_pool, Label::anomalous);
  auto test = load_image_set(m, Split::test);
  write_text(fs::path(c.out) / "config.txt", config_to_text(cfg));
  auto rep = sensitivity_sweep(cfg.search, search_setup(cfg, (fs::path(c.out) / "trials.jsonl").string()), cfg.sweep, normals,
                               pool, test);
  auto j = to_json(rep);
  j["run_config"] = config_to_json(cfg);
  write_json(fs::path(c.out) / "sweep_report.json", j);
  write_text(fs::path(c.out) / "sweep.csv", sweep_csv(rep));
  return kOk;
}

int cmd_synth(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  apply_overrides(cfg, c.overrides);
  cfg.synth.validate();
  prepare_run_dir(c.out, {"manifest.csv"}, c.force);
  const auto ds = generate_synthetic(cfg.synth);
  const auto manifest = write_synthetic(ds, c.out);
  write_text(fs::path(c.out) / "config.txt", config_to_text(cfg));
  std::cout << manifest << ": " << ds.manifest.rows.size() << " images\n";
  return kOk;
}

void error_record(const std::string& kind, const std::string& message, const std::string& key = "") {
  nlohmann::json j{{"error", kind}, {"message", message}};
  if (!key.empty()) j["key"] = key;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Deep perceptual autoencoders for image anomaly detection"};
  app.require_subcommand(1);
  Common common;
  std::string manifest, checkpoint_split = "test", scores_csv;
  std::vector<std::string> checkpoints;
  bool resume = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config) sub->add_option("-c,--config", common.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", common.overrides, "override, e.g. --set model.bottleneck_dim=32");
    sub->add_flag("--force", common.force, "overwrite existing run files");
  };

  auto* train_cmd = app.add_subcommand("train", "progressive training on the manifest's train split");
  auto* flat_cmd = app.add_subcommand("train-flat", "training at the target resolution without progressive growing");
  for (auto* sub : {train_cmd, flat_cmd}) {
    add_common(sub, true);
    sub->add_option("-m,--manifest", manifest, "dataset manifest CSV")->required();
    sub->add_option("-o,--out", common.out, "run directory")->required();
  }
  auto* score_cmd = app.add_subcommand("score", "write per-image anomaly scores");
  add_common(score_cmd, false);
  score_cmd->add_option("-k,--checkpoint", checkpoints, "model checkpoint")->required()->expected(1);
  score_cmd->add_option("-m,--manifest", manifest, "dataset manifest CSV")->required();
  score_cmd->add_option("--split", checkpoint_split, "train, val-pool or test");
  score_cmd->add_option("-o,--out", common.out, "output CSV")->required();

  auto* eval_cmd = app.add_subcommand("eval", "ROC AUC of one or more checkpoints, or of a score CSV");
  add_common(eval_cmd, false);
  eval_cmd->add_option("-k,--checkpoint", checkpoints, "model checkpoint (repeat to aggregate runs)");
  eval_cmd->add_option("--scores", scores_csv, "score CSV from the score command");
  eval_cmd->add_option("-m,--manifest", manifest, "dataset manifest CSV");
  eval_cmd->add_option("--split", checkpoint_split, "train, val-pool or test");
  eval_cmd->add_option("-o,--out", common.out, "output directory")->required();

  auto* search_cmd = app.add_subcommand("search", "weakly-supervised grid search with k-fold cross-validation");
  auto* sweep_cmd = app.add_subcommand("sweep", "validation-set size sensitivity sweep");
  for (auto* sub : {search_cmd, sweep_cmd}) {
    add_common(sub, true);
    sub->add_option("-m,--manifest", manifest, "dataset manifest CSV")->required();
    sub->add_option("-o,--out", common.out, "run directory")->required();
    sub->add_flag("--resume", resume, "continue from the run directory's trials log");
  }

  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic texture dataset");
  add_common(synth_cmd, true);
  synth_cmd->add_option("-o,--out", common.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_record("usage", e.what());
    return kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(common, manifest, false);
    if (*flat_cmd) return cmd_train(common, manifest, true);
    if (*score_cmd) return cmd_score(common, checkpoints.front(), manifest, checkpoint_split);
    if (*eval_cmd) {
      if (scores_csv.empty() && manifest.empty()) throw ConfigError("manifest", "eval with --checkpoint needs --manifest");
      return cmd_eval(common, checkpoints, scores_csv, manifest, checkpoint_split);
    }
    if (*search_cmd) return cmd_search(common, manifest, resume);
    if (*sweep_cmd) return cmd_sweep(common, manifest, resume);
    if (*synth_cmd) return cmd_synth(common);
  } catch (const ConfigError& e) {
    error_record("config", e.what(), e.key());
    return kConfig;
  } catch (const ArgumentError& e) {
    error_record("argument", e.what());
    return kConfig;
  } catch (const TrainingDiverged& e) {
    error_record("numeric", e.what());
    return kNumeric;
  } catch (const NumericError& e) {
    error_record("numeric", e.what());
    return kNumeric;
  } catch (const ShapeError& e) {
    error_record("data", e.what());
    return kData;
  } catch (const DataError& e) {
    error_record("data", e.what());
    return kData;
  } catch (const FormatError& e) {
    error_record("data", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    error_record("data", e.what());
    return kData;
  } catch (const std::exception& e) {
    error_record("internal", e.what());
    return kOther;
  }
  return kOther;
}
