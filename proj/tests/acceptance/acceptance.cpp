// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// non-zero when any selected criterion fails.
//
//   dpa_acceptance                 all criteria
//   dpa_acceptance --criterion 5   a single criterion

#include <CLI11.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/dpa.hpp"
#include "dpa/platform.hpp"

namespace fs = std::filesystem;
using namespace dpa;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename Real = double>
Tensor<Real> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor<Real> t(n, c, h, w);
  Rng rng(seed);
  for (auto& v : t.storage()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

ModelConfig model_config(int target, int base_channels, int max_channels, int bottleneck) {
  ModelConfig m;
  m.base_resolution = 8;
  m.target_resolution = target;
  m.base_channels = base_channels;
  m.max_channels = max_channels;
  m.bottleneck_dim = bottleneck;
  m.blocks_per_level = 1;
  return m;
}

std::shared_ptr<const FeatureExtractor<float>> desk_extractor(int input_channels = 1) {
  return make_fixed_random_extractor<float>(7, 3, {16}, input_channels);
}

struct SplitData {
  std::vector<Tensor<float>> train, test;
  std::vector<int> labels;
};

SplitData synth_split(int resolution, std::uint64_t seed) {
  SynthSpec s;
  s.resolution = resolution;
  s.n_train = 2000;
  s.n_test_normal = 200;
  s.n_test_anomalous = 200;
  s.n_val_pool = 0;
  s.seed = seed;
  auto ds = generate_synthetic(s);
  PreprocessSpec p;
  p.target_resolution = resolution;
  SplitData out;
  out.train = synth_tensors<float>(ds, Split::train, Label::normal, p);
  std::vector<std::size_t> idx;
  out.test = synth_tensors<float>(ds, Split::test, std::nullopt, p, &idx);
  for (auto i : idx) out.labels.push_back(ds.manifest.rows[i].label == Label::anomalous);
  return out;
}

double test_auc(const TrainResult<float>& r, const SplitData& d) {
  return roc_auc(anomaly_scores(r.model, r.loss, d.test), d.labels);
}

// --- 1: loss properties ---------------------------------------------------------

Outcome loss_suite() {
  auto ex = make_fixed_random_extractor<double>(11, 2, {8});
  std::vector<Tensor<double>> ref, ref_half;
  for (int i = 0; i < 6; ++i) {
    ref.push_back(random_tensor(1, 1, 16, 16, 100 + i));
    ref_half.push_back(down(ref.back()));
  }
  const auto s0 = compute_stats(*ex, ref, 0), s1 = compute_stats(*ex, ref, 1), s0_half = compute_stats(*ex, ref_half, 0);
  std::vector<std::string> failures;

  // Identity and non-negativity.
  for (int i = 0; i < 50; ++i) {
    auto x = random_tensor(2, 1, 16, 16, 500 + i), y = random_tensor(2, 1, 16, 16, 900 + i);
    if (relative_perceptual_l1(x, x, *ex, s1, 1) != 0.0) failures.push_back("identity not zero");
    if (relative_perceptual_l1(x, y, *ex, s0, 0) < 0.0) failures.push_back("negative loss");
  }
  // Epsilon guard: an all-zero reference stays finite.
  Tensor<double> zero(1, 8, 4, 4, 0.0), v = random_tensor(1, 8, 4, 4, 3, -1, 1);
  const double guarded = relative_l1(zero, v, 1e-6);
  if (!std::isfinite(guarded)) failures.push_back("epsilon guard");
  // Scale invariance of injected normalized features.
  double worst_scale = 0;
  auto fa = random_tensor(1, 16, 16, 16, 4, -2, 2), fb = random_tensor(1, 16, 16, 16, 5, -2, 2);
  const double base = relative_l1(fa, fb, 1e-6);
  for (double c : {0.5, 2.0, 10.0, 100.0}) {
    Tensor<double> ca = fa, cb = fb;
    for (auto& e : ca.storage()) e *= c;
    for (auto& e : cb.storage()) e *= c;
    worst_scale = std::max(worst_scale, std::abs(relative_l1(ca, cb, 1e-6) - base));
  }
  if (worst_scale > 1e-9) failures.push_back(fmt("scale invariance off by %.3g", worst_scale));
  // Blend affinity and endpoints.
  LossConfig cfg;
  cfg.stage_for_level = {0, 1};
  auto x = random_tensor(3, 1, 16, 16, 40), xr = random_tensor(3, 1, 16, 16, 41);
  const double l0 = blended_loss(x, xr, 1, 0.0, *ex, s0_half, s1, cfg);
  const double l1 = blended_loss(x, xr, 1, 1.0, *ex, s0_half, s1, cfg);
  double worst_affine = 0;
  for (double a : {0.1, 0.4, 0.75}) {
    const double la = blended_loss(x, xr, 1, a, *ex, s0_half, s1, cfg);
    worst_affine = std::max(worst_affine, std::abs(la - ((1 - a) * l0 + a * l1)));
  }
  if (worst_affine > 1e-12) failures.push_back(fmt("blend not affine (%.3g)", worst_affine));
  if (l1 != relative_perceptual_l1(x, xr, *ex, s1, 1)) failures.push_back("alpha=1 endpoint not exact");
  if (l0 != relative_perceptual_l1(down(x), down(xr), *ex, s0_half, 0)) failures.push_back("alpha=0 endpoint not exact");

  Outcome o;
  o.pass = failures.empty();
  o.detail = o.pass ? fmt("identity/non-negativity on 50 pairs, eps guard %.3g, scale dev %.2g, affine dev %.2g, endpoints exact",
                          guarded, worst_scale, worst_affine)
                    : failures.front();
  return o;
}

// --- 2: loss gradients ----------------------------------------------------------

Outcome gradient_checks() {
  auto ex = make_fixed_random_extractor<double>(11, 2, {4});
  std::vector<Tensor<double>> ref, half;
  for (int i = 0; i < 4; ++i) {
    ref.push_back(random_tensor(1, 1, 8, 8, 100 + i));
    half.push_back(down(ref.back()));
  }
  LossContext<double> ctx;
  ctx.extractor = ex;
  ctx.config.stage_for_level = {0, 1};
  ctx.level_stats = {compute_stats(*ex, half, 0), compute_stats(*ex, ref, 1)};
  auto x = random_tensor(2, 1, 8, 8, 8);
  const auto xr0 = random_tensor(2, 1, 8, 8, 9);
  double worst = 0;
  int checked = 0;
  for (double l1_weight : {0.0, 0.3})
    for (double alpha : {1.0, 0.0, 0.35}) {
      ctx.config.l1_weight = l1_weight;
      auto xr = ag::Var<double>::leaf(xr0);
      ag::mean(loss_terms(x, xr, 1, alpha, ctx)).backward();
      const auto g = xr.grad();
      auto f = [&](const Tensor<double>& p) {
        ag::NoGradGuard guard;
        return ag::mean(loss_terms(x, ag::Var<double>::constant(p), 1, alpha, ctx)).value()[0];
      };
      const double h = 1e-5;
      for (std::size_t i = 0; i < xr0.size(); ++i) {
        auto p = xr0;
        p[i] = xr0[i] + h;
        const double up = f(p);
        p[i] = xr0[i] - h;
        const double dn = f(p);
        const double num = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(g[i] - num) / std::max({std::abs(g[i]), std::abs(num), 1e-8}));
        ++checked;
      }
    }
  return {worst < 1e-6, fmt("max relative error %.3g over %d entries (8x8, alpha 1/0/0.35, with and without pixel L1)", worst,
                            checked)};
}

// --- 3: ROC AUC oracle ----------------------------------------------------------

Outcome auc_oracle() {
  const double hand = roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(rng() % 300);
    const bool tie_heavy = t % 2 == 0;
    std::vector<double> s(n);
    std::vector<int> y(n);
    std::normal_distribution<double> g;
    for (int i = 0; i < n; ++i) {
      s[i] = tie_heavy ? static_cast<double>(rng() % 5) : g(rng);
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    double hits = 0, pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    worst = std::max(worst, std::abs(roc_auc(s, y) - hits / pairs));
  }
  return {hand == 0.75 && worst <= 1e-12, fmt("hand case %.4f, max deviation from pairwise oracle %.3g on 200 sets", hand, worst)};
}

// --- 4: growth continuity -------------------------------------------------------

Outcome growth_continuity() {
  std::vector<Tensor<float>> data;
  SynthSpec s;
  s.resolution = 16;
  s.n_train = 64;
  s.n_test_normal = s.n_test_anomalous = s.n_val_pool = 0;
  s.seed = 5;
  auto ds = generate_synthetic(s);
  PreprocessSpec p;
  p.target_resolution = 16;
  data = synth_tensors<float>(ds, Split::train, Label::normal, p);

  TrainConfig tc;
  tc.steps_per_level = 60;
  tc.batch_size = 16;
  tc.eval_every = 30;
  LossConfig lc;
  lc.stage_for_level = {0, 1};
  auto ex = make_fixed_random_extractor<float>(7, 2, {16});
  // Train only the 8x8 level, then grow by hand. Both configs give level 0 sixteen channels.
  auto pre = train<float>(data, model_config(8, 16, 16, 16), tc, LossConfig{}, ex);
  std::vector<Tensor<float>> half;
  for (const auto& d : data) half.push_back(down(d));
  LossContext<float> ctx{ex, lc, {compute_stats(*ex, half, 0), compute_stats(*ex, data, 1)}};

  std::vector<Tensor<float>> items(data.begin(), data.begin() + 16);
  auto batch = stack(items);
  const double before = batch_mean(loss_terms(down(batch), ag::Var<float>::constant(pre.model.reconstruct(down(batch))), 0, 1.0, ctx));

  Autoencoder<float> grown(model_config(16, 8, 16, 16), pre.model.seed());
  grown.load_state(pre.model.state());
  grown.grow();
  auto loss_at = [&](double a) {
    return batch_mean(loss_terms(batch, ag::Var<float>::constant(grown.reconstruct(batch, BlendState{1, a})), 1, a, ctx));
  };
  const double after = loss_at(0.0);
  const double jump = std::abs(after - before);

  // Continuity: jumps shrink with the alpha step.
  double coarse = 0, fine = 0;
  double prev = after;
  for (int i = 1; i <= 100; ++i) {
    const double v = loss_at(i / 100.0);
    coarse = std::max(coarse, std::abs(v - prev));
    prev = v;
  }
  prev = loss_at(0.5);
  for (int i = 1; i <= 20; ++i) {
    const double v = loss_at(0.5 + i / 1000.0);
    fine = std::max(fine, std::abs(v - prev));
    prev = v;
  }
  const bool continuous = fine <= 0.2 * coarse + 1e-6 && coarse < 0.05 * std::max(after, loss_at(1.0));
  return {jump <= 1e-5 && continuous,
          fmt("loss before growth %.6f, after growth (alpha=0) %.6f, |diff| %.2g; max step 0.01->%.4g, 0.001->%.4g", before, after,
              jump, coarse, fine)};
}

// --- 5: perceptual vs pixel loss ---------------------------------------------------

Outcome detection() {
  const auto model = model_config(32, 8, 32, 32);
  TrainConfig tc;
  tc.steps_per_level = 300;
  tc.batch_size = 32;
  tc.eval_every = 100;
  LossConfig pl;
  pl.stage_for_level = lock_step_stages(model.max_level(), 0, 3);
  LossConfig l1 = pl;
  l1.perceptual_weight = 0.0;
  l1.l1_weight = 1.0;
  std::vector<double> pls, l1s, nns;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto d = synth_split(32, seed);
    tc.seed = seed;
    pls.push_back(test_auc(train<float>(d.train, model, tc, pl, desk_extractor()), d));
    l1s.push_back(test_auc(train<float>(d.train, model, tc, l1, nullptr), d));
    nns.push_back(roc_auc(nearest_neighbor_scores(d.train, d.test), d.labels));
    std::printf("  seed %llu: perceptual %.4f  pixel-L1 %.4f  nearest-neighbour %.4f\n", static_cast<unsigned long long>(seed),
                pls.back(), l1s.back(), nns.back());
    std::fflush(stdout);
  }
  const auto p = summarize_runs(pls), l = summarize_runs(l1s), n = summarize_runs(nns);
  return {p.mean >= 0.90 && p.mean - l.mean >= 0.05,
          fmt("perceptual AUC %.4f±%.4f, pixel-L1 %.4f±%.4f, margin %.4f (nearest-neighbour baseline %.4f)", p.mean, p.std, l.mean,
              l.std, p.mean - l.mean, n.mean)};
}

// --- 6: progressive vs flat -------------------------------------------------------

Outcome progressive_vs_flat() {
  const auto model = model_config(64, 4, 32, 32);
  TrainConfig tc;
  tc.steps_per_level = 250;
  tc.batch_size = 32;
  tc.eval_every = 100;
  LossConfig pl;
  pl.stage_for_level = lock_step_stages(model.max_level(), 0, 3);
  std::vector<double> prog, flat;
  int aborts = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto d = synth_split(64, seed);
    tc.seed = seed;
    auto run = [&](bool is_flat) {
      try {
        auto r = is_flat ? train_flat<float>(d.train, model, tc, pl, desk_extractor())
                         : train<float>(d.train, model, tc, pl, desk_extractor());
        return test_auc(r, d);
      } catch (const NumericError& e) {
        ++aborts;
        std::printf("  seed %llu: %s aborted: %s\n", static_cast<unsigned long long>(seed), is_flat ? "flat" : "progressive",
                    e.what());
        return 0.5;
      }
    };
    prog.push_back(run(false));
    flat.push_back(run(true));
    std::printf("  seed %llu: progressive %.4f  flat %.4f\n", static_cast<unsigned long long>(seed), prog.back(), flat.back());
    std::fflush(stdout);
  }
  const auto p = summarize_runs(prog), f = summarize_runs(flat);
  return {aborts == 0 && p.mean >= f.mean - 0.02,
          fmt("64x64, equal step budgets: progressive %.4f±%.4f, flat %.4f±%.4f, NaN aborts %d", p.mean, p.std, f.mean, f.std,
              aborts)};
}

// --- 7: weakly-supervised selection ----------------------------------------------

struct SearchData {
  ImageSet normals, pool, test;
};

SearchData search_data(std::uint64_t seed, int n_train, int n_pool, int n_test, int resolution = 32) {
  SynthSpec s;
  s.resolution = resolution;
  s.n_train = n_train;
  s.n_test_normal = n_test;
  s.n_test_anomalous = n_test;
  s.n_val_pool = n_pool;
  s.seed = seed;
  auto ds = generate_synthetic(s);
  SearchData out;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& r = ds.manifest.rows[i];
    auto& dst = r.split == Split::train ? out.normals : r.split == Split::val_pool ? out.pool : out.test;
    dst.add(r.path, ds.images[i], r.label == Label::anomalous, r.anomaly_type);
  }
  return out;
}

SearchSetup<float> desk_setup(int trial_steps, int final_steps) {
  SearchSetup<float> s;
  s.model = model_config(32, 8, 32, 32);
  s.trial_train.steps_per_level = trial_steps;
  s.trial_train.batch_size = 32;
  s.trial_train.eval_every = 100;
  s.final_train = s.trial_train;
  s.final_train.steps_per_level = final_steps;
  s.extractor = [](int in) { return desk_extractor(in); };
  s.k_folds = 3;
  s.seed = 11;
  return s;
}

Outcome selection() {
  const auto d = search_data(21, 2000, 100, 200);
  SearchSpace space;
  space.bottleneck_dims = {8, 32};
  space.final_stages = {0, 1};
  PreprocessSpec p;
  p.target_resolution = 32;
  space.preprocessing = {p};
  auto setup = desk_setup(200, 300);
  setup.on_train = [](const std::string& key, int fold) {
    std::printf("  training %s %s\n", key.c_str(), fold < 0 ? "refit" : ("fold " + std::to_string(fold)).c_str());
    std::fflush(stdout);
  };
  SweepSpec spec{{1}, {20}, 3, 5};
  auto rep = sensitivity_sweep(space, setup, spec, d.normals, d.pool, d.test);
  for (const auto& [key, auc] : rep.grid_test_auc) std::printf("  grid %s: test AUC %.4f\n", key.c_str(), auc);
  const auto& cell = rep.cells.front();
  int within = 0;
  std::string winners;
  for (std::size_t i = 0; i < cell.test_aucs.size(); ++i) {
    within += rep.grid_max - cell.test_aucs[i] <= 0.02;
    winners += (i ? ", " : "") + cell.winners[i] + fmt(" (%.4f)", cell.test_aucs[i]);
  }
  return {within >= 2 && rep.leakage_check_passed,
          fmt("%d of 3 validation sets (20 anomalies, 1 type) pick a config within 0.02 of the grid best %.4f; winners: %s", within,
              rep.grid_max, winners.c_str())};
}

// --- 8: leakage and determinism ---------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DPA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome leakage_and_determinism() {
  std::vector<std::string> failures;
  // Leakage: every search run checks disjointness, and planted overlaps are refused.
  const auto d = search_data(31, 24, 12, 8, 16);
  SearchSpace space;
  space.bottleneck_dims = {4, 8};
  PreprocessSpec p;
  p.target_resolution = 16;
  space.preprocessing = {p};
  auto setup = desk_setup(5, 5);
  setup.model = model_config(16, 4, 8, 8);
  setup.trial_train.batch_size = setup.final_train.batch_size = 8;
  setup.trial_train.eval_every = setup.final_train.eval_every = 5;
  int searches = 0;
  std::string first_report;
  for (std::uint64_t vseed : {1, 2, 3}) {
    auto v = build_validation_set(d.pool, {1, 4, vseed});
    auto validation = d.pool.subset(v.indices);
    auto rep = cross_validate(space, setup, d.normals, validation);
    ++searches;
    std::set<std::string> test_ids(d.test.ids.begin(), d.test.ids.end()), train_ids(d.normals.ids.begin(), d.normals.ids.end());
    for (const auto& id : rep.validation_ids)
      if (test_ids.count(id) || train_ids.count(id)) failures.push_back("validation id " + id + " leaks");
    if (!rep.leakage_check_passed) failures.push_back("search leakage flag not set");
    auto again = cross_validate(space, setup, d.normals, validation);
    if (to_json(again).dump() != to_json(rep).dump()) failures.push_back("search rerun differs");
    if (first_report.empty()) first_report = to_json(rep).dump();
  }
  auto leaky = d.pool;
  leaky.add(d.normals.ids[0], d.normals.images[0], 1, kPatchShift);
  try {
    cross_validate(space, setup, d.normals, leaky);
    failures.push_back("train/validation overlap accepted");
  } catch (const DataError&) {
  }
  auto leaky_test = d.test;
  leaky_test.add(d.pool.ids[0], d.pool.images[0], 1, kPatchShift);
  try {
    sensitivity_sweep(space, setup, SweepSpec{{1}, {2}, 1, 0}, d.normals, d.pool, leaky_test);
    failures.push_back("pool/test overlap accepted");
  } catch (const DataError&) {
  }

  // Determinism of the command-line artifacts: rerun with --force and compare bytes.
  const auto root = fs::temp_directory_path() / "dpa_acceptance_c8";
  fs::remove_all(root);
  const std::string data = (root / "data").string(), m = (root / "data" / "manifest.csv").string();
  const std::string tiny =
      " --set preprocess.target_resolution=16 --set model.base_channels=4 --set model.max_channels=8 --set model.bottleneck_dim=8"
      " --set train.steps_per_level=20 --set train.batch_size=8 --set train.eval_every=10 --set features.channels=8"
      " --set features.n_stages=2 --set search.bottleneck_dims=4,8 --set search.trial_steps_per_level=10"
      " --set validation.n_examples=4";
  const std::string synth =
      "synth -o " + data + " --set synth.resolution=16 --set synth.n_train=40 --set synth.n_test_normal=10"
      " --set synth.n_test_anomalous=10 --set synth.n_val_pool=10 --set synth.seed=4";
  const std::vector<std::pair<std::string, std::vector<std::string>>> steps = {
      {synth, {"data/manifest.csv", "data/images/train_000007.png"}},
      {"train -m " + m + " -o " + (root / "run").string() + tiny, {"run/model.ckpt", "run/train_report.json", "run/config.txt"}},
      {"eval -k " + (root / "run" / "model.ckpt").string() + " -m " + m + " -o " + (root / "eval").string(),
       {"eval/eval_report.json", "eval/scores.csv", "eval/roc.csv"}},
      {"search -m " + m + " -o " + (root / "search").string() + tiny, {"search/search_report.json", "search/trials.jsonl"}},
  };
  int compared = 0;
  for (const auto& [cmd, files] : steps) {
    if (run_cli(cmd) != 0) {
      failures.push_back("command failed: " + cmd.substr(0, cmd.find(' ')));
      continue;
    }
    std::map<std::string, std::string> first;
    for (const auto& f : files) first[f] = slurp(root / f);
    if (run_cli(cmd + " --force") != 0) {
      failures.push_back("forced rerun failed: " + cmd.substr(0, cmd.find(' ')));
      continue;
    }
    for (const auto& f : files) {
      ++compared;
      if (first[f].empty() || slurp(root / f) != first[f]) failures.push_back("artifact differs on rerun: " + f);
    }
  }
  auto sr = nlohmann::json::parse(slurp(root / "search" / "search_report.json"), nullptr, false);
  if (sr.is_discarded() || sr.value("leakage_check_passed", false) != true) failures.push_back("CLI search leakage flag not set");
  ++searches;

  Outcome o;
  o.pass = failures.empty();
  o.detail = o.pass ? fmt("%d searches disjoint, planted overlaps rejected, %d artifacts byte-identical on rerun", searches, compared)
                    : failures.front();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"loss properties", loss_suite},
      {"loss gradients", gradient_checks},
      {"ROC AUC oracle", auc_oracle},
      {"progressive-growing continuity", growth_continuity},
      {"perceptual vs pixel-L1 detection", detection},
      {"progressive vs flat at 64x64", progressive_vs_flat},
      {"weakly-supervised selection", selection},
      {"leakage and determinism", leakage_and_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (only && only != n) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
