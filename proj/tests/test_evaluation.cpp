#include <gtest/gtest.h>

#include <random>

#include "dpa/evaluation.hpp"
#include "dpa/trainer.hpp"
#include "test_util.hpp"

using namespace dpa;

namespace {

// Pairwise definition: P(a > n) + 0.5 P(a == n).
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double hits = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return hits / pairs;
}

}  // namespace

TEST(RocAuc, HandCase) {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
}

TEST(RocAuc, PerfectSeparationAndAllTies) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{1, 1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{5, 5, 5, 5}, std::vector<int>{0, 1, 0, 1}), 0.5);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 10);  // coarse values to force ties
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(roc_auc(s, y), pairwise_auc(s, y), 1e-12);
  }
}

TEST(RocAuc, InvariantUnderMonotoneMapsAndPermutation) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> s(60);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = i % 3 == 0;
    s[i] = g(rng) + y[i];
  }
  const double auc = roc_auc(s, y);
  std::vector<double> mapped;
  for (double v : s) mapped.push_back(std::exp(3 * v) + 1);
  EXPECT_NEAR(roc_auc(mapped, y), auc, 1e-12);
  std::vector<int> flipped;
  for (int v : y) flipped.push_back(1 - v);
  EXPECT_NEAR(roc_auc(s, flipped), 1 - auc, 1e-12);
  std::vector<std::size_t> perm(60);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> ps;
  std::vector<int> py;
  for (auto p : perm) {
    ps.push_back(s[p]);
    py.push_back(y[p]);
  }
  EXPECT_NEAR(roc_auc(ps, py), auc, 1e-12);
}

TEST(RocAuc, RejectsDegenerateInput) {
  EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), ArgumentError);
  EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), ArgumentError);
  EXPECT_THROW(roc_auc(std::vector<double>{1, NAN}, std::vector<int>{0, 1}), NumericError);
  EXPECT_THROW(roc_auc(std::vector<double>{1}, std::vector<int>{0, 1}), ArgumentError);
}

TEST(RocCurve, EndpointsAndArea) {
  std::vector<ScoredSample> s{{"a", 0.1, 0}, {"b", 0.4, 0}, {"c", 0.35, 1}, {"d", 0.8, 1}};
  auto c = roc_curve(s);
  EXPECT_EQ(c.front().fpr, 0.0);
  EXPECT_EQ(c.front().tpr, 0.0);
  EXPECT_EQ(c.back().fpr, 1.0);
  EXPECT_EQ(c.back().tpr, 1.0);
  double area = 0;
  for (std::size_t i = 1; i < c.size(); ++i) area += (c[i].fpr - c[i - 1].fpr) * 0.5 * (c[i].tpr + c[i - 1].tpr);
  EXPECT_NEAR(area, 0.75, 1e-12);
}

TEST(Summaries, PopulationStd) {
  auto r = summarize_runs({0.8, 0.9, 1.0});
  EXPECT_NEAR(r.mean, 0.9, 1e-12);
  EXPECT_NEAR(r.std, std::sqrt(0.02 / 3), 1e-12);
  EXPECT_EQ(summarize_runs({0.7}).std, 0.0);
}

TEST(Scoring, IdenticalReconstructionScoresZero) {
  auto ex = make_fixed_random_extractor<double>(1, 2, {4});
  LossContext<double> ctx{ex, LossConfig{}, {unit_stats(0, 4)}};
  auto x = test::random_tensor(3, 1, 8, 8, 5, 0.0, 1.0);
  for (double s : score_reconstructions(x, x, 0, ctx)) EXPECT_EQ(s, 0.0);
  auto y = x;
  y.at(1, 0, 2, 2) += 0.5;
  auto s = score_reconstructions(x, y, 0, ctx);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_GT(s[1], 0.0);
}

TEST(Scoring, ModelScoresAreBatchInvariantAndCheckResolution) {
  ModelConfig mc;
  mc.base_resolution = 8;
  mc.target_resolution = 8;
  mc.base_channels = 4;
  mc.max_channels = 4;
  mc.bottleneck_dim = 4;
  Autoencoder<double> model(mc, 2);
  auto ex = make_fixed_random_extractor<double>(1, 2, {4});
  LossContext<double> ctx{ex, LossConfig{}, {unit_stats(0, 4)}};
  auto x = test::random_tensor(5, 1, 8, 8, 9, 0.0, 1.0);
  auto all = anomaly_scores(model, ctx, x);
  auto chunked = anomaly_scores(model, ctx, x, 2);
  ASSERT_EQ(all.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(all[i], chunked[i], 1e-12);
    EXPECT_NEAR(anomaly_score(model, ctx, x.slice(i)), all[i], 1e-12);
    EXPECT_GE(all[i], 0.0);
  }
  try {
    anomaly_scores(model, ctx, test::random_tensor(1, 1, 16, 16, 1));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("16x16"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("8x8"), std::string::npos);
  }
}

TEST(ScoresCsv, RoundTrip) {
  std::vector<ScoredSample> s{{"img/a.png", 0.123456789012345678, 0}, {"b", 1e-300, 1}, {"c", 42, 1}};
  auto path = test::temp_dir("scores_csv") + "/scores.csv";
  write_scores_csv(path, s);
  auto back = read_scores_csv(path);
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].id, s[i].id);
    EXPECT_EQ(back[i].score, s[i].score);
    EXPECT_EQ(back[i].label, s[i].label);
  }
  EXPECT_EQ(evaluate_scores(back).roc_auc, evaluate_scores(s).roc_auc);
}

TEST(EvalReport, JsonFields) {
  auto r = evaluate_scores({{"a", 0.1, 0}, {"b", 0.9, 1}});
  auto j = to_json(r, true);
  EXPECT_EQ(j["roc_auc"], 1.0);
  EXPECT_EQ(j["n_normal"], 1);
  EXPECT_EQ(j["samples"].size(), 2u);
  EXPECT_EQ(j["roc_curve"][0]["threshold"], "inf");
}
