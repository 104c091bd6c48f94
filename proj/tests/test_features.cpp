#include <gtest/gtest.h>

#include "dpa/features.hpp"
#include "test_util.hpp"

using namespace dpa;
using dpa::test::random_tensor;

namespace {
std::vector<Tensor<double>> probe_set(int count, int res, std::uint64_t seed) {
  std::vector<Tensor<double>> out;
  for (int i = 0; i < count; ++i) out.push_back(random_tensor(1, 1, res, res, seed + i));
  return out;
}
}  // namespace

TEST(Extractor, StageContract) {
  auto ex = make_fixed_random_extractor<double>(1, 3, {4});
  ASSERT_EQ(ex->n_stages(), 3);
  EXPECT_EQ(ex->stage_info(0).downsample, 1);
  EXPECT_EQ(ex->stage_info(1).downsample, 2);
  EXPECT_EQ(ex->stage_info(2).downsample, 4);
  EXPECT_EQ(ex->stage_info(2).channels, 16);
  EXPECT_STREQ(to_string(ex->provenance()), "fixed-random");
  auto x = random_tensor(2, 1, 16, 16, 3);
  for (int s = 0; s < 3; ++s) {
    auto f = extract(*ex, x, s);
    EXPECT_EQ(f.data.n(), 2);
    EXPECT_EQ(f.data.h(), 16 >> s);
    EXPECT_EQ(f.data.w(), 16 >> s);
  }
  EXPECT_THROW(ex->stage_info(3), ArgumentError);
  EXPECT_THROW(extract(*ex, random_tensor(1, 1, 6, 6, 1), 2), ShapeError);
  EXPECT_THROW(extract(*ex, random_tensor(1, 2, 8, 8, 1), 0), ShapeError);
  EXPECT_THROW(make_fixed_random_extractor<double>(1, 0, {4}), ArgumentError);
}

TEST(Extractor, SeededDeterminism) {
  auto a = make_fixed_random_extractor<double>(5, 2, {4, 8});
  auto b = make_fixed_random_extractor<double>(5, 2, {4, 8});
  auto c = make_fixed_random_extractor<double>(6, 2, {4, 8});
  auto x = random_tensor(1, 1, 8, 8, 7);
  EXPECT_EQ(extract(*a, x, 1).data, extract(*b, x, 1).data);
  EXPECT_EQ(extract(*a, x, 1).data, extract(*a, x, 1).data);
  EXPECT_NE(extract(*a, x, 1).data, extract(*c, x, 1).data);
}

TEST(Extractor, ExternalAdapterValidatesStages) {
  auto fwd = [](const Tensor<double>& x, int) { return x; };
  EXPECT_THROW(ExternalExtractor<double>({{0, 2, 1}, {1, 2, 1}}, 1, fwd, nullptr), ArgumentError);
  ExternalExtractor<double> ok({{0, 1, 1}}, 1, fwd, nullptr);
  EXPECT_EQ(ok.provenance(), Provenance::pretrained_classifier);
  auto x = random_tensor(1, 1, 4, 4, 1);
  EXPECT_EQ(extract(ok, x, 0).data, x);
}

TEST(Stats, MatchNaivePooledMoments) {
  auto ex = make_fixed_random_extractor<double>(2, 2, {3});
  auto data = probe_set(5, 8, 10);
  auto st = compute_stats(*ex, data, 1);
  ASSERT_EQ(st.channels(), 6);
  for (int c = 0; c < 6; ++c) {
    std::vector<double> vals;
    for (const auto& img : data) {
      auto f = extract(*ex, img, 1).data;
      for (auto v : f.plane(0, c)) vals.push_back(v);
    }
    double mean = 0, var = 0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    for (double v : vals) var += (v - mean) * (v - mean);
    EXPECT_NEAR(st.mu[c], mean, 1e-12);
    EXPECT_NEAR(st.sigma[c], std::max(std::sqrt(var / vals.size()), kSigmaFloor), 1e-12);
  }
}

TEST(Stats, OrderAndChunkingInvariance) {
  auto ex = make_fixed_random_extractor<double>(2, 1, {4});
  auto data = probe_set(9, 8, 20);
  auto a = compute_stats(*ex, std::span<const Tensor<double>>(data), 0, "t", 64);
  auto b = compute_stats(*ex, std::span<const Tensor<double>>(data), 0, "t", 2);
  std::reverse(data.begin(), data.end());
  auto c = compute_stats(*ex, std::span<const Tensor<double>>(data), 0, "t", 4);
  for (int i = 0; i < a.channels(); ++i) {
    EXPECT_NEAR(a.mu[i], b.mu[i], 1e-6 * std::abs(a.mu[i]) + 1e-15);
    EXPECT_NEAR(a.mu[i], c.mu[i], 1e-6 * std::abs(a.mu[i]) + 1e-15);
    EXPECT_NEAR(a.sigma[i], c.sigma[i], 1e-6 * a.sigma[i]);
  }
}

TEST(Stats, SigmaFloorOnDeadChannels) {
  auto ex = make_fixed_random_extractor<double>(2, 1, {4});
  ex->set_biases(-100.0);  // ReLU output identically zero
  auto st = compute_stats(*ex, probe_set(3, 8, 1), 0);
  for (double s : st.sigma) EXPECT_EQ(s, kSigmaFloor);
  auto f = normalize(extract(*ex, random_tensor(1, 1, 8, 8, 2), 0), st);
  EXPECT_TRUE(f.data.all_finite());
}

TEST(Stats, NormalizeArithmetic) {
  FeatureStats st{0, {1.0}, {2.0}, "t", 0};
  FeatureMap<double> fm{0, Tensor<double>(1, 1, 1, 2, 5.0)};
  fm.data[1] = 1.0;
  auto n = normalize(fm, st);
  EXPECT_DOUBLE_EQ(n.data[0], 2.0);
  EXPECT_DOUBLE_EQ(n.data[1], 0.0);
  EXPECT_EQ(normalize(n, unit_stats(0, 1)).data, n.data);
  EXPECT_THROW(normalize(fm, FeatureStats{1, {1.0}, {2.0}, "t", 0}), ArgumentError);
  EXPECT_THROW(normalize(fm, unit_stats(0, 2)), ShapeError);
}

TEST(Stats, NormalizedReferenceHasUnitMoments) {
  auto ex = make_fixed_random_extractor<double>(3, 1, {4});
  auto data = probe_set(4, 8, 30);
  auto st = compute_stats(*ex, data, 0);
  for (int c = 0; c < st.channels(); ++c) {
    double s = 0, ss = 0, n = 0;
    for (const auto& img : data) {
      auto f = normalize(extract(*ex, img, 0), st).data;
      for (auto v : f.plane(0, c)) {
        s += v;
        ss += v * v;
        ++n;
      }
    }
    EXPECT_NEAR(s / n, 0.0, 1e-9);
    if (st.sigma[c] > kSigmaFloor) EXPECT_NEAR(ss / n, 1.0, 1e-9);
  }
}

TEST(Stats, FileRoundTripAndVersion) {
  const auto dir = dpa::test::temp_dir("stats");
  std::vector<FeatureStats> v{{0, {0.5, 1.5}, {1.0, 2.0}, "train-normal", 32}, {1, {0.1}, {0.2}, "x", 16}};
  save_stats(dir + "/s.json", v);
  EXPECT_EQ(load_stats(dir + "/s.json"), v);
  {
    std::ofstream out(dir + "/bad.json");
    out << R"({"format":"dpa-feature-stats","version":99,"stats":[]})";
  }
  EXPECT_THROW(load_stats(dir + "/bad.json"), VersionMismatch);
}
