#include <gtest/gtest.h>

#include <fstream>

#include "dpa/checkpoint.hpp"
#include "test_util.hpp"

using namespace dpa;
using dpa::test::max_rel_error;
using dpa::test::random_tensor;

namespace {
ModelConfig small_config() {
  ModelConfig c;
  c.base_resolution = 4;
  c.target_resolution = 16;
  c.bottleneck_dim = 3;
  c.base_channels = 2;
  c.max_channels = 4;
  c.blocks_per_level = 1;
  return c;
}
}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.max_level(), 2);
  EXPECT_EQ(c.channels(2), 8);
  EXPECT_EQ(c.channels(1), 16);
  EXPECT_EQ(c.channels(0), 32);
  c.target_resolution = 24;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.bottleneck_dim = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.bottleneck_dim");
  }
}

TEST(Autoencoder, ShapesAndInputChecks) {
  Autoencoder<double> m(small_config(), 1);
  EXPECT_EQ(m.level(), 0);
  auto y = m.reconstruct(random_tensor(3, 1, 4, 4, 1));
  EXPECT_EQ(y.shape(), (Tensor<double>::Shape{3, 1, 4, 4}));
  EXPECT_THROW(m.reconstruct(random_tensor(1, 1, 8, 8, 1)), ShapeError);
  EXPECT_THROW(m.reconstruct(random_tensor(1, 3, 4, 4, 1)), ShapeError);
  EXPECT_THROW(m.set_alpha(0.5), ArgumentError);
  EXPECT_THROW(m.reconstruct(random_tensor(1, 1, 8, 8, 1), BlendState{1, 1.0}), ArgumentError);
}

TEST(Autoencoder, GrowKeepsParametersAndResetsAlpha) {
  Autoencoder<double> m(small_config(), 2);
  auto before = m.state();
  m.grow();
  EXPECT_EQ(m.level(), 1);
  EXPECT_EQ(m.blend().alpha, 0.0);
  auto after = m.state();
  for (const auto& [name, t] : before) EXPECT_EQ(after.at(name), t) << name;
  EXPECT_GT(after.size(), before.size());
  m.grow();
  EXPECT_TRUE(m.at_target());
  EXPECT_THROW(m.grow(), ArgumentError);
}

TEST(Autoencoder, FadeInStartsAtUpsampledPreviousModel) {
  Autoencoder<double> m(small_config(), 3);
  auto x = random_tensor(2, 1, 8, 8, 4);
  auto prev = m.reconstruct(down(x), BlendState{0, 1.0});
  m.grow();
  auto now = m.reconstruct(x, BlendState{1, 0.0});
  auto expect = upsample_nearest(prev);
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_NEAR(now[i], expect[i], 1e-12);
}

TEST(Autoencoder, BlendInputEndpoints) {
  auto x = random_tensor(1, 1, 8, 8, 5);
  EXPECT_EQ(blend_input(x, 1.0), x);
  EXPECT_EQ(blend_input(x, 0.0), upsample_nearest(down(x)));
  const auto mixed = down(blend_input(x, 0.3)), plain = down(x);
  for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(mixed[i], plain[i], 1e-15);
}

TEST(Autoencoder, ParameterGradientsMatchFiniteDifferences) {
  Autoencoder<double> m(small_config(), 6);
  m.grow();
  m.set_alpha(0.4);
  auto x = random_tensor(2, 1, 8, 8, 7);
  auto xin = blend_input(x, 0.4);
  auto params = m.parameters();
  nn::Adam<double>::zero_grad(params);
  auto loss = ag::mean(ag::mean_abs_diff(x, m.forward(ag::Var<double>::constant(xin), m.blend())));
  loss.backward();
  for (auto* p : params) {
    if (p->name != "L1.from_image.weight" && p->name != "bottleneck.enc.weight" && p->name != "L0.enc0.conv1.weight" &&
        p->name != "L1.dec_up.weight")
      continue;
    Tensor<double> grad = p->var.grad();
    Tensor<double> keep = p->value();
    // Gradients are ~1e-5 against a loss of ~0.3, so a larger step keeps round-off out of the
    // difference quotient; entries far below the largest gradient are compared at that scale.
    double scale = 0;
    for (double g : grad.storage()) scale = std::max(scale, std::abs(g));
    const double err = max_rel_error<double>(
        grad, keep,
        [&](const Tensor<double>& v) {
          p->value() = v;
          ag::NoGradGuard g;
          return ag::mean(ag::mean_abs_diff(x, m.forward(ag::Var<double>::constant(xin), m.blend()))).value()[0];
        },
        1e-4, 1e-3 * scale);
    p->value() = keep;
    EXPECT_LT(err, 1e-6) << p->name;
  }
}

TEST(Autoencoder, CloneAndStateRoundTrip) {
  Autoencoder<double> m(small_config(), 8);
  m.grow();
  m.set_alpha(0.7);
  auto c = m.clone();
  auto x = random_tensor(1, 1, 8, 8, 9);
  EXPECT_EQ(c.reconstruct(x), m.reconstruct(x));
  c.parameters().front()->value().fill(0.0);
  EXPECT_NE(c.reconstruct(x), m.reconstruct(x));
  auto st = m.state();
  st.erase(st.begin());
  EXPECT_THROW(c.load_state(st), FormatError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = dpa::test::temp_dir("ckpt");
  Autoencoder<float> m(small_config(), 10);
  m.grow();
  m.set_alpha(0.25);
  save_checkpoint(m, dir + "/m.ckpt", {{"note", "x"}});
  auto [loaded, extras] = load_checkpoint_with_extras<float>(dir + "/m.ckpt");
  EXPECT_EQ(extras.at("note"), "x");
  EXPECT_EQ(loaded.blend(), m.blend());
  EXPECT_EQ(loaded.config(), m.config());
  auto x = random_tensor<float>(2, 1, 8, 8, 11);
  EXPECT_EQ(loaded.reconstruct(x), m.reconstruct(x));
  EXPECT_THROW(load_checkpoint<double>(dir + "/m.ckpt"), FormatError);
}

TEST(Checkpoint, VersionBumpAndCorruptionAreRejected) {
  const auto dir = dpa::test::temp_dir("ckpt_bad");
  Autoencoder<float> m(small_config(), 12);
  save_checkpoint(m, dir + "/m.ckpt");
  std::ifstream in(dir + "/m.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir + "/" + name, std::ios::binary);
    out << content;
    return dir + "/" + name;
  };
  std::string bumped = bytes;
  bumped[kCheckpointVersionOffset] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(load_checkpoint<float>(write("v.ckpt", bumped)), VersionMismatch);
  std::string flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x5a;
  EXPECT_THROW(load_checkpoint<float>(write("c.ckpt", flipped)), FormatError);
  EXPECT_THROW(load_checkpoint<float>(write("t.ckpt", bytes.substr(0, bytes.size() / 2))), FormatError);
  EXPECT_THROW(load_checkpoint<float>(write("j.ckpt", "garbage")), FormatError);
  EXPECT_THROW(load_checkpoint<float>(dir + "/missing.ckpt"), DataError);
}
