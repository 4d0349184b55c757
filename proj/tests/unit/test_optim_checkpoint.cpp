#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "mssda/nn/checkpoint.hpp"
#include "mssda/nn/optim.hpp"

using namespace mssda;
using namespace mssda::nn;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mssda_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<double> p("p", Tensor<double>({1}, std::vector<double>{2.0}));
  p.grad[0] = 1.0;
  Adam<double> opt(AdamConfig::adam(0.1));
  std::vector<Parameter<double>*> ps{&p};
  opt.step(ps);
  // m_hat = 1, v_hat = 1 at t = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.value[0], 2.0 - 0.1 / (1.0 + 1e-8), 1e-12);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter<double> p("p", Tensor<double>({3}, std::vector<double>{1, -2, 3}));
  Adam<double> opt(AdamConfig::adam(0.1));
  std::vector<Parameter<double>*> ps{&p};
  for (int i = 0; i < 5; ++i) opt.step(ps);
  EXPECT_EQ(p.value.buffer(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, DecoupledDecayOnly) {
  Parameter<double> p("p", Tensor<double>({2}, std::vector<double>{1.0, -4.0}));
  Adam<double> opt(AdamConfig::adamw(0.1, 0.1));
  std::vector<Parameter<double>*> ps{&p};
  opt.step(ps);
  EXPECT_NEAR(p.value[0], 0.99, 1e-15);
  EXPECT_NEAR(p.value[1], -3.96, 1e-15);
}

TEST(Adam, CoupledDecayEntersGradient) {
  Parameter<double> p("p", Tensor<double>({1}, std::vector<double>{1.0}));
  Adam<double> opt(AdamConfig::adam(0.1, 0.5));
  std::vector<Parameter<double>*> ps{&p};
  opt.step(ps);
  // g = 0 + 0.5 * 1; the first Adam step has unit magnitude whatever g's size.
  EXPECT_NEAR(p.value[0], 0.9, 1e-7);
}

TEST(Adam, StepCounterIncreases) {
  Parameter<double> p("p", Tensor<double>({1}, std::vector<double>{1.0}));
  Adam<double> opt;
  std::vector<Parameter<double>*> ps{&p};
  for (std::size_t i = 1; i <= 4; ++i) {
    p.grad[0] = static_cast<double>(i);
    opt.step(ps);
    EXPECT_EQ(opt.steps(), i);
  }
}

TEST(Adam, NonFiniteGradientNamesParameterAndStep) {
  Parameter<double> p("layer3.linear.weight", Tensor<double>({2}));
  p.grad[1] = std::numeric_limits<double>::quiet_NaN();
  Adam<double> opt;
  std::vector<Parameter<double>*> ps{&p};
  try {
    opt.step(ps);
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("layer3.linear.weight"), std::string::npos);
    EXPECT_NE(msg.find("step 1"), std::string::npos);
  }
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(Adam, RejectsChangedParameterList) {
  Parameter<double> a("a", Tensor<double>({1})), b("b", Tensor<double>({1}));
  Adam<double> opt;
  std::vector<Parameter<double>*> one{&a}, two{&a, &b};
  opt.step(one);
  EXPECT_THROW(opt.step(two), StateError);
}

TEST(Adam, MinimizesQuadratic) {
  Parameter<double> p("p", Tensor<double>({2}, std::vector<double>{3.0, -5.0}));
  Adam<double> opt(AdamConfig::adam(0.05));
  std::vector<Parameter<double>*> ps{&p};
  for (int i = 0; i < 2000; ++i) {
    Graph<double> g;
    p.zero_grad();
    auto x = g.parameter(p);
    g.backward(sum(g, mul(g, x, x)));
    opt.step(ps);
  }
  EXPECT_NEAR(p.value[0], 0.0, 1e-3);
  EXPECT_NEAR(p.value[1], 0.0, 1e-3);
}

TEST(Checkpoint, RoundTripIsExactInFloat32) {
  Network<float> net({3, 20}, {LayerSpec::conv(3, 4, 5, 2, 1), LayerSpec::relu(), LayerSpec::pool(),
                               LayerSpec::dense(4, 2)},
                     42);
  const auto dir = scratch("ckpt_roundtrip");
  save_checkpoint(net, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "meta.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "layer0.conv1d.weight.bin"));
  EXPECT_EQ(std::filesystem::file_size(dir / "layer0.conv1d.weight.bin"), 4u * 4 * 3 * 5);
  auto back = load_checkpoint<float>(dir);
  EXPECT_EQ(back.layers(), net.layers());
  EXPECT_EQ(back.checksum(), net.checksum());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, LittleEndianFloatBytes) {
  Network<float> net({1}, {LayerSpec::dense(1, 1)}, 1);
  net.parameters()[0].value[0] = 1.0f;
  const auto dir = scratch("ckpt_le");
  save_checkpoint(net, dir);
  std::ifstream is(dir / "layer0.linear.weight.bin", std::ios::binary);
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  // 1.0f = 0x3f800000
  EXPECT_EQ(b[0], 0x00);
  EXPECT_EQ(b[1], 0x00);
  EXPECT_EQ(b[2], 0x80);
  EXPECT_EQ(b[3], 0x3f);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, TruncatedParameterFileFails) {
  Network<float> net({2}, {LayerSpec::dense(2, 3)}, 1);
  const auto dir = scratch("ckpt_trunc");
  save_checkpoint(net, dir);
  std::filesystem::resize_file(dir / "layer0.linear.weight.bin", 8);
  EXPECT_THROW(load_checkpoint<float>(dir), LoadError);
  std::filesystem::remove(dir / "meta.json");
  EXPECT_THROW(load_checkpoint<float>(dir), LoadError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CastPreservesValues) {
  Network<float> net({2}, {LayerSpec::dense(2, 2)}, 3);
  auto d = net.cast<double>();
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    for (std::size_t k = 0; k < net.parameters()[i].value.size(); ++k) {
      EXPECT_EQ(static_cast<double>(net.parameters()[i].value[k]), d.parameters()[i].value[k]);
    }
  }
}
