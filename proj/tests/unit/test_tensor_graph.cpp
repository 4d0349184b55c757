#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "mssda/nn/graph.hpp"
#include "mssda/nn/network.hpp"
#include "mssda/random.hpp"
#include "oracles.hpp"

using namespace mssda;
using namespace mssda::nn;

namespace {

Tensor<double> t(Shape s, std::vector<double> v) { return Tensor<double>(std::move(s), std::move(v)); }

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST(Tensor, SizeMatchesShapeProduct) {
  Tensor<double> a({2, 3, 4});
  EXPECT_EQ(a.size(), 24u);
  EXPECT_EQ(a.rank(), 3u);
  EXPECT_THROW(t({2, 2}, {1, 2, 3}), InputError);
}

TEST(Tensor, ReshapeKeepsData) {
  auto a = t({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = a.reshaped({3, 2});
  EXPECT_EQ(b.at(2, 1), 6.0);
  EXPECT_THROW(a.reshaped({4, 2}), InputError);
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_EQ(Tensor<double>::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor<double>({2}).item(), InputError);
}

TEST(Forward, ConvIdentityKernel) {
  Graph<double> g;
  auto x = g.input(t({1, 1, 3}, {1, 2, 3}));
  auto w = g.input(t({1, 1, 3}, {0, 1, 0}));
  auto b = g.input(t({1}, {0}));
  auto y = conv1d(g, x, w, b, 1, 1);
  EXPECT_EQ(g.value(y).buffer(), (std::vector<double>{1, 2, 3}));
}

TEST(Forward, Relu) {
  Graph<double> g;
  auto y = relu(g, g.input(t({3}, {-1, 0, 2})));
  EXPECT_EQ(g.value(y).buffer(), (std::vector<double>{0, 0, 2}));
}

TEST(Forward, LinearAllOnesSums) {
  Graph<double> g;
  auto y = linear(g, g.input(t({1, 3}, {1, 2, 3})), g.input(t({1, 3}, {1, 1, 1})), g.input(t({1}, {0})));
  EXPECT_EQ(g.value(y).item(), 6.0);
}

TEST(Forward, ConvMatchesDirectOracle) {
  const std::size_t B = 2, Cin = 3, L = 11, Cout = 4, K = 3;
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u, 2u}) {
      auto xv = random_values(B * Cin * L, 1);
      auto wv = random_values(Cout * Cin * K, 2);
      auto bv = random_values(Cout, 3);
      Graph<double> g;
      auto y = conv1d(g, g.input(t({B, Cin, L}, xv)), g.input(t({Cout, Cin, K}, wv)), g.input(t({Cout}, bv)), stride,
                      pad);
      std::size_t lout = 0;
      auto ref = oracle::conv1d(xv, B, Cin, L, wv, bv, Cout, K, stride, pad, lout);
      ASSERT_EQ(g.value(y).dim(2), lout);
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(g.value(y)[i], ref[i], 1e-12);
    }
  }
}

TEST(Forward, ConvIsLinearWithoutBias) {
  const std::size_t Cin = 2, L = 9, Cout = 3, K = 4;
  auto xv = random_values(Cin * L, 4), yv = random_values(Cin * L, 5), wv = random_values(Cout * Cin * K, 6);
  const double a = 0.7, c = -1.9;
  std::vector<double> mix(xv.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * xv[i] + c * yv[i];
  auto run = [&](const std::vector<double>& in) {
    Graph<double> g;
    auto out = conv1d(g, g.input(t({1, Cin, L}, in)), g.input(t({Cout, Cin, K}, wv)), g.input(t({Cout}, {0, 0, 0})),
                      2, 1);
    return g.value(out).buffer();
  };
  auto fx = run(xv), fy = run(yv), fm = run(mix);
  for (std::size_t i = 0; i < fm.size(); ++i) EXPECT_NEAR(fm[i], a * fx[i] + c * fy[i], 1e-10);
}

TEST(Forward, ConvOutputLengthFormula) {
  EXPECT_EQ(conv1d_output_length(147, 5, 2, 0), 72u);
  EXPECT_EQ(conv1d_output_length(10, 3, 1, 1), 10u);
  EXPECT_EQ(conv1d_output_length(2, 5, 1, 0), 0u);
}

TEST(Forward, GlobalAvgPoolAndFlatten) {
  Graph<double> g;
  auto x = g.input(t({1, 2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(g.value(global_avg_pool(g, x)).buffer(), (std::vector<double>{2, 5}));
  auto f = flatten(g, x);
  EXPECT_EQ(g.value(f).shape(), (Shape{1, 6}));
}

TEST(CrossEntropy, UniformLogitsGiveLn2) {
  Graph<double> g;
  const std::vector<int> y{0, 1, 1};
  auto l = cross_entropy(g, g.input(Tensor<double>({3, 2})), std::span<const int>(y));
  EXPECT_NEAR(g.value(l).item(), std::numbers::ln2, 1e-15);
}

TEST(CrossEntropy, SaturatedIsStable) {
  Graph<double> g;
  const std::vector<int> y{0};
  auto l = cross_entropy(g, g.input(t({1, 2}, {1000, -1000})), std::span<const int>(y));
  EXPECT_TRUE(std::isfinite(g.value(l).item()));
  EXPECT_NEAR(g.value(l).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, HandValue) {
  Graph<double> g;
  const std::vector<int> y{1};
  auto l = cross_entropy(g, g.input(t({1, 2}, {1, 0})), std::span<const int>(y));
  // -log(e^0 / (e^1 + e^0))
  EXPECT_NEAR(g.value(l).item(), std::log(1.0 + std::numbers::e), 1e-14);
  EXPECT_NEAR(g.value(l).item(), 1.3133, 1e-4);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  Graph<double> g;
  const std::vector<int> y{2};
  EXPECT_THROW(cross_entropy(g, g.input(Tensor<double>({1, 2})), std::span<const int>(y)), InputError);
  const std::vector<int> neg{-1};
  EXPECT_THROW(cross_entropy(g, g.input(Tensor<double>({1, 2})), std::span<const int>(neg)), InputError);
}

TEST(CrossEntropy, NonNegativeOnRandomLogits) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Graph<double> g;
    auto v = random_values(8, 100 + trial);
    for (auto& x : v) x *= 20.0;
    std::vector<int> y(4);
    for (auto& c : y) c = static_cast<int>(rng.index(2));
    auto l = cross_entropy(g, g.input(t({4, 2}, v)), std::span<const int>(y));
    EXPECT_GE(g.value(l).item(), 0.0);
  }
}

TEST(Backward, GradOfDotIsInput) {
  Parameter<double> w("w", t({3}, {0.5, -1, 2}));
  Graph<double> g;
  auto x = g.input(t({3}, {1, 2, 3}));
  g.backward(sum(g, mul(g, g.parameter(w), x)));
  EXPECT_EQ(w.grad.buffer(), (std::vector<double>{1, 2, 3}));
}

TEST(Backward, TwiceWithoutResetThrows) {
  Parameter<double> w("w", t({1}, {2}));
  Graph<double> g;
  auto l = sum(g, g.parameter(w));
  g.backward(l);
  EXPECT_THROW(g.backward(l), StateError);
  EXPECT_THROW(g.input(Tensor<double>({1})), StateError);
  g.reset();
  w.zero_grad();
  g.backward(sum(g, g.parameter(w)));
  EXPECT_EQ(w.grad[0], 1.0);
}

TEST(Backward, NeedsScalarLoss) {
  Parameter<double> w("w", t({2}, {1, 2}));
  Graph<double> g;
  EXPECT_THROW(g.backward(g.parameter(w)), InputError);
}

TEST(GradReverse, IdentityForwardNegatedBackward) {
  Parameter<double> w("w", t({4}, {0.1, -2.5, 3e-7, 1e300}));
  Graph<double> g;
  auto x = g.parameter(w);
  auto r = grad_reverse(g, x, 2.0);
  EXPECT_EQ(g.value(r), g.value(x));
  auto upstream = g.input(t({4}, {1, -3, 0.5, 2}));
  g.backward(sum(g, mul(g, r, upstream)));
  EXPECT_EQ(w.grad.buffer(), (std::vector<double>{-2, 6, -1, -4}));
}

TEST(GradReverse, RejectsNegativeLambda) {
  Graph<double> g;
  EXPECT_THROW(grad_reverse(g, g.input(Tensor<double>({1})), -1.0), InputError);
}

TEST(Backward, DetachStopsGradient) {
  Parameter<double> w("w", t({2}, {1, 2}));
  Graph<double> g;
  auto x = g.parameter(w);
  g.backward(sum(g, add(g, detach(g, x), scale(g, x, 3.0))));
  EXPECT_EQ(w.grad.buffer(), (std::vector<double>{3, 3}));
}

TEST(Network, ShapeErrorNamesLayer) {
  try {
    Network<double>({4, 16}, {LayerSpec::conv(4, 8, 5), LayerSpec::relu(), LayerSpec::conv(3, 8, 3)}, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2 (conv1d)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(Network<double>({4, 4}, {LayerSpec::conv(4, 8, 5)}, 1), ConfigError);
  EXPECT_THROW(Network<double>({4, 16}, {LayerSpec::dense(4, 2)}, 1), ConfigError);
}

TEST(Network, ForwardRejectsWrongInputShape) {
  Network<double> net({2, 8}, {LayerSpec::conv(2, 3, 3), LayerSpec::pool()}, 1);
  Graph<double> g;
  EXPECT_THROW(net.forward(g, g.input(Tensor<double>({1, 3, 8}))), ConfigError);
}

TEST(Network, SameSeedSameInitialization) {
  const std::vector<LayerSpec> layers{LayerSpec::conv(2, 4, 3), LayerSpec::relu(), LayerSpec::pool(),
                                      LayerSpec::dense(4, 2)};
  Network<double> a({2, 10}, layers, 9), b({2, 10}, layers, 9), c({2, 10}, layers, 10);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
}

TEST(Network, KaimingBoundsAndZeroBias) {
  Network<double> net({3, 12}, {LayerSpec::conv(3, 5, 4), LayerSpec::pool(), LayerSpec::dense(5, 7)}, 3);
  const double conv_bound = std::sqrt(6.0 / 12.0), dense_bound = std::sqrt(6.0 / 5.0);
  const auto& p = net.parameters();
  ASSERT_EQ(p.size(), 4u);
  for (double v : p[0].value.data()) EXPECT_LE(std::abs(v), conv_bound);
  for (double v : p[1].value.data()) EXPECT_EQ(v, 0.0);
  for (double v : p[2].value.data()) EXPECT_LE(std::abs(v), dense_bound);
  for (double v : p[3].value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Network, ForwardUptoStopsEarly) {
  Network<double> net({2, 8}, {LayerSpec::conv(2, 3, 3), LayerSpec::relu(), LayerSpec::pool()}, 1);
  Graph<double> g;
  auto x = g.input(Tensor<double>({2, 2, 8}, 1.0));
  EXPECT_EQ(g.value(net.forward(g, x, 1)).shape(), (Shape{2, 3, 6}));
  EXPECT_EQ(g.value(net.forward(g, x)).shape(), (Shape{2, 3}));
}

TEST(Network, FiniteOutputsOnFiniteInputs) {
  Network<double> net({4, 32}, {LayerSpec::conv(4, 8, 5, 2), LayerSpec::relu(), LayerSpec::conv(8, 8, 3),
                                 LayerSpec::relu(), LayerSpec::pool(), LayerSpec::dense(8, 2)},
                      5);
  Graph<double> g;
  auto y = net.forward(g, g.input(t({3, 4, 32}, random_values(3 * 4 * 32, 7))));
  EXPECT_TRUE(g.value(y).all_finite());
}
