#pragma once

// Random-network gradient checks shared by the unit and acceptance suites.

#include <algorithm>
#include <vector>

#include "mssda/nn/graph.hpp"
#include "mssda/nn/network.hpp"
#include "mssda/random.hpp"
#include "oracles.hpp"

namespace gradcheck {

using mssda::Rng;
using mssda::nn::Graph;
using mssda::nn::LayerKind;
using mssda::nn::LayerSpec;
using mssda::nn::Network;
using mssda::nn::Tensor;

struct Case {
  mssda::nn::SampleShape input;
  std::vector<LayerSpec> layers;
};

/// A small random network that contains at least one layer of `kind`.
inline Case random_case(LayerKind kind, Rng& rng) {
  const std::size_t c = 1 + rng.index(3), len = 6 + rng.index(6);
  const std::size_t hidden = 2 + rng.index(4);
  Case k;
  switch (kind) {
    case LayerKind::conv1d: {
      const std::size_t kernel = 1 + rng.index(3), stride = 1 + rng.index(2), pad = rng.index(2);
      k.input = {c, len};
      k.layers = {LayerSpec::conv(c, hidden, kernel, stride, pad), LayerSpec::conv(hidden, 3, 2, 1, rng.index(2)),
                  LayerSpec::pool()};
      break;
    }
    case LayerKind::linear:
      k.input = {len};
      k.layers = {LayerSpec::dense(len, hidden), LayerSpec::dense(hidden, 3)};
      break;
    case LayerKind::relu:
      k.input = {c, len};
      k.layers = {LayerSpec::conv(c, hidden, 3, 1, 1), LayerSpec::relu(), LayerSpec::pool(),
                  LayerSpec::dense(hidden, hidden), LayerSpec::relu(), LayerSpec::dense(hidden, 3)};
      break;
    case LayerKind::global_avg_pool:
      k.input = {c, len};
      k.layers = {LayerSpec::conv(c, hidden, 2), LayerSpec::pool(), LayerSpec::dense(hidden, 3)};
      break;
    case LayerKind::flatten:
      k.input = {c, len};
      k.layers = {LayerSpec::conv(c, 2, 3, 2), LayerSpec::flat(),
                  LayerSpec::dense(2 * mssda::nn::conv1d_output_length(len, 3, 2, 0), 3)};
      break;
  }
  return k;
}

/// Max over parameter tensors of ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// for a cross-entropy loss on a random batch.
inline double max_relative_error(const Case& k, std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  Network<double> net(k.input, k.layers, seed);
  const std::size_t batch = 3;
  mssda::nn::Shape xs{batch};
  xs.insert(xs.end(), k.input.begin(), k.input.end());
  Tensor<double> x(xs);
  for (auto& v : x.buffer()) v = rng.normal();
  const std::size_t classes = net.output_shape()[0];
  std::vector<int> labels(batch);
  for (auto& y : labels) y = static_cast<int>(rng.index(classes));

  auto loss = [&]() {
    Graph<double> g;
    auto l = mssda::nn::cross_entropy(g, net.forward(g, g.input(x)), std::span<const int>(labels));
    return g.value(l).item();
  };
  net.zero_grad();
  {
    Graph<double> g;
    g.backward(mssda::nn::cross_entropy(g, net.forward(g, g.input(x)), std::span<const int>(labels)));
  }
  double worst = 0.0;
  for (auto& p : net.parameters()) {
    std::vector<double> analytic(p.grad.data().begin(), p.grad.data().end());
    auto numeric = oracle::finite_difference(loss, p.value.data(), h);
    worst = std::max(worst, oracle::relative_error(analytic, numeric));
  }
  return worst;
}

inline constexpr LayerKind all_kinds[] = {LayerKind::conv1d, LayerKind::linear, LayerKind::relu,
                                          LayerKind::global_avg_pool, LayerKind::flatten};

}  // namespace gradcheck
