#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mssda/data/augment.hpp"
#include "mssda/data/dataset.hpp"
#include "mssda/data/presets.hpp"
#include "mssda/errors.hpp"
#include "mssda/nn/graph.hpp"
#include "mssda/nn/network.hpp"
#include "mssda/nn/optim.hpp"
#include "mssda/random.hpp"

namespace mssda::contrastive {

struct Stage1Config {
  data::ArchPreset preset = data::ArchPreset::dfn;
  std::size_t epochs = 5000;
  double lr = 5e-3;
  double weight_decay = 1e-2;  // AdamW, decoupled
  std::size_t batch_size = 64;
  data::AugmentPolicy augment;
  std::uint64_t seed = 0;

  static Stage1Config dfn() { return {}; }
  static Stage1Config fra() {
    Stage1Config c;
    c.preset = data::ArchPreset::fra;
    c.lr = 1e-3;
    c.batch_size = 32;
    return c;
  }

  void validate() const {
    if (batch_size < 2) throw ConfigError("stage1: batch_size must be >= 2 (a batch needs negatives)");
    if (!(lr > 0.0)) throw ConfigError("stage1: lr must be positive");
    augment.validate();
  }
};

struct Stage1Result {
  nn::Network<float> extractor;
  data::ChannelNormalizer normalizer;
  std::vector<double> loss_curve;  // mean in-batch loss per epoch
};

/// Unit-norm embedding: global average pool of the extractor's final map, L2-normalized.
template <std::floating_point T>
nn::Var<T> embed(nn::Graph<T>& g, nn::Network<T>& extractor, nn::Var<T> x) {
  return nn::l2_normalize_rows(g, nn::global_avg_pool(g, extractor.forward(g, x)));
}

/// Trains the contrastive extractor on every sample of the pool (labels are
/// never read). Each minibatch pairs original windows with one augmented
/// view; negatives are the other items of the same batch.
inline Stage1Result train_stage1(std::span<const std::span<const double>> pool, std::size_t time_len,
                                 std::size_t channels, const Stage1Config& cfg) {
  cfg.validate();
  if (pool.size() < 2) throw InputError("stage1: need at least 2 samples");
  Stage1Result res{data::contrastive_extractor<float>(cfg.preset, channels, time_len, cfg.seed),
                   data::ChannelNormalizer::fit(pool, channels), {}};
  if (cfg.epochs == 0) return res;

  nn::Adam<float> opt(nn::AdamConfig::adamw(cfg.lr, cfg.weight_decay));
  auto params = res.extractor.parameter_ptrs();
  Rng rng = Rng(cfg.seed).fork(0x5174);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Graph<float> g;
  std::vector<std::span<const double>> views;
  std::vector<std::vector<double>> augmented;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) continue;
      views.clear();
      augmented.clear();
      for (std::size_t k = start; k < end; ++k) {
        views.push_back(pool[order[k]]);
        augmented.push_back(data::augment_values(pool[order[k]], time_len, channels, cfg.augment, rng));
      }
      std::vector<std::span<const double>> aug_views(augmented.begin(), augmented.end());
      g.reset();
      res.extractor.zero_grad();
      auto x = g.input(data::to_batch<float>(views, time_len, channels, res.normalizer));
      auto xt = g.input(data::to_batch<float>(aug_views, time_len, channels, res.normalizer));
      auto h = embed(g, res.extractor, x);
      auto ht = embed(g, res.extractor, xt);
      auto loss = nn::contrastive_loss(g, h, ht);
      const double value = g.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericError("stage1: non-finite loss at epoch " + std::to_string(epoch) +
                           " (lr=" + std::to_string(cfg.lr) + ")");
      }
      g.backward(loss);
      opt.step(params);
      total += value;
      ++batches;
    }
    res.loss_curve.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  return res;
}

/// Final conv maps [C', L'] of the trained extractor for every sample, batched.
inline std::vector<nn::Tensor<double>> feature_maps(nn::Network<float>& extractor,
                                                    const data::ChannelNormalizer& norm,
                                                    std::span<const std::span<const double>> samples,
                                                    std::size_t time_len, std::size_t channels,
                                                    std::size_t batch = 128) {
  std::vector<nn::Tensor<double>> maps;
  maps.reserve(samples.size());
  nn::Graph<float> g;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    g.reset();
    auto x = g.input(data::to_batch<float>(samples.subspan(start, end - start), time_len, channels, norm));
    const auto& out = g.value(extractor.forward(g, x));
    const std::size_t c = out.dim(1), l = out.dim(2);
    for (std::size_t n = 0; n < end - start; ++n) {
      nn::Tensor<double> m({c, l});
      for (std::size_t k = 0; k < c * l; ++k) m[k] = out[n * c * l + k];
      maps.push_back(std::move(m));
    }
  }
  return maps;
}

inline void write_loss_curve(const std::vector<double>& curve, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) os << e << ',' << data::detail::format_double(curve[e]) << '\n';
}

}  // namespace mssda::contrastive
